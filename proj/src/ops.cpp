// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0

#include "metaquill/ops.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

#include "metaquill/errors.hpp"

namespace metaquill {

namespace {

using detail::BackwardFn;
using detail::Node;

std::string operand_shapes(const std::vector<Tensor>& inputs) {
  std::ostringstream os;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (i) os << ", ";
    os << shape_str(inputs[i].shape());
  }
  return os.str();
}

// Builds the output node, enforcing the finite-values policy and recording
// history when grad mode is on and some input wants a gradient.
Tensor record(const char* op, Shape shape, std::vector<float> data,
              const std::vector<Tensor>& inputs, BackwardFn backward) {
  for (float v : data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("op '") + op + "' produced a non-finite value (operands: " +
                         operand_shapes(inputs) + ")");
    }
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool track = false;
  if (GradMode::enabled()) {
    track = std::any_of(inputs.begin(), inputs.end(),
                        [](const Tensor& t) { return t.requires_grad(); });
  }
  if (track) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Tensor::from_node(std::move(node));
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() >= big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return a;
  const std::size_t na = numel(a), nb = numel(b);
  if (na == 1 && nb == 1) return a.size() >= b.size() ? a : b;
  if (nb == 1 || is_suffix(b, a)) return a;
  if (na == 1 || is_suffix(a, b)) return b;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

template <typename F>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, BackwardFn backward) {
  Shape out_shape = broadcast_shape(op, a.shape(), b.shape());
  const std::size_t n = numel(out_shape);
  const auto ad = a.data();
  const auto bd = b.data();
  const std::size_t na = ad.size(), nb = bd.size();
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[i % na], bd[i % nb]);
  return record(op, std::move(out_shape), std::move(out), {a, b}, std::move(backward));
}

template <typename F>
Tensor unary(const char* op, const Tensor& x, F f, BackwardFn backward) {
  const auto xd = x.data();
  std::vector<float> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
  return record(op, x.shape(), std::move(out), {x}, std::move(backward));
}

// outer * axis * inner decomposition of a shape around one axis.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for " +
                     shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

IndexList make_index(std::vector<std::int64_t> idx) {
  return std::make_shared<const std::vector<std::int64_t>>(std::move(idx));
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary("add", a, b, [](float x, float y) { return x + y; },
                [](const std::vector<Tensor>& in, const Tensor&, const Tensor& g) {
                  return std::vector<Tensor>{sum_to(g, in[0].shape()), sum_to(g, in[1].shape())};
                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary("sub", a, b, [](float x, float y) { return x - y; },
                [](const std::vector<Tensor>& in, const Tensor&, const Tensor& g) {
                  return std::vector<Tensor>{sum_to(g, in[0].shape()),
                                             sum_to(scale(g, -1.0f), in[1].shape())};
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary("mul", a, b, [](float x, float y) { return x * y; },
                [](const std::vector<Tensor>& in, const Tensor&, const Tensor& g) {
                  Tensor ga, gb;
                  if (in[0].requires_grad()) ga = sum_to(mul(g, in[1]), in[0].shape());
                  if (in[1].requires_grad()) gb = sum_to(mul(g, in[0]), in[1].shape());
                  return std::vector<Tensor>{ga, gb};
                });
}

Tensor scale(const Tensor& x, float factor) {
  return unary("scale", x, [factor](float v) { return v * factor; },
               [factor](const std::vector<Tensor>&, const Tensor&, const Tensor& g) {
                 return std::vector<Tensor>{scale(g, factor)};
               });
}

Tensor add_scalar(const Tensor& x, float value) {
  return unary("add_scalar", x, [value](float v) { return v + value; },
               [](const std::vector<Tensor>&, const Tensor&, const Tensor& g) {
                 return std::vector<Tensor>{g};
               });
}

Tensor tanh(const Tensor& x) {
  return unary("tanh", x, [](float v) { return std::tanh(v); },
               [](const std::vector<Tensor>&, const Tensor& y, const Tensor& g) {
                 // d tanh = 1 - y^2
                 return std::vector<Tensor>{mul(g, add_scalar(scale(mul(y, y), -1.0f), 1.0f))};
               });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x,
               [](float v) {
                 return v >= 0 ? 1.0f / (1.0f + std::exp(-v))
                               : std::exp(v) / (1.0f + std::exp(v));
               },
               [](const std::vector<Tensor>&, const Tensor& y, const Tensor& g) {
                 return std::vector<Tensor>{mul(g, mul(y, add_scalar(scale(y, -1.0f), 1.0f)))};
               });
}

Tensor relu(const Tensor& x) {
  return unary("relu", x, [](float v) { return v > 0.0f ? v : 0.0f; },
               [](const std::vector<Tensor>& in, const Tensor&, const Tensor& g) {
                 const auto xd = in[0].data();
                 std::vector<float> mask(xd.size());
                 for (std::size_t i = 0; i < xd.size(); ++i) mask[i] = xd[i] > 0.0f ? 1.0f : 0.0f;
                 return std::vector<Tensor>{mul(g, Tensor(in[0].shape(), std::move(mask)))};
               });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  std::size_t batch = 1, m, k, n;
  Shape out_shape;
  if (as.size() == 2 && bs.size() == 2 && as[1] == bs[0]) {
    m = as[0];
    k = as[1];
    n = bs[1];
    out_shape = {m, n};
  } else if (as.size() == 3 && bs.size() == 3 && as[0] == bs[0] && as[2] == bs[1]) {
    batch = as[0];
    m = as[1];
    k = as[2];
    n = bs[2];
    out_shape = {batch, m, n};
  } else {
    throw ShapeError("matmul: incompatible shapes " + shape_str(as) + " and " + shape_str(bs));
  }
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<float> out(batch * m * n);
  std::vector<double> acc(n);
  for (std::size_t t = 0; t < batch; ++t) {
    const float* A = ad.data() + t * m * k;
    const float* B = bd.data() + t * k * n;
    float* C = out.data() + t * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t p = 0; p < k; ++p) {
        const double av = A[i * k + p];
        if (av == 0.0) continue;
        const float* brow = B + p * n;
        for (std::size_t j = 0; j < n; ++j) acc[j] += av * brow[j];
      }
      for (std::size_t j = 0; j < n; ++j) C[i * n + j] = static_cast<float>(acc[j]);
    }
  }
  return record("matmul", std::move(out_shape), std::move(out), {a, b},
                [](const std::vector<Tensor>& in, const Tensor&, const Tensor& g) {
                  Tensor ga, gb;
                  if (in[0].requires_grad()) ga = matmul(g, transpose(in[1]));
                  if (in[1].requires_grad()) gb = matmul(transpose(in[0]), g);
                  return std::vector<Tensor>{ga, gb};
                });
}

Tensor transpose(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.size() != 2 && s.size() != 3) {
    throw ShapeError("transpose: expects rank 2 or 3, got " + shape_str(s));
  }
  const std::size_t batch = s.size() == 3 ? s[0] : 1;
  const std::size_t r = s[s.size() - 2], c = s[s.size() - 1];
  Shape out_shape = s;
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  const auto xd = x.data();
  std::vector<float> out(xd.size());
  for (std::size_t t = 0; t < batch; ++t) {
    const float* X = xd.data() + t * r * c;
    float* Y = out.data() + t * r * c;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) Y[j * r + i] = X[i * c + j];
  }
  return record("transpose", std::move(out_shape), std::move(out), {x},
                [](const std::vector<Tensor>&, const Tensor&, const Tensor& g) {
                  return std::vector<Tensor>{transpose(g)};
                });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  if (shape == x.shape()) return x;
  std::vector<float> out(x.data().begin(), x.data().end());
  return record("reshape", std::move(shape), std::move(out), {x},
                [](const std::vector<Tensor>& in, const Tensor&, const Tensor& g) {
                  return std::vector<Tensor>{reshape(g, in[0].shape())};
                });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_at(x.shape(), axis, "softmax");
  const auto xd = x.data();
  std::vector<float> out(xd.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      float mx = xd[base];
      for (std::size_t k = 1; k < s.extent; ++k) mx = std::max(mx, xd[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) z += std::exp(double(xd[base + k * s.inner]) - mx);
      for (std::size_t k = 0; k < s.extent; ++k) {
        out[base + k * s.inner] = static_cast<float>(std::exp(double(xd[base + k * s.inner]) - mx) / z);
      }
    }
  }
  const std::size_t extent = s.extent;
  return record("softmax", x.shape(), std::move(out), {x},
                [axis, extent](const std::vector<Tensor>&, const Tensor& y, const Tensor& g) {
                  // dx = y * (g - sum(g * y))
                  Tensor dot = repeat_axis(sum_axis(mul(g, y), axis, true), axis, extent);
                  return std::vector<Tensor>{mul(y, sub(g, dot))};
                });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  return record("sum", {}, {static_cast<float>(acc)}, {x},
                [](const std::vector<Tensor>& in, const Tensor&, const Tensor& g) {
                  return std::vector<Tensor>{broadcast_to(g, in[0].shape())};
                });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0f / static_cast<float>(x.numel())); }

Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim) {
  const AxisSplit s = split_at(x.shape(), axis, "sum_axis");
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  const auto xd = x.data();
  std::vector<float> out(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) acc += xd[(o * s.extent + k) * s.inner + i];
      out[o * s.inner + i] = static_cast<float>(acc);
    }
  }
  const std::size_t extent = s.extent;
  return record("sum_axis", std::move(out_shape), std::move(out), {x},
                [axis, extent](const std::vector<Tensor>& in, const Tensor&, const Tensor& g) {
                  Shape kept = in[0].shape();
                  kept[axis] = 1;
                  return std::vector<Tensor>{repeat_axis(reshape(g, kept), axis, extent)};
                });
}

Tensor repeat_axis(const Tensor& x, std::size_t axis, std::size_t n) {
  const AxisSplit s = split_at(x.shape(), axis, "repeat_axis");
  if (s.extent != 1) {
    throw ShapeError("repeat_axis: axis " + std::to_string(axis) + " of " +
                     shape_str(x.shape()) + " must have extent 1");
  }
  if (n == 1) return x;
  Shape out_shape = x.shape();
  out_shape[axis] = n;
  const auto xd = x.data();
  std::vector<float> out(s.outer * n * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      std::copy_n(xd.data() + o * s.inner, s.inner, out.data() + (o * n + k) * s.inner);
  return record("repeat_axis", std::move(out_shape), std::move(out), {x},
                [axis](const std::vector<Tensor>&, const Tensor&, const Tensor& g) {
                  return std::vector<Tensor>{sum_axis(g, axis, true)};
                });
}

Tensor sum_to(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  const std::size_t n = numel(shape);
  if (n == 1) return reshape(sum(x), shape);
  if (!is_suffix(shape, x.shape())) {
    throw ShapeError("sum_to: cannot reduce " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  const auto xd = x.data();
  std::vector<double> acc(n, 0.0);
  for (std::size_t i = 0; i < xd.size(); ++i) acc[i % n] += xd[i];
  std::vector<float> out(acc.begin(), acc.end());
  return record("sum_to", shape, std::move(out), {x},
                [](const std::vector<Tensor>& in, const Tensor&, const Tensor& g) {
                  return std::vector<Tensor>{broadcast_to(g, in[0].shape())};
                });
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  const std::size_t n = x.numel();
  if (n != 1 && !is_suffix(x.shape(), shape)) {
    throw ShapeError("broadcast_to: cannot expand " + shape_str(x.shape()) + " to " +
                     shape_str(shape));
  }
  const auto xd = x.data();
  std::vector<float> out(numel(shape));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i % n];
  return record("broadcast_to", shape, std::move(out), {x},
                [](const std::vector<Tensor>& in, const Tensor&, const Tensor& g) {
                  return std::vector<Tensor>{sum_to(g, in[0].shape())};
                });
}

Tensor max_pool2x2(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.size() < 2 || s[s.size() - 2] < 2 || s[s.size() - 1] < 2) {
    throw ShapeError("max_pool2x2: needs spatial extents >= 2, got " + shape_str(s));
  }
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  const std::size_t ho = h / 2, wo = w / 2;
  const std::size_t planes = x.numel() / (h * w);
  Shape out_shape = s;
  out_shape[s.size() - 2] = ho;
  out_shape[s.size() - 1] = wo;
  const auto xd = x.data();
  std::vector<std::int64_t> idx;
  idx.reserve(planes * ho * wo);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = p * h * w + (2 * oy) * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t j = p * h * w + (2 * oy + dy) * w + 2 * ox + dx;
            if (xd[j] > xd[best]) best = j;
          }
        }
        idx.push_back(static_cast<std::int64_t>(best));
      }
    }
  }
  return gather_flat(x, make_index(std::move(idx)), std::move(out_shape));
}

// ---------------------------------------------------------------------------
// Index movement

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " invalid for " + shape_str(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    const Shape& ps = p.shape();
    bool ok = ps.size() == first.size();
    for (std::size_t d = 0; ok && d < ps.size(); ++d) ok = d == axis || ps[d] == first[d];
    if (!ok) {
      throw ShapeError("concat: axis mismatch between " + shape_str(first) + " and " +
                       shape_str(ps));
    }
    extents.push_back(ps[axis]);
    out_shape[axis] += ps[axis];
  }
  const AxisSplit os = split_at(out_shape, axis, "concat");
  std::vector<float> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto pd = parts[i].data();
    const std::size_t block = extents[i] * os.inner;
    for (std::size_t o = 0; o < os.outer; ++o) {
      std::copy_n(pd.data() + o * block, block,
                  out.data() + o * os.extent * os.inner + offset * os.inner);
    }
    offset += extents[i];
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return record("concat", std::move(out_shape), std::move(out), inputs,
                [axis, extents](const std::vector<Tensor>& in, const Tensor&, const Tensor& g) {
                  std::vector<Tensor> grads(in.size());
                  std::size_t start = 0;
                  for (std::size_t i = 0; i < in.size(); ++i) {
                    if (in[i].requires_grad()) grads[i] = slice(g, axis, start, extents[i]);
                    start += extents[i];
                  }
                  return grads;
                });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const AxisSplit s = split_at(x.shape(), axis, "slice");
  if (length == 0 || start + length > s.extent) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") invalid for axis " +
                     std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const auto xd = x.data();
  std::vector<float> out(s.outer * length * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xd.data() + (o * s.extent + start) * s.inner, length * s.inner,
                out.data() + o * length * s.inner);
  }
  const std::size_t extent = s.extent;
  return record("slice", std::move(out_shape), std::move(out), {x},
                [axis, start, length, extent](const std::vector<Tensor>& in, const Tensor&,
                                              const Tensor& g) {
                  std::vector<Tensor> pieces;
                  Shape pad = in[0].shape();
                  if (start > 0) {
                    pad[axis] = start;
                    pieces.push_back(Tensor::zeros(pad));
                  }
                  pieces.push_back(g);
                  if (start + length < extent) {
                    pad[axis] = extent - start - length;
                    pieces.push_back(Tensor::zeros(pad));
                  }
                  return std::vector<Tensor>{pieces.size() == 1 ? g : concat(pieces, axis)};
                });
}

Tensor gather_flat(const Tensor& x, IndexList index, Shape out_shape) {
  if (!index || index->size() != numel(out_shape)) {
    throw ShapeError("gather_flat: index count does not match " + shape_str(out_shape));
  }
  const auto xd = x.data();
  const auto n = static_cast<std::int64_t>(xd.size());
  std::vector<float> out(index->size());
  for (std::size_t k = 0; k < index->size(); ++k) {
    const std::int64_t j = (*index)[k];
    if (j >= n) throw ShapeError("gather_flat: index out of range for " + shape_str(x.shape()));
    out[k] = j < 0 ? 0.0f : xd[static_cast<std::size_t>(j)];
  }
  return record("gather_flat", std::move(out_shape), std::move(out), {x},
                [index](const std::vector<Tensor>& in, const Tensor&, const Tensor& g) {
                  return std::vector<Tensor>{scatter_flat(g, index, in[0].shape())};
                });
}

Tensor scatter_flat(const Tensor& x, IndexList index, Shape out_shape) {
  if (!index || index->size() != x.numel()) {
    throw ShapeError("scatter_flat: index count does not match " + shape_str(x.shape()));
  }
  const auto xd = x.data();
  const auto n = static_cast<std::int64_t>(numel(out_shape));
  std::vector<double> acc(static_cast<std::size_t>(n), 0.0);
  for (std::size_t k = 0; k < index->size(); ++k) {
    const std::int64_t j = (*index)[k];
    if (j >= n) throw ShapeError("scatter_flat: index out of range for " + shape_str(out_shape));
    if (j >= 0) acc[static_cast<std::size_t>(j)] += xd[k];
  }
  std::vector<float> out(acc.begin(), acc.end());
  return record("scatter_flat", std::move(out_shape), std::move(out), {x},
                [index](const std::vector<Tensor>& in, const Tensor&, const Tensor& g) {
                  return std::vector<Tensor>{gather_flat(g, index, in[0].shape())};
                });
}

Tensor embed_lookup(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) {
    throw ShapeError("embed_lookup: table must be rank 2, got " + shape_str(table.shape()));
  }
  if (ids.empty()) throw ShapeError("embed_lookup: empty id list");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<std::int64_t> idx;
  idx.reserve(ids.size() * d);
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw ValidationError("embed_lookup: index " + std::to_string(id) +
                            " out of vocabulary of size " + std::to_string(vocab));
    }
    for (std::size_t j = 0; j < d; ++j) idx.push_back(static_cast<std::int64_t>(id * d + j));
  }
  return gather_flat(table, make_index(std::move(idx)), {ids.size(), d});
}

Tensor im2col(const Tensor& input, std::size_t stride, Padding padding) {
  const Shape& s = input.shape();
  if (s.size() != 3) throw ShapeError("im2col: expects [C,H,W], got " + shape_str(s));
  if (stride == 0) throw ShapeError("im2col: stride must be positive");
  const std::size_t c = s[0], h = s[1], w = s[2];
  const std::size_t pad = padding == Padding::same ? 1 : 0;
  if (h + 2 * pad < 3 || w + 2 * pad < 3) {
    throw ShapeError("conv: degenerate output size for input " + shape_str(s));
  }
  const std::size_t ho = (h + 2 * pad - 3) / stride + 1;
  const std::size_t wo = (w + 2 * pad - 3) / stride + 1;
  std::vector<std::int64_t> idx;
  idx.reserve(ho * wo * c * 9);
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t ky = 0; ky < 3; ++ky) {
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const auto iy = static_cast<std::int64_t>(oy * stride + ky) - static_cast<std::int64_t>(pad);
            const auto ix = static_cast<std::int64_t>(ox * stride + kx) - static_cast<std::int64_t>(pad);
            if (iy < 0 || ix < 0 || iy >= static_cast<std::int64_t>(h) ||
                ix >= static_cast<std::int64_t>(w)) {
              idx.push_back(-1);
            } else {
              idx.push_back(static_cast<std::int64_t>(ch * h * w) + iy * static_cast<std::int64_t>(w) + ix);
            }
          }
        }
      }
    }
  }
  return gather_flat(input, make_index(std::move(idx)), {ho * wo, c * 9});
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride, Padding padding) {
  const Shape& ks = kernels.shape();
  if (ks.size() != 4 || ks[2] != 3 || ks[3] != 3 || input.rank() != 3 || ks[1] != input.dim(0)) {
    throw ShapeError("conv2d: kernels " + shape_str(ks) + " incompatible with input " +
                     shape_str(input.shape()));
  }
  const std::size_t c_out = ks[0];
  Tensor cols = im2col(input, stride, padding);
  const std::size_t h = input.dim(1), w = input.dim(2);
  const std::size_t pad = padding == Padding::same ? 1 : 0;
  const std::size_t ho = (h + 2 * pad - 3) / stride + 1;
  const std::size_t wo = (w + 2 * pad - 3) / stride + 1;
  Tensor kmat = reshape(kernels, {c_out, ks[1] * 9});
  Tensor out = matmul(cols, transpose(kmat));  // [Ho*Wo, C_out]
  return reshape(transpose(out), {c_out, ho, wo});
}

// ---------------------------------------------------------------------------
// Loss

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets");
  }
  const std::size_t rows = logits.dim(0), vocab = logits.dim(1);
  auto tgt = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
  bool any_ignored = false;
  for (int t : *tgt) {
    if (t < -1 || t >= static_cast<int>(vocab)) {
      throw ValidationError("cross_entropy: target " + std::to_string(t) +
                            " out of vocabulary of size " + std::to_string(vocab));
    }
    any_ignored |= t == -1;
  }
  const auto xd = logits.data();
  std::vector<float> out(rows, 0.0f);
  for (std::size_t r = 0; r < rows; ++r) {
    if ((*tgt)[r] < 0) continue;
    const float* row = xd.data() + r * vocab;
    const float mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) z += std::exp(double(row[j]) - mx);
    out[r] = static_cast<float>(mx + std::log(z) - row[(*tgt)[r]]);
  }
  return record(
      "cross_entropy", {rows}, std::move(out), {logits},
      [tgt, any_ignored](const std::vector<Tensor>& in, const Tensor&, const Tensor& g) {
        const std::size_t rows = in[0].dim(0), vocab = in[0].dim(1);
        std::vector<float> onehot(rows * vocab, 0.0f);
        for (std::size_t r = 0; r < rows; ++r)
          if ((*tgt)[r] >= 0) onehot[r * vocab + (*tgt)[r]] = 1.0f;
        Tensor d = sub(softmax(in[0], 1), Tensor({rows, vocab}, std::move(onehot)));
        if (any_ignored) {
          std::vector<float> keep(rows * vocab);
          for (std::size_t r = 0; r < rows; ++r)
            std::fill_n(keep.begin() + r * vocab, vocab, (*tgt)[r] >= 0 ? 1.0f : 0.0f);
          d = mul(d, Tensor({rows, vocab}, std::move(keep)));
        }
        return std::vector<Tensor>{mul(d, repeat_axis(reshape(g, {rows, 1}), 1, vocab))};
      });
}

Tensor cross_entropy(const Tensor& logits, int target) {
  if (logits.rank() != 1) {
    throw ShapeError("cross_entropy: expects a [V] logit vector, got " + shape_str(logits.shape()));
  }
  const int t[1] = {target};
  return reshape(cross_entropy(reshape(logits, {1, logits.dim(0)}), std::span<const int>(t, 1)), {});
}

}  // namespace metaquill
