// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <random>
#include <vector>

#include "doctest.h"
#include "metaquill/autograd.hpp"
#include "metaquill/errors.hpp"
#include "metaquill/ops.hpp"
#include "metaquill/tnsr.hpp"

using namespace metaquill;

namespace {

Tensor random_tensor(const Shape& shape, std::mt19937& rng, bool requires_grad = false) {
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  std::vector<float> v(numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(shape, std::move(v), requires_grad);
}

void check_close(const Tensor& a, const Tensor& b, double tol = 1e-6) {
  REQUIRE(a.shape() == b.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(std::abs(a.at(i) - b.at(i)) <= tol);
}

}  // namespace

TEST_CASE("matmul identity, zero and shape errors") {
  std::mt19937 rng(1);
  Tensor x = random_tensor({3, 3}, rng);
  Tensor eye = Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  check_close(matmul(eye, x), x, 0.0);
  Tensor z = matmul(Tensor::zeros({2, 3}), x);
  for (float v : z.data()) CHECK(v == 0.0f);
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST_CASE("matmul gradient of sum(A.B) w.r.t. A is ones.B^T") {
  std::mt19937 rng(2);
  Tensor a = random_tensor({2, 3}, rng, true);
  Tensor b = random_tensor({3, 4}, rng);
  auto g = grad(sum(matmul(a, b)), std::vector<Tensor>{a});
  Tensor expected = matmul(Tensor::ones({2, 4}), transpose(b));
  check_close(g[0], expected, 1e-6);
}

TEST_CASE("elementwise identities") {
  CHECK(tanh(Tensor::scalar(0.0f)).item() == 0.0f);
  std::mt19937 rng(3);
  Tensor x = random_tensor({2, 5}, rng);
  check_close(add(x, Tensor::scalar(0.0f)), x, 0.0);
  check_close(add(x, Tensor::zeros({5})), x, 0.0);
  CHECK_THROWS_AS(add(Tensor::zeros({2, 5}), Tensor::zeros({2})), ShapeError);
  CHECK_THROWS_AS(add(Tensor::zeros({2, 5}), Tensor::zeros({3, 5})), ShapeError);
}

TEST_CASE("non-finite results fail fast with the op name") {
  Tensor big = Tensor::scalar(3.0e38f);
  try {
    (void)mul(big, Tensor::scalar(10.0f));
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("mul") != std::string::npos);
  }
}

TEST_CASE("softmax normalisation, symmetry and shift invariance") {
  Tensor c = Tensor::full({5}, 2.5f);
  Tensor s = softmax(c, 0);
  for (float v : s.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-7));

  std::mt19937 rng(4);
  std::uniform_real_distribution<float> wide(-50.0f, 50.0f);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<float> v(7);
    for (auto& x : v) x = wide(rng);
    Tensor y = softmax(Tensor({7}, v), 0);
    double total = 0.0;
    for (float p : y.data()) {
      CHECK(p >= 0.0f);
      total += p;
    }
    CHECK(std::abs(total - 1.0) <= 1e-6);
  }

  Tensor x = random_tensor({3, 4}, rng);
  check_close(softmax(add_scalar(x, 7.0f), 1), softmax(x, 1), 1e-6);
  Tensor cols = softmax(x, 0);
  for (std::size_t j = 0; j < 4; ++j) {
    double t = 0;
    for (std::size_t i = 0; i < 3; ++i) t += cols.at(i * 4 + j);
    CHECK(std::abs(t - 1.0) <= 1e-6);
  }
}

TEST_CASE("conv2d delta kernel and all-ones valid convolution") {
  std::mt19937 rng(5);
  Tensor img = random_tensor({1, 5, 6}, rng);
  std::vector<float> k(9, 0.0f);
  k[4] = 1.0f;
  Tensor delta({1, 1, 3, 3}, k);
  check_close(conv2d(img, delta, 1, Padding::same), img, 0.0);

  Tensor ones = conv2d(Tensor::ones({1, 4, 4}), Tensor::ones({1, 1, 3, 3}), 1, Padding::valid);
  CHECK(ones.shape() == Shape{1, 2, 2});
  for (float v : ones.data()) CHECK(v == 9.0f);

  CHECK_THROWS_AS(conv2d(Tensor::ones({1, 2, 2}), Tensor::ones({1, 1, 3, 3}), 1, Padding::valid),
                  ShapeError);
}

TEST_CASE("reductions, concat and cross entropy") {
  Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({2, 5});
  CHECK(concat({a, b}, 1).shape() == Shape{2, 8});
  CHECK_THROWS_AS(concat({a, Tensor::zeros({3, 5})}, 1), ShapeError);

  Tensor confident = Tensor::vector({40.0f, 0.0f, 0.0f, 0.0f});
  CHECK(cross_entropy(confident, 0).item() == doctest::Approx(0.0).epsilon(1e-9));
  CHECK_THROWS_AS(cross_entropy(confident, 4), ValidationError);

  Tensor x = Tensor({4}, {1, 2, 3, 4}, true);
  Tensor g = grad(mean(x), std::vector<Tensor>{x})[0];
  for (float v : g.data()) CHECK(v == doctest::Approx(0.25));

  Tensor pooled = max_pool2x2(Tensor({1, 2, 4}, {1, 5, 2, 0, 3, 4, 7, 8}));
  CHECK(pooled.shape() == Shape{1, 1, 2});
  CHECK(pooled.at(0) == 5.0f);
  CHECK(pooled.at(1) == 8.0f);

  Tensor table = Tensor::matrix(3, 2, {0, 1, 2, 3, 4, 5});
  const int ids[] = {2, 0};
  Tensor rows = embed_lookup(table, ids);
  CHECK(rows.at(0) == 4.0f);
  CHECK(rows.at(3) == 1.0f);
  const int bad[] = {3};
  CHECK_THROWS_AS(embed_lookup(table, bad), ValidationError);
}

TEST_CASE("backward basics") {
  Tensor p = Tensor({3}, {0.5f, -1.0f, 2.0f}, true);
  GradMap g = backward(sum(p));
  for (float v : g[p].data()) CHECK(v == 1.0f);

  Tensor x = Tensor::scalar(2.0f, true);
  Tensor c = Tensor::scalar(3.0f, true);
  Tensor y = add(mul(c, Tensor::scalar(4.0f)), mul(x, Tensor::scalar(0.0f)));
  CHECK(grad(y, std::vector<Tensor>{x})[0].item() == 0.0f);

  CHECK_THROWS_AS(backward(p), ShapeError);
  CHECK_THROWS_AS(backward(sum(Tensor::ones({2}))), ValidationError);
}

TEST_CASE("second derivative of x^3 at 2") {
  Tensor x = Tensor::scalar(2.0f, true);
  Tensor y = mul(mul(x, x), x);
  Tensor dy = grad(y, std::vector<Tensor>{x}, /*create_graph=*/true)[0];
  CHECK(dy.item() == doctest::Approx(12.0));
  CHECK(dy.requires_grad());
  Tensor d2y = grad(dy, std::vector<Tensor>{x})[0];
  CHECK(d2y.item() == doctest::Approx(12.0));
}

TEST_CASE("replaying backward twice gives identical gradients") {
  std::mt19937 rng(6);
  Tensor w = random_tensor({4, 3}, rng, true);
  Tensor x = random_tensor({2, 4}, rng);
  Tensor loss = sum(tanh(matmul(x, w)));
  Tensor g1 = backward(loss)[w];
  Tensor g2 = backward(loss)[w];
  for (std::size_t i = 0; i < g1.numel(); ++i) CHECK(g1.at(i) == g2.at(i));
}

TEST_CASE("grad mode guard stops recording") {
  Tensor x = Tensor::scalar(1.0f, true);
  {
    NoGradGuard guard;
    CHECK_FALSE(mul(x, x).requires_grad());
  }
  CHECK(mul(x, x).requires_grad());
}

TEST_CASE("long chains release without deep recursion") {
  Tensor x = Tensor::scalar(1.0f, true);
  Tensor y = x;
  for (int i = 0; i < 200000; ++i) y = add_scalar(y, 0.0f);
  CHECK(y.requires_grad());
  y = Tensor();
  CHECK(x.requires_grad());
}

TEST_CASE("tnsr round trip preserves all bytes") {
  std::mt19937 rng(7);
  Tensor t = random_tensor({7, 7, 16}, rng);
  const auto bytes = encode_tnsr(t);
  CHECK(bytes[0] == 'T');
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 3);
  CHECK(bytes.size() == 6 + 3 * 4 + 7 * 7 * 16 * 4);
  // Little-endian extents.
  CHECK(bytes[6] == 7);
  CHECK(bytes[14] == 16);
  auto path = std::filesystem::temp_directory_path() / "metaquill_tensor_roundtrip.tnsr";
  write_tnsr(path, t);
  Tensor back = read_tnsr(path);
  CHECK(back.shape() == t.shape());
  CHECK(encode_tnsr(back) == bytes);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(decode_tnsr(std::vector<std::uint8_t>{'N', 'O', 'P', 'E', 1, 0}), ValidationError);
  CHECK_THROWS_AS(read_tnsr("/nonexistent/file.tnsr"), IoError);
}
