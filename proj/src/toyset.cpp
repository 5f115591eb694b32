// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0

#include "metaquill/toyset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "metaquill/errors.hpp"
#include "metaquill/text.hpp"
#include "metaquill/tnsr.hpp"

namespace metaquill {

using nlohmann::json;

namespace {

using Rgb = std::array<float, 3>;

struct Named {
  const char* name;
  Rgb rgb;
};

constexpr std::array<Named, 6> kPalette{{{"red", {0.9f, 0.1f, 0.1f}},
                                         {"green", {0.1f, 0.75f, 0.2f}},
                                         {"blue", {0.15f, 0.25f, 0.9f}},
                                         {"yellow", {0.95f, 0.9f, 0.1f}},
                                         {"purple", {0.6f, 0.15f, 0.7f}},
                                         {"orange", {1.0f, 0.55f, 0.0f}}}};
constexpr std::array<Named, 3> kBackgrounds{{{"black", {0.0f, 0.0f, 0.0f}},
                                             {"gray", {0.5f, 0.5f, 0.5f}},
                                             {"white", {1.0f, 1.0f, 1.0f}}}};
constexpr Rgb kGround{0.45f, 0.3f, 0.15f};
constexpr std::array<const char*, 4> kShapes{"circle", "square", "triangle", "cross"};
constexpr std::array<const char*, 4> kPlurals{"circles", "squares", "triangles", "crosses"};
constexpr std::array<const char*, 3> kCounts{"one", "two", "three"};

int odd_size(double x) {
  int s = static_cast<int>(std::lround(x));
  if (s % 2 == 0) ++s;
  return std::max(s, 3);
}

struct Layout {
  int grid;
  int band;
  int small;
  int medium;
  int large;

  explicit Layout(int g)
      : grid(g),
        band(std::max(2, g / 10)),
        small(odd_size(7.0 * g / 32)),
        medium(odd_size(9.0 * g / 32)),
        large(odd_size(13.0 * g / 32)) {}
  // Objects live in rows [1, floor) and columns [1, grid - 1).
  int floor() const { return grid - band - 1; }
};

bool in_shape(int shape, int dy, int dx, int r) {
  switch (shape) {
    case 0: return dy * dy + dx * dx <= (r + 0.5) * (r + 0.5);
    case 1: return std::abs(dy) <= r && std::abs(dx) <= r;
    case 2: return std::abs(dy) <= r && 2 * std::abs(dx) <= dy + r;
    default: {
      const double arm = r / 3.0;
      return std::abs(dy) <= r && std::abs(dx) <= r && (std::abs(dx) <= arm || std::abs(dy) <= arm);
    }
  }
}

struct Object {
  int shape;
  int color;
  int size;
  int cy;
  int cx;
};

struct Canvas {
  int grid;
  std::vector<float> px;

  Canvas(const Layout& lay, const Rgb& bg) : grid(lay.grid), px(3 * lay.grid * lay.grid) {
    for (int y = 0; y < grid; ++y) {
      const Rgb& c = y >= grid - lay.band ? kGround : bg;
      for (int x = 0; x < grid; ++x) set(y, x, c);
    }
  }
  void set(int y, int x, const Rgb& c) {
    for (int ch = 0; ch < 3; ++ch) px[(ch * grid + y) * grid + x] = c[ch];
  }
  void draw(const Object& o) {
    const int r = (o.size - 1) / 2;
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx) {
        if (in_shape(o.shape, dy, dx, r)) set(o.cy + dy, o.cx + dx, kPalette[o.color].rgb);
      }
    }
  }
};

// Bounding boxes separated by at least two background pixels.
bool separated(const Object& a, const Object& b) {
  const int ra = (a.size - 1) / 2, rb = (b.size - 1) / 2;
  return std::abs(a.cy - b.cy) > ra + rb + 2 || std::abs(a.cx - b.cx) > ra + rb + 2;
}

template <typename Rng>
int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

template <typename Rng>
Object place(Rng& rng, const Layout& lay, int shape, int color, int size,
             const std::vector<Object>& others, int ylo = -1, int yhi = -1, int xlo = -1,
             int xhi = -1) {
  const int r = (size - 1) / 2;
  ylo = std::max(ylo, 1 + r);
  xlo = std::max(xlo, 1 + r);
  yhi = yhi < 0 ? lay.floor() - 1 - r : std::min(yhi, lay.floor() - 1 - r);
  xhi = xhi < 0 ? lay.grid - 2 - r : std::min(xhi, lay.grid - 2 - r);
  if (ylo > yhi || xlo > xhi) throw ValidationError("toyset: grid too small for the scene");
  for (int attempt = 0; attempt < 10000; ++attempt) {
    Object o{shape, color, size, uniform_int(rng, ylo, yhi), uniform_int(rng, xlo, xhi)};
    bool ok = true;
    for (const auto& other : others) ok = ok && separated(o, other);
    if (ok) return o;
  }
  throw ValidationError("toyset: could not place objects without overlap");
}

std::string question_for(const std::string& family, const std::vector<Object>& objs, int asked,
                         int asked_color) {
  const std::string shape = kShapes[objs.empty() ? 0 : objs[asked].shape];
  if (family == "shape") return "what shape is shown ?";
  if (family == "color") return "what color is the " + shape + " ?";
  if (family == "count") return std::string("how many ") + kPlurals[objs[0].shape] + " are there ?";
  if (family == "position") return "where is the " + shape + " ?";
  if (family == "size") return "how big is the " + shape + " ?";
  if (family == "binary") return "is the " + shape + " " + kPalette[asked_color].name + " ?";
  if (family == "background") return "what color is the background ?";
  return "what is next to the " + shape + " ?";
}

ToyItem render_one(const ToySpec& spec, const Layout& lay, int cat, int index) {
  const std::string& family = toy_families()[cat];
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(cat), static_cast<std::uint32_t>(index)};
  std::mt19937_64 rng(seq);
  const int bg = uniform_int(rng, 0, 2);
  const int shape = uniform_int(rng, 0, 3);
  const int color = uniform_int(rng, 0, 5);
  const int mid = uniform_int(rng, 0, 1) ? lay.medium : lay.small;
  const int half = lay.grid / 2;

  std::vector<Object> objs;
  std::string answer;
  int asked = 0;
  int asked_color = color;
  if (family == "count") {
    const int n = uniform_int(rng, 1, 3);
    for (int i = 0; i < n; ++i) objs.push_back(place(rng, lay, shape, color, lay.small, objs));
    answer = kCounts[n - 1];
  } else if (family == "position") {
    const bool top = uniform_int(rng, 0, 1), left = uniform_int(rng, 0, 1);
    objs.push_back(place(rng, lay, shape, color, mid, objs, top ? -1 : half + 1,
                         top ? half - 2 : -1, left ? -1 : half + 1, left ? half - 2 : -1));
    answer = std::string(top ? "top" : "bottom") + (left ? " left" : " right");
  } else if (family == "size") {
    const bool large = uniform_int(rng, 0, 1);
    objs.push_back(place(rng, lay, shape, color, large ? lay.large : lay.small, objs));
    answer = large ? "large" : "small";
  } else if (family == "spatial") {
    int other = uniform_int(rng, 0, 2);
    if (other >= shape) ++other;
    const int other_color = uniform_int(rng, 0, 5);
    objs.push_back(place(rng, lay, shape, color, lay.small, objs, -1, -1, -1, half - 3));
    objs.push_back(place(rng, lay, other, other_color, lay.small, objs, objs[0].cy - 1,
                         objs[0].cy + 1, half + 2, -1));
    asked = uniform_int(rng, 0, 1);
    answer = kShapes[objs[1 - asked].shape];
  } else {
    objs.push_back(place(rng, lay, shape, color, mid, objs));
    if (family == "shape") {
      answer = kShapes[shape];
    } else if (family == "color") {
      answer = kPalette[color].name;
    } else if (family == "binary") {
      const bool yes = uniform_int(rng, 0, 1);
      if (!yes) {
        asked_color = uniform_int(rng, 0, 4);
        if (asked_color >= color) ++asked_color;
      }
      answer = yes ? "yes" : "no";
    } else {
      answer = kBackgrounds[bg].name;
    }
  }

  Canvas canvas(lay, kBackgrounds[bg].rgb);
  for (const auto& o : objs) canvas.draw(o);

  char id[32];
  std::snprintf(id, sizeof id, "toy_%02d_%04d", cat, index);
  ToyItem item;
  item.record.image_id = id;
  item.record.image_ref = std::string("images/") + id + ".tnsr";
  item.record.question = question_for(family, objs, asked, asked_color);
  item.record.answer = answer;
  item.record.answer_category = family;
  item.record.question_category = tokenize(item.record.question).front();
  item.image = Tensor({3, static_cast<std::size_t>(lay.grid), static_cast<std::size_t>(lay.grid)},
                      std::move(canvas.px));
  return item;
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

// ---- checker ----

struct Component {
  int top, bottom, left, right;
  int count = 0;
  Rgb color;
  std::vector<std::pair<int, int>> pixels;
  int height() const { return bottom - top + 1; }
  int width() const { return right - left + 1; }
};

bool near(const float* a, const std::vector<float>& b) {
  for (int c = 0; c < 3; ++c) {
    if (std::abs(a[c] - b[c]) > 0.02f) return false;
  }
  return true;
}

std::string nearest_name(const Rgb& rgb, const json& table) {
  std::string best;
  double best_d = 1e9;
  for (const auto& [name, value] : table.items()) {
    double d = 0;
    for (int c = 0; c < 3; ++c) {
      const double diff = rgb[c] - value[c].get<double>();
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = name;
    }
  }
  return best;
}

std::vector<Component> components(const Tensor& image, const json& rules,
                                  std::string& background) {
  const int g = static_cast<int>(image.dim(2));
  const auto px = image.data();
  auto at = [&](int y, int x, float* out) {
    for (int c = 0; c < 3; ++c) out[c] = px[(c * g + y) * g + x];
  };
  float corner[3];
  at(0, 0, corner);
  background = nearest_name({corner[0], corner[1], corner[2]}, rules.at("backgrounds"));
  const auto bg = rules.at("backgrounds").at(background).get<std::vector<float>>();
  const int rows = g - rules.at("ground_rows").get<int>();

  std::vector<int> label(static_cast<std::size_t>(g) * g, -1);
  std::vector<Component> comps;
  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < g; ++x) {
      float v[3];
      at(y, x, v);
      if (near(v, bg) || label[y * g + x] >= 0) continue;
      Component comp{y, y, x, x, 0, {v[0], v[1], v[2]}, {}};
      const int id = static_cast<int>(comps.size());
      std::vector<std::pair<int, int>> stack{{y, x}};
      label[y * g + x] = id;
      while (!stack.empty()) {
        auto [cy, cx] = stack.back();
        stack.pop_back();
        comp.pixels.emplace_back(cy, cx);
        comp.top = std::min(comp.top, cy);
        comp.bottom = std::max(comp.bottom, cy);
        comp.left = std::min(comp.left, cx);
        comp.right = std::max(comp.right, cx);
        const int dirs[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
        for (const auto& d : dirs) {
          const int ny = cy + d[0], nx = cx + d[1];
          if (ny < 0 || nx < 0 || ny >= rows || nx >= g || label[ny * g + nx] >= 0) continue;
          float w[3];
          at(ny, nx, w);
          if (near(w, bg)) continue;
          label[ny * g + nx] = id;
          stack.emplace_back(ny, nx);
        }
      }
      comp.count = static_cast<int>(comp.pixels.size());
      comps.push_back(std::move(comp));
    }
  }
  std::sort(comps.begin(), comps.end(), [](const Component& a, const Component& b) {
    return std::tie(a.left, a.top) < std::tie(b.left, b.top);
  });
  return comps;
}

std::string classify_shape(const Component& c) {
  std::vector<char> filled(static_cast<std::size_t>(c.height()) * c.width(), 0);
  for (auto [y, x] : c.pixels) filled[(y - c.top) * c.width() + (x - c.left)] = 1;
  auto row_fill = [&](int r) {
    int n = 0;
    for (int x = 0; x < c.width(); ++x) n += filled[r * c.width() + x];
    return static_cast<double>(n) / c.width();
  };
  const double fill = static_cast<double>(c.count) / (c.height() * c.width());
  if (fill >= 0.95) return "square";
  if (row_fill(c.height() - 1) >= 0.8 && row_fill(0) < 0.5) return "triangle";
  const int qy = (c.height() - 1) / 4, qx = (c.width() - 1) / 4;
  return filled[qy * c.width() + qx] ? "circle" : "cross";
}

}  // namespace

void ToySpec::validate() const {
  if (n_categories < 4 || n_categories > static_cast<int>(toy_families().size())) {
    throw ValidationError("toyset: n_categories must be in [4, " +
                          std::to_string(toy_families().size()) + "], got " +
                          std::to_string(n_categories));
  }
  if (images_per_cat < 1) throw ValidationError("toyset: images_per_cat must be positive");
  if (grid < 24 || grid > 128) throw ValidationError("toyset: grid must be in [24, 128]");
}

const std::vector<std::string>& toy_families() {
  static const std::vector<std::string> families{"shape", "color",      "count",  "position",
                                                 "size",  "binary",     "background", "spatial"};
  return families;
}

SplitSpec toy_split(int n_categories) {
  SplitSpec spec;
  const int n_train = (n_categories + 1) / 2;
  for (int i = 0; i < n_categories; ++i) {
    (i < n_train ? spec.train_categories : spec.test_categories).insert(toy_families()[i]);
  }
  return spec;
}

std::vector<ToyItem> render_toyset(const ToySpec& spec) {
  spec.validate();
  const Layout lay(spec.grid);
  std::vector<ToyItem> items;
  items.reserve(static_cast<std::size_t>(spec.n_categories) * spec.images_per_cat);
  for (int cat = 0; cat < spec.n_categories; ++cat) {
    for (int i = 0; i < spec.images_per_cat; ++i) items.push_back(render_one(spec, lay, cat, i));
  }
  return items;
}

json toy_checker_rules(int grid) {
  const Layout lay(grid);
  json palette = json::object(), backgrounds = json::object();
  for (const auto& p : kPalette) palette[p.name] = p.rgb;
  for (const auto& b : kBackgrounds) backgrounds[b.name] = b.rgb;
  return {{"grid", grid},
          {"palette", palette},
          {"backgrounds", backgrounds},
          {"ground_color", kGround},
          {"ground_rows", lay.band},
          {"background_probe", {0, 0}},
          {"size_threshold", (lay.small + lay.large) / 2},
          {"shape_rules",
           {"square: bounding-box fill >= 0.95",
            "triangle: bottom row fill >= 0.8 and top row fill < 0.5",
            "circle: pixel at one quarter of the bounding box is filled",
            "cross: otherwise"}},
          {"position_split", grid / 2}};
}

std::string answer_from_image(const Tensor& image, const std::string& category,
                              const std::string& question, const json& rules) {
  std::string background;
  const auto comps = components(image, rules, background);
  if (category == "background") return background;
  if (comps.empty()) return "";
  const auto tokens = tokenize(question);
  auto asked_shape = [&]() -> std::string {
    for (const auto& t : tokens) {
      for (const char* s : kShapes) {
        if (t == s) return s;
      }
    }
    return "";
  };
  auto find_asked = [&]() -> const Component* {
    const auto want = asked_shape();
    for (const auto& c : comps) {
      if (classify_shape(c) == want) return &c;
    }
    return nullptr;
  };
  const Component& first = comps.front();
  if (category == "shape") return classify_shape(first);
  if (category == "color") return nearest_name(first.color, rules.at("palette"));
  if (category == "count") {
    if (comps.size() < 1 || comps.size() > kCounts.size()) return "";
    return kCounts[comps.size() - 1];
  }
  if (category == "position") {
    const int split = rules.at("position_split").get<int>();
    const double cy = (first.top + first.bottom) / 2.0, cx = (first.left + first.right) / 2.0;
    return std::string(cy < split ? "top" : "bottom") + (cx < split ? " left" : " right");
  }
  if (category == "size") {
    return first.height() >= rules.at("size_threshold").get<int>() ? "large" : "small";
  }
  if (category == "binary") {
    const std::string actual = nearest_name(first.color, rules.at("palette"));
    return tokens.size() >= 4 && tokens[3] == actual ? "yes" : "no";
  }
  if (category == "spatial") {
    const Component* asked = find_asked();
    if (!asked || comps.size() != 2) return "";
    return classify_shape(asked == &comps[0] ? comps[1] : comps[0]);
  }
  throw ValidationError("toy checker: unknown category '" + category + "'");
}

Manifest generate_toyset(const ToySpec& spec, const std::filesystem::path& out_dir) {
  const auto items = render_toyset(spec);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());
  Manifest manifest;
  for (const auto& item : items) {
    write_tnsr(out_dir / item.record.image_ref, item.image);
    manifest.records.push_back(item.record);
  }
  save_manifest(out_dir / "manifest.jsonl", manifest);
  write_json(out_dir / "checker_rules.json", toy_checker_rules(spec.grid));
  write_json(out_dir / "splitspec.json", toy_split(spec.n_categories).to_json());
  return manifest;
}

CheckReport check_toyset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "checker_rules.json", std::ios::binary);
  if (!in) throw IoError("cannot read " + (dir / "checker_rules.json").string());
  json rules;
  try {
    rules = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("malformed checker rules: " + std::string(e.what()));
  }
  const Manifest manifest = load_manifest(dir / "manifest.jsonl");
  CheckReport report;
  for (const auto& r : manifest.records) {
    const Tensor image = read_tnsr(dir / r.image_ref);
    const auto got = answer_from_image(image, r.answer_category, r.question, rules);
    ++report.checked;
    if (got == r.answer) {
      ++report.passed;
    } else {
      report.failures.push_back(r.image_id + ": expected '" + r.answer + "', checker says '" +
                                got + "'");
    }
  }
  return report;
}

}  // namespace metaquill
