// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0

#include "metaquill/params.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>

#include "metaquill/errors.hpp"
#include "metaquill/ops.hpp"
#include "metaquill/tnsr.hpp"

namespace metaquill {

double json_float(float v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::strtod(std::string(buf, res.ptr).c_str(), nullptr);
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

const Tensor& param(const ParamSet& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw ValidationError("missing parameter '" + name + "'");
  return it->second;
}

Tensor init_uniform(const Shape& shape, float bound, std::uint64_t seed, const std::string& name) {
  const std::uint64_t h = fnv1a(name);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<float> dist(-bound, bound);
  std::vector<float> v(numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(shape, std::move(v), true);
}

ParamSet clone_params(const ParamSet& params) {
  ParamSet out;
  for (const auto& [name, t] : params) out.emplace(name, t.as_leaf(true));
  return out;
}

ParamSet detach_params(const ParamSet& params) {
  ParamSet out;
  for (const auto& [name, t] : params) out.emplace(name, t.detach());
  return out;
}

std::vector<Tensor> values(const ParamSet& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& [name, t] : params) out.push_back(t);
  return out;
}

std::vector<std::string> names(const ParamSet& params) {
  std::vector<std::string> out;
  out.reserve(params.size());
  for (const auto& [name, t] : params) out.push_back(name);
  return out;
}

std::size_t count_scalars(const ParamSet& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

ParamSet sgd_step(const ParamSet& params, const std::map<std::string, Tensor>& grads, float lr) {
  ParamSet out;
  for (const auto& [name, p] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) {
      out.emplace(name, p);
      continue;
    }
    if (g->second.shape() != p.shape()) {
      throw ShapeError("sgd_step: gradient for '" + name + "' has shape " +
                       shape_str(g->second.shape()) + ", parameter " + shape_str(p.shape()));
    }
    std::vector<float> v(p.numel());
    const auto pd = p.data();
    const auto gd = g->second.data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = pd[i] - lr * gd[i];
    for (float x : v) {
      if (!std::isfinite(x)) throw NumericError("sgd_step: non-finite update for '" + name + "'");
    }
    out.emplace(name, Tensor(p.shape(), std::move(v), p.requires_grad()));
  }
  return out;
}

double clip_grad_norm(std::map<std::string, Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    for (float x : g.data()) sq += static_cast<double>(x) * x;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const float factor = static_cast<float>(max_norm / norm);
    for (auto& [name, g] : grads) {
      std::vector<float> v(g.data().begin(), g.data().end());
      for (auto& x : v) x *= factor;
      g = Tensor(g.shape(), std::move(v));
    }
  }
  return norm;
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [name, t] : ckpt.params) {
    const std::string file = name + ".tnsr";
    write_tnsr(dir / file, t);
    const bool frozen =
        std::find(ckpt.frozen.begin(), ckpt.frozen.end(), name) != ckpt.frozen.end();
    entries.push_back({{"name", name}, {"shape", t.shape()}, {"file", file}, {"trainable", !frozen}});
  }
  nlohmann::json manifest = {{"params", entries},
                             {"step", ckpt.step},
                             {"seed", ckpt.seed},
                             {"config", ckpt.config}};
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + (dir / "manifest.json").string());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint manifest " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed checkpoint manifest " + (dir / "manifest.json").string() +
                          ": " + e.what());
  }
  Checkpoint ckpt;
  try {
    ckpt.step = manifest.at("step").get<std::int64_t>();
    ckpt.seed = manifest.at("seed").get<std::uint64_t>();
    ckpt.config = manifest.value("config", nlohmann::json::object());
    for (const auto& entry : manifest.at("params")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<Shape>();
      const bool trainable = entry.value("trainable", true);
      Tensor t = read_tnsr(dir / entry.at("file").get<std::string>());
      if (t.shape() != shape) {
        throw ValidationError("checkpoint parameter '" + name + "' has shape " +
                              shape_str(t.shape()) + " but the manifest says " +
                              shape_str(shape));
      }
      ckpt.params.emplace(name, t.as_leaf(trainable));
      if (!trainable) ckpt.frozen.push_back(name);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed checkpoint manifest " + (dir / "manifest.json").string() +
                          ": " + e.what());
  }
  return ckpt;
}

}  // namespace metaquill
