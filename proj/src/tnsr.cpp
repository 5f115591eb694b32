// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0

#include "metaquill/tnsr.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "metaquill/errors.hpp"

namespace metaquill {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_tnsr(const Tensor& t) {
  const Shape& shape = t.shape();
  if (shape.size() > 255) throw ValidationError("tnsr: rank too large");
  std::vector<std::uint8_t> out = {'T', 'N', 'S', 'R', kTnsrVersion,
                                   static_cast<std::uint8_t>(shape.size())};
  for (auto d : shape) {
    if (d > 0xffffffffu) throw ValidationError("tnsr: extent exceeds u32");
    put_u32(out, static_cast<std::uint32_t>(d));
  }
  out.reserve(out.size() + 4 * t.numel());
  for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Tensor decode_tnsr(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 6 || std::memcmp(bytes.data(), "TNSR", 4) != 0) {
    throw ValidationError("tnsr: bad magic");
  }
  if (bytes[4] != kTnsrVersion) {
    throw ValidationError("tnsr: unsupported version " + std::to_string(bytes[4]));
  }
  const std::size_t rank = bytes[5];
  std::size_t at = 6;
  if (bytes.size() < at + 4 * rank) throw ValidationError("tnsr: truncated header");
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i, at += 4) shape[i] = get_u32(bytes, at);
  const std::size_t n = numel(shape);
  if (bytes.size() != at + 4 * n) {
    throw ValidationError("tnsr: payload size mismatch for shape " + shape_str(shape));
  }
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i, at += 4) data[i] = std::bit_cast<float>(get_u32(bytes, at));
  return Tensor(std::move(shape), std::move(data));
}

void write_tnsr(const std::filesystem::path& path, const Tensor& t) {
  const auto bytes = encode_tnsr(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Tensor read_tnsr(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_tnsr(bytes);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace metaquill
