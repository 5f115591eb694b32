// Copyright 2026 The metaquill Authors
// SPDX-License-Identifier: Apache-2.0
//
// TNSR binary tensor files: magic "TNSR", u8 version (1), u8 rank,
// rank x u32 little-endian extents, then the row-major f32 little-endian
// payload.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "metaquill/tensor.hpp"

namespace metaquill {

inline constexpr std::uint8_t kTnsrVersion = 1;

std::vector<std::uint8_t> encode_tnsr(const Tensor& t);
Tensor decode_tnsr(std::span<const std::uint8_t> bytes);

void write_tnsr(const std::filesystem::path& path, const Tensor& t);
Tensor read_tnsr(const std::filesystem::path& path);

}  // namespace metaquill
