// Copyright Contributors to the featsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "featsplat/decoder.hpp"
#include "featsplat/scene.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace featsplat {

// Scene file layout (little-endian):
//   "FSPL" | version u32 = 1 | N u64 | D u32 | C u32
//   N x [position 3f | quaternion 4f (w,x,y,z) | log_scale 3f | opacity_logit f | feature Df]
//   decoder: E u32 | flags u8 (bit0 pixel, bit1 campos, bit2 camrot) | C u32 | W1 | b1 | W2 | b2
//   CRC32 u32 over every preceding byte
// Parameters are stored as binary32.

inline constexpr std::uint32_t kSceneFileVersion = 1;

std::vector<std::uint8_t> encode_scene(const SplatScene& scene, const Decoder& decoder);

struct LoadedScene {
    SplatScene scene;
    Decoder decoder;
};

/// Throws FormatError naming the byte offset of the first problem.
LoadedScene decode_scene(std::span<const std::uint8_t> bytes);

void save_scene(const SplatScene& scene, const Decoder& decoder, const std::filesystem::path& path);
LoadedScene load_scene(const std::filesystem::path& path);

}  // namespace featsplat
