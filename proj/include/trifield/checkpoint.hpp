#pragma once

#include <string>

#include "trifield/headfield.hpp"
#include "trifield/torso.hpp"

namespace trifield::checkpoint {

/// Binary model files. Byte layout, all little-endian:
///   "TFCK" | u32 version = 1 | u32 kind (1 head, 2 torso)
/// head sections, in order:
///   config: 15 x i32 (grid levels, features, table_size_log2, res_min,
///           res_max, backbone, attention, equal_budget, detach_attention,
///           audio_hidden, eye_hidden, density_hidden, color_hidden,
///           latent_dim, dir_octaves)
///   grids:  u32 count, then per grid u32 table_size, u64 n, f32[n]
///   stacks: audio, eye, density, color, each u64 n, f32[n]
/// torso sections, in order:
///   config: 7 x i32 (tex levels, features, table_size_log2, res_min,
///           res_max, deform_hidden, head_hidden)
///   keys:   9 x f32 key points, f32 gamma
///   deform stack, tex grid, head stack (encoded as above)
inline constexpr std::uint32_t kVersion = 1;

void save_head(const nets::HeadField& hf, const std::string& path);
nets::HeadField load_head(const std::string& path);

void save_torso(const nets::TorsoField& tf, const std::string& path);
nets::TorsoField load_torso(const std::string& path);

}  // namespace trifield::checkpoint
