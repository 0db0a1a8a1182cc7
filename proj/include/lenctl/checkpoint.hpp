#pragma once

#include <cstdint>
#include <string>

#include "lenctl/model.hpp"

namespace lenctl {

struct CheckpointMeta {
    ModelConfig config;
    int64_t step = 0;
    uint64_t seed = 0;
    std::string mode = "none";
};

// Binary layout: "LBTC" magic, u32 version, u32-length-prefixed JSON
// metadata, then per-tensor records of
//   u32 name length, name bytes, u8 dtype tag (0 = f32), u8 rank,
//   u32 dims, little-endian f32 payload.
// Round trips are bit exact.
void save_checkpoint(const std::string& path, Parameters<float>& params,
                     const CheckpointMeta& meta);

Parameters<float> load_checkpoint(const std::string& path, CheckpointMeta* meta_out = nullptr);

} // namespace lenctl
