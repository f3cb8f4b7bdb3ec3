#pragma once

#include <optional>
#include <string>

#include "dlm/backbone.hpp"

namespace dlm {

// Objective the checkpoint was trained with; samplers use it to validate
// block sizes.
struct TrainMeta {
    std::string objective;       // "mdlm" | "bd3lm" | "" (untrained)
    int32_t     block_size = 0;  // bd3lm only

    bool operator==(const TrainMeta &) const = default;
};

inline constexpr uint32_t    kCheckpointVersion = 1;
inline constexpr const char *kCheckpointMagic   = "DLMCKPT\0";

// Layout: 8-byte magic, u32 format version, u64 manifest length, UTF-8 JSON
// manifest (config + per-tensor shape/offset), then a contiguous
// little-endian float32 payload. The config is mirrored to <path>.json for
// human inspection.
void save_checkpoint(const Backbone & model, const std::string & path, const TrainMeta & meta = {});

struct LoadedCheckpoint {
    Backbone  model;
    TrainMeta meta;
};

// Rebuilds the model from the embedded config; every manifest inconsistency
// (version, offsets, payload size, truncation) is a structured error naming
// the offending field. When expect is given, its fields must match the
// embedded config.
LoadedCheckpoint load_checkpoint(const std::string & path, const BackboneConfig * expect = nullptr);

}  // namespace dlm
