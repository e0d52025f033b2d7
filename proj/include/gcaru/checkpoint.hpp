#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gcaru/params.hpp"

namespace gcaru {

// On-disk checkpoint: "GCAR" magic, format version, model-config digest, an
// ordered list of named float32 tensors (row-major, little-endian), and a
// trailing FNV-1a 64 checksum over everything before it. Byte layout is
// documented in docs/checkpoint_format.md.

struct CkptEntry {
    std::string name;
    std::vector<int> dims;
    std::vector<float> values;
};

struct CheckpointData {
    std::uint64_t config_digest = 0;
    std::vector<CkptEntry> entries;
};

inline constexpr std::uint32_t kCkptVersion = 1;

void save_checkpoint(const ParamList<float>& params, std::uint64_t config_digest,
                     const std::filesystem::path& path);

CheckpointData load_checkpoint(const std::filesystem::path& path);

// Copies loaded tensors into the model's parameter list; rejects digest or
// layout mismatches.
void apply_checkpoint(const CheckpointData& data, const ParamList<float>& params,
                      std::uint64_t expected_digest);

}  // namespace gcaru
