#pragma once

#include <filesystem>
#include <string>

#include "cbamnet/backbone.hpp"

namespace cbamnet {

constexpr uint32_t kCheckpointVersion = 1;

// Flat archive: header (magic, format version, model-spec digest) followed by
// one record per registry entry (name, dtype tag, shape, little-endian raw
// payload). Round-trips are bit-exact.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterRegistry<T>& registry,
                     uint64_t spec_digest);

// Loads into an existing registry; names, dtypes, and shapes must match
// exactly and the stored spec digest must equal expected_digest.
template <typename T>
void load_checkpoint(const std::filesystem::path& path, ParameterRegistry<T>& registry,
                     uint64_t expected_digest);

// Reads just the spec digest from a checkpoint header.
uint64_t checkpoint_spec_digest(const std::filesystem::path& path);

}  // namespace cbamnet
