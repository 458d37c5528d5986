#pragma once

#include <filesystem>
#include <memory>

#include "cstyolo/detector.hpp"

namespace cstyolo {

/// Layout: uint64 little-endian header length, JSON header (network config,
/// fused flag, one {path, shape, offset} entry per state tensor), then the
/// state tensors as little-endian float32 in `state()` order.
void save_checkpoint(const std::filesystem::path& path, Detector& net);

/// Restores state into `net`. Shape or name mismatches throw LoadError naming
/// the tensor path; truncated or malformed files throw ParseError.
void load_checkpoint(const std::filesystem::path& path, Detector& net);

/// Builds a network from the checkpoint's own config (fused if it was saved
/// fused) and loads the state.
std::unique_ptr<Detector> load_detector(const std::filesystem::path& path);

}  // namespace cstyolo
