#pragma once

#include <string>

#include "sillnet/model.hpp"

namespace sillnet {

// Model checkpoints are plain uncompressed tar archives: a config.json entry
// describing the architecture, then one raw little-endian float32 blob per
// parameter and buffer, named by its dotted path (e.g. "encoder.c1.weight").
// All archive metadata (mtime, uid, mode) is fixed so that saving the same
// model twice yields byte-identical files.

void save_checkpoint(const SillModel& model, const std::string& path);

SillModel load_checkpoint(const std::string& path);

}  // namespace sillnet
