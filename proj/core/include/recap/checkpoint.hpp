#pragma once

#include <string>
#include <utility>
#include <vector>

#include "recap/tensor.hpp"

namespace recap {

// Model weights are exchanged as an ordered list of (name, tensor) slots.
using NamedTensors = std::vector<std::pair<std::string, ag::Tensor*>>;

// Binary weight file: magic "RCAP", u32 version = 1, u32 tensor count, then
// per tensor: u32 name length, name bytes, u32 rank, u32 dims, f64 payload.
// All integers and doubles are little-endian.
void save_checkpoint(const std::string& path, const NamedTensors& tensors);

// Loads into the given slots. Throws CheckpointError on bad magic or version,
// truncation, unknown or missing names, or shape mismatches.
void load_checkpoint(const std::string& path, const NamedTensors& tensors);

}  // namespace recap
