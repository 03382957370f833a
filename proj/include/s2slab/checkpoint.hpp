#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "s2slab/model.hpp"
#include "s2slab/tensor.hpp"

namespace s2slab {

// A checkpoint is a pair of files sharing a stem:
//   <stem>.ckpt  — text manifest: config echo, then one line per tensor
//                  ("tensor <name> <rank> <dims...> <offset>"), a payload
//                  checksum, and the payload element count
//   <stem>.bin   — all tensor values concatenated as little-endian float64
//                  in manifest order
// Tensors are restored by name, so any structurally compatible parameter set
// can be loaded regardless of ordering.

struct CheckpointEntry {
  std::string name;
  Shape shape;
  size_t offset = 0;  // element offset into the payload
};

struct Checkpoint {
  std::map<std::string, std::string> config;  // flat key=value echo
  std::vector<CheckpointEntry> entries;
  std::vector<double> payload;

  bool has(const std::string& name) const;
  // Copies the named payload slice into `dst`; shape must match exactly.
  void read_into(const std::string& name, Tensor& dst) const;
  const CheckpointEntry& entry(const std::string& name) const;
};

// Serializes tensors in the given order plus a flat config echo.
void save_checkpoint(const std::string& stem,
                     const std::map<std::string, std::string>& config,
                     const std::vector<Tensor>& tensors);

Checkpoint load_checkpoint(const std::string& stem);

// Restores every tensor in `tensors` from the checkpoint by name; throws if a
// tensor is missing or its shape differs.
void restore_tensors(const Checkpoint& ckpt, std::vector<Tensor> tensors);

// FNV-1a over the raw little-endian payload bytes; stored in the manifest and
// verified on load.
uint64_t payload_checksum(const std::vector<double>& payload);

}  // namespace s2slab
