#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cseg/network.hpp"

namespace cseg {

// Archive layout: "CSGA", u32 version, u32 manifest byte length, manifest
// JSON, then one CSEG tensor record per manifest entry. Offsets are relative
// to the first record.
inline constexpr char kArchiveMagic[4] = {'C', 'S', 'G', 'A'};
inline constexpr std::uint32_t kArchiveVersion = 1;

struct CheckpointEntry {
  std::string path;
  std::string role;
  Shape shape;
  std::uint64_t offset = 0;

  bool operator==(const CheckpointEntry&) const = default;
};

struct Checkpoint {
  std::vector<CheckpointEntry> manifest;
  std::vector<Tensor<float>> tensors;  // parallel to manifest
};

/// Saves every trainable tensor and BN running statistic of `net`.
template <typename T>
void save_checkpoint(const std::string& file, Network<T>& net);

Checkpoint read_checkpoint(const std::string& file);

/// Loads values into `net`. Throws FormatError when the manifest does not
/// list exactly the network's tensors with the same shapes.
template <typename T>
void load_checkpoint(const std::string& file, Network<T>& net);

}  // namespace cseg
