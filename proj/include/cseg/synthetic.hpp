#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cseg/mask.hpp"
#include "cseg/ops.hpp"

namespace cseg {

enum class TaskKind { blobs, rings, mixed };

std::string to_string(TaskKind k);
TaskKind parse_task_kind(const std::string& s);

/// Deterministic toy segmentation task. Class c is rendered at intensity
/// c / (num_classes - 1) before noise.
struct SyntheticTask {
  TaskKind kind = TaskKind::blobs;
  Extents image_size{64, 64};
  std::size_t num_classes = 2;
  std::size_t thin_width = 1;  // ring width in cells, 1 or 2
  double noise_std = 0.0;
  std::uint64_t seed = 0;
  std::size_t num_samples = 32;  // size of the cycled training set
  std::vector<double> spacing;   // mm per cell; empty means 1 on every axis

  bool operator==(const SyntheticTask&) const = default;
};

void validate(const SyntheticTask& task);
std::vector<double> resolved_spacing(const SyntheticTask& task);

struct Sample {
  Tensor<float> image;  // (1, spatial...)
  LabelMask label;      // (spatial...)
};

/// Pure function of (task, index).
Sample generate_sample(const SyntheticTask& task, std::size_t index);

std::vector<Sample> generate_samples(const SyntheticTask& task, std::size_t count);

/// Writes samples 0..count-1 as image_NNNNN.cseg / label_NNNNN.cseg pairs
/// plus manifest.json listing each label's class histogram.
void write_dataset(const std::string& dir, const SyntheticTask& task, std::size_t count);

/// Reads a directory produced by write_dataset.
std::vector<Sample> read_dataset(const std::string& dir);

template <typename T>
struct Batch {
  Tensor<T> images;  // (N, 1, spatial...)
  LabelMask labels;  // (N, spatial...)
};

template <typename T>
Batch<T> make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices);

}  // namespace cseg
