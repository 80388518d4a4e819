#pragma once

#include <cstdint>
#include <vector>

#include "cseg/tensor.hpp"

namespace cseg {

/// Integer class labels, row-major. Batched masks are (N, spatial...);
/// single-sample masks are (spatial...).
struct LabelMask {
  Shape shape;
  std::vector<std::int32_t> data;

  LabelMask() = default;
  explicit LabelMask(Shape s) : shape(std::move(s)), data(numel(shape), 0) {}
  LabelMask(Shape s, std::vector<std::int32_t> d);

  std::size_t size() const { return data.size(); }
  bool operator==(const LabelMask&) const = default;
};

/// Per-position argmax over channels of an (N, C, spatial...) tensor; the
/// first maximal channel wins ties.
template <typename T>
LabelMask argmax_channels(const Tensor<T>& scores);

/// Sample n of a batched mask, as a single-sample mask.
LabelMask mask_sample(const LabelMask& batch, std::size_t n);

/// Stacks single-sample masks of equal shape into (N, spatial...).
LabelMask stack_masks(const std::vector<LabelMask>& samples);

/// Number of positions per class value in [0, num_classes).
std::vector<std::size_t> class_histogram(const LabelMask& mask, std::size_t num_classes);

}  // namespace cseg
