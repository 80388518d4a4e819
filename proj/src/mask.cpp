#include "cseg/mask.hpp"

#include <stdexcept>

#include "cseg/errors.hpp"

namespace cseg {

LabelMask::LabelMask(Shape s, std::vector<std::int32_t> d) : shape(std::move(s)), data(std::move(d)) {
  if (numel(shape) != data.size()) throw ShapeError("label mask data does not match shape " + to_string(shape));
}

template <typename T>
LabelMask argmax_channels(const Tensor<T>& scores) {
  if (scores.rank() < 3) throw ShapeError("argmax_channels: expected (N, C, spatial...)");
  const std::size_t N = scores.dim(0), C = scores.dim(1), P = scores.numel() / (N * C);
  Shape s{N};
  s.insert(s.end(), scores.shape().begin() + 2, scores.shape().end());
  LabelMask out(s);
  const auto d = scores.data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t p = 0; p < P; ++p) {
      std::int32_t best = 0;
      for (std::size_t c = 1; c < C; ++c) {
        if (d[(n * C + c) * P + p] > d[(n * C + static_cast<std::size_t>(best)) * P + p]) {
          best = static_cast<std::int32_t>(c);
        }
      }
      out.data[n * P + p] = best;
    }
  }
  return out;
}

LabelMask mask_sample(const LabelMask& batch, std::size_t n) {
  if (batch.shape.empty() || n >= batch.shape[0]) throw ShapeError("mask_sample: index out of range");
  Shape s(batch.shape.begin() + 1, batch.shape.end());
  const std::size_t P = numel(s);
  return LabelMask(s, std::vector<std::int32_t>(batch.data.begin() + static_cast<long>(n * P),
                                                batch.data.begin() + static_cast<long>((n + 1) * P)));
}

LabelMask stack_masks(const std::vector<LabelMask>& samples) {
  if (samples.empty()) throw ShapeError("stack_masks: no samples");
  Shape s{samples.size()};
  s.insert(s.end(), samples.front().shape.begin(), samples.front().shape.end());
  LabelMask out;
  out.shape = s;
  out.data.reserve(numel(s));
  for (const auto& m : samples) {
    if (m.shape != samples.front().shape) throw ShapeError("stack_masks: shape mismatch");
    out.data.insert(out.data.end(), m.data.begin(), m.data.end());
  }
  return out;
}

std::vector<std::size_t> class_histogram(const LabelMask& mask, std::size_t num_classes) {
  std::vector<std::size_t> h(num_classes, 0);
  for (auto v : mask.data) {
    if (v < 0 || static_cast<std::size_t>(v) >= num_classes) {
      throw std::out_of_range("label " + std::to_string(v) + " outside [0, " + std::to_string(num_classes) + ")");
    }
    ++h[static_cast<std::size_t>(v)];
  }
  return h;
}

template LabelMask argmax_channels<float>(const Tensor<float>&);
template LabelMask argmax_channels<double>(const Tensor<double>&);

}  // namespace cseg
