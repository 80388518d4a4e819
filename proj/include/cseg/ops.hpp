#pragma once

#include <cstddef>
#include <vector>

#include "cseg/autograd.hpp"
#include "cseg/tensor.hpp"

namespace cseg {

// Layer primitives over (N, C, spatial...) tensors with 2 or 3 spatial dims.
// Every op takes a nullable tape: with a tape the op is recorded and
// differentiable, without one it is a plain forward evaluation.

enum class Mode { train, infer };

using Extents = std::vector<std::size_t>;

/// Convolution or transposed-convolution parameters.
///
/// Weight layout is shared between the two so that a deconvolution is the
/// exact adjoint of the convolution using the same tensor:
///   conv:   (out_channels, in_channels, kernel...)
///   deconv: (in_channels, out_channels, kernel...)
/// An undefined bias means no bias term.
template <typename T>
struct ConvParams {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  Extents kernel;
  Extents stride;
  Extents padding;
  Tensor<T> weights;
  Tensor<T> bias;

  /// Zero-initialized parameters with uniform per-dim kernel/stride/padding.
  static ConvParams make(std::size_t in_channels, std::size_t out_channels, std::size_t spatial_dims,
                         std::size_t kernel, std::size_t stride, std::size_t padding, bool transposed,
                         bool with_bias = true);

  std::size_t kernel_volume() const;
};

/// floor((in + 2p - k)/s) + 1 per dim; ShapeError when any result is < 1.
Extents conv_output_extents(const Extents& in, const Extents& kernel, const Extents& stride, const Extents& padding);
/// (in - 1)s - 2p + k per dim; ShapeError when any result is < 1.
Extents deconv_output_extents(const Extents& in, const Extents& kernel, const Extents& stride,
                              const Extents& padding);

/// Spatial extents of an (N, C, spatial...) shape.
Extents spatial_extents(const Shape& shape);

template <typename T>
struct BatchNormState {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
  double epsilon = 1e-5;
  Mode mode = Mode::train;

  static BatchNormState make(std::size_t channels, double momentum = 0.9, double epsilon = 1e-5);
};

template <typename T>
Tensor<T> conv_forward(Tape<T>* tape, const Tensor<T>& x, const ConvParams<T>& p);

/// Transposed convolution, defined as the adjoint of conv_forward.
template <typename T>
Tensor<T> deconv_forward(Tape<T>* tape, const Tensor<T>& x, const ConvParams<T>& p);

/// Window maximum; gradient goes to the first maximal element in scan order.
template <typename T>
Tensor<T> maxpool(Tape<T>* tape, const Tensor<T>& x, const Extents& window, const Extents& stride);

/// Per-channel normalization. Train mode uses batch statistics and updates
/// the running estimates (unbiased variance); infer mode uses the running
/// estimates.
template <typename T>
Tensor<T> batch_norm(Tape<T>* tape, const Tensor<T>& x, BatchNormState<T>& s);

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x);

template <typename T>
Tensor<T> concat_channels(Tape<T>* tape, const std::vector<Tensor<T>>& xs);

template <typename T>
Tensor<T> add_elementwise(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul_elementwise(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& x, double factor);

/// Elementwise arithmetic mean of same-shape tensors.
template <typename T>
Tensor<T> mean_elementwise(Tape<T>* tape, const std::vector<Tensor<T>>& xs);

/// Per-position softmax over the channel dimension.
template <typename T>
Tensor<T> softmax_channels(Tape<T>* tape, const Tensor<T>& x);

/// Sum of all entries, shape [1].
template <typename T>
Tensor<T> sum_all(Tape<T>* tape, const Tensor<T>& x);

/// Copies channels [begin, end) (not differentiable).
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t end);

}  // namespace cseg
