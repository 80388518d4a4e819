#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cseg/ops.hpp"

namespace cseg {

/// A named tensor owned by a layer. Trainable entries are updated by the
/// optimizer; the rest (batch-norm running statistics) are state buffers.
template <typename T>
struct ParamRef {
  std::string path;
  std::string role;  // weight | bias | gamma | beta | running_mean | running_var
  Tensor<T> tensor;
  bool trainable = true;
  double fan_in = 0.0;  // weights only: input taps per output element
};

/// Channel count plus spatial extents of a single feature map.
struct FeatureShape {
  std::size_t channels = 0;
  Extents spatial;
  bool operator==(const FeatureShape&) const = default;
};

/// Geometry of the first (de)convolution in a module, reported in graph
/// summaries.
struct LeadingConv {
  bool transposed = false;
  std::size_t kernel = 0;
  std::size_t stride = 0;
  std::size_t padding = 0;
};

template <typename T>
class ConvUnit;

template <typename T>
class Module {
 public:
  virtual ~Module() = default;
  virtual Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, Mode mode) = 0;
  /// Static shape inference; throws ShapeError on incompatible input.
  virtual FeatureShape output_shape(const FeatureShape& in) const = 0;
  virtual void collect(std::vector<ParamRef<T>>& out) = 0;
  virtual std::optional<LeadingConv> leading_conv() const = 0;
  /// Calls fn on every conv unit inside the module.
  virtual void visit_units(const std::function<void(ConvUnit<T>&)>& fn) = 0;

  std::size_t parameter_count();
};

/// (De)convolution, optionally followed by batch norm and ReLU.
template <typename T>
class ConvUnit final : public Module<T> {
 public:
  struct Options {
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t padding = 1;
    bool transposed = false;
    bool batch_norm = true;
    bool relu = true;
  };

  ConvUnit(std::string path, std::size_t in_channels, std::size_t out_channels, std::size_t spatial_dims,
           Options options);

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, Mode mode) override;
  FeatureShape output_shape(const FeatureShape& in) const override;
  void collect(std::vector<ParamRef<T>>& out) override;
  std::optional<LeadingConv> leading_conv() const override;
  void visit_units(const std::function<void(ConvUnit<T>&)>& fn) override;

  ConvParams<T>& conv() { return conv_; }
  const ConvParams<T>& conv() const { return conv_; }
  BatchNormState<T>* bn() { return bn_ ? &*bn_ : nullptr; }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  Options options_;
  ConvParams<T> conv_;
  std::optional<BatchNormState<T>> bn_;
};

/// Chain of conv units, optionally preceded by max pooling.
template <typename T>
class Sequential final : public Module<T> {
 public:
  Sequential(std::vector<std::unique_ptr<ConvUnit<T>>> units, std::optional<std::size_t> pool_window = std::nullopt);

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, Mode mode) override;
  FeatureShape output_shape(const FeatureShape& in) const override;
  void collect(std::vector<ParamRef<T>>& out) override;
  std::optional<LeadingConv> leading_conv() const override;
  void visit_units(const std::function<void(ConvUnit<T>&)>& fn) override;

  std::vector<std::unique_ptr<ConvUnit<T>>>& units() { return units_; }

 private:
  std::vector<std::unique_ptr<ConvUnit<T>>> units_;
  std::optional<std::size_t> pool_;
};

/// h = entry(x); out = relu(h + body(h)), the body's last unit without ReLU.
template <typename T>
class ResidualBlock final : public Module<T> {
 public:
  ResidualBlock(std::unique_ptr<ConvUnit<T>> entry, std::vector<std::unique_ptr<ConvUnit<T>>> body);

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, Mode mode) override;
  FeatureShape output_shape(const FeatureShape& in) const override;
  void collect(std::vector<ParamRef<T>>& out) override;
  std::optional<LeadingConv> leading_conv() const override;
  void visit_units(const std::function<void(ConvUnit<T>&)>& fn) override;

  ConvUnit<T>& entry() { return *entry_; }
  std::vector<std::unique_ptr<ConvUnit<T>>>& body() { return body_; }

 private:
  std::unique_ptr<ConvUnit<T>> entry_;
  std::vector<std::unique_ptr<ConvUnit<T>>> body_;
};

/// h = entry(x); each layer appends its output to the running concatenation.
template <typename T>
class DenseBlock final : public Module<T> {
 public:
  DenseBlock(std::unique_ptr<ConvUnit<T>> entry, std::vector<std::unique_ptr<ConvUnit<T>>> layers);

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, Mode mode) override;
  FeatureShape output_shape(const FeatureShape& in) const override;
  void collect(std::vector<ParamRef<T>>& out) override;
  std::optional<LeadingConv> leading_conv() const override;
  void visit_units(const std::function<void(ConvUnit<T>&)>& fn) override;

 private:
  std::unique_ptr<ConvUnit<T>> entry_;
  std::vector<std::unique_ptr<ConvUnit<T>>> layers_;
};

extern template class Module<float>;
extern template class Module<double>;
extern template class ConvUnit<float>;
extern template class ConvUnit<double>;
extern template class Sequential<float>;
extern template class Sequential<double>;
extern template class ResidualBlock<float>;
extern template class ResidualBlock<double>;
extern template class DenseBlock<float>;
extern template class DenseBlock<double>;

}  // namespace cseg
