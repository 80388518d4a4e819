#include "cseg/layers.hpp"

#include "cseg/errors.hpp"

namespace cseg {

template <typename T>
std::size_t Module<T>::parameter_count() {
  std::vector<ParamRef<T>> params;
  collect(params);
  std::size_t n = 0;
  for (const auto& p : params)
    if (p.trainable) n += p.tensor.numel();
  return n;
}

template <typename T>
ConvUnit<T>::ConvUnit(std::string path, std::size_t in_channels, std::size_t out_channels, std::size_t spatial_dims,
                      Options options)
    : path_(std::move(path)),
      options_(options),
      conv_(ConvParams<T>::make(in_channels, out_channels, spatial_dims, options.kernel, options.stride,
                                options.padding, options.transposed)) {
  if (options.batch_norm) bn_ = BatchNormState<T>::make(out_channels);
}

template <typename T>
Tensor<T> ConvUnit<T>::forward(Tape<T>* tape, const Tensor<T>& x, Mode mode) {
  ScopeGuard<T> scope(tape, path_);
  auto y = options_.transposed ? deconv_forward(tape, x, conv_) : conv_forward(tape, x, conv_);
  if (bn_) {
    bn_->mode = mode;
    y = batch_norm(tape, y, *bn_);
  }
  if (options_.relu) y = relu(tape, y);
  return y;
}

template <typename T>
FeatureShape ConvUnit<T>::output_shape(const FeatureShape& in) const {
  if (in.channels != conv_.in_channels) {
    throw ShapeError(path_ + ": expects " + std::to_string(conv_.in_channels) + " input channels, got " +
                     std::to_string(in.channels));
  }
  auto out = options_.transposed ? deconv_output_extents(in.spatial, conv_.kernel, conv_.stride, conv_.padding)
                                 : conv_output_extents(in.spatial, conv_.kernel, conv_.stride, conv_.padding);
  return {conv_.out_channels, std::move(out)};
}

template <typename T>
void ConvUnit<T>::collect(std::vector<ParamRef<T>>& out) {
  const std::string prefix = path_ + (options_.transposed ? ".deconv" : ".conv");
  double fan_in = static_cast<double>(conv_.in_channels * conv_.kernel_volume());
  if (options_.transposed) {
    // Each output element receives in_channels * prod(kernel / stride) taps.
    for (auto s : conv_.stride) fan_in /= static_cast<double>(s);
  }
  out.push_back({prefix, "weight", conv_.weights, true, fan_in});
  if (conv_.bias.defined()) out.push_back({prefix, "bias", conv_.bias, true, 0.0});
  if (bn_) {
    const std::string bp = path_ + ".bn";
    out.push_back({bp, "gamma", bn_->gamma, true, 0.0});
    out.push_back({bp, "beta", bn_->beta, true, 0.0});
    out.push_back({bp, "running_mean", bn_->running_mean, false, 0.0});
    out.push_back({bp, "running_var", bn_->running_var, false, 0.0});
  }
}

template <typename T>
std::optional<LeadingConv> ConvUnit<T>::leading_conv() const {
  return LeadingConv{options_.transposed, options_.kernel, options_.stride, options_.padding};
}

template <typename T>
Sequential<T>::Sequential(std::vector<std::unique_ptr<ConvUnit<T>>> units, std::optional<std::size_t> pool_window)
    : units_(std::move(units)), pool_(pool_window) {}

template <typename T>
Tensor<T> Sequential<T>::forward(Tape<T>* tape, const Tensor<T>& x, Mode mode) {
  Tensor<T> h = x;
  if (pool_) {
    const Extents w(x.rank() - 2, *pool_);
    h = maxpool(tape, h, w, w);
  }
  for (auto& u : units_) h = u->forward(tape, h, mode);
  return h;
}

template <typename T>
FeatureShape Sequential<T>::output_shape(const FeatureShape& in) const {
  FeatureShape s = in;
  if (pool_) {
    const Extents w(s.spatial.size(), *pool_);
    for (std::size_t d = 0; d < s.spatial.size(); ++d) {
      if (s.spatial[d] < *pool_) throw ShapeError("maxpool window larger than input extent");
    }
    s.spatial = conv_output_extents(s.spatial, w, w, Extents(w.size(), 0));
  }
  for (const auto& u : units_) s = u->output_shape(s);
  return s;
}

template <typename T>
void Sequential<T>::collect(std::vector<ParamRef<T>>& out) {
  for (auto& u : units_) u->collect(out);
}

template <typename T>
std::optional<LeadingConv> Sequential<T>::leading_conv() const {
  if (units_.empty()) return std::nullopt;
  return units_.front()->leading_conv();
}

template <typename T>
ResidualBlock<T>::ResidualBlock(std::unique_ptr<ConvUnit<T>> entry, std::vector<std::unique_ptr<ConvUnit<T>>> body)
    : entry_(std::move(entry)), body_(std::move(body)) {}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(Tape<T>* tape, const Tensor<T>& x, Mode mode) {
  auto h = entry_->forward(tape, x, mode);
  Tensor<T> r = h;
  for (auto& u : body_) r = u->forward(tape, r, mode);
  return relu(tape, add_elementwise(tape, h, r));
}

template <typename T>
FeatureShape ResidualBlock<T>::output_shape(const FeatureShape& in) const {
  const auto h = entry_->output_shape(in);
  auto r = h;
  for (const auto& u : body_) r = u->output_shape(r);
  if (!(r == h)) throw ShapeError("residual body changes the feature shape");
  return h;
}

template <typename T>
void ResidualBlock<T>::collect(std::vector<ParamRef<T>>& out) {
  entry_->collect(out);
  for (auto& u : body_) u->collect(out);
}

template <typename T>
std::optional<LeadingConv> ResidualBlock<T>::leading_conv() const {
  return entry_->leading_conv();
}

template <typename T>
DenseBlock<T>::DenseBlock(std::unique_ptr<ConvUnit<T>> entry, std::vector<std::unique_ptr<ConvUnit<T>>> layers)
    : entry_(std::move(entry)), layers_(std::move(layers)) {}

template <typename T>
Tensor<T> DenseBlock<T>::forward(Tape<T>* tape, const Tensor<T>& x, Mode mode) {
  auto h = entry_->forward(tape, x, mode);
  for (auto& layer : layers_) {
    auto y = layer->forward(tape, h, mode);
    h = concat_channels(tape, std::vector<Tensor<T>>{h, y});
  }
  return h;
}

template <typename T>
FeatureShape DenseBlock<T>::output_shape(const FeatureShape& in) const {
  auto h = entry_->output_shape(in);
  for (const auto& layer : layers_) {
    const auto y = layer->output_shape(h);
    h.channels += y.channels;
  }
  return h;
}

template <typename T>
void DenseBlock<T>::collect(std::vector<ParamRef<T>>& out) {
  entry_->collect(out);
  for (auto& layer : layers_) layer->collect(out);
}

template <typename T>
std::optional<LeadingConv> DenseBlock<T>::leading_conv() const {
  return entry_->leading_conv();
}

template <typename T>
void ConvUnit<T>::visit_units(const std::function<void(ConvUnit<T>&)>& fn) {
  fn(*this);
}

template <typename T>
void Sequential<T>::visit_units(const std::function<void(ConvUnit<T>&)>& fn) {
  for (auto& u : units_) fn(*u);
}

template <typename T>
void ResidualBlock<T>::visit_units(const std::function<void(ConvUnit<T>&)>& fn) {
  fn(*entry_);
  for (auto& u : body_) fn(*u);
}

template <typename T>
void DenseBlock<T>::visit_units(const std::function<void(ConvUnit<T>&)>& fn) {
  fn(*entry_);
  for (auto& u : layers_) fn(*u);
}

template class Module<float>;
template class Module<double>;
template class ConvUnit<float>;
template class ConvUnit<double>;
template class Sequential<float>;
template class Sequential<double>;
template class ResidualBlock<float>;
template class ResidualBlock<double>;
template class DenseBlock<float>;
template class DenseBlock<double>;

}  // namespace cseg
