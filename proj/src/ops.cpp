#include "cseg/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "cseg/errors.hpp"
#include "cseg/parallel.hpp"

namespace cseg {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Spatial geometry padded to three dims (2D runs as depth 1).
struct Geometry {
  std::size_t channels = 0;
  std::size_t in[3] = {1, 1, 1};
  std::size_t kernel[3] = {1, 1, 1};
  std::size_t stride[3] = {1, 1, 1};
  std::size_t pad[3] = {0, 0, 0};
  std::size_t out[3] = {1, 1, 1};

  std::size_t in_size() const { return in[0] * in[1] * in[2]; }
  std::size_t out_size() const { return out[0] * out[1] * out[2]; }
  std::size_t kernel_volume() const { return kernel[0] * kernel[1] * kernel[2]; }
  std::size_t rows() const { return channels * kernel_volume(); }
};

Geometry make_geometry(std::size_t channels, const Extents& in, const Extents& kernel, const Extents& stride,
                       const Extents& pad, const Extents& out) {
  Geometry g;
  g.channels = channels;
  const std::size_t off = 3 - in.size();
  for (std::size_t d = 0; d < in.size(); ++d) {
    g.in[off + d] = in[d];
    g.kernel[off + d] = kernel[d];
    g.stride[off + d] = stride[d];
    g.pad[off + d] = pad[d];
    g.out[off + d] = out[d];
  }
  return g;
}

// col[(c, kd, kh, kw), (od, oh, ow)] = x[c, od*s - p + kd, ...] or 0 outside.
template <typename T>
void im2col(const Geometry& g, const T* x, T* col) {
  const std::size_t P = g.out_size();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* xc = x + c * g.in_size();
    for (std::size_t kd = 0; kd < g.kernel[0]; ++kd) {
      for (std::size_t kh = 0; kh < g.kernel[1]; ++kh) {
        for (std::size_t kw = 0; kw < g.kernel[2]; ++kw, ++row) {
          T* dst = col + row * P;
          for (std::size_t od = 0; od < g.out[0]; ++od) {
            const long id = static_cast<long>(od * g.stride[0] + kd) - static_cast<long>(g.pad[0]);
            const bool d_ok = id >= 0 && id < static_cast<long>(g.in[0]);
            for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
              const long ih = static_cast<long>(oh * g.stride[1] + kh) - static_cast<long>(g.pad[1]);
              T* drow = dst + (od * g.out[1] + oh) * g.out[2];
              if (!d_ok || ih < 0 || ih >= static_cast<long>(g.in[1])) {
                std::fill(drow, drow + g.out[2], T{0});
                continue;
              }
              const T* src = xc + (static_cast<std::size_t>(id) * g.in[1] + static_cast<std::size_t>(ih)) * g.in[2];
              for (std::size_t ow = 0; ow < g.out[2]; ++ow) {
                const long iw = static_cast<long>(ow * g.stride[2] + kw) - static_cast<long>(g.pad[2]);
                drow[ow] = (iw >= 0 && iw < static_cast<long>(g.in[2])) ? src[iw] : T{0};
              }
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into x (x must be zeroed).
template <typename T>
void col2im(const Geometry& g, const T* col, T* x) {
  const std::size_t P = g.out_size();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* xc = x + c * g.in_size();
    for (std::size_t kd = 0; kd < g.kernel[0]; ++kd) {
      for (std::size_t kh = 0; kh < g.kernel[1]; ++kh) {
        for (std::size_t kw = 0; kw < g.kernel[2]; ++kw, ++row) {
          const T* src = col + row * P;
          for (std::size_t od = 0; od < g.out[0]; ++od) {
            const long id = static_cast<long>(od * g.stride[0] + kd) - static_cast<long>(g.pad[0]);
            if (id < 0 || id >= static_cast<long>(g.in[0])) continue;
            for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
              const long ih = static_cast<long>(oh * g.stride[1] + kh) - static_cast<long>(g.pad[1]);
              if (ih < 0 || ih >= static_cast<long>(g.in[1])) continue;
              const T* srow = src + (od * g.out[1] + oh) * g.out[2];
              T* dst = xc + (static_cast<std::size_t>(id) * g.in[1] + static_cast<std::size_t>(ih)) * g.in[2];
              for (std::size_t ow = 0; ow < g.out[2]; ++ow) {
                const long iw = static_cast<long>(ow * g.stride[2] + kw) - static_cast<long>(g.pad[2]);
                if (iw >= 0 && iw < static_cast<long>(g.in[2])) dst[iw] += srow[ow];
              }
            }
          }
        }
      }
    }
  }
}

void require_spatial(const Shape& s, const char* op) {
  if (s.size() != 4 && s.size() != 5) {
    throw ShapeError(std::string(op) + ": expected (N, C, spatial...) with 2 or 3 spatial dims, got " + to_string(s));
  }
}

template <typename T>
void check_conv_params(const Tensor<T>& x, const ConvParams<T>& p, bool transposed, const char* op) {
  require_spatial(x.shape(), op);
  const std::size_t D = x.rank() - 2;
  if (x.dim(1) != p.in_channels) {
    throw ShapeError(std::string(op) + ": input has " + std::to_string(x.dim(1)) + " channels, layer expects " +
                     std::to_string(p.in_channels));
  }
  if (p.kernel.size() != D || p.stride.size() != D || p.padding.size() != D) {
    throw ShapeError(std::string(op) + ": kernel/stride/padding rank does not match input spatial rank");
  }
  Shape expect = transposed ? Shape{p.in_channels, p.out_channels} : Shape{p.out_channels, p.in_channels};
  expect.insert(expect.end(), p.kernel.begin(), p.kernel.end());
  if (!p.weights.defined() || p.weights.shape() != expect) {
    throw ShapeError(std::string(op) + ": weights shape must be " + to_string(expect));
  }
  if (p.bias.defined() && p.bias.shape() != Shape{p.out_channels}) {
    throw ShapeError(std::string(op) + ": bias shape must be (" + std::to_string(p.out_channels) + ")");
  }
}

template <typename T>
void add_bias(T* y, const T* b, std::size_t channels, std::size_t P) {
  for (std::size_t c = 0; c < channels; ++c) {
    const T v = b[c];
    for (std::size_t i = 0; i < P; ++i) y[c * P + i] += v;
  }
}

template <typename T>
void accumulate_bias_grad(std::span<T> gb, const T* gy, std::size_t N, std::size_t C, std::size_t P) {
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const T* row = gy + (n * C + c) * P;
      T s{0};
      for (std::size_t i = 0; i < P; ++i) s += row[i];
      gb[c] += s;
    }
  }
}

template <typename T>
Shape with_spatial(std::size_t n, std::size_t c, const Extents& spatial) {
  Shape s{n, c};
  s.insert(s.end(), spatial.begin(), spatial.end());
  return s;
}

}  // namespace

Extents conv_output_extents(const Extents& in, const Extents& kernel, const Extents& stride, const Extents& padding) {
  Extents out(in.size());
  for (std::size_t d = 0; d < in.size(); ++d) {
    const long span = static_cast<long>(in[d] + 2 * padding[d]) - static_cast<long>(kernel[d]);
    if (stride[d] == 0 || span < 0) {
      throw ShapeError("convolution output extent < 1 in dim " + std::to_string(d) + " (in " + std::to_string(in[d]) +
                       ", kernel " + std::to_string(kernel[d]) + ", pad " + std::to_string(padding[d]) + ")");
    }
    out[d] = static_cast<std::size_t>(span) / stride[d] + 1;
  }
  return out;
}

Extents deconv_output_extents(const Extents& in, const Extents& kernel, const Extents& stride,
                              const Extents& padding) {
  Extents out(in.size());
  for (std::size_t d = 0; d < in.size(); ++d) {
    const long e = static_cast<long>((in[d] - 1) * stride[d] + kernel[d]) - 2 * static_cast<long>(padding[d]);
    if (in[d] == 0 || e < 1) {
      throw ShapeError("transposed convolution output extent < 1 in dim " + std::to_string(d));
    }
    out[d] = static_cast<std::size_t>(e);
  }
  return out;
}

Extents spatial_extents(const Shape& shape) {
  if (shape.size() < 3) throw ShapeError("shape " + to_string(shape) + " has no spatial dims");
  return Extents(shape.begin() + 2, shape.end());
}

template <typename T>
ConvParams<T> ConvParams<T>::make(std::size_t in_channels, std::size_t out_channels, std::size_t spatial_dims,
                                  std::size_t kernel, std::size_t stride, std::size_t padding, bool transposed,
                                  bool with_bias) {
  if (in_channels == 0 || out_channels == 0) throw ShapeError("convolution channel counts must be >= 1");
  ConvParams p;
  p.in_channels = in_channels;
  p.out_channels = out_channels;
  p.kernel.assign(spatial_dims, kernel);
  p.stride.assign(spatial_dims, stride);
  p.padding.assign(spatial_dims, padding);
  Shape ws = transposed ? Shape{in_channels, out_channels} : Shape{out_channels, in_channels};
  ws.insert(ws.end(), p.kernel.begin(), p.kernel.end());
  p.weights = Tensor<T>(ws);
  p.weights.set_requires_grad(true);
  if (with_bias) {
    p.bias = Tensor<T>(Shape{out_channels});
    p.bias.set_requires_grad(true);
  }
  return p;
}

template <typename T>
std::size_t ConvParams<T>::kernel_volume() const {
  std::size_t v = 1;
  for (auto k : kernel) v *= k;
  return v;
}

template <typename T>
BatchNormState<T> BatchNormState<T>::make(std::size_t channels, double momentum, double epsilon) {
  if (!(epsilon > 0.0)) throw ConfigError("batch norm epsilon must be > 0");
  if (!(momentum > 0.0 && momentum < 1.0)) throw ConfigError("batch norm momentum must lie in (0, 1)");
  BatchNormState s;
  s.gamma = tensor_create<T>({channels}, fill::Constant{1.0});
  s.beta = Tensor<T>(Shape{channels});
  s.gamma.set_requires_grad(true);
  s.beta.set_requires_grad(true);
  s.running_mean = Tensor<T>(Shape{channels});
  s.running_var = tensor_create<T>({channels}, fill::Constant{1.0});
  s.momentum = momentum;
  s.epsilon = epsilon;
  return s;
}

template <typename T>
Tensor<T> conv_forward(Tape<T>* tape, const Tensor<T>& x, const ConvParams<T>& p) {
  check_conv_params(x, p, false, "conv_forward");
  const auto in = spatial_extents(x.shape());
  const auto out_ext = conv_output_extents(in, p.kernel, p.stride, p.padding);
  const Geometry g = make_geometry(p.in_channels, in, p.kernel, p.stride, p.padding, out_ext);
  const std::size_t N = x.dim(0), Cout = p.out_channels, K = g.rows(), P = g.out_size(), Pin = g.in_size();

  Tensor<T> y(with_spatial<T>(N, Cout, out_ext));
  {
    const T* xd = x.data().data();
    const T* wd = p.weights.data().data();
    T* yd = y.data().data();
    const T* bd = p.bias.defined() ? p.bias.data().data() : nullptr;
    parallel_for(N, [&](std::size_t n) {
      std::vector<T> col(K * P);
      im2col(g, xd + n * p.in_channels * Pin, col.data());
      Eigen::Map<const RowMat<T>> W(wd, Cout, K);
      Eigen::Map<const RowMat<T>> C(col.data(), K, P);
      Eigen::Map<RowMat<T>> Y(yd + n * Cout * P, Cout, P);
      Y.noalias() = W * C;
      if (bd) add_bias(yd + n * Cout * P, bd, Cout, P);
    });
  }
  if (tape) {
    std::vector<Tensor<T>> inputs{x, p.weights};
    if (p.bias.defined()) inputs.push_back(p.bias);
    auto xs = x;
    auto w = p.weights;
    auto b = p.bias;
    tape->record("conv", std::move(inputs), y, [g, xs, w, b, y, N, Cout, K, P, Pin]() mutable {
      const T* gy = y.grad().data();
      const std::size_t Cin = g.channels;
      const bool need_w = w.requires_grad();
      const bool need_x = xs.requires_grad();
      std::vector<T> dw_parts(need_w ? N * Cout * K : 0);
      T* gx = need_x ? xs.grad_mut().data() : nullptr;
      parallel_for(N, [&](std::size_t n) {
        Eigen::Map<const RowMat<T>> GY(gy + n * Cout * P, Cout, P);
        Eigen::Map<const RowMat<T>> W(w.data().data(), Cout, K);
        std::vector<T> col(K * P);
        if (need_w) {
          im2col(g, xs.data().data() + n * Cin * Pin, col.data());
          Eigen::Map<const RowMat<T>> C(col.data(), K, P);
          Eigen::Map<RowMat<T>> DW(dw_parts.data() + n * Cout * K, Cout, K);
          DW.noalias() = GY * C.transpose();
        }
        if (need_x) {
          Eigen::Map<RowMat<T>> C(col.data(), K, P);
          C.noalias() = W.transpose() * GY;
          std::vector<T> dx(Cin * Pin, T{0});
          col2im(g, col.data(), dx.data());
          T* dst = gx + n * Cin * Pin;
          for (std::size_t i = 0; i < dx.size(); ++i) dst[i] += dx[i];
        }
      });
      if (need_w) {
        auto gw = w.grad_mut();
        for (std::size_t n = 0; n < N; ++n) {
          const T* part = dw_parts.data() + n * Cout * K;
          for (std::size_t i = 0; i < Cout * K; ++i) gw[i] += part[i];
        }
      }
      if (b.defined() && b.requires_grad()) accumulate_bias_grad(b.grad_mut(), gy, N, Cout, P);
    });
  }
  return y;
}

template <typename T>
Tensor<T> deconv_forward(Tape<T>* tape, const Tensor<T>& x, const ConvParams<T>& p) {
  check_conv_params(x, p, true, "deconv_forward");
  const auto in = spatial_extents(x.shape());
  const auto out_ext = deconv_output_extents(in, p.kernel, p.stride, p.padding);
  // Geometry of the adjoint convolution: it reads the deconv output and
  // produces the deconv input extents.
  const Geometry g = make_geometry(p.out_channels, out_ext, p.kernel, p.stride, p.padding, in);
  if (conv_output_extents(out_ext, p.kernel, p.stride, p.padding) != in) {
    throw ShapeError("deconv_forward: geometry is not invertible for input " + to_string(x.shape()));
  }
  const std::size_t N = x.dim(0), Cin = p.in_channels, Cout = p.out_channels, K = g.rows();
  const std::size_t Pin = g.out_size(), Pout = g.in_size();

  Tensor<T> y(with_spatial<T>(N, Cout, out_ext));
  {
    const T* xd = x.data().data();
    const T* wd = p.weights.data().data();
    T* yd = y.data().data();
    const T* bd = p.bias.defined() ? p.bias.data().data() : nullptr;
    parallel_for(N, [&](std::size_t n) {
      std::vector<T> col(K * Pin);
      Eigen::Map<const RowMat<T>> W(wd, Cin, K);
      Eigen::Map<const RowMat<T>> X(xd + n * Cin * Pin, Cin, Pin);
      Eigen::Map<RowMat<T>> C(col.data(), K, Pin);
      C.noalias() = W.transpose() * X;
      col2im(g, col.data(), yd + n * Cout * Pout);
      if (bd) add_bias(yd + n * Cout * Pout, bd, Cout, Pout);
    });
  }
  if (tape) {
    std::vector<Tensor<T>> inputs{x, p.weights};
    if (p.bias.defined()) inputs.push_back(p.bias);
    auto xs = x;
    auto w = p.weights;
    auto b = p.bias;
    tape->record("deconv", std::move(inputs), y, [g, xs, w, b, y, N, Cin, Cout, K, Pin, Pout]() mutable {
      const T* gy = y.grad().data();
      const bool need_w = w.requires_grad();
      const bool need_x = xs.requires_grad();
      std::vector<T> dw_parts(need_w ? N * Cin * K : 0);
      T* gx = need_x ? xs.grad_mut().data() : nullptr;
      parallel_for(N, [&](std::size_t n) {
        std::vector<T> col(K * Pin);
        im2col(g, gy + n * Cout * Pout, col.data());
        Eigen::Map<const RowMat<T>> C(col.data(), K, Pin);
        if (need_w) {
          Eigen::Map<const RowMat<T>> X(xs.data().data() + n * Cin * Pin, Cin, Pin);
          Eigen::Map<RowMat<T>> DW(dw_parts.data() + n * Cin * K, Cin, K);
          DW.noalias() = X * C.transpose();
        }
        if (need_x) {
          Eigen::Map<const RowMat<T>> W(w.data().data(), Cin, K);
          Eigen::Map<RowMat<T>> GX(gx + n * Cin * Pin, Cin, Pin);
          GX.noalias() += W * C;
        }
      });
      if (need_w) {
        auto gw = w.grad_mut();
        for (std::size_t n = 0; n < N; ++n) {
          const T* part = dw_parts.data() + n * Cin * K;
          for (std::size_t i = 0; i < Cin * K; ++i) gw[i] += part[i];
        }
      }
      if (b.defined() && b.requires_grad()) accumulate_bias_grad(b.grad_mut(), gy, N, Cout, Pout);
    });
  }
  return y;
}

template <typename T>
Tensor<T> maxpool(Tape<T>* tape, const Tensor<T>& x, const Extents& window, const Extents& stride) {
  require_spatial(x.shape(), "maxpool");
  const auto in = spatial_extents(x.shape());
  if (window.size() != in.size() || stride.size() != in.size()) {
    throw ShapeError("maxpool: window/stride rank does not match input spatial rank");
  }
  for (std::size_t d = 0; d < in.size(); ++d) {
    if (window[d] > in[d]) {
      throw ShapeError("maxpool: window " + std::to_string(window[d]) + " larger than input extent " +
                       std::to_string(in[d]));
    }
  }
  const auto out_ext = conv_output_extents(in, window, stride, Extents(in.size(), 0));
  const Geometry g = make_geometry(x.dim(1), in, window, stride, Extents(in.size(), 0), out_ext);
  const std::size_t NC = x.dim(0) * x.dim(1), Pin = g.in_size(), P = g.out_size();

  Tensor<T> y(with_spatial<T>(x.dim(0), x.dim(1), out_ext));
  std::vector<std::size_t> argmax(NC * P);
  const T* xd = x.data().data();
  T* yd = y.data().data();
  for (std::size_t nc = 0; nc < NC; ++nc) {
    const T* src = xd + nc * Pin;
    for (std::size_t od = 0; od < g.out[0]; ++od)
      for (std::size_t oh = 0; oh < g.out[1]; ++oh)
        for (std::size_t ow = 0; ow < g.out[2]; ++ow) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_idx = 0;
          bool first = true;
          for (std::size_t kd = 0; kd < g.kernel[0]; ++kd)
            for (std::size_t kh = 0; kh < g.kernel[1]; ++kh)
              for (std::size_t kw = 0; kw < g.kernel[2]; ++kw) {
                const std::size_t id = od * g.stride[0] + kd, ih = oh * g.stride[1] + kh, iw = ow * g.stride[2] + kw;
                const std::size_t idx = (id * g.in[1] + ih) * g.in[2] + iw;
                if (first || src[idx] > best) {
                  best = src[idx];
                  best_idx = idx;
                  first = false;
                }
              }
          const std::size_t o = (od * g.out[1] + oh) * g.out[2] + ow;
          yd[nc * P + o] = best;
          argmax[nc * P + o] = best_idx;
        }
  }
  if (tape) {
    auto xs = x;
    tape->record("maxpool", {x}, y, [xs, y, argmax = std::move(argmax), NC, Pin, P]() mutable {
      auto gx = xs.grad_mut();
      auto gy = y.grad();
      for (std::size_t nc = 0; nc < NC; ++nc)
        for (std::size_t o = 0; o < P; ++o) gx[nc * Pin + argmax[nc * P + o]] += gy[nc * P + o];
    });
  }
  return y;
}

template <typename T>
Tensor<T> batch_norm(Tape<T>* tape, const Tensor<T>& x, BatchNormState<T>& s) {
  if (x.rank() < 3) throw ShapeError("batch_norm: expected (N, C, spatial...), got " + to_string(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), P = x.numel() / (N * C), M = N * P;
  for (const auto* t : {&s.gamma, &s.beta, &s.running_mean, &s.running_var}) {
    if (!t->defined() || t->shape() != Shape{C}) {
      throw ShapeError("batch_norm: per-channel parameters must have shape (" + std::to_string(C) + ")");
    }
  }
  if (s.mode == Mode::train && M < 2) {
    throw ShapeError("batch_norm: train mode needs batch * spatial >= 2, got " + std::to_string(M));
  }
  Tensor<T> y(x.shape());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(C);
  const T* xd = x.data().data();
  T* yd = y.data().data();
  const auto gamma = s.gamma.data();
  const auto beta = s.beta.data();
  for (std::size_t c = 0; c < C; ++c) {
    double mean = 0.0, var = 0.0;
    if (s.mode == Mode::train) {
      for (std::size_t n = 0; n < N; ++n) {
        const T* row = xd + (n * C + c) * P;
        for (std::size_t i = 0; i < P; ++i) mean += row[i];
      }
      mean /= static_cast<double>(M);
      for (std::size_t n = 0; n < N; ++n) {
        const T* row = xd + (n * C + c) * P;
        for (std::size_t i = 0; i < P; ++i) {
          const double dlt = row[i] - mean;
          var += dlt * dlt;
        }
      }
      const double unbiased = var / static_cast<double>(M - 1);
      var /= static_cast<double>(M);
      auto rm = s.running_mean.data();
      auto rv = s.running_var.data();
      rm[c] = static_cast<T>(s.momentum * rm[c] + (1.0 - s.momentum) * mean);
      rv[c] = static_cast<T>(s.momentum * rv[c] + (1.0 - s.momentum) * unbiased);
    } else {
      mean = s.running_mean.data()[c];
      var = s.running_var.data()[c];
    }
    const double istd = 1.0 / std::sqrt(var + s.epsilon);
    inv_std[c] = static_cast<T>(istd);
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t base = (n * C + c) * P;
      for (std::size_t i = 0; i < P; ++i) {
        const T xh = static_cast<T>((xd[base + i] - mean) * istd);
        xhat[base + i] = xh;
        yd[base + i] = gamma[c] * xh + beta[c];
      }
    }
  }
  if (tape) {
    auto xs = x;
    auto g = s.gamma;
    auto b = s.beta;
    const bool train = s.mode == Mode::train;
    tape->record(
        "batch_norm", {x, s.gamma, s.beta}, y,
        [xs, g, b, y, xhat = std::move(xhat), inv_std = std::move(inv_std), N, C, P, M, train]() mutable {
          auto gy = y.grad();
          const auto gamma = g.data();
          T* gx = xs.requires_grad() ? xs.grad_mut().data() : nullptr;
          T* gg = g.requires_grad() ? g.grad_mut().data() : nullptr;
          T* gb = b.requires_grad() ? b.grad_mut().data() : nullptr;
          for (std::size_t c = 0; c < C; ++c) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
              const std::size_t base = (n * C + c) * P;
              for (std::size_t i = 0; i < P; ++i) {
                sum_dy += gy[base + i];
                sum_dy_xhat += static_cast<double>(gy[base + i]) * xhat[base + i];
              }
            }
            if (gg) gg[c] += static_cast<T>(sum_dy_xhat);
            if (gb) gb[c] += static_cast<T>(sum_dy);
            if (!gx) continue;
            const double k = static_cast<double>(gamma[c]) * inv_std[c];
            const double mean_dy = sum_dy / static_cast<double>(M);
            const double mean_dy_xhat = sum_dy_xhat / static_cast<double>(M);
            for (std::size_t n = 0; n < N; ++n) {
              const std::size_t base = (n * C + c) * P;
              for (std::size_t i = 0; i < P; ++i) {
                const double d = train ? (gy[base + i] - mean_dy - xhat[base + i] * mean_dy_xhat) : gy[base + i];
                gx[base + i] += static_cast<T>(k * d);
              }
            }
          }
        });
  }
  return y;
}

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  auto xd = x.data();
  auto yd = y.data();
  for (std::size_t i = 0; i < xd.size(); ++i) yd[i] = xd[i] > T{0} ? xd[i] : T{0};
  if (tape) {
    auto xs = x;
    tape->record("relu", {x}, y, [xs, y]() mutable {
      auto gx = xs.grad_mut();
      auto gy = y.grad();
      auto xd = xs.data();
      for (std::size_t i = 0; i < gx.size(); ++i)
        if (xd[i] > T{0}) gx[i] += gy[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> concat_channels(Tape<T>* tape, const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& ref = xs.front().shape();
  if (ref.size() < 2) throw ShapeError("concat_channels: inputs need a channel dim");
  std::size_t C = 0;
  for (const auto& t : xs) {
    const Shape& s = t.shape();
    bool ok = s.size() == ref.size() && s[0] == ref[0];
    for (std::size_t d = 2; ok && d < s.size(); ++d) ok = s[d] == ref[d];
    if (!ok) {
      throw ShapeError("concat_channels: batch/spatial mismatch " + to_string(ref) + " vs " + to_string(s));
    }
    C += s[1];
  }
  Shape out_shape = ref;
  out_shape[1] = C;
  Tensor<T> y(out_shape);
  const std::size_t N = ref[0], P = numel(ref) / (ref[0] * ref[1]);
  std::size_t offset = 0;
  for (const auto& t : xs) {
    const std::size_t Ci = t.dim(1);
    for (std::size_t n = 0; n < N; ++n) {
      std::copy_n(t.data().data() + n * Ci * P, Ci * P, y.data().data() + (n * C + offset) * P);
    }
    offset += Ci;
  }
  if (tape) {
    tape->record("concat", xs, y, [inputs = xs, y, N, C, P]() mutable {
      auto gy = y.grad();
      std::size_t off = 0;
      for (auto& t : inputs) {
        const std::size_t Ci = t.dim(1);
        if (t.requires_grad()) {
          auto gx = t.grad_mut();
          for (std::size_t n = 0; n < N; ++n) {
            const T* src = gy.data() + (n * C + off) * P;
            T* dst = gx.data() + n * Ci * P;
            for (std::size_t i = 0; i < Ci * P; ++i) dst[i] += src[i];
          }
        }
        off += Ci;
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> add_elementwise(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add_elementwise: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  Tensor<T> y(a.shape());
  auto ad = a.data();
  auto bd = b.data();
  auto yd = y.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] = ad[i] + bd[i];
  if (tape) {
    tape->record("add", {a, b}, y, [a = Tensor<T>(a), b = Tensor<T>(b), y]() mutable {
      auto gy = y.grad();
      for (auto* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto g = t->grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> mul_elementwise(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul_elementwise: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  Tensor<T> y(a.shape());
  auto ad = a.data();
  auto bd = b.data();
  auto yd = y.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] = ad[i] * bd[i];
  if (tape) {
    tape->record("mul", {a, b}, y, [a = Tensor<T>(a), b = Tensor<T>(b), y]() mutable {
      auto gy = y.grad();
      if (a.requires_grad()) {
        auto g = a.grad_mut();
        auto bd = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * bd[i];
      }
      if (b.requires_grad()) {
        auto g = b.grad_mut();
        auto ad = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * ad[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& x, double factor) {
  Tensor<T> y(x.shape());
  const T f = static_cast<T>(factor);
  auto xd = x.data();
  auto yd = y.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] = xd[i] * f;
  if (tape) {
    auto xs = x;
    tape->record("scale", {x}, y, [xs, y, f]() mutable {
      auto gx = xs.grad_mut();
      auto gy = y.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * f;
    });
  }
  return y;
}

template <typename T>
Tensor<T> mean_elementwise(Tape<T>* tape, const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw ShapeError("mean_elementwise: no inputs");
  for (const auto& t : xs) {
    if (t.shape() != xs.front().shape()) {
      throw ShapeError("mean_elementwise: shape mismatch " + to_string(xs.front().shape()) + " vs " +
                       to_string(t.shape()));
    }
  }
  Tensor<T> y(xs.front().shape());
  auto yd = y.data();
  for (const auto& t : xs) {
    auto td = t.data();
    for (std::size_t i = 0; i < yd.size(); ++i) yd[i] += td[i];
  }
  const T inv = T{1} / static_cast<T>(xs.size());
  for (auto& v : yd) v *= inv;
  if (tape) {
    tape->record("mean", xs, y, [inputs = xs, y, inv]() mutable {
      auto gy = y.grad();
      for (auto& t : inputs) {
        if (!t.requires_grad()) continue;
        auto g = t.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * inv;
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> softmax_channels(Tape<T>* tape, const Tensor<T>& x) {
  if (x.rank() < 2) throw ShapeError("softmax_channels: expected (N, C, ...), got " + to_string(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), P = x.numel() / (N * C);
  Tensor<T> y(x.shape());
  const T* xd = x.data().data();
  T* yd = y.data().data();
  for (std::size_t n = 0; n < N; ++n) {
    const std::size_t base = n * C * P;
    for (std::size_t p = 0; p < P; ++p) {
      T mx = xd[base + p];
      for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, xd[base + c * P + p]);
      T total{0};
      for (std::size_t c = 0; c < C; ++c) {
        const T e = std::exp(xd[base + c * P + p] - mx);
        yd[base + c * P + p] = e;
        total += e;
      }
      for (std::size_t c = 0; c < C; ++c) yd[base + c * P + p] /= total;
    }
  }
  if (tape) {
    auto xs = x;
    tape->record("softmax", {x}, y, [xs, y, N, C, P]() mutable {
      auto gx = xs.grad_mut();
      auto gy = y.grad();
      auto yd = y.data();
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t base = n * C * P;
        for (std::size_t p = 0; p < P; ++p) {
          T dot{0};
          for (std::size_t c = 0; c < C; ++c) dot += gy[base + c * P + p] * yd[base + c * P + p];
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t i = base + c * P + p;
            gx[i] += yd[i] * (gy[i] - dot);
          }
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> sum_all(Tape<T>* tape, const Tensor<T>& x) {
  T total{0};
  for (auto v : x.data()) total += v;
  Tensor<T> y(Shape{1}, {total});
  if (tape) {
    auto xs = x;
    tape->record("sum", {x}, y, [xs, y]() mutable {
      auto gx = xs.grad_mut();
      const T g = y.grad()[0];
      for (auto& v : gx) v += g;
    });
  }
  return y;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  if (x.rank() < 2 || begin >= end || end > x.dim(1)) {
    throw ShapeError("slice_channels: invalid range [" + std::to_string(begin) + ", " + std::to_string(end) + ")");
  }
  Shape s = x.shape();
  const std::size_t C = s[1], N = s[0], P = x.numel() / (N * C), Cs = end - begin;
  s[1] = Cs;
  Tensor<T> y(s);
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(x.data().data() + (n * C + begin) * P, Cs * P, y.data().data() + n * Cs * P);
  }
  return y;
}

#define CSEG_INSTANTIATE_OPS(T)                                                                          \
  template struct ConvParams<T>;                                                                         \
  template struct BatchNormState<T>;                                                                     \
  template Tensor<T> conv_forward<T>(Tape<T>*, const Tensor<T>&, const ConvParams<T>&);                  \
  template Tensor<T> deconv_forward<T>(Tape<T>*, const Tensor<T>&, const ConvParams<T>&);                \
  template Tensor<T> maxpool<T>(Tape<T>*, const Tensor<T>&, const Extents&, const Extents&);             \
  template Tensor<T> batch_norm<T>(Tape<T>*, const Tensor<T>&, BatchNormState<T>&);                      \
  template Tensor<T> relu<T>(Tape<T>*, const Tensor<T>&);                                                \
  template Tensor<T> concat_channels<T>(Tape<T>*, const std::vector<Tensor<T>>&);                        \
  template Tensor<T> add_elementwise<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> mul_elementwise<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> scale<T>(Tape<T>*, const Tensor<T>&, double);                                       \
  template Tensor<T> mean_elementwise<T>(Tape<T>*, const std::vector<Tensor<T>>&);                       \
  template Tensor<T> softmax_channels<T>(Tape<T>*, const Tensor<T>&);                                    \
  template Tensor<T> sum_all<T>(Tape<T>*, const Tensor<T>&);                                             \
  template Tensor<T> slice_channels<T>(const Tensor<T>&, std::size_t, std::size_t);

CSEG_INSTANTIATE_OPS(float)
CSEG_INSTANTIATE_OPS(double)

#undef CSEG_INSTANTIATE_OPS

}  // namespace cseg
