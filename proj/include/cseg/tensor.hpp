#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace cseg {

/// Extents ordered (batch, channels, spatial...). Row-major storage.
using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);
/// Throws ShapeError when any extent is zero.
void check_extents(const Shape& shape);

namespace fill {
struct Zeros {};
struct Constant {
  double value = 0.0;
};
struct Gaussian {
  double mean = 0.0;
  double stddev = 1.0;
  std::uint64_t seed = 0;
};
}  // namespace fill

using Fill = std::variant<fill::Zeros, fill::Constant, fill::Gaussian>;

/// Dense tensor handle. Copies share storage (identity matters for autograd);
/// use clone() for an independent copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<T> values);

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t dim(std::size_t i) const { return s_->shape.at(i); }
  std::size_t numel() const { return s_->data.size(); }

  std::span<T> data() { return s_->data; }
  std::span<const T> data() const { return s_->data; }
  T& operator[](std::size_t i) { return s_->data[i]; }
  const T& operator[](std::size_t i) const { return s_->data[i]; }
  /// Value of a one-element tensor.
  T item() const;

  bool requires_grad() const { return s_->requires_grad; }
  Tensor& set_requires_grad(bool on);

  bool has_grad() const { return !s_->grad.empty(); }
  /// Read-only gradient; empty span when none has been accumulated.
  std::span<const T> grad() const { return s_->grad; }
  /// Gradient buffer, allocated (zeroed) on first access. Marks the gradient
  /// as written, which is what the optimizer's missing-gradient check reads.
  std::span<T> grad_mut();
  bool grad_touched() const { return s_->grad_touched; }
  void zero_grad();
  void clear_grad();

  Tensor clone() const;
  bool same(const Tensor& other) const { return s_ == other.s_; }
  const void* id() const { return s_.get(); }

  void reshape(Shape shape);

 private:
  struct Storage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    bool grad_touched = false;
  };
  std::shared_ptr<Storage> s_;
};

/// Creates a tensor with the requested fill. Gaussian fills are a pure
/// function of (seed, shape).
template <typename T>
Tensor<T> tensor_create(const Shape& shape, const Fill& fill);

/// Converts between precisions (no gradient is carried over).
template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  std::vector<To> v(t.numel());
  auto src = t.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<To>(src[i]);
  return Tensor<To>(t.shape(), std::move(v));
}

/// True when every entry is finite.
template <typename T>
bool all_finite(std::span<const T> values);

// Tensor file: "CSEG", u32 version=1, u32 rank, rank x u32 extents, then the
// f32 payload. Everything little-endian.
inline constexpr char kTensorMagic[4] = {'C', 'S', 'E', 'G'};
inline constexpr std::uint32_t kTensorFormatVersion = 1;

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t);
Tensor<float> read_tensor(std::istream& is);

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& t);
Tensor<float> load_tensor(const std::string& path);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace cseg
