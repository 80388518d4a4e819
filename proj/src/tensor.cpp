#include "cseg/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cseg/errors.hpp"
#include "cseg/rng.hpp"

namespace cseg {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

void check_extents(const Shape& shape) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("invalid shape " + to_string(shape) + ": extents must be >= 1");
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape) : s_(std::make_shared<Storage>()) {
  s_->data.assign(cseg::numel(shape), T{0});
  s_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : s_(std::make_shared<Storage>()) {
  if (cseg::numel(shape) != values.size()) {
    throw ShapeError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                     to_string(shape));
  }
  s_->shape = std::move(shape);
  s_->data = std::move(values);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return s_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  s_->requires_grad = on;
  return *this;
}

template <typename T>
std::span<T> Tensor<T>::grad_mut() {
  if (s_->grad.size() != s_->data.size()) s_->grad.assign(s_->data.size(), T{0});
  s_->grad_touched = true;
  return s_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  s_->grad.assign(s_->data.size(), T{0});
  s_->grad_touched = false;
}

template <typename T>
void Tensor<T>::clear_grad() {
  s_->grad.clear();
  s_->grad.shrink_to_fit();
  s_->grad_touched = false;
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor<T> out(s_->shape, s_->data);
  out.s_->requires_grad = s_->requires_grad;
  return out;
}

template <typename T>
void Tensor<T>::reshape(Shape shape) {
  if (cseg::numel(shape) != numel()) {
    throw ShapeError("cannot reshape " + to_string(s_->shape) + " to " + to_string(shape));
  }
  s_->shape = std::move(shape);
}

template <typename T>
Tensor<T> tensor_create(const Shape& shape, const Fill& f) {
  check_extents(shape);
  Tensor<T> t(shape);
  auto d = t.data();
  if (const auto* c = std::get_if<fill::Constant>(&f)) {
    for (auto& v : d) v = static_cast<T>(c->value);
  } else if (const auto* g = std::get_if<fill::Gaussian>(&f)) {
    if (!(g->stddev >= 0.0)) throw ConfigError("gaussian fill requires stddev >= 0");
    // Keyed by seed and the shape so that differently-shaped requests with a
    // shared seed do not alias prefix-wise.
    std::uint64_t key = g->seed;
    for (auto e : shape) key = CounterRng::derive(key, e);
    const CounterRng rng(key);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(g->mean + g->stddev * rng.normal(i));
  }
  return t;
}

template <typename T>
bool all_finite(std::span<const T> values) {
  for (auto v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                     static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  os.write(b, 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated tensor stream");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  os.write(kTensorMagic, 4);
  put_u32(os, kTensorFormatVersion);
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put_u32(os, static_cast<std::uint32_t>(e));
  for (auto v : t.data()) put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

Tensor<float> read_tensor(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kTensorMagic, 4) != 0) {
    throw FormatError("bad tensor magic (expected CSEG)");
  }
  const auto version = get_u32(is);
  if (version != kTensorFormatVersion) throw FormatError("unsupported tensor format version " + std::to_string(version));
  const auto rank = get_u32(is);
  Shape shape(rank);
  for (auto& e : shape) e = get_u32(is);
  std::vector<float> values(numel(shape));
  for (auto& v : values) v = std::bit_cast<float>(get_u32(is));
  return Tensor<float>(std::move(shape), std::move(values));
}

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  write_tensor(os, t);
  if (!os) throw FormatError("write failed for " + path);
}

Tensor<float> load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  return read_tensor(is);
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> tensor_create<float>(const Shape&, const Fill&);
template Tensor<double> tensor_create<double>(const Shape&, const Fill&);
template bool all_finite<float>(std::span<const float>);
template bool all_finite<double>(std::span<const double>);
template void write_tensor<float>(std::ostream&, const Tensor<float>&);
template void write_tensor<double>(std::ostream&, const Tensor<double>&);
template void save_tensor<float>(const std::string&, const Tensor<float>&);
template void save_tensor<double>(const std::string&, const Tensor<double>&);

}  // namespace cseg
