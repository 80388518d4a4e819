#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cseg/tensor.hpp"

namespace cseg {

/// Record of one forward pass. Operations append nodes in execution order, so
/// the node list is topologically sorted by construction. A tape supports a
/// single backward pass; record a new one for the next forward.
template <typename T>
class Tape {
 public:
  struct Node {
    std::string op;
    std::string scope;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    std::function<void()> backward;
  };

  /// Appends a node. The output is marked as requiring grad when any input
  /// does; nodes with no grad-requiring input are kept (for tracing) but
  /// never run backward.
  void record(std::string op, std::vector<Tensor<T>> inputs, Tensor<T> output, std::function<void()> backward);

  /// Populates gradients of every requires_grad leaf reachable from `loss`.
  /// Gradients accumulate into existing leaf buffers.
  void backward(Tensor<T> loss);

  const std::vector<Node>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  /// When enabled, record() throws DivergenceError on a non-finite output.
  void set_check_finite(bool on) { check_finite_ = on; }

  /// Describes the first recorded node whose output has a NaN/Inf entry.
  std::optional<std::string> first_non_finite() const;

  void push_scope(std::string name) { scopes_.push_back(std::move(name)); }
  void pop_scope() { scopes_.pop_back(); }
  std::string current_scope() const;

 private:
  std::vector<Node> nodes_;
  std::vector<std::string> scopes_;
  bool consumed_ = false;
  bool check_finite_ = false;
};

/// RAII scope name for nodes recorded on a (possibly null) tape.
template <typename T>
class ScopeGuard {
 public:
  ScopeGuard(Tape<T>* tape, std::string name) : tape_(tape) {
    if (tape_) tape_->push_scope(std::move(name));
  }
  ~ScopeGuard() {
    if (tape_) tape_->pop_scope();
  }
  ScopeGuard(const ScopeGuard&) = delete;
  ScopeGuard& operator=(const ScopeGuard&) = delete;

 private:
  Tape<T>* tape_;
};

/// A differentiable scalar function of some leaf tensors. The tape pointer
/// is null for the plain (perturbed) evaluations.
using ScalarFn = std::function<Tensor<double>(Tape<double>*)>;

/// Central-difference gradient check over every coordinate of `leaves`.
/// Returns max_i |analytic_i - numeric_i| / max(1, |analytic_i|).
/// Leaves are restored to their original values on return.
double finite_difference_check(const ScalarFn& f, std::vector<Tensor<double>> leaves, double h);

/// Single-input form: f receives a grad-enabled copy of x.
double finite_difference_check(const std::function<Tensor<double>(Tape<double>*, const Tensor<double>&)>& f,
                               const Tensor<double>& x, double h);

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace cseg
