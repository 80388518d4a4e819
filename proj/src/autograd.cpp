#include "cseg/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "cseg/errors.hpp"

namespace cseg {

template <typename T>
std::string Tape<T>::current_scope() const {
  std::string s;
  for (const auto& part : scopes_) {
    if (!s.empty()) s += '.';
    s += part;
  }
  return s;
}

template <typename T>
void Tape<T>::record(std::string op, std::vector<Tensor<T>> inputs, Tensor<T> output,
                     std::function<void()> backward) {
  if (consumed_) throw AutogradError("tape already consumed by backward(); record a new tape");
  const bool any_grad = std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>& t) { return t.requires_grad(); });
  output.set_requires_grad(any_grad);
  if (check_finite_ && !all_finite<T>(output.data())) {
    throw DivergenceError("non-finite output from '" + op + "' at '" + current_scope() + "' shape " +
                          to_string(output.shape()));
  }
  nodes_.push_back(Node{std::move(op), current_scope(), std::move(inputs), std::move(output),
                        any_grad ? std::move(backward) : std::function<void()>{}});
}

template <typename T>
void Tape<T>::backward(Tensor<T> loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw AutogradError("backward() requires a scalar loss, got shape " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (consumed_) throw AutogradError("backward() already ran on this tape; re-record the forward pass");
  auto it = std::find_if(nodes_.rbegin(), nodes_.rend(), [&](const Node& n) { return n.output.same(loss); });
  if (it == nodes_.rend()) throw AutogradError("loss tensor was not produced on this tape (detached)");
  if (!loss.requires_grad()) throw AutogradError("loss does not depend on any tensor requiring grad");

  loss.grad_mut()[0] = T{1};
  const auto start = static_cast<std::size_t>(std::distance(it, nodes_.rend()));
  for (std::size_t i = start; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.backward || !node.output.has_grad()) continue;
    node.backward();
  }
  consumed_ = true;
}

template <typename T>
std::optional<std::string> Tape<T>::first_non_finite() const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& n = nodes_[i];
    if (!all_finite<T>(n.output.data())) {
      return "node " + std::to_string(i) + " '" + n.op + "' at '" + n.scope + "' shape " + to_string(n.output.shape());
    }
  }
  return std::nullopt;
}

double finite_difference_check(const ScalarFn& f, std::vector<Tensor<double>> leaves, double h) {
  if (!(h > 0.0)) throw ConfigError("finite_difference_check requires h > 0");
  std::vector<bool> prior(leaves.size());
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    prior[l] = leaves[l].requires_grad();
    leaves[l].set_requires_grad(true);
    leaves[l].zero_grad();
  }
  {
    Tape<double> tape;
    auto loss = f(&tape);
    tape.backward(loss);
  }
  double worst = 0.0;
  for (auto& leaf : leaves) {
    const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    auto values = leaf.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + h;
      const double up = f(nullptr).item();
      values[i] = orig - h;
      const double down = f(nullptr).item();
      values[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    leaves[l].clear_grad();
    leaves[l].set_requires_grad(prior[l]);
  }
  return worst;
}

double finite_difference_check(const std::function<Tensor<double>(Tape<double>*, const Tensor<double>&)>& f,
                               const Tensor<double>& x, double h) {
  auto leaf = x.clone();
  return finite_difference_check([&](Tape<double>* tape) { return f(tape, leaf); }, {leaf}, h);
}

template class Tape<float>;
template class Tape<double>;

}  // namespace cseg
