#pragma once

#include <cstdint>
#include <functional>
#include <type_traits>
#include <iosfwd>
#include <vector>

#include "cseg/losses.hpp"
#include "cseg/metrics.hpp"
#include "cseg/network.hpp"
#include "cseg/synthetic.hpp"

namespace cseg {

/// Gaussian initialization. stddev > 0 draws every conv/deconv weight from
/// N(0, stddev^2); stddev == 0 selects N(0, 2 / fan_in) per tensor. Biases and
/// BN beta are zeroed, gamma set to 1, running statistics reset. Each tensor's
/// stream is keyed by (seed, layer path, role), so tensors that share a path
/// and shape across architectures get identical bytes.
template <typename T>
void init_gaussian(Network<T>& net, double stddev, std::uint64_t seed);

struct AdamConfig {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam over a fixed parameter list.
template <typename T>
class Adam {
 public:
  Adam(std::vector<ParamRef<T>> params, AdamConfig cfg = {});

  /// Applies one update in declaration order and clears gradients. Throws
  /// AutogradError naming the first trainable parameter that received no
  /// gradient during the last backward pass.
  void step();

  std::uint64_t step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }
  const std::vector<ParamRef<T>>& params() const { return params_; }
  const std::vector<std::vector<T>>& first_moment() const { return m_; }
  const std::vector<std::vector<T>>& second_moment() const { return v_; }

 private:
  std::vector<ParamRef<T>> params_;
  AdamConfig cfg_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

struct TrainConfig {
  std::size_t steps = 500;
  std::size_t batch = 4;
  std::uint64_t seed = 0;
  double learning_rate = 5e-4;
  double init_std = 0.0;  // 0 selects fan-in scaling

  bool operator==(const TrainConfig&) const = default;
};

struct TrainLogRow {
  std::size_t step = 0;
  double total = 0.0;
  double global = 0.0;
  std::vector<double> branch;
};

/// Called after each backward pass and before the optimizer step, so
/// gradients of that step are still readable.
template <typename T>
using StepHook = std::function<void(std::size_t step, const TrainLogRow& row, Network<T>& net)>;

/// Runs `cfg.steps` Adam steps on batches cycled from `samples`: batch s
/// holds samples (s * batch + j) mod samples.size(). Throws DivergenceError
/// naming the first non-finite tensor when the loss stops being finite.
template <typename T>
std::vector<TrainLogRow> train(Network<T>& net, const std::vector<Sample>& samples, const LossConfig& loss,
                               const TrainConfig& cfg, const std::type_identity_t<StepHook<T>>& hook = {});

/// Infer-mode evaluation: argmax of the fused probabilities vs the labels.
template <typename T>
MetricsReport evaluate(Network<T>& net, const std::vector<Sample>& samples, const std::vector<double>& spacing,
                       std::size_t batch = 4);

/// Columns: step, total_loss, L_g, L_1..L_k.
void write_train_log(std::ostream& os, const std::vector<TrainLogRow>& rows, std::size_t branches);

}  // namespace cseg
