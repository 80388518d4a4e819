#include "cseg/train.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "cseg/errors.hpp"
#include "cseg/rng.hpp"

namespace cseg {

template <typename T>
void init_gaussian(Network<T>& net, double stddev, std::uint64_t seed) {
  if (!(stddev >= 0.0) || !std::isfinite(stddev)) throw ConfigError("init std must be >= 0 (0 selects fan-in scaling)");
  for (auto& p : net.state()) {
    auto d = p.tensor.data();
    if (p.role == "weight") {
      const double sd = stddev > 0.0 ? stddev : std::sqrt(2.0 / p.fan_in);
      const CounterRng rng(fnv1a(p.path + "/" + p.role) ^ mix64(seed));
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(sd * rng.normal(i));
    } else if (p.role == "gamma" || p.role == "running_var") {
      std::fill(d.begin(), d.end(), T{1});
    } else {
      std::fill(d.begin(), d.end(), T{0});
    }
  }
}

template <typename T>
Adam<T>::Adam(std::vector<ParamRef<T>> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0) || !(cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(cfg_.epsilon > 0.0)) throw ConfigError("Adam epsilon must be positive");
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), T{0});
    v_.emplace_back(p.tensor.numel(), T{0});
  }
}

template <typename T>
void Adam<T>::step() {
  for (const auto& p : params_) {
    if (p.trainable && !p.tensor.grad_touched()) {
      throw AutogradError("parameter " + p.path + "." + p.role + " received no gradient (disconnected from the loss)");
    }
  }
  ++step_;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t), c2 = 1.0 - std::pow(cfg_.beta2, t);
  const double b1 = cfg_.beta1, b2 = cfg_.beta2, lr = cfg_.learning_rate, eps = cfg_.epsilon;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.trainable) continue;
    auto w = p.tensor.data();
    auto g = p.tensor.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
      const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * (mi / c1) / (std::sqrt(vi / c2) + eps));
    }
    p.tensor.clear_grad();
  }
}

template <typename T>
std::vector<TrainLogRow> train(Network<T>& net, const std::vector<Sample>& samples, const LossConfig& loss,
                               const TrainConfig& cfg, const std::type_identity_t<StepHook<T>>& hook) {
  if (cfg.batch == 0) throw ConfigError("train.batch must be positive");
  if (samples.empty() && cfg.steps > 0) throw ConfigError("training set is empty");
  resolve_aux_weights(loss, net.num_branches());
  auto params = net.parameters();
  for (auto& p : params) p.tensor.clear_grad();
  Adam<T> opt(params, AdamConfig{.learning_rate = cfg.learning_rate});
  std::vector<TrainLogRow> log;
  log.reserve(cfg.steps);
  std::vector<std::size_t> idx(cfg.batch);
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    for (std::size_t j = 0; j < cfg.batch; ++j) idx[j] = (s * cfg.batch + j) % samples.size();
    const auto batch = make_batch<T>(samples, idx);
    Tape<T> tape;
    const auto out = net.forward(&tape, batch.images, Mode::train);
    const auto lb = total_loss(&tape, out, batch.labels, loss);
    const double total = static_cast<double>(lb.total[0]);
    if (!std::isfinite(total)) {
      const auto where = tape.first_non_finite();
      throw DivergenceError("loss became non-finite at step " + std::to_string(s + 1) +
                            "; first non-finite tensor: " + where.value_or("<none recorded>"));
    }
    tape.backward(lb.total);
    TrainLogRow row{s + 1, total, lb.global, lb.branch};
    // The hook sees gradients before the optimizer clears them.
    if (hook) hook(s + 1, row, net);
    opt.step();
    log.push_back(std::move(row));
  }
  return log;
}

template <typename T>
MetricsReport evaluate(Network<T>& net, const std::vector<Sample>& samples, const std::vector<double>& spacing,
                       std::size_t batch) {
  if (batch == 0) throw ConfigError("evaluation batch must be positive");
  MetricsAccumulator acc(net.spec().decoder.num_classes, spacing);
  for (std::size_t begin = 0; begin < samples.size(); begin += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = begin; i < std::min(samples.size(), begin + batch); ++i) idx.push_back(i);
    const auto b = make_batch<T>(samples, idx);
    const auto out = net.forward(nullptr, b.images, Mode::infer);
    acc.add_batch(argmax_channels(out.fused), b.labels);
  }
  return acc.report();
}

void write_train_log(std::ostream& os, const std::vector<TrainLogRow>& rows, std::size_t branches) {
  os << "step,total_loss,L_g";
  for (std::size_t i = 1; i <= branches; ++i) os << ",L_" << i;
  os << '\n';
  char buf[40];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    os << r.step << ',' << num(r.total) << ',' << num(r.global);
    for (double b : r.branch) os << ',' << num(b);
    os << '\n';
  }
}

#define CSEG_INSTANTIATE_TRAIN(T)                                                                             \
  template void init_gaussian<T>(Network<T>&, double, std::uint64_t);                                        \
  template class Adam<T>;                                                                                    \
  template std::vector<TrainLogRow> train<T>(Network<T>&, const std::vector<Sample>&, const LossConfig&,     \
                                             const TrainConfig&, const std::type_identity_t<StepHook<T>>&);                         \
  template MetricsReport evaluate<T>(Network<T>&, const std::vector<Sample>&, const std::vector<double>&,    \
                                     std::size_t);

CSEG_INSTANTIATE_TRAIN(float)
CSEG_INSTANTIATE_TRAIN(double)

#undef CSEG_INSTANTIATE_TRAIN

}  // namespace cseg
