#include "cseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cseg/errors.hpp"

namespace cseg {

std::string to_string(LossKind k) {
  return k == LossKind::cross_entropy ? "cross_entropy" : "soft_dice";
}

LossKind parse_loss_kind(const std::string& s) {
  if (s == "cross_entropy") return LossKind::cross_entropy;
  if (s == "soft_dice") return LossKind::soft_dice;
  throw ConfigError("unknown loss kind '" + s + "' (expected cross_entropy or soft_dice)");
}

namespace {

// Checks that labels are (N, spatial...) matching scores (N, C, spatial...)
// and that every label lies in [0, C).
template <typename T>
void check_labels(const Tensor<T>& scores, const LabelMask& labels, const char* who) {
  if (scores.rank() < 3) throw ShapeError(std::string(who) + ": expected (N, C, spatial...) input");
  Shape expect{scores.dim(0)};
  expect.insert(expect.end(), scores.shape().begin() + 2, scores.shape().end());
  if (labels.shape != expect) {
    throw ShapeError(std::string(who) + ": labels " + to_string(labels.shape) + " do not match " + to_string(expect));
  }
  const auto C = static_cast<std::int32_t>(scores.dim(1));
  for (auto v : labels.data) {
    if (v < 0 || v >= C) {
      throw std::out_of_range(std::string(who) + ": label " + std::to_string(v) + " outside [0, " +
                              std::to_string(C) + ")");
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> cross_entropy_loss(Tape<T>* tape, const Tensor<T>& logits, const LabelMask& labels) {
  check_labels(logits, labels, "cross_entropy_loss");
  const std::size_t N = logits.dim(0), C = logits.dim(1), P = logits.numel() / (N * C);
  const double M = static_cast<double>(N * P);
  const auto z = logits.data();
  // Softmax per position is kept for the backward pass.
  std::vector<T> prob(logits.numel());
  double total = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t p = 0; p < P; ++p) {
      double mx = -INFINITY;
      for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, static_cast<double>(z[(n * C + c) * P + p]));
      double s = 0.0;
      for (std::size_t c = 0; c < C; ++c) s += std::exp(static_cast<double>(z[(n * C + c) * P + p]) - mx);
      const double lse = mx + std::log(s);
      const auto y = static_cast<std::size_t>(labels.data[n * P + p]);
      total += lse - static_cast<double>(z[(n * C + y) * P + p]);
      for (std::size_t c = 0; c < C; ++c) {
        prob[(n * C + c) * P + p] = static_cast<T>(std::exp(static_cast<double>(z[(n * C + c) * P + p]) - lse));
      }
    }
  }
  Tensor<T> out(Shape{1}, {static_cast<T>(total / M)});
  if (tape) {
    tape->record("cross_entropy", {logits}, out,
                 [x = Tensor<T>(logits), out, prob = std::move(prob), lab = labels.data, N, C, P, M]() mutable {
                   auto gx = x.grad_mut();
                   const double g = static_cast<double>(out.grad()[0]) / M;
                   for (std::size_t n = 0; n < N; ++n) {
                     for (std::size_t c = 0; c < C; ++c) {
                       for (std::size_t p = 0; p < P; ++p) {
                         const std::size_t i = (n * C + c) * P + p;
                         const double onehot = static_cast<std::size_t>(lab[n * P + p]) == c ? 1.0 : 0.0;
                         gx[i] += static_cast<T>(g * (static_cast<double>(prob[i]) - onehot));
                       }
                     }
                   }
                 });
  }
  return out;
}

template <typename T>
Tensor<T> soft_dice_loss(Tape<T>* tape, const Tensor<T>& probs, const LabelMask& labels, double smoothing) {
  check_labels(probs, labels, "soft_dice_loss");
  const std::size_t N = probs.dim(0), C = probs.dim(1), P = probs.numel() / (N * C);
  if (C < 2) throw ShapeError("soft_dice_loss: need at least one foreground class");
  const auto pr = probs.data();
  std::vector<double> inter(C, 0.0), sp(C, 0.0), sy(C, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t p = 0; p < P; ++p) {
      const auto y = static_cast<std::size_t>(labels.data[n * P + p]);
      sy[y] += 1.0;
      for (std::size_t c = 1; c < C; ++c) {
        const double v = static_cast<double>(pr[(n * C + c) * P + p]);
        sp[c] += v;
        if (y == c) inter[c] += v;
      }
    }
  }
  double mean_term = 0.0;
  for (std::size_t c = 1; c < C; ++c) mean_term += (2.0 * inter[c] + smoothing) / (sp[c] + sy[c] + smoothing);
  const double F = static_cast<double>(C - 1);
  mean_term /= F;
  Tensor<T> out(Shape{1}, {static_cast<T>(1.0 - mean_term)});
  if (tape) {
    tape->record("soft_dice", {probs}, out,
                 [x = Tensor<T>(probs), out, lab = labels.data, inter, sp, sy, N, C, P, F, smoothing]() mutable {
                   auto gx = x.grad_mut();
                   const double g = static_cast<double>(out.grad()[0]);
                   for (std::size_t c = 1; c < C; ++c) {
                     const double den = sp[c] + sy[c] + smoothing;
                     const double num = 2.0 * inter[c] + smoothing;
                     for (std::size_t n = 0; n < N; ++n) {
                       for (std::size_t p = 0; p < P; ++p) {
                         const double y = static_cast<std::size_t>(lab[n * P + p]) == c ? 1.0 : 0.0;
                         const double d = (2.0 * y * den - num) / (den * den);
                         gx[(n * C + c) * P + p] += static_cast<T>(-g * d / F);
                       }
                     }
                   }
                 });
  }
  return out;
}

template <typename T>
Tensor<T> segmentation_loss(Tape<T>* tape, LossKind kind, const Tensor<T>& logits, const LabelMask& labels) {
  if (kind == LossKind::cross_entropy) return cross_entropy_loss(tape, logits, labels);
  return soft_dice_loss(tape, softmax_channels(tape, logits), labels);
}

std::vector<double> resolve_aux_weights(const LossConfig& cfg, std::size_t branches) {
  if (!std::isfinite(cfg.global_weight) || !(cfg.global_weight > 0.0)) {
    throw ConfigError("loss.global_weight must be a finite positive number");
  }
  if (cfg.aux_weights.empty()) return std::vector<double>(branches, 1.0);
  if (cfg.aux_weights.size() != branches) {
    throw ConfigError("loss.aux_weights has " + std::to_string(cfg.aux_weights.size()) + " entries, expected " +
                      std::to_string(branches));
  }
  for (double w : cfg.aux_weights) {
    if (!std::isfinite(w) || w < 0.0) throw ConfigError("loss.aux_weights entries must be finite and non-negative");
  }
  return cfg.aux_weights;
}

template <typename T>
LossBreakdown<T> total_loss(Tape<T>* tape, const NetworkOutput<T>& out, const LabelMask& labels,
                            const LossConfig& cfg) {
  const auto w = resolve_aux_weights(cfg, out.branch_logits.size());
  ScopeGuard<T> scope(tape, "loss");
  LossBreakdown<T> r;
  r.branch.assign(w.size(), 0.0);
  std::vector<Tensor<T>> terms;
  auto lg = segmentation_loss(tape, cfg.loss_kind, out.fused_logits, labels);
  r.global = static_cast<double>(lg[0]);
  terms.push_back(cfg.global_weight == 1.0 ? lg : scale(tape, lg, cfg.global_weight));
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] == 0.0) continue;
    auto li = segmentation_loss(tape, cfg.loss_kind, out.branch_logits[i], labels);
    r.branch[i] = static_cast<double>(li[0]);
    terms.push_back(w[i] == 1.0 ? li : scale(tape, li, w[i]));
  }
  r.total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) r.total = add_elementwise(tape, r.total, terms[i]);
  return r;
}

#define CSEG_INSTANTIATE_LOSSES(T)                                                                           \
  template Tensor<T> cross_entropy_loss<T>(Tape<T>*, const Tensor<T>&, const LabelMask&);                   \
  template Tensor<T> soft_dice_loss<T>(Tape<T>*, const Tensor<T>&, const LabelMask&, double);               \
  template Tensor<T> segmentation_loss<T>(Tape<T>*, LossKind, const Tensor<T>&, const LabelMask&);          \
  template LossBreakdown<T> total_loss<T>(Tape<T>*, const NetworkOutput<T>&, const LabelMask&, const LossConfig&);

CSEG_INSTANTIATE_LOSSES(float)
CSEG_INSTANTIATE_LOSSES(double)

#undef CSEG_INSTANTIATE_LOSSES

}  // namespace cseg
