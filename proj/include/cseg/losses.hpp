#pragma once

#include <string>
#include <vector>

#include "cseg/mask.hpp"
#include "cseg/network.hpp"

namespace cseg {

enum class LossKind { cross_entropy, soft_dice };

std::string to_string(LossKind k);
LossKind parse_loss_kind(const std::string& s);

struct LossConfig {
  LossKind loss_kind = LossKind::cross_entropy;
  std::vector<double> aux_weights;  // one per branch; empty means 1 for every branch
  double global_weight = 1.0;  // must be > 0

  bool operator==(const LossConfig&) const = default;
};

/// Mean over positions of -log softmax(logits)[label].
template <typename T>
Tensor<T> cross_entropy_loss(Tape<T>* tape, const Tensor<T>& logits, const LabelMask& labels);

inline constexpr double kSoftDiceSmoothing = 1.0;

/// 1 - mean over foreground classes of (2 sum(p*y) + s) / (sum(p) + sum(y) + s),
/// sums taken over the whole batch.
template <typename T>
Tensor<T> soft_dice_loss(Tape<T>* tape, const Tensor<T>& probs, const LabelMask& labels,
                         double smoothing = kSoftDiceSmoothing);

/// Loss of one prediction given as logits (soft Dice applies softmax first).
template <typename T>
Tensor<T> segmentation_loss(Tape<T>* tape, LossKind kind, const Tensor<T>& logits, const LabelMask& labels);

template <typename T>
struct LossBreakdown {
  Tensor<T> total;
  double global = 0.0;
  std::vector<double> branch;  // unweighted L_i per branch
};

/// w_g * L(fused logits) + sum_i w_i * L(branch_i). Branch terms with zero
/// weight are not evaluated, so they add neither value nor a gradient path.
template <typename T>
LossBreakdown<T> total_loss(Tape<T>* tape, const NetworkOutput<T>& out, const LabelMask& labels,
                            const LossConfig& cfg);

/// Expands an empty aux_weights list to all-ones; validates otherwise.
std::vector<double> resolve_aux_weights(const LossConfig& cfg, std::size_t branches);

}  // namespace cseg
