#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "cseg/errors.hpp"
#include "cseg/losses.hpp"
#include "cseg/metrics.hpp"
#include "support/oracles.hpp"

using namespace cseg;

namespace {

// Box [lo, hi) on every axis of an otherwise background mask.
LabelMask box(const Shape& s, std::size_t lo, std::size_t hi, std::int32_t cls = 1) {
  LabelMask m(s);
  std::vector<std::size_t> idx(s.size(), 0);
  do {
    bool in = true;
    for (auto v : idx) in &= v >= lo && v < hi;
    if (in) m.data[oracle::flat(idx, s)] = cls;
  } while (oracle::next_index(idx, s));
  return m;
}

Tensor<double> one_hot(const LabelMask& labels, std::size_t classes) {
  const std::size_t N = labels.shape[0], P = labels.size() / N;
  Shape s{N, classes};
  s.insert(s.end(), labels.shape.begin() + 1, labels.shape.end());
  Tensor<double> t(s);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t p = 0; p < P; ++p) t[(n * classes + static_cast<std::size_t>(labels.data[n * P + p])) * P + p] = 1;
  return t;
}

}  // namespace

TEST(CrossEntropy, UniformLogitsGiveLnTwo) {
  auto z = tensor_create<double>({2, 2, 4, 4}, fill::Constant{0.3});
  auto y = oracle::random_labels({2, 4, 4}, 2, 1);
  EXPECT_NEAR(cross_entropy_loss<double>(nullptr, z, y).item(), std::log(2.0), 1e-12);
}

TEST(CrossEntropy, SaturatedMarginIsNearZero) {
  auto y = oracle::random_labels({1, 8, 8}, 3, 2);
  auto z = one_hot(y, 3);
  for (auto& v : z.data()) v *= 50.0;
  EXPECT_LE(cross_entropy_loss<double>(nullptr, z, y).item(), 1e-9);
  EXPECT_GE(cross_entropy_loss<double>(nullptr, z, y).item(), 0.0);
}

TEST(CrossEntropy, MatchesLogSumExpOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto z = oracle::random_tensor<double>({1, 3, 4, 4}, seed, 3.0);
    auto y = oracle::random_labels({1, 4, 4}, 3, seed + 100);
    EXPECT_NEAR(cross_entropy_loss<double>(nullptr, z, y).item(), oracle::cross_entropy(z, y), 1e-7);
  }
}

TEST(CrossEntropy, LabelErrors) {
  auto z = oracle::random_tensor<double>({1, 2, 4, 4}, 1);
  LabelMask bad({1, 4, 4});
  bad.data[3] = 2;
  EXPECT_THROW(cross_entropy_loss<double>(nullptr, z, bad), std::out_of_range);
  bad.data[3] = -1;
  EXPECT_THROW(cross_entropy_loss<double>(nullptr, z, bad), std::out_of_range);
  EXPECT_THROW(cross_entropy_loss<double>(nullptr, z, LabelMask({1, 4, 5})), ShapeError);
}

TEST(SoftDice, PerfectPredictionIsNearZero) {
  auto y = oracle::random_labels({1, 32, 32}, 3, 5);
  EXPECT_LT(soft_dice_loss<double>(nullptr, one_hot(y, 3), y).item(), 1e-3);
}

TEST(SoftDice, UniformProbabilitiesMatchFormula) {
  auto y = oracle::random_labels({2, 6, 6}, 2, 6);
  auto p = tensor_create<double>({2, 2, 6, 6}, fill::Constant{0.5});
  double sy = 0;
  for (auto v : y.data) sy += v == 1;
  const double P = 72.0, s = kSoftDiceSmoothing;
  const double expect = 1.0 - (2 * 0.5 * sy + s) / (0.5 * P + sy + s);
  EXPECT_NEAR(soft_dice_loss<double>(nullptr, p, y).item(), expect, 1e-12);
}

TEST(SoftDice, GradientMatchesFiniteDifferences) {
  auto z = oracle::random_tensor<double>({2, 3, 4, 4}, 7);
  auto y = oracle::random_labels({2, 4, 4}, 3, 8);
  EXPECT_LE(finite_difference_check(
                [&](Tape<double>* t) { return soft_dice_loss(t, softmax_channels(t, z), y); }, {z}, 1e-5),
            1e-5);
  EXPECT_LE(finite_difference_check([&](Tape<double>* t) { return cross_entropy_loss(t, z, y); }, {z}, 1e-5), 1e-5);
}

TEST(TotalLoss, ZeroAuxWeightsGiveGlobalOnly) {
  auto y = oracle::random_labels({1, 4, 4}, 2, 1);
  NetworkOutput<double> out;
  out.fused_logits = oracle::random_tensor<double>({1, 2, 4, 4}, 2);
  for (int i = 0; i < 3; ++i) out.branch_logits.push_back(oracle::random_tensor<double>({1, 2, 4, 4}, 3 + i));
  LossConfig cfg;
  cfg.aux_weights = {0, 0, 0};
  cfg.global_weight = 2.5;
  const auto r = total_loss<double>(nullptr, out, y, cfg);
  EXPECT_EQ(r.total.item(), 2.5 * cross_entropy_loss<double>(nullptr, out.fused_logits, y).item());
}

TEST(TotalLoss, IdenticalBranchesGiveFourTimesOne) {
  auto y = oracle::random_labels({1, 4, 4}, 2, 1);
  auto z = oracle::random_tensor<double>({1, 2, 4, 4}, 2);
  NetworkOutput<double> out;
  out.fused_logits = z;
  out.branch_logits = {z, z, z};
  for (auto kind : {LossKind::cross_entropy, LossKind::soft_dice}) {
    LossConfig cfg;
    cfg.loss_kind = kind;
    const auto r = total_loss<double>(nullptr, out, y, cfg);
    EXPECT_NEAR(r.total.item(), 4.0 * segmentation_loss<double>(nullptr, kind, z, y).item(), 1e-12);
    ASSERT_EQ(r.branch.size(), 3u);
  }
}

TEST(TotalLoss, ConfigErrors) {
  LossConfig cfg;
  cfg.aux_weights = {1, 1};
  EXPECT_THROW(resolve_aux_weights(cfg, 3), ConfigError);
  cfg.aux_weights = {1, -1, 1};
  EXPECT_THROW(resolve_aux_weights(cfg, 3), ConfigError);
  cfg.aux_weights = {};
  EXPECT_EQ(resolve_aux_weights(cfg, 3), (std::vector<double>{1, 1, 1}));
  cfg.global_weight = 0.0;
  EXPECT_THROW(resolve_aux_weights(cfg, 3), ConfigError);
}

TEST(TotalLoss, CrossEntropyIsNonNegative) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto y = oracle::random_labels({2, 4, 4}, 3, seed);
    NetworkOutput<double> out;
    out.fused_logits = oracle::random_tensor<double>({2, 3, 4, 4}, seed + 50, 5.0);
    out.branch_logits = {oracle::random_tensor<double>({2, 3, 4, 4}, seed + 60, 5.0)};
    const auto r = total_loss<double>(nullptr, out, y, LossConfig{});
    EXPECT_GE(r.total.item(), 0.0);
    EXPECT_TRUE(std::isfinite(r.total.item()));
  }
}

TEST(Dice, Examples) {
  const Shape s{8, 8};
  auto a = box(s, 2, 4), b = box(s, 1, 5);
  EXPECT_DOUBLE_EQ(dice_score(a, b, 1), 0.4);
  EXPECT_DOUBLE_EQ(iou_f1(a, b, 1).iou, 0.25);
  EXPECT_EQ(dice_score(a, a, 1), 1.0);
  EXPECT_EQ(iou_f1(a, a, 1).iou, 1.0);
  EXPECT_EQ(iou_f1(a, a, 1).f1, 1.0);
  EXPECT_EQ(dice_score(box(s, 0, 2), box(s, 5, 8), 1), 0.0);
  EXPECT_EQ(dice_score(LabelMask(s), LabelMask(s), 1), 1.0);
  EXPECT_EQ(dice_score(LabelMask(s), a, 1), 0.0);
  EXPECT_THROW(dice_score(a, LabelMask({8, 9}), 1), ShapeError);
}

TEST(Dice, RandomMasksMatchCounting) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto p = oracle::random_labels({12, 12}, 3, seed), g = oracle::random_labels({12, 12}, 3, seed + 1000);
    for (std::int32_t c = 0; c < 3; ++c) {
      const auto k = oracle::count(p, g, c);
      const double dice = dice_score(p, g, c);
      const auto [iou, f1] = iou_f1(p, g, c);
      EXPECT_EQ(dice, 2.0 * static_cast<double>(k.inter) / static_cast<double>(k.a + k.b));
      EXPECT_EQ(iou, static_cast<double>(k.inter) / static_cast<double>(k.uni));
      EXPECT_NEAR(f1, dice, 1e-12);
      EXPECT_NEAR(dice, 2 * iou / (1 + iou), 1e-12);
      EXPECT_GE(dice, 0.0);
      EXPECT_LE(dice, 1.0);
    }
  }
}

TEST(Boundary, Examples) {
  LabelMask full({3, 3}, std::vector<std::int32_t>(9, 1));
  auto b = extract_boundary(binarize(full, 1));
  EXPECT_EQ(b, (std::vector<std::size_t>{0, 1, 2, 3, 5, 6, 7, 8}));
  LabelMask single({5, 5});
  single.data[12] = 1;
  EXPECT_EQ(extract_boundary(binarize(single, 1)), (std::vector<std::size_t>{12}));
  LabelMask disk({5, 5});
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 5; ++x) {
      const double dy = static_cast<double>(y) - 2, dx = static_cast<double>(x) - 2;
      disk.data[y * 5 + x] = dx * dx + dy * dy <= 4.0;
    }
  EXPECT_EQ(extract_boundary(binarize(disk, 1)), oracle::boundary(binarize(disk, 1)));
}

TEST(Boundary, RandomMasksMatchNeighbourScan) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto m2 = oracle::random_blob_mask({16, 16}, seed);
    EXPECT_EQ(extract_boundary(binarize(m2, 1)), oracle::boundary(binarize(m2, 1)));
    auto m3 = oracle::random_blob_mask({8, 9, 10}, seed + 50);
    EXPECT_EQ(extract_boundary(binarize(m3, 1)), oracle::boundary(binarize(m3, 1)));
  }
}

TEST(Distances, Examples) {
  const std::vector<double> unit{1, 1};
  auto a = oracle::random_blob_mask({16, 16}, 3);
  const auto same = boundary_distances(a, a, 1, unit);
  ASSERT_TRUE(same.adb.defined);
  EXPECT_EQ(same.adb.value, 0.0);
  EXPECT_EQ(same.hd.value, 0.0);

  LabelMask p({8, 8}), g({8, 8});
  p.data[2 * 8 + 1] = 1;
  g.data[2 * 8 + 4] = 1;
  EXPECT_DOUBLE_EQ(avg_boundary_distance(p, g, 1, unit).value, 3.0);
  EXPECT_DOUBLE_EQ(hausdorff_distance(p, g, 1, unit).value, 3.0);
  EXPECT_DOUBLE_EQ(hausdorff_distance(p, g, 1, {2.0, 0.5}).value, 1.5);

  EXPECT_FALSE(avg_boundary_distance(LabelMask({8, 8}), g, 1, unit).defined);
  EXPECT_FALSE(hausdorff_distance(p, LabelMask({8, 8}), 1, unit).defined);
}

TEST(Distances, MatchAllPairsOracle) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    auto p = oracle::random_blob_mask({16, 16}, seed), g = oracle::random_blob_mask({16, 16}, seed + 500);
    for (const auto& sp : {std::vector<double>{1, 1}, std::vector<double>{0.7, 1.3}}) {
      const auto got = boundary_distances(p, g, 1, sp);
      const auto ref = oracle::all_pairs(p, g, 1, sp);
      ASSERT_EQ(got.adb.defined, ref.defined);
      if (!ref.defined) continue;
      EXPECT_NEAR(got.adb.value, ref.adb, 1e-9);
      EXPECT_NEAR(got.hd.value, ref.hd, 1e-9);
      EXPECT_LE(got.adb.value, got.hd.value);
      const auto rev = boundary_distances(g, p, 1, sp);
      EXPECT_NEAR(rev.adb.value, got.adb.value, 1e-12);
      EXPECT_EQ(rev.hd.value, got.hd.value);
    }
  }
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto p = oracle::random_blob_mask({8, 10, 9}, seed), g = oracle::random_blob_mask({8, 10, 9}, seed + 9);
    const std::vector<double> sp{2.0, 1.0, 0.5};
    const auto got = boundary_distances(p, g, 1, sp);
    const auto ref = oracle::all_pairs(p, g, 1, sp);
    if (!ref.defined) continue;
    EXPECT_NEAR(got.adb.value, ref.adb, 1e-9);
    EXPECT_NEAR(got.hd.value, ref.hd, 1e-9);
  }
}

TEST(DistanceField, Brute) {
  const Shape s{7, 5};
  std::vector<std::uint8_t> seeds(35, 0);
  seeds[3] = seeds[22] = 1;
  const std::vector<double> sp{1.5, 0.5};
  const auto f = squared_distance_field(s, seeds, sp);
  for (std::size_t i = 0; i < 35; ++i) {
    double best = 1e300;
    for (std::size_t j : {3u, 22u}) {
      const double dy = (static_cast<double>(i / 5) - static_cast<double>(j / 5)) * 1.5;
      const double dx = (static_cast<double>(i % 5) - static_cast<double>(j % 5)) * 0.5;
      best = std::min(best, dy * dy + dx * dx);
    }
    EXPECT_NEAR(f[i], best, 1e-12);
  }
  const auto none = squared_distance_field(s, std::vector<std::uint8_t>(35, 0), sp);
  EXPECT_TRUE(std::isinf(none[0]));
}

TEST(Report, SelfComparisonAndFlags) {
  MetricsAccumulator acc(3, {1.0, 1.0});
  auto gt = box({8, 8}, 2, 6);
  acc.add(gt, gt);
  auto pred = LabelMask({8, 8});
  acc.add(pred, gt);
  const auto r = acc.report();
  ASSERT_EQ(r.classes.size(), 3u);
  const auto& c1 = r.classes[1];
  EXPECT_EQ(c1.samples, 2u);
  EXPECT_DOUBLE_EQ(c1.dice, 0.5);
  ASSERT_TRUE(c1.adb_mm.defined);
  EXPECT_EQ(c1.adb_mm.value, 0.0);
  EXPECT_EQ(c1.pred_empty, 1u);
  EXPECT_EQ(c1.undefined_distance, 1u);
  EXPECT_EQ(c1.flags(), "pred_empty:1;distance_undefined:1");
  // Class 2 never appears: Dice 1 by convention, distances undefined.
  EXPECT_EQ(r.classes[2].dice, 1.0);
  EXPECT_FALSE(r.classes[2].hd_mm.defined);

  std::ostringstream os;
  write_metrics_csv_header(os);
  write_metrics_csv_rows(os, "m", r);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "model,class,dice,adb_mm,hd_mm,iou,f1,flags");
  std::getline(is, line);
  std::getline(is, line);
  EXPECT_EQ(line, "m,1,0.500000,0.000000,0.000000,0.500000,0.500000,pred_empty:1;distance_undefined:1");
  std::getline(is, line);
  EXPECT_EQ(line, "m,2,1.000000,,,1.000000,1.000000,pred_empty:2;gt_empty:2;distance_undefined:2");
}

TEST(Report, BatchEqualsPerSample) {
  auto p = oracle::random_labels({3, 8, 8}, 2, 1), g = oracle::random_labels({3, 8, 8}, 2, 2);
  MetricsAccumulator a(2, {1, 1}), b(2, {1, 1});
  a.add_batch(p, g);
  for (std::size_t n = 0; n < 3; ++n) b.add(mask_sample(p, n), mask_sample(g, n));
  const auto ra = a.report(), rb = b.report();
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_EQ(ra.classes[c].dice, rb.classes[c].dice);
    EXPECT_EQ(ra.classes[c].hd_mm.value, rb.classes[c].hd_mm.value);
  }
}
