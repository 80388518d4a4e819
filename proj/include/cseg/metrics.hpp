#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cseg/mask.hpp"

namespace cseg {

/// Foreground set of one class, same layout as the source mask.
struct BinaryMask {
  Shape shape;
  std::vector<std::uint8_t> data;

  std::size_t count() const;
};

BinaryMask binarize(const LabelMask& mask, std::int32_t cls);

struct OverlapCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

OverlapCounts overlap_counts(const LabelMask& pred, const LabelMask& gt, std::int32_t cls);

/// 2|A∩B| / (|A|+|B|); 1 when both sets are empty.
double dice_score(const LabelMask& pred, const LabelMask& gt, std::int32_t cls);

struct IouF1 {
  double iou = 0.0;
  double f1 = 0.0;
};

/// IoU and F1 (from precision and recall); both 1 when both sets are empty.
IouF1 iou_f1(const LabelMask& pred, const LabelMask& gt, std::int32_t cls);

/// Flat indices of foreground cells with a face-adjacent background neighbor.
/// Positions outside the grid count as background.
std::vector<std::size_t> extract_boundary(const BinaryMask& mask);

/// A distance that is undefined when either boundary set is empty.
struct Distance {
  double value = 0.0;
  bool defined = false;
};

struct BoundaryDistances {
  Distance adb;  // mean of the two directed mean nearest distances
  Distance hd;   // max of the two directed max nearest distances
};

/// Exact Euclidean boundary distances between the class-`cls` regions of
/// pred and gt, in physical units given per-axis spacing.
BoundaryDistances boundary_distances(const LabelMask& pred, const LabelMask& gt, std::int32_t cls,
                                     const std::vector<double>& spacing);

Distance avg_boundary_distance(const LabelMask& pred, const LabelMask& gt, std::int32_t cls,
                               const std::vector<double>& spacing);
Distance hausdorff_distance(const LabelMask& pred, const LabelMask& gt, std::int32_t cls,
                            const std::vector<double>& spacing);

/// Squared Euclidean distance from every cell to the nearest seed cell
/// (seed != 0). Infinity everywhere when there are no seeds.
std::vector<double> squared_distance_field(const Shape& shape, const std::vector<std::uint8_t>& seeds,
                                           const std::vector<double>& spacing);

struct ClassMetrics {
  std::int32_t cls = 0;
  double dice = 0.0;
  double iou = 0.0;
  double f1 = 0.0;
  Distance adb_mm;
  Distance hd_mm;
  std::size_t samples = 0;
  std::size_t pred_empty = 0;  // samples where the predicted class set is empty
  std::size_t gt_empty = 0;
  std::size_t undefined_distance = 0;  // samples excluded from ADB/HD means

  std::string flags() const;
};

/// Per-class means over evaluated samples. ADB/HD means skip samples whose
/// distance is undefined.
struct MetricsReport {
  std::vector<double> spacing;
  std::vector<ClassMetrics> classes;
};

class MetricsAccumulator {
 public:
  MetricsAccumulator(std::size_t num_classes, std::vector<double> spacing);

  /// Adds one sample (single-sample masks of equal shape).
  void add(const LabelMask& pred, const LabelMask& gt);
  /// Adds every sample of batched (N, spatial...) masks.
  void add_batch(const LabelMask& pred, const LabelMask& gt);

  MetricsReport report() const;

 private:
  struct Sums {
    double dice = 0, iou = 0, f1 = 0, adb = 0, hd = 0;
    std::size_t n = 0, defined = 0, pred_empty = 0, gt_empty = 0;
  };
  std::vector<double> spacing_;
  std::vector<Sums> sums_;
};

/// Columns: model, class, dice, adb_mm, hd_mm, iou, f1, flags. Undefined
/// distances are written as empty fields.
void write_metrics_csv_header(std::ostream& os);
void write_metrics_csv_rows(std::ostream& os, const std::string& model, const MetricsReport& report);

}  // namespace cseg
