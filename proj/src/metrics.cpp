#include "cseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "cseg/errors.hpp"

namespace cseg {

namespace {

void check_pair(const LabelMask& pred, const LabelMask& gt) {
  if (pred.shape != gt.shape) {
    throw ShapeError("mask shapes differ: " + to_string(pred.shape) + " vs " + to_string(gt.shape));
  }
}

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t d = s.size(); d-- > 1;) st[d - 1] = st[d] * s[d];
  return st;
}

// Lower envelope of parabolas along one line; f and out may not alias.
void edt_line(const double* f, std::size_t n, double w2, double* out, std::vector<std::size_t>& v,
              std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  long k = -1;
  for (std::size_t q = 0; q < n; ++q) {
    if (!std::isfinite(f[q])) continue;
    const double fq = f[q] + w2 * static_cast<double>(q) * static_cast<double>(q);
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    double s;
    while (true) {
      const double p = static_cast<double>(v[static_cast<std::size_t>(k)]);
      s = (fq - (f[v[static_cast<std::size_t>(k)]] + w2 * p * p)) / (2.0 * w2 * (static_cast<double>(q) - p));
      if (s <= z[static_cast<std::size_t>(k)]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = s;
    z[static_cast<std::size_t>(k) + 1] = inf;
  }
  if (k < 0) {
    std::fill(out, out + n, inf);
    return;
  }
  std::size_t j = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[j + 1] < static_cast<double>(q)) ++j;
    const double d = static_cast<double>(q) - static_cast<double>(v[j]);
    out[q] = w2 * d * d + f[v[j]];
  }
}

double safe_ratio(double num, double den) { return den == 0.0 ? 1.0 : num / den; }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

BinaryMask binarize(const LabelMask& mask, std::int32_t cls) {
  BinaryMask b{mask.shape, std::vector<std::uint8_t>(mask.size())};
  for (std::size_t i = 0; i < mask.size(); ++i) b.data[i] = mask.data[i] == cls ? 1 : 0;
  return b;
}

OverlapCounts overlap_counts(const LabelMask& pred, const LabelMask& gt, std::int32_t cls) {
  check_pair(pred, gt);
  OverlapCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred.data[i] == cls, b = gt.data[i] == cls;
    c.tp += a && b;
    c.fp += a && !b;
    c.fn += !a && b;
  }
  return c;
}

double dice_score(const LabelMask& pred, const LabelMask& gt, std::int32_t cls) {
  const auto c = overlap_counts(pred, gt, cls);
  return safe_ratio(2.0 * static_cast<double>(c.tp), static_cast<double>(2 * c.tp + c.fp + c.fn));
}

IouF1 iou_f1(const LabelMask& pred, const LabelMask& gt, std::int32_t cls) {
  const auto c = overlap_counts(pred, gt, cls);
  const auto tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
  IouF1 r;
  r.iou = safe_ratio(tp, tp + fp + fn);
  if (c.tp + c.fp + c.fn == 0) {
    r.f1 = 1.0;
  } else if (c.tp == 0) {
    r.f1 = 0.0;
  } else {
    const double precision = tp / (tp + fp), recall = tp / (tp + fn);
    r.f1 = 2.0 * precision * recall / (precision + recall);
  }
  return r;
}

std::vector<std::size_t> extract_boundary(const BinaryMask& mask) {
  const auto& s = mask.shape;
  const auto st = strides_of(s);
  std::vector<std::size_t> out;
  std::vector<std::size_t> idx(s.size(), 0);
  for (std::size_t i = 0; i < mask.data.size(); ++i) {
    if (i > 0) {
      for (std::size_t d = s.size(); d-- > 0;) {
        if (++idx[d] < s[d]) break;
        idx[d] = 0;
      }
    }
    if (!mask.data[i]) continue;
    bool edge = false;
    for (std::size_t d = 0; d < s.size() && !edge; ++d) {
      edge = idx[d] == 0 || idx[d] + 1 == s[d] || !mask.data[i - st[d]] || !mask.data[i + st[d]];
    }
    if (edge) out.push_back(i);
  }
  return out;
}

std::vector<double> squared_distance_field(const Shape& shape, const std::vector<std::uint8_t>& seeds,
                                           const std::vector<double>& spacing) {
  if (spacing.size() != shape.size()) throw ShapeError("spacing must have one entry per spatial axis");
  const std::size_t total = numel(shape);
  std::vector<double> f(total, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < total; ++i)
    if (seeds[i]) f[i] = 0.0;
  const auto st = strides_of(shape);
  for (std::size_t d = 0; d < shape.size(); ++d) {
    const std::size_t n = shape[d], stride = st[d];
    const double w2 = spacing[d] * spacing[d];
    std::vector<double> line(n), res(n), z(n + 1);
    std::vector<std::size_t> v(n);
    // Each line along axis d starts at an index whose d-coordinate is zero.
    for (std::size_t base = 0; base < total; ++base) {
      if ((base / stride) % n != 0) continue;
      for (std::size_t q = 0; q < n; ++q) line[q] = f[base + q * stride];
      edt_line(line.data(), n, w2, res.data(), v, z);
      for (std::size_t q = 0; q < n; ++q) f[base + q * stride] = res[q];
    }
  }
  return f;
}

BoundaryDistances boundary_distances(const LabelMask& pred, const LabelMask& gt, std::int32_t cls,
                                     const std::vector<double>& spacing) {
  check_pair(pred, gt);
  if (spacing.size() != pred.shape.size()) throw ShapeError("spacing must have one entry per spatial axis");
  for (double s : spacing)
    if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("spacing entries must be positive");
  const auto a = binarize(pred, cls), b = binarize(gt, cls);
  const auto ba = extract_boundary(a), bb = extract_boundary(b);
  BoundaryDistances r;
  if (ba.empty() || bb.empty()) return r;

  auto seeds = [&](const std::vector<std::size_t>& pts) {
    std::vector<std::uint8_t> m(pred.size(), 0);
    for (auto i : pts) m[i] = 1;
    return m;
  };
  const auto fa = squared_distance_field(pred.shape, seeds(ba), spacing);
  const auto fb = squared_distance_field(pred.shape, seeds(bb), spacing);
  auto directed = [](const std::vector<std::size_t>& from, const std::vector<double>& field, double& mean,
                     double& mx) {
    double sum = 0.0;
    mx = 0.0;
    for (auto i : from) {
      const double d = std::sqrt(field[i]);
      sum += d;
      mx = std::max(mx, d);
    }
    mean = sum / static_cast<double>(from.size());
  };
  double mean_ab, max_ab, mean_ba, max_ba;
  directed(ba, fb, mean_ab, max_ab);
  directed(bb, fa, mean_ba, max_ba);
  r.adb = {0.5 * (mean_ab + mean_ba), true};
  r.hd = {std::max(max_ab, max_ba), true};
  return r;
}

Distance avg_boundary_distance(const LabelMask& pred, const LabelMask& gt, std::int32_t cls,
                               const std::vector<double>& spacing) {
  return boundary_distances(pred, gt, cls, spacing).adb;
}

Distance hausdorff_distance(const LabelMask& pred, const LabelMask& gt, std::int32_t cls,
                            const std::vector<double>& spacing) {
  return boundary_distances(pred, gt, cls, spacing).hd;
}

std::string ClassMetrics::flags() const {
  std::string f;
  auto add = [&f](const std::string& s) { f += (f.empty() ? "" : ";") + s; };
  if (pred_empty) add("pred_empty:" + std::to_string(pred_empty));
  if (gt_empty) add("gt_empty:" + std::to_string(gt_empty));
  if (undefined_distance) add("distance_undefined:" + std::to_string(undefined_distance));
  return f;
}

MetricsAccumulator::MetricsAccumulator(std::size_t num_classes, std::vector<double> spacing)
    : spacing_(std::move(spacing)), sums_(num_classes) {
  if (num_classes == 0) throw ConfigError("metrics need at least one class");
}

void MetricsAccumulator::add(const LabelMask& pred, const LabelMask& gt) {
  check_pair(pred, gt);
  for (std::size_t c = 0; c < sums_.size(); ++c) {
    const auto cls = static_cast<std::int32_t>(c);
    auto& s = sums_[c];
    const auto cnt = overlap_counts(pred, gt, cls);
    const auto io = iou_f1(pred, gt, cls);
    s.dice += dice_score(pred, gt, cls);
    s.iou += io.iou;
    s.f1 += io.f1;
    s.pred_empty += cnt.tp + cnt.fp == 0;
    s.gt_empty += cnt.tp + cnt.fn == 0;
    const auto bd = boundary_distances(pred, gt, cls, spacing_);
    if (bd.adb.defined) {
      s.adb += bd.adb.value;
      s.hd += bd.hd.value;
      ++s.defined;
    }
    ++s.n;
  }
}

void MetricsAccumulator::add_batch(const LabelMask& pred, const LabelMask& gt) {
  check_pair(pred, gt);
  if (pred.shape.empty()) throw ShapeError("add_batch: expected (N, spatial...) masks");
  for (std::size_t n = 0; n < pred.shape[0]; ++n) add(mask_sample(pred, n), mask_sample(gt, n));
}

MetricsReport MetricsAccumulator::report() const {
  MetricsReport r;
  r.spacing = spacing_;
  for (std::size_t c = 0; c < sums_.size(); ++c) {
    const auto& s = sums_[c];
    ClassMetrics m;
    m.cls = static_cast<std::int32_t>(c);
    m.samples = s.n;
    m.pred_empty = s.pred_empty;
    m.gt_empty = s.gt_empty;
    m.undefined_distance = s.n - s.defined;
    if (s.n > 0) {
      const auto n = static_cast<double>(s.n);
      m.dice = s.dice / n;
      m.iou = s.iou / n;
      m.f1 = s.f1 / n;
    }
    if (s.defined > 0) {
      const auto d = static_cast<double>(s.defined);
      m.adb_mm = {s.adb / d, true};
      m.hd_mm = {s.hd / d, true};
    }
    r.classes.push_back(m);
  }
  return r;
}

void write_metrics_csv_header(std::ostream& os) { os << "model,class,dice,adb_mm,hd_mm,iou,f1,flags\n"; }

void write_metrics_csv_rows(std::ostream& os, const std::string& model, const MetricsReport& report) {
  for (const auto& m : report.classes) {
    os << model << ',' << m.cls << ',' << fmt(m.dice) << ',' << (m.adb_mm.defined ? fmt(m.adb_mm.value) : "")
       << ',' << (m.hd_mm.defined ? fmt(m.hd_mm.value) : "") << ',' << fmt(m.iou) << ',' << fmt(m.f1) << ','
       << m.flags() << '\n';
  }
}

}  // namespace cseg
