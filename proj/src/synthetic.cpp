#include "cseg/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "cseg/errors.hpp"
#include "cseg/rng.hpp"

namespace cseg {

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::blobs: return "blobs";
    case TaskKind::rings: return "rings";
    case TaskKind::mixed: return "mixed";
  }
  return "?";
}

TaskKind parse_task_kind(const std::string& s) {
  if (s == "blobs") return TaskKind::blobs;
  if (s == "rings") return TaskKind::rings;
  if (s == "mixed") return TaskKind::mixed;
  throw ConfigError("unknown task kind '" + s + "' (expected blobs, rings or mixed)");
}

void validate(const SyntheticTask& task) {
  if (task.image_size.empty() || task.image_size.size() > 3) throw ConfigError("task.image_size must have 1 to 3 axes");
  for (auto e : task.image_size)
    if (e < 8) throw ConfigError("task.image_size extents must be at least 8");
  if (task.num_classes < 2) throw ConfigError("task.num_classes must be at least 2");
  if (task.thin_width != 1 && task.thin_width != 2) throw ConfigError("task.thin_width must be 1 or 2");
  if (!(task.noise_std >= 0.0) || !std::isfinite(task.noise_std)) throw ConfigError("task.noise_std must be >= 0");
  if (task.num_samples == 0) throw ConfigError("task.num_samples must be positive");
  if (!task.spacing.empty()) {
    if (task.spacing.size() != task.image_size.size()) {
      throw ConfigError("task.spacing must have one entry per image axis");
    }
    for (double s : task.spacing)
      if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("task.spacing entries must be positive");
  }
}

std::vector<double> resolved_spacing(const SyntheticTask& task) {
  return task.spacing.empty() ? std::vector<double>(task.image_size.size(), 1.0) : task.spacing;
}

namespace {

enum class ShapeKind { ellipsoid, ring };

struct Canvas {
  Extents size;
  std::vector<std::int32_t> label;

  explicit Canvas(const Extents& s) : size(s), label(numel(s), 0) {}

  // Visits every cell with its integer coordinates.
  template <typename F>
  void for_each(F&& f) const {
    std::vector<double> x(size.size(), 0.0);
    std::vector<std::size_t> idx(size.size(), 0);
    for (std::size_t i = 0; i < label.size(); ++i) {
      if (i > 0) {
        for (std::size_t d = size.size(); d-- > 0;) {
          if (++idx[d] < size[d]) break;
          idx[d] = 0;
        }
      }
      for (std::size_t d = 0; d < size.size(); ++d) x[d] = static_cast<double>(idx[d]);
      f(i, x);
    }
  }
};

// Paints one shape of class `cls` onto background cells. Returns false when
// the shape would overlap an existing foreground region and `disjoint` is set.
bool paint(Canvas& canvas, RngStream& rng, ShapeKind kind, std::int32_t cls, std::size_t width, bool disjoint) {
  const std::size_t D = canvas.size.size();
  const double smin = static_cast<double>(*std::min_element(canvas.size.begin(), canvas.size.end()));
  std::vector<double> center(D), radius(D);
  if (kind == ShapeKind::ring) {
    const double lo = std::max(static_cast<double>(width) + 2.0, smin / 8.0), hi = std::max(lo, smin / 4.0);
    const double r = rng.uniform(lo, hi);
    std::fill(radius.begin(), radius.end(), r);
  } else {
    for (std::size_t d = 0; d < D; ++d) {
      const double s = static_cast<double>(canvas.size[d]);
      radius[d] = rng.uniform(std::max(2.0, s / 8.0), std::max(2.0, s / 4.0));
    }
  }
  for (std::size_t d = 0; d < D; ++d) {
    const double s = static_cast<double>(canvas.size[d]);
    center[d] = rng.uniform(radius[d], std::max(radius[d], s - 1.0 - radius[d]));
  }
  const double inner = radius[0] - static_cast<double>(width);
  std::vector<std::size_t> cells;
  bool overlap = false;
  canvas.for_each([&](std::size_t i, const std::vector<double>& x) {
    bool in;
    if (kind == ShapeKind::ring) {
      double r2 = 0.0;
      for (std::size_t d = 0; d < D; ++d) r2 += (x[d] - center[d]) * (x[d] - center[d]);
      const double r = std::sqrt(r2);
      in = r < radius[0] && r >= inner;
    } else {
      double q = 0.0;
      for (std::size_t d = 0; d < D; ++d) q += ((x[d] - center[d]) / radius[d]) * ((x[d] - center[d]) / radius[d]);
      in = q <= 1.0;
    }
    if (!in) return;
    if (canvas.label[i] != 0) overlap = true;
    cells.push_back(i);
  });
  if (disjoint && overlap) return false;
  for (auto i : cells) canvas.label[i] = cls;
  return true;
}

bool all_classes_present(const Canvas& c, std::size_t num_classes) {
  std::vector<std::size_t> h(num_classes, 0);
  for (auto v : c.label) ++h[static_cast<std::size_t>(v)];
  return std::all_of(h.begin(), h.end(), [](std::size_t n) { return n > 0; });
}

constexpr std::size_t kMaxAttempts = 200;

}  // namespace

Sample generate_sample(const SyntheticTask& task, std::size_t index) {
  validate(task);
  const auto C = task.num_classes;
  bool rings = task.kind == TaskKind::rings;
  if (task.kind == TaskKind::mixed) {
    rings = CounterRng(CounterRng::derive(task.seed, index, 1)).uniform(0) < 0.5;
  }
  Canvas canvas(task.image_size);
  for (std::size_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
    RngStream rng(CounterRng::derive(task.seed, index, 2 + attempt));
    canvas = Canvas(task.image_size);
    bool ok = true;
    for (std::size_t c = 1; c < C && ok; ++c) {
      // Rings layouts alternate thin annuli (odd classes) and solid blobs.
      const bool ring = rings && c % 2 == 1;
      ok = paint(canvas, rng, ring ? ShapeKind::ring : ShapeKind::ellipsoid, static_cast<std::int32_t>(c),
                 task.thin_width, rings);
    }
    if (ok && all_classes_present(canvas, C)) break;
  }

  const CounterRng noise(CounterRng::derive(task.seed, index, 0));
  Shape ishape{1};
  ishape.insert(ishape.end(), task.image_size.begin(), task.image_size.end());
  Tensor<float> image(ishape);
  auto px = image.data();
  const double denom = static_cast<double>(C - 1);
  for (std::size_t i = 0; i < canvas.label.size(); ++i) {
    double v = static_cast<double>(canvas.label[i]) / denom;
    if (task.noise_std > 0.0) v += task.noise_std * noise.normal(i);
    px[i] = static_cast<float>(v);
  }
  return {image, LabelMask(Shape(task.image_size.begin(), task.image_size.end()), std::move(canvas.label))};
}

std::vector<Sample> generate_samples(const SyntheticTask& task, std::size_t count) {
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_sample(task, i));
  return out;
}

namespace {

std::string numbered(const char* stem, std::size_t i) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s_%05zu.cseg", stem, i);
  return buf;
}

}  // namespace

void write_dataset(const std::string& dir, const SyntheticTask& task, std::size_t count) {
  validate(task);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw FormatError("cannot create output directory " + dir);
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < count; ++i) {
    const auto s = generate_sample(task, i);
    Tensor<float> label(s.label.shape);
    for (std::size_t j = 0; j < s.label.size(); ++j) label[j] = static_cast<float>(s.label.data[j]);
    save_tensor((fs::path(dir) / numbered("image", i)).string(), s.image);
    save_tensor((fs::path(dir) / numbered("label", i)).string(), label);
    entries.push_back({{"index", i},
                       {"image", numbered("image", i)},
                       {"label", numbered("label", i)},
                       {"class_histogram", class_histogram(s.label, task.num_classes)}});
  }
  nlohmann::json m;
  m["task"] = {{"kind", to_string(task.kind)},       {"image_size", task.image_size},
               {"num_classes", task.num_classes},   {"thin_width", task.thin_width},
               {"noise_std", task.noise_std},       {"seed", task.seed},
               {"spacing", resolved_spacing(task)}};
  m["count"] = count;
  m["entries"] = entries;
  std::ofstream os(fs::path(dir) / "manifest.json");
  if (!os) throw FormatError("cannot write manifest in " + dir);
  os << m.dump(2) << "\n";
  if (!os) throw FormatError("write failed for manifest in " + dir);
}

std::vector<Sample> read_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream is(fs::path(dir) / "manifest.json");
  if (!is) throw FormatError("no manifest.json in " + dir);
  std::vector<Sample> out;
  try {
    const auto m = nlohmann::json::parse(is);
    for (const auto& e : m.at("entries")) {
      auto image = load_tensor((fs::path(dir) / e.at("image").get<std::string>()).string());
      const auto lt = load_tensor((fs::path(dir) / e.at("label").get<std::string>()).string());
      LabelMask label(lt.shape());
      for (std::size_t j = 0; j < lt.numel(); ++j) {
        const float v = lt[j];
        if (v != std::floor(v) || v < 0.0f) throw FormatError("non-integer label value in " + dir);
        label.data[j] = static_cast<std::int32_t>(v);
      }
      if (image.rank() != label.shape.size() + 1 ||
          !std::equal(label.shape.begin(), label.shape.end(), image.shape().begin() + 1)) {
        throw FormatError("image and label shapes differ in " + dir);
      }
      out.push_back({std::move(image), std::move(label)});
    }
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError("bad manifest in " + dir + ": " + ex.what());
  }
  return out;
}

template <typename T>
Batch<T> make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ShapeError("make_batch: empty batch");
  const auto& first = samples.at(indices.front());
  Shape s{indices.size()};
  s.insert(s.end(), first.image.shape().begin(), first.image.shape().end());
  Tensor<T> images(s);
  std::vector<LabelMask> labels;
  const std::size_t per = first.image.numel();
  auto dst = images.data();
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const auto& smp = samples.at(indices[j]);
    if (smp.image.shape() != first.image.shape()) throw ShapeError("make_batch: sample shapes differ");
    auto src = smp.image.data();
    for (std::size_t i = 0; i < per; ++i) dst[j * per + i] = static_cast<T>(src[i]);
    labels.push_back(smp.label);
  }
  return {images, stack_masks(labels)};
}

template Batch<float> make_batch<float>(const std::vector<Sample>&, const std::vector<std::size_t>&);
template Batch<double> make_batch<double>(const std::vector<Sample>&, const std::vector<std::size_t>&);

}  // namespace cseg
