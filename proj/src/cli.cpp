#include "cseg/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"

#include "cseg/checkpoint.hpp"
#include "cseg/config.hpp"
#include "cseg/errors.hpp"
#include "cseg/parallel.hpp"

namespace cseg::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::size_t threads = 1;
  std::string precision = "f32";
  // eval
  std::string checkpoint;
  std::string data;
  std::string model;
  // ablate
  bool with_baseline = false;
  // gen-data
  std::optional<std::size_t> count;
};

RunConfig load_run_config(const Options& o) {
  auto c = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (o.seed) {
    c.train.seed = *o.seed;
    c.task.seed = *o.seed;
  }
  if (o.steps) c.train.steps = *o.steps;
  validate(c);
  return c;
}

fs::path output_dir(const Options& o, const RunConfig& c, const std::string& command) {
  const char* env = std::getenv(kOutputRootEnv);
  const fs::path root = env && *env ? fs::path(env) : fs::path(".");
  fs::path p;
  if (!o.out.empty()) {
    p = o.out;
  } else if (!c.output_dir.empty()) {
    p = fs::path(c.output_dir).is_absolute() ? fs::path(c.output_dir) : root / c.output_dir;
  } else {
    p = root / ("cseg-" + command);
  }
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw FormatError("cannot create output directory " + p.string());
  return p;
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream os(file, std::ios::binary);
  os << text;
  if (!os) throw FormatError("cannot write " + file.string());
}

std::string model_name(const NetworkSpec& s) {
  return to_string(s.encoder.prototype) + "+" + to_string(s.decoder.prototype);
}

template <typename T>
int cmd_train(const RunConfig& c, const fs::path& out, std::ostream& os) {
  Network<T> net(c.network);
  init_gaussian(net, c.train.init_std, c.train.seed);
  write_text(out / "config.resolved.json", serialize_config(c));
  write_text(out / "graph.json", net.summary().to_json() + "\n");
  const auto samples = generate_samples(c.task, c.task.num_samples);
  const auto log = train(net, samples, c.loss, c.train);
  save_checkpoint((out / "checkpoint.ckpt").string(), net);
  std::ostringstream csv;
  write_train_log(csv, log, net.num_branches());
  write_text(out / "train_log.csv", csv.str());
  os << "trained " << log.size() << " steps";
  if (!log.empty()) os << ", final loss " << log.back().total;
  os << "; outputs in " << out.string() << "\n";
  return kExitOk;
}

template <typename T>
int cmd_eval(const RunConfig& c, const Options& o, const fs::path& out, std::ostream& os) {
  if (o.checkpoint.empty()) throw ConfigError("eval requires --checkpoint");
  Network<T> net(c.network);
  load_checkpoint(o.checkpoint, net);
  const auto samples = o.data.empty() ? generate_samples(c.task, c.task.num_samples) : read_dataset(o.data);
  if (samples.empty()) throw FormatError("evaluation set is empty");
  for (const auto& s : samples) {
    if (!std::equal(s.label.shape.begin(), s.label.shape.end(), c.task.image_size.begin(), c.task.image_size.end())) {
      throw ShapeError("evaluation sample shape " + to_string(s.label.shape) + " differs from task.image_size");
    }
    for (auto v : s.label.data) {
      if (v < 0 || static_cast<std::size_t>(v) >= c.task.num_classes) {
        throw FormatError("evaluation label " + std::to_string(v) + " outside the configured classes");
      }
    }
  }
  const auto report = evaluate(net, samples, resolved_spacing(c.task), c.train.batch);
  std::ostringstream csv;
  write_metrics_csv_header(csv);
  write_metrics_csv_rows(csv, o.model.empty() ? model_name(c.network) : o.model, report);
  write_text(out / "metrics.csv", csv.str());
  os << csv.str();
  return kExitOk;
}

struct Variant {
  std::string name;
  RunConfig config;
};

std::vector<Variant> ablation_variants(const RunConfig& base) {
  std::vector<Variant> v{{"full", base}, {"no_side_branch", base}, {"no_fusion", base}, {"no_db_sequence", base}};
  v[1].config.network.decoder.with_side_branches = false;
  v[2].config.network.decoder.with_fusion_layer = false;
  v[3].config.network.decoder.with_db_sequence = false;
  return v;
}

template <typename T>
MetricsReport train_and_evaluate(const RunConfig& c, const std::string& name, const fs::path& out) {
  Network<T> net(c.network);
  init_gaussian(net, c.train.init_std, c.train.seed);
  write_text(out / ("graph_" + name + ".json"), net.summary().to_json() + "\n");
  save_checkpoint((out / ("init_" + name + ".ckpt")).string(), net);
  const auto samples = generate_samples(c.task, c.task.num_samples);
  const auto log = train(net, samples, c.loss, c.train);
  save_checkpoint((out / ("checkpoint_" + name + ".ckpt")).string(), net);
  std::ostringstream csv;
  write_train_log(csv, log, net.num_branches());
  write_text(out / ("train_log_" + name + ".csv"), csv.str());
  return evaluate(net, samples, resolved_spacing(c.task), c.train.batch);
}

template <typename T>
int cmd_ablate(const RunConfig& c, const Options& o, const fs::path& out, std::ostream& os) {
  if (c.network.decoder.prototype != DecoderPrototype::cascade) {
    throw ConfigError("decoder.prototype: ablation requires the cascade decoder");
  }
  const auto variants = ablation_variants(c);
  for (const auto& v : variants) validate(v.config);
  std::ostringstream csv;
  write_metrics_csv_header(csv);
  for (const auto& v : variants) {
    const auto report = train_and_evaluate<T>(v.config, v.name, out);
    write_metrics_csv_rows(csv, v.name, report);
  }
  write_text(out / "ablation.csv", csv.str());
  os << csv.str();

  if (o.with_baseline) {
    // Cascade vs model-wise decoding on the thin-ring task.
    RunConfig cascade = c;
    cascade.task.kind = TaskKind::rings;
    RunConfig model_wise = cascade;
    model_wise.network.decoder.prototype = DecoderPrototype::model_wise;
    model_wise.loss.aux_weights.clear();
    validate(model_wise);
    const auto rc = train_and_evaluate<T>(cascade, "rings_cascade", out);
    const auto rm = train_and_evaluate<T>(model_wise, "rings_model_wise", out);
    std::ostringstream cmp;
    cmp << "class,dice_cascade,dice_model_wise,relative_delta\n";
    char buf[128];
    for (std::size_t k = 0; k < rc.classes.size(); ++k) {
      const double a = rc.classes[k].dice, b = rm.classes[k].dice;
      const double rel = b > 0.0 ? (a - b) / b : 0.0;
      std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f\n", k, a, b, rel);
      cmp << buf;
    }
    write_text(out / "decoder_comparison.csv", cmp.str());
    os << cmp.str();
  }
  return kExitOk;
}

int cmd_gen_data(const RunConfig& c, const Options& o, const fs::path& out, std::ostream& os) {
  const std::size_t count = o.count.value_or(c.task.num_samples);
  write_dataset(out.string(), c.task, count);
  os << "wrote " << count << " samples to " << out.string() << "\n";
  return kExitOk;
}

int cmd_graph(const RunConfig& c, const Options& o, std::ostream& os) {
  Network<float> net(c.network);
  const auto json = net.summary().to_json() + "\n";
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    write_text(fs::path(o.out) / "graph.json", json);
  }
  os << json;
  return kExitOk;
}

void add_common(CLI::App* cmd, Options& o, bool training) {
  cmd->add_option("--config", o.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--threads", o.threads, "Worker threads for batch-parallel kernels")->check(CLI::Range(1, 256));
  cmd->add_option("--precision", o.precision, "Floating-point precision")->check(CLI::IsMember({"f32", "f64"}));
  cmd->add_option("--seed", o.seed, "Overrides train.seed and task.seed");
  if (training) cmd->add_option("--steps", o.steps, "Overrides train.steps");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cascade-decoder segmentation networks: train, evaluate, ablate", "cseg"};
  app.require_subcommand(1);
  Options o;
  auto* train_cmd = app.add_subcommand("train", "Train a network on its synthetic task");
  add_common(train_cmd, o, true);
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint and write metrics.csv");
  add_common(eval_cmd, o, false);
  eval_cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint archive")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", o.data, "Dataset directory written by gen-data")->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--model", o.model, "Model column value");
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate the four cascade ablation variants");
  add_common(ablate_cmd, o, true);
  ablate_cmd->add_flag("--with-baseline", o.with_baseline, "Also compare cascade vs model-wise on the ring task");
  auto* gen_cmd = app.add_subcommand("gen-data", "Write synthetic samples as tensor files");
  add_common(gen_cmd, o, false);
  gen_cmd->add_option("--count", o.count, "Number of samples (default task.num_samples)");
  auto* graph_cmd = app.add_subcommand("graph", "Print the module graph summary as JSON");
  add_common(graph_cmd, o, false);

  std::vector<std::string> argv_store{"cseg"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    set_num_threads(o.threads);
    const bool f64 = o.precision == "f64";
    const auto c = load_run_config(o);
    if (graph_cmd->parsed()) return cmd_graph(c, o, out);
    std::string name = train_cmd->parsed() ? "train" : eval_cmd->parsed() ? "eval" : ablate_cmd->parsed() ? "ablate" : "gen-data";
    const auto dir = output_dir(o, c, name);
    if (train_cmd->parsed()) return f64 ? cmd_train<double>(c, dir, out) : cmd_train<float>(c, dir, out);
    if (eval_cmd->parsed()) return f64 ? cmd_eval<double>(c, o, dir, out) : cmd_eval<float>(c, o, dir, out);
    if (ablate_cmd->parsed()) return f64 ? cmd_ablate<double>(c, o, dir, out) : cmd_ablate<float>(c, o, dir, out);
    return cmd_gen_data(c, o, dir, out);
  } catch (const DivergenceError& e) {
    err << "error: training diverged: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const ConfigError& e) {
    err << "error: invalid configuration: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const ShapeError& e) {
    err << "error: invalid shape: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::out_of_range& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace cseg::cli
