#include "cseg/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "cseg/errors.hpp"

namespace cseg {

using nlohmann::json;

namespace {

// Reads one JSON object strictly: every key must be consumed by a getter,
// and finish() reports leftovers as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void get(const std::string& key, std::size_t& out) {
    if (const auto* v = find(key)) out = as_size(*v, field(key));
  }

  void get(const std::string& key, double& out) {
    if (const auto* v = find(key)) out = as_double(*v, field(key));
  }

  void get(const std::string& key, bool& out) {
    if (const auto* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(field(key) + ": expected true or false");
      out = v->get<bool>();
    }
  }

  void get(const std::string& key, std::string& out) {
    if (const auto* v = find(key)) out = as_string(*v, field(key));
  }

  void get(const std::string& key, std::vector<std::size_t>& out) {
    if (const auto* v = find(key)) {
      if (!v->is_array()) throw ConfigError(field(key) + ": expected an array of non-negative integers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) out.push_back(as_size((*v)[i], field(key) + "[" + std::to_string(i) + "]"));
    }
  }

  void get(const std::string& key, std::vector<double>& out) {
    if (const auto* v = find(key)) {
      if (!v->is_array()) throw ConfigError(field(key) + ": expected an array of numbers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) out.push_back(as_double((*v)[i], field(key) + "[" + std::to_string(i) + "]"));
    }
  }

  template <typename E, typename Parse>
  void get_enum(const std::string& key, E& out, Parse parse) {
    if (const auto* v = find(key)) {
      try {
        out = parse(as_string(*v, field(key)));
      } catch (const ConfigError& e) {
        throw ConfigError(field(key) + ": " + e.what());
      }
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(field(it.key()) + ": unknown key");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  static std::size_t as_size(const json& v, const std::string& f) {
    if (v.is_number_unsigned()) return v.get<std::size_t>();
    if (v.is_number_integer()) throw ConfigError(f + ": must be non-negative");
    throw ConfigError(f + ": expected a non-negative integer");
  }
  static double as_double(const json& v, const std::string& f) {
    if (!v.is_number()) throw ConfigError(f + ": expected a number");
    return v.get<double>();
  }
  static std::string as_string(const json& v, const std::string& f) {
    if (!v.is_string()) throw ConfigError(f + ": expected a string");
    return v.get<std::string>();
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

// Line and column of a byte offset in text (both 1-based).
std::pair<std::size_t, std::size_t> line_col(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte; ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace

RunConfig parse_config(const std::string& text, const std::string& source) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    // byte points one past the offending character.
    const auto [line, col] = line_col(text, e.byte == 0 ? 0 : e.byte - 1);
    std::string msg = e.what();
    const auto pos = msg.find("syntax error");
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " +
                      (pos == std::string::npos ? msg : msg.substr(pos)));
  }

  RunConfig c;
  Section top(root, "");
  if (const auto* j = top.find("encoder")) {
    Section s(*j, "encoder");
    auto& e = c.network.encoder;
    s.get_enum("prototype", e.prototype, parse_encoder_prototype);
    s.get("k", e.k);
    s.get("channels", e.channels);
    s.get("convs_per_block", e.convs_per_block);
    s.get("spatial_dims", e.spatial_dims);
    s.get("in_channels", e.in_channels);
    s.get("growth", e.growth);
    s.finish();
  }
  if (const auto* j = top.find("decoder")) {
    Section s(*j, "decoder");
    auto& d = c.network.decoder;
    s.get_enum("prototype", d.prototype, parse_decoder_prototype);
    s.get("with_side_branches", d.with_side_branches);
    s.get("with_fusion_layer", d.with_fusion_layer);
    s.get("with_db_sequence", d.with_db_sequence);
    s.get("num_classes", d.num_classes);
    s.get("scale_channels", d.scale_channels);
    s.finish();
  }
  if (const auto* j = top.find("batch_norm")) {
    Section s(*j, "batch_norm");
    s.get("momentum", c.network.bn_momentum);
    s.get("epsilon", c.network.bn_epsilon);
    s.finish();
  }
  if (const auto* j = top.find("loss")) {
    Section s(*j, "loss");
    s.get_enum("loss_kind", c.loss.loss_kind, parse_loss_kind);
    s.get("aux_weights", c.loss.aux_weights);
    s.get("global_weight", c.loss.global_weight);
    s.finish();
  }
  if (const auto* j = top.find("task")) {
    Section s(*j, "task");
    auto& t = c.task;
    s.get_enum("kind", t.kind, parse_task_kind);
    s.get("image_size", t.image_size);
    s.get("num_classes", t.num_classes);
    s.get("thin_width", t.thin_width);
    s.get("noise_std", t.noise_std);
    s.get("seed", t.seed);
    s.get("num_samples", t.num_samples);
    s.get("spacing", t.spacing);
    s.finish();
  }
  if (const auto* j = top.find("train")) {
    Section s(*j, "train");
    s.get("steps", c.train.steps);
    s.get("batch", c.train.batch);
    s.get("seed", c.train.seed);
    s.get("learning_rate", c.train.learning_rate);
    s.get("init_std", c.train.init_std);
    s.finish();
  }
  top.get("output_dir", c.output_dir);
  top.finish();
  c.network.input_size = c.task.image_size;
  return c;
}

RunConfig load_config(const std::string& file) {
  std::ifstream is(file);
  if (!is) throw ConfigError("cannot read config file " + file);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), file);
}

std::string serialize_config(const RunConfig& c) {
  const auto& e = c.network.encoder;
  const auto& d = c.network.decoder;
  json j;
  j["encoder"] = {{"prototype", to_string(e.prototype)},
                  {"k", e.k},
                  {"channels", e.channels},
                  {"convs_per_block", e.convs_per_block},
                  {"spatial_dims", e.spatial_dims},
                  {"in_channels", e.in_channels},
                  {"growth", e.growth}};
  j["decoder"] = {{"prototype", to_string(d.prototype)},
                  {"with_side_branches", d.with_side_branches},
                  {"with_fusion_layer", d.with_fusion_layer},
                  {"with_db_sequence", d.with_db_sequence},
                  {"num_classes", d.num_classes},
                  {"scale_channels", d.scale_channels}};
  j["batch_norm"] = {{"momentum", c.network.bn_momentum}, {"epsilon", c.network.bn_epsilon}};
  j["loss"] = {{"loss_kind", to_string(c.loss.loss_kind)},
               {"aux_weights", c.loss.aux_weights},
               {"global_weight", c.loss.global_weight}};
  j["task"] = {{"kind", to_string(c.task.kind)},   {"image_size", c.task.image_size},
               {"num_classes", c.task.num_classes}, {"thin_width", c.task.thin_width},
               {"noise_std", c.task.noise_std},     {"seed", c.task.seed},
               {"num_samples", c.task.num_samples}, {"spacing", c.task.spacing}};
  j["train"] = {{"steps", c.train.steps},
                {"batch", c.train.batch},
                {"seed", c.train.seed},
                {"learning_rate", c.train.learning_rate},
                {"init_std", c.train.init_std}};
  j["output_dir"] = c.output_dir;
  return j.dump(2) + "\n";
}

void validate(const RunConfig& c) {
  validate(c.task);
  const auto& e = c.network.encoder;
  if (e.spatial_dims != c.task.image_size.size()) {
    throw ConfigError("encoder.spatial_dims is " + std::to_string(e.spatial_dims) + " but task.image_size has " +
                      std::to_string(c.task.image_size.size()) + " axes");
  }
  if (e.in_channels != 1) throw ConfigError("encoder.in_channels must be 1 for synthetic tasks");
  if (c.network.decoder.num_classes != c.task.num_classes) {
    throw ConfigError("decoder.num_classes (" + std::to_string(c.network.decoder.num_classes) +
                      ") differs from task.num_classes (" + std::to_string(c.task.num_classes) + ")");
  }
  if (c.network.input_size != c.task.image_size) throw ConfigError("network input size must equal task.image_size");
  validate(c.network);
  if (c.train.batch == 0) throw ConfigError("train.batch must be positive");
  if (!(c.train.learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (!(c.train.init_std >= 0.0)) throw ConfigError("train.init_std must be >= 0");
  resolve_aux_weights(c.loss, Network<float>(c.network).num_branches());
}

}  // namespace cseg
