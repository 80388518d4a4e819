#include "cseg/network.hpp"

#include <algorithm>
#include <map>

#include "cseg/errors.hpp"
#include "json.hpp"

namespace cseg {

std::string to_string(EncoderPrototype p) {
  switch (p) {
    case EncoderPrototype::linear: return "linear";
    case EncoderPrototype::residual: return "residual";
    case EncoderPrototype::dense: return "dense";
  }
  return "?";
}

std::string to_string(DecoderPrototype p) {
  switch (p) {
    case DecoderPrototype::cascade: return "cascade";
    case DecoderPrototype::model_wise: return "model_wise";
    case DecoderPrototype::scale_wise: return "scale_wise";
    case DecoderPrototype::layer_wise: return "layer_wise";
  }
  return "?";
}

std::string to_string(EdgeRole r) {
  switch (r) {
    case EdgeRole::data: return "data";
    case EdgeRole::side_branch: return "side_branch";
    case EdgeRole::skip: return "skip";
  }
  return "?";
}

EncoderPrototype parse_encoder_prototype(const std::string& s) {
  if (s == "linear") return EncoderPrototype::linear;
  if (s == "residual") return EncoderPrototype::residual;
  if (s == "dense") return EncoderPrototype::dense;
  throw ConfigError("unknown encoder prototype '" + s + "' (expected linear | residual | dense)");
}

DecoderPrototype parse_decoder_prototype(const std::string& s) {
  if (s == "cascade") return DecoderPrototype::cascade;
  if (s == "model_wise") return DecoderPrototype::model_wise;
  if (s == "scale_wise") return DecoderPrototype::scale_wise;
  if (s == "layer_wise") return DecoderPrototype::layer_wise;
  throw ConfigError("unknown decoder prototype '" + s + "' (expected cascade | model_wise | scale_wise | layer_wise)");
}

namespace {

std::size_t dense_growth(const EncoderSpec& enc, std::size_t i) {
  if (enc.growth > 0) return enc.growth;
  return std::max<std::size_t>(1, enc.channels[i - 1] / (2 * enc.convs_per_block));
}

}  // namespace

void validate(const NetworkSpec& spec) {
  const auto& enc = spec.encoder;
  const auto& dec = spec.decoder;
  if (enc.k < 2) throw ConfigError("encoder.k must be >= 2");
  if (enc.channels.size() != enc.k) {
    throw ConfigError("encoder.channels must list k = " + std::to_string(enc.k) + " entries");
  }
  for (auto c : enc.channels)
    if (c == 0) throw ConfigError("encoder.channels entries must be >= 1");
  if (enc.convs_per_block == 0) throw ConfigError("encoder.convs_per_block must be >= 1");
  if (enc.spatial_dims != 2 && enc.spatial_dims != 3) throw ConfigError("encoder.spatial_dims must be 2 or 3");
  if (enc.in_channels == 0) throw ConfigError("encoder.in_channels must be >= 1");
  if (enc.prototype == EncoderPrototype::dense) {
    for (std::size_t i = 1; i <= enc.k; ++i) {
      if (enc.channels[i - 1] <= enc.convs_per_block * dense_growth(enc, i)) {
        throw ConfigError("dense encoder block E_" + std::to_string(i) +
                          ": channels must exceed convs_per_block * growth");
      }
    }
  }
  if (dec.num_classes < 2) throw ConfigError("decoder.num_classes must be >= 2");
  const bool default_flags = dec.with_side_branches && dec.with_fusion_layer && dec.with_db_sequence;
  if (dec.prototype != DecoderPrototype::cascade && !default_flags) {
    throw ConfigError("ablation flags are only valid for the cascade decoder");
  }
  if (!dec.scale_channels.empty()) {
    if (dec.scale_channels.size() != enc.k - 1) {
      throw ConfigError("decoder.scale_channels must list k - 1 = " + std::to_string(enc.k - 1) + " entries");
    }
    for (auto c : dec.scale_channels)
      if (c == 0) throw ConfigError("decoder.scale_channels entries must be >= 1");
  }
  if (spec.input_size.size() != enc.spatial_dims) {
    throw ShapeError("input_size has " + std::to_string(spec.input_size.size()) + " dims, encoder expects " +
                     std::to_string(enc.spatial_dims));
  }
  const std::size_t factor = std::size_t{1} << (enc.k - 1);
  for (auto e : spec.input_size) {
    if (e == 0 || e % factor != 0) {
      throw ShapeError("input extent " + std::to_string(e) + " is not divisible by 2^(k-1) = " +
                       std::to_string(factor));
    }
  }
}

std::size_t decoder_scale_channels(const EncoderSpec& enc, const DecoderSpec& dec, std::size_t s) {
  return dec.scale_channels.empty() ? enc.channels.at(s - 1) : dec.scale_channels.at(s - 1);
}

LeadingConv collapsed_deconv_geometry(std::size_t branch) {
  if (branch < 3) throw ConfigError("the DB sequence only exists for branches i >= 3");
  const std::size_t stride = std::size_t{1} << (branch - 2);
  return LeadingConv{true, stride + 2, stride, 1};
}

template <typename T>
std::size_t ModuleGraph<T>::add(Node node) {
  if (node.roles.empty()) node.roles.assign(node.inputs.size(), EdgeRole::data);
  if (node.inputs.size() > 1 && node.combine == Combine::none) node.combine = Combine::concat;
  nodes.push_back(std::move(node));
  return nodes.size() - 1;
}

template <typename T>
std::size_t ModuleGraph<T>::find(const std::string& name) const {
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].name == name) return i;
  throw ConfigError("no module named '" + name + "'");
}

template <typename T>
std::vector<std::size_t> build_encoder(ModuleGraph<T>& g, const EncoderSpec& spec, std::size_t input) {
  using Unit = ConvUnit<T>;
  using Opts = typename Unit::Options;
  const std::size_t D = spec.spatial_dims;
  std::vector<std::size_t> outputs;
  std::size_t prev_node = input;
  std::size_t prev_ch = spec.in_channels;
  for (std::size_t i = 1; i <= spec.k; ++i) {
    const std::string path = "encoder.E" + std::to_string(i);
    const std::size_t C = spec.channels[i - 1];
    const std::size_t entry_stride = i > 1 ? 2 : 1;
    std::unique_ptr<Module<T>> block;
    switch (spec.prototype) {
      case EncoderPrototype::linear: {
        std::vector<std::unique_ptr<Unit>> units;
        for (std::size_t j = 0; j < spec.convs_per_block; ++j) {
          units.push_back(std::make_unique<Unit>(path + ".conv" + std::to_string(j), j == 0 ? prev_ch : C, C, D,
                                                 Opts{3, 1, 1, false, true, true}));
        }
        block = std::make_unique<Sequential<T>>(std::move(units), i > 1 ? std::optional<std::size_t>(2) : std::nullopt);
        break;
      }
      case EncoderPrototype::residual: {
        auto entry = std::make_unique<Unit>(path + ".entry", prev_ch, C, D, Opts{3, entry_stride, 1, false, true, true});
        std::vector<std::unique_ptr<Unit>> body;
        for (std::size_t j = 0; j < spec.convs_per_block; ++j) {
          const bool last = j + 1 == spec.convs_per_block;
          body.push_back(std::make_unique<Unit>(path + ".body" + std::to_string(j), C, C, D,
                                                Opts{3, 1, 1, false, true, !last}));
        }
        block = std::make_unique<ResidualBlock<T>>(std::move(entry), std::move(body));
        break;
      }
      case EncoderPrototype::dense: {
        const std::size_t growth = dense_growth(spec, i);
        const std::size_t entry_ch = C - spec.convs_per_block * growth;
        auto entry =
            std::make_unique<Unit>(path + ".entry", prev_ch, entry_ch, D, Opts{3, entry_stride, 1, false, true, true});
        std::vector<std::unique_ptr<Unit>> layers;
        for (std::size_t j = 0; j < spec.convs_per_block; ++j) {
          layers.push_back(std::make_unique<Unit>(path + ".dense" + std::to_string(j), entry_ch + j * growth, growth,
                                                  D, Opts{3, 1, 1, false, true, true}));
        }
        block = std::make_unique<DenseBlock<T>>(std::move(entry), std::move(layers));
        break;
      }
    }
    typename ModuleGraph<T>::Node node;
    node.name = path;
    node.kind = "encoder_block";
    node.inputs = {prev_node};
    node.module = std::move(block);
    prev_node = g.add(std::move(node));
    prev_ch = C;
    outputs.push_back(prev_node);
  }
  g.encoder_outputs = outputs;
  return outputs;
}

template <typename T>
std::unique_ptr<Sequential<T>> build_decoding_block(const std::string& path, std::size_t in_channels,
                                                    std::size_t out_channels, std::size_t spatial_dims) {
  using Unit = ConvUnit<T>;
  using Opts = typename Unit::Options;
  std::vector<std::unique_ptr<Unit>> units;
  units.push_back(std::make_unique<Unit>(path + ".up", in_channels, out_channels, spatial_dims,
                                         Opts{4, 2, 1, true, true, true}));
  for (int j = 1; j <= 2; ++j) {
    units.push_back(std::make_unique<Unit>(path + ".conv" + std::to_string(j), out_channels, out_channels,
                                           spatial_dims, Opts{3, 1, 1, false, true, true}));
  }
  return std::make_unique<Sequential<T>>(std::move(units));
}

namespace {

template <typename T>
std::size_t add_block(ModuleGraph<T>& g, const std::string& name, std::vector<std::size_t> inputs,
                      std::vector<EdgeRole> roles, std::size_t in_ch, std::size_t out_ch, std::size_t branch) {
  typename ModuleGraph<T>::Node node;
  node.name = name;
  node.kind = "decoding_block";
  node.inputs = std::move(inputs);
  node.roles = std::move(roles);
  node.module = build_decoding_block<T>(name, in_ch, out_ch, g.encoder.spatial_dims);
  node.branch = branch;
  return g.add(std::move(node));
}

template <typename T>
std::size_t add_head(ModuleGraph<T>& g, const std::string& name, std::vector<std::size_t> inputs,
                     std::vector<EdgeRole> roles, std::size_t in_ch, std::size_t branch) {
  typename ModuleGraph<T>::Node node;
  node.name = name;
  node.kind = "prediction_head";
  node.inputs = std::move(inputs);
  node.roles = std::move(roles);
  node.module = std::make_unique<ConvUnit<T>>(name, in_ch, g.decoder.num_classes, g.encoder.spatial_dims,
                                              typename ConvUnit<T>::Options{3, 1, 1, false, false, false});
  node.branch = branch;
  return g.add(std::move(node));
}

std::string block_name(std::size_t i, std::size_t j) {
  return "decoder.D" + std::to_string(i) + ".B" + std::to_string(i) + std::to_string(j);
}

std::string head_name(std::size_t i) { return "decoder.D" + std::to_string(i) + ".head"; }

// Shared by cascade and scale-wise: per-scale branches, optional
// side-branches, fusion or average.
template <typename T>
void build_branches(ModuleGraph<T>& g, const EncoderSpec& enc, const DecoderSpec& dec, bool side_branches,
                    bool fusion) {
  const std::size_t k = enc.k;
  const auto& E = g.encoder_outputs;
  auto sc = [&](std::size_t s) { return decoder_scale_channels(enc, dec, s); };

  std::vector<std::size_t> first_block(k + 1, 0);
  for (std::size_t i = k; i >= 2; --i) {
    std::vector<std::size_t> inputs{E[i - 1]};
    std::vector<EdgeRole> roles{EdgeRole::data};
    std::size_t in_ch = enc.channels[i - 1];
    // D_(i+1) feeds B_(i+1)1's output into B_i1 (side-branch D'_(i+1)).
    if (side_branches && i + 1 <= k) {
      inputs.push_back(first_block[i + 1]);
      roles.push_back(EdgeRole::side_branch);
      in_ch += sc(i);
    }
    first_block[i] = add_block(g, block_name(i, 1), std::move(inputs), std::move(roles), in_ch, sc(i - 1), i);
  }

  g.branch_heads.clear();
  g.branch_heads.push_back(add_head(g, head_name(1), {E[0]}, {}, enc.channels[0], 1));
  for (std::size_t i = 2; i <= k; ++i) {
    std::size_t h = first_block[i];
    for (std::size_t j = 2; j <= i - 1; ++j) {
      h = add_block(g, block_name(i, j), {h}, {}, sc(i - j + 1), sc(i - j), i);
    }
    g.branch_heads.push_back(add_head(g, head_name(i), {h}, {}, sc(1), i));
  }

  typename ModuleGraph<T>::Node out;
  out.inputs = g.branch_heads;
  if (fusion) {
    out.name = "decoder.fusion";
    out.kind = "fusion";
    out.combine = Combine::concat;
    out.module = std::make_unique<ConvUnit<T>>(out.name, k * dec.num_classes, dec.num_classes, enc.spatial_dims,
                                               typename ConvUnit<T>::Options{1, 1, 0, false, false, false});
  } else {
    out.name = "decoder.average";
    out.kind = "average";
    out.combine = Combine::mean;
  }
  g.fused_logits = g.add(std::move(out));
}

}  // namespace

template <typename T>
void build_cascade_decoder(ModuleGraph<T>& g, const EncoderSpec& enc, const DecoderSpec& dec) {
  if (dec.prototype != DecoderPrototype::cascade) throw ConfigError("build_cascade_decoder needs prototype cascade");
  if (g.encoder_outputs.size() != enc.k) throw ConfigError("encoder must be built before the decoder");
  build_branches(g, enc, dec, dec.with_side_branches, dec.with_fusion_layer);
}

template <typename T>
void build_baseline_decoder(ModuleGraph<T>& g, const EncoderSpec& enc, const DecoderSpec& dec) {
  if (g.encoder_outputs.size() != enc.k) throw ConfigError("encoder must be built before the decoder");
  const std::size_t k = enc.k;
  const auto& E = g.encoder_outputs;
  auto sc = [&](std::size_t s) { return decoder_scale_channels(enc, dec, s); };
  switch (dec.prototype) {
    case DecoderPrototype::cascade:
      throw ConfigError("build_baseline_decoder does not build the cascade decoder");
    case DecoderPrototype::scale_wise:
      build_branches(g, enc, dec, false, true);
      return;
    case DecoderPrototype::model_wise: {
      std::size_t h = E[k - 1];
      std::size_t in_ch = enc.channels[k - 1];
      for (std::size_t j = 1; j <= k - 1; ++j) {
        h = add_block(g, block_name(k, j), {h}, {}, in_ch, sc(k - j), k);
        in_ch = sc(k - j);
      }
      g.branch_heads = {add_head(g, head_name(k), {h}, {}, in_ch, k)};
      g.fused_logits = g.branch_heads.front();
      return;
    }
    case DecoderPrototype::layer_wise: {
      std::vector<std::size_t> inputs{E[k - 1]};
      std::vector<EdgeRole> roles{EdgeRole::data};
      std::size_t in_ch = enc.channels[k - 1];
      for (std::size_t s = k - 1; s >= 1; --s) {
        const std::string name = "decoder.L" + std::to_string(s);
        const std::size_t h = add_block(g, name, inputs, roles, in_ch, sc(s), 0);
        // The skip from the encoder block at the landing scale joins the next step.
        inputs = {h, E[s - 1]};
        roles = {EdgeRole::data, EdgeRole::skip};
        in_ch = sc(s) + enc.channels[s - 1];
      }
      g.branch_heads = {add_head(g, "decoder.head", inputs, roles, in_ch, 0)};
      g.fused_logits = g.branch_heads.front();
      return;
    }
  }
}

template <typename T>
void collapse_db_sequence(ModuleGraph<T>& g) {
  if (g.decoder.prototype != DecoderPrototype::cascade) {
    throw ConfigError("the DB-sequence ablation applies only to the cascade decoder");
  }
  const std::size_t k = g.encoder.k;
  for (std::size_t i = 3; i <= k; ++i) {
    const std::size_t first = g.find(block_name(i, 1));
    const std::size_t head = g.find(head_name(i));
    std::vector<std::size_t> removed;
    for (std::size_t j = 2; j <= i - 1; ++j) removed.push_back(g.find(block_name(i, j)));
    const std::size_t insert_at = *std::min_element(removed.begin(), removed.end());

    const LeadingConv geo = collapsed_deconv_geometry(i);
    typename ModuleGraph<T>::Node node;
    node.name = "decoder.D" + std::to_string(i) + ".collapse";
    node.kind = "collapsed_deconv";
    node.inputs = {first};
    node.roles = {EdgeRole::data};
    node.branch = i;
    node.module = std::make_unique<ConvUnit<T>>(
        node.name, decoder_scale_channels(g.encoder, g.decoder, i - 1), decoder_scale_channels(g.encoder, g.decoder, 1),
        g.encoder.spatial_dims, typename ConvUnit<T>::Options{geo.kernel, geo.stride, geo.padding, true, false, false});

    // Rebuild the node list: drop the removed blocks, put the replacement in
    // the first removed slot, and renumber all references.
    std::vector<typename ModuleGraph<T>::Node> rebuilt;
    std::vector<std::size_t> remap(g.nodes.size(), static_cast<std::size_t>(-1));
    std::size_t collapsed_id = 0;
    for (std::size_t n = 0; n < g.nodes.size(); ++n) {
      if (n == insert_at) {
        collapsed_id = rebuilt.size();
        rebuilt.push_back(std::move(node));
      }
      if (std::find(removed.begin(), removed.end(), n) != removed.end()) continue;
      remap[n] = rebuilt.size();
      rebuilt.push_back(std::move(g.nodes[n]));
    }
    for (std::size_t n = 0; n < rebuilt.size(); ++n) {
      if (n == remap[head]) continue;
      for (auto& in : rebuilt[n].inputs) in = remap[in];
    }
    rebuilt[remap[head]].inputs = {collapsed_id};
    rebuilt[remap[head]].roles = {EdgeRole::data};
    for (auto& e : g.encoder_outputs) e = remap[e];
    for (auto& h : g.branch_heads) h = remap[h];
    g.fused_logits = remap[g.fused_logits];
    g.nodes = std::move(rebuilt);
  }
}

template <typename T>
ModuleGraph<T> make_graph(const NetworkSpec& spec) {
  validate(spec);
  ModuleGraph<T> g;
  g.encoder = spec.encoder;
  g.decoder = spec.decoder;
  g.bn_momentum = spec.bn_momentum;
  g.bn_epsilon = spec.bn_epsilon;
  typename ModuleGraph<T>::Node input;
  input.name = "input";
  input.kind = "input";
  const std::size_t in = g.add(std::move(input));
  build_encoder(g, spec.encoder, in);
  if (spec.decoder.prototype == DecoderPrototype::cascade) {
    build_cascade_decoder(g, spec.encoder, spec.decoder);
    if (!spec.decoder.with_db_sequence) collapse_db_sequence(g);
  } else {
    build_baseline_decoder(g, spec.encoder, spec.decoder);
  }
  return g;
}

namespace {

template <typename T>
GraphSummary summarize(ModuleGraph<T>& g, const NetworkSpec& spec) {
  GraphSummary s;
  s.spec = spec;
  s.branch_heads = g.branch_heads;
  s.fused_logits = g.fused_logits;
  std::vector<FeatureShape> shapes(g.nodes.size());
  for (std::size_t id = 0; id < g.nodes.size(); ++id) {
    auto& node = g.nodes[id];
    GraphNodeSummary ns;
    ns.id = id;
    ns.name = node.name;
    ns.kind = node.kind;
    ns.inputs = node.inputs;
    ns.branch = node.branch;
    ns.combine = node.combine == Combine::concat ? "concat" : node.combine == Combine::mean ? "mean" : "none";
    FeatureShape in;
    if (node.inputs.empty()) {
      in = FeatureShape{spec.encoder.in_channels, spec.input_size};
    } else {
      in = shapes[node.inputs.front()];
      for (std::size_t j = 1; j < node.inputs.size(); ++j) {
        const auto& other = shapes[node.inputs[j]];
        if (other.spatial != in.spatial) {
          throw ShapeError("internal consistency error: '" + node.name + "' combines inputs at different scales " +
                           to_string(in.spatial) + " and " + to_string(other.spatial));
        }
        if (node.combine == Combine::concat) {
          in.channels += other.channels;
        } else if (other.channels != in.channels) {
          throw ShapeError("internal consistency error: '" + node.name + "' averages different channel counts");
        }
      }
    }
    ns.input_shape = in;
    ns.output_shape = node.module ? node.module->output_shape(in) : in;
    if (node.module) {
      ns.conv = node.module->leading_conv();
      ns.parameter_count = node.module->parameter_count();
    }
    shapes[id] = ns.output_shape;
    s.parameter_count += ns.parameter_count;
    for (std::size_t j = 0; j < node.inputs.size(); ++j) {
      s.edges.push_back({node.inputs[j], id, node.roles.at(j)});
    }
    s.nodes.push_back(std::move(ns));
  }
  for (auto h : g.branch_heads) {
    if (shapes[h].spatial != spec.input_size) {
      throw ShapeError("internal consistency error: branch prediction is not at full resolution");
    }
  }
  return s;
}

nlohmann::json shape_json(const FeatureShape& f) {
  return nlohmann::json{{"channels", f.channels}, {"spatial", f.spatial}};
}

}  // namespace

std::size_t GraphSummary::count_kind(const std::string& kind) const {
  return static_cast<std::size_t>(
      std::count_if(nodes.begin(), nodes.end(), [&](const GraphNodeSummary& n) { return n.kind == kind; }));
}

std::size_t GraphSummary::count_role(EdgeRole role) const {
  return static_cast<std::size_t>(
      std::count_if(edges.begin(), edges.end(), [&](const GraphEdgeSummary& e) { return e.role == role; }));
}

std::string GraphSummary::to_json(int indent) const {
  using nlohmann::json;
  json j;
  j["encoder"] = {{"prototype", cseg::to_string(spec.encoder.prototype)},
                  {"k", spec.encoder.k},
                  {"channels", spec.encoder.channels},
                  {"convs_per_block", spec.encoder.convs_per_block},
                  {"spatial_dims", spec.encoder.spatial_dims},
                  {"in_channels", spec.encoder.in_channels}};
  j["decoder"] = {{"prototype", cseg::to_string(spec.decoder.prototype)},
                  {"with_side_branches", spec.decoder.with_side_branches},
                  {"with_fusion_layer", spec.decoder.with_fusion_layer},
                  {"with_db_sequence", spec.decoder.with_db_sequence},
                  {"num_classes", spec.decoder.num_classes}};
  j["input_size"] = spec.input_size;
  j["counts"] = {{"decoding_blocks", count_kind("decoding_block")},
                 {"collapsed_deconvs", count_kind("collapsed_deconv")},
                 {"branch_predictions", branch_heads.size()},
                 {"side_branches", count_role(EdgeRole::side_branch)},
                 {"skip_connections", count_role(EdgeRole::skip)},
                 {"nodes", nodes.size()},
                 {"edges", edges.size()}};
  j["parameter_count"] = parameter_count;
  j["branch_heads"] = branch_heads;
  j["fused_logits"] = fused_logits;
  json jn = json::array();
  for (const auto& n : nodes) {
    json e{{"id", n.id},
           {"name", n.name},
           {"kind", n.kind},
           {"inputs", n.inputs},
           {"combine", n.combine},
           {"input_shape", shape_json(n.input_shape)},
           {"output_shape", shape_json(n.output_shape)},
           {"parameter_count", n.parameter_count},
           {"branch", n.branch}};
    if (n.conv) {
      e["conv"] = {{"transposed", n.conv->transposed},
                   {"kernel", n.conv->kernel},
                   {"stride", n.conv->stride},
                   {"padding", n.conv->padding}};
    }
    jn.push_back(std::move(e));
  }
  j["nodes"] = std::move(jn);
  json je = json::array();
  for (const auto& e : edges) je.push_back({{"from", e.from}, {"to", e.to}, {"role", cseg::to_string(e.role)}});
  j["edges"] = std::move(je);
  return j.dump(indent);
}

template <typename T>
Network<T>::Network(NetworkSpec spec) : spec_(std::move(spec)), graph_(make_graph<T>(spec_)) {
  for (auto& node : graph_.nodes) {
    if (!node.module) continue;
    node.module->visit_units([&](ConvUnit<T>& u) {
      if (auto* bn = u.bn()) {
        bn->momentum = spec_.bn_momentum;
        bn->epsilon = spec_.bn_epsilon;
      }
    });
  }
  summary_ = summarize(graph_, spec_);
}

template <typename T>
NetworkOutput<T> Network<T>::forward(Tape<T>* tape, const Tensor<T>& x, Mode mode) {
  Shape expect{x.rank() > 0 ? x.dim(0) : 0, spec_.encoder.in_channels};
  expect.insert(expect.end(), spec_.input_size.begin(), spec_.input_size.end());
  if (x.shape() != expect) {
    throw ShapeError("network input must have shape (N, " + std::to_string(spec_.encoder.in_channels) + ", " +
                     to_string(spec_.input_size).substr(1) + ", got " + to_string(x.shape()));
  }
  std::vector<Tensor<T>> values(graph_.nodes.size());
  values[0] = x;
  for (std::size_t id = 1; id < graph_.nodes.size(); ++id) {
    auto& node = graph_.nodes[id];
    ScopeGuard<T> scope(tape, node.name);
    Tensor<T> in;
    if (node.inputs.size() == 1) {
      in = values[node.inputs[0]];
    } else {
      std::vector<Tensor<T>> parts;
      for (auto i : node.inputs) parts.push_back(values[i]);
      in = node.combine == Combine::mean ? mean_elementwise(tape, parts) : concat_channels(tape, parts);
    }
    values[id] = node.module ? node.module->forward(tape, in, mode) : in;
  }
  NetworkOutput<T> out;
  for (auto h : graph_.branch_heads) out.branch_logits.push_back(values[h]);
  out.fused_logits = values[graph_.fused_logits];
  {
    ScopeGuard<T> scope(tape, "output");
    out.fused = softmax_channels(tape, out.fused_logits);
  }
  return out;
}

template <typename T>
std::vector<ParamRef<T>> Network<T>::state() {
  std::vector<ParamRef<T>> refs;
  for (auto& node : graph_.nodes)
    if (node.module) node.module->collect(refs);
  return refs;
}

template <typename T>
std::vector<ParamRef<T>> Network<T>::parameters() {
  auto all = state();
  std::vector<ParamRef<T>> params;
  for (auto& p : all)
    if (p.trainable) params.push_back(std::move(p));
  return params;
}

template <typename T>
ConvParams<T>* Network<T>::fusion_params() {
  for (auto& node : graph_.nodes) {
    if (node.kind == "fusion") return &static_cast<ConvUnit<T>*>(node.module.get())->conv();
  }
  return nullptr;
}

template <typename T>
Module<T>& Network<T>::module(const std::string& name) {
  auto& node = graph_.nodes[graph_.find(name)];
  if (!node.module) throw ConfigError("node '" + name + "' has no module");
  return *node.module;
}

#define CSEG_INSTANTIATE_NET(T)                                                                                \
  template struct ModuleGraph<T>;                                                                              \
  template ModuleGraph<T> make_graph<T>(const NetworkSpec&);                                                   \
  template std::vector<std::size_t> build_encoder<T>(ModuleGraph<T>&, const EncoderSpec&, std::size_t);        \
  template std::unique_ptr<Sequential<T>> build_decoding_block<T>(const std::string&, std::size_t, std::size_t, \
                                                                  std::size_t);                                \
  template void build_cascade_decoder<T>(ModuleGraph<T>&, const EncoderSpec&, const DecoderSpec&);             \
  template void build_baseline_decoder<T>(ModuleGraph<T>&, const EncoderSpec&, const DecoderSpec&);            \
  template void collapse_db_sequence<T>(ModuleGraph<T>&);                                                      \
  template class Network<T>;

CSEG_INSTANTIATE_NET(float)
CSEG_INSTANTIATE_NET(double)

#undef CSEG_INSTANTIATE_NET

}  // namespace cseg
