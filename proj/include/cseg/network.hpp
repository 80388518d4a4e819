#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "cseg/layers.hpp"

namespace cseg {

enum class EncoderPrototype { linear, residual, dense };
enum class DecoderPrototype { cascade, model_wise, scale_wise, layer_wise };

std::string to_string(EncoderPrototype p);
std::string to_string(DecoderPrototype p);
EncoderPrototype parse_encoder_prototype(const std::string& s);
DecoderPrototype parse_decoder_prototype(const std::string& s);

struct EncoderSpec {
  EncoderPrototype prototype = EncoderPrototype::linear;
  std::size_t k = 3;                               // number of encoding blocks / scales
  std::vector<std::size_t> channels{8, 16, 32};    // output channels of E_1..E_k
  std::size_t convs_per_block = 2;
  std::size_t spatial_dims = 2;
  std::size_t in_channels = 1;
  std::size_t growth = 0;  // dense prototype growth rate; 0 picks C_i / (2 * convs_per_block)

  bool operator==(const EncoderSpec&) const = default;
};

struct DecoderSpec {
  DecoderPrototype prototype = DecoderPrototype::cascade;
  bool with_side_branches = true;
  bool with_fusion_layer = true;
  bool with_db_sequence = true;
  std::size_t num_classes = 2;
  // Output channels of a decoding block landing on scale s (1-based, s < k).
  // Empty means the encoder schedule C_s.
  std::vector<std::size_t> scale_channels;

  bool operator==(const DecoderSpec&) const = default;
};

struct NetworkSpec {
  EncoderSpec encoder;
  DecoderSpec decoder;
  Extents input_size{64, 64};
  double bn_momentum = 0.9;
  double bn_epsilon = 1e-5;

  bool operator==(const NetworkSpec&) const = default;
};

/// Throws ConfigError / ShapeError when `spec` cannot be built.
void validate(const NetworkSpec& spec);

/// Decoder output channels for a block landing on scale s.
std::size_t decoder_scale_channels(const EncoderSpec& enc, const DecoderSpec& dec, std::size_t s);

/// Replacement deconvolution for branch D_i (i >= 3) in the collapsed
/// ablation: kernel 2^(i-2)+2, stride 2^(i-2), padding 1.
LeadingConv collapsed_deconv_geometry(std::size_t branch);

// --- module graph -----------------------------------------------------------

enum class Combine { none, concat, mean };

/// Role of a graph edge: ordinary data flow, a cascade side-branch
/// (B_i1 -> B_(i-1)1), or an encoder skip connection into the decoder path.
enum class EdgeRole { data, side_branch, skip };

std::string to_string(EdgeRole r);

/// Module-level computation graph. Node 0 is the network input; nodes are
/// stored in topological order and executed in that order. A node with
/// several inputs first combines them (channel concat or elementwise mean).
template <typename T>
struct ModuleGraph {
  struct Node {
    std::string name;
    std::string kind;  // input | encoder_block | decoding_block | collapsed_deconv | prediction_head | fusion | average
    std::vector<std::size_t> inputs;
    std::vector<EdgeRole> roles;
    Combine combine = Combine::none;
    std::unique_ptr<Module<T>> module;
    std::size_t branch = 0;  // decoding branch index i of D_i, 0 when not in a branch
  };

  EncoderSpec encoder;
  DecoderSpec decoder;
  std::vector<Node> nodes;
  std::vector<std::size_t> encoder_outputs;  // E_1..E_k
  std::vector<std::size_t> branch_heads;     // prediction heads, branch order
  std::size_t fused_logits = 0;
  double bn_momentum = 0.9;
  double bn_epsilon = 1e-5;

  std::size_t add(Node node);
  std::size_t find(const std::string& name) const;  // throws when absent
};

template <typename T>
ModuleGraph<T> make_graph(const NetworkSpec& spec);

/// Appends E_1..E_k after `input` and records them as encoder outputs.
template <typename T>
std::vector<std::size_t> build_encoder(ModuleGraph<T>& g, const EncoderSpec& spec, std::size_t input);

/// B_ij: 4^D deconv (stride 2, pad 1) + BN + ReLU, then two 3^D conv + BN + ReLU.
template <typename T>
std::unique_ptr<Sequential<T>> build_decoding_block(const std::string& path, std::size_t in_channels,
                                                    std::size_t out_channels, std::size_t spatial_dims);

/// Cascade decoder: k branches, side-branches for i = 3..k, fusion or
/// averaging of the branch logits. The DB sequence is always built in full;
/// the collapsed ablation is applied by collapse_db_sequence.
template <typename T>
void build_cascade_decoder(ModuleGraph<T>& g, const EncoderSpec& enc, const DecoderSpec& dec);

/// Model-wise, scale-wise or layer-wise decoder.
template <typename T>
void build_baseline_decoder(ModuleGraph<T>& g, const EncoderSpec& enc, const DecoderSpec& dec);

/// Replaces B_i2..B_i(i-1) of every branch i >= 3 with one deconvolution
/// mapping B_i1's output straight to full resolution.
template <typename T>
void collapse_db_sequence(ModuleGraph<T>& g);

// --- summary ----------------------------------------------------------------

struct GraphNodeSummary {
  std::size_t id = 0;
  std::string name;
  std::string kind;
  std::vector<std::size_t> inputs;
  std::string combine;
  FeatureShape input_shape;
  FeatureShape output_shape;
  std::optional<LeadingConv> conv;
  std::size_t parameter_count = 0;
  std::size_t branch = 0;
};

struct GraphEdgeSummary {
  std::size_t from = 0;
  std::size_t to = 0;
  EdgeRole role = EdgeRole::data;
};

struct GraphSummary {
  NetworkSpec spec;
  std::vector<GraphNodeSummary> nodes;
  std::vector<GraphEdgeSummary> edges;
  std::vector<std::size_t> branch_heads;
  std::size_t fused_logits = 0;
  std::size_t parameter_count = 0;

  std::size_t count_kind(const std::string& kind) const;
  std::size_t count_role(EdgeRole role) const;
  std::string to_json(int indent = 2) const;
};

// --- network ----------------------------------------------------------------

template <typename T>
struct NetworkOutput {
  Tensor<T> fused;          // softmax probabilities (N, classes, spatial...)
  Tensor<T> fused_logits;   // fusion-layer output or mean of branch logits
  std::vector<Tensor<T>> branch_logits;
};

template <typename T>
class Network {
 public:
  explicit Network(NetworkSpec spec);

  NetworkOutput<T> forward(Tape<T>* tape, const Tensor<T>& x, Mode mode);

  /// Trainable tensors in declaration order.
  std::vector<ParamRef<T>> parameters();
  /// Trainable tensors plus batch-norm running statistics.
  std::vector<ParamRef<T>> state();

  const NetworkSpec& spec() const { return spec_; }
  const GraphSummary& summary() const { return summary_; }
  std::size_t num_branches() const { return graph_.branch_heads.size(); }
  std::size_t parameter_count() const { return summary_.parameter_count; }

  /// Fusion 1^D convolution, or nullptr when the decoder has none.
  ConvParams<T>* fusion_params();
  Module<T>& module(const std::string& name);

 private:
  NetworkSpec spec_;
  ModuleGraph<T> graph_;
  GraphSummary summary_;
};

extern template class Network<float>;
extern template class Network<double>;

}  // namespace cseg
