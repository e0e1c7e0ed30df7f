#pragma once

#include <optional>
#include <string>
#include <vector>

#include "capmt/routing.hpp"
#include "capmt/tensor.hpp"
#include "capmt/transformer.hpp"
#include "capmt/visual.hpp"

namespace capmt {

enum class Variant {
  kFull,
  kGlobalOnly,
  kRegionalOnly,
  kAttentionGlobal,    // attention replaces routing for the global granularity
  kAttentionRegional,  // attention replaces routing for the regional granularity
  kAttentionBoth,
  kConventionalRouting,  // routing-by-agreement without context guidance
  kTextOnly,
};

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);
bool variant_uses_features(Variant v);

struct ModelConfig {
  std::int64_t d_model = 256;
  std::int64_t d_ff = 1024;  // 4 * d_model
  int n_heads = 8;
  int n_enc_layers = 4;
  int n_dec_layers = 4;
  std::int64_t d_capsule = VisualFeatures::kDim;
  int n_high = 1;        // high-level capsule count per network
  int n_iterations = 3;  // routing iterations
  double dropout = 0.5;
  std::int64_t src_vocab = 0;
  std::int64_t tgt_vocab = 0;
  Variant variant = Variant::kFull;
  bool train_class_embeddings = false;
  int n_classes = 0;  // class vocabulary when train_class_embeddings is set

  void validate() const;
};

struct GateParams {
  Tensor w_g, w_r;  // [d_model x d_model] each
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

// Single-head dot-product substitute for routing: the context column is the
// query, feature rows are mapped by one [d_model x d_capsule] matrix and used
// as both keys and values.
struct AttentionSubParams {
  Tensor w_kv;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

// Elementwise sigmoid gate convexly combining the two granularities.
Tensor fuse_gate(Graph& g, const GateParams& p, const Tensor& m_global,
                 const Tensor& m_regional, Tensor* alpha_out = nullptr);

Tensor attention_substitute(Graph& g, const AttentionSubParams& p, const Tensor& context,
                            const Tensor& features);

struct LastLayerParams {
  DccnParams dccn_global, dccn_regional;
  GateParams gate;
  AttentionSubParams attn_global, attn_regional;
  LayerNormParams norm_fusion;
  FfnParams ffn;
  LayerNormParams norm_ffn;
};

// Inputs to the fused last decoder layer for one sentence.
struct FeatureInput {
  Tensor global;    // [196 x d_c]
  Tensor regional;  // [R x d_c], active rows only
};

struct InspectRecord {
  struct TimestepTrace {
    RoutingTrace global, regional;
    std::vector<double> alpha;  // gate values, d_model entries (empty if no gate)
  };
  std::vector<TimestepTrace> timesteps;
};

// Applies dual routing + gate + FFN (per variant) over every column of the
// last layer's source-context matrix; residual + layer norm around both the
// fusion sublayer and the FFN sublayer.
Tensor last_layer_forward(Graph& g, const LastLayerParams& p, const Tensor& context_mat,
                          const std::optional<FeatureInput>& feats, Variant variant,
                          double dropout, InspectRecord* inspect = nullptr);

struct Model {
  ModelConfig cfg;
  EncoderStack encoder;
  DecoderStack decoder;
  LastLayerParams last;
  Tensor w_out;         // [tgt_vocab x d_model] output projection
  Tensor class_table;   // optional trainable class-annotation embeddings

  static Model make(const ModelConfig& cfg, std::uint64_t seed);

  std::vector<NamedTensor> named_params() const;
  void zero_grad() const;

  // Logits [tgt_vocab x len(tgt_in)] for a BOS-prefixed target prefix.
  Tensor forward(Graph& g, const std::vector<int>& src, const std::vector<int>& tgt_in,
                 const std::optional<FeatureInput>& feats, InspectRecord* inspect = nullptr) const;

  // Greedy decoding; returns emitted target ids without BOS/EOS. When
  // `inspect` is given, one routing/gate trace is captured per decode step.
  std::vector<int> translate(const std::vector<int>& src,
                             const std::optional<FeatureInput>& feats,
                             std::int64_t max_len = -1, InspectRecord* inspect = nullptr) const;

  // Frozen-feature path: tensors built straight from the container contents.
  std::optional<FeatureInput> feature_input(const VisualFeatures* feats) const;
  // Trainable-class-embedding path: regional rows looked up in the model's
  // class table (one-hot annotations) so gradients reach the embeddings.
  FeatureInput feature_input_trained(Graph& g, const VisualFeatures& feats,
                                     const std::vector<int>& region_classes) const;
};

// Per-column softmax over the output projection of decoder states.
Tensor predict(Graph& g, const Tensor& w_out, const Tensor& hidden);

}  // namespace capmt
