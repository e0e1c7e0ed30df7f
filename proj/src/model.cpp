#include "capmt/model.hpp"

#include <algorithm>
#include <cmath>

#include "capmt/error.hpp"

namespace capmt {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kGlobalOnly: return "global-only";
    case Variant::kRegionalOnly: return "regional-only";
    case Variant::kAttentionGlobal: return "attention-for-global";
    case Variant::kAttentionRegional: return "attention-for-regional";
    case Variant::kAttentionBoth: return "attention-both";
    case Variant::kConventionalRouting: return "conventional-routing";
    case Variant::kTextOnly: return "text-only";
  }
  return "full";
}

Variant variant_from_name(const std::string& name) {
  for (Variant v : {Variant::kFull, Variant::kGlobalOnly, Variant::kRegionalOnly,
                    Variant::kAttentionGlobal, Variant::kAttentionRegional,
                    Variant::kAttentionBoth, Variant::kConventionalRouting, Variant::kTextOnly})
    if (variant_name(v) == name) return v;
  throw ConfigError("unknown variant '" + name + "'");
}

bool variant_uses_features(Variant v) { return v != Variant::kTextOnly; }

namespace {

bool uses_global(Variant v) {
  return v != Variant::kTextOnly && v != Variant::kRegionalOnly;
}
bool uses_regional(Variant v) {
  return v != Variant::kTextOnly && v != Variant::kGlobalOnly;
}
bool uses_gate(Variant v) { return uses_global(v) && uses_regional(v); }
bool global_is_attention(Variant v) {
  return v == Variant::kAttentionGlobal || v == Variant::kAttentionBoth;
}
bool regional_is_attention(Variant v) {
  return v == Variant::kAttentionRegional || v == Variant::kAttentionBoth;
}

}  // namespace

void ModelConfig::validate() const {
  if (d_model <= 0 || d_ff <= 0 || d_capsule < 2) throw ConfigError("bad model dimensions");
  if (n_heads <= 0 || d_model % n_heads != 0)
    throw ConfigError("model dimension " + std::to_string(d_model) +
                      " not divisible by head count " + std::to_string(n_heads));
  if (n_enc_layers < 1 || n_dec_layers < 1) throw ConfigError("layer counts must be positive");
  if (n_high < 1 || n_iterations < 1) throw ConfigError("bad routing configuration");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
  if (src_vocab <= 0 || tgt_vocab <= 0) throw ConfigError("vocabulary sizes are not set");
  if (train_class_embeddings && n_classes <= 0)
    throw ConfigError("train_class_embeddings requires n_classes");
}

void GateParams::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".w_g", w_g});
  out.push_back({prefix + ".w_r", w_r});
}

void AttentionSubParams::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".w_kv", w_kv});
}

Tensor fuse_gate(Graph& g, const GateParams& p, const Tensor& m_global, const Tensor& m_regional,
                 Tensor* alpha_out) {
  for (double v : m_global.value())
    if (!std::isfinite(v)) throw NumericError("non-finite global context vector in gate");
  for (double v : m_regional.value())
    if (!std::isfinite(v)) throw NumericError("non-finite regional context vector in gate");
  Tensor alpha = g.sigmoid(g.add(g.matmul(p.w_g, m_global), g.matmul(p.w_r, m_regional)));
  if (alpha_out) *alpha_out = alpha;
  Tensor complement = g.add_scalar(g.scale(alpha, -1.0), 1.0);
  return g.add(g.mul(alpha, m_global), g.mul(complement, m_regional));
}

Tensor attention_substitute(Graph& g, const AttentionSubParams& p, const Tensor& context,
                            const Tensor& features) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(context.numel()));
  Tensor mapped = g.matmul_nt(features, p.w_kv);      // rows: (W_kv I_i)^T, [N x d_model]
  Tensor scores = g.scale(g.matmul(mapped, context), scale);  // [N x 1]
  Tensor weights = g.softmax(scores, 0);
  return g.matmul_tn(mapped, weights);  // [d_model x 1]
}

Tensor predict(Graph& g, const Tensor& w_out, const Tensor& hidden) {
  return g.softmax(g.matmul(w_out, hidden), 0);
}

namespace {

struct GranularityPrecomp {
  RoutePrecomp route;       // for routing variants
  bool has_route = false;
};

// One timestep of the fusion sublayer: the raw multimodal context vector for
// a single context column, before residual + norm.
Tensor fused_column(Graph& g, const LastLayerParams& p, const Tensor& ctx_col,
                    const std::optional<FeatureInput>& feats, Variant variant,
                    const GranularityPrecomp& pre_g, const GranularityPrecomp& pre_r,
                    InspectRecord::TimestepTrace* trace) {
  Tensor m_global, m_regional;
  if (uses_global(variant)) {
    if (global_is_attention(variant)) {
      m_global = attention_substitute(g, p.attn_global, ctx_col, feats->global);
    } else if (variant == Variant::kConventionalRouting) {
      m_global = route_conventional_precomputed(g, p.dccn_global, pre_g.route,
                                                trace ? &trace->global : nullptr);
    } else {
      m_global = route_precomputed(g, p.dccn_global, ctx_col, pre_g.route,
                                   trace ? &trace->global : nullptr);
    }
  }
  if (uses_regional(variant)) {
    if (regional_is_attention(variant)) {
      m_regional = attention_substitute(g, p.attn_regional, ctx_col, feats->regional);
    } else if (variant == Variant::kConventionalRouting) {
      m_regional = route_conventional_precomputed(g, p.dccn_regional, pre_r.route,
                                                  trace ? &trace->regional : nullptr);
    } else {
      m_regional = route_precomputed(g, p.dccn_regional, ctx_col, pre_r.route,
                                     trace ? &trace->regional : nullptr);
    }
  }
  if (!uses_gate(variant)) return uses_global(variant) ? m_global : m_regional;

  Tensor alpha;
  Tensor fused = fuse_gate(g, p.gate, m_global, m_regional, trace ? &alpha : nullptr);
  if (trace) trace->alpha = alpha.value();
  return fused;
}

void require_features(const std::optional<FeatureInput>& feats, Variant variant) {
  if (!variant_uses_features(variant)) return;
  if (!feats) throw InputError("variant '" + variant_name(variant) + "' needs visual features");
  if (uses_global(variant) && !feats->global.defined())
    throw InputError("global visual features are missing");
  if (uses_regional(variant) && !feats->regional.defined())
    throw InputError("regional visual features are missing");
}

GranularityPrecomp make_precomp(Graph& g, const DccnParams& params, const Tensor& features,
                                bool routing_needed) {
  GranularityPrecomp pre;
  if (routing_needed) {
    pre.route = make_route_precomp(g, params, features);
    pre.has_route = true;
  }
  return pre;
}

}  // namespace

Tensor last_layer_forward(Graph& g, const LastLayerParams& p, const Tensor& context_mat,
                          const std::optional<FeatureInput>& feats, Variant variant,
                          double dropout, InspectRecord* inspect) {
  require_features(feats, variant);
  if (variant == Variant::kTextOnly) {
    Tensor ff = ffn_forward(g, p.ffn, context_mat);
    return residual_norm(g, p.norm_ffn, context_mat, ff, dropout);
  }

  const std::int64_t len = context_mat.shape()[1];
  GranularityPrecomp pre_g, pre_r;
  if (uses_global(variant) && !global_is_attention(variant))
    pre_g = make_precomp(g, p.dccn_global, feats->global, true);
  if (uses_regional(variant) && !regional_is_attention(variant))
    pre_r = make_precomp(g, p.dccn_regional, feats->regional, true);

  std::vector<Tensor> columns;
  columns.reserve(static_cast<std::size_t>(len));
  for (std::int64_t t = 0; t < len; ++t) {
    InspectRecord::TimestepTrace* trace = nullptr;
    if (inspect) {
      inspect->timesteps.emplace_back();
      trace = &inspect->timesteps.back();
    }
    columns.push_back(
        fused_column(g, p, g.slice_col(context_mat, t), feats, variant, pre_g, pre_r, trace));
  }
  Tensor fused = len == 1 ? columns[0] : g.concat_cols(columns);
  Tensor normed = residual_norm(g, p.norm_fusion, context_mat, fused, dropout);
  Tensor ff = ffn_forward(g, p.ffn, normed);
  return residual_norm(g, p.norm_ffn, normed, ff, dropout);
}

Model Model::make(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  Rng master(seed);
  Rng enc_rng = master.fork("encoder");
  Rng dec_rng = master.fork("decoder");
  Rng last_rng = master.fork("last_layer");
  Rng out_rng = master.fork("output");

  m.encoder = make_encoder(cfg.src_vocab, cfg.d_model, cfg.d_ff, cfg.n_heads, cfg.n_enc_layers,
                           cfg.dropout, enc_rng);
  m.decoder = make_decoder(cfg.tgt_vocab, cfg.d_model, cfg.d_ff, cfg.n_heads, cfg.n_dec_layers,
                           cfg.dropout, dec_rng);

  const Variant v = cfg.variant;
  DccnConfig dc{cfg.d_capsule, cfg.d_model, cfg.n_high, cfg.n_iterations};
  if (uses_global(v)) {
    if (global_is_attention(v)) {
      Rng r = last_rng.fork("attn_global");
      m.last.attn_global.w_kv = Tensor::param({cfg.d_model, cfg.d_capsule}, r);
    } else {
      Rng r = last_rng.fork("dccn_global");
      m.last.dccn_global = make_dccn(dc, r);
    }
  }
  if (uses_regional(v)) {
    if (regional_is_attention(v)) {
      Rng r = last_rng.fork("attn_regional");
      m.last.attn_regional.w_kv = Tensor::param({cfg.d_model, cfg.d_capsule}, r);
    } else {
      Rng r = last_rng.fork("dccn_regional");
      m.last.dccn_regional = make_dccn(dc, r);
    }
  }
  if (uses_gate(v)) {
    Rng r = last_rng.fork("gate");
    m.last.gate.w_g = Tensor::param({cfg.d_model, cfg.d_model}, r);
    m.last.gate.w_r = Tensor::param({cfg.d_model, cfg.d_model}, r);
  }
  if (v != Variant::kTextOnly) {
    m.last.norm_fusion = make_layer_norm(cfg.d_model);
    for (double& x : m.last.norm_fusion.gain.value()) x = 1.0;
  }
  {
    Rng r = last_rng.fork("ffn");
    m.last.ffn = make_ffn(cfg.d_model, cfg.d_ff, r);
    m.last.norm_ffn = make_layer_norm(cfg.d_model);
    for (double& x : m.last.norm_ffn.gain.value()) x = 1.0;
  }
  m.w_out = Tensor::param({cfg.tgt_vocab, cfg.d_model}, out_rng);
  if (cfg.train_class_embeddings) {
    Rng r = master.fork("class_table");
    m.class_table = Tensor::param({cfg.n_classes, cfg.d_capsule}, r);
  }
  return m;
}

std::vector<NamedTensor> Model::named_params() const {
  std::vector<NamedTensor> out;
  encoder.collect("encoder", out);
  decoder.collect("decoder", out);
  const Variant v = cfg.variant;
  if (uses_global(v)) {
    if (global_is_attention(v))
      last.attn_global.collect("last.attn_global", out);
    else
      last.dccn_global.collect("last.dccn_global", out);
  }
  if (uses_regional(v)) {
    if (regional_is_attention(v))
      last.attn_regional.collect("last.attn_regional", out);
    else
      last.dccn_regional.collect("last.dccn_regional", out);
  }
  if (uses_gate(v)) last.gate.collect("last.gate", out);
  if (v != Variant::kTextOnly) {
    out.push_back({"last.norm_fusion.gain", last.norm_fusion.gain});
    out.push_back({"last.norm_fusion.bias", last.norm_fusion.bias});
  }
  out.push_back({"last.ffn.w1", last.ffn.w1});
  out.push_back({"last.ffn.b1", last.ffn.b1});
  out.push_back({"last.ffn.w2", last.ffn.w2});
  out.push_back({"last.ffn.b2", last.ffn.b2});
  out.push_back({"last.norm_ffn.gain", last.norm_ffn.gain});
  out.push_back({"last.norm_ffn.bias", last.norm_ffn.bias});
  out.push_back({"output.w", w_out});
  if (cfg.train_class_embeddings) out.push_back({"class_embeddings.table", class_table});
  return out;
}

void Model::zero_grad() const {
  for (const NamedTensor& p : named_params()) p.tensor.zero_grad();
}

Tensor Model::forward(Graph& g, const std::vector<int>& src, const std::vector<int>& tgt_in,
                      const std::optional<FeatureInput>& feats, InspectRecord* inspect) const {
  Tensor enc = encoder.forward(g, src);
  DecodePrefixResult dec = decoder.decode_prefix(g, tgt_in, enc, enc.shape()[1]);
  Tensor t_last =
      last_layer_forward(g, last, dec.context, feats, cfg.variant, cfg.dropout, inspect);
  return g.matmul(w_out, t_last);
}

std::optional<FeatureInput> Model::feature_input(const VisualFeatures* feats) const {
  if (!variant_uses_features(cfg.variant)) return std::nullopt;
  if (!feats) throw InputError("variant '" + variant_name(cfg.variant) +
                               "' needs visual features");
  FeatureInput in;
  if (uses_global(cfg.variant)) in.global = feats->global_tensor();
  if (uses_regional(cfg.variant)) in.regional = feats->regional_active_tensor();
  return in;
}

FeatureInput Model::feature_input_trained(Graph& g, const VisualFeatures& feats,
                                          const std::vector<int>& region_classes) const {
  if (!cfg.train_class_embeddings)
    throw UsageError("model was not built with trainable class embeddings");
  FeatureInput in;
  if (uses_global(cfg.variant)) in.global = feats.global_tensor();
  if (uses_regional(cfg.variant)) {
    if (region_classes.empty()) throw InputError("no region annotations for sentence");
    std::vector<std::int64_t> rows(region_classes.begin(), region_classes.end());
    in.regional = g.gather_rows(class_table, rows);
  }
  return in;
}

std::vector<int> Model::translate(const std::vector<int>& src,
                                  const std::optional<FeatureInput>& feats,
                                  std::int64_t max_len, InspectRecord* inspect) const {
  constexpr int kBos = 1, kEos = 2;
  if (max_len < 0) max_len = 2 * static_cast<std::int64_t>(src.size()) + 10;
  require_features(feats, cfg.variant);

  Graph g(Graph::Mode::kInfer);
  Tensor enc = encoder.forward(g, src);

  GranularityPrecomp pre_g, pre_r;
  if (feats) {
    if (uses_global(cfg.variant) && !global_is_attention(cfg.variant))
      pre_g = make_precomp(g, last.dccn_global, feats->global, true);
    if (uses_regional(cfg.variant) && !regional_is_attention(cfg.variant))
      pre_r = make_precomp(g, last.dccn_regional, feats->regional, true);
  }

  std::vector<int> prefix{kBos};
  std::vector<int> emitted;
  while (static_cast<std::int64_t>(emitted.size()) < max_len) {
    DecodePrefixResult dec = decoder.decode_prefix(g, prefix, enc, enc.shape()[1]);
    const std::int64_t t = dec.context.shape()[1] - 1;
    Tensor ctx_col = g.slice_col(dec.context, t);
    Tensor hidden_col;
    if (cfg.variant == Variant::kTextOnly) {
      Tensor ff = ffn_forward(g, last.ffn, ctx_col);
      hidden_col = residual_norm(g, last.norm_ffn, ctx_col, ff, 0.0);
    } else {
      InspectRecord::TimestepTrace* trace = nullptr;
      if (inspect) {
        inspect->timesteps.emplace_back();
        trace = &inspect->timesteps.back();
      }
      Tensor fused = fused_column(g, last, ctx_col, feats, cfg.variant, pre_g, pre_r, trace);
      Tensor normed = residual_norm(g, last.norm_fusion, ctx_col, fused, 0.0);
      Tensor ff = ffn_forward(g, last.ffn, normed);
      hidden_col = residual_norm(g, last.norm_ffn, normed, ff, 0.0);
    }
    Tensor logits = g.matmul(w_out, hidden_col);
    int best = 0;
    double best_v = logits.value()[0];
    for (std::int64_t i = 1; i < logits.numel(); ++i)
      if (logits.value()[static_cast<std::size_t>(i)] > best_v) {
        best_v = logits.value()[static_cast<std::size_t>(i)];
        best = static_cast<int>(i);
      }
    if (best == kEos) break;
    emitted.push_back(best);
    prefix.push_back(best);
  }
  return emitted;
}

}  // namespace capmt
