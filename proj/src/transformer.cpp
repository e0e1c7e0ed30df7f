#include "capmt/transformer.hpp"

#include <cmath>

#include "capmt/error.hpp"

namespace capmt {

LayerNormParams make_layer_norm(std::int64_t d) {
  return {Tensor::param_zeros({d, 1}), Tensor::param_zeros({d, 1})};
}

namespace {

LayerNormParams make_layer_norm_init(std::int64_t d) {
  LayerNormParams p = make_layer_norm(d);
  for (double& v : p.gain.value()) v = 1.0;
  return p;
}

}  // namespace

AttentionParams make_attention(std::int64_t d_model, int n_heads, Rng& rng) {
  if (n_heads <= 0 || d_model % n_heads != 0)
    throw ConfigError("model dimension " + std::to_string(d_model) +
                      " not divisible by head count " + std::to_string(n_heads));
  const std::int64_t d_h = d_model / n_heads;
  AttentionParams p;
  for (int h = 0; h < n_heads; ++h) {
    p.wq.push_back(Tensor::param({d_h, d_model}, rng));
    p.wk.push_back(Tensor::param({d_h, d_model}, rng));
    p.wv.push_back(Tensor::param({d_h, d_model}, rng));
  }
  p.wc = Tensor::param({d_model, d_model}, rng);
  return p;
}

FfnParams make_ffn(std::int64_t d_model, std::int64_t d_ff, Rng& rng) {
  return {Tensor::param({d_ff, d_model}, rng), Tensor::param_zeros({d_ff, 1}),
          Tensor::param({d_model, d_ff}, rng), Tensor::param_zeros({d_model, 1})};
}

Tensor positional_encoding(std::int64_t d_model, std::int64_t len) {
  Tensor pe = Tensor::zeros({d_model, len});
  pe.set_requires_grad(false);
  for (std::int64_t pos = 0; pos < len; ++pos) {
    for (std::int64_t i = 0; i < d_model; i += 2) {
      const double angle =
          static_cast<double>(pos) /
          std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_model));
      pe.value()[static_cast<std::size_t>(i * len + pos)] = std::sin(angle);
      if (i + 1 < d_model)
        pe.value()[static_cast<std::size_t>((i + 1) * len + pos)] = std::cos(angle);
    }
  }
  return pe;
}

Tensor attention_mask(std::int64_t len_q, std::int64_t len_k, bool causal,
                      std::int64_t n_valid_keys) {
  Tensor m = Tensor::zeros({len_q, len_k});
  m.set_requires_grad(false);
  for (std::int64_t q = 0; q < len_q; ++q)
    for (std::int64_t k = 0; k < len_k; ++k)
      if (k >= n_valid_keys || (causal && k > q))
        m.value()[static_cast<std::size_t>(q * len_k + k)] = -1e30;
  return m;
}

Tensor multi_head_attention(Graph& g, const AttentionParams& p, const Tensor& q,
                            const Tensor& k, const Tensor& v, const Tensor* mask) {
  const std::int64_t d_model = q.shape()[0];
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_model));
  std::vector<Tensor> heads;
  heads.reserve(p.wq.size());
  for (std::size_t h = 0; h < p.wq.size(); ++h) {
    Tensor qh = g.matmul(p.wq[h], q);
    Tensor kh = g.matmul(p.wk[h], k);
    Tensor vh = g.matmul(p.wv[h], v);
    Tensor scores = g.scale(g.matmul_tn(qh, kh), scale);
    if (mask) scores = g.add(scores, *mask);
    Tensor weights = g.softmax(scores, 1);
    heads.push_back(g.matmul_nt(vh, weights));
  }
  Tensor stacked = heads.size() == 1 ? heads[0] : g.concat_rows(heads);
  return g.matmul(p.wc, stacked);
}

Tensor ffn_forward(Graph& g, const FfnParams& p, const Tensor& x) {
  Tensor h = g.relu(g.add(g.matmul(p.w1, x), p.b1));
  return g.add(g.matmul(p.w2, h), p.b2);
}

Tensor residual_norm(Graph& g, const LayerNormParams& norm, const Tensor& x,
                     const Tensor& sublayer_out, double dropout_rate) {
  return g.layer_norm(g.add(x, g.dropout(sublayer_out, dropout_rate)), norm.gain, norm.bias);
}

namespace {

Tensor embed_sequence(Graph& g, const Tensor& table, const std::vector<int>& ids,
                      std::int64_t d_model, double dropout_rate) {
  Tensor e = g.scale(g.embed_cols(table, ids), std::sqrt(static_cast<double>(d_model)));
  Tensor x = g.add(e, positional_encoding(d_model, static_cast<std::int64_t>(ids.size())));
  return g.dropout(x, dropout_rate);
}

}  // namespace

Tensor EncoderStack::forward(Graph& g, const std::vector<int>& ids, std::int64_t n_valid) const {
  if (ids.empty() || n_valid <= 0) throw InputError("encoder input is empty");
  const std::int64_t len = static_cast<std::int64_t>(ids.size());
  Tensor x = embed_sequence(g, embedding, ids, d_model, dropout);
  Tensor mask = attention_mask(len, len, /*causal=*/false, n_valid);
  const bool needs_mask = n_valid < len;
  for (const EncoderLayer& layer : layers) {
    Tensor attn = multi_head_attention(g, layer.self_attn, x, x, x,
                                       needs_mask ? &mask : nullptr);
    x = residual_norm(g, layer.norm_attn, x, attn, dropout);
    Tensor ff = ffn_forward(g, layer.ffn, x);
    x = residual_norm(g, layer.norm_ffn, x, ff, dropout);
  }
  return x;
}

Tensor EncoderStack::forward(Graph& g, const std::vector<int>& ids) const {
  return forward(g, ids, static_cast<std::int64_t>(ids.size()));
}

DecodePrefixResult DecoderStack::decode_prefix(Graph& g, const std::vector<int>& ids,
                                               const Tensor& enc_out,
                                               std::int64_t enc_valid) const {
  if (ids.empty()) throw InputError("decoder input is empty");
  const std::int64_t len = static_cast<std::int64_t>(ids.size());
  Tensor x = embed_sequence(g, embedding, ids, d_model, dropout);
  Tensor causal = attention_mask(len, len, /*causal=*/true, len);
  Tensor enc_mask = attention_mask(len, enc_out.shape()[1], /*causal=*/false, enc_valid);
  const bool needs_enc_mask = enc_valid < enc_out.shape()[1];

  DecodePrefixResult result;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const DecoderLayer& layer = layers[l];
    Tensor self = multi_head_attention(g, layer.self_attn, x, x, x, &causal);
    Tensor h = residual_norm(g, layer.norm_self, x, self, dropout);
    Tensor cross = multi_head_attention(g, layer.cross_attn, h, enc_out, enc_out,
                                        needs_enc_mask ? &enc_mask : nullptr);
    Tensor c = residual_norm(g, layer.norm_cross, h, cross, dropout);
    if (l + 1 == layers.size()) {
      result.hidden_last = h;
      result.context = c;
      break;
    }
    Tensor ff = ffn_forward(g, layer.ffn, c);
    x = residual_norm(g, layer.norm_ffn, c, ff, dropout);
    result.hidden_prev = x;
  }
  if (!result.hidden_prev.defined()) result.hidden_prev = x;  // single-layer decoder
  return result;
}

EncoderStack make_encoder(std::int64_t vocab, std::int64_t d_model, std::int64_t d_ff,
                          int n_heads, int n_layers, double dropout, Rng& rng) {
  EncoderStack enc;
  enc.d_model = d_model;
  enc.n_heads = n_heads;
  enc.dropout = dropout;
  enc.embedding = Tensor::param({vocab, d_model}, rng);
  for (int l = 0; l < n_layers; ++l)
    enc.layers.push_back({make_attention(d_model, n_heads, rng), make_layer_norm_init(d_model),
                          make_ffn(d_model, d_ff, rng), make_layer_norm_init(d_model)});
  return enc;
}

DecoderStack make_decoder(std::int64_t vocab, std::int64_t d_model, std::int64_t d_ff,
                          int n_heads, int n_layers, double dropout, Rng& rng) {
  DecoderStack dec;
  dec.d_model = d_model;
  dec.n_heads = n_heads;
  dec.dropout = dropout;
  dec.embedding = Tensor::param({vocab, d_model}, rng);
  for (int l = 0; l < n_layers; ++l) {
    DecoderLayer layer;
    layer.self_attn = make_attention(d_model, n_heads, rng);
    layer.norm_self = make_layer_norm_init(d_model);
    layer.cross_attn = make_attention(d_model, n_heads, rng);
    layer.norm_cross = make_layer_norm_init(d_model);
    layer.has_ffn = l + 1 < n_layers;  // the last layer's FFN lives downstream
    if (layer.has_ffn) {
      layer.ffn = make_ffn(d_model, d_ff, rng);
      layer.norm_ffn = make_layer_norm_init(d_model);
    }
    dec.layers.push_back(layer);
  }
  return dec;
}

namespace {

void collect_attention(const std::string& prefix, const AttentionParams& p,
                       std::vector<NamedTensor>& out) {
  for (std::size_t h = 0; h < p.wq.size(); ++h) {
    out.push_back({prefix + ".wq.h" + std::to_string(h), p.wq[h]});
    out.push_back({prefix + ".wk.h" + std::to_string(h), p.wk[h]});
    out.push_back({prefix + ".wv.h" + std::to_string(h), p.wv[h]});
  }
  out.push_back({prefix + ".wc", p.wc});
}

void collect_norm(const std::string& prefix, const LayerNormParams& p,
                  std::vector<NamedTensor>& out) {
  out.push_back({prefix + ".gain", p.gain});
  out.push_back({prefix + ".bias", p.bias});
}

void collect_ffn(const std::string& prefix, const FfnParams& p, std::vector<NamedTensor>& out) {
  out.push_back({prefix + ".w1", p.w1});
  out.push_back({prefix + ".b1", p.b1});
  out.push_back({prefix + ".w2", p.w2});
  out.push_back({prefix + ".b2", p.b2});
}

}  // namespace

void EncoderStack::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".embedding", embedding});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string base = prefix + ".layer" + std::to_string(l);
    collect_attention(base + ".selfattn", layers[l].self_attn, out);
    collect_norm(base + ".norm_attn", layers[l].norm_attn, out);
    collect_ffn(base + ".ffn", layers[l].ffn, out);
    collect_norm(base + ".norm_ffn", layers[l].norm_ffn, out);
  }
}

void DecoderStack::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".embedding", embedding});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string base = prefix + ".layer" + std::to_string(l);
    collect_attention(base + ".selfattn", layers[l].self_attn, out);
    collect_norm(base + ".norm_self", layers[l].norm_self, out);
    collect_attention(base + ".crossattn", layers[l].cross_attn, out);
    collect_norm(base + ".norm_cross", layers[l].norm_cross, out);
    if (layers[l].has_ffn) {
      collect_ffn(base + ".ffn", layers[l].ffn, out);
      collect_norm(base + ".norm_ffn", layers[l].norm_ffn, out);
    }
  }
}

}  // namespace capmt
