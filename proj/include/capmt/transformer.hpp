#pragma once

#include <string>
#include <vector>

#include "capmt/rng.hpp"
#include "capmt/tensor.hpp"

namespace capmt {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct LayerNormParams {
  Tensor gain, bias;  // [d x 1]
};
LayerNormParams make_layer_norm(std::int64_t d);

struct AttentionParams {
  std::vector<Tensor> wq, wk, wv;  // one [d_h x d_model] map per head
  Tensor wc;                       // [d_model x d_model] output map
};
AttentionParams make_attention(std::int64_t d_model, int n_heads, Rng& rng);

struct FfnParams {
  Tensor w1, b1, w2, b2;  // [d_ff x d], [d_ff x 1], [d x d_ff], [d x 1]
};
FfnParams make_ffn(std::int64_t d_model, std::int64_t d_ff, Rng& rng);

struct EncoderLayer {
  AttentionParams self_attn;
  LayerNormParams norm_attn;
  FfnParams ffn;
  LayerNormParams norm_ffn;
};

struct DecoderLayer {
  AttentionParams self_attn;
  LayerNormParams norm_self;
  AttentionParams cross_attn;
  LayerNormParams norm_cross;
  bool has_ffn = true;  // the last decoder layer's FFN lives with the fusion block
  FfnParams ffn;
  LayerNormParams norm_ffn;
};

// Sinusoidal position encoding as a constant [d_model x len] leaf.
Tensor positional_encoding(std::int64_t d_model, std::int64_t len);

// Additive attention mask leaf [len_q x len_k]: 0 where attention is allowed,
// -1e30 elsewhere. Causal forbids key > query; n_valid_keys masks padding.
Tensor attention_mask(std::int64_t len_q, std::int64_t len_k, bool causal,
                      std::int64_t n_valid_keys);

// Scaled dot-product multi-head attention over column sequences, 1/sqrt(d_model)
// scaling, heads concatenated then mixed by wc.
Tensor multi_head_attention(Graph& g, const AttentionParams& p, const Tensor& q,
                            const Tensor& k, const Tensor& v, const Tensor* mask);

Tensor ffn_forward(Graph& g, const FfnParams& p, const Tensor& x);

// x + dropout(sub) followed by layer norm (post-norm residual ordering).
Tensor residual_norm(Graph& g, const LayerNormParams& norm, const Tensor& x,
                     const Tensor& sublayer_out, double dropout_rate);

struct EncoderStack {
  Tensor embedding;  // [vocab x d_model]
  std::vector<EncoderLayer> layers;
  std::int64_t d_model = 0;
  int n_heads = 0;
  double dropout = 0.0;

  // ids may carry a padded tail; n_valid counts the real tokens.
  Tensor forward(Graph& g, const std::vector<int>& ids, std::int64_t n_valid) const;
  Tensor forward(Graph& g, const std::vector<int>& ids) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

struct DecodePrefixResult {
  Tensor hidden_prev;   // output of decoder layer L_d - 1
  Tensor hidden_last;   // self-attention sublayer output of the last layer
  Tensor context;       // source-target attention output of the last layer
};

struct DecoderStack {
  Tensor embedding;  // [vocab x d_model]
  std::vector<DecoderLayer> layers;
  std::int64_t d_model = 0;
  int n_heads = 0;
  double dropout = 0.0;

  // Runs layers 1..L_d-1 in full and the two attention sublayers of layer
  // L_d; the caller owns what happens after `context`.
  DecodePrefixResult decode_prefix(Graph& g, const std::vector<int>& ids,
                                   const Tensor& enc_out, std::int64_t enc_valid) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

EncoderStack make_encoder(std::int64_t vocab, std::int64_t d_model, std::int64_t d_ff,
                          int n_heads, int n_layers, double dropout, Rng& rng);
DecoderStack make_decoder(std::int64_t vocab, std::int64_t d_model, std::int64_t d_ff,
                          int n_heads, int n_layers, double dropout, Rng& rng);

}  // namespace capmt
