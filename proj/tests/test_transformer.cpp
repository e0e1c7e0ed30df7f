#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "capmt/transformer.hpp"
#include "gradcheck.hpp"
#include "oracle.hpp"
#include "test_helpers.hpp"

using capmt::AttentionParams;
using capmt::DecoderStack;
using capmt::EncoderStack;
using capmt::Graph;
using capmt::Rng;
using capmt::Tensor;
using capmt_test::random_tensor;
using capmt_test::to_mat;

namespace {

capmt_oracle::AttentionParams oracle_attention_params(const AttentionParams& p) {
  capmt_oracle::AttentionParams o;
  for (std::size_t h = 0; h < p.wq.size(); ++h) {
    o.wq.push_back(to_mat(p.wq[h]));
    o.wk.push_back(to_mat(p.wk[h]));
    o.wv.push_back(to_mat(p.wv[h]));
  }
  o.wc = to_mat(p.wc);
  return o;
}

capmt_oracle::Mat oracle_positional_encoding(std::int64_t d, std::int64_t len) {
  capmt_oracle::Mat pe(static_cast<std::size_t>(d), capmt_oracle::Vec(static_cast<std::size_t>(len), 0.0));
  for (std::int64_t pos = 0; pos < len; ++pos) {
    for (std::int64_t i = 0; i < d; i += 2) {
      const double angle = static_cast<double>(pos) /
                           std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      pe[static_cast<std::size_t>(i)][static_cast<std::size_t>(pos)] = std::sin(angle);
      if (i + 1 < d)
        pe[static_cast<std::size_t>(i + 1)][static_cast<std::size_t>(pos)] = std::cos(angle);
    }
  }
  return pe;
}

// Scalar-loop re-implementation of the embedding + encoder/decoder stacks,
// composed entirely from the oracle pieces.
capmt_oracle::Mat oracle_embed(const Tensor& table, const std::vector<int>& ids, std::int64_t d) {
  capmt_oracle::Mat x(static_cast<std::size_t>(d),
                      capmt_oracle::Vec(ids.size(), 0.0));
  const double scale = std::sqrt(static_cast<double>(d));
  const auto pe = oracle_positional_encoding(d, static_cast<std::int64_t>(ids.size()));
  for (std::size_t t = 0; t < ids.size(); ++t)
    for (std::int64_t i = 0; i < d; ++i)
      x[static_cast<std::size_t>(i)][t] =
          table.value()[static_cast<std::size_t>(ids[t] * d + i)] * scale +
          pe[static_cast<std::size_t>(i)][t];
  return x;
}

capmt_oracle::Mat oracle_add(const capmt_oracle::Mat& a, const capmt_oracle::Mat& b) {
  capmt_oracle::Mat y = a;
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t j = 0; j < y[i].size(); ++j) y[i][j] += b[i][j];
  return y;
}

capmt_oracle::Mat oracle_sublayer(const capmt_oracle::Mat& x, const capmt_oracle::Mat& sub,
                                  const capmt::LayerNormParams& norm) {
  return capmt_oracle::layer_norm(oracle_add(x, sub), norm.gain.value(), norm.bias.value(), 1e-6);
}

capmt_oracle::Mat causal_mask_mat(std::size_t len) {
  capmt_oracle::Mat m(len, capmt_oracle::Vec(len, 0.0));
  for (std::size_t q = 0; q < len; ++q)
    for (std::size_t k = q + 1; k < len; ++k) m[q][k] = -1e30;
  return m;
}

capmt_oracle::Mat oracle_encode(const EncoderStack& enc, const std::vector<int>& ids) {
  capmt_oracle::Mat x = oracle_embed(enc.embedding, ids, enc.d_model);
  for (const auto& layer : enc.layers) {
    auto attn = capmt_oracle::multi_head_attention(x, x, x,
                                                   oracle_attention_params(layer.self_attn),
                                                   nullptr);
    x = oracle_sublayer(x, attn, layer.norm_attn);
    auto ff = capmt_oracle::ffn(x, to_mat(layer.ffn.w1), layer.ffn.b1.value(),
                                to_mat(layer.ffn.w2), layer.ffn.b2.value());
    x = oracle_sublayer(x, ff, layer.norm_ffn);
  }
  return x;
}

capmt_oracle::Mat oracle_decode_context(const DecoderStack& dec, const std::vector<int>& ids,
                                        const capmt_oracle::Mat& enc_out) {
  capmt_oracle::Mat x = oracle_embed(dec.embedding, ids, dec.d_model);
  const auto causal = causal_mask_mat(ids.size());
  capmt_oracle::Mat context;
  for (std::size_t l = 0; l < dec.layers.size(); ++l) {
    const auto& layer = dec.layers[l];
    auto self = capmt_oracle::multi_head_attention(
        x, x, x, oracle_attention_params(layer.self_attn), &causal);
    auto h = oracle_sublayer(x, self, layer.norm_self);
    auto cross = capmt_oracle::multi_head_attention(
        h, enc_out, enc_out, oracle_attention_params(layer.cross_attn), nullptr);
    auto c = oracle_sublayer(h, cross, layer.norm_cross);
    if (l + 1 == dec.layers.size()) {
      context = c;
      break;
    }
    auto ff = capmt_oracle::ffn(c, to_mat(layer.ffn.w1), layer.ffn.b1.value(),
                                to_mat(layer.ffn.w2), layer.ffn.b2.value());
    x = oracle_sublayer(c, ff, layer.norm_ffn);
  }
  return context;
}

double mat_max_diff(const Tensor& t, const capmt_oracle::Mat& m) {
  double worst = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j)
      worst = std::max(worst, std::fabs(t.at(static_cast<std::int64_t>(i),
                                             static_cast<std::int64_t>(j)) -
                                        m[i][j]));
  return worst;
}

}  // namespace

TEST_CASE("single key attention returns the value row") {
  const std::int64_t d = 4;
  AttentionParams p;
  Tensor eye = Tensor::zeros({d, d});
  for (std::int64_t i = 0; i < d; ++i) eye.value()[static_cast<std::size_t>(i * d + i)] = 1.0;
  p.wq = {eye};
  p.wk = {eye};
  p.wv = {eye};
  p.wc = eye;
  Graph g(Graph::Mode::kInfer);
  Tensor v = Tensor::from({d, 1}, {0.5, -1.0, 2.0, 0.25});
  Tensor out = capmt::multi_head_attention(g, p, v, v, v, nullptr);
  for (std::int64_t i = 0; i < d; ++i) CHECK(out.at(i, 0) == doctest::Approx(v.at(i, 0)));
}

TEST_CASE("multi-head attention matches the scalar-loop oracle") {
  Rng rng(5);
  const std::int64_t d = 8;
  AttentionParams p = capmt::make_attention(d, 2, rng);
  Tensor q = random_tensor({d, 2}, rng);
  Tensor k = random_tensor({d, 3}, rng);
  Tensor v = random_tensor({d, 3}, rng);
  Graph g(Graph::Mode::kInfer);
  Tensor out = capmt::multi_head_attention(g, p, q, k, v, nullptr);
  auto want = capmt_oracle::multi_head_attention(to_mat(q), to_mat(k), to_mat(v),
                                                 oracle_attention_params(p), nullptr);
  CHECK(mat_max_diff(out, want) < 1e-12);
}

TEST_CASE("head count must divide the model dimension") {
  Rng rng(1);
  CHECK_THROWS_AS(capmt::make_attention(8, 3, rng), capmt::ConfigError);
}

TEST_CASE("ffn basics") {
  Rng rng(9);
  capmt::FfnParams p = capmt::make_ffn(6, 12, rng);
  Graph g(Graph::Mode::kInfer);

  Tensor zero = Tensor::zeros({6, 2});
  Tensor out = capmt::ffn_forward(g, p, zero);
  for (double v : out.value()) CHECK(v == 0.0);  // zero biases

  Tensor x = random_tensor({6, 3}, rng);
  Tensor y = capmt::ffn_forward(g, p, x);
  auto want = capmt_oracle::ffn(to_mat(x), to_mat(p.w1), p.b1.value(), to_mat(p.w2),
                                p.b2.value());
  CHECK(mat_max_diff(y, want) < 1e-12);

  // Position-wise: permuting input columns permutes output columns.
  Tensor xp = Tensor::zeros({6, 3});
  const std::vector<int> perm{2, 0, 1};
  for (int i = 0; i < 6; ++i)
    for (int t = 0; t < 3; ++t)
      xp.value()[static_cast<std::size_t>(i * 3 + t)] = x.at(i, perm[static_cast<std::size_t>(t)]);
  // Positions are independent; the GEMM kernel's per-column rounding paths
  // differ with position, so equality is to near machine precision.
  Tensor yp = capmt::ffn_forward(g, p, xp);
  for (int i = 0; i < 6; ++i)
    for (int t = 0; t < 3; ++t)
      CHECK(std::fabs(yp.at(i, t) - y.at(i, perm[static_cast<std::size_t>(t)])) < 1e-12);
}

TEST_CASE("encoder matches the naive per-layer oracle") {
  Rng rng(21);
  EncoderStack enc = capmt::make_encoder(12, 8, 16, 2, 2, 0.0, rng);
  Graph g(Graph::Mode::kInfer);
  const std::vector<int> ids{4, 7, 5, 11};
  Tensor out = enc.forward(g, ids);
  CHECK(out.shape() == std::vector<std::int64_t>{8, 4});
  CHECK(mat_max_diff(out, oracle_encode(enc, ids)) < 1e-12);

  Tensor single = enc.forward(g, {6});
  CHECK(single.shape() == std::vector<std::int64_t>{8, 1});

  CHECK_THROWS_AS(enc.forward(g, {}), capmt::InputError);
}

TEST_CASE("encoder is deterministic for a fixed seed") {
  auto build = []() {
    Rng rng(77);
    return capmt::make_encoder(10, 8, 16, 2, 2, 0.0, rng);
  };
  EncoderStack a = build(), b = build();
  Graph g(Graph::Mode::kInfer);
  const std::vector<int> ids{1, 2, 3};
  CHECK(a.forward(g, ids).value() == b.forward(g, ids).value());
}

TEST_CASE("padding invariance: masked pads leave real columns unchanged") {
  Rng rng(31);
  EncoderStack enc = capmt::make_encoder(12, 8, 16, 2, 2, 0.0, rng);
  Graph g(Graph::Mode::kInfer);
  const std::vector<int> ids{4, 7, 5};
  Tensor base = enc.forward(g, ids);
  const std::vector<int> padded{4, 7, 5, 0, 0};
  Tensor withpad = enc.forward(g, padded, 3);
  for (int i = 0; i < 8; ++i)
    for (int t = 0; t < 3; ++t) CHECK(std::fabs(withpad.at(i, t) - base.at(i, t)) < 1e-9);
}

TEST_CASE("decode_prefix matches the naive oracle and respects causality") {
  Rng rng(41);
  EncoderStack enc = capmt::make_encoder(12, 8, 16, 2, 2, 0.0, rng);
  DecoderStack dec = capmt::make_decoder(14, 8, 16, 2, 3, 0.0, rng);
  Graph g(Graph::Mode::kInfer);
  const std::vector<int> src{4, 7, 5, 2};
  const std::vector<int> tgt{1, 6, 9};
  Tensor enc_out = enc.forward(g, src);
  auto res = dec.decode_prefix(g, tgt, enc_out, enc_out.shape()[1]);
  CHECK(res.context.shape() == std::vector<std::int64_t>{8, 3});
  CHECK(res.hidden_prev.shape() == std::vector<std::int64_t>{8, 3});
  CHECK(mat_max_diff(res.context, oracle_decode_context(dec, tgt, oracle_encode(enc, src))) <
        1e-12);

  // Perturbing a later target token cannot change earlier context columns.
  std::vector<int> tgt2 = tgt;
  tgt2[2] = 13;
  auto res2 = dec.decode_prefix(g, tgt2, enc_out, enc_out.shape()[1]);
  for (int i = 0; i < 8; ++i)
    for (int t = 0; t < 2; ++t) CHECK(res2.context.at(i, t) == res.context.at(i, t));

  auto single = dec.decode_prefix(g, {1}, enc_out, enc_out.shape()[1]);
  CHECK(single.context.shape() == std::vector<std::int64_t>{8, 1});
}

TEST_CASE("attention, ffn and layer norm gradients match finite differences") {
  Rng rng(51);
  const std::int64_t d = 8;
  AttentionParams p = capmt::make_attention(d, 2, rng);
  Tensor q = random_tensor({d, 3}, rng, 0.5);
  Tensor proj = random_tensor({d, 3}, rng);

  std::vector<Tensor> leaves{q, p.wc};
  for (auto& t : p.wq) leaves.push_back(t);
  for (auto& t : p.wk) leaves.push_back(t);
  for (auto& t : p.wv) leaves.push_back(t);
  auto attn_forward = [&](Graph& g) {
    Tensor out = capmt::multi_head_attention(g, p, q, q, q, nullptr);
    return g.sum(g.mul(out, proj));
  };
  CHECK(capmt_test::max_grad_error(attn_forward, leaves) < 1e-4);

  capmt::FfnParams f = capmt::make_ffn(d, 12, rng);
  Tensor x = random_tensor({d, 2}, rng, 0.5);
  Tensor proj2 = random_tensor({d, 2}, rng);
  auto ffn_forward_fn = [&](Graph& g) {
    return g.sum(g.mul(capmt::ffn_forward(g, f, x), proj2));
  };
  CHECK(capmt_test::max_grad_error(ffn_forward_fn, {x, f.w1, f.b1, f.w2, f.b2}) < 1e-4);

  capmt::LayerNormParams n = capmt::make_layer_norm(d);
  for (double& v : n.gain.value()) v = 1.0 + 0.1 * v;
  auto ln_forward = [&](Graph& g) {
    return g.sum(g.mul(g.layer_norm(x, n.gain, n.bias), proj2));
  };
  CHECK(capmt_test::max_grad_error(ln_forward, {x, n.gain, n.bias}) < 1e-4);
}
