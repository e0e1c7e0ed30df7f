#pragma once

// Independent scalar-loop reference implementations used as the ground-truth
// side of equivalence tests. Everything here works on plain nested vectors,
// loops element by element, and shares no code with the main library.

#include <string>
#include <vector>

namespace capmt_oracle {

using Vec = std::vector<double>;
using Mat = std::vector<std::vector<double>>;

// Pearson correlation over the entries of two equal-length vectors,
// population normalization, zero when either vector is (near-)constant.
double pcc(const Vec& u, const Vec& w);

Vec softmax(const Vec& logits);

struct RouteParams {
  std::vector<Mat> w_transform;  // one [d_c x d_c] map per high-level capsule
  Mat w_context;                 // [d_c x d_w], maps context capsules into capsule space
  Mat w_visual;                  // [d_w x d_c], maps high-level capsules into context space
  Mat w_fuse;                    // [d_w x (n_high * d_w)]
  Vec b_fuse;                    // [d_w]
};

// Context-guided dynamic routing, one explicit loop per pseudocode line.
Vec route(const Vec& context, const Mat& features, const RouteParams& p, int n_iterations);

// Routing-by-agreement with squashing and no context guidance.
Vec route_conventional(const Mat& features, const RouteParams& p, int n_iterations);

Vec squash(const Vec& s);

struct AttentionParams {
  std::vector<Mat> wq, wk, wv;  // per head, [d_h x d_model]
  Mat wc;                       // [d_model x d_model]
};

// Multi-head scaled dot-product attention over column-vector sequences
// (inputs are [d_model x len]); mask entries are added to the raw scores.
Mat multi_head_attention(const Mat& q, const Mat& k, const Mat& v,
                         const AttentionParams& p, const Mat* mask);

Mat ffn(const Mat& x, const Mat& w1, const Vec& b1, const Mat& w2, const Vec& b2);

Mat layer_norm(const Mat& x, const Vec& gain, const Vec& bias, double eps);

Vec fuse_gate(const Vec& m_global, const Vec& m_regional, const Mat& w_g, const Mat& w_r);

// Corpus-level 4-gram BLEU, single reference, no smoothing: orders with no
// candidate n-grams are skipped, any scored order with zero matches gives 0.
double bleu(const std::vector<std::vector<std::string>>& hypotheses,
            const std::vector<std::vector<std::string>>& references);

// Plain helpers, also used by tests to compose oracles.
Vec matvec(const Mat& a, const Vec& x);
Vec add(const Vec& a, const Vec& b);
Vec hadamard(const Vec& a, const Vec& b);
double dot(const Vec& a, const Vec& b);

}  // namespace capmt_oracle
