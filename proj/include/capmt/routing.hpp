#pragma once

#include <string>
#include <vector>

#include "capmt/rng.hpp"
#include "capmt/tensor.hpp"
#include "capmt/transformer.hpp"

namespace capmt {

// Capsule routing that extracts visual context under the guidance of a
// per-timestep text context vector: coupling coefficients are modulated by a
// tanh-squashed Pearson correlation between each low-level capsule and the
// (iteratively updated) multimodal context capsules, the context capsules are
// updated multiplicatively from the high-level capsules, and the final
// context capsules are fused by an affine map.

struct DccnConfig {
  std::int64_t d_capsule = 256;  // feature/capsule dimension
  std::int64_t d_model = 256;    // context dimension
  int n_high = 1;                // high-level capsule count
  int n_iterations = 3;
};

struct DccnParams {
  std::vector<Tensor> w_transform;  // per high-level capsule, [d_c x d_c], shared over i
  Tensor w_context;                 // [d_c x d_model]: context capsule -> capsule space
  Tensor w_visual;                  // [d_model x d_c]: high-level capsule -> context space
  Tensor w_fuse;                    // [d_model x n_high*d_model]
  Tensor b_fuse;                    // [d_model x 1], zero-initialized
  int n_iterations = 3;

  std::int64_t d_capsule() const { return w_context.shape()[0]; }
  std::int64_t d_model() const { return w_context.shape()[1]; }
  int n_high() const { return static_cast<int>(w_transform.size()); }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

DccnParams make_dccn(const DccnConfig& cfg, Rng& rng);

struct RoutingTraceRow {
  int iteration;  // 1-based
  int low;        // low-level capsule index as passed by the caller
  int high;
  double logit;        // b after this iteration's update
  double coupling;     // c used in this iteration
  double correlation;  // rho after this iteration's update (0 in conventional mode)
  double v_norm;
  double m_norm;
};

using RoutingTrace = std::vector<RoutingTraceRow>;

// Context-guided routing of `features` [N_u x d_c] under `context` [d_model x 1].
// Pure and deterministic; low-level capsule order is canonicalized internally
// so permuting feature rows cannot change the result even at the bit level.
Tensor route(Graph& g, const DccnParams& p, const Tensor& context, const Tensor& features,
             RoutingTrace* trace = nullptr);

// Ablation variant: routing-by-agreement with squashing, no context input.
Tensor route_conventional(Graph& g, const DccnParams& p, const Tensor& features,
                          RoutingTrace* trace = nullptr);

// Hoisted per-sentence routing state: feature rows in canonical order plus the
// per-high-level-capsule predictions, which depend only on the features and
// parameters and so can be shared across timestep columns.
struct RoutePrecomp {
  Tensor sorted;                   // [N_u x d_c]
  std::vector<Tensor> u_hat;       // per j, [N_u x d_c]
  std::vector<std::int64_t> perm;  // canonical order (sorted pos -> caller row)
};
RoutePrecomp make_route_precomp(Graph& g, const DccnParams& p, const Tensor& features);

Tensor route_precomputed(Graph& g, const DccnParams& p, const Tensor& context,
                         const RoutePrecomp& pre, RoutingTrace* trace = nullptr);
Tensor route_conventional_precomputed(Graph& g, const DccnParams& p, const RoutePrecomp& pre,
                                      RoutingTrace* trace = nullptr);

// Scalar Pearson correlation with the same conventions as the routing op.
double pearson(const std::vector<double>& u, const std::vector<double>& w);

}  // namespace capmt
