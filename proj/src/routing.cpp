#include "capmt/routing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "capmt/error.hpp"

namespace capmt {

DccnParams make_dccn(const DccnConfig& cfg, Rng& rng) {
  if (cfg.n_high < 1) throw ConfigError("high-level capsule count must be at least 1");
  if (cfg.n_iterations < 1) throw ConfigError("routing iteration count must be at least 1");
  DccnParams p;
  for (int j = 0; j < cfg.n_high; ++j)
    p.w_transform.push_back(Tensor::param({cfg.d_capsule, cfg.d_capsule}, rng));
  p.w_context = Tensor::param({cfg.d_capsule, cfg.d_model}, rng);
  p.w_visual = Tensor::param({cfg.d_model, cfg.d_capsule}, rng);
  p.w_fuse = Tensor::param({cfg.d_model, cfg.n_high * cfg.d_model}, rng);
  p.b_fuse = Tensor::param_zeros({cfg.d_model, 1});
  p.n_iterations = cfg.n_iterations;
  return p;
}

void DccnParams::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  for (std::size_t j = 0; j < w_transform.size(); ++j)
    out.push_back({prefix + ".w_transform.j" + std::to_string(j), w_transform[j]});
  out.push_back({prefix + ".w_context", w_context});
  out.push_back({prefix + ".w_visual", w_visual});
  out.push_back({prefix + ".w_fuse", w_fuse});
  out.push_back({prefix + ".b_fuse", b_fuse});
}

double pearson(const std::vector<double>& u, const std::vector<double>& w) {
  if (u.size() != w.size() || u.size() < 2)
    throw DimensionError("pearson: vectors must share a length of at least 2");
  const double n = static_cast<double>(u.size());
  double mu = 0.0, mw = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    mu += u[k];
    mw += w[k];
  }
  mu /= n;
  mw /= n;
  double cov = 0.0, su = 0.0, sw = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    cov += (u[k] - mu) * (w[k] - mw);
    su += (u[k] - mu) * (u[k] - mu);
    sw += (w[k] - mw) * (w[k] - mw);
  }
  const double denom = std::sqrt(su / n) * std::sqrt(sw / n);
  if (denom <= 1e-12) return 0.0;
  return (cov / n) / denom;
}

namespace {

// Canonical low-level capsule order: lexicographic over row values with the
// caller index breaking exact ties. Reductions over i then run in an order
// independent of the input permutation, which makes routing bit-exact under
// row permutations (weight sharing already makes it exact in real arithmetic).
std::vector<std::int64_t> canonical_row_order(const Tensor& features) {
  const std::int64_t n = features.shape()[0], d = features.shape()[1];
  std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  const auto& v = features.value();
  std::sort(perm.begin(), perm.end(), [&](std::int64_t a, std::int64_t b) {
    for (std::int64_t k = 0; k < d; ++k) {
      const double x = v[static_cast<std::size_t>(a * d + k)];
      const double y = v[static_cast<std::size_t>(b * d + k)];
      if (x < y) return true;
      if (y < x) return false;
    }
    return a < b;
  });
  return perm;
}

void check_finite(const Tensor& t, int iteration, const char* what) {
  for (double v : t.value())
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite ") + what + " at routing iteration " +
                         std::to_string(iteration));
}

double column_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.value()) s += v * v;
  return std::sqrt(s);
}

void emit_trace(RoutingTrace* trace, int iteration, const std::vector<std::int64_t>& perm,
                const Tensor& b, const Tensor& c, const Tensor* rho,
                const std::vector<double>& v_norms, const std::vector<double>& m_norms) {
  if (!trace) return;
  const std::int64_t n = b.shape()[0], m = b.shape()[1];
  for (std::int64_t orig = 0; orig < n; ++orig) {
    // Row `orig` of the caller's matrix sits at sorted position inv[orig].
    std::int64_t sorted = 0;
    for (std::int64_t s = 0; s < n; ++s)
      if (perm[static_cast<std::size_t>(s)] == orig) {
        sorted = s;
        break;
      }
    for (std::int64_t j = 0; j < m; ++j) {
      RoutingTraceRow row;
      row.iteration = iteration;
      row.low = static_cast<int>(orig);
      row.high = static_cast<int>(j);
      row.logit = b.at(sorted, j);
      row.coupling = c.at(sorted, j);
      row.correlation = rho ? rho->at(sorted, j) : 0.0;
      row.v_norm = v_norms[static_cast<std::size_t>(j)];
      row.m_norm = m_norms[static_cast<std::size_t>(j)];
      trace->push_back(row);
    }
  }
}

void validate_features(const DccnParams& p, const Tensor& features) {
  if (features.shape().size() != 2 || features.shape()[0] < 1)
    throw DimensionError("routing needs a non-empty [N x d_c] feature matrix, got " +
                         shape_str(features.shape()));
  if (features.shape()[1] != p.d_capsule())
    throw DimensionError("feature dimension " + shape_str(features.shape()) +
                         " does not match capsule dimension " + std::to_string(p.d_capsule()));
}

}  // namespace

RoutePrecomp make_route_precomp(Graph& g, const DccnParams& p, const Tensor& features) {
  validate_features(p, features);
  RoutePrecomp pre;
  pre.perm = canonical_row_order(features);
  pre.sorted = g.gather_rows(features, pre.perm);
  for (int j = 0; j < p.n_high(); ++j)
    pre.u_hat.push_back(g.matmul_nt(pre.sorted, p.w_transform[static_cast<std::size_t>(j)]));
  return pre;
}

Tensor route_precomputed(Graph& g, const DccnParams& p, const Tensor& context,
                         const RoutePrecomp& pre, RoutingTrace* trace) {
  if (context.numel() != p.d_model())
    throw DimensionError("context " + shape_str(context.shape()) + " does not match model dim " +
                         std::to_string(p.d_model()));
  for (double v : context.value())
    if (!std::isfinite(v)) throw NumericError("non-finite context vector");

  const int n_high = p.n_high();
  const Tensor& u = pre.sorted;
  const std::int64_t n_low = u.shape()[0];

  // Context capsules as rows, all initialized from the context vector.
  Tensor ctx_row = g.transpose(context);
  std::vector<Tensor> m_rows(static_cast<std::size_t>(n_high), ctx_row);

  auto correlations = [&]() {
    Tensor m_mat = n_high == 1 ? m_rows[0] : g.concat_rows(m_rows);
    Tensor mapped = g.matmul_nt(m_mat, p.w_context);  // rows: (W_m m_j)^T
    return g.tanh(g.pcc_rows(u, mapped));             // [N_u x N_v]
  };

  Tensor b = Tensor::zeros({n_low, n_high});
  b.set_requires_grad(false);
  Tensor rho = correlations();

  std::vector<Tensor> v_cols(static_cast<std::size_t>(n_high));
  for (int itr = 1; itr <= p.n_iterations; ++itr) {
    Tensor c = g.softmax(b, 1);
    Tensor weights = g.add(c, rho);
    std::vector<double> v_norms, m_norms;
    for (int j = 0; j < n_high; ++j) {
      Tensor vj = g.matmul_tn(pre.u_hat[static_cast<std::size_t>(j)], g.slice_col(weights, j));
      v_cols[static_cast<std::size_t>(j)] = vj;
      Tensor update = g.matmul_nt(g.transpose(vj), p.w_visual);  // (W_v v_j)^T
      m_rows[static_cast<std::size_t>(j)] = g.mul(m_rows[static_cast<std::size_t>(j)], update);
      check_finite(vj, itr, "high-level capsule");
      check_finite(m_rows[static_cast<std::size_t>(j)], itr, "context capsule");
      v_norms.push_back(column_norm(vj));
      m_norms.push_back(column_norm(m_rows[static_cast<std::size_t>(j)]));
    }
    rho = correlations();
    std::vector<Tensor> agreements;
    for (int j = 0; j < n_high; ++j)
      agreements.push_back(
          g.matmul(pre.u_hat[static_cast<std::size_t>(j)], v_cols[static_cast<std::size_t>(j)]));
    Tensor agreement = n_high == 1 ? agreements[0] : g.concat_cols(agreements);
    b = g.add(b, g.mul(rho, agreement));
    check_finite(b, itr, "routing logits");
    emit_trace(trace, itr, pre.perm, b, c, &rho, v_norms, m_norms);
  }

  std::vector<Tensor> m_cols;
  for (int j = 0; j < n_high; ++j)
    m_cols.push_back(g.transpose(m_rows[static_cast<std::size_t>(j)]));
  Tensor stacked = n_high == 1 ? m_cols[0] : g.concat_rows(m_cols);
  return g.add(g.matmul(p.w_fuse, stacked), p.b_fuse);
}

Tensor route(Graph& g, const DccnParams& p, const Tensor& context, const Tensor& features,
             RoutingTrace* trace) {
  return route_precomputed(g, p, context, make_route_precomp(g, p, features), trace);
}

Tensor route_conventional_precomputed(Graph& g, const DccnParams& p, const RoutePrecomp& pre,
                                      RoutingTrace* trace) {
  const int n_high = p.n_high();
  const std::int64_t n_low = pre.sorted.shape()[0];

  Tensor b = Tensor::zeros({n_low, n_high});
  b.set_requires_grad(false);
  std::vector<Tensor> v_cols(static_cast<std::size_t>(n_high));
  for (int itr = 1; itr <= p.n_iterations; ++itr) {
    Tensor c = g.softmax(b, 1);
    std::vector<double> v_norms, m_norms;
    for (int j = 0; j < n_high; ++j) {
      Tensor sj = g.matmul_tn(pre.u_hat[static_cast<std::size_t>(j)], g.slice_col(c, j));
      // squash(s) = (|s|^2 / (1 + |s|^2)) * s / |s|
      Tensor n2 = g.sum(g.mul(sj, sj));
      Tensor factor = g.div(g.sqrt(n2), g.add_scalar(n2, 1.0));
      Tensor vj = g.mul(sj, factor);
      v_cols[static_cast<std::size_t>(j)] = vj;
      check_finite(vj, itr, "high-level capsule");
      v_norms.push_back(column_norm(vj));
      m_norms.push_back(0.0);
    }
    std::vector<Tensor> agreements;
    for (int j = 0; j < n_high; ++j)
      agreements.push_back(
          g.matmul(pre.u_hat[static_cast<std::size_t>(j)], v_cols[static_cast<std::size_t>(j)]));
    Tensor agreement = n_high == 1 ? agreements[0] : g.concat_cols(agreements);
    b = g.add(b, agreement);
    emit_trace(trace, itr, pre.perm, b, c, nullptr, v_norms, m_norms);
  }

  std::vector<Tensor> m_cols;
  for (int j = 0; j < n_high; ++j)
    m_cols.push_back(g.matmul(p.w_visual, v_cols[static_cast<std::size_t>(j)]));
  Tensor stacked = n_high == 1 ? m_cols[0] : g.concat_rows(m_cols);
  return g.add(g.matmul(p.w_fuse, stacked), p.b_fuse);
}

Tensor route_conventional(Graph& g, const DccnParams& p, const Tensor& features,
                          RoutingTrace* trace) {
  return route_conventional_precomputed(g, p, make_route_precomp(g, p, features), trace);
}

}  // namespace capmt
