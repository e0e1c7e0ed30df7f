#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "capmt/routing.hpp"
#include "gradcheck.hpp"
#include "oracle.hpp"
#include "route_small_case.hpp"
#include "test_helpers.hpp"

using capmt::DccnParams;
using capmt::Graph;
using capmt::Rng;
using capmt::Tensor;
using capmt_test::make_routing_instance;
using capmt_test::max_abs_diff;
using capmt_test::random_tensor;

namespace {

std::vector<double> load_fixture(const std::string& name) {
  std::ifstream in(std::string(CAPMT_SOURCE_DIR) + "/tests/fixtures/" + name);
  REQUIRE_MESSAGE(in.good(), "fixture " << name << " missing (run gen_fixtures)");
  std::vector<double> values;
  double v;
  while (in >> v) values.push_back(v);
  return values;
}

Tensor from_mat(const capmt_oracle::Mat& m) {
  std::vector<double> flat;
  for (const auto& row : m) flat.insert(flat.end(), row.begin(), row.end());
  return Tensor::from({static_cast<std::int64_t>(m.size()),
                       static_cast<std::int64_t>(m[0].size())},
                      std::move(flat));
}

DccnParams params_from_oracle(const capmt_oracle::RouteParams& p, int n_iterations) {
  DccnParams out;
  for (const auto& w : p.w_transform) out.w_transform.push_back(from_mat(w));
  out.w_context = from_mat(p.w_context);
  out.w_visual = from_mat(p.w_visual);
  out.w_fuse = from_mat(p.w_fuse);
  out.b_fuse = Tensor::from({static_cast<std::int64_t>(p.b_fuse.size()), 1}, p.b_fuse);
  out.n_iterations = n_iterations;
  return out;
}

}  // namespace

TEST_CASE("pearson correlation basics") {
  std::vector<double> u{0.3, -1.2, 2.2, 0.9};
  CHECK(std::fabs(capmt::pearson(u, u) - 1.0) < 1e-12);
  std::vector<double> neg;
  for (double v : u) neg.push_back(-v);
  CHECK(std::fabs(capmt::pearson(u, neg) + 1.0) < 1e-12);
  // Hand value: centered covariance 4/4 over sd product 5/4.
  CHECK(std::fabs(capmt::pearson({1, 2, 3, 4}, {1, 3, 2, 4}) - 0.8) < 1e-12);
  CHECK(capmt::pearson({2, 2, 2, 2}, u) == 0.0);
  CHECK(capmt_oracle::pcc(u, u) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("pcc_rows agrees with the scalar oracle") {
  Rng rng(17);
  Tensor u = random_tensor({5, 8}, rng);
  Tensor w = random_tensor({3, 8}, rng);
  Graph g(Graph::Mode::kInfer);
  Tensor r = g.pcc_rows(u, w);
  auto um = capmt_test::to_mat(u), wm = capmt_test::to_mat(w);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(std::fabs(r.at(i, j) - capmt_oracle::pcc(um[static_cast<std::size_t>(i)],
                                                     wm[static_cast<std::size_t>(j)])) < 1e-12);
}

TEST_CASE("route matches the frozen hand-set fixture") {
  const auto expected = load_fixture("route_small.txt");
  REQUIRE(expected.size() == 4);

  const auto oracle_out = capmt_oracle::route(capmt_test::small_route_context(),
                                              capmt_test::small_route_features(),
                                              capmt_test::small_route_params(), 1);
  CHECK(max_abs_diff(oracle_out, expected) < 1e-15);

  DccnParams params = params_from_oracle(capmt_test::small_route_params(), 1);
  Graph g(Graph::Mode::kInfer);
  Tensor out = capmt::route(g, params, Tensor::from({4, 1}, capmt_test::small_route_context()),
                            from_mat(capmt_test::small_route_features()));
  CHECK(max_abs_diff(out.value(), expected) < 1e-12);
}

TEST_CASE("route_conventional matches the frozen fixture") {
  const auto expected = load_fixture("route_conventional_small.txt");
  REQUIRE(expected.size() == 4);
  const auto oracle_out = capmt_oracle::route_conventional(
      capmt_test::small_conventional_features(), capmt_test::small_conventional_params(), 2);
  CHECK(max_abs_diff(oracle_out, expected) < 1e-15);

  DccnParams params = params_from_oracle(capmt_test::small_conventional_params(), 2);
  Graph g(Graph::Mode::kInfer);
  Tensor out =
      capmt::route_conventional(g, params, from_mat(capmt_test::small_conventional_features()));
  CHECK(max_abs_diff(out.value(), expected) < 1e-12);
}

TEST_CASE("route agrees with the scalar-loop oracle on random instances") {
  int checked = 0;
  for (std::int64_t n_low : {2, 10}) {
    for (int n_high : {1, 3}) {
      for (int n_itr : {1, 3}) {
        for (std::uint64_t seed : {11ULL, 12ULL}) {
          auto inst = make_routing_instance(8, 8, n_high, n_itr, n_low, seed);
          Graph g(Graph::Mode::kInfer);
          Tensor got = capmt::route(g, inst.params, inst.context, inst.features);
          auto want = capmt_oracle::route(capmt_test::to_vec(inst.context),
                                          capmt_test::to_mat(inst.features), inst.oracle_params,
                                          n_itr);
          CHECK(max_abs_diff(got.value(), want) < 1e-10);
          ++checked;
        }
      }
    }
  }
  CHECK(checked == 16);
}

TEST_CASE("route_conventional agrees with the scalar oracle") {
  for (std::uint64_t seed : {3ULL, 4ULL, 5ULL}) {
    auto inst = make_routing_instance(8, 8, 2, 3, 6, seed);
    Graph g(Graph::Mode::kInfer);
    Tensor got = capmt::route_conventional(g, inst.params, inst.features);
    auto want =
        capmt_oracle::route_conventional(capmt_test::to_mat(inst.features), inst.oracle_params, 3);
    CHECK(max_abs_diff(got.value(), want) < 1e-10);
  }
}

TEST_CASE("coupling coefficients stay on the simplex and rho stays bounded") {
  const double rho_bound = std::tanh(1.0) + 1e-15;
  for (std::uint64_t seed : {21ULL, 22ULL}) {
    auto inst = make_routing_instance(8, 8, 3, 4, 7, seed);
    Graph g(Graph::Mode::kInfer);
    capmt::RoutingTrace trace;
    capmt::route(g, inst.params, inst.context, inst.features, &trace);
    REQUIRE(trace.size() == 4u * 7u * 3u);
    for (int itr = 1; itr <= 4; ++itr) {
      for (int i = 0; i < 7; ++i) {
        double sum = 0.0;
        for (const auto& row : trace)
          if (row.iteration == itr && row.low == i) {
            CHECK(row.coupling > 0.0);
            CHECK(std::fabs(row.correlation) <= rho_bound);
            sum += row.coupling;
          }
        CHECK(std::fabs(sum - 1.0) < 1e-12);
      }
    }
  }
}

TEST_CASE("single high-level capsule forces coupling of exactly one") {
  auto inst = make_routing_instance(8, 8, 1, 3, 5, 31);
  Graph g(Graph::Mode::kInfer);
  capmt::RoutingTrace trace;
  capmt::route(g, inst.params, inst.context, inst.features, &trace);
  for (const auto& row : trace) CHECK(row.coupling == 1.0);
}

TEST_CASE("permuting feature rows leaves route output bit-identical") {
  auto inst = make_routing_instance(8, 8, 2, 3, 6, 41);
  Graph g(Graph::Mode::kInfer);
  Tensor base = capmt::route(g, inst.params, inst.context, inst.features);

  // Rotate and reverse the rows.
  const std::int64_t n = inst.features.shape()[0], d = inst.features.shape()[1];
  for (int variant = 0; variant < 2; ++variant) {
    Tensor perm = Tensor::zeros({n, d});
    for (std::int64_t i = 0; i < n; ++i) {
      const std::int64_t srcrow = variant == 0 ? (i + 2) % n : n - 1 - i;
      for (std::int64_t k = 0; k < d; ++k)
        perm.value()[static_cast<std::size_t>(i * d + k)] =
            inst.features.value()[static_cast<std::size_t>(srcrow * d + k)];
    }
    Tensor got = capmt::route(g, inst.params, inst.context, perm);
    CHECK(got.value() == base.value());
  }
}

TEST_CASE("route is deterministic") {
  auto inst = make_routing_instance(8, 8, 2, 3, 5, 51);
  Graph g(Graph::Mode::kInfer);
  Tensor a = capmt::route(g, inst.params, inst.context, inst.features);
  Tensor b = capmt::route(g, inst.params, inst.context, inst.features);
  CHECK(a.value() == b.value());
}

TEST_CASE("route reacts to the context, squash keeps norms under one") {
  auto inst = make_routing_instance(8, 8, 1, 3, 5, 61);
  Graph g(Graph::Mode::kInfer);
  Tensor out_a = capmt::route(g, inst.params, inst.context, inst.features);
  Tensor other_ctx = inst.context;
  Tensor shifted = Tensor::from(other_ctx.shape(), other_ctx.value());
  for (double& v : shifted.value()) v = -2.0 * v + 0.3;
  Tensor out_b = capmt::route(g, inst.params, shifted, inst.features);
  CHECK(max_abs_diff(out_a.value(), out_b.value()) > 1e-8);

  // squash([0.6, 0.8]) has norm exactly 1/2 and keeps the direction.
  auto squashed = capmt_oracle::squash({0.6, 0.8});
  CHECK(std::fabs(std::hypot(squashed[0], squashed[1]) - 0.5) < 1e-12);
  CHECK(std::fabs(squashed[0] / squashed[1] - 0.75) < 1e-12);
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    capmt_oracle::Vec s(4);
    for (double& v : s) v = 5.0 * rng.normal();
    const auto q = capmt_oracle::squash(s);
    double norm = 0.0;
    for (double v : q) norm += v * v;
    CHECK(std::sqrt(norm) < 1.0);
  }
}

TEST_CASE("zero features collapse to the fusion bias") {
  auto inst = make_routing_instance(8, 8, 2, 1, 4, 71);
  Tensor zero_feats = Tensor::zeros({4, 8});
  Graph g(Graph::Mode::kInfer);
  Tensor out = capmt::route(g, inst.params, inst.context, zero_feats);
  // u_hat = 0 -> v = 0 -> m = context * (W_v 0) = 0, so only the bias remains.
  CHECK(out.value() == inst.params.b_fuse.value());
}

TEST_CASE("routing errors") {
  auto inst = make_routing_instance(8, 8, 1, 2, 3, 81);
  Graph g(Graph::Mode::kInfer);

  Tensor bad_ctx = Tensor::from({8, 1}, {0, 0, 0, 1.0 / 0.0, 0, 0, 0, 0});
  CHECK_THROWS_AS(capmt::route(g, inst.params, bad_ctx, inst.features), capmt::NumericError);

  Tensor wrong_dim = Tensor::zeros({3, 7});
  CHECK_THROWS_AS(capmt::route(g, inst.params, inst.context, wrong_dim), capmt::DimensionError);

  Tensor huge = Tensor::full({3, 8}, 1e200);
  try {
    capmt::route(g, inst.params, inst.context, huge);
    FAIL("expected a numeric error");
  } catch (const capmt::NumericError& e) {
    CHECK(std::string(e.what()).find("iteration") != std::string::npos);
  }
}

TEST_CASE("route gradients match finite differences") {
  auto inst = make_routing_instance(8, 8, 1, 3, 5, 91, 0.5);
  Rng wrng(17);
  Tensor weights = random_tensor({8, 1}, wrng);  // fixed projection
  std::vector<Tensor> leaves{inst.context, inst.features, inst.params.w_context,
                             inst.params.w_visual, inst.params.w_fuse, inst.params.b_fuse};
  for (const auto& w : inst.params.w_transform) leaves.push_back(w);
  auto forward = [&](Graph& g) {
    Tensor out = capmt::route(g, inst.params, inst.context, inst.features);
    return g.sum(g.mul(out, weights));
  };
  CHECK(capmt_test::max_grad_error(forward, leaves) < 1e-4);
}

TEST_CASE("conventional route gradients match finite differences") {
  auto inst = make_routing_instance(8, 8, 2, 2, 4, 101, 0.5);
  Rng wrng(19);
  Tensor weights = random_tensor({8, 1}, wrng);
  std::vector<Tensor> leaves{inst.features, inst.params.w_visual, inst.params.w_fuse};
  for (const auto& w : inst.params.w_transform) leaves.push_back(w);
  auto forward = [&](Graph& g) {
    Tensor out = capmt::route_conventional(g, inst.params, inst.features);
    return g.sum(g.mul(out, weights));
  };
  CHECK(capmt_test::max_grad_error(forward, leaves) < 1e-4);
}
