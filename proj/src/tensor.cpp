#include "capmt/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace capmt {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using CMap = Eigen::Map<const EMat>;

// Rank-1 tensors behave as single-column matrices for axis operations.
void rows_cols(const std::vector<std::int64_t>& shape, std::int64_t& r, std::int64_t& c) {
  if (shape.size() == 1) {
    r = shape[0];
    c = 1;
  } else if (shape.size() == 2) {
    r = shape[0];
    c = shape[1];
  } else {
    throw DimensionError("expected rank 1 or 2 tensor, got " + shape_str(shape));
  }
}

}  // namespace

std::string shape_str(const std::vector<std::int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) n *= d;
  return n;
}

Tensor Tensor::zeros(std::vector<std::int64_t> shape) {
  return full(std::move(shape), 0.0);
}

Tensor Tensor::full(std::vector<std::int64_t> shape, double fill) {
  for (std::int64_t dim : shape)
    if (dim <= 0) throw DimensionError("non-positive dimension in " + shape_str(shape));
  Tensor t;
  t.data_ = std::make_shared<TensorData>();
  t.data_->shape = std::move(shape);
  t.data_->value.assign(static_cast<std::size_t>(shape_numel(t.data_->shape)), fill);
  return t;
}

Tensor Tensor::from(std::vector<std::int64_t> shape, std::vector<double> values) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  Tensor t = zeros(shape);
  t.value() = std::move(values);
  return t;
}

Tensor Tensor::constant(std::vector<std::int64_t> shape, std::vector<double> values) {
  Tensor t = from(std::move(shape), std::move(values));
  t.data().requires_grad = false;
  return t;
}

Tensor Tensor::param(std::vector<std::int64_t> shape, Rng& rng) {
  Tensor t = zeros(shape);
  std::int64_t r, c;
  rows_cols(t.shape(), r, c);
  const double a = std::sqrt(6.0 / static_cast<double>(r + c));
  for (double& v : t.value()) v = rng.uniform(-a, a);
  t.data().requires_grad = true;
  return t;
}

Tensor Tensor::param_zeros(std::vector<std::int64_t> shape) {
  Tensor t = zeros(std::move(shape));
  t.data().requires_grad = true;
  return t;
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return data_->value[0];
}

double Tensor::at(std::int64_t row, std::int64_t col) const {
  std::int64_t r, c;
  rows_cols(shape(), r, c);
  return data_->value[static_cast<std::size_t>(row * c + col)];
}

Tensor Graph::make(std::vector<std::int64_t> shape, std::vector<double> value,
                   std::vector<Tensor> parents, std::function<void(TensorData&)> fn) {
  Tensor t = Tensor::from(std::move(shape), std::move(value));
  bool needs_grad = false;
  for (const Tensor& p : parents) needs_grad = needs_grad || p.requires_grad();
  t.data().requires_grad = needs_grad;
  if (training() && needs_grad) {
    t.data().parents = std::move(parents);
    t.data().backward_fn = std::move(fn);
    t.data().node_index = static_cast<std::int64_t>(tape_.size());
    tape_.push_back(t.ptr());
  }
  return t;
}

// ---------------------------------------------------------------------------
// Matrix products (Eigen-backed kernels; everything else in this file is
// hand-rolled).

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(static_cast<std::size_t>(m * n));
  CMap A(a.value().data(), m, k), B(b.value().data(), k, n);
  EMap(out.data(), m, n).noalias() = A * B;
  return make({m, n}, std::move(out), {a, b}, [a, b, m, k, n](TensorData& self) {
    CMap A(a.value().data(), m, k), B(b.value().data(), k, n);
    CMap G(self.grad.data(), m, n);
    if (a.requires_grad()) {
      a.data().ensure_grad();
      EMap(a.grad().data(), m, k).noalias() += G * B.transpose();
    }
    if (b.requires_grad()) {
      b.data().ensure_grad();
      EMap(b.grad().data(), k, n).noalias() += A.transpose() * G;
    }
  });
}

Tensor Graph::matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[1])
    throw DimensionError("matmul_nt: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  const std::int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  std::vector<double> out(static_cast<std::size_t>(m * n));
  CMap A(a.value().data(), m, k), B(b.value().data(), n, k);
  EMap(out.data(), m, n).noalias() = A * B.transpose();
  return make({m, n}, std::move(out), {a, b}, [a, b, m, k, n](TensorData& self) {
    CMap A(a.value().data(), m, k), B(b.value().data(), n, k);
    CMap G(self.grad.data(), m, n);
    if (a.requires_grad()) {
      a.data().ensure_grad();
      EMap(a.grad().data(), m, k).noalias() += G * B;
    }
    if (b.requires_grad()) {
      b.data().ensure_grad();
      EMap(b.grad().data(), n, k).noalias() += G.transpose() * A;
    }
  });
}

Tensor Graph::matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[0] != b.shape()[0])
    throw DimensionError("matmul_tn: " + shape_str(a.shape()) + "^T x " + shape_str(b.shape()));
  const std::int64_t k = a.shape()[0], m = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(static_cast<std::size_t>(m * n));
  CMap A(a.value().data(), k, m), B(b.value().data(), k, n);
  EMap(out.data(), m, n).noalias() = A.transpose() * B;
  return make({m, n}, std::move(out), {a, b}, [a, b, m, k, n](TensorData& self) {
    CMap A(a.value().data(), k, m), B(b.value().data(), k, n);
    CMap G(self.grad.data(), m, n);
    if (a.requires_grad()) {
      a.data().ensure_grad();
      EMap(a.grad().data(), k, m).noalias() += B * G.transpose();
    }
    if (b.requires_grad()) {
      b.data().ensure_grad();
      EMap(b.grad().data(), k, n).noalias() += A * G;
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise suite. Broadcast cases: exact shape, scalar second operand,
// column vector second operand against a 2-D first operand.

namespace {
enum BinOp { kAdd, kSub, kMul, kDiv };
enum Bcast { kSame, kScalar, kColumn };
}  // namespace

Tensor Graph::binary(const Tensor& a, const Tensor& b, const char* name, int op) {
  Bcast mode;
  if (a.shape() == b.shape()) {
    mode = kSame;
  } else if (b.numel() == 1) {
    mode = kScalar;
  } else if (a.shape().size() == 2 && b.shape().size() == 2 && b.shape()[1] == 1 &&
             b.shape()[0] == a.shape()[0]) {
    mode = kColumn;
  } else {
    throw DimensionError(std::string(name) + ": incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }

  const std::int64_t cols = mode == kColumn ? a.shape()[1] : 1;
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<double> out(av.size());
  auto bval = [&](std::size_t i) -> double {
    switch (mode) {
      case kSame: return bv[i];
      case kScalar: return bv[0];
      default: return bv[i / static_cast<std::size_t>(cols)];
    }
  };
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double x = av[i], y = bval(i);
    switch (op) {
      case kAdd: out[i] = x + y; break;
      case kSub: out[i] = x - y; break;
      case kMul: out[i] = x * y; break;
      default: out[i] = x / y; break;
    }
  }

  return make(a.shape(), std::move(out), {a, b}, [a, b, op, mode, cols](TensorData& self) {
    a.data().ensure_grad();
    b.data().ensure_grad();
    auto& ag = a.grad();
    auto& bg = b.grad();
    const auto& av = a.value();
    const auto& bv = b.value();
    auto bidx = [&](std::size_t i) -> std::size_t {
      switch (mode) {
        case kSame: return i;
        case kScalar: return 0;
        default: return i / static_cast<std::size_t>(cols);
      }
    };
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double g = self.grad[i];
      const std::size_t j = bidx(i);
      switch (op) {
        case kAdd:
          ag[i] += g;
          bg[j] += g;
          break;
        case kSub:
          ag[i] += g;
          bg[j] -= g;
          break;
        case kMul:
          ag[i] += g * bv[j];
          bg[j] += g * av[i];
          break;
        default: {
          const double inv = 1.0 / bv[j];
          ag[i] += g * inv;
          bg[j] -= g * av[i] * inv * inv;
          break;
        }
      }
    }
  });
}

Tensor Graph::add(const Tensor& a, const Tensor& b) { return binary(a, b, "add", kAdd); }
Tensor Graph::sub(const Tensor& a, const Tensor& b) { return binary(a, b, "sub", kSub); }
Tensor Graph::mul(const Tensor& a, const Tensor& b) { return binary(a, b, "mul", kMul); }
Tensor Graph::div(const Tensor& a, const Tensor& b) { return binary(a, b, "div", kDiv); }

Tensor Graph::add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.value());
  for (double& v : out) v += s;
  return make(a.shape(), std::move(out), {a}, [a](TensorData& self) {
    a.data().ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) a.grad()[i] += self.grad[i];
  });
}

Tensor Graph::scale(const Tensor& a, double s) {
  std::vector<double> out(a.value());
  for (double& v : out) v *= s;
  return make(a.shape(), std::move(out), {a}, [a, s](TensorData& self) {
    a.data().ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) a.grad()[i] += s * self.grad[i];
  });
}

Tensor Graph::tanh(const Tensor& a) {
  std::vector<double> out(a.value());
  for (double& v : out) v = std::tanh(v);
  return make(a.shape(), std::move(out), {a}, [a](TensorData& self) {
    a.data().ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      a.grad()[i] += self.grad[i] * (1.0 - self.value[i] * self.value[i]);
  });
}

Tensor Graph::sigmoid(const Tensor& a) {
  std::vector<double> out(a.value());
  for (double& v : out) v = 1.0 / (1.0 + std::exp(-v));
  return make(a.shape(), std::move(out), {a}, [a](TensorData& self) {
    a.data().ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      a.grad()[i] += self.grad[i] * self.value[i] * (1.0 - self.value[i]);
  });
}

Tensor Graph::relu(const Tensor& a) {
  std::vector<double> out(a.value());
  for (double& v : out) v = std::max(0.0, v);
  return make(a.shape(), std::move(out), {a}, [a](TensorData& self) {
    a.data().ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (a.value()[i] > 0.0) a.grad()[i] += self.grad[i];
  });
}

Tensor Graph::sqrt(const Tensor& a) {
  std::vector<double> out(a.value());
  for (double& v : out) v = std::sqrt(v);
  return make(a.shape(), std::move(out), {a}, [a](TensorData& self) {
    a.data().ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (self.value[i] > 0.0) a.grad()[i] += self.grad[i] * 0.5 / self.value[i];
  });
}

Tensor Graph::sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.value()) s += v;
  return make({1, 1}, {s}, {a}, [a](TensorData& self) {
    a.data().ensure_grad();
    const double g = self.grad[0];
    for (double& v : a.grad()) v += g;
  });
}

Tensor Graph::mean(const Tensor& a, int axis) {
  std::int64_t r, c;
  rows_cols(a.shape(), r, c);
  if (axis != 0 && axis != 1) throw DimensionError("mean: axis out of range");
  const std::int64_t lines = axis == 0 ? c : r;     // independent outputs
  const std::int64_t extent = axis == 0 ? r : c;    // reduced length
  std::vector<double> out(static_cast<std::size_t>(lines), 0.0);
  for (std::int64_t l = 0; l < lines; ++l) {
    double s = 0.0;
    for (std::int64_t e = 0; e < extent; ++e)
      s += axis == 0 ? a.value()[static_cast<std::size_t>(e * c + l)]
                     : a.value()[static_cast<std::size_t>(l * c + e)];
    out[static_cast<std::size_t>(l)] = s / static_cast<double>(extent);
  }
  std::vector<std::int64_t> oshape = axis == 0 ? std::vector<std::int64_t>{1, c}
                                               : std::vector<std::int64_t>{r, 1};
  return make(oshape, std::move(out), {a}, [a, axis, r, c, extent](TensorData& self) {
    a.data().ensure_grad();
    const double inv = 1.0 / static_cast<double>(extent);
    const std::int64_t lines = axis == 0 ? c : r;
    for (std::int64_t l = 0; l < lines; ++l) {
      const double g = self.grad[static_cast<std::size_t>(l)] * inv;
      for (std::int64_t e = 0; e < extent; ++e) {
        const std::size_t idx = axis == 0 ? static_cast<std::size_t>(e * c + l)
                                          : static_cast<std::size_t>(l * c + e);
        a.grad()[idx] += g;
      }
    }
  });
}

Tensor Graph::stddev(const Tensor& a, int axis) {
  std::int64_t r, c;
  rows_cols(a.shape(), r, c);
  if (axis != 0 && axis != 1) throw DimensionError("stddev: axis out of range");
  const std::int64_t lines = axis == 0 ? c : r;
  const std::int64_t extent = axis == 0 ? r : c;
  std::vector<double> out(static_cast<std::size_t>(lines), 0.0);
  std::vector<double> mu(static_cast<std::size_t>(lines), 0.0);
  auto at = [&](std::int64_t l, std::int64_t e) {
    return axis == 0 ? a.value()[static_cast<std::size_t>(e * c + l)]
                     : a.value()[static_cast<std::size_t>(l * c + e)];
  };
  for (std::int64_t l = 0; l < lines; ++l) {
    double s = 0.0;
    for (std::int64_t e = 0; e < extent; ++e) s += at(l, e);
    mu[static_cast<std::size_t>(l)] = s / static_cast<double>(extent);
    double v = 0.0;
    for (std::int64_t e = 0; e < extent; ++e) {
      const double d = at(l, e) - mu[static_cast<std::size_t>(l)];
      v += d * d;
    }
    out[static_cast<std::size_t>(l)] = std::sqrt(v / static_cast<double>(extent));
  }
  std::vector<std::int64_t> oshape = axis == 0 ? std::vector<std::int64_t>{1, c}
                                               : std::vector<std::int64_t>{r, 1};
  return make(oshape, std::move(out), {a}, [a, axis, r, c, extent, mu](TensorData& self) {
    a.data().ensure_grad();
    const std::int64_t lines = axis == 0 ? c : r;
    for (std::int64_t l = 0; l < lines; ++l) {
      const double sd = self.value[static_cast<std::size_t>(l)];
      if (sd <= 1e-300) continue;
      const double g = self.grad[static_cast<std::size_t>(l)] /
                       (static_cast<double>(extent) * sd);
      for (std::int64_t e = 0; e < extent; ++e) {
        const std::size_t idx = axis == 0 ? static_cast<std::size_t>(e * c + l)
                                          : static_cast<std::size_t>(l * c + e);
        a.grad()[idx] += g * (a.value()[idx] - mu[static_cast<std::size_t>(l)]);
      }
    }
  });
}

std::pair<Tensor, Tensor> Graph::stats(const Tensor& a, int axis) {
  return {mean(a, axis), stddev(a, axis)};
}

Tensor Graph::softmax(const Tensor& a, int axis) {
  std::int64_t r, c;
  rows_cols(a.shape(), r, c);
  if (axis != 0 && axis != 1) throw DimensionError("softmax: axis out of range");
  const std::int64_t lines = axis == 0 ? c : r;
  const std::int64_t extent = axis == 0 ? r : c;
  std::vector<double> out(a.value().size());
  auto idx = [axis, c](std::int64_t l, std::int64_t e) {
    return axis == 0 ? static_cast<std::size_t>(e * c + l) : static_cast<std::size_t>(l * c + e);
  };
  for (std::int64_t l = 0; l < lines; ++l) {
    double mx = a.value()[idx(l, 0)];
    for (std::int64_t e = 1; e < extent; ++e) mx = std::max(mx, a.value()[idx(l, e)]);
    double z = 0.0;
    for (std::int64_t e = 0; e < extent; ++e) {
      const double ex = std::exp(a.value()[idx(l, e)] - mx);
      out[idx(l, e)] = ex;
      z += ex;
    }
    for (std::int64_t e = 0; e < extent; ++e) out[idx(l, e)] /= z;
  }
  return make(a.shape(), std::move(out), {a}, [a, axis, r, c, extent, idx](TensorData& self) {
    a.data().ensure_grad();
    const std::int64_t lines = axis == 0 ? c : r;
    for (std::int64_t l = 0; l < lines; ++l) {
      double dot = 0.0;
      for (std::int64_t e = 0; e < extent; ++e)
        dot += self.grad[idx(l, e)] * self.value[idx(l, e)];
      for (std::int64_t e = 0; e < extent; ++e)
        a.grad()[idx(l, e)] += self.value[idx(l, e)] * (self.grad[idx(l, e)] - dot);
    }
  });
}

Tensor Graph::layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  std::int64_t d, t;
  rows_cols(x.shape(), d, t);
  if (gain.numel() != d || bias.numel() != d)
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " vs input " + shape_str(x.shape()));
  constexpr double kEps = 1e-6;
  std::vector<double> out(x.value().size());
  std::vector<double> inv_sd(static_cast<std::size_t>(t));
  std::vector<double> hat(x.value().size());
  for (std::int64_t col = 0; col < t; ++col) {
    double mu = 0.0;
    for (std::int64_t i = 0; i < d; ++i) mu += x.value()[static_cast<std::size_t>(i * t + col)];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t i = 0; i < d; ++i) {
      const double dv = x.value()[static_cast<std::size_t>(i * t + col)] - mu;
      var += dv * dv;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kEps);
    inv_sd[static_cast<std::size_t>(col)] = inv;
    for (std::int64_t i = 0; i < d; ++i) {
      const std::size_t ix = static_cast<std::size_t>(i * t + col);
      hat[ix] = (x.value()[ix] - mu) * inv;
      out[ix] = hat[ix] * gain.value()[static_cast<std::size_t>(i)] +
                bias.value()[static_cast<std::size_t>(i)];
    }
  }
  return make(x.shape(), std::move(out), {x, gain, bias},
              [x, gain, bias, d, t, inv_sd, hat](TensorData& self) {
                x.data().ensure_grad();
                gain.data().ensure_grad();
                bias.data().ensure_grad();
                for (std::int64_t col = 0; col < t; ++col) {
                  double mean_h = 0.0, mean_hx = 0.0;
                  for (std::int64_t i = 0; i < d; ++i) {
                    const std::size_t ix = static_cast<std::size_t>(i * t + col);
                    const double h = self.grad[ix] * gain.value()[static_cast<std::size_t>(i)];
                    mean_h += h;
                    mean_hx += h * hat[ix];
                  }
                  mean_h /= static_cast<double>(d);
                  mean_hx /= static_cast<double>(d);
                  const double inv = inv_sd[static_cast<std::size_t>(col)];
                  for (std::int64_t i = 0; i < d; ++i) {
                    const std::size_t ix = static_cast<std::size_t>(i * t + col);
                    const double h = self.grad[ix] * gain.value()[static_cast<std::size_t>(i)];
                    x.grad()[ix] += inv * (h - mean_h - hat[ix] * mean_hx);
                    gain.grad()[static_cast<std::size_t>(i)] += self.grad[ix] * hat[ix];
                    bias.grad()[static_cast<std::size_t>(i)] += self.grad[ix];
                  }
                }
              });
}

Tensor Graph::dropout(const Tensor& x, double rate) {
  if (rate < 0.0 || rate >= 1.0)
    throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
  if (!training() || rate == 0.0) return x;
  const double keep = 1.0 - rate;
  std::vector<double> mask(x.value().size());
  for (double& m : mask) m = rng_.bernoulli(rate) ? 0.0 : 1.0 / keep;
  std::vector<double> out(x.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * mask[i];
  return make(x.shape(), std::move(out), {x}, [x, mask](TensorData& self) {
    x.data().ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) x.grad()[i] += self.grad[i] * mask[i];
  });
}

Tensor Graph::pcc_rows(const Tensor& u, const Tensor& w) {
  if (u.shape().size() != 2 || w.shape().size() != 2 || u.shape()[1] != w.shape()[1])
    throw DimensionError("pcc_rows: " + shape_str(u.shape()) + " vs " + shape_str(w.shape()));
  const std::int64_t n = u.shape()[0], m = w.shape()[0], d = u.shape()[1];
  if (d < 2) throw DimensionError("pcc_rows: row length must be at least 2");
  const double dn = static_cast<double>(d);

  // Per-row mean and centered second moment, recomputed in the backward pass
  // instead of caching the centered rows (keeps per-node memory O(n + m)).
  std::vector<double> mu_u(n), s_u(n), mu_w(m), s_w(m);
  auto center_stats = [dn](const std::vector<double>& v, std::int64_t rows, std::int64_t cols,
                           std::vector<double>& mu, std::vector<double>& ss) {
    for (std::int64_t i = 0; i < rows; ++i) {
      double s = 0.0;
      for (std::int64_t k = 0; k < cols; ++k) s += v[static_cast<std::size_t>(i * cols + k)];
      mu[static_cast<std::size_t>(i)] = s / dn;
      double q = 0.0;
      for (std::int64_t k = 0; k < cols; ++k) {
        const double c = v[static_cast<std::size_t>(i * cols + k)] - mu[static_cast<std::size_t>(i)];
        q += c * c;
      }
      ss[static_cast<std::size_t>(i)] = q;
    }
  };
  center_stats(u.value(), n, d, mu_u, s_u);
  center_stats(w.value(), m, d, mu_w, s_w);

  std::vector<double> out(static_cast<std::size_t>(n * m), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    const double sd_u = std::sqrt(s_u[static_cast<std::size_t>(i)] / dn);
    for (std::int64_t j = 0; j < m; ++j) {
      const double sd_w = std::sqrt(s_w[static_cast<std::size_t>(j)] / dn);
      const double denom = sd_u * sd_w;
      if (denom <= 1e-12) continue;
      double cov = 0.0;
      for (std::int64_t k = 0; k < d; ++k)
        cov += (u.value()[static_cast<std::size_t>(i * d + k)] - mu_u[static_cast<std::size_t>(i)]) *
               (w.value()[static_cast<std::size_t>(j * d + k)] - mu_w[static_cast<std::size_t>(j)]);
      cov /= dn;
      out[static_cast<std::size_t>(i * m + j)] = cov / denom;
    }
  }

  return make({n, m}, std::move(out), {u, w},
              [u, w, n, m, d, dn, mu_u, mu_w, s_u, s_w](TensorData& self) {
                const bool u_req = u.requires_grad();
                const bool w_req = w.requires_grad();
                if (!u_req && !w_req) return;
                if (u_req) u.data().ensure_grad();
                if (w_req) w.data().ensure_grad();
                for (std::int64_t i = 0; i < n; ++i) {
                  const double suu = s_u[static_cast<std::size_t>(i)];
                  for (std::int64_t j = 0; j < m; ++j) {
                    const double g = self.grad[static_cast<std::size_t>(i * m + j)];
                    if (g == 0.0) continue;
                    const double sww = s_w[static_cast<std::size_t>(j)];
                    const double sd_prod = std::sqrt(suu / dn) * std::sqrt(sww / dn);
                    if (sd_prod <= 1e-12) continue;  // constant-row branch: r is 0
                    double suw = 0.0;
                    for (std::int64_t k = 0; k < d; ++k)
                      suw += (u.value()[static_cast<std::size_t>(i * d + k)] -
                              mu_u[static_cast<std::size_t>(i)]) *
                             (w.value()[static_cast<std::size_t>(j * d + k)] -
                              mu_w[static_cast<std::size_t>(j)]);
                    const double denom = std::sqrt(suu * sww);
                    // d r / d u = (cw - (suw/suu) cu) / denom; mean terms vanish
                    // because the centered partner sums to zero.
                    for (std::int64_t k = 0; k < d; ++k) {
                      const double cu = u.value()[static_cast<std::size_t>(i * d + k)] -
                                        mu_u[static_cast<std::size_t>(i)];
                      const double cw = w.value()[static_cast<std::size_t>(j * d + k)] -
                                        mu_w[static_cast<std::size_t>(j)];
                      if (u_req)
                        u.grad()[static_cast<std::size_t>(i * d + k)] +=
                            g * (cw - suw / suu * cu) / denom;
                      if (w_req)
                        w.grad()[static_cast<std::size_t>(j * d + k)] +=
                            g * (cu - suw / sww * cw) / denom;
                    }
                  }
                }
              });
}

Tensor Graph::concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::int64_t cols = parts[0].shape().size() == 2 ? parts[0].shape()[1] : 1;
  std::int64_t rows = 0;
  for (const Tensor& p : parts) {
    std::int64_t r, c;
    rows_cols(p.shape(), r, c);
    if (c != cols) throw DimensionError("concat_rows: column mismatch");
    rows += r;
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(rows * cols));
  for (const Tensor& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
  return make({rows, cols}, std::move(out), parts, [parts](TensorData& self) {
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
      p.data().ensure_grad();
      for (std::size_t i = 0; i < p.value().size(); ++i) p.grad()[i] += self.grad[offset + i];
      offset += p.value().size();
    }
  });
}

Tensor Graph::concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  std::int64_t rows, c0;
  rows_cols(parts[0].shape(), rows, c0);
  std::int64_t cols = 0;
  std::vector<std::int64_t> widths;
  for (const Tensor& p : parts) {
    std::int64_t r, c;
    rows_cols(p.shape(), r, c);
    if (r != rows) throw DimensionError("concat_cols: row mismatch");
    widths.push_back(c);
    cols += c;
  }
  std::vector<double> out(static_cast<std::size_t>(rows * cols));
  std::int64_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const std::int64_t w = widths[p];
    for (std::int64_t i = 0; i < rows; ++i)
      for (std::int64_t j = 0; j < w; ++j)
        out[static_cast<std::size_t>(i * cols + offset + j)] =
            parts[p].value()[static_cast<std::size_t>(i * w + j)];
    offset += w;
  }
  return make({rows, cols}, std::move(out), parts, [parts, widths, rows, cols](TensorData& self) {
    std::int64_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      parts[p].data().ensure_grad();
      const std::int64_t w = widths[p];
      for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < w; ++j)
          parts[p].grad()[static_cast<std::size_t>(i * w + j)] +=
              self.grad[static_cast<std::size_t>(i * cols + offset + j)];
      offset += w;
    }
  });
}

Tensor Graph::transpose(const Tensor& x) {
  std::int64_t r, c;
  rows_cols(x.shape(), r, c);
  std::vector<double> out(static_cast<std::size_t>(r * c));
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j)
      out[static_cast<std::size_t>(j * r + i)] = x.value()[static_cast<std::size_t>(i * c + j)];
  return make({c, r}, std::move(out), {x}, [x, r, c](TensorData& self) {
    x.data().ensure_grad();
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < c; ++j)
        x.grad()[static_cast<std::size_t>(i * c + j)] +=
            self.grad[static_cast<std::size_t>(j * r + i)];
  });
}

Tensor Graph::gather_rows(const Tensor& x, const std::vector<std::int64_t>& rows) {
  std::int64_t r, c;
  rows_cols(x.shape(), r, c);
  for (std::int64_t idx : rows)
    if (idx < 0 || idx >= r) throw DimensionError("gather_rows: row index out of range");
  const std::int64_t n = static_cast<std::int64_t>(rows.size());
  if (n == 0) throw DimensionError("gather_rows: no rows selected");
  std::vector<double> out(static_cast<std::size_t>(n * c));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < c; ++j)
      out[static_cast<std::size_t>(i * c + j)] =
          x.value()[static_cast<std::size_t>(rows[static_cast<std::size_t>(i)] * c + j)];
  return make({n, c}, std::move(out), {x}, [x, rows, n, c](TensorData& self) {
    if (!x.requires_grad()) return;
    x.data().ensure_grad();
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < c; ++j)
        x.grad()[static_cast<std::size_t>(rows[static_cast<std::size_t>(i)] * c + j)] +=
            self.grad[static_cast<std::size_t>(i * c + j)];
  });
}

Tensor Graph::slice_col(const Tensor& x, std::int64_t col) {
  std::int64_t r, c;
  rows_cols(x.shape(), r, c);
  if (col < 0 || col >= c) throw DimensionError("slice_col: column out of range");
  std::vector<double> out(static_cast<std::size_t>(r));
  for (std::int64_t i = 0; i < r; ++i) out[static_cast<std::size_t>(i)] =
      x.value()[static_cast<std::size_t>(i * c + col)];
  return make({r, 1}, std::move(out), {x}, [x, r, c, col](TensorData& self) {
    x.data().ensure_grad();
    for (std::int64_t i = 0; i < r; ++i)
      x.grad()[static_cast<std::size_t>(i * c + col)] += self.grad[static_cast<std::size_t>(i)];
  });
}

Tensor Graph::embed_cols(const Tensor& table, const std::vector<int>& ids) {
  if (table.shape().size() != 2) throw DimensionError("embed_cols: table must be 2-D");
  const std::int64_t v = table.shape()[0], d = table.shape()[1];
  const std::int64_t t = static_cast<std::int64_t>(ids.size());
  if (t == 0) throw InputError("embed_cols: empty id sequence");
  for (int id : ids)
    if (id < 0 || id >= v)
      throw InputError("embed_cols: token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(v));
  std::vector<double> out(static_cast<std::size_t>(d * t));
  for (std::int64_t col = 0; col < t; ++col)
    for (std::int64_t i = 0; i < d; ++i)
      out[static_cast<std::size_t>(i * t + col)] =
          table.value()[static_cast<std::size_t>(ids[static_cast<std::size_t>(col)] * d + i)];
  return make({d, t}, std::move(out), {table}, [table, ids, d, t](TensorData& self) {
    table.data().ensure_grad();
    for (std::int64_t col = 0; col < t; ++col)
      for (std::int64_t i = 0; i < d; ++i)
        table.grad()[static_cast<std::size_t>(ids[static_cast<std::size_t>(col)] * d + i)] +=
            self.grad[static_cast<std::size_t>(i * t + col)];
  });
}

Tensor Graph::nll_loss(const Tensor& logits, const std::vector<int>& ids) {
  if (logits.shape().size() != 2) throw DimensionError("nll_loss: logits must be 2-D");
  const std::int64_t v = logits.shape()[0], t = logits.shape()[1];
  if (static_cast<std::int64_t>(ids.size()) != t)
    throw DimensionError("nll_loss: " + std::to_string(ids.size()) + " targets for " +
                         std::to_string(t) + " columns");
  for (int id : ids)
    if (id < 0 || id >= v) throw InputError("nll_loss: target id outside vocabulary");
  double total = 0.0;
  for (std::int64_t col = 0; col < t; ++col) {
    double mx = logits.value()[static_cast<std::size_t>(col)];
    for (std::int64_t i = 1; i < v; ++i)
      mx = std::max(mx, logits.value()[static_cast<std::size_t>(i * t + col)]);
    double z = 0.0;
    for (std::int64_t i = 0; i < v; ++i)
      z += std::exp(logits.value()[static_cast<std::size_t>(i * t + col)] - mx);
    const double lse = mx + std::log(z);
    total += lse - logits.value()[static_cast<std::size_t>(
                       ids[static_cast<std::size_t>(col)] * t + col)];
  }
  return make({1, 1}, {total}, {logits}, [logits, ids, v, t](TensorData& self) {
    logits.data().ensure_grad();
    const double g = self.grad[0];
    for (std::int64_t col = 0; col < t; ++col) {
      double mx = logits.value()[static_cast<std::size_t>(col)];
      for (std::int64_t i = 1; i < v; ++i)
        mx = std::max(mx, logits.value()[static_cast<std::size_t>(i * t + col)]);
      double z = 0.0;
      for (std::int64_t i = 0; i < v; ++i)
        z += std::exp(logits.value()[static_cast<std::size_t>(i * t + col)] - mx);
      for (std::int64_t i = 0; i < v; ++i) {
        const double p = std::exp(logits.value()[static_cast<std::size_t>(i * t + col)] - mx) / z;
        const double target = i == ids[static_cast<std::size_t>(col)] ? 1.0 : 0.0;
        logits.grad()[static_cast<std::size_t>(i * t + col)] += g * (p - target);
      }
    }
  });
}

void Graph::backward(const Tensor& loss) {
  if (!training())
    throw UsageError("backward on an inference graph");
  if (loss.numel() != 1)
    throw UsageError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  const std::int64_t root = loss.data().node_index;
  if (root < 0 || static_cast<std::size_t>(root) >= tape_.size() ||
      tape_[static_cast<std::size_t>(root)].get() != &loss.data())
    throw UsageError("loss tensor was not recorded on this graph");

  std::vector<char> reachable(tape_.size(), 0);
  std::vector<const TensorData*> stack{&loss.data()};
  reachable[static_cast<std::size_t>(root)] = 1;
  while (!stack.empty()) {
    const TensorData* node = stack.back();
    stack.pop_back();
    for (const Tensor& p : node->parents) {
      const std::int64_t idx = p.data().node_index;
      if (idx >= 0 && !reachable[static_cast<std::size_t>(idx)]) {
        reachable[static_cast<std::size_t>(idx)] = 1;
        stack.push_back(&p.data());
      }
    }
  }

  // Recorded-node gradients are transient per pass; only leaves accumulate
  // across backward calls.
  for (std::size_t idx = 0; idx <= static_cast<std::size_t>(root); ++idx)
    if (reachable[idx]) tape_[idx]->grad.assign(tape_[idx]->value.size(), 0.0);

  loss.data().grad[0] = 1.0;
  for (std::int64_t idx = root; idx >= 0; --idx) {
    if (!reachable[static_cast<std::size_t>(idx)]) continue;
    TensorData& node = *tape_[static_cast<std::size_t>(idx)];
    if (node.backward_fn) {
      node.ensure_grad();
      node.backward_fn(node);
    }
  }
}

}  // namespace capmt
