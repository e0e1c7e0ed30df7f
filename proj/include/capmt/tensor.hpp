#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "capmt/error.hpp"
#include "capmt/rng.hpp"

namespace capmt {

class Tensor;

struct TensorData {
  std::vector<std::int64_t> shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  // Leaves default to true; constants (masks, position encodings, frozen
  // features) opt out so the reverse pass can prune their subtrees.
  bool requires_grad = true;
  std::int64_t node_index = -1;  // position in the recording tape, -1 for leaves
  std::vector<Tensor> parents;
  std::function<void(TensorData&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

// Dense 64-bit float tensor; a cheap handle with shared ownership of the
// underlying buffer, so parameters stay alive across per-batch graphs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::int64_t> shape);
  static Tensor full(std::vector<std::int64_t> shape, double fill);
  static Tensor from(std::vector<std::int64_t> shape, std::vector<double> values);
  // Constant leaf excluded from gradient propagation.
  static Tensor constant(std::vector<std::int64_t> shape, std::vector<double> values);
  // Xavier-uniform initialized leaf marked as a trainable parameter.
  static Tensor param(std::vector<std::int64_t> shape, Rng& rng);
  static Tensor param_zeros(std::vector<std::int64_t> shape);

  // A Tensor is a shared handle; const-ness is shallow, as for a smart
  // pointer, so backward passes can accumulate through captured handles.
  bool defined() const { return static_cast<bool>(data_); }
  const std::vector<std::int64_t>& shape() const { return data_->shape; }
  std::int64_t dim(int i) const { return data_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_->value.size()); }
  std::vector<double>& value() const { return data_->value; }
  std::vector<double>& grad() const { return data_->grad; }
  bool requires_grad() const { return data_->requires_grad; }
  const Tensor& set_requires_grad(bool value) const {
    data_->requires_grad = value;
    return *this;
  }

  double item() const;
  double at(std::int64_t row, std::int64_t col) const;

  void zero_grad() const { data_->grad.assign(data_->value.size(), 0.0); }

  TensorData& data() const { return *data_; }
  const std::shared_ptr<TensorData>& ptr() const { return data_; }

 private:
  std::shared_ptr<TensorData> data_;
};

std::string shape_str(const std::vector<std::int64_t>& shape);
std::int64_t shape_numel(const std::vector<std::int64_t>& shape);

// Records operations for reverse-mode differentiation. A graph and the
// tensors produced through it are confined to one thread; an inference-mode
// graph computes values without recording anything.
class Graph {
 public:
  enum class Mode { kTrain, kInfer };

  explicit Graph(Mode mode, std::uint64_t rng_seed = 0)
      : mode_(mode), rng_(rng_seed) {}

  Mode mode() const { return mode_; }
  bool training() const { return mode_ == Mode::kTrain; }
  std::size_t node_count() const { return tape_.size(); }
  Rng& rng() { return rng_; }

  // Core arithmetic. matmul_nt(a, b) = a * b^T, matmul_tn(a, b) = a^T * b.
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor matmul_nt(const Tensor& a, const Tensor& b);
  Tensor matmul_tn(const Tensor& a, const Tensor& b);

  // Elementwise; the second operand may be same-shape, a scalar, or (for 2-D
  // tensors) a column vector broadcast across columns.
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor div(const Tensor& a, const Tensor& b);

  Tensor add_scalar(const Tensor& a, double s);
  Tensor scale(const Tensor& a, double s);

  Tensor tanh(const Tensor& a);
  Tensor sigmoid(const Tensor& a);
  Tensor relu(const Tensor& a);
  Tensor sqrt(const Tensor& a);

  Tensor sum(const Tensor& a);                  // -> [1 x 1]
  Tensor mean(const Tensor& a, int axis);       // population statistics
  Tensor stddev(const Tensor& a, int axis);
  std::pair<Tensor, Tensor> stats(const Tensor& a, int axis);

  // axis: the dimension that is normalized (sums to one per orthogonal index).
  Tensor softmax(const Tensor& a, int axis);

  // Normalizes each column of x over the model dimension, then applies the
  // per-row affine transform; epsilon 1e-6.
  Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

  // Inverted dropout; identity in inference mode and for rate 0.
  Tensor dropout(const Tensor& x, double rate);

  // Pearson correlation between every row of u [N x d] and every row of
  // w [M x d] -> [N x M]; population statistics, 0 for (near-)constant rows.
  Tensor pcc_rows(const Tensor& u, const Tensor& w);

  Tensor concat_rows(const std::vector<Tensor>& parts);
  Tensor concat_cols(const std::vector<Tensor>& parts);
  Tensor slice_col(const Tensor& x, std::int64_t col);
  Tensor transpose(const Tensor& x);
  // Rows of x selected by index, in order (duplicates allowed).
  Tensor gather_rows(const Tensor& x, const std::vector<std::int64_t>& rows);

  // Embedding lookup: rows of table indexed by ids, returned as columns.
  Tensor embed_cols(const Tensor& table, const std::vector<int>& ids);

  // Sum over columns t of logsumexp(logits[:, t]) - logits[ids[t], t].
  Tensor nll_loss(const Tensor& logits, const std::vector<int>& ids);

  // Reverse pass from a scalar loss recorded on this graph. Visits each
  // recorded node once in reverse topological order and accumulates into
  // parent gradients (leaves keep accumulating across calls).
  void backward(const Tensor& loss);

 private:
  Tensor make(std::vector<std::int64_t> shape, std::vector<double> value,
              std::vector<Tensor> parents, std::function<void(TensorData&)> fn);
  Tensor binary(const Tensor& a, const Tensor& b, const char* name, int op);

  std::vector<std::shared_ptr<TensorData>> tape_;
  Mode mode_;
  Rng rng_;
};

}  // namespace capmt
