#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dietnlu/rng.hpp"

namespace dietnlu {

// Shape {} denotes a scalar (size 1).
using Shape = std::vector<int>;

int64_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);
[[noreturn]] void throw_shape_error(const std::string& op, const Shape& a,
                                    const Shape& b);

// Thread-local switch for graph recording. Inference and finite-difference
// probes run with recording off.
struct GradMode {
  static bool enabled();
  static void set(bool on);
};

struct NoGradGuard {
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
  ~NoGradGuard() { GradMode::set(prev_); }
  bool prev_;
};

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until backward reaches this node
  bool requires_grad = false;
  int64_t id = 0;  // creation order, which is a topological order
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;
};

// Dense array with reverse-mode autodiff. Copying a Tensor copies the
// handle; the underlying node is shared. Graphs are recorded dynamically:
// every op whose inputs require grad links a node with a backprop closure.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor constant(Shape shape, double v);
  static Tensor scalar(double v);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[i]; }
  int64_t size() const { return static_cast<int64_t>(node_->value.size()); }
  bool is_scalar() const { return defined() && node_->value.size() == 1; }

  const std::vector<double>& values() const { return node_->value; }
  // In-place mutation for parameters (optimizer, initialization). Must not
  // be used on graph intermediates.
  std::vector<double>& mutable_values() { return node_->value; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  std::vector<double> grad_or_zeros() const;
  const std::vector<double>& grad_ref() const { return node_->grad; }
  void zero_grad();

  // Reverse pass from a scalar root; accumulates into .grad of every
  // reachable node that requires grad.
  void backward();

  TensorNode* node() const { return node_.get(); }
  std::shared_ptr<TensorNode> node_ptr() const { return node_; }

  static Tensor wrap(std::shared_ptr<TensorNode> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<TensorNode> node_;
};

// --- primitives -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double c);

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

// [R,C] + [C] broadcast over rows / [R,C] + [R] broadcast over columns
Tensor add_rowvec(const Tensor& m, const Tensor& v);
Tensor add_colvec(const Tensor& m, const Tensor& v);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, int r0, int r1);
Tensor slice_cols(const Tensor& a, int c0, int c1);
inline Tensor row(const Tensor& a, int r) { return slice_rows(a, r, r + 1); }

Tensor softmax_rows(const Tensor& m);
Tensor logsumexp_rows(const Tensor& m);  // [R,C] -> [R]

Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);

// Row-wise layer normalization with learned gain/bias of length C.
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps = 1e-6);

// Gather rows of table by id -> [ids.size(), C]
Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);

// Weighted sparse row combination: out[r] = sum_i w_ri * table[idx_ri].
// Equivalent to S x table for a fixed sparse matrix S given as index/weight
// sets; gradients flow to the table only.
using SparseRow = std::vector<std::pair<int, double>>;
Tensor sparse_matmul(const std::vector<SparseRow>& rows, const Tensor& table);

// Inverted dropout: identity in eval mode, scaled mask in training mode.
Tensor dropout(const Tensor& a, double rate, Rng& rng, bool training);

Tensor sum(const Tensor& a);   // -> scalar
Tensor mean(const Tensor& a);  // -> scalar
Tensor rowsum(const Tensor& m);  // [R,C] -> [R]
Tensor colsum(const Tensor& m);  // [R,C] -> [C]

// Gather scalar entries m[i,j] -> [pairs.size()]
Tensor pick(const Tensor& m, const std::vector<std::pair<int, int>>& pairs);

// Relative-position attention logits: out[i,j] = dot(Q[i], R[clip(j-i)])
// with clip(d) = clamp(d, -K, K) + K and R of shape [2K+1, head_dim].
Tensor rel_position_logits(const Tensor& q, const Tensor& r);

// --- optimizer ------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  int64_t step_count = 0;
  std::vector<std::vector<double>> m;  // first moment per parameter
  std::vector<std::vector<double>> v;  // second moment per parameter
};

// Standard Adam with bias correction. params[i] and grads[i] must agree in
// size; state moments are allocated on first use.
void adam_step(std::vector<Tensor>& params,
               const std::vector<std::vector<double>>& grads, AdamState& state);

class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Tensor> params, AdamConfig config = {});
  // Consumes the gradients accumulated on the parameters and zeroes them.
  void step();
  const AdamState& state() const { return state_; }

 private:
  std::vector<Tensor> params_;
  AdamState state_;
};

// --- gradient checking ----------------------------------------------------

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  int64_t worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
  std::vector<GradCheckEntry> entries;
  bool pass(double tolerance) const { return max_rel_error < tolerance; }
};

// Central-difference check of every parameter coordinate against the
// reverse-mode gradient. loss_fn must be deterministic. The error metric is
// |analytic - numeric| / max(1, |analytic|, |numeric|).
GradCheckReport gradient_check(
    const std::function<Tensor()>& loss_fn,
    const std::vector<std::pair<std::string, Tensor>>& params,
    double step = 1e-5);

}  // namespace dietnlu
