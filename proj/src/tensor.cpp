#include "dietnlu/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace dietnlu {

namespace {

std::atomic<int64_t> g_next_node_id{1};
thread_local bool g_grad_enabled = true;

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<EMat>;
using CMapMat = Eigen::Map<const EMat>;

std::shared_ptr<TensorNode> new_node(Shape shape, std::vector<double> value) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->id = g_next_node_id.fetch_add(1, std::memory_order_relaxed);
  return n;
}

void accum(TensorNode& n, int64_t index, double g) {
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  n.grad[index] += g;
}

std::vector<double>& grad_buf(TensorNode& n) {
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

// Builds the output tensor and links the graph when recording is on and any
// input requires grad.
Tensor make_op(Shape shape, std::vector<double> value,
               std::vector<Tensor> parents,
               std::function<void(TensorNode&)> backprop) {
  auto n = new_node(std::move(shape), std::move(value));
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) {
      if (p.defined() && p.requires_grad()) {
        needs = true;
        break;
      }
    }
  }
  if (needs) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.node_ptr());
    n->backprop = std::move(backprop);
  }
  return Tensor::wrap(std::move(n));
}

void check_same_shape(const std::string& op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw_shape_error(op, a.shape(), b.shape());
}

void check_2d(const std::string& op, const Tensor& a) {
  if (a.ndim() != 2)
    throw std::invalid_argument(op + ": expected a 2-d tensor, got shape " +
                                shape_str(a.shape()));
}

}  // namespace

int64_t shape_size(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

void throw_shape_error(const std::string& op, const Shape& a, const Shape& b) {
  throw std::invalid_argument("shape mismatch in " + op + ": " + shape_str(a) +
                              " vs " + shape_str(b));
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set(bool on) { g_grad_enabled = on; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = new_node(std::move(shape), {});
  n->value.assign(shape_size(n->shape), 0.0);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::constant(Shape shape, double v) {
  auto n = new_node(std::move(shape), {});
  n->value.assign(shape_size(n->shape), v);
  return wrap(std::move(n));
}

Tensor Tensor::scalar(double v) {
  auto n = new_node(Shape{}, std::vector<double>{v});
  return wrap(std::move(n));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values,
                           bool requires_grad) {
  if (shape_size(shape) != static_cast<int64_t>(values.size()))
    throw std::invalid_argument(
        "from_values: shape " + shape_str(shape) + " expects " +
        std::to_string(shape_size(shape)) + " values, got " +
        std::to_string(values.size()));
  auto n = new_node(std::move(shape), std::move(values));
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

double Tensor::item() const {
  if (!defined() || size() != 1)
    throw std::invalid_argument("item(): tensor is not a scalar");
  return node_->value[0];
}

std::vector<double> Tensor::grad_or_zeros() const {
  if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

void Tensor::backward() {
  if (!defined() || size() != 1)
    throw std::invalid_argument("backward(): root must be a scalar, got shape " +
                                (defined() ? shape_str(shape()) : "<empty>"));
  // Gather the reachable subgraph; node ids record creation order, which is
  // already topological.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<TensorNode*> stack{node_.get()};
  seen.insert(node_.get());
  while (!stack.empty()) {
    TensorNode* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second)
        stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const TensorNode* a, const TensorNode* b) { return a->id > b->id; });
  grad_buf(*node_)[0] += 1.0;
  for (TensorNode* n : order) {
    if (n->backprop && !n->grad.empty()) n->backprop(*n);
  }
}

// --- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& n) {
    auto& ga = grad_buf(*n.parents[0]);
    auto& gb = grad_buf(*n.parents[1]);
    for (size_t i = 0; i < n.grad.size(); ++i) {
      ga[i] += n.grad[i];
      gb[i] += n.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& n) {
    auto& ga = grad_buf(*n.parents[0]);
    auto& gb = grad_buf(*n.parents[1]);
    for (size_t i = 0; i < n.grad.size(); ++i) {
      ga[i] += n.grad[i];
      gb[i] -= n.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& n) {
    auto& ga = grad_buf(*n.parents[0]);
    auto& gb = grad_buf(*n.parents[1]);
    const auto& av = n.parents[0]->value;
    const auto& bv = n.parents[1]->value;
    for (size_t i = 0; i < n.grad.size(); ++i) {
      ga[i] += n.grad[i] * bv[i];
      gb[i] += n.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a.values()[i] * s;
  return make_op(a.shape(), std::move(out), {a}, [s](TensorNode& n) {
    auto& ga = grad_buf(*n.parents[0]);
    for (size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * s;
  });
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a.values()[i] + c;
  return make_op(a.shape(), std::move(out), {a}, [](TensorNode& n) {
    auto& ga = grad_buf(*n.parents[0]);
    for (size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
  });
}

// --- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_2d("matmul", a);
  check_2d("matmul", b);
  if (a.dim(1) != b.dim(0)) throw_shape_error("matmul", a.shape(), b.shape());
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<size_t>(m) * n);
  {
    CMapMat ma(a.values().data(), m, k);
    CMapMat mb(b.values().data(), k, n);
    MapMat mo(out.data(), m, n);
    mo.noalias() = ma * mb;
  }
  return make_op({m, n}, std::move(out), {a, b}, [m, k, n](TensorNode& node) {
    CMapMat g(node.grad.data(), m, n);
    CMapMat ma(node.parents[0]->value.data(), m, k);
    CMapMat mb(node.parents[1]->value.data(), k, n);
    MapMat ga(grad_buf(*node.parents[0]).data(), m, k);
    MapMat gb(grad_buf(*node.parents[1]).data(), k, n);
    ga.noalias() += g * mb.transpose();
    gb.noalias() += ma.transpose() * g;
  });
}

Tensor transpose(const Tensor& a) {
  check_2d("transpose", a);
  const int r = a.dim(0), c = a.dim(1);
  std::vector<double> out(static_cast<size_t>(r) * c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<size_t>(j) * r + i] = a.values()[static_cast<size_t>(i) * c + j];
  return make_op({c, r}, std::move(out), {a}, [r, c](TensorNode& n) {
    auto& ga = grad_buf(*n.parents[0]);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        ga[static_cast<size_t>(i) * c + j] += n.grad[static_cast<size_t>(j) * r + i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) throw_shape_error("reshape", a.shape(), shape);
  std::vector<double> out = a.values();
  return make_op(std::move(shape), std::move(out), {a}, [](TensorNode& n) {
    auto& ga = grad_buf(*n.parents[0]);
    for (size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
  });
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  check_2d("add_rowvec", m);
  if (v.ndim() != 1 || v.dim(0) != m.dim(1))
    throw_shape_error("add_rowvec", m.shape(), v.shape());
  const int r = m.dim(0), c = m.dim(1);
  std::vector<double> out(m.values());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<size_t>(i) * c + j] += v.values()[j];
  return make_op(m.shape(), std::move(out), {m, v}, [r, c](TensorNode& n) {
    auto& gm = grad_buf(*n.parents[0]);
    auto& gv = grad_buf(*n.parents[1]);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) {
        const double g = n.grad[static_cast<size_t>(i) * c + j];
        gm[static_cast<size_t>(i) * c + j] += g;
        gv[j] += g;
      }
  });
}

Tensor add_colvec(const Tensor& m, const Tensor& v) {
  check_2d("add_colvec", m);
  if (v.ndim() != 1 || v.dim(0) != m.dim(0))
    throw_shape_error("add_colvec", m.shape(), v.shape());
  const int r = m.dim(0), c = m.dim(1);
  std::vector<double> out(m.values());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<size_t>(i) * c + j] += v.values()[i];
  return make_op(m.shape(), std::move(out), {m, v}, [r, c](TensorNode& n) {
    auto& gm = grad_buf(*n.parents[0]);
    auto& gv = grad_buf(*n.parents[1]);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) {
        const double g = n.grad[static_cast<size_t>(i) * c + j];
        gm[static_cast<size_t>(i) * c + j] += g;
        gv[i] += g;
      }
  });
}

// --- concatenation and slicing --------------------------------------------

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  int c = -1, rows = 0;
  for (const auto& p : parts) {
    check_2d("concat_rows", p);
    if (c < 0) c = p.dim(1);
    if (p.dim(1) != c) throw_shape_error("concat_rows", parts[0].shape(), p.shape());
    rows += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(rows) * c);
  for (const auto& p : parts)
    out.insert(out.end(), p.values().begin(), p.values().end());
  return make_op({rows, c}, std::move(out), parts, [](TensorNode& n) {
    size_t off = 0;
    for (auto& p : n.parents) {
      auto& gp = grad_buf(*p);
      for (size_t i = 0; i < p->value.size(); ++i) gp[i] += n.grad[off + i];
      off += p->value.size();
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  int r = -1, cols = 0;
  for (const auto& p : parts) {
    check_2d("concat_cols", p);
    if (r < 0) r = p.dim(0);
    if (p.dim(0) != r) throw_shape_error("concat_cols", parts[0].shape(), p.shape());
    cols += p.dim(1);
  }
  std::vector<double> out(static_cast<size_t>(r) * cols);
  size_t coff = 0;
  for (const auto& p : parts) {
    const int pc = p.dim(1);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < pc; ++j)
        out[static_cast<size_t>(i) * cols + coff + j] =
            p.values()[static_cast<size_t>(i) * pc + j];
    coff += pc;
  }
  return make_op({r, cols}, std::move(out), parts, [r, cols](TensorNode& n) {
    size_t coff = 0;
    for (auto& p : n.parents) {
      const int pc = p->shape[1];
      auto& gp = grad_buf(*p);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < pc; ++j)
          gp[static_cast<size_t>(i) * pc + j] +=
              n.grad[static_cast<size_t>(i) * cols + coff + j];
      coff += pc;
    }
  });
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
  check_2d("slice_rows", a);
  if (r0 < 0 || r1 > a.dim(0) || r0 >= r1)
    throw std::invalid_argument("slice_rows: bad range [" + std::to_string(r0) +
                                "," + std::to_string(r1) + ") for shape " +
                                shape_str(a.shape()));
  const int c = a.dim(1);
  std::vector<double> out(a.values().begin() + static_cast<size_t>(r0) * c,
                          a.values().begin() + static_cast<size_t>(r1) * c);
  return make_op({r1 - r0, c}, std::move(out), {a}, [r0, c](TensorNode& n) {
    auto& ga = grad_buf(*n.parents[0]);
    const size_t base = static_cast<size_t>(r0) * c;
    for (size_t i = 0; i < n.grad.size(); ++i) ga[base + i] += n.grad[i];
  });
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  check_2d("slice_cols", a);
  if (c0 < 0 || c1 > a.dim(1) || c0 >= c1)
    throw std::invalid_argument("slice_cols: bad range [" + std::to_string(c0) +
                                "," + std::to_string(c1) + ") for shape " +
                                shape_str(a.shape()));
  const int r = a.dim(0), c = a.dim(1), w = c1 - c0;
  std::vector<double> out(static_cast<size_t>(r) * w);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < w; ++j)
      out[static_cast<size_t>(i) * w + j] = a.values()[static_cast<size_t>(i) * c + c0 + j];
  return make_op({r, w}, std::move(out), {a}, [r, c, c0, w](TensorNode& n) {
    auto& ga = grad_buf(*n.parents[0]);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < w; ++j)
        ga[static_cast<size_t>(i) * c + c0 + j] += n.grad[static_cast<size_t>(i) * w + j];
  });
}

// --- softmax family -------------------------------------------------------

Tensor softmax_rows(const Tensor& m) {
  check_2d("softmax_rows", m);
  const int r = m.dim(0), c = m.dim(1);
  std::vector<double> out(static_cast<size_t>(r) * c);
  for (int i = 0; i < r; ++i) {
    const double* x = m.values().data() + static_cast<size_t>(i) * c;
    double* y = out.data() + static_cast<size_t>(i) * c;
    double mx = x[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    double s = 0.0;
    for (int j = 0; j < c; ++j) {
      y[j] = std::exp(x[j] - mx);
      s += y[j];
    }
    for (int j = 0; j < c; ++j) y[j] /= s;
  }
  return make_op({r, c}, std::move(out), {m}, [r, c](TensorNode& n) {
    auto& gm = grad_buf(*n.parents[0]);
    for (int i = 0; i < r; ++i) {
      const double* y = n.value.data() + static_cast<size_t>(i) * c;
      const double* g = n.grad.data() + static_cast<size_t>(i) * c;
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += g[j] * y[j];
      for (int j = 0; j < c; ++j)
        gm[static_cast<size_t>(i) * c + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor logsumexp_rows(const Tensor& m) {
  check_2d("logsumexp_rows", m);
  const int r = m.dim(0), c = m.dim(1);
  std::vector<double> out(r);
  for (int i = 0; i < r; ++i) {
    const double* x = m.values().data() + static_cast<size_t>(i) * c;
    double mx = x[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += std::exp(x[j] - mx);
    out[i] = mx + std::log(s);
  }
  return make_op({r}, std::move(out), {m}, [r, c](TensorNode& n) {
    auto& gm = grad_buf(*n.parents[0]);
    const auto& x = n.parents[0]->value;
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j)
        gm[static_cast<size_t>(i) * c + j] +=
            n.grad[i] * std::exp(x[static_cast<size_t>(i) * c + j] - n.value[i]);
    }
  });
}

// --- activations ----------------------------------------------------------

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a.values()[i] > 0 ? a.values()[i] : 0.0;
  return make_op(a.shape(), std::move(out), {a}, [](TensorNode& n) {
    auto& ga = grad_buf(*n.parents[0]);
    const auto& x = n.parents[0]->value;
    for (size_t i = 0; i < n.grad.size(); ++i)
      if (x[i] > 0) ga[i] += n.grad[i];
  });
}

Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.7071067811865476;
  constexpr double kInvSqrt2Pi = 0.3989422804014327;
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) {
    const double x = a.values()[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  return make_op(a.shape(), std::move(out), {a}, [](TensorNode& n) {
    auto& ga = grad_buf(*n.parents[0]);
    const auto& xv = n.parents[0]->value;
    for (size_t i = 0; i < n.grad.size(); ++i) {
      const double x = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      ga[i] += n.grad[i] * (cdf + x * pdf);
    }
  });
}

// --- layer norm -----------------------------------------------------------

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps) {
  check_2d("layer_norm", x);
  const int r = x.dim(0), c = x.dim(1);
  if (gain.ndim() != 1 || gain.dim(0) != c)
    throw_shape_error("layer_norm gain", x.shape(), gain.shape());
  if (bias.ndim() != 1 || bias.dim(0) != c)
    throw_shape_error("layer_norm bias", x.shape(), bias.shape());
  std::vector<double> out(static_cast<size_t>(r) * c);
  std::vector<double> inv_std(r), xhat(static_cast<size_t>(r) * c);
  for (int i = 0; i < r; ++i) {
    const double* xi = x.values().data() + static_cast<size_t>(i) * c;
    double mu = 0.0;
    for (int j = 0; j < c; ++j) mu += xi[j];
    mu /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= c;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (int j = 0; j < c; ++j) {
      const double h = (xi[j] - mu) * is;
      xhat[static_cast<size_t>(i) * c + j] = h;
      out[static_cast<size_t>(i) * c + j] = gain.values()[j] * h + bias.values()[j];
    }
  }
  return make_op(
      {r, c}, std::move(out), {x, gain, bias},
      [r, c, inv_std = std::move(inv_std), xhat = std::move(xhat)](TensorNode& n) {
        auto& gx = grad_buf(*n.parents[0]);
        auto& gg = grad_buf(*n.parents[1]);
        auto& gb = grad_buf(*n.parents[2]);
        const auto& gain = n.parents[1]->value;
        for (int i = 0; i < r; ++i) {
          const double* g = n.grad.data() + static_cast<size_t>(i) * c;
          const double* h = xhat.data() + static_cast<size_t>(i) * c;
          double sum_dh = 0.0, sum_dh_h = 0.0;
          for (int j = 0; j < c; ++j) {
            const double dh = g[j] * gain[j];
            sum_dh += dh;
            sum_dh_h += dh * h[j];
            gg[j] += g[j] * h[j];
            gb[j] += g[j];
          }
          const double is = inv_std[i];
          for (int j = 0; j < c; ++j) {
            const double dh = g[j] * gain[j];
            gx[static_cast<size_t>(i) * c + j] +=
                is * (dh - sum_dh / c - h[j] * sum_dh_h / c);
          }
        }
      });
}

// --- lookups --------------------------------------------------------------

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
  check_2d("embedding_rows", table);
  const int rows = table.dim(0), c = table.dim(1);
  std::vector<double> out;
  out.reserve(ids.size() * c);
  for (int id : ids) {
    if (id < 0 || id >= rows)
      throw std::invalid_argument("embedding_rows: id " + std::to_string(id) +
                                  " out of range [0," + std::to_string(rows) + ")");
    out.insert(out.end(), table.values().begin() + static_cast<size_t>(id) * c,
               table.values().begin() + static_cast<size_t>(id + 1) * c);
  }
  return make_op({static_cast<int>(ids.size()), c}, std::move(out), {table},
                 [ids, c](TensorNode& n) {
                   auto& gt = grad_buf(*n.parents[0]);
                   for (size_t i = 0; i < ids.size(); ++i)
                     for (int j = 0; j < c; ++j)
                       gt[static_cast<size_t>(ids[i]) * c + j] +=
                           n.grad[i * c + j];
                 });
}

Tensor sparse_matmul(const std::vector<SparseRow>& rows, const Tensor& table) {
  check_2d("sparse_matmul", table);
  const int nrows = static_cast<int>(rows.size());
  const int trows = table.dim(0), c = table.dim(1);
  std::vector<double> out(static_cast<size_t>(nrows) * c, 0.0);
  for (int i = 0; i < nrows; ++i) {
    for (const auto& [idx, w] : rows[i]) {
      if (idx < 0 || idx >= trows)
        throw std::invalid_argument("sparse_matmul: index " + std::to_string(idx) +
                                    " out of range [0," + std::to_string(trows) + ")");
      const double* trow = table.values().data() + static_cast<size_t>(idx) * c;
      double* orow = out.data() + static_cast<size_t>(i) * c;
      for (int j = 0; j < c; ++j) orow[j] += w * trow[j];
    }
  }
  return make_op({nrows, c}, std::move(out), {table}, [rows, c](TensorNode& n) {
    auto& gt = grad_buf(*n.parents[0]);
    for (size_t i = 0; i < rows.size(); ++i) {
      const double* g = n.grad.data() + i * c;
      for (const auto& [idx, w] : rows[i]) {
        double* grow = gt.data() + static_cast<size_t>(idx) * c;
        for (int j = 0; j < c; ++j) grow[j] += w * g[j];
      }
    }
  });
}

Tensor dropout(const Tensor& a, double rate, Rng& rng, bool training) {
  if (!training || rate <= 0.0) return a;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(a.size());
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) {
    mask[i] = rng.bernoulli(rate) ? 0.0 : keep_scale;
    out[i] = a.values()[i] * mask[i];
  }
  return make_op(a.shape(), std::move(out), {a},
                 [mask = std::move(mask)](TensorNode& n) {
                   auto& ga = grad_buf(*n.parents[0]);
                   for (size_t i = 0; i < n.grad.size(); ++i)
                     ga[i] += n.grad[i] * mask[i];
                 });
}

// --- reductions -----------------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_op(Shape{}, {s}, {a}, [](TensorNode& n) {
    auto& ga = grad_buf(*n.parents[0]);
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
  double s = 0.0;
  for (double v : a.values()) s += v;
  const double inv = 1.0 / static_cast<double>(a.size());
  return make_op(Shape{}, {s * inv}, {a}, [inv](TensorNode& n) {
    auto& ga = grad_buf(*n.parents[0]);
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[0] * inv;
  });
}

Tensor rowsum(const Tensor& m) {
  check_2d("rowsum", m);
  const int r = m.dim(0), c = m.dim(1);
  std::vector<double> out(r, 0.0);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[i] += m.values()[static_cast<size_t>(i) * c + j];
  return make_op({r}, std::move(out), {m}, [r, c](TensorNode& n) {
    auto& gm = grad_buf(*n.parents[0]);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) gm[static_cast<size_t>(i) * c + j] += n.grad[i];
  });
}

Tensor colsum(const Tensor& m) {
  check_2d("colsum", m);
  const int r = m.dim(0), c = m.dim(1);
  std::vector<double> out(c, 0.0);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[j] += m.values()[static_cast<size_t>(i) * c + j];
  return make_op({c}, std::move(out), {m}, [r, c](TensorNode& n) {
    auto& gm = grad_buf(*n.parents[0]);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) gm[static_cast<size_t>(i) * c + j] += n.grad[j];
  });
}

Tensor pick(const Tensor& m, const std::vector<std::pair<int, int>>& pairs) {
  check_2d("pick", m);
  const int r = m.dim(0), c = m.dim(1);
  std::vector<double> out(pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    const auto [pi, pj] = pairs[i];
    if (pi < 0 || pi >= r || pj < 0 || pj >= c)
      throw std::invalid_argument("pick: index (" + std::to_string(pi) + "," +
                                  std::to_string(pj) + ") out of range for " +
                                  shape_str(m.shape()));
    out[i] = m.values()[static_cast<size_t>(pi) * c + pj];
  }
  return make_op({static_cast<int>(pairs.size())}, std::move(out), {m},
                 [pairs, c](TensorNode& n) {
                   auto& gm = grad_buf(*n.parents[0]);
                   for (size_t i = 0; i < pairs.size(); ++i)
                     gm[static_cast<size_t>(pairs[i].first) * c + pairs[i].second] +=
                         n.grad[i];
                 });
}

Tensor rel_position_logits(const Tensor& q, const Tensor& r) {
  check_2d("rel_position_logits", q);
  check_2d("rel_position_logits", r);
  if (q.dim(1) != r.dim(1))
    throw_shape_error("rel_position_logits", q.shape(), r.shape());
  if (r.dim(0) % 2 == 0)
    throw std::invalid_argument(
        "rel_position_logits: relative table must have 2k+1 rows, got " +
        std::to_string(r.dim(0)));
  const int t = q.dim(0), d = q.dim(1), k = (r.dim(0) - 1) / 2;
  auto clip = [k](int delta) { return std::clamp(delta, -k, k) + k; };
  std::vector<double> out(static_cast<size_t>(t) * t, 0.0);
  for (int i = 0; i < t; ++i) {
    const double* qi = q.values().data() + static_cast<size_t>(i) * d;
    for (int j = 0; j < t; ++j) {
      const double* rr = r.values().data() + static_cast<size_t>(clip(j - i)) * d;
      double s = 0.0;
      for (int a = 0; a < d; ++a) s += qi[a] * rr[a];
      out[static_cast<size_t>(i) * t + j] = s;
    }
  }
  return make_op({t, t}, std::move(out), {q, r}, [t, d, clip](TensorNode& n) {
    auto& gq = grad_buf(*n.parents[0]);
    auto& gr = grad_buf(*n.parents[1]);
    const auto& qv = n.parents[0]->value;
    const auto& rv = n.parents[1]->value;
    for (int i = 0; i < t; ++i) {
      for (int j = 0; j < t; ++j) {
        const double g = n.grad[static_cast<size_t>(i) * t + j];
        if (g == 0.0) continue;
        const size_t ri = static_cast<size_t>(clip(j - i)) * d;
        for (int a = 0; a < d; ++a) {
          gq[static_cast<size_t>(i) * d + a] += g * rv[ri + a];
          gr[ri + a] += g * qv[static_cast<size_t>(i) * d + a];
        }
      }
    }
  });
}

// --- Adam -----------------------------------------------------------------

void adam_step(std::vector<Tensor>& params,
               const std::vector<std::vector<double>>& grads, AdamState& state) {
  if (params.size() != grads.size())
    throw std::invalid_argument("adam_step: " + std::to_string(params.size()) +
                                " params vs " + std::to_string(grads.size()) +
                                " grads");
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].size(), 0.0);
      state.v[i].assign(params[i].size(), 0.0);
    }
  }
  state.step_count += 1;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step_count));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].mutable_values();
    const auto& g = grads[i];
    if (g.size() != p.size())
      throw_shape_error("adam_step", params[i].shape(),
                        Shape{static_cast<int>(g.size())});
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)) {
  state_.config = config;
}

void AdamOptimizer::step() {
  std::vector<std::vector<double>> grads;
  grads.reserve(params_.size());
  for (const auto& p : params_) grads.push_back(p.grad_or_zeros());
  adam_step(params_, grads, state_);
  for (auto& p : params_) p.zero_grad();
}

// --- gradient check -------------------------------------------------------

GradCheckReport gradient_check(
    const std::function<Tensor()>& loss_fn,
    const std::vector<std::pair<std::string, Tensor>>& params, double step) {
  for (const auto& [name, p] : params) {
    Tensor t = p;
    t.zero_grad();
  }
  Tensor loss = loss_fn();
  loss.backward();

  GradCheckReport report;
  NoGradGuard no_grad;
  for (const auto& [name, param] : params) {
    Tensor p = param;
    const std::vector<double> analytic = p.grad_or_zeros();
    GradCheckEntry entry;
    entry.name = name;
    auto& vals = p.mutable_values();
    for (size_t j = 0; j < vals.size(); ++j) {
      const double saved = vals[j];
      vals[j] = saved + step;
      const double up = loss_fn().item();
      vals[j] = saved - step;
      const double down = loss_fn().item();
      vals[j] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double denom =
          std::max({1.0, std::abs(analytic[j]), std::abs(numeric)});
      const double rel = std::abs(analytic[j] - numeric) / denom;
      if (rel > entry.max_rel_error) {
        entry.max_rel_error = rel;
        entry.worst_index = static_cast<int64_t>(j);
        entry.analytic = analytic[j];
        entry.numeric = numeric;
      }
    }
    if (entry.max_rel_error > report.max_rel_error) {
      report.max_rel_error = entry.max_rel_error;
      report.worst_param = name;
      report.worst_index = entry.worst_index;
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace dietnlu
