#include <doctest.h>

#include <cmath>
#include <vector>

#include "dietnlu/tensor.hpp"

using namespace dietnlu;

namespace {

Tensor rand_tensor(Shape shape, Rng& rng, bool requires_grad,
                   double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_values(std::move(shape), std::move(v), requires_grad);
}

// Reduce an arbitrary tensor to a scalar with non-uniform weights so that
// every coordinate's gradient is distinct and nonzero.
Tensor probe_sum(const Tensor& t, unsigned salt = 0) {
  std::vector<double> w(t.size());
  Rng rng(9000 + salt);
  for (double& x : w) x = rng.uniform(0.5, 1.5);
  Tensor probe = Tensor::from_values(t.shape(), std::move(w), false);
  return sum(mul(t, probe));
}

double check_param(const std::function<Tensor()>& loss,
                   std::vector<std::pair<std::string, Tensor>> params) {
  return gradient_check(loss, params).max_rel_error;
}

}  // namespace

TEST_CASE("multiply gradient: d(x*x)/dx at 3 is 6") {
  Tensor x = Tensor::from_values({}, {3.0}, true);
  Tensor y = mul(x, x);
  y.backward();
  CHECK(y.item() == doctest::Approx(9.0));
  CHECK(x.grad_or_zeros()[0] == doctest::Approx(6.0));
}

TEST_CASE("sum of softmax has zero gradient everywhere") {
  Rng rng(1);
  Tensor x = rand_tensor({2, 5}, rng, true, -3.0, 3.0);
  Tensor y = sum(softmax_rows(x));
  y.backward();
  CHECK(y.item() == doctest::Approx(2.0));
  for (double g : x.grad_or_zeros()) {
    CHECK(std::abs(g) < 1e-12);
  }
}

TEST_CASE("random small MLP matches finite differences") {
  Rng rng(2);
  Tensor x = Tensor::from_values({2, 3}, {0.3, -0.4, 0.9, -1.2, 0.5, 0.1}, false);
  Tensor w1 = rand_tensor({3, 4}, rng, true);
  Tensor b1 = rand_tensor({4}, rng, true);
  Tensor w2 = rand_tensor({4, 2}, rng, true);
  Tensor b2 = rand_tensor({2}, rng, true);
  Tensor g = rand_tensor({2, 2}, rng, true);
  auto loss = [&]() {
    Tensor h = gelu(add_rowvec(matmul(x, w1), b1));
    Tensor out = mul(add_rowvec(matmul(h, w2), b2), g);
    return sum(out);
  };
  double err = check_param(loss, {{"w1", w1}, {"b1", b1}, {"w2", w2},
                                  {"b2", b2}, {"g", g}});
  CHECK(err < 1e-4);
  CHECK(err < 1e-7);  // smooth network, should be much tighter than the bound
}

TEST_CASE("elementwise and broadcast primitives match finite differences") {
  Rng rng(3);
  Tensor a = rand_tensor({3, 4}, rng, true);
  Tensor b = rand_tensor({3, 4}, rng, true);
  Tensor rvec = rand_tensor({4}, rng, true);
  Tensor cvec = rand_tensor({3}, rng, true);

  CHECK(check_param([&] { return probe_sum(add(a, b)); },
                    {{"a", a}, {"b", b}}) < 1e-6);
  CHECK(check_param([&] { return probe_sum(sub(a, b)); },
                    {{"a", a}, {"b", b}}) < 1e-6);
  CHECK(check_param([&] { return probe_sum(mul(a, b)); },
                    {{"a", a}, {"b", b}}) < 1e-6);
  CHECK(check_param([&] { return probe_sum(scale(a, -2.5)); }, {{"a", a}}) <
        1e-6);
  CHECK(check_param([&] { return probe_sum(add_scalar(a, 1.7)); }, {{"a", a}}) <
        1e-6);
  CHECK(check_param([&] { return probe_sum(add_rowvec(a, rvec)); },
                    {{"a", a}, {"rvec", rvec}}) < 1e-6);
  CHECK(check_param([&] { return probe_sum(add_colvec(a, cvec)); },
                    {{"a", a}, {"cvec", cvec}}) < 1e-6);
}

TEST_CASE("matmul, transpose, reshape match finite differences") {
  Rng rng(4);
  Tensor a = rand_tensor({2, 3}, rng, true);
  Tensor b = rand_tensor({3, 4}, rng, true);
  CHECK(check_param([&] { return probe_sum(matmul(a, b)); },
                    {{"a", a}, {"b", b}}) < 1e-6);
  CHECK(check_param([&] { return probe_sum(transpose(a)); }, {{"a", a}}) <
        1e-6);
  CHECK(check_param([&] { return probe_sum(reshape(a, {3, 2})); },
                    {{"a", a}}) < 1e-6);
  CHECK(check_param([&] { return probe_sum(reshape(a, {6})); }, {{"a", a}}) <
        1e-6);
}

TEST_CASE("concat and slice match finite differences") {
  Rng rng(5);
  Tensor a = rand_tensor({2, 3}, rng, true);
  Tensor b = rand_tensor({1, 3}, rng, true);
  Tensor c = rand_tensor({2, 2}, rng, true);
  CHECK(check_param([&] { return probe_sum(concat_rows({a, b})); },
                    {{"a", a}, {"b", b}}) < 1e-6);
  CHECK(check_param([&] { return probe_sum(concat_cols({a, c})); },
                    {{"a", a}, {"c", c}}) < 1e-6);
  CHECK(check_param([&] { return probe_sum(slice_rows(a, 1, 2)); },
                    {{"a", a}}) < 1e-6);
  CHECK(check_param([&] { return probe_sum(slice_cols(a, 0, 2)); },
                    {{"a", a}}) < 1e-6);
}

TEST_CASE("softmax, logsumexp, activations, layer norm match finite differences") {
  Rng rng(6);
  Tensor a = rand_tensor({3, 5}, rng, true);
  Tensor gain = rand_tensor({5}, rng, true, 0.5, 1.5);
  Tensor bias = rand_tensor({5}, rng, true);
  CHECK(check_param([&] { return probe_sum(softmax_rows(a)); }, {{"a", a}}) <
        1e-6);
  CHECK(check_param([&] { return probe_sum(logsumexp_rows(a)); }, {{"a", a}}) <
        1e-6);
  CHECK(check_param([&] { return probe_sum(gelu(a)); }, {{"a", a}}) < 1e-6);
  CHECK(check_param([&] { return probe_sum(layer_norm_rows(a, gain, bias)); },
                    {{"a", a}, {"gain", gain}, {"bias", bias}}) < 1e-5);

  // relu is checked away from its kink.
  Tensor r = Tensor::from_values({2, 3}, {0.5, -0.8, 1.2, -0.3, 2.0, -1.5},
                                 true);
  CHECK(check_param([&] { return probe_sum(relu(r)); }, {{"r", r}}) < 1e-6);
}

TEST_CASE("reductions and gathers match finite differences") {
  Rng rng(7);
  Tensor a = rand_tensor({3, 4}, rng, true);
  Tensor table = rand_tensor({5, 3}, rng, true);
  CHECK(check_param([&] { return mul(sum(a), sum(a)); }, {{"a", a}}) < 1e-6);
  CHECK(check_param([&] { return mul(mean(a), mean(a)); }, {{"a", a}}) < 1e-6);
  CHECK(check_param([&] { return probe_sum(rowsum(a)); }, {{"a", a}}) < 1e-6);
  CHECK(check_param([&] { return probe_sum(colsum(a)); }, {{"a", a}}) < 1e-6);
  CHECK(check_param(
            [&] { return probe_sum(embedding_rows(table, {4, 0, 4})); },
            {{"table", table}}) < 1e-6);
  CHECK(check_param(
            [&] { return probe_sum(pick(a, {{0, 1}, {2, 3}, {0, 1}})); },
            {{"a", a}}) < 1e-6);
}

TEST_CASE("sparse matmul routes gradients to the table") {
  Rng rng(8);
  Tensor table = rand_tensor({6, 4}, rng, true);
  std::vector<SparseRow> rows = {
      {{0, 1.0}, {3, 0.5}},
      {{5, 2.0}},
      {},  // empty row stays zero
  };
  Tensor out = sparse_matmul(rows, table);
  CHECK(out.shape() == Shape{3, 4});
  for (int c = 0; c < 4; c++) CHECK(out.values()[2 * 4 + c] == 0.0);
  CHECK(check_param([&] { return probe_sum(sparse_matmul(rows, table)); },
                    {{"table", table}}) < 1e-6);
}

TEST_CASE("relative position logits match finite differences") {
  Rng rng(9);
  Tensor q = rand_tensor({4, 3}, rng, true);
  Tensor r = rand_tensor({5, 3}, rng, true);  // clip distance 2
  CHECK(check_param([&] { return probe_sum(rel_position_logits(q, r)); },
                    {{"q", q}, {"r", r}}) < 1e-6);
}

TEST_CASE("relative position logits index clamped distance") {
  // R rows: distance -1, 0, +1 (clip 1). out[i,j] = dot(q_i, R[clamp(j-i)]).
  Tensor q = Tensor::from_values({3, 1}, {1.0, 1.0, 1.0}, false);
  Tensor r = Tensor::from_values({3, 1}, {10.0, 20.0, 30.0}, false);
  Tensor out = rel_position_logits(q, r);
  const std::vector<double> want = {20, 30, 30, 10, 20, 30, 10, 10, 20};
  REQUIRE(out.shape() == Shape{3, 3});
  for (int i = 0; i < 9; i++) CHECK(out.values()[i] == doctest::Approx(want[i]));
}

TEST_CASE("logsumexp subtracts the max and survives extreme inputs") {
  Tensor big = Tensor::from_values({1, 2}, {1e6, 1e6 - 1.0}, false);
  Tensor lse = logsumexp_rows(big);
  CHECK(std::isfinite(lse.item()));
  CHECK(lse.item() == doctest::Approx(1e6 + std::log1p(std::exp(-1.0))));

  Tensor small = Tensor::from_values({1, 2}, {-1e6, -1e6 - 2.0}, false);
  CHECK(logsumexp_rows(small).item() ==
        doctest::Approx(-1e6 + std::log1p(std::exp(-2.0))));

  Tensor mixed = Tensor::from_values({1, 2}, {1e6, -1e6}, false);
  CHECK(logsumexp_rows(mixed).item() == doctest::Approx(1e6));
}

TEST_CASE("dropout is identity in eval mode and unbiased in training mode") {
  Rng rng(10);
  Tensor x = Tensor::constant({4, 8}, 1.0);
  Tensor eval_out = dropout(x, 0.5, rng, false);
  for (double v : eval_out.values()) CHECK(v == 1.0);

  // Inverted scaling: surviving entries are x/keep, dropped are 0.
  const double rate = 0.25;
  double acc = 0.0;
  int64_t n = 0;
  for (int rep = 0; rep < 2000; rep++) {
    Tensor out = dropout(x, rate, rng, true);
    for (double v : out.values()) {
      CHECK((v == 0.0 || v == doctest::Approx(1.0 / (1.0 - rate))));
      acc += v;
      n++;
    }
  }
  CHECK(acc / static_cast<double>(n) == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("adam leaves parameters untouched under zero gradient") {
  Tensor w = Tensor::from_values({3}, {1.0, -2.0, 0.5}, true);
  std::vector<Tensor> params = {w};
  AdamState state;
  adam_step(params, {{0.0, 0.0, 0.0}}, state);
  CHECK(w.values() == std::vector<double>{1.0, -2.0, 0.5});
  CHECK(state.step_count == 1);
}

TEST_CASE("adam first step has magnitude lr and opposes the gradient") {
  // d(0.5*w)/dw = 0.5; bias correction makes the first update
  // lr * g / (sqrt(g^2) + eps) = lr to within eps.
  Tensor w = Tensor::from_values({}, {0.7}, true);
  AdamOptimizer opt({w});
  Tensor loss = scale(w, 0.5);
  loss.backward();
  opt.step();
  const double delta = w.item() - 0.7;
  CHECK(delta < 0.0);
  CHECK(std::abs(delta) == doctest::Approx(0.001).epsilon(1e-6));
  CHECK(w.grad_or_zeros()[0] == 0.0);  // step() consumes the gradient
}

TEST_CASE("adam moves monotonically against a constant gradient") {
  Tensor w = Tensor::from_values({}, {0.3}, true);
  AdamOptimizer opt({w});
  double prev = w.item();
  for (int i = 0; i < 5; i++) {
    Tensor loss = scale(w, 2.0);
    loss.backward();
    opt.step();
    CHECK(w.item() < prev);
    prev = w.item();
  }
}

TEST_CASE("gradient check is near-exact for a quadratic") {
  Tensor w = Tensor::from_values({4}, {0.1, -0.7, 1.3, 0.4}, true);
  auto loss = [&] { return sum(mul(w, w)); };
  GradCheckReport report = gradient_check(loss, {{"w", w}});
  CHECK(report.max_rel_error < 1e-8);
  CHECK(report.pass(1e-8));
}

TEST_CASE("gradient check reports unreachable parameters as zero on both sides") {
  Tensor w = Tensor::from_values({}, {2.0}, true);
  Tensor orphan = Tensor::from_values({2}, {1.0, 1.0}, true);
  auto loss = [&] { return mul(w, w); };
  GradCheckReport report = gradient_check(loss, {{"w", w}, {"orphan", orphan}});
  CHECK(report.pass(1e-6));
  bool saw_orphan = false;
  for (const auto& e : report.entries) {
    if (e.name == "orphan") {
      saw_orphan = true;
      CHECK(e.analytic == 0.0);
      CHECK(e.numeric == 0.0);
    }
  }
  CHECK(saw_orphan);
}

TEST_CASE("backward rejects non-scalar roots and mismatched shapes throw") {
  Tensor m = Tensor::zeros({2, 2}, true);
  CHECK_THROWS(m.backward());
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({3, 2});
  CHECK_THROWS(add(a, b));
  CHECK_THROWS(matmul(a, a));
}

TEST_CASE("no-grad guard suppresses graph recording") {
  Tensor x = Tensor::from_values({}, {3.0}, true);
  {
    NoGradGuard guard;
    Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
  }
  Tensor z = mul(x, x);
  CHECK(z.requires_grad());
}
