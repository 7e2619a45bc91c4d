#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "laflow/checkpoint.hpp"
#include "laflow/gradcheck.hpp"
#include "laflow/layers.hpp"
#include "laflow/normalize.hpp"
#include "laflow/optim.hpp"
#include "support.hpp"

using namespace laflow;
using laflow::test::randn;

TEST_CASE("backward: square at 3 has slope 6") {
  Tape tape;
  Var x = tape.variable(Matrix::Constant(1, 1, 3.0));
  Var y = sum(cwise_product(x, x));
  tape.backward(y);
  CHECK(y.scalar() == 9.0);
  CHECK(x.grad()(0, 0) == 6.0);
}

TEST_CASE("backward: sum(Wx) gives column sums of W") {
  Tape tape;
  Matrix w(2, 2);
  w << 1, 2, 3, 4;
  Var x = tape.variable(Matrix::Ones(2, 1));
  tape.backward(sum(matmul(tape.constant(w), x)));
  CHECK(x.grad()(0, 0) == 4.0);
  CHECK(x.grad()(1, 0) == 6.0);
}

TEST_CASE("backward: parameters off the loss path get zero gradient") {
  Rng rng(4);
  Parameter used("used", randn(2, 2, rng));
  Parameter unused("unused", randn(2, 2, rng));
  Tape tape;
  Var a = tape.param(used);
  Var b = tape.param(unused);
  (void)tanh(b);
  tape.backward(sum(square(a)));
  CHECK(unused.grad.isZero(0.0));
  CHECK(used.grad.isApprox(2.0 * used.value));
}

TEST_CASE("backward: rejects non-scalar loss and foreign tapes") {
  Tape tape, other;
  Var x = tape.variable(Matrix::Ones(2, 1));
  CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
  Var y = other.variable(Matrix::Ones(1, 1));
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
}

TEST_CASE("backward: stop_gradient blocks the adjoint") {
  Tape tape;
  Var x = tape.variable(Matrix::Constant(1, 1, 2.0));
  tape.backward(sum(cwise_product(x, stop_gradient(x))));
  CHECK(x.grad()(0, 0) == 2.0);
}

TEST_CASE("gradcheck: 16-parameter three-layer MLP over five seeds") {
  for (std::uint64_t seed : test::kGradSeeds) {
    Rng rng(seed);
    Linear l1("l1", 1, 2, rng), l2("l2", 2, 2, rng), l3("l3", 2, 2, rng);
    ParamList params;
    l1.collect(params);
    l2.collect(params);
    l3.collect(params);
    std::size_t count = 0;
    for (auto* p : params) count += static_cast<std::size_t>(p->value.size());
    REQUIRE(count == 16);
    const Matrix x = randn(5, 1, rng);
    auto loss = [&](Tape& tape) {
      Var h = tanh(l1(tape, tape.constant(x)));
      h = silu(l2(tape, h));
      return mean(square(l3(tape, h)));
    };
    const auto r = check_gradients(params, loss, rng);
    INFO("seed " << seed << " worst " << r.worst_entry);
    CHECK(r.max_relative_error < test::kGradTolerance);
  }
}

TEST_CASE("gradcheck: every tape primitive") {
  for (std::uint64_t seed : test::kGradSeeds) {
    Rng rng(seed);
    Parameter a("a", randn(6, 3, rng));
    Parameter b("b", randn(6, 3, rng));
    Parameter row("row", randn(1, 3, rng));
    Parameter s("s", randn(6, 1, rng));
    ParamList params{&a, &b, &row, &s};
    auto loss = [&](Tape& tape) {
      Var va = tape.param(a), vb = tape.param(b), vr = tape.param(row), vs = tape.param(s);
      Var x = add_rowwise(va - vb, vr);
      x = cwise_product(sigmoid(x), exp(clamp(vb, -0.5, 0.5)));
      x = scale_rows(x, vs) + add_scalar(-va, 0.3);
      Var pooled = concat_rows(std::vector<Var>{group_mean_rows(x, 3), group_max_rows(vb, 2)});
      Var joined = concat_cols(std::vector<Var>{slice_cols(pooled, 1, 2), slice_rows(row_sum(pooled), 0, 5)});
      Var g = gather_rows(joined, {4, 0, 0, 2});
      Var r = reshape_rowmajor(repeat_row(slice_rows(g, 0, 1), 2), 3, 2);
      return sum(square(matmul(tanh(r), 0.5 * reshape_rowmajor(g, 2, 6)))) + mean(silu(g));
    };
    const auto r = check_gradients(params, loss, rng);
    INFO("seed " << seed << " worst " << r.worst_entry);
    CHECK(r.max_relative_error < test::kGradTolerance);
  }
}

TEST_CASE("adamw: zero gradient and zero decay leaves parameters alone") {
  Rng rng(1);
  Parameter p("p", randn(3, 2, rng));
  const Matrix before = p.value;
  AdamW opt({&p}, AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.0});
  p.zero_grad();
  opt.step();
  CHECK(p.value == before);
}

TEST_CASE("adamw: first step on a unit gradient moves by lr") {
  Parameter p("p", Matrix::Ones(1, 1));
  AdamW opt({&p}, AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.0});
  p.grad.setOnes();
  opt.step();
  // m_hat = 1, v_hat = 1, step = lr * 1 / (1 + eps)
  CHECK(p.value(0, 0) == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-14));

  p.grad.setOnes();
  const double after_one = p.value(0, 0);
  opt.step();
  // Constant gradient keeps m_hat = v_hat = 1 at every step.
  CHECK(p.value(0, 0) < after_one);
  CHECK(p.value(0, 0) == doctest::Approx(after_one - 0.1 / (1.0 + 1e-8)).epsilon(1e-14));
}

TEST_CASE("adamw: weight decay is decoupled from the adaptive step") {
  Parameter p("p", Matrix::Constant(1, 1, 2.0));
  AdamW opt({&p}, AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.5});
  p.grad.setZero();
  opt.step();
  CHECK(p.value(0, 0) == doctest::Approx(2.0 * (1.0 - 0.1 * 0.5)).epsilon(1e-15));
}

TEST_CASE("adamw: rejects bad gradients") {
  Parameter p("p", Matrix::Ones(2, 2));
  AdamW opt({&p}, {});
  p.grad = Matrix::Ones(1, 2);
  CHECK_THROWS_AS(opt.step(), std::invalid_argument);
  p.grad = Matrix::Ones(2, 2);
  p.grad(1, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(opt.step(), std::domain_error);
}

TEST_CASE("ema: arithmetic, fixed point and geometric convergence") {
  Matrix shadow = Matrix::Zero(1, 1);
  ema_update(shadow, Matrix::Ones(1, 1), 0.95);
  CHECK(shadow(0, 0) == doctest::Approx(0.05).epsilon(1e-15));

  Matrix same = Matrix::Constant(2, 2, 0.7);
  Matrix copy = same;
  ema_update(copy, same, 0.95);
  CHECK(copy.isApprox(same, 1e-15));

  Parameter p("p", Matrix::Constant(1, 1, 3.0));
  Ema ema({&p}, 0.95);
  ema.shadow()[0].setZero();
  for (int i = 0; i < 100; ++i) ema.update({&p});
  CHECK(ema.shadow()[0](0, 0) == doctest::Approx(3.0 * (1.0 - std::pow(0.95, 100))).epsilon(1e-12));
  CHECK(std::abs(ema.shadow()[0](0, 0) - 3.0) < 0.01 * 3.0);

  CHECK_THROWS_AS(ema_update(shadow, shadow, 1.0), std::domain_error);
  CHECK_THROWS_AS(ema_update(shadow, shadow, -0.1), std::domain_error);
}

TEST_CASE("clip_grad_norm rescales to the bound") {
  Parameter a("a", Matrix::Zero(1, 2)), b("b", Matrix::Zero(1, 1));
  a.grad << 3, 0;
  b.grad << 4;
  const double norm = clip_grad_norm<double>({&a, &b}, 1.0);
  CHECK(norm == doctest::Approx(5.0));
  CHECK(a.grad(0, 0) == doctest::Approx(0.6));
  CHECK(b.grad(0, 0) == doctest::Approx(0.8));
}

TEST_CASE("normalize: endpoints, midpoint and round trip") {
  Rng rng(11);
  Matrix data = randn(50, 4, rng) * 3.0;
  const RangeStats stats = RangeStats::fit(data);
  CHECK(stats.warnings.empty());

  Matrix probe(3, 4);
  probe.row(0) = stats.min;
  probe.row(1) = stats.max;
  probe.row(2) = 0.5 * (stats.min + stats.max);
  const Matrix y = normalize(probe, stats);
  CHECK(y.row(0).isApprox(Eigen::RowVectorXd::Constant(4, -1.0)));
  CHECK(y.row(1).isApprox(Eigen::RowVectorXd::Constant(4, 1.0)));
  CHECK(y.row(2).cwiseAbs().maxCoeff() < 1e-12);

  const Matrix x = randn(1000, 4, rng) * 2.0;
  CHECK((denormalize(normalize(x, stats), stats) - x).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("normalize: degenerate dimension maps to zero with a warning") {
  Matrix data(3, 2);
  data << 1, 5, 2, 5, 3, 5;
  const RangeStats stats = RangeStats::fit(data);
  REQUIRE(stats.warnings.size() == 1);
  CHECK(stats.degenerate(1));
  const Matrix y = normalize(data, stats);
  CHECK(y.col(1).isZero(0.0));
}

TEST_CASE("normalize: clamping happens only at execution") {
  Matrix data(2, 1);
  data << 0, 1;
  const RangeStats stats = RangeStats::fit(data);
  Matrix outside(1, 1);
  outside << 3.0;
  CHECK(normalize(outside, stats)(0, 0) == doctest::Approx(5.0));
  CHECK(clamp_unit(normalize(outside, stats))(0, 0) == 1.0);
}

TEST_CASE("checkpoint: round trip and hash validation") {
  test::TempDir dir("ckpt");
  Rng rng(3);
  Parameter w("w", randn(3, 5, rng)), b("b", randn(1, 5, rng));
  Checkpoint ck;
  ck.config_json = R"({"seed":1})";
  ck.config_hash = config_hash(ck.config_json);
  ck.put_params("net.", {&w, &b});
  ck.put_scalar("jerk", 0.125);
  const auto file = dir.path() / "a.ckpt";
  save_checkpoint(file, ck);

  const Checkpoint back = load_checkpoint(file, ck.config_hash);
  Parameter w2("w", Matrix::Zero(3, 5)), b2("b", Matrix::Zero(1, 5));
  back.get_params("net.", {&w2, &b2});
  CHECK(w2.value == w.value);
  CHECK(b2.value == b.value);
  CHECK(back.get_scalar("jerk") == 0.125);
  CHECK(parameter_hash({&w2, &b2}) == parameter_hash({&w, &b}));

  CHECK_THROWS(load_checkpoint(file, std::string("0000000000000000")));
  Parameter wrong("w", Matrix::Zero(2, 5));
  CHECK_THROWS(back.get_params("net.", {&wrong, &b2}));
}

TEST_CASE("checkpoint: tampered config text is detected") {
  test::TempDir dir("ckpt-tamper");
  Checkpoint ck;
  ck.config_json = R"({"seed":1})";
  ck.config_hash = config_hash(ck.config_json);
  ck.put_scalar("x", 1.0);
  Checkpoint bad = ck;
  bad.config_json = R"({"seed":2})";
  save_checkpoint(dir.path() / "bad.ckpt", bad);
  CHECK_THROWS(load_checkpoint(dir.path() / "bad.ckpt"));
}

TEST_CASE("rng: named streams are reproducible and independent") {
  Rng a = make_stream(7, "init");
  Rng b = make_stream(7, "init");
  Rng c = make_stream(7, "data");
  const auto x = a();
  CHECK(x == b());
  CHECK(x != c());
  CHECK(make_stream(7, "eval", 0)() != make_stream(7, "eval", 1)());
}
