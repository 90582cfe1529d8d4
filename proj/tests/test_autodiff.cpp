#include <cmath>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include <doctest.h>

#include "dgpvae/autodiff.hpp"
#include "dgpvae/optim.hpp"
#include "dgpvae/params.hpp"
#include "dgpvae/rng.hpp"
#include "test_util.hpp"

using namespace dgpvae;
using test_util::check_close;
using test_util::check_grad_close;
using test_util::finite_diff;
using test_util::random_values;

namespace {

// Builds a tape over leaves with the given shapes, applies `build`, reduces
// the output to a scalar with fixed weights, and returns (value, gradients).
struct ScalarizedOp {
  std::vector<std::vector<std::size_t>> shapes;
  std::function<Var(Tape&, const std::vector<Var>&)> build;

  double eval(const std::vector<double>& flat) const {
    Tape tape;
    Var out = apply(tape, flat);
    return tape.value(out)(0);
  }

  std::vector<double> grad(const std::vector<double>& flat) const {
    Tape tape;
    std::vector<Var> leaves;
    Var out = apply(tape, flat, &leaves);
    tape.backward(out);
    std::vector<double> g;
    for (Var leaf : leaves) {
      Tensor t = tape.grad(leaf);
      g.insert(g.end(), t.values.begin(), t.values.end());
    }
    return g;
  }

 private:
  Var apply(Tape& tape, const std::vector<double>& flat, std::vector<Var>* leaves_out = nullptr) const {
    std::vector<Var> leaves;
    std::size_t offset = 0;
    for (const auto& shape : shapes) {
      std::size_t n = 1;
      for (std::size_t d : shape) n *= d;
      std::vector<double> vals(flat.begin() + offset, flat.begin() + offset + n);
      offset += n;
      leaves.push_back(tape.leaf(Tensor(shape, std::move(vals))));
    }
    Var out = build(tape, leaves);
    // Weighted reduction so permuted outputs cannot cancel.
    const Tensor& ov = tape.value(out);
    Tensor weights = Tensor::zeros(ov.shape);
    for (std::size_t i = 0; i < weights.values.size(); ++i) {
      weights.values[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
    }
    Var scalar = tape.sum(tape.mul(out, tape.constant(weights)));
    if (leaves_out) *leaves_out = leaves;
    return scalar;
  }
};

void check_op_gradient(const ScalarizedOp& op, const std::vector<double>& x) {
  auto fd = finite_diff([&](const std::vector<double>& v) { return op.eval(v); }, x);
  auto ad = op.grad(x);
  check_grad_close(ad, fd, 1e-5);
}

std::size_t flat_size(const std::vector<std::vector<std::size_t>>& shapes) {
  std::size_t n = 0;
  for (const auto& s : shapes) {
    std::size_t m = 1;
    for (std::size_t d : s) m *= d;
    n += m;
  }
  return n;
}

}  // namespace

TEST_CASE("matmul with identity returns the other operand") {
  Tape tape;
  Var eye = tape.constant(Tensor::from_matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  Var a = tape.constant(Tensor::from_matrix(3, 2, {1, 2, 3, 4, 5, 6}));
  Var out = tape.matmul(eye, a);
  const Tensor& v = tape.value(out);
  REQUIRE(v.shape == std::vector<std::size_t>{3, 2});
  for (std::size_t i = 0; i < 6; ++i) CHECK(v.values[i] == doctest::Approx(i + 1.0));
}

TEST_CASE("relu definition") {
  Tape tape;
  Var x = tape.constant(Tensor::from_vector({-1.0, 2.5, 0.0}));
  const Tensor& v = tape.value(tape.relu(x));
  CHECK(v(0) == 0.0);
  CHECK(v(1) == 2.5);
  CHECK(v(2) == 0.0);
}

TEST_CASE("conv1d averaging filter over a constant signal") {
  // Length-5 constant signal 2.0, filter (1/3, 1/3, 1/3): interior outputs
  // stay 2.0, edges see one zero pad: (0 + 2 + 2)/3 = 4/3.
  Tape tape;
  Var x = tape.constant(Tensor::from_matrix(5, 1, {2, 2, 2, 2, 2}));
  double third = 1.0 / 3.0;
  Var w = tape.constant(Tensor({3, 1, 1}, {third, third, third}));
  Var b = tape.constant(Tensor::from_vector({0.0}));
  const Tensor& y = tape.value(tape.conv1d(x, w, b));
  REQUIRE(y.shape == std::vector<std::size_t>{5, 1});
  check_close(y(0, 0), 4.0 / 3.0);
  for (std::size_t t = 1; t <= 3; ++t) check_close(y(t, 0), 2.0);
  check_close(y(4, 0), 4.0 / 3.0);
}

TEST_CASE("backward of x^2 at x = 3") {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(3.0));
  Var y = tape.mul(x, x);
  tape.backward(y);
  CHECK(tape.grad(x)(0) == doctest::Approx(6.0));
}

TEST_CASE("gradient of sum(W x) w.r.t. W broadcasts x") {
  Tape tape;
  Var w = tape.leaf(Tensor::from_matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  Var x = tape.constant(Tensor::from_matrix(3, 1, {0.5, -1.0, 2.0}));
  Var y = tape.sum(tape.matmul(w, x));
  tape.backward(y);
  Tensor g = tape.grad(w);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(g(i, 0) == doctest::Approx(0.5));
    CHECK(g(i, 1) == doctest::Approx(-1.0));
    CHECK(g(i, 2) == doctest::Approx(2.0));
  }
}

TEST_CASE("forward is pure: identical inputs give bit-identical outputs") {
  Rng rng(7);
  std::vector<double> xv = random_values(12, rng);
  std::vector<double> wv = random_values(18, rng);
  auto run = [&]() {
    Tape tape;
    Var x = tape.constant(Tensor::from_matrix(4, 3, xv));
    Var w = tape.constant(Tensor::from_matrix(3, 6, wv));
    return tape.value(tape.softplus(tape.matmul(x, w))).values;
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("backward before forward is a usage error") {
  Tape tape;
  CHECK_THROWS_AS(tape.backward(Var{}), std::logic_error);
}

TEST_CASE("shape mismatch errors name the primitive and shapes") {
  Tape tape;
  Var a = tape.constant(Tensor::from_matrix(2, 3, std::vector<double>(6, 1.0)));
  Var b = tape.constant(Tensor::from_matrix(2, 3, std::vector<double>(6, 1.0)));
  try {
    tape.matmul(a, b);
    FAIL("expected matmul to throw");
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("2x3") != std::string::npos);
  }
}

TEST_CASE("finite differences validate every differentiable primitive") {
  Rng rng(42);

  SUBCASE("add/sub/mul chain") {
    ScalarizedOp op{{{2, 3}, {2, 3}},
                    [](Tape& t, const std::vector<Var>& in) {
                      return t.mul(t.add(in[0], in[1]), t.sub(in[0], in[1]));
                    }};
    check_op_gradient(op, random_values(flat_size(op.shapes), rng));
  }

  SUBCASE("scale and add_scalar") {
    ScalarizedOp op{{{5}},
                    [](Tape& t, const std::vector<Var>& in) {
                      return t.add_scalar(t.scale(in[0], -1.7), 0.3);
                    }};
    check_op_gradient(op, random_values(flat_size(op.shapes), rng));
  }

  SUBCASE("matmul") {
    ScalarizedOp op{{{3, 4}, {4, 2}},
                    [](Tape& t, const std::vector<Var>& in) { return t.matmul(in[0], in[1]); }};
    check_op_gradient(op, random_values(flat_size(op.shapes), rng));
  }

  SUBCASE("add_bias") {
    ScalarizedOp op{{{4, 3}, {3}},
                    [](Tape& t, const std::vector<Var>& in) { return t.add_bias(in[0], in[1]); }};
    check_op_gradient(op, random_values(flat_size(op.shapes), rng));
  }

  SUBCASE("relu away from the kink") {
    ScalarizedOp op{{{6}}, [](Tape& t, const std::vector<Var>& in) { return t.relu(in[0]); }};
    std::vector<double> x = random_values(6, rng);
    for (double& v : x) v += (v >= 0 ? 0.2 : -0.2);
    check_op_gradient(op, x);
  }

  SUBCASE("softplus") {
    ScalarizedOp op{{{6}}, [](Tape& t, const std::vector<Var>& in) { return t.softplus(in[0]); }};
    check_op_gradient(op, random_values(6, rng));
  }

  SUBCASE("log on positive inputs") {
    ScalarizedOp op{{{6}}, [](Tape& t, const std::vector<Var>& in) { return t.log(in[0]); }};
    check_op_gradient(op, random_values(6, rng, 0.3, 1.5));
  }

  SUBCASE("sum and mean") {
    ScalarizedOp op{{{3, 3}},
                    [](Tape& t, const std::vector<Var>& in) {
                      return t.add(t.sum(in[0]), t.mean(in[0]));
                    }};
    check_op_gradient(op, random_values(flat_size(op.shapes), rng));
  }

  SUBCASE("reshape and transpose") {
    ScalarizedOp op{{{2, 6}},
                    [](Tape& t, const std::vector<Var>& in) {
                      return t.transpose(t.reshape(in[0], {3, 4}));
                    }};
    check_op_gradient(op, random_values(flat_size(op.shapes), rng));
  }

  SUBCASE("slice rows and cols") {
    ScalarizedOp op{{{4, 5}},
                    [](Tape& t, const std::vector<Var>& in) {
                      return t.slice_cols(t.slice_rows(in[0], 1, 4), 0, 3);
                    }};
    check_op_gradient(op, random_values(flat_size(op.shapes), rng));
  }

  SUBCASE("gather_rows with a repeated index") {
    ScalarizedOp op{{{4, 3}},
                    [](Tape& t, const std::vector<Var>& in) {
                      return t.gather_rows(in[0], {2, 0, 2, 3});
                    }};
    check_op_gradient(op, random_values(flat_size(op.shapes), rng));
  }

  SUBCASE("concat_cols") {
    ScalarizedOp op{{{4}, {4}, {4}},
                    [](Tape& t, const std::vector<Var>& in) {
                      return t.concat_cols({in[0], in[1], in[2]});
                    }};
    check_op_gradient(op, random_values(flat_size(op.shapes), rng));
  }

  SUBCASE("conv1d odd filter") {
    ScalarizedOp op{{{5, 2}, {3, 2, 2}, {2}},
                    [](Tape& t, const std::vector<Var>& in) {
                      return t.conv1d(in[0], in[1], in[2]);
                    }};
    check_op_gradient(op, random_values(flat_size(op.shapes), rng));
  }

  SUBCASE("conv1d even filter") {
    ScalarizedOp op{{{6, 1}, {4, 1, 2}, {2}},
                    [](Tape& t, const std::vector<Var>& in) {
                      return t.conv1d(in[0], in[1], in[2]);
                    }};
    check_op_gradient(op, random_values(flat_size(op.shapes), rng));
  }

  SUBCASE("conv2d") {
    ScalarizedOp op{{{2, 3, 3, 1}, {3, 3, 1, 2}, {2}},
                    [](Tape& t, const std::vector<Var>& in) {
                      return t.conv2d(in[0], in[1], in[2]);
                    }};
    check_op_gradient(op, random_values(flat_size(op.shapes), rng));
  }

  SUBCASE("bidiag_solve") {
    for (bool transposed : {false, true}) {
      ScalarizedOp op{{{4}, {3}, {4, 2}},
                      [transposed](Tape& t, const std::vector<Var>& in) {
                        return t.bidiag_solve(in[0], in[1], in[2], transposed);
                      }};
      std::vector<double> x = random_values(4, rng, 0.6, 1.6);  // diag
      auto rest = random_values(3 + 8, rng);                    // super + rhs
      x.insert(x.end(), rest.begin(), rest.end());
      REQUIRE(x.size() == flat_size(op.shapes));
      check_op_gradient(op, x);
    }
  }

  SUBCASE("bidiag_solve at T = 1") {
    for (bool transposed : {false, true}) {
      ScalarizedOp op{{{1}, {0}, {1}},
                      [transposed](Tape& t, const std::vector<Var>& in) {
                        return t.bidiag_solve(in[0], in[1], in[2], transposed);
                      }};
      std::vector<double> x = {1.3, 0.7};
      check_op_gradient(op, x);
    }
  }
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged and advances the step") {
    ParameterStore store;
    store.create("p", Tensor::from_vector({1.0, -2.0}));
    AdamOptimizer opt(AdamConfig{});
    opt.step(store);
    CHECK(opt.steps() == 1);
    CHECK(store.get("p").value(0) == 1.0);
    CHECK(store.get("p").value(1) == -2.0);
  }

  SUBCASE("single step from zero state with g = 1 moves by -lr") {
    // m_hat = g, v_hat = g^2 exactly for constant gradients, so the update is
    // -lr * g / (|g| + eps).
    ParameterStore store;
    Parameter& p = store.create("p", Tensor::scalar(0.0));
    p.grad.values[0] = 1.0;
    AdamOptimizer opt(AdamConfig{.learning_rate = 0.001});
    opt.step(store);
    check_close(p.value(0), -0.001, 1e-6);
  }

  SUBCASE("constant gradient: every update magnitude approaches lr") {
    ParameterStore store;
    Parameter& p = store.create("p", Tensor::scalar(0.0));
    AdamOptimizer opt(AdamConfig{.learning_rate = 0.001});
    double previous = 0.0;
    for (int i = 0; i < 50; ++i) {
      p.grad.values[0] = 0.37;
      double before = p.value(0);
      opt.step(store);
      double delta = p.value(0) - before;
      check_close(delta, -0.001, 1e-4);
      previous = delta;
    }
    CHECK(previous < 0.0);
  }

  SUBCASE("non-finite gradient names the parameter") {
    ParameterStore store;
    Parameter& p = store.create("enc.w", Tensor::scalar(0.0));
    p.grad.values[0] = std::numeric_limits<double>::quiet_NaN();
    AdamOptimizer opt(AdamConfig{});
    try {
      opt.step(store);
      FAIL("expected adam to throw");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("enc.w") != std::string::npos);
    }
  }
}

TEST_CASE("checkpoint round-trip is exact") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "dgpvae_ckpt_test";
  fs::remove_all(dir);

  Rng rng(11);
  ParameterStore store;
  store.create("enc.w", Tensor::from_matrix(3, 2, random_values(6, rng)));
  store.create("enc.b", Tensor::from_vector(random_values(2, rng)));
  save_checkpoint(store, dir.string());
  CHECK(fs::exists(dir / "manifest.json"));

  ParameterStore loaded;
  load_checkpoint(loaded, dir.string());
  REQUIRE(loaded.size() == 2);
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Parameter& a = store.at(i);
    const Parameter& b = loaded.get(a.name);
    REQUIRE(a.value.shape == b.value.shape);
    for (std::size_t j = 0; j < a.value.values.size(); ++j) {
      CHECK(a.value.values[j] == b.value.values[j]);
    }
  }

  SUBCASE("loading into a mismatched shape fails") {
    ParameterStore bad;
    bad.create("enc.w", Tensor::zeros({4, 4}));
    CHECK_THROWS_AS(load_checkpoint(bad, dir.string()), std::runtime_error);
  }
  fs::remove_all(dir);
}

TEST_CASE("rng streams are reproducible and forks are independent of consumption") {
  Rng a(123);
  Rng b(123);
  for (int i = 0; i < 16; ++i) CHECK(a.normal() == b.normal());
  Rng base(9);
  Rng f1 = base.fork(4);
  base.normal();
  base.normal();
  Rng f2 = base.fork(4);
  CHECK(f1.normal() == f2.normal());
}
