#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "fd.hpp"
#include "vm3ac/autodiff/adam.hpp"
#include "vm3ac/autodiff/checkpoint.hpp"
#include "vm3ac/autodiff/mlp.hpp"
#include "vm3ac/autodiff/tape.hpp"

using namespace vm3ac::ad;
using vm3ac::testing::max_relative_error;
using vm3ac::testing::numeric_gradient;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t = Tensor::zeros(std::move(shape));
  for (std::size_t k = 0; k < t.size(); ++k) t[k] = u(rng);
  return t;
}

// Checks d(sum(weights * f(x)))/dx against finite differences, where the
// random weights make every output component matter.
void check_unary(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, std::mt19937_64& rng) {
  const Tensor probe_out = f(x);
  const Tensor w = random_tensor(probe_out.shape(), rng);
  auto scalar = [&](const Tensor& v) { return sum(mul(f(v), w)).item(); };
  Tape tape;
  Tensor xv = tape.watch(x);
  Gradients g = tape.backward(sum(mul(f(xv), w)));
  CHECK(max_relative_error(g.of(x), numeric_gradient(scalar, x)) < 1e-4);
}

}  // namespace

TEST_CASE("forward ops match hand arithmetic") {
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor id = Tensor::matrix({{1, 0}, {0, 1}});
  CHECK(matmul(a, id).values() == a.values());
  CHECK(tanh(Tensor::vector({0.0})).values() == std::vector<double>{0.0});
  CHECK(relu(Tensor::vector({-3.0, 2.0})).values() == std::vector<double>{0.0, 2.0});
  CHECK(mean(square(Tensor::vector({1, 2, 3}))).item() == doctest::Approx(14.0 / 3.0).epsilon(1e-15));
  CHECK(sum_cols(a).values() == std::vector<double>{3, 7});
  CHECK(concat_cols(a, id).values() == std::vector<double>{1, 2, 1, 0, 3, 4, 0, 1});
  CHECK(add_row(a, Tensor::vector({10, 20})).values() == std::vector<double>{11, 22, 13, 24});
  CHECK(slice_cols(a, 1, 2).values() == std::vector<double>{2, 4});
  CHECK(clamp(Tensor::vector({-5, 0.5, 5}), -1, 1).values() == std::vector<double>{-1, 0.5, 1});
}

TEST_CASE("shape and domain errors are descriptive") {
  const Tensor a = Tensor::matrix(2, 3, std::vector<double>(6, 1.0));
  try {
    matmul(a, a);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2, 3]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, Tensor::zeros({3, 2})), ShapeError);
  CHECK_THROWS_AS(log(Tensor::vector({1.0, 0.0})), DomainError);
  CHECK_THROWS_AS(log(Tensor::vector({-1.0})), DomainError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0}), std::invalid_argument);
}

TEST_CASE("evaluation mode records nothing") {
  Tape tape;
  const Tensor w = Tensor::vector({1, 2});
  const Tensor y = tanh(w) + w;
  CHECK_FALSE(y.tracked());
  CHECK(tape.size() == 0);
}

TEST_CASE("backward trivial cases") {
  Tape tape;
  const Tensor w = Tensor::vector({2, 3});
  const Tensor x = Tensor::vector({5, 7});
  Gradients g = tape.backward(sum(tape.watch(w) * x));
  CHECK(g.of(w).values() == std::vector<double>{5, 7});

  Tape tape2;
  const Tensor w0 = Tensor::vector({0.0});
  Gradients g2 = tape2.backward(sum(tanh(tape2.watch(w0))));
  CHECK(g2.of(w0)[0] == doctest::Approx(1.0));

  Tape tape3;
  const Tensor unused = Tensor::vector({1, 1, 1});
  tape3.watch(unused);
  const Tensor p = Tensor::vector({4.0});
  Gradients g3 = tape3.backward(sum(square(tape3.watch(p))));
  CHECK(g3.of(unused).values() == std::vector<double>{0, 0, 0});
  CHECK(g3.of(p)[0] == doctest::Approx(8.0));
  CHECK(tape3.grad_of(tape3.watch(p)).values() == std::vector<double>{8.0});
}

TEST_CASE("backward errors") {
  Tape tape;
  const Tensor w = Tensor::vector({1, 2});
  CHECK_THROWS_AS(tape.backward(tape.watch(w)), ShapeError);
  CHECK_THROWS(tape.backward(sum(w)));
  Tape other;
  CHECK_THROWS(tape.backward(sum(other.watch(w))));
}

TEST_CASE("watching a parameter twice accumulates its gradient") {
  Tape tape;
  const Tensor w = Tensor::vector({3.0});
  Tensor a = tape.watch(w);
  Tensor b = tape.watch(w);
  Gradients g = tape.backward(sum(a * b));
  CHECK(g.of(w)[0] == doctest::Approx(6.0));
}

TEST_CASE("every op agrees with central finite differences") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> dim(1, 8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t r = dim(rng), c = dim(rng), k = dim(rng);
    const Tensor x = random_tensor({r, c}, rng);
    const Tensor other = random_tensor({r, c}, rng);
    const Tensor right = random_tensor({c, k}, rng);
    const Tensor row = random_tensor({c}, rng);
    const Tensor positive = random_tensor({r, c}, rng, 0.5, 2.0);

    check_unary([&](const Tensor& v) { return matmul(v, right); }, x, rng);
    check_unary([&](const Tensor& v) { return add(v, other); }, x, rng);
    check_unary([&](const Tensor& v) { return sub(other, v); }, x, rng);
    check_unary([&](const Tensor& v) { return mul(v, v); }, x, rng);
    check_unary([&](const Tensor& v) { return scale(v, -2.5); }, x, rng);
    check_unary([&](const Tensor& v) { return add_scalar(v, 0.3); }, x, rng);
    check_unary([&](const Tensor& v) { return tanh(v); }, x, rng);
    check_unary([&](const Tensor& v) { return relu(add_scalar(v, 0.05)); }, x, rng);
    check_unary([&](const Tensor& v) { return exp(v); }, x, rng);
    check_unary([&](const Tensor& v) { return log(v); }, positive, rng);
    check_unary([&](const Tensor& v) { return square(v); }, x, rng);
    check_unary([&](const Tensor& v) { return sum(v); }, x, rng);
    check_unary([&](const Tensor& v) { return mean(v); }, x, rng);
    check_unary([&](const Tensor& v) { return sum_cols(v); }, x, rng);
    check_unary([&](const Tensor& v) { return concat_cols(v, other); }, x, rng);
    check_unary([&](const Tensor& v) { return concat_cols(other, v); }, x, rng);
    check_unary([&](const Tensor& v) { return add_row(other, v); }, row, rng);
    check_unary([&](const Tensor& v) { return add_row(v, row); }, x, rng);
    check_unary([&](const Tensor& v) { return slice_cols(v, 0, c); }, x, rng);
    check_unary([&](const Tensor& v) { return clamp(v, -0.5, 0.5); }, x * Tensor::filled({r, c}, 0.9), rng);
  }
}

TEST_CASE("matmul gradient with respect to the right operand") {
  std::mt19937_64 rng(3);
  const Tensor a = random_tensor({3, 4}, rng);
  const Tensor b = random_tensor({4, 2}, rng);
  check_unary([&](const Tensor& v) { return matmul(a, v); }, b, rng);
}

TEST_CASE("two-layer MLP gradient matches finite differences") {
  std::mt19937_64 rng(5);
  Mlp net(3, {6, 5}, 2, rng);
  const Tensor x = random_tensor({4, 3}, rng);
  ParamList params;
  net.collect("net", params);

  Tape tape;
  Gradients g = tape.backward(sum(square(net.forward(x, &tape))));
  for (const auto& p : params) {
    auto f = [&](const Tensor& v) {
      const Tensor saved = *p.tensor;
      *p.tensor = v;
      const double out = sum(square(net.forward(x))).item();
      *p.tensor = saved;
      return out;
    };
    INFO(p.name);
    CHECK(max_relative_error(g.of(*p.tensor), numeric_gradient(f, *p.tensor)) < 1e-4);
  }
}

TEST_CASE("gradient of a sum of losses is the sum of gradients") {
  std::mt19937_64 rng(8);
  Mlp net(2, {4}, 1, rng);
  const Tensor x = random_tensor({3, 2}, rng);
  ParamList params;
  net.collect("n", params);

  Tape t1;
  Gradients g1 = t1.backward(mean(square(net.forward(x, &t1))));
  Tape t2;
  Gradients g2 = t2.backward(sum(tanh(net.forward(x, &t2))));
  Tape t3;
  const Tensor y = net.forward(x, &t3);
  Gradients g3 = t3.backward(mean(square(y)) + sum(tanh(y)));
  for (const auto& p : params) {
    const Tensor expected = g1.of(*p.tensor) + g2.of(*p.tensor);
    CHECK(max_relative_error(g3.of(*p.tensor), expected, 1e-12) < 1e-12);
  }
}

TEST_CASE("identical seeds give bit-identical gradients") {
  auto run = [] {
    std::mt19937_64 rng(42);
    Mlp net(3, {8, 8}, 2, rng);
    const Tensor x = random_tensor({5, 3}, rng);
    Tape tape;
    Gradients g = tape.backward(mean(square(net.forward(x, &tape))));
    return g.of(net.weights()[0]).values();
  };
  CHECK(run() == run());
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Tensor w = Tensor::vector({1.0, -2.0});
  ParamList params{{"w", &w}};
  AdamState state = AdamState::for_params(params);
  adam_step(params, std::vector<Tensor>{Tensor::zeros({2})}, state);
  CHECK(w.values() == std::vector<double>{1.0, -2.0});
  CHECK(state.step_count == 1);
}

TEST_CASE("adam: single step matches the hand formula") {
  Tensor w = Tensor::vector({0.5, -0.25, 2.0});
  const std::vector<double> g = {0.3, -4.0, 1e-9};
  ParamList params{{"w", &w}};
  AdamConfig cfg;
  cfg.learning_rate = 0.01;
  AdamState state = AdamState::for_params(params, cfg);
  const std::vector<double> before = w.values();
  adam_step(params, std::vector<Tensor>{Tensor::vector(g)}, state);
  for (std::size_t k = 0; k < 3; ++k) {
    const double m = (1 - 0.9) * g[k];
    const double v = (1 - 0.999) * g[k] * g[k];
    const double m_hat = m / (1 - 0.9);
    const double v_hat = v / (1 - 0.999);
    const double expected = before[k] - 0.01 * m_hat / (std::sqrt(v_hat) + 1e-8);
    CHECK(w[k] == doctest::Approx(expected).epsilon(1e-14));
  }
}

TEST_CASE("adam: constant gradient moves by -sign(g) * lr") {
  Tensor w = Tensor::vector({0.0, 0.0});
  ParamList params{{"w", &w}};
  AdamState state = AdamState::for_params(params);
  const Tensor g = Tensor::vector({2.0, -0.1});
  for (int s = 0; s < 500; ++s) adam_step(params, std::vector<Tensor>{g}, state);
  const double before0 = w[0];
  const double before1 = w[1];
  adam_step(params, std::vector<Tensor>{g}, state);
  CHECK(w[0] - before0 == doctest::Approx(-3e-4).epsilon(1e-4));
  CHECK(w[1] - before1 == doctest::Approx(3e-4).epsilon(1e-4));
  CHECK(state.step_count == 501);
}

TEST_CASE("adam: non-finite gradient names the parameter and changes nothing") {
  Tensor a = Tensor::vector({1.0});
  Tensor b = Tensor::vector({2.0});
  ParamList params{{"layer/a", &a}, {"layer/b", &b}};
  AdamState state = AdamState::for_params(params);
  try {
    adam_step(params, std::vector<Tensor>{Tensor::vector({0.5}), Tensor::vector({NAN})}, state);
    FAIL("expected domain_error");
  } catch (const std::domain_error& e) {
    CHECK(std::string(e.what()).find("layer/b") != std::string::npos);
  }
  CHECK(a[0] == 1.0);
  CHECK(state.step_count == 0);
  CHECK_THROWS(adam_step(params, std::vector<Tensor>{Tensor::vector({0.5})}, state));
}

TEST_CASE("checkpoint round-trips exactly") {
  std::mt19937_64 rng(9);
  Mlp net(3, {4}, 2, rng);
  ParamList params;
  net.collect("agent0/policy", params);
  Checkpoint ckpt = Checkpoint::from_params(params);
  ckpt.meta["env"] = "predator prey";
  const auto path = std::filesystem::temp_directory_path() / "vm3ac_ckpt_roundtrip.txt";
  write_checkpoint(path, ckpt);
  const Checkpoint back = read_checkpoint(path);
  CHECK(back.meta.at("env") == "predator prey");
  REQUIRE(back.params.size() == ckpt.params.size());
  for (std::size_t k = 0; k < ckpt.params.size(); ++k) {
    CHECK(back.params[k].first == ckpt.params[k].first);
    CHECK(back.params[k].second.shape() == ckpt.params[k].second.shape());
    CHECK(back.params[k].second.values() == ckpt.params[k].second.values());
  }

  Mlp other(3, {4}, 2, rng);
  ParamList other_params;
  other.collect("agent0/policy", other_params);
  back.load_into(other_params);
  CHECK(other.weights()[1].values() == net.weights()[1].values());

  Mlp wrong(3, {5}, 2, rng);
  ParamList wrong_params;
  wrong.collect("agent0/policy", wrong_params);
  CHECK_THROWS(back.load_into(wrong_params));
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint parse errors carry the line number") {
  const auto path = std::filesystem::temp_directory_path() / "vm3ac_ckpt_bad.txt";
  {
    std::ofstream out(path);
    out << "vm3ac-checkpoint\nformat_version 1\nparam w 1 2\n1.0 oops\nend\n";
  }
  try {
    read_checkpoint(path);
    FAIL("expected error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find(":4:") != std::string::npos);
  }
  std::filesystem::remove(path);
}
