#include "posepolicy/nn.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>
#include <stdexcept>

using namespace posepolicy::nn;

namespace {

using Builder = std::function<Var(Tape&)>;

double loss_of(ParameterStore& store, const Builder& build, const std::vector<double>& target) {
  Tape t(&store);
  const Var out = build(t);
  const Var tgt = t.constant(t.shape(out), target);
  return t.value(mse(t, out, tgt))[0];
}

// Max relative error between analytic and central-difference gradients.
double grad_check(ParameterStore& store, const Builder& build, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<double> target;
  {
    Tape t(&store);
    const Var out = build(t);
    target.resize(t.value(out).size());
    for (auto& v : target) v = g(rng);
  }
  store.zero_grad();
  {
    Tape t(&store);
    const Var out = build(t);
    const Var tgt = t.constant(t.shape(out), target);
    t.backward(mse(t, out, tgt));
  }
  double worst = 0.0;
  const double h = 1e-6;
  for (auto& p : store.params()) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double keep = p.value[i];
      p.value[i] = keep + h;
      const double up = loss_of(store, build, target);
      p.value[i] = keep - h;
      const double dn = loss_of(store, build, target);
      p.value[i] = keep;
      const double fd = (up - dn) / (2 * h);
      const double err = std::abs(fd - p.grad[i]) / std::max(1e-6, std::abs(fd) + std::abs(p.grad[i]));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

void fill(Parameter& p, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  for (auto& v : p.value) v = g(rng);
}

int add_random(ParameterStore& s, const std::string& name, Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  const int i = s.add(name, shape);
  fill(s[i], rng, scale);
  return i;
}

}  // namespace

TEST_CASE("linear forward matches a direct loop") {
  ParameterStore s;
  std::mt19937_64 rng(1);
  add_random(s, "x", {3, 4}, rng);
  add_random(s, "w", {2, 4}, rng);
  add_random(s, "b", {2}, rng);
  Tape t(&s);
  const Var y = linear(t, t.param("x"), t.param("w"), t.param("b"));
  REQUIRE(t.shape(y) == Shape{3, 2});
  for (int n = 0; n < 3; ++n) {
    for (int o = 0; o < 2; ++o) {
      double ref = s.at("b").value[o];
      for (int i = 0; i < 4; ++i) ref += s.at("x").value[n * 4 + i] * s.at("w").value[o * 4 + i];
      CHECK(std::abs(t.value(y)[n * 2 + o] - ref) < 1e-12);
    }
  }
}

TEST_CASE("conv2d forward matches a direct loop") {
  ParameterStore s;
  std::mt19937_64 rng(2);
  add_random(s, "x", {2, 2, 5, 5}, rng);
  add_random(s, "w", {3, 2, 3, 3}, rng);
  add_random(s, "b", {3}, rng);
  Tape t(&s);
  const Var y = conv2d(t, t.param("x"), t.param("w"), t.param("b"), 2, 1);
  REQUIRE(t.shape(y) == Shape{2, 3, 3, 3});
  const auto& x = s.at("x").value;
  const auto& w = s.at("w").value;
  for (int n = 0; n < 2; ++n) {
    for (int o = 0; o < 3; ++o) {
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
          double ref = s.at("b").value[o];
          for (int ci = 0; ci < 2; ++ci) {
            for (int kr = 0; kr < 3; ++kr) {
              for (int kc = 0; kc < 3; ++kc) {
                const int ir = r * 2 - 1 + kr, ic = c * 2 - 1 + kc;
                if (ir < 0 || ir >= 5 || ic < 0 || ic >= 5) continue;
                ref += x[((n * 2 + ci) * 5 + ir) * 5 + ic] * w[((o * 2 + ci) * 3 + kr) * 3 + kc];
              }
            }
          }
          CHECK(std::abs(t.value(y)[((n * 3 + o) * 3 + r) * 3 + c] - ref) < 1e-12);
        }
      }
    }
  }
}

TEST_CASE("op gradients match central differences") {
  std::mt19937_64 rng(3);
  SUBCASE("linear + silu") {
    ParameterStore s;
    add_random(s, "x", {3, 4}, rng);
    add_random(s, "w", {5, 4}, rng);
    add_random(s, "b", {5}, rng);
    CHECK(grad_check(s, [](Tape& t) { return silu(t, linear(t, t.param("x"), t.param("w"), t.param("b"))); }) < 1e-6);
  }
  SUBCASE("conv2d stride 2") {
    ParameterStore s;
    add_random(s, "x", {2, 2, 6, 5}, rng);
    add_random(s, "w", {3, 2, 3, 3}, rng);
    add_random(s, "b", {3}, rng);
    CHECK(grad_check(s, [](Tape& t) { return conv2d(t, t.param("x"), t.param("w"), t.param("b"), 2, 1); }) < 1e-6);
  }
  SUBCASE("conv1d with padding and stride") {
    ParameterStore s;
    add_random(s, "x", {2, 3, 7}, rng);
    add_random(s, "w", {4, 3, 3}, rng);
    add_random(s, "b", {4}, rng);
    CHECK(grad_check(s, [](Tape& t) { return conv1d(t, t.param("x"), t.param("w"), t.param("b"), 2, 1); }) < 1e-6);
    CHECK(grad_check(s, [](Tape& t) { return conv1d(t, t.param("x"), t.param("w"), t.param("b"), 1, 1); }) < 1e-6);
  }
  SUBCASE("sigmoid, mul, add, concat") {
    ParameterStore s;
    add_random(s, "a", {2, 3}, rng);
    add_random(s, "b", {2, 3}, rng);
    add_random(s, "c", {2, 2}, rng);
    CHECK(grad_check(s, [](Tape& t) {
            const Var a = t.param("a"), b = t.param("b");
            return concat(t, add(t, mul(t, sigmoid(t, a), b), a), t.param("c"));
          }) < 1e-6);
  }
  SUBCASE("reshape, pair_rows") {
    ParameterStore s;
    add_random(s, "x", {4, 1, 2, 3}, rng);
    CHECK(grad_check(s, [](Tape& t) { return pair_rows(t, reshape(t, silu(t, t.param("x")), {4, 6})); }) < 1e-6);
  }
  SUBCASE("film and upsample2") {
    ParameterStore s;
    add_random(s, "x", {2, 3, 3}, rng);
    add_random(s, "ss", {2, 6}, rng);
    CHECK(grad_check(s, [](Tape& t) { return upsample2(t, film(t, t.param("x"), t.param("ss")), 5); }) < 1e-6);
  }
  SUBCASE("weight reuse accumulates") {
    ParameterStore s;
    add_random(s, "x", {2, 3}, rng);
    add_random(s, "w", {3, 3}, rng);
    add_random(s, "b", {3}, rng);
    CHECK(grad_check(s, [](Tape& t) {
            const Var h = linear(t, t.param("x"), t.param("w"), t.param("b"));
            return linear(t, silu(t, h), t.param("w"), t.param("b"));
          }) < 1e-6);
  }
}

TEST_CASE("pair_rows and upsample2 layout") {
  Tape t;
  const Var x = t.constant({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  const Var p = pair_rows(t, x);
  CHECK(t.shape(p) == Shape{2, 4});
  CHECK(t.value(p) == std::vector<double>{1, 2, 5, 6, 3, 4, 7, 8});

  const Var y = t.constant({1, 1, 3}, {1, 2, 3});
  CHECK(t.value(upsample2(t, y, 5)) == std::vector<double>{1, 1, 2, 2, 3});
}

TEST_CASE("shape errors throw") {
  Tape t;
  const Var a = t.constant({2, 3}, std::vector<double>(6, 0.0));
  const Var b = t.constant({3, 3}, std::vector<double>(9, 0.0));
  CHECK_THROWS_AS(add(t, a, b), std::invalid_argument);
  CHECK_THROWS_AS(reshape(t, a, {4, 2}), std::invalid_argument);
}

TEST_CASE("AdamW follows its update equations") {
  ParameterStore s;
  const int i = s.add("p", {2});
  s[i].value = {1.0, -2.0};
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.01;
  AdamW opt(cfg);
  double m[2] = {0, 0}, v[2] = {0, 0}, p[2] = {1.0, -2.0};
  const double grads[3][2] = {{0.5, -1.0}, {0.2, 0.3}, {-0.4, 0.1}};
  for (int step = 1; step <= 3; ++step) {
    s[i].grad = {grads[step - 1][0], grads[step - 1][1]};
    opt.step(s);
    for (int k = 0; k < 2; ++k) {
      const double g = grads[step - 1][k];
      m[k] = 0.95 * m[k] + 0.05 * g;
      v[k] = 0.999 * v[k] + 0.001 * g * g;
      const double mh = m[k] / (1 - std::pow(0.95, step));
      const double vh = v[k] / (1 - std::pow(0.999, step));
      p[k] -= 0.1 * (mh / (std::sqrt(vh) + 1e-8) + 0.01 * p[k]);
      CHECK(std::abs(s[i].value[k] - p[k]) < 1e-14);
    }
  }
  CHECK(opt.steps() == 3);
}
