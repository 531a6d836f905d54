#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "mtadv/graph.hpp"
#include "mtadv/rng.hpp"
#include "mtadv/tensor.hpp"

using namespace mtadv;
using testutil::rel_err;

TEST_CASE("tensor shape and data validation") {
  CHECK_THROWS(Tensor({2, 3}, {1.0, 2.0}));
  CHECK_THROWS(Tensor({0}));
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.all_finite());
  t[0] = std::nan("");
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("dual norm maps p to its conjugate") {
  const Tensor v = Tensor::vector({3.0, -4.0});
  CHECK(dual_norm(v, PNorm::linf) == doctest::Approx(7.0));  // q = 1
  CHECK(dual_norm(v, PNorm::l2) == doctest::Approx(5.0));    // q = 2
  CHECK(dual_norm(v, PNorm::l1) == doctest::Approx(4.0));    // q = inf
}

TEST_CASE("dual norm identities") {
  Rng rng(11);
  for (int i = 0; i < 50; ++i) {
    Tensor v({1 + rng.below(20)});
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = rng.uniform(-5.0, 5.0);
    const double n2 = dual_norm(v, PNorm::l2);
    CHECK(rel_err(n2 * n2, dot(v, v)) < 1e-12);
    const double c = rng.uniform(-3.0, 3.0);
    for (PNorm p : {PNorm::l1, PNorm::l2, PNorm::linf}) {
      const double lhs = dual_norm(scale(v, c), p);
      const double rhs = std::abs(c) * dual_norm(v, p);
      CHECK(std::abs(lhs - rhs) <= 1e-12 * std::max(1.0, std::abs(rhs)));
    }
  }
}

TEST_CASE("finite differences reproduce analytic derivatives") {
  // f(x) = x^2 at 3
  auto sq = [](const Tensor& t) { return t[0] * t[0]; };
  const Tensor g = finite_diff_grad(sq, Tensor::scalar(3.0), 1e-5);
  CHECK(std::abs(g[0] - 6.0) < 1e-7);

  auto constant = [](const Tensor&) { return 4.2; };
  const Tensor gc = finite_diff_grad(constant, Tensor::vector({1.0, 2.0}), 1e-5);
  CHECK(gc[0] == 0.0);
  CHECK(gc[1] == 0.0);

  auto sinsum = [](const Tensor& t) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) s += std::sin(t[i]);
    return s;
  };
  const Tensor gs = finite_diff_grad(
      sinsum, Tensor::vector({0.0, 3.14159265358979323846 / 2.0}), 1e-6);
  CHECK(std::abs(gs[0] - 1.0) < 1e-8);
  CHECK(std::abs(gs[1] - 0.0) < 1e-8);

  CHECK_THROWS(finite_diff_grad(sq, Tensor::scalar(1.0), 0.0));
}

TEST_CASE("forward_eval identity and fixed affine") {
  GraphBuilder b;
  int x = b.input("x", {2});
  b.mark_output("y", x);
  const ComputationGraph g = b.build();
  auto out = forward_eval(g, {{"x", Tensor::vector({1.0, 2.0})}});
  CHECK(out.at("y")[0] == 1.0);
  CHECK(out.at("y")[1] == 2.0);

  GraphBuilder b2;
  int x2 = b2.input("x", {2});
  Tensor W({2, 2});
  W[0] = 1.0;
  W[3] = 1.0;
  int w = b2.parameter("W", std::move(W));
  int bias = b2.parameter("b", Tensor({2}));
  b2.mark_output("y", b2.affine(x2, w, bias));
  auto out2 = forward_eval(b2.build(), {{"x", Tensor::vector({3.0, 4.0})}});
  CHECK(out2.at("y")[0] == 3.0);
  CHECK(out2.at("y")[1] == 4.0);
}

TEST_CASE("two-layer forward matches hand-unrolled arithmetic") {
  // layer 1: W1 = [[1, 2], [0, -1]], b1 = [0.5, 0]; tanh
  // layer 2: W2 = [[1, 1]], b2 = [-0.25]
  GraphBuilder b;
  int x = b.input("x", {2});
  int W1 = b.parameter("W1", Tensor({2, 2}, {1.0, 2.0, 0.0, -1.0}));
  int b1 = b.parameter("b1", Tensor({2}, {0.5, 0.0}));
  int W2 = b.parameter("W2", Tensor({1, 2}, {1.0, 1.0}));
  int b2 = b.parameter("b2", Tensor({1}, {-0.25}));
  b.mark_output("y", b.affine(b.tanh_fn(b.affine(x, W1, b1)), W2, b2));
  const ComputationGraph g = b.build();

  const Tensor x0 = Tensor::vector({0.0, 0.0});
  // by hand: pre = [0.5, 0]; tanh -> [tanh(0.5), 0]; out = tanh(0.5) - 0.25
  const double expected = std::tanh(0.5) - 0.25;
  auto out = forward_eval(g, {{"x", x0}});
  CHECK(rel_err(out.at("y")[0], expected) < 1e-15);
}

TEST_CASE("forward_eval is deterministic bitwise") {
  Rng rng(5);
  auto c = testutil::random_graph_case(rng);
  auto a = forward_eval(c.graph, c.inputs);
  auto b = forward_eval(c.graph, c.inputs);
  CHECK(a.at("loss") == b.at("loss"));
  CHECK(a.at("pred") == b.at("pred"));
}

TEST_CASE("grad_input analytic cases") {
  // L(x) = x^2 via mse(pred = x, 0)
  GraphBuilder b;
  int x = b.input("x", {1});
  int y = b.input("y", {1});
  b.mark_output("loss", b.mean_squared_error(x, y));
  const ComputationGraph g = b.build();
  const Tensor grad = grad_input(
      g, {{"x", Tensor::scalar(3.0)}, {"y", Tensor::scalar(0.0)}}, "loss", "x");
  CHECK(grad[0] == doctest::Approx(6.0));

  // constant output: gradient of an unreachable input is zero
  GraphBuilder b2;
  b2.input("x", {2});
  int c = b2.parameter("c", Tensor::scalar(7.0));
  b2.mark_output("loss", c);
  const Tensor zero =
      grad_input(b2.build(), {{"x", Tensor::vector({1.0, 2.0})}}, "loss", "x");
  CHECK(zero[0] == 0.0);
  CHECK(zero[1] == 0.0);
}

TEST_CASE("grad_input rejects non-scalar outputs and unknown names") {
  GraphBuilder b;
  int x = b.input("x", {2});
  b.mark_output("y", x);
  const ComputationGraph g = b.build();
  CHECK_THROWS(grad_input(g, {{"x", Tensor::vector({1.0, 2.0})}}, "y", "x"));
  CHECK_THROWS(grad_input(g, {{"x", Tensor::vector({1.0, 2.0})}}, "nope", "x"));
}

TEST_CASE("softmax cross-entropy value and gradient") {
  GraphBuilder b;
  int z = b.input("x", {2});
  int t = b.input("y", {2});
  b.mark_output("loss", b.softmax_cross_entropy(z, t));
  const ComputationGraph g = b.build();
  // equal logits, one-hot target -> ln 2
  auto out = forward_eval(
      g, {{"x", Tensor::vector({0.3, 0.3})}, {"y", Tensor::vector({1.0, 0.0})}});
  CHECK(rel_err(out.at("loss")[0], std::log(2.0)) < 1e-12);

  std::map<std::string, Tensor> in = {{"x", Tensor::vector({0.7, -0.4})},
                                      {"y", Tensor::vector({0.0, 1.0})}};
  const Tensor ad = grad_input(g, in, "loss", "x");
  auto f = [&](const Tensor& x) {
    auto ins = in;
    ins["x"] = x;
    return forward_eval(g, ins).at("loss")[0];
  };
  const Tensor fd = finite_diff_grad(f, in.at("x"), 1e-6);
  for (std::size_t i = 0; i < ad.size(); ++i)
    CHECK(std::abs(ad[i] - fd[i]) < 1e-8);
}

TEST_CASE("reverse mode agrees with central differences on random graphs") {
  // 200 accepted random cases; kinked cases are resampled when an input
  // sits within 1e-3 of a relu/l1 kink, where the finite-difference oracle
  // itself is invalid
  Rng rng(20240811);
  int accepted = 0;
  int guard = 0;
  while (accepted < 200 && guard < 5000) {
    ++guard;
    auto c = testutil::random_graph_case(rng);
    if (c.has_kinks && !testutil::case_is_smooth(c, 1e-3)) continue;
    ++accepted;

    const Tensor ad = grad_input(c.graph, c.inputs, "loss", "x");
    auto f = [&](const Tensor& x) {
      auto ins = c.inputs;
      ins["x"] = x;
      return forward_eval(c.graph, ins).at("loss")[0];
    };
    const Tensor fd = finite_diff_grad(f, c.x, 1e-6);
    for (std::size_t i = 0; i < ad.size(); ++i) {
      const double denom = std::max(std::abs(fd[i]), 1e-9 / 1e-6);
      CHECK(std::abs(ad[i] - fd[i]) / denom < 1e-6);
    }
  }
  CHECK(accepted == 200);
}

TEST_CASE("weighted seed backward equals linear combination of gradients") {
  Rng rng(77);
  auto c = testutil::random_graph_case(rng);
  GraphBuilder b;
  auto outs = b.splice(c.graph, {}, "g.");
  b.mark_output("l1", outs.at("loss"));
  // second head: scaled copy of the same loss via weighted_sum
  b.mark_output("l2", b.weighted_sum({outs.at("loss")}, {2.0}));
  const ComputationGraph g = b.build();
  std::map<std::string, Tensor> ins;
  for (const auto& [name, t] : c.inputs) ins["g." + name] = t;

  const Tensor mix =
      grad_input_weighted(g, ins, {{"l1", 0.3}, {"l2", 0.7}}, "g.x");
  const Tensor g1 = grad_input(g, ins, "l1", "g.x");
  const Tensor g2 = grad_input(g, ins, "l2", "g.x");
  for (std::size_t i = 0; i < mix.size(); ++i)
    CHECK(rel_err(mix[i], 0.3 * g1[i] + 0.7 * g2[i]) < 1e-12);
}

TEST_CASE("graph construction validates shapes and names") {
  GraphBuilder b;
  int x = b.input("x", {3});
  Tensor W({2, 2});
  int w = b.parameter("W", std::move(W));
  int bias = b.parameter("b", Tensor({2}));
  CHECK_THROWS(b.affine(x, w, bias));  // W cols != x dim
  CHECK_THROWS(b.input("x", {1}));     // duplicate input name

  GraphBuilder b2;
  int x2 = b2.input("x", {2});
  int y2 = b2.input("y", {3});
  CHECK_THROWS(b2.mean_l1(x2, y2));  // length mismatch
}

TEST_CASE("missing input binding raises a named error") {
  GraphBuilder b;
  int x = b.input("x", {1});
  int y = b.input("y", {1});
  b.mark_output("loss", b.mean_l1(x, y));
  const ComputationGraph g = b.build();
  CHECK_THROWS_WITH_AS(forward_eval(g, {{"x", Tensor::scalar(1.0)}}),
                       doctest::Contains("'y'"), std::invalid_argument);
}
