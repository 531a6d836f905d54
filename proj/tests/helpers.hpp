#pragma once

// Shared test fixtures: hand-built toy models with exactly known losses and
// gradients, plus independent numeric oracles (dense finite-difference
// Hessian + Jacobi eigensolver, least-squares residual).

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mtadv/graph.hpp"
#include "mtadv/model.hpp"
#include "mtadv/rng.hpp"
#include "mtadv/tensor.hpp"

namespace testutil {

using namespace mtadv;

inline double rel_err(double got, double want) {
  const double scale = std::max(std::abs(want), 1e-12);
  return std::abs(got - want) / scale;
}

// identity encoder: features == x
inline ComputationGraph identity_encoder(std::size_t dim) {
  GraphBuilder b;
  int x = b.input("x", {dim});
  Tensor W({dim, dim});
  for (std::size_t i = 0; i < dim; ++i) W[i * dim + i] = 1.0;
  int w = b.parameter("W", std::move(W));
  int bias = b.parameter("b", Tensor({dim}));
  b.mark_output("features", b.affine(x, w, bias));
  return b.build();
}

// single affine decoder: pred = M * features + c
inline ComputationGraph affine_decoder(std::size_t in_dim,
                                       const std::vector<std::vector<double>>& M,
                                       const std::vector<double>& c) {
  GraphBuilder b;
  int f = b.input("features", {in_dim});
  const std::size_t out_dim = M.size();
  Tensor W({out_dim, in_dim});
  for (std::size_t r = 0; r < out_dim; ++r)
    for (std::size_t k = 0; k < in_dim; ++k) W[r * in_dim + k] = M[r][k];
  int w = b.parameter("W", std::move(W));
  int bias = b.parameter("b", Tensor({out_dim}, c));
  b.mark_output("pred", b.affine(f, w, bias));
  return b.build();
}

struct ToyTask {
  std::string id;
  std::vector<std::vector<double>> rows;  // decoder matrix
  std::vector<double> offset;             // decoder bias
  LossKind loss = LossKind::mse;
  double weight = 1.0;
};

// Multi-task model over hand-picked linear decoders; loss_i is exactly
// loss(M_i x + c_i, y_i).
inline MultiTaskModel make_toy_model(std::size_t dim,
                                     const std::vector<ToyTask>& tasks) {
  std::map<std::string, ComputationGraph> decoders;
  std::map<std::string, double> weights;
  std::vector<TaskSpec> specs;
  for (const ToyTask& t : tasks) {
    decoders.emplace(t.id, affine_decoder(dim, t.rows, t.offset));
    weights[t.id] = t.weight;
    TaskSpec s;
    s.id = t.id;
    s.kind = TaskKind::regression;
    s.target_shape = {t.rows.size()};
    s.loss = t.loss;
    s.error = t.loss == LossKind::l1 ? ErrorKind::l1 : ErrorKind::mse;
    specs.push_back(std::move(s));
  }
  return MultiTaskModel(identity_encoder(dim), std::move(decoders),
                        std::move(weights), std::move(specs));
}

// 1-D model with loss (a*x - y)^2; grad 2a(ax - y)
inline MultiTaskModel quadratic_model(double a) {
  return make_toy_model(1, {{"q", {{a}}, {0.0}, LossKind::mse, 1.0}});
}

// 1-D model with loss |x - y|
inline MultiTaskModel abs_model() {
  return make_toy_model(1, {{"a", {{1.0}}, {0.0}, LossKind::l1, 1.0}});
}

// --- independent oracles ---------------------------------------------------

// Dense Hessian by central differences of a gradient function.
template <typename GradFn>
std::vector<std::vector<double>> dense_hessian(const GradFn& grad, const Tensor& x,
                                               double h) {
  const std::size_t n = x.size();
  std::vector<std::vector<double>> H(n, std::vector<double>(n, 0.0));
  Tensor probe = x;
  for (std::size_t j = 0; j < n; ++j) {
    const double orig = probe[j];
    probe[j] = orig + h;
    const Tensor gp = grad(probe);
    probe[j] = orig - h;
    const Tensor gm = grad(probe);
    probe[j] = orig;
    for (std::size_t i = 0; i < n; ++i) H[i][j] = (gp[i] - gm[i]) / (2.0 * h);
  }
  // symmetrize
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) {
      const double v = 0.5 * (H[i][j] + H[j][i]);
      H[i][j] = H[j][i] = v;
    }
  return H;
}

// Classic Jacobi eigenvalue iteration for small symmetric matrices.
inline std::vector<double> jacobi_eigenvalues(std::vector<std::vector<double>> A) {
  const std::size_t n = A.size();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += A[i][j] * A[i][j];
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(A[p][q]) < 1e-300) continue;
        const double theta = (A[q][q] - A[p][p]) / (2.0 * A[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = A[k][p], akq = A[k][q];
          A[k][p] = c * akp - s * akq;
          A[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = A[p][k], aqk = A[q][k];
          A[p][k] = c * apk - s * aqk;
          A[q][k] = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = A[i][i];
  return eig;
}

inline double max_abs_eigenvalue(const std::vector<std::vector<double>>& H) {
  double best = 0.0;
  for (double e : jacobi_eigenvalues(H)) best = std::max(best, std::abs(e));
  return best;
}

// Least-squares residual of y ~ [x, 1] via normal equations (Gaussian
// elimination); mean squared residual over the dataset.
inline double least_squares_residual(const std::vector<Tensor>& xs,
                                     const std::vector<double>& ys) {
  const std::size_t n = xs.size();
  const std::size_t d = xs[0].size() + 1;  // with intercept
  std::vector<std::vector<double>> ata(d, std::vector<double>(d, 0.0));
  std::vector<double> aty(d, 0.0);
  auto feat = [&](const Tensor& x, std::size_t j) {
    return j < x.size() ? x[j] : 1.0;
  };
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < d; ++i) {
      aty[i] += feat(xs[k], i) * ys[k];
      for (std::size_t j = 0; j < d; ++j)
        ata[i][j] += feat(xs[k], i) * feat(xs[k], j);
    }
  }
  // solve ata * w = aty with partial pivoting
  std::vector<double> w = aty;
  for (std::size_t col = 0; col < d; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < d; ++r)
      if (std::abs(ata[r][col]) > std::abs(ata[piv][col])) piv = r;
    std::swap(ata[col], ata[piv]);
    std::swap(w[col], w[piv]);
    const double diag = ata[col][col];
    for (std::size_t r = 0; r < d; ++r) {
      if (r == col || ata[r][col] == 0.0) continue;
      const double f = ata[r][col] / diag;
      for (std::size_t c = col; c < d; ++c) ata[r][c] -= f * ata[col][c];
      w[r] -= f * w[col];
    }
  }
  for (std::size_t i = 0; i < d; ++i) w[i] /= ata[i][i];

  double rss = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    double pred = 0.0;
    for (std::size_t i = 0; i < d; ++i) pred += w[i] * feat(xs[k], i);
    const double r = ys[k] - pred;
    rss += r * r;
  }
  return rss / static_cast<double>(n);
}

// Random small graph for gradient checking. Marks every affine
// preactivation as an output so callers can steer clear of relu kinks and
// l1 ties, where central differences stop being a valid oracle.
struct RandomGraphCase {
  ComputationGraph graph;
  Tensor x;
  std::map<std::string, Tensor> inputs;
  std::vector<std::string> preact_names;
  bool has_kinks = false;  // relu or l1 present
};

inline RandomGraphCase random_graph_case(Rng& rng) {
  RandomGraphCase out;
  const std::size_t depth = 1 + rng.below(3);
  std::size_t dim = 2 + rng.below(7);
  GraphBuilder b;
  int h = b.input("x", {dim});
  out.x = Tensor({dim});
  for (std::size_t i = 0; i < dim; ++i) out.x[i] = rng.uniform(-1.5, 1.5);

  for (std::size_t l = 0; l < depth; ++l) {
    const std::size_t width = 2 + rng.below(31);
    Tensor W({width, dim});
    const double bound = 1.2 / std::sqrt(static_cast<double>(dim));
    for (std::size_t i = 0; i < W.size(); ++i) W[i] = rng.uniform(-bound, bound);
    Tensor bias({width});
    for (std::size_t i = 0; i < width; ++i) bias[i] = rng.uniform(-0.3, 0.3);
    int w = b.parameter("W" + std::to_string(l), std::move(W));
    int bi = b.parameter("b" + std::to_string(l), std::move(bias));
    h = b.affine(h, w, bi);
    const std::string pname = "pre" + std::to_string(l);
    b.mark_output(pname, h);
    out.preact_names.push_back(pname);
    switch (rng.below(3)) {
      case 0:
        h = b.relu(h);
        out.has_kinks = true;
        break;
      case 1:
        h = b.tanh_fn(h);
        break;
      default:
        h = b.sigmoid(h);
        break;
    }
    dim = width;
  }

  Tensor target({dim});
  const std::size_t loss_pick = rng.below(3);
  if (loss_pick == 0) {
    // one-hot target for the fused softmax cross-entropy
    target[rng.below(dim)] = 1.0;
  } else {
    for (std::size_t i = 0; i < dim; ++i) target[i] = rng.uniform(-1.0, 1.0);
  }
  int t = b.input("y", target.shape());
  int loss = loss_pick == 0   ? b.softmax_cross_entropy(h, t)
             : loss_pick == 1 ? b.mean_squared_error(h, t)
                              : b.mean_l1(h, t);
  if (loss_pick == 2) out.has_kinks = true;
  b.mark_output("pred", h);
  b.mark_output("loss", loss);
  out.graph = b.build();
  out.inputs["x"] = out.x;
  out.inputs["y"] = target;
  return out;
}

// true when every relu preactivation and l1 margin sits away from a kink
inline bool case_is_smooth(const RandomGraphCase& c, double margin) {
  auto vals = forward_eval(c.graph, c.inputs);
  for (const std::string& name : c.preact_names) {
    const Tensor& pre = vals.at(name);
    for (std::size_t i = 0; i < pre.size(); ++i)
      if (std::abs(pre[i]) < margin) return false;
  }
  const Tensor& pred = vals.at("pred");
  const Tensor& y = c.inputs.at("y");
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (std::abs(pred[i] - y[i]) < margin) return false;
  return true;
}

}  // namespace testutil
