#include "mtadv/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "mtadv/graph.hpp"
#include "mtadv/rng.hpp"

namespace mtadv {

AttackVariant variant_from_string(const std::string& s) {
  if (s == "fgsm") return AttackVariant::fgsm;
  if (s == "pgd") return AttackVariant::pgd;
  if (s == "wgd") return AttackVariant::wgd;
  if (s == "apgd") return AttackVariant::apgd;
  throw std::invalid_argument("unknown attack variant '" + s + "'");
}

std::string variant_to_string(AttackVariant v) {
  switch (v) {
    case AttackVariant::fgsm: return "fgsm";
    case AttackVariant::pgd: return "pgd";
    case AttackVariant::wgd: return "wgd";
    case AttackVariant::apgd: return "apgd";
  }
  return "?";
}

void AttackConfig::validate() const {
  if (epsilon < 0.0) throw std::invalid_argument("attack: epsilon must be >= 0");
  if (steps < 1) throw std::invalid_argument("attack: steps must be >= 1");
  if (!(step_size > 0.0)) throw std::invalid_argument("attack: step_size must be > 0");
  if (attacked.empty()) throw std::invalid_argument("attack: empty attacked set");
  if (variant == AttackVariant::fgsm && (steps != 1 || random_start))
    throw std::invalid_argument("attack: fgsm requires steps == 1 and no random start");
  if (input_bounds && !(input_bounds->first < input_bounds->second))
    throw std::invalid_argument("attack: input bounds must satisfy lo < hi");
}

Tensor project(const Tensor& delta, double epsilon, PNorm p) {
  if (epsilon < 0.0) throw std::invalid_argument("project: epsilon must be >= 0");
  switch (p) {
    case PNorm::linf:
      return clamp(delta, -epsilon, epsilon);
    case PNorm::l2: {
      const double n = norm_l2(delta);
      if (n <= epsilon) return delta;
      return scale(delta, epsilon / n);
    }
    default:
      throw std::invalid_argument("project: only l2 and linf supported");
  }
}

namespace {

// step direction: sign for linf, normalized gradient for l2
Tensor step_direction(const Tensor& g, PNorm p) {
  if (p == PNorm::linf) return sign(g);
  if (p == PNorm::l2) {
    const double n = norm_l2(g);
    if (n == 0.0) return Tensor(g.shape());
    return scale(g, 1.0 / n);
  }
  throw std::invalid_argument("attack: only l2 and linf steps supported");
}

Tensor random_start_delta(const Shape& shape, double epsilon, PNorm p, Rng& rng) {
  Tensor d(shape);
  if (epsilon == 0.0) return d;
  if (p == PNorm::linf) {
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = rng.uniform(-epsilon, epsilon);
    return d;
  }
  // l2: uniform direction, radius scaled by U^(1/dim)
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = rng.normal();
  const double n = norm_l2(d);
  if (n == 0.0) return Tensor(shape);
  const double r =
      epsilon * std::pow(rng.uniform01(), 1.0 / static_cast<double>(d.size()));
  return scale(d, r / n);
}

// keep x + delta inside the valid input box; shrinks coordinates only, so
// the p-norm of delta cannot grow
Tensor clamp_to_bounds(const Tensor& delta, const Tensor& x,
                       const std::optional<std::pair<double, double>>& bounds) {
  if (!bounds) return delta;
  Tensor out = delta;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = std::min(bounds->second, std::max(bounds->first, x[i] + out[i]));
    out[i] = v - x[i];
  }
  return out;
}

struct AttackContext {
  const MultiTaskModel& model;
  const Tensor& x;
  std::map<std::string, Tensor> inputs;  // rebound per iterate
  std::shared_ptr<const ComputationGraph> graph;
  const AttackConfig& cfg;

  AttackContext(const MultiTaskModel& m, const Tensor& x0,
                const std::map<std::string, Tensor>& ybar, const AttackConfig& c)
      : model(m), x(x0), cfg(c) {
    c.validate();
    for (const std::string& id : c.attacked)
      if (!m.has_task(id))
        throw std::invalid_argument("attack: unknown task '" + id + "'");
    graph = m.joint_graph(c.attacked);
    inputs = m.bind_inputs(x0, ybar, c.attacked);
  }

  // losses at x + delta; records trace row
  StepRecord observe(std::size_t t, const Tensor& delta) {
    inputs["x"] = add(x, delta);
    auto outs = forward_eval(*graph, inputs);
    StepRecord rec;
    rec.t = t;
    rec.joint = outs.at("joint")[0];
    for (const std::string& id : cfg.attacked)
      rec.task_loss[id] = outs.at("loss." + id)[0];
    rec.delta_norm = p_norm(delta, cfg.p);
    if (!std::isfinite(rec.joint))
      throw std::runtime_error("attack: non-finite loss at step " +
                               std::to_string(t));
    return rec;
  }

  Tensor joint_grad(const Tensor& delta) {
    inputs["x"] = add(x, delta);
    return grad_input(*graph, inputs, "joint", "x");
  }

  // gradient of sum_i coeff_i * L_i
  Tensor weighted_grad(const Tensor& delta,
                       const std::map<std::string, double>& coeffs) {
    inputs["x"] = add(x, delta);
    std::map<std::string, double> named;
    for (const auto& [id, c] : coeffs) named["loss." + id] = c;
    return grad_input_weighted(*graph, inputs, named, "x");
  }
};

}  // namespace

AttackTrace fgsm(const MultiTaskModel& model, const Tensor& x,
                 const std::map<std::string, Tensor>& ybar,
                 const AttackConfig& cfg) {
  if (cfg.variant != AttackVariant::fgsm)
    throw std::invalid_argument("fgsm: config variant mismatch");
  if (cfg.p != PNorm::linf)
    throw std::invalid_argument("fgsm: the sign step is the linf step; p must be inf");
  AttackContext ctx(model, x, ybar, cfg);

  AttackTrace trace;
  Tensor delta(x.shape());
  trace.per_step.push_back(ctx.observe(0, delta));

  const Tensor g = ctx.joint_grad(delta);
  delta = scale(sign(g), cfg.epsilon);
  delta = clamp_to_bounds(delta, x, cfg.input_bounds);
  trace.per_step.push_back(ctx.observe(1, delta));
  trace.delta = std::move(delta);
  return trace;
}

AttackTrace pgd(const MultiTaskModel& model, const Tensor& x,
                const std::map<std::string, Tensor>& ybar,
                const AttackConfig& cfg) {
  if (cfg.variant != AttackVariant::pgd)
    throw std::invalid_argument("pgd: config variant mismatch");
  AttackContext ctx(model, x, ybar, cfg);
  Rng rng(derive_seed(cfg.seed, fnv1a("attack-start")));

  Tensor delta(x.shape());
  if (cfg.random_start) {
    delta = random_start_delta(x.shape(), cfg.epsilon, cfg.p, rng);
    delta = clamp_to_bounds(delta, x, cfg.input_bounds);
  }

  AttackTrace trace;
  trace.per_step.push_back(ctx.observe(0, delta));
  for (std::size_t t = 1; t <= cfg.steps; ++t) {
    const Tensor g = ctx.joint_grad(delta);
    delta = add(delta, scale(step_direction(g, cfg.p), cfg.step_size));
    delta = project(delta, cfg.epsilon, cfg.p);
    delta = clamp_to_bounds(delta, x, cfg.input_bounds);
    trace.per_step.push_back(ctx.observe(t, delta));
  }
  trace.delta = std::move(delta);
  return trace;
}

AttackTrace wgd(const MultiTaskModel& model, const Tensor& x,
                const std::map<std::string, Tensor>& ybar,
                const AttackConfig& cfg) {
  if (cfg.variant != AttackVariant::wgd)
    throw std::invalid_argument("wgd: config variant mismatch");
  if (cfg.attacked.size() < 2)
    throw std::invalid_argument("wgd: needs at least two attacked tasks");
  AttackContext ctx(model, x, ybar, cfg);
  Rng rng(derive_seed(cfg.seed, fnv1a("attack-start")));

  Tensor delta(x.shape());
  if (cfg.random_start) {
    delta = random_start_delta(x.shape(), cfg.epsilon, cfg.p, rng);
    delta = clamp_to_bounds(delta, x, cfg.input_bounds);
  }

  AttackTrace trace;
  trace.per_step.push_back(ctx.observe(0, delta));
  const std::map<std::string, double> initial_loss = trace.per_step[0].task_loss;
  for (const auto& [id, l0] : initial_loss)
    if (!(l0 > 0.0))
      throw std::invalid_argument("wgd: initial loss of task '" + id +
                                  "' is zero, attack rate undefined");

  for (std::size_t t = 1; t <= cfg.steps; ++t) {
    // loss ratios at the current iterate, from the latest trace row
    const StepRecord& last = trace.per_step.back();
    std::map<std::string, double> ratio;
    double mean = 0.0;
    for (const std::string& id : cfg.attacked) {
      double r = last.task_loss.at(id) / initial_loss.at(id);
      if (cfg.rate_inverted) r = 1.0 / r;
      ratio[id] = r;
      mean += r;
    }
    mean /= static_cast<double>(cfg.attacked.size());
    std::map<std::string, double> rho, coeffs;
    for (const std::string& id : cfg.attacked) {
      rho[id] = ratio[id] / mean;
      coeffs[id] = rho[id] * model.weight(id);
    }

    const Tensor g = ctx.weighted_grad(delta, coeffs);
    delta = add(delta, scale(step_direction(g, cfg.p), cfg.step_size));
    delta = project(delta, cfg.epsilon, cfg.p);
    delta = clamp_to_bounds(delta, x, cfg.input_bounds);
    StepRecord rec = ctx.observe(t, delta);
    rec.rho = std::move(rho);
    trace.per_step.push_back(std::move(rec));
  }
  trace.delta = std::move(delta);
  return trace;
}

AttackTrace apgd(const MultiTaskModel& model, const Tensor& x,
                 const std::map<std::string, Tensor>& ybar,
                 const AttackConfig& cfg) {
  if (cfg.variant != AttackVariant::apgd)
    throw std::invalid_argument("apgd: config variant mismatch");
  AttackContext ctx(model, x, ybar, cfg);
  Rng rng(derive_seed(cfg.seed, fnv1a("attack-start")));

  constexpr double kMomentum = 0.75;

  // checkpoint schedule: first gap 22% of the budget, each later gap 3
  // points smaller, floored at 6%
  std::vector<std::size_t> checkpoints;
  {
    const double k = static_cast<double>(cfg.steps);
    double pos = 0.22, gap = 0.22;
    while (pos < 1.0) {
      const std::size_t step = static_cast<std::size_t>(std::ceil(pos * k));
      if (step >= 1 && step <= cfg.steps &&
          (checkpoints.empty() || step > checkpoints.back()))
        checkpoints.push_back(step);
      gap = std::max(gap - 0.03, 0.06);
      pos += gap;
    }
  }

  Tensor delta(x.shape());
  if (cfg.random_start) {
    delta = random_start_delta(x.shape(), cfg.epsilon, cfg.p, rng);
    delta = clamp_to_bounds(delta, x, cfg.input_bounds);
  }
  Tensor delta_prev = delta;

  AttackTrace trace;
  {
    StepRecord rec = ctx.observe(0, delta);
    rec.step_size = 2.0 * cfg.epsilon;
    trace.per_step.push_back(std::move(rec));
  }

  double alpha = 2.0 * cfg.epsilon;
  double best_loss = trace.per_step[0].joint;
  Tensor best_delta = delta;
  double prev_loss = best_loss;
  std::size_t improved = 0, since_checkpoint = 0, next_cp = 0;

  for (std::size_t t = 1; t <= cfg.steps; ++t) {
    const Tensor g = ctx.joint_grad(delta);
    Tensor z = project(add(delta, scale(step_direction(g, cfg.p), alpha)),
                       cfg.epsilon, cfg.p);
    z = clamp_to_bounds(z, x, cfg.input_bounds);

    // momentum blend of the gradient move and the previous displacement
    Tensor next(delta.shape());
    for (std::size_t i = 0; i < next.size(); ++i)
      next[i] = delta[i] + kMomentum * (z[i] - delta[i]) +
                (1.0 - kMomentum) * (delta[i] - delta_prev[i]);
    next = project(next, cfg.epsilon, cfg.p);
    next = clamp_to_bounds(next, x, cfg.input_bounds);

    delta_prev = delta;
    delta = std::move(next);

    StepRecord rec = ctx.observe(t, delta);
    rec.step_size = alpha;
    if (rec.joint > prev_loss) ++improved;
    prev_loss = rec.joint;
    if (rec.joint > best_loss) {
      best_loss = rec.joint;
      best_delta = delta;
    }
    ++since_checkpoint;
    trace.per_step.push_back(std::move(rec));

    if (next_cp < checkpoints.size() && t == checkpoints[next_cp]) {
      const double frac = static_cast<double>(improved) /
                          static_cast<double>(since_checkpoint);
      if (frac < 0.75) {
        alpha *= 0.5;
        delta = best_delta;  // restart from the best iterate
        delta_prev = best_delta;
        prev_loss = best_loss;
      }
      improved = 0;
      since_checkpoint = 0;
      ++next_cp;
    }
  }
  trace.delta = best_delta;
  return trace;
}

AttackTrace run_attack(const MultiTaskModel& model, const Tensor& x,
                       const std::map<std::string, Tensor>& ybar,
                       const AttackConfig& cfg) {
  switch (cfg.variant) {
    case AttackVariant::fgsm: return fgsm(model, x, ybar, cfg);
    case AttackVariant::pgd: return pgd(model, x, ybar, cfg);
    case AttackVariant::wgd: return wgd(model, x, ybar, cfg);
    case AttackVariant::apgd: return apgd(model, x, ybar, cfg);
  }
  throw std::invalid_argument("run_attack: bad variant");
}

std::string trace_to_csv(const AttackTrace& trace) {
  auto fmt = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return std::string(buf);
  };
  std::string csv = "step,t,task_id,loss,delta_norm,rho,step_size\n";
  std::size_t row = 0;
  for (const StepRecord& rec : trace.per_step) {
    const bool has_alpha = rec.step_size > 0.0;
    csv += std::to_string(row++) + ',' + std::to_string(rec.t) + ",," +
           fmt(rec.joint) + ',' + fmt(rec.delta_norm) + ",," +
           (has_alpha ? fmt(rec.step_size) : "") + '\n';
    for (const auto& [id, loss] : rec.task_loss) {
      auto rho_it = rec.rho.find(id);
      csv += std::to_string(row++) + ',' + std::to_string(rec.t) + ',' + id +
             ',' + fmt(loss) + ",," +
             (rho_it != rec.rho.end() ? fmt(rho_it->second) : "") + ",\n";
    }
  }
  return csv;
}

}  // namespace mtadv
