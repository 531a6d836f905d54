#include "mtadv/vuln.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "mtadv/graph.hpp"
#include "mtadv/rng.hpp"

namespace mtadv {

std::vector<GradientSample> collect_gradient_samples(
    const MultiTaskModel& model, const Dataset& data,
    const std::set<std::string>& tasks) {
  std::vector<GradientSample> samples;
  samples.reserve(data.size());
  for (const Example& ex : data) {
    GradientSample s;
    for (const std::string& id : tasks) {
      s.per_task[id] = task_loss_grad(model, ex.x, ex.targets.at(id), id);
      s.weights[id] = model.weight(id);
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

double adversarial_vulnerability(const MultiTaskModel& model,
                                 const Dataset& data,
                                 const std::set<std::string>& attacked,
                                 const AttackConfig& atk) {
  if (data.empty())
    throw std::invalid_argument("adversarial_vulnerability: empty dataset");
  AttackConfig cfg = atk;
  cfg.attacked = attacked;
  double sum = 0.0;
  for (std::size_t k = 0; k < data.size(); ++k) {
    cfg.seed = atk.seed ^ static_cast<std::uint64_t>(k);
    try {
      const AttackTrace trace = run_attack(model, data[k].x, data[k].targets, cfg);
      sum += std::abs(trace.final_joint() - trace.initial_joint());
    } catch (const std::exception& e) {
      throw std::runtime_error("adversarial_vulnerability: attack failed on input " +
                               std::to_string(k) + ": " + e.what());
    }
  }
  return sum / static_cast<double>(data.size());
}

double first_order_estimate(const MultiTaskModel& model, const Dataset& data,
                            const std::set<std::string>& attacked,
                            double epsilon, PNorm p) {
  if (data.empty())
    throw std::invalid_argument("first_order_estimate: empty dataset");
  double sum = 0.0;
  for (const Example& ex : data)
    sum += dual_norm(joint_loss_grad(model, ex.x, ex.targets, attacked), p);
  return epsilon * sum / static_cast<double>(data.size());
}

namespace {

constexpr double kHvpStep = 1e-4;
constexpr int kPowerIters = 30;
constexpr double kPowerTol = 1e-6;

// Largest-magnitude Hessian eigenvalue of the joint loss at x, via power
// iteration on central-difference Hessian-vector products.
double dominant_hessian_eigenvalue(const MultiTaskModel& model, const Tensor& x,
                                   const std::map<std::string, Tensor>& ybar,
                                   const std::set<std::string>& attacked) {
  auto graph = model.joint_graph(attacked);
  auto inputs = model.bind_inputs(x, ybar, attacked);
  auto grad_at = [&](const Tensor& pt) {
    inputs["x"] = pt;
    return grad_input(*graph, inputs, "joint", "x");
  };

  auto hvp = [&](const Tensor& v) {
    const Tensor gp = grad_at(add(x, scale(v, kHvpStep)));
    const Tensor gm = grad_at(sub(x, scale(v, kHvpStep)));
    return scale(sub(gp, gm), 1.0 / (2.0 * kHvpStep));
  };

  // deterministic start vector
  Rng rng(derive_seed(0x9ec3u, fnv1a("power-iteration")));
  Tensor v(x.shape());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = rng.normal();
  double vn = norm_l2(v);
  v = scale(v, 1.0 / vn);

  double lambda = 0.0;
  for (int it = 0; it < kPowerIters; ++it) {
    Tensor hv = hvp(v);
    const double hn = norm_l2(hv);
    if (hn == 0.0) return 0.0;  // zero curvature along every probed direction
    const double rayleigh = dot(v, hv);
    v = scale(hv, 1.0 / hn);
    if (it > 0 &&
        std::abs(rayleigh - lambda) <= kPowerTol * std::max(1.0, std::abs(rayleigh))) {
      return rayleigh;
    }
    lambda = rayleigh;
  }
  // final residual check against the last Rayleigh estimate
  Tensor hv = hvp(v);
  const double rayleigh = dot(v, hv);
  const double residual = std::abs(rayleigh - lambda) / std::max(1.0, std::abs(rayleigh));
  if (residual > kPowerTol)
    throw std::runtime_error(
        "second_order_estimate: power iteration did not converge, residual = " +
        std::to_string(residual));
  return rayleigh;
}

}  // namespace

double second_order_estimate(const MultiTaskModel& model, const Dataset& data,
                             const std::set<std::string>& attacked,
                             double epsilon, PNorm p) {
  if (p != PNorm::l2)
    throw std::invalid_argument(
        "second_order_estimate: induced-norm estimate defined for p = 2 only");
  if (data.empty())
    throw std::invalid_argument("second_order_estimate: empty dataset");
  double sum = 0.0;
  for (const Example& ex : data)
    sum += std::abs(
        dominant_hessian_eigenvalue(model, ex.x, ex.targets, attacked));
  return 0.5 * epsilon * epsilon * sum / static_cast<double>(data.size());
}

double marginal_vulnerability(const MultiTaskModel& model, const Dataset& data,
                              const std::set<std::string>& base,
                              const std::string& added, const AttackConfig& atk) {
  if (base.count(added))
    throw std::invalid_argument("marginal_vulnerability: task '" + added +
                                "' already in the base set");
  std::set<std::string> extended = base;
  extended.insert(added);
  const double v_ext = adversarial_vulnerability(model, data, extended, atk);
  const double v_base = adversarial_vulnerability(model, data, base, atk);
  return v_ext - v_base;
}

namespace {

std::map<std::string, double> mean_grad_norms(
    const std::vector<GradientSample>& samples, PNorm q) {
  if (samples.empty()) throw std::invalid_argument("no gradient samples");
  std::map<std::string, double> mean;
  for (const auto& [id, g] : samples.front().per_task) mean[id] = 0.0;
  for (const GradientSample& s : samples) {
    if (s.per_task.size() != mean.size())
      throw std::invalid_argument("gradient samples disagree on task set");
    for (const auto& [id, g] : s.per_task) mean.at(id) += p_norm(g, q);
  }
  for (auto& [id, v] : mean) v /= static_cast<double>(samples.size());
  return mean;
}

}  // namespace

double theorem7_bound(const std::vector<GradientSample>& samples,
                      const std::map<std::string, double>& weights,
                      double epsilon, std::size_t n_base,
                      const std::string& new_task) {
  if (n_base < 1) throw std::invalid_argument("theorem7_bound: N must be >= 1");
  const auto norms = mean_grad_norms(samples, PNorm::l2);
  auto new_it = norms.find(new_task);
  if (new_it == norms.end())
    throw std::invalid_argument("theorem7_bound: samples lack task '" + new_task +
                                "'");
  double max_prior = 0.0;
  for (const auto& [id, n] : norms) {
    if (id == new_task) continue;
    max_prior = std::max(max_prior, weights.at(id) * n);
  }
  const double n_new = weights.at(new_task) * new_it->second;
  const double n = static_cast<double>(n_base);
  return epsilon * ((n + 1.0) * n_new + n * max_prior);
}

BoundCheck lemma4_check(const std::vector<GradientSample>& samples, int p_exp,
                        PNorm q_norm) {
  if (p_exp < 1) throw std::invalid_argument("lemma4_check: p_exp must be >= 1");
  if (samples.empty()) throw std::invalid_argument("lemma4_check: no samples");
  const double m = static_cast<double>(samples.front().per_task.size());
  double lhs = 0.0;
  std::map<std::string, double> rhs_terms;
  for (const auto& [id, g] : samples.front().per_task) rhs_terms[id] = 0.0;

  for (const GradientSample& s : samples) {
    Tensor joint(s.per_task.begin()->second.shape());
    for (const auto& [id, g] : s.per_task) {
      const double w = s.weights.at(id);
      for (std::size_t i = 0; i < joint.size(); ++i) joint[i] += w * g[i];
      rhs_terms.at(id) += std::pow(p_norm(g, q_norm), p_exp);
    }
    lhs += std::pow(p_norm(joint, q_norm), p_exp);
  }
  const double inv = 1.0 / static_cast<double>(samples.size());
  lhs *= inv;
  double rhs = 0.0;
  for (const auto& [id, term] : rhs_terms)
    rhs += std::pow(samples.front().weights.at(id), p_exp) * term * inv;
  rhs *= std::pow(m, p_exp);

  BoundCheck out;
  out.lhs = lhs;
  out.rhs = rhs;
  out.holds = lhs <= rhs * (1.0 + 1e-9);
  return out;
}

JointGradientBound theorem5_bound(const std::vector<GradientSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("theorem5_bound: no samples");
  const std::size_t m = samples.front().per_task.size();
  if (m < 2) throw std::invalid_argument("theorem5_bound: needs M >= 2 tasks");

  std::vector<std::string> ids;
  for (const auto& [id, g] : samples.front().per_task) ids.push_back(id);

  double lhs = 0.0;
  std::map<std::string, double> sigma2;  // E||r_i||^2
  std::map<std::pair<std::string, std::string>, double> cov;  // E<r_i, r_j>, i != j
  for (const std::string& id : ids) sigma2[id] = 0.0;

  for (const GradientSample& s : samples) {
    Tensor joint(s.per_task.begin()->second.shape());
    for (const std::string& id : ids) {
      const Tensor& g = s.per_task.at(id);
      const double w = s.weights.at(id);
      for (std::size_t i = 0; i < joint.size(); ++i) joint[i] += w * g[i];
      sigma2.at(id) += dot(g, g);
    }
    lhs += norm_l2(joint);
    for (std::size_t a = 0; a < ids.size(); ++a)
      for (std::size_t b = 0; b < ids.size(); ++b) {
        if (a == b) continue;
        cov[{ids[a], ids[b]}] +=
            dot(s.per_task.at(ids[a]), s.per_task.at(ids[b]));
      }
  }
  const double inv = 1.0 / static_cast<double>(samples.size());
  lhs *= inv;

  const double md = static_cast<double>(m);
  double radicand = 0.0;
  for (const std::string& id : ids) radicand += (md - 1.0) / md * sigma2.at(id) * inv;
  double cov_sum = 0.0;
  for (const auto& [key, v] : cov) cov_sum += v * inv;
  radicand -= cov_sum / md;

  JointGradientBound out;
  out.lhs = lhs;
  if (radicand < 0.0) {
    out.radicand_negative = true;
    out.rhs = std::numeric_limits<double>::quiet_NaN();
  } else {
    out.rhs = std::sqrt(radicand);
  }
  return out;
}

double theorem3_factor(const std::vector<GradientSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("theorem3_factor: no samples");
  std::vector<std::string> ids;
  for (const auto& [id, g] : samples.front().per_task) ids.push_back(id);
  const double m = static_cast<double>(ids.size());
  const double inv = 1.0 / static_cast<double>(samples.size());

  std::map<std::string, double> self;
  for (const std::string& id : ids) self[id] = 0.0;
  std::map<std::pair<std::string, std::string>, double> cross;
  for (const GradientSample& s : samples) {
    for (const std::string& id : ids) self.at(id) += dot(s.per_task.at(id), s.per_task.at(id));
    for (std::size_t a = 0; a < ids.size(); ++a)
      for (std::size_t b = 0; b < a; ++b)
        cross[{ids[a], ids[b]}] += dot(s.per_task.at(ids[a]), s.per_task.at(ids[b]));
  }

  double ratio_sum = 0.0;
  for (std::size_t a = 0; a < ids.size(); ++a) {
    const double denom = self.at(ids[a]) * inv;
    if (!(denom > 0.0))
      throw std::invalid_argument("theorem3_factor: zero self-covariance for task '" +
                                  ids[a] + "'");
    for (std::size_t b = 0; b < a; ++b)
      ratio_sum += cross.at({ids[a], ids[b]}) * inv / denom;
  }
  return std::sqrt((1.0 + 2.0 / m * ratio_sum) / m);
}

RelativeVulnerability relative_task_vulnerability(
    const std::vector<double>& clean_errors,
    const std::vector<double>& adv_errors) {
  if (clean_errors.size() != adv_errors.size())
    throw std::invalid_argument(
        "relative_task_vulnerability: sequence length mismatch");
  if (clean_errors.empty())
    throw std::invalid_argument("relative_task_vulnerability: empty sequences");
  constexpr double kCleanFloor = 1e-8;
  RelativeVulnerability out;
  double sum = 0.0;
  for (std::size_t i = 0; i < clean_errors.size(); ++i) {
    if (clean_errors[i] < kCleanFloor) {
      ++out.n_excluded;
      continue;
    }
    sum += (adv_errors[i] - clean_errors[i]) / clean_errors[i];
    ++out.n_used;
  }
  if (out.n_used == 0)
    throw std::invalid_argument(
        "relative_task_vulnerability: every example below the clean-error floor");
  out.value = sum / static_cast<double>(out.n_used);
  return out;
}

double attack_success_rate(const std::vector<bool>& clean_correct,
                           const std::vector<bool>& adv_correct) {
  if (clean_correct.size() != adv_correct.size())
    throw std::invalid_argument("attack_success_rate: sequence length mismatch");
  std::size_t eligible = 0, flipped = 0;
  for (std::size_t i = 0; i < clean_correct.size(); ++i) {
    if (!clean_correct[i]) continue;
    ++eligible;
    if (!adv_correct[i]) ++flipped;
  }
  if (eligible == 0)
    throw std::invalid_argument(
        "attack_success_rate: no inputs classified correctly on clean data");
  return static_cast<double>(flipped) / static_cast<double>(eligible);
}

VulnerabilityReport build_report(const MultiTaskModel& model,
                                 const Dataset& data,
                                 const std::set<std::string>& attacked,
                                 const AttackConfig& atk,
                                 const ReportOptions& opts) {
  VulnerabilityReport rep;
  rep.attacked = attacked;
  rep.attack_variant = atk.variant;
  rep.epsilon = atk.epsilon;
  rep.p = atk.p;
  rep.steps = atk.steps;
  rep.seed = atk.seed;

  rep.vulnerability = adversarial_vulnerability(model, data, attacked, atk);
  rep.first_order = first_order_estimate(model, data, attacked, atk.epsilon, atk.p);
  if (opts.with_second_order)
    rep.second_order =
        second_order_estimate(model, data, attacked, atk.epsilon, PNorm::l2);

  if (opts.with_relative) {
    AttackConfig cfg = atk;
    cfg.attacked = attacked;
    std::map<std::string, std::vector<double>> clean_by_task, adv_by_task;
    for (std::size_t k = 0; k < data.size(); ++k) {
      cfg.seed = atk.seed ^ static_cast<std::uint64_t>(k);
      const AttackTrace trace = run_attack(model, data[k].x, data[k].targets, cfg);
      const Tensor adv_x = add(data[k].x, trace.delta);
      for (const std::string& id : attacked) {
        const Tensor& y = data[k].targets.at(id);
        clean_by_task[id].push_back(task_error(model, data[k].x, y, id));
        adv_by_task[id].push_back(task_error(model, adv_x, y, id));
      }
    }
    for (const std::string& id : attacked) {
      try {
        rep.per_task_relative[id] =
            relative_task_vulnerability(clean_by_task[id], adv_by_task[id]).value;
      } catch (const std::invalid_argument&) {
        // all clean errors at zero: leave the task out of the report
      }
    }
  }

  const auto samples = collect_gradient_samples(model, data, attacked);
  const BoundCheck l4 = lemma4_check(samples, 2, PNorm::l2);
  rep.bound_values["lemma4_lhs"] = l4.lhs;
  rep.bound_values["lemma4_rhs"] = l4.rhs;
  if (attacked.size() >= 2) {
    const JointGradientBound t5 = theorem5_bound(samples);
    rep.bound_values["thm5_lhs"] = t5.lhs;
    rep.bound_values["thm5_rhs"] = t5.rhs;
  }
  rep.bound_values["thm3_factor"] = theorem3_factor(samples);
  return rep;
}

std::string report_to_csv(const VulnerabilityReport& rep) {
  auto fmt = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return std::string(buf);
  };
  std::string tasks;
  for (const std::string& id : rep.attacked) {
    if (!tasks.empty()) tasks += '+';
    tasks += id;
  }
  const std::string suffix = ',' + variant_to_string(rep.attack_variant) + ',' +
                             fmt(rep.epsilon) + ',' + pnorm_to_string(rep.p) +
                             ',' + std::to_string(rep.steps) + ',' +
                             std::to_string(rep.seed) + '\n';
  std::string csv = "tasks,metric,value,attack_variant,epsilon,p,steps,seed\n";
  csv += tasks + ",vulnerability," + fmt(rep.vulnerability) + suffix;
  csv += tasks + ",first_order," + fmt(rep.first_order) + suffix;
  if (rep.second_order)
    csv += tasks + ",second_order," + fmt(*rep.second_order) + suffix;
  for (const auto& [id, v] : rep.per_task_relative)
    csv += tasks + ",rel_vuln." + id + ',' + fmt(v) + suffix;
  for (const auto& [name, v] : rep.bound_values)
    csv += tasks + ',' + name + ',' + fmt(v) + suffix;
  return csv;
}

}  // namespace mtadv
