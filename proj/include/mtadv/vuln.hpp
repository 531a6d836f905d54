#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mtadv/attack.hpp"
#include "mtadv/model.hpp"

namespace mtadv {

// Per-task input gradients r_i = d L_i / dx at one input, plus the task
// weights they combine under.
struct GradientSample {
  std::map<std::string, Tensor> per_task;
  std::map<std::string, double> weights;
};

std::vector<GradientSample> collect_gradient_samples(
    const MultiTaskModel& model, const Dataset& data,
    const std::set<std::string>& tasks);

// Mean over the dataset of |L'(x + delta*) - L'(x)| where delta* comes
// from the configured attack. Per-input attack seeds are cfg.seed xor the
// input index, so batched and serial evaluation agree.
double adversarial_vulnerability(const MultiTaskModel& model,
                                 const Dataset& data,
                                 const std::set<std::string>& attacked,
                                 const AttackConfig& atk);

// epsilon * E_x ||d L'/dx||_q, the first Taylor term.
double first_order_estimate(const MultiTaskModel& model, const Dataset& data,
                            const std::set<std::string>& attacked,
                            double epsilon, PNorm p);

// (epsilon^2/2) * E_x |lambda_max(Hessian_x L')| with the dominant
// eigenvalue estimated by power iteration on finite-difference
// Hessian-vector products (h = 1e-4, 30 iterations, tol 1e-6). p = 2 only.
double second_order_estimate(const MultiTaskModel& model, const Dataset& data,
                             const std::set<std::string>& attacked,
                             double epsilon, PNorm p);

// V(base + added) - V(base); sign is informative.
double marginal_vulnerability(const MultiTaskModel& model, const Dataset& data,
                              const std::set<std::string>& base,
                              const std::string& added, const AttackConfig& atk);

// epsilon * ((N+1) w_new E||r_new|| + N max_{i != new} w_i E||r_i||),
// with empirical l2 means over the samples.
double theorem7_bound(const std::vector<GradientSample>& samples,
                      const std::map<std::string, double>& weights,
                      double epsilon, std::size_t n_base,
                      const std::string& new_task);

struct BoundCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

// E||sum_i w_i r_i||_q^p <= M^p sum_i w_i^p E||r_i||_q^p over the samples.
BoundCheck lemma4_check(const std::vector<GradientSample>& samples, int p_exp,
                        PNorm q_norm);

struct JointGradientBound {
  double lhs = 0.0;
  double rhs = 0.0;
  bool radicand_negative = false;  // rhs is NaN when set
};

// Diagnostic: E||sum w_i r_i||_2 against
// sqrt(sum_i ((M-1)/M) sigma_i^2 - sum_{i != j} Cov(r_i, r_j) / M) with
// sigma_i^2 = E||r_i||^2 and Cov(r_i, r_j) = E<r_i, r_j>.
JointGradientBound theorem5_bound(const std::vector<GradientSample>& samples);

// sqrt((1 + (2/M) sum_i sum_{j<i} Cov(r_i,r_j)/Cov(r_i,r_i)) / M); the
// covariance factor of the vulnerability approximation, without its
// unknowable constant.
double theorem3_factor(const std::vector<GradientSample>& samples);

struct RelativeVulnerability {
  double value = 0.0;
  std::size_t n_used = 0;
  std::size_t n_excluded = 0;  // clean error below the 1e-8 floor
};

// mean over examples of (adv_error - clean_error) / clean_error.
RelativeVulnerability relative_task_vulnerability(
    const std::vector<double>& clean_errors,
    const std::vector<double>& adv_errors);

// Among inputs classified correctly on clean data, the fraction the attack
// flips to incorrect.
double attack_success_rate(const std::vector<bool>& clean_correct,
                           const std::vector<bool>& adv_correct);

struct VulnerabilityReport {
  std::set<std::string> attacked;
  double vulnerability = 0.0;
  double first_order = 0.0;
  std::optional<double> second_order;
  std::map<std::string, double> per_task_relative;
  std::map<std::string, double> bound_values;

  AttackVariant attack_variant = AttackVariant::pgd;
  double epsilon = 0.0;
  PNorm p = PNorm::linf;
  std::size_t steps = 0;
  std::uint64_t seed = 0;
};

struct ReportOptions {
  bool with_second_order = false;  // p == 2 runs only
  bool with_relative = true;
};

VulnerabilityReport build_report(const MultiTaskModel& model,
                                 const Dataset& data,
                                 const std::set<std::string>& attacked,
                                 const AttackConfig& atk,
                                 const ReportOptions& opts = {});

// One CSV row per metric: tasks,metric,value,attack_variant,epsilon,p,steps,seed
std::string report_to_csv(const VulnerabilityReport& report);

}  // namespace mtadv
