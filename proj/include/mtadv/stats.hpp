#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace mtadv {

enum class PMethod { exact, normal_approx };
enum class Alternative { two_sided, greater };

struct StatResult {
  double statistic = 0.0;  // r, tau, or W
  double p_value = 1.0;
  std::size_t n = 0;
  PMethod method = PMethod::normal_approx;
};

// Sample correlation with a two-sided p-value from the t distribution with
// n - 2 degrees of freedom.
StatResult pearson(const std::vector<double>& x, const std::vector<double>& y);

// Tie-corrected tau-b with a normal-approximation p-value.
StatResult kendall_tau(const std::vector<double>& x,
                       const std::vector<double>& y);

// Signed-rank test; zero differences dropped, ties mid-ranked. Exact
// p-value by full sign-pattern enumeration when the effective n is at most
// 12, normal approximation with continuity correction above. As in the
// usual convention the reported statistic is min(W+, W-) for the two-sided
// alternative and W+ for 'greater'; the raw W doubles as the effect size.
StatResult wilcoxon_signed_rank(const std::vector<double>& x,
                                const std::vector<double>& y,
                                Alternative alternative);

// Phi(z), the standard normal CDF.
double normal_cdf(double z);

// P(T <= t) for Student's t with nu degrees of freedom.
double student_t_cdf(double t, double nu);

// Two-sided tail 2*P(T >= |t|), computed without cancellation.
double student_t_two_sided_p(double t, double nu);

}  // namespace mtadv
