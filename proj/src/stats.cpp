#include "mtadv/stats.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace mtadv {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

namespace {

// Regularized incomplete beta I_x(a, b) by the Lentz continued fraction.
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 200;
  constexpr double kEps = 3e-14;
  constexpr double kFpMin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

double reg_incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log(1.0 - x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

}  // namespace

double student_t_cdf(double t, double nu) {
  const double x = nu / (nu + t * t);
  const double tail = 0.5 * reg_incomplete_beta(nu / 2.0, 0.5, x);
  return t >= 0.0 ? 1.0 - tail : tail;
}

double student_t_two_sided_p(double t, double nu) {
  // 2 * sf(|t|) without the cancellation of 1 - cdf
  return reg_incomplete_beta(nu / 2.0, 0.5, nu / (nu + t * t));
}

StatResult pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size())
    throw std::invalid_argument("pearson: length mismatch");
  const std::size_t n = x.size();
  if (n < 3) throw std::invalid_argument("pearson: needs n >= 3");

  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0))
    throw std::invalid_argument("pearson: zero variance input");

  double r = sxy / std::sqrt(sxx * syy);
  r = std::min(1.0, std::max(-1.0, r));

  StatResult out;
  out.statistic = r;
  out.n = n;
  out.method = PMethod::exact;  // exact t distribution, not an approximation
  const double df = static_cast<double>(n - 2);
  if (std::abs(r) >= 1.0) {
    out.p_value = 0.0;
  } else {
    const double t = r * std::sqrt(df / (1.0 - r * r));
    out.p_value = student_t_two_sided_p(t, df);
  }
  return out;
}

namespace {

// sum over tie groups of f(t) for a sorted copy of v
double tie_sum(const std::vector<double>& v,
               const std::function<double(double)>& f) {
  std::vector<double> s = v;
  std::sort(s.begin(), s.end());
  double total = 0.0;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t j = i;
    while (j < s.size() && s[j] == s[i]) ++j;
    const double t = static_cast<double>(j - i);
    if (t > 1.0) total += f(t);
    i = j;
  }
  return total;
}

}  // namespace

StatResult kendall_tau(const std::vector<double>& x,
                       const std::vector<double>& y) {
  if (x.size() != y.size())
    throw std::invalid_argument("kendall_tau: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) throw std::invalid_argument("kendall_tau: needs n >= 2");

  long long concordant = 0, discordant = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = x[i] - x[j], dy = y[i] - y[j];
      const double prod = dx * dy;
      if (prod > 0.0) ++concordant;
      else if (prod < 0.0) ++discordant;
    }

  const double n0 = 0.5 * n * (n - 1.0);
  const double n1 = tie_sum(x, [](double t) { return 0.5 * t * (t - 1.0); });
  const double n2 = tie_sum(y, [](double t) { return 0.5 * t * (t - 1.0); });
  if (n1 >= n0 || n2 >= n0)
    throw std::invalid_argument("kendall_tau: an input is entirely tied");

  const double cd = static_cast<double>(concordant - discordant);
  StatResult out;
  out.statistic = cd / std::sqrt((n0 - n1) * (n0 - n2));
  out.n = n;
  out.method = PMethod::normal_approx;

  // tie-adjusted variance of (C - D)
  const double nd = static_cast<double>(n);
  const double x1 = tie_sum(x, [](double t) { return t * (t - 1.0) * (2.0 * t + 5.0); });
  const double y1 = tie_sum(y, [](double t) { return t * (t - 1.0) * (2.0 * t + 5.0); });
  const double x0 = tie_sum(x, [](double t) { return t * (t - 1.0) * (t - 2.0); });
  const double y0 = tie_sum(y, [](double t) { return t * (t - 1.0) * (t - 2.0); });
  double var = (nd * (nd - 1.0) * (2.0 * nd + 5.0) - x1 - y1) / 18.0 +
               (2.0 * n1 * n2) / (nd * (nd - 1.0));
  if (n > 2)
    var += x0 * y0 / (9.0 * nd * (nd - 1.0) * (nd - 2.0));
  if (!(var > 0.0))
    throw std::invalid_argument("kendall_tau: degenerate variance");
  const double z = cd / std::sqrt(var);
  out.p_value = 2.0 * (1.0 - normal_cdf(std::abs(z)));
  out.p_value = std::min(1.0, out.p_value);
  return out;
}

namespace {

// Exact distribution of 2*W+ over all sign patterns by dynamic programming
// over the doubled (integer) ranks.
std::vector<double> wplus_distribution(const std::vector<long long>& ranks2) {
  long long total = 0;
  for (long long r : ranks2) total += r;
  std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
  count[0] = 1.0;
  long long reach = 0;
  for (long long r : ranks2) {
    reach += r;
    for (long long s = reach; s >= r; --s)
      count[static_cast<std::size_t>(s)] += count[static_cast<std::size_t>(s - r)];
  }
  return count;  // counts over 2W+ = 0..total, total mass 2^n
}

}  // namespace

StatResult wilcoxon_signed_rank(const std::vector<double>& x,
                                const std::vector<double>& y,
                                Alternative alternative) {
  if (x.size() != y.size())
    throw std::invalid_argument("wilcoxon_signed_rank: length mismatch");
  std::vector<double> diff;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    if (d != 0.0) diff.push_back(d);
  }
  if (diff.empty())
    throw std::invalid_argument("wilcoxon_signed_rank: all differences are zero");
  const std::size_t n = diff.size();

  // mid-ranks of |d|
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(diff[a]) < std::abs(diff[b]);
  });
  std::vector<double> rank(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && std::abs(diff[idx[j]]) == std::abs(diff[idx[i]])) ++j;
    const double mid = 0.5 * static_cast<double>(i + j - 1) + 1.0;
    for (std::size_t k = i; k < j; ++k) rank[idx[k]] = mid;
    i = j;
  }

  double w_plus = 0.0;
  for (std::size_t k = 0; k < n; ++k)
    if (diff[k] > 0.0) w_plus += rank[k];
  const double w_total = 0.5 * n * (n + 1.0);
  const double w_minus = w_total - w_plus;

  StatResult out;
  out.n = n;
  out.statistic = alternative == Alternative::two_sided ? std::min(w_plus, w_minus)
                                                        : w_plus;

  if (n <= 12) {
    out.method = PMethod::exact;
    std::vector<long long> ranks2(n);
    for (std::size_t k = 0; k < n; ++k)
      ranks2[k] = static_cast<long long>(std::llround(2.0 * rank[k]));
    const std::vector<double> dist = wplus_distribution(ranks2);
    const double patterns = std::pow(2.0, static_cast<double>(n));
    const long long w2 = static_cast<long long>(std::llround(2.0 * w_plus));
    double ge = 0.0, le = 0.0;
    for (std::size_t s = 0; s < dist.size(); ++s) {
      if (static_cast<long long>(s) >= w2) ge += dist[s];
      if (static_cast<long long>(s) <= w2) le += dist[s];
    }
    ge /= patterns;
    le /= patterns;
    if (alternative == Alternative::greater) {
      out.p_value = ge;
    } else {
      out.p_value = std::min(1.0, 2.0 * std::min(ge, le));
    }
  } else {
    out.method = PMethod::normal_approx;
    const double nd = static_cast<double>(n);
    const double mean = nd * (nd + 1.0) / 4.0;
    double tie_term = 0.0;
    {
      std::vector<double> absd(n);
      for (std::size_t k = 0; k < n; ++k) absd[k] = std::abs(diff[k]);
      tie_term = tie_sum(absd, [](double t) { return t * t * t - t; });
    }
    const double var = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0 - tie_term / 48.0;
    if (!(var > 0.0))
      throw std::invalid_argument("wilcoxon_signed_rank: degenerate variance");
    const double se = std::sqrt(var);
    const double t_stat = out.statistic;
    if (alternative == Alternative::greater) {
      const double z = (t_stat - mean - 0.5) / se;
      out.p_value = 1.0 - normal_cdf(z);
    } else {
      const double d = t_stat - mean;
      const double corr = d > 0.0 ? 0.5 : (d < 0.0 ? -0.5 : 0.0);
      const double z = (d - corr) / se;
      out.p_value = std::min(1.0, 2.0 * (1.0 - normal_cdf(std::abs(z))));
    }
  }
  return out;
}

}  // namespace mtadv
