#include "teleqa/statistics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "teleqa/error.hpp"
#include "teleqa/special_functions.hpp"

namespace teleqa::stats {
namespace {

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) require(std::isfinite(x), Errc::non_finite, std::string(what) + " contains a non-finite value");
}

double clamp_p(double p) { return std::clamp(p, 0.0, 1.0); }

double poly(std::span<const double> c, double x) {
  double r = 0.0;
  for (std::size_t i = c.size(); i-- > 0;) r = r * x + c[i];
  return r;
}

// Sum over tie groups of (t^3 - t).
double tie_term(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size();) {
    std::size_t j = i;
    while (j < v.size() && v[j] == v[i]) ++j;
    const double t = static_cast<double>(j - i);
    total += t * t * t - t;
    i = j;
  }
  return total;
}

struct AnovaParts {
  double ss_between = 0.0;
  double ss_within = 0.0;
  double df_between = 0.0;
  double df_within = 0.0;
  std::vector<double> means;
};

AnovaParts anova_parts(const Groups& groups) {
  require(groups.size() >= 2, Errc::invalid_argument, "need at least 2 groups");
  AnovaParts p;
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& g : groups) {
    require(g.size() >= 2, Errc::invalid_argument, "every group needs at least 2 values");
    require_finite(g, "group");
    total += std::accumulate(g.begin(), g.end(), 0.0);
    n += g.size();
  }
  const double grand = total / static_cast<double>(n);
  for (const auto& g : groups) {
    const double m = mean(g);
    p.means.push_back(m);
    p.ss_between += static_cast<double>(g.size()) * (m - grand) * (m - grand);
    for (double x : g) p.ss_within += (x - m) * (x - m);
  }
  p.df_between = static_cast<double>(groups.size() - 1);
  p.df_within = static_cast<double>(n - groups.size());
  require(p.ss_within > 0.0, Errc::zero_variance, "zero within-group variance in every group");
  return p;
}

}  // namespace

void to_json(nlohmann::json& j, const TestResult& r) {
  j = nlohmann::json{{"test", r.test}, {"statistic", r.statistic}, {"value", r.value}};
  if (r.df) j["df"] = *r.df;
  if (r.df2) j["df2"] = *r.df2;
  if (r.p_value) j["p"] = *r.p_value;
}

double mean(std::span<const double> v) {
  require(!v.empty(), Errc::empty_input, "mean of an empty sample");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double variance(std::span<const double> v) {
  require(v.size() >= 2, Errc::empty_input, "variance needs at least 2 values");
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

std::vector<double> midranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) ranks[order[t]] = r;
    i = j;
  }
  return ranks;
}

TestResult cronbach_alpha(const std::vector<std::vector<double>>& items) {
  std::vector<std::vector<double>> rows;
  std::size_t k = 0;
  for (const auto& row : items) {
    if (k == 0) k = row.size();
    require(row.size() == k, Errc::dimension_mismatch, "item rows differ in length");
    if (std::none_of(row.begin(), row.end(), [](double x) { return std::isnan(x); })) rows.push_back(row);
  }
  require(k >= 2, Errc::invalid_argument, "Cronbach's alpha needs at least 2 items");
  require(rows.size() >= 2, Errc::invalid_argument, "Cronbach's alpha needs at least 2 complete participants");
  double item_var_sum = 0.0;
  std::vector<double> column(rows.size());
  std::vector<double> totals(rows.size(), 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      column[r] = rows[r][c];
      totals[r] += rows[r][c];
    }
    require_finite(column, "item matrix");
    item_var_sum += variance(column);
  }
  const double total_var = variance(totals);
  require(total_var > 0.0, Errc::zero_variance, "total score variance is zero");
  const double kd = static_cast<double>(k);
  return {"cronbach_alpha", "alpha", kd / (kd - 1.0) * (1.0 - item_var_sum / total_var), {}, {}, {}};
}

TestResult shapiro_wilk(std::span<const double> sample) {
  const std::size_t n = sample.size();
  require(n >= 3 && n <= 5000, Errc::invalid_argument, "Shapiro-Wilk needs 3 <= n <= 5000");
  require_finite(sample, "sample");
  std::vector<double> x(sample.begin(), sample.end());
  std::sort(x.begin(), x.end());
  const double range = x.back() - x.front();
  require(range > 0.0, Errc::zero_variance, "Shapiro-Wilk on a constant sample");

  const std::size_t half = n / 2;
  const double an = static_cast<double>(n);
  std::vector<double> a(half);
  if (n == 3) {
    a[0] = std::sqrt(0.5);
  } else {
    static constexpr double c1[] = {0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056};
    static constexpr double c2[] = {0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633};
    double summ2 = 0.0;
    for (std::size_t i = 0; i < half; ++i) {
      a[i] = normal_quantile((static_cast<double>(i + 1) - 0.375) / (an + 0.25));
      summ2 += a[i] * a[i];
    }
    summ2 *= 2.0;
    const double ssumm2 = std::sqrt(summ2);
    const double rsn = 1.0 / std::sqrt(an);
    const double a1 = poly(c1, rsn) - a[0] / ssumm2;
    std::size_t first_scaled;
    double fac;
    if (n > 5) {
      first_scaled = 2;
      const double a2 = -a[1] / ssumm2 + poly(c2, rsn);
      fac = std::sqrt((summ2 - 2.0 * a[0] * a[0] - 2.0 * a[1] * a[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2));
      a[1] = a2;
    } else {
      first_scaled = 1;
      fac = std::sqrt((summ2 - 2.0 * a[0] * a[0]) / (1.0 - 2.0 * a1 * a1));
    }
    a[0] = a1;
    for (std::size_t i = first_scaled; i < half; ++i) a[i] /= -fac;
  }

  // Antisymmetric weights over the sorted sample, correlated with the data.
  std::vector<double> w(n, 0.0);
  for (std::size_t i = 0; i < half; ++i) {
    w[i] = -a[i];
    w[n - 1 - i] = a[i];
  }
  const double wm = std::accumulate(w.begin(), w.end(), 0.0) / an;
  double xm = 0.0;
  for (double v : x) xm += v / range;
  xm /= an;
  double ssa = 0.0, ssx = 0.0, sax = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = w[i] - wm;
    const double dx = x[i] / range - xm;
    ssa += da * da;
    ssx += dx * dx;
    sax += da * dx;
  }
  const double root = std::sqrt(ssa * ssx);
  const double w1 = (root - sax) * (root + sax) / (ssa * ssx);
  const double stat = 1.0 - w1;

  double p;
  if (n == 3) {
    constexpr double six_over_pi = 1.90985931710274;
    constexpr double pi_over_three = 1.04719755119660;
    p = std::max(0.0, six_over_pi * (std::asin(std::sqrt(stat)) - pi_over_three));
  } else {
    double y = std::log(w1);
    double m, s;
    if (n <= 11) {
      static constexpr double g[] = {-2.273, 0.459};
      static constexpr double c3[] = {0.544, -0.39978, 0.025054, -6.714e-4};
      static constexpr double c4[] = {1.3822, -0.77857, 0.062767, -0.0020322};
      const double gamma = poly(g, an);
      if (y >= gamma) return {"shapiro_wilk", "W", stat, {}, {}, 1e-99};
      y = -std::log(gamma - y);
      m = poly(c3, an);
      s = std::exp(poly(c4, an));
    } else {
      static constexpr double c5[] = {-1.5861, -0.31082, -0.083751, 0.0038915};
      static constexpr double c6[] = {-0.4803, -0.082676, 0.0030302};
      const double ln = std::log(an);
      m = poly(c5, ln);
      s = std::exp(poly(c6, ln));
    }
    p = normal_sf((y - m) / s);
  }
  return {"shapiro_wilk", "W", stat, {}, {}, clamp_p(p)};
}

TestResult anova_oneway(const Groups& groups) {
  const AnovaParts p = anova_parts(groups);
  const double f = (p.ss_between / p.df_between) / (p.ss_within / p.df_within);
  return {"anova_oneway", "F", f, p.df_between, p.df_within, clamp_p(f_sf(f, p.df_between, p.df_within))};
}

std::vector<PairwiseResult> tukey_hsd(const Groups& groups) {
  const AnovaParts p = anova_parts(groups);
  const double ms_within = p.ss_within / p.df_within;
  const int k = static_cast<int>(groups.size());
  std::vector<PairwiseResult> out;
  for (std::size_t i = 0; i < groups.size(); ++i)
    for (std::size_t j = i + 1; j < groups.size(); ++j) {
      const double ni = static_cast<double>(groups[i].size());
      const double nj = static_cast<double>(groups[j].size());
      const double n_harmonic = 2.0 / (1.0 / ni + 1.0 / nj);
      const double q = std::abs(p.means[i] - p.means[j]) / std::sqrt(ms_within / n_harmonic);
      out.push_back({i, j, {"tukey_hsd", "q", q, static_cast<double>(k), p.df_within,
                            clamp_p(studentized_range_sf(q, k, p.df_within))}});
    }
  return out;
}

TestResult kruskal_wallis(const Groups& groups) {
  require(groups.size() >= 2, Errc::invalid_argument, "need at least 2 groups");
  std::vector<double> pooled;
  for (const auto& g : groups) {
    require(!g.empty(), Errc::empty_input, "empty group");
    require_finite(g, "group");
    pooled.insert(pooled.end(), g.begin(), g.end());
  }
  const double n = static_cast<double>(pooled.size());
  require(pooled.size() >= 5, Errc::invalid_argument, "Kruskal-Wallis needs at least 5 observations");
  const double correction = 1.0 - tie_term(pooled) / (n * n * n - n);
  require(correction > 0.0, Errc::zero_variance, "all observations are identical");
  const std::vector<double> ranks = midranks(pooled);
  double sum = 0.0;
  std::size_t offset = 0;
  for (const auto& g : groups) {
    double r = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) r += ranks[offset + i];
    offset += g.size();
    sum += r * r / static_cast<double>(g.size());
  }
  const double h = std::max(0.0, (12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)) / correction);
  const double df = static_cast<double>(groups.size() - 1);
  return {"kruskal_wallis", "H", h, df, {}, clamp_p(chi_square_sf(h, df))};
}

TestResult mann_whitney(std::span<const double> a, std::span<const double> b, MwuMethod method) {
  require(!a.empty() && !b.empty(), Errc::empty_input, "Mann-Whitney needs two nonempty samples");
  require_finite(a, "sample");
  require_finite(b, "sample");
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::vector<double> ranks = midranks(pooled);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double n = na + nb;
  double ra = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ra += ranks[i];
  const double ua = ra - na * (na + 1.0) / 2.0;
  const double u = std::min(ua, na * nb - ua);
  const double mu = na * nb / 2.0;
  const double observed = std::abs(ua - mu);

  const bool exact = method == MwuMethod::exact || (method == MwuMethod::automatic && pooled.size() <= 12);
  double p;
  if (exact) {
    require(pooled.size() <= 24, Errc::invalid_argument, "exact Mann-Whitney limited to 24 observations");
    // Every way of labelling a.size() of the pooled midranks as sample a.
    const std::size_t total = pooled.size();
    std::vector<bool> pick(total, false);
    std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(a.size()), true);
    double extreme = 0.0;
    double count = 0.0;
    do {
      double r = 0.0;
      for (std::size_t i = 0; i < total; ++i)
        if (pick[i]) r += ranks[i];
      const double uu = r - na * (na + 1.0) / 2.0;
      if (std::abs(uu - mu) >= observed - 1e-9) extreme += 1.0;
      count += 1.0;
    } while (std::prev_permutation(pick.begin(), pick.end()));
    p = extreme / count;
  } else {
    const double var = na * nb / 12.0 * ((n + 1.0) - tie_term(pooled) / (n * (n - 1.0)));
    if (var <= 0.0) {
      p = 1.0;
    } else {
      const double z = std::max(0.0, observed - 0.5) / std::sqrt(var);
      p = 2.0 * normal_sf(z);
    }
  }
  return {"mann_whitney", "U", u, {}, {}, clamp_p(p)};
}

std::vector<double> holm_adjust(std::span<const double> p_values) {
  for (double p : p_values)
    require(p >= 0.0 && p <= 1.0, Errc::out_of_range, "p-value outside [0,1]");
  const std::size_t m = p_values.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return p_values[x] < p_values[y]; });
  std::vector<double> out(m);
  double running = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    const double adj = std::min(1.0, static_cast<double>(m - r) * p_values[order[r]]);
    running = std::max(running, adj);
    out[order[r]] = running;
  }
  return out;
}

TestResult cliffs_delta(std::span<const double> a, std::span<const double> b) {
  require(!a.empty() && !b.empty(), Errc::empty_input, "Cliff's delta needs two nonempty samples");
  require_finite(a, "sample");
  require_finite(b, "sample");
  std::vector<double> sb(b.begin(), b.end());
  std::sort(sb.begin(), sb.end());
  long long greater = 0;
  long long less = 0;
  for (double x : a) {
    greater += std::lower_bound(sb.begin(), sb.end(), x) - sb.begin();
    less += sb.end() - std::upper_bound(sb.begin(), sb.end(), x);
  }
  const double delta = static_cast<double>(greater - less) / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
  return {"cliffs_delta", "delta", delta, {}, {}, {}};
}

TestResult welch_t(std::span<const double> a, std::span<const double> b) {
  require(a.size() >= 2 && b.size() >= 2, Errc::invalid_argument, "Welch's t needs at least 2 values per sample");
  require_finite(a, "sample");
  require_finite(b, "sample");
  const double va = variance(a) / static_cast<double>(a.size());
  const double vb = variance(b) / static_cast<double>(b.size());
  require(va + vb > 0.0, Errc::zero_variance, "both samples have zero variance");
  const double t = (mean(a) - mean(b)) / std::sqrt(va + vb);
  const double df = (va + vb) * (va + vb) /
                    (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
  return {"welch_t", "t", t, df, {}, clamp_p(t_two_sided_p(t, df))};
}

}  // namespace teleqa::stats
