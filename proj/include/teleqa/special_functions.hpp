#pragma once

// Distribution functions used by the statistical tests. Everything is built on
// std::lgamma/std::erfc plus continued fractions; no external statistics code.

namespace teleqa::stats {

// Regularized incomplete beta I_x(a, b), a, b > 0, x in [0, 1].
double incomplete_beta(double a, double b, double x);

// Regularized lower and upper incomplete gamma P(a, x) and Q(a, x).
double incomplete_gamma_p(double a, double x);
double incomplete_gamma_q(double a, double x);

double normal_cdf(double z);
double normal_sf(double z);
// Inverse standard normal CDF (Wichura's AS241, about 1e-16 relative).
double normal_quantile(double p);

double chi_square_sf(double x, double df);
double f_sf(double f, double df1, double df2);
// Two-sided p-value of Student's t.
double t_two_sided_p(double t, double df);

// Survival function of the studentized range for k groups and df error
// degrees of freedom; df may be +infinity.
double studentized_range_sf(double q, int k, double df);

}  // namespace teleqa::stats
