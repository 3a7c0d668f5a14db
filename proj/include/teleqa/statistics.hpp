#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace teleqa::stats {

struct TestResult {
  std::string test;       // e.g. "anova_oneway"
  std::string statistic;  // symbol: alpha, W, F, q, H, U, t, delta
  double value = 0.0;
  std::optional<double> df;
  std::optional<double> df2;
  std::optional<double> p_value;
};

void to_json(nlohmann::json& j, const TestResult& r);

using Groups = std::vector<std::vector<double>>;

double mean(std::span<const double> v);
// Sample variance (n - 1 denominator).
double variance(std::span<const double> v);

// Average ranks (1-based) with ties sharing their mean rank.
std::vector<double> midranks(std::span<const double> v);

// Rows are participants, columns items. Rows containing NaN are dropped (listwise deletion).
TestResult cronbach_alpha(const std::vector<std::vector<double>>& items);

TestResult shapiro_wilk(std::span<const double> sample);

TestResult anova_oneway(const Groups& groups);

struct PairwiseResult {
  std::size_t first = 0;
  std::size_t second = 0;
  TestResult result;
};

// Tukey-Kramer: q uses the harmonic mean of the two group sizes.
std::vector<PairwiseResult> tukey_hsd(const Groups& groups);

TestResult kruskal_wallis(const Groups& groups);

enum class MwuMethod { automatic, exact, asymptotic };
// Two-sided. Automatic uses exact enumeration when n_a + n_b <= 12.
TestResult mann_whitney(std::span<const double> a, std::span<const double> b, MwuMethod method = MwuMethod::automatic);

std::vector<double> holm_adjust(std::span<const double> p_values);

// (#{a > b} - #{a < b}) / (n_a n_b).
TestResult cliffs_delta(std::span<const double> a, std::span<const double> b);

TestResult welch_t(std::span<const double> a, std::span<const double> b);

}  // namespace teleqa::stats
