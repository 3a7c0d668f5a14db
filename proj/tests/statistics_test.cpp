#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "special_function_tables.hpp"
#include "stats_oracles.hpp"
#include "teleqa/error.hpp"
#include "teleqa/special_functions.hpp"
#include "teleqa/statistics.hpp"

using namespace teleqa;
using namespace teleqa::stats;

namespace {

double rel_err(double got, double want) { return std::abs(got - want) / std::abs(want); }

std::vector<double> seeded(std::mt19937_64& rng, std::size_t n, double shift = 0.0, int levels = 0) {
  std::normal_distribution<double> g(shift, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = levels > 0 ? std::round(g(rng) * levels / 3.0) : g(rng);
  return v;
}

}  // namespace

TEST(SpecialFunctions, IncompleteBetaTable) {
  for (const auto& c : teleqa::testing::kBetaTable) EXPECT_LT(rel_err(incomplete_beta(c.a, c.b, c.x), c.expected), 1e-10) << c.a << "," << c.b << "," << c.x;
}

TEST(SpecialFunctions, IncompleteGammaTable) {
  for (const auto& c : teleqa::testing::kGammaTable) {
    EXPECT_LT(rel_err(incomplete_gamma_p(c.a, c.x), c.p), 1e-10) << c.a << "," << c.x;
    EXPECT_LT(rel_err(incomplete_gamma_q(c.a, c.x), 1.0 - c.p), 1e-10) << c.a << "," << c.x;
  }
}

TEST(SpecialFunctions, Edges) {
  EXPECT_EQ(incomplete_beta(2, 3, 0), 0.0);
  EXPECT_EQ(incomplete_beta(2, 3, 1), 1.0);
  EXPECT_THROW(incomplete_beta(-1, 3, 0.5), Error);
  EXPECT_THROW(incomplete_beta(1, 3, 1.5), Error);
  EXPECT_EQ(incomplete_gamma_p(2, 0), 0.0);
  EXPECT_THROW(incomplete_gamma_p(0, 1), Error);
}

TEST(SpecialFunctions, NormalQuantileInvertsCdf) {
  for (double p : {1e-12, 1e-6, 0.001, 0.025, 0.3, 0.5, 0.77, 0.975, 0.999999})
    EXPECT_NEAR(normal_cdf(normal_quantile(p)), p, 1e-14 + 1e-12 * p);
  EXPECT_NEAR(normal_quantile(0.975), 1.959963984540054, 1e-14);
}

TEST(SpecialFunctions, DistributionTails) {
  EXPECT_NEAR(f_sf(54, 1, 4), 0.001826260668259983, 1e-12);
  EXPECT_NEAR(f_sf(36, 1, 4), 0.003882537046960511, 1e-12);
  EXPECT_NEAR(chi_square_sf(3.857142857142857, 1), 0.04953461343562649, 1e-12);
  EXPECT_NEAR(t_two_sided_p(-12.24744871391589, 4), 0.00025521674944192687, 1e-13);
  EXPECT_EQ(f_sf(0, 3, 10), 1.0);
}

TEST(SpecialFunctions, StudentizedRange) {
  struct Case {
    double q;
    int k;
    double df, sf;
  };
  const Case cases[] = {{3.877676, 3, 10, 0.049948013461912244}, {2.0, 2, 5, 0.21643722926968534},
                        {3.5, 4, 20, 0.09495845054630192},      {4.0, 3, 152, 0.014602444013280258},
                        {1.0, 5, 30, 0.9532649141118941},       {5.5, 6, 12, 0.020448489776902834},
                        {2.77, 2, 1000, 0.05042722329234872}};
  for (const auto& c : cases) EXPECT_NEAR(studentized_range_sf(c.q, c.k, c.df), c.sf, 2e-7) << c.q << " " << c.k << " " << c.df;
  EXPECT_EQ(studentized_range_sf(0.0, 3, 10), 1.0);
}

TEST(Cronbach, HandMatrix) {
  const auto r = cronbach_alpha({{1, 2, 3}, {2, 3, 4}, {3, 4, 5}, {4, 5, 5}});
  EXPECT_NEAR(r.value, 0.979591836734694, 1e-9);
  EXPECT_EQ(r.statistic, "alpha");
}

TEST(Cronbach, PerfectlyCorrelatedItems) {
  EXPECT_NEAR(cronbach_alpha({{1, 1}, {3, 3}, {2, 2}, {5, 5}}).value, 1.0, 1e-12);
}

TEST(Cronbach, IndependentNoiseNearZero) {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> g;
  std::vector<std::vector<double>> m(1000, std::vector<double>(5));
  for (auto& row : m)
    for (double& v : row) v = g(rng);
  EXPECT_LT(std::abs(cronbach_alpha(m).value), 0.1);
}

TEST(Cronbach, ListwiseDeletionAndErrors) {
  const double nan = std::nan("");
  const auto r = cronbach_alpha({{1, 2, 3}, {2, 3, 4}, {9, nan, 1}, {3, 4, 5}, {4, 5, 5}});
  EXPECT_NEAR(r.value, 0.979591836734694, 1e-9);
  EXPECT_THROW(cronbach_alpha({{1, 2}, {1, 2}}), Error);
  EXPECT_THROW(cronbach_alpha({{1}, {2}}), Error);
}

TEST(ShapiroWilk, ReferenceValues) {
  struct Case {
    std::vector<double> x;
    double w, p;
  };
  const Case cases[] = {
      {{1, 2, 3, 4, 5, 6, 7, 8}, 0.9748582563729324, 0.9331651921064946},
      {{2.1, 3.4, 1.9, 5.6, 4.4, 3.3, 2.8, 3.9, 4.1, 3.0}, 0.9713906031045022, 0.9034305013349915},
      {{1, 2, 4}, 0.9642857142857142, 0.6368868450289689},
      {{0.5, 1.7, 2.2, 9.8, 3.1, 2.9, 1.1, 4.4, 2.0, 2.6, 3.3, 1.8, 2.4, 15.0}, 0.6789226220545539, 0.00022541635582375104},
  };
  for (const auto& c : cases) {
    const auto r = shapiro_wilk(c.x);
    EXPECT_NEAR(r.value, c.w, 1e-6);
    EXPECT_NEAR(*r.p_value, c.p, 1e-5 + 1e-3 * c.p);
  }
  EXPECT_GT(shapiro_wilk(std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8}).value, 0.9);
}

TEST(ShapiroWilk, Preconditions) {
  EXPECT_THROW(shapiro_wilk(std::vector<double>{3, 3, 3, 3}), Error);
  EXPECT_THROW(shapiro_wilk(std::vector<double>{1, 2}), Error);
  EXPECT_THROW(shapiro_wilk(std::vector<double>(5001, 1.0)), Error);
}

TEST(ShapiroWilk, CalibratedOnNormalSamples) {
  int accepted = 0;
  for (int seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed) + 500);
    if (*shapiro_wilk(seeded(rng, 50)).p_value > 0.05) ++accepted;
  }
  EXPECT_GE(accepted, 90);
}

TEST(Anova, TwoGroupExample) {
  const auto r = anova_oneway({{1, 2, 3}, {7, 8, 9}});
  EXPECT_NEAR(r.value, 54.0, 1e-12);
  EXPECT_EQ(*r.df, 1.0);
  EXPECT_EQ(*r.df2, 4.0);
  EXPECT_NEAR(*r.p_value, 0.001826260668259983, 1e-12);
}

TEST(Anova, IdenticalGroupsAndDfStructure) {
  const auto same = anova_oneway({{1, 2, 3}, {1, 2, 3}, {3, 2, 1}});
  EXPECT_EQ(same.value, 0.0);
  EXPECT_EQ(*same.p_value, 1.0);
  std::mt19937_64 rng(3);
  Groups four;
  for (int g = 0; g < 4; ++g) four.push_back(seeded(rng, 39, g));
  const auto r = anova_oneway(four);
  EXPECT_EQ(*r.df, 3.0);
  EXPECT_EQ(*r.df2, 152.0);
  EXPECT_THROW(anova_oneway({{1, 1}, {2, 2}}), Error);
  EXPECT_THROW(anova_oneway({{1, 2, 3}}), Error);
}

TEST(Anova, TextbookThreeGroups) {
  const Groups g{{24.5, 23.5, 26.4, 27.1, 29.9}, {28.4, 34.2, 29.5, 32.2, 30.1}, {26.1, 28.3, 24.3, 26.2, 27.8}};
  const auto r = anova_oneway(g);
  EXPECT_NEAR(r.value, 7.137827822120864, 1e-9);
  EXPECT_NEAR(*r.p_value, 0.009073317468563075, 1e-10);
}

TEST(Anova, TwoGroupsEqualsSquaredPooledT) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = seeded(rng, 5 + trial % 4);
    const auto b = seeded(rng, 7, 0.5);
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double sp2 = ((na - 1) * variance(a) + (nb - 1) * variance(b)) / (na + nb - 2);
    const double t = (mean(a) - mean(b)) / std::sqrt(sp2 * (1 / na + 1 / nb));
    EXPECT_NEAR(anova_oneway({a, b}).value, t * t, 1e-9 * std::max(1.0, t * t));
  }
}

TEST(Tukey, TextbookThreeGroups) {
  const Groups g{{24.5, 23.5, 26.4, 27.1, 29.9}, {28.4, 34.2, 29.5, 32.2, 30.1}, {26.1, 28.3, 24.3, 26.2, 27.8}};
  const auto r = tukey_hsd(g);
  ASSERT_EQ(r.size(), 3u);
  const double q[] = {4.756020010449363, 0.2688185223297481, 4.487201488119615};
  const double p[] = {0.01444832673640073, 0.9803107240941081, 0.02033113673971476};
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(r[i].result.value, q[i], 1e-6);
    EXPECT_NEAR(*r[i].result.p_value, p[i], 1e-6);
  }
  EXPECT_EQ(r[1].first, 0u);
  EXPECT_EQ(r[1].second, 2u);
}

TEST(Tukey, IdenticalGroups) {
  for (const auto& pr : tukey_hsd({{1, 2, 3}, {1, 2, 3}, {2, 1, 3}})) {
    EXPECT_EQ(pr.result.value, 0.0);
    EXPECT_EQ(*pr.result.p_value, 1.0);
  }
}

TEST(Tukey, TwoGroupsMatchesTTest) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 5; ++trial) {
    const auto a = seeded(rng, 8);
    const auto b = seeded(rng, 8, 0.8);
    const double sp2 = (variance(a) + variance(b)) / 2.0;
    const double t = (mean(a) - mean(b)) / std::sqrt(sp2 * (2.0 / 8.0));
    const auto r = tukey_hsd({a, b});
    EXPECT_NEAR(r[0].result.value, std::abs(t) * std::sqrt(2.0), 1e-9);
    EXPECT_NEAR(*r[0].result.p_value, t_two_sided_p(t, 14), 1e-3);
  }
}

TEST(KruskalWallis, Examples) {
  const auto r = kruskal_wallis({{1, 2, 3}, {4, 5, 6}});
  EXPECT_NEAR(r.value, 3.857142857142857, 1e-12);
  EXPECT_NEAR(*r.p_value, 0.049534613435626915, 1e-12);
  EXPECT_EQ(*r.df, 1.0);
  EXPECT_NEAR(kruskal_wallis({{1, 4, 5, 8}, {2, 3, 6, 7}}).value, 0.0, 1e-12);
  EXPECT_EQ(*kruskal_wallis({{1, 2}, {3, 4}, {5, 6}}).df, 2.0);
  EXPECT_THROW(kruskal_wallis({{2, 2, 2}, {2, 2, 2}}), Error);
  EXPECT_THROW(kruskal_wallis({{1, 2}, {3, 4}}), Error);
}

TEST(KruskalWallis, TieCorrection) {
  // H with midranks {1.5,1.5,3.5} {3.5,5,6}: hand-computed uncorrected 2.4523809..., divided by 1 - 12/210.
  const auto r = kruskal_wallis({{1, 1, 2}, {2, 3, 4}});
  const double uncorrected = 12.0 / 42.0 * (6.5 * 6.5 / 3 + 14.5 * 14.5 / 3) - 21.0;
  EXPECT_NEAR(r.value, uncorrected / (1.0 - 12.0 / 210.0), 1e-12);
}

TEST(MannWhitney, ExactExamples) {
  const auto r = mann_whitney(std::vector<double>{1, 2}, std::vector<double>{3, 4});
  EXPECT_EQ(r.value, 0.0);
  EXPECT_NEAR(*r.p_value, 2.0 / 6.0, 1e-15);
  const std::vector<double> same{3, 1, 4, 1, 5};
  EXPECT_EQ(mann_whitney(same, same).value, 12.5);
  EXPECT_EQ(*mann_whitney(same, same).p_value, 1.0);
  EXPECT_THROW(mann_whitney(std::vector<double>{}, same), Error);
}

TEST(MannWhitney, LargeShiftIsSignificant) {
  std::mt19937_64 rng(5);
  const auto a = seeded(rng, 60);
  const auto b = seeded(rng, 60, 1.5);
  EXPECT_LT(*mann_whitney(a, b).p_value, 0.001);
}

TEST(MannWhitney, MatchesBruteForce) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 120; ++trial) {
    const std::size_t na = 1 + rng() % 6, nb = 1 + rng() % 6;
    const auto a = seeded(rng, na, 0.0, trial % 2 ? 3 : 0);
    const auto b = seeded(rng, nb, 0.7, trial % 2 ? 3 : 0);
    const auto r = mann_whitney(a, b);
    const double ua = teleqa::testing::pairwise_u(a, b);
    EXPECT_DOUBLE_EQ(r.value, std::min(ua, static_cast<double>(na * nb) - ua));
    EXPECT_NEAR(*r.p_value, teleqa::testing::exact_mwu_p(a, b), 1e-12);
  }
}

TEST(MannWhitney, ExactAndAsymptoticAgreeAtSixBySix) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = seeded(rng, 6);
    const auto b = seeded(rng, 6, 0.6);
    EXPECT_NEAR(*mann_whitney(a, b, MwuMethod::exact).p_value, *mann_whitney(a, b, MwuMethod::asymptotic).p_value, 0.02);
  }
}

TEST(Holm, Examples) {
  const auto a = holm_adjust(std::vector<double>{0.01, 0.02, 0.03});
  EXPECT_NEAR(a[0], 0.03, 1e-15);
  EXPECT_NEAR(a[1], 0.04, 1e-15);
  EXPECT_NEAR(a[2], 0.04, 1e-15);
  EXPECT_EQ(holm_adjust(std::vector<double>{0.2})[0], 0.2);
  const auto b = holm_adjust(std::vector<double>{0.5, 0.9});
  EXPECT_EQ(b[0], 1.0);
  EXPECT_EQ(b[1], 1.0);
  EXPECT_THROW(holm_adjust(std::vector<double>{1.2}), Error);
}

TEST(Holm, MatchesClosedTestingAndIsMonotone) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 0.3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> p(1 + rng() % 8);
    for (double& v : p) v = trial % 3 == 0 ? std::round(u(rng) * 20) / 20 : u(rng);
    const auto adj = holm_adjust(p);
    const auto ref = teleqa::testing::closed_testing_holm(p);
    for (std::size_t i = 0; i < p.size(); ++i) {
      EXPECT_NEAR(adj[i], ref[i], 1e-15);
      EXPECT_GE(adj[i], p[i]);
      for (std::size_t j = 0; j < p.size(); ++j)
        if (p[i] < p[j]) EXPECT_LE(adj[i], adj[j]);
    }
  }
}

TEST(CliffsDelta, ExamplesAndAntisymmetry) {
  EXPECT_EQ(cliffs_delta(std::vector<double>{4, 5, 6}, std::vector<double>{1, 2, 3}).value, 1.0);
  const std::vector<double> s{2, 2, 3, 9};
  EXPECT_EQ(cliffs_delta(s, s).value, 0.0);
  EXPECT_EQ(cliffs_delta(std::vector<double>{1, 3}, std::vector<double>{2, 4}).value, -0.5);
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = seeded(rng, 1 + rng() % 8, 0.0, 2);
    const auto b = seeded(rng, 1 + rng() % 8, 0.3, 2);
    const double d = cliffs_delta(a, b).value;
    EXPECT_EQ(d, -cliffs_delta(b, a).value);
    EXPECT_LE(std::abs(d), 1.0);
    EXPECT_NEAR(d, teleqa::testing::pairwise_delta(a, b), 1e-15);
  }
}

TEST(Welch, Examples) {
  const std::vector<double> a{1, 2, 3};
  const auto same = welch_t(a, a);
  EXPECT_EQ(same.value, 0.0);
  EXPECT_EQ(*same.p_value, 1.0);
  const auto shifted = welch_t(a, std::vector<double>{11, 12, 13});
  EXPECT_NEAR(shifted.value, -12.24744871391589, 1e-12);
  EXPECT_NEAR(*shifted.df, 4.0, 1e-9);
  EXPECT_NEAR(*shifted.p_value, 0.00025521674944192687, 1e-12);
  EXPECT_LT(*shifted.p_value, 0.01);
  const auto uneq = welch_t(std::vector<double>{1, 2, 3, 4}, std::vector<double>{2, 4, 6, 8, 10});
  EXPECT_NEAR(uneq.value, -2.2514363231593695, 1e-12);
  EXPECT_NEAR(*uneq.df, 5.520787746170677, 1e-9);
  EXPECT_NEAR(*uneq.p_value, 0.06913359319239236, 1e-10);
  EXPECT_THROW(welch_t(std::vector<double>{1, 1}, std::vector<double>{2, 2}), Error);
}

TEST(Welch, EqualVarianceEqualSizeDf) {
  const std::vector<double> a{1, 4, 2, 7, 5};
  std::vector<double> b;
  for (double x : a) b.push_back(x + 3.0);
  EXPECT_NEAR(*welch_t(a, b).df, 8.0, 1e-9);
}

TEST(PValues, AlwaysInUnitInterval) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    Groups g;
    for (int k = 0; k < 3; ++k) g.push_back(seeded(rng, 4 + rng() % 5, 0.3 * k, 2));
    bool varying = false;
    for (const auto& grp : g) varying |= variance(grp) > 0;
    if (!varying) continue;
    for (double p : {*anova_oneway(g).p_value, *kruskal_wallis(g).p_value, *mann_whitney(g[0], g[1]).p_value}) {
      EXPECT_GE(p, 0.0);
      EXPECT_LE(p, 1.0);
    }
  }
}
