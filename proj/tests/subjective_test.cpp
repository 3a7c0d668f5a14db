#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "teleqa/error.hpp"
#include "teleqa/special_functions.hpp"
#include "teleqa/subjective.hpp"

using namespace teleqa;
using namespace teleqa::subjective;

namespace {

RatingExport uniform_export(const std::string& asset, int participants, int value) {
  RatingExport e;
  for (int p = 0; p < participants; ++p)
    for (Dimension d : kLabelDimensions)
      for (int item = 0; item < 2; ++item)
        e.ratings.push_back({"p" + std::to_string(p), asset, d, "i" + std::to_string(item), value});
  return e;
}

std::map<int, std::vector<double>> monotone_mos(std::uint64_t seed, int per_group = 39, double noise = 3.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, noise);
  std::map<int, std::vector<double>> out;
  const int crfs[] = {30, 36, 42, 48};
  for (int level = 0; level < 4; ++level)
    for (int i = 0; i < per_group; ++i) out[crfs[level]].push_back(82.0 - 14.0 * level + n(rng));
  return out;
}

}  // namespace

TEST(Ratings, DimensionNames) {
  EXPECT_EQ(parse_dimension("drivability"), Dimension::drivability);
  EXPECT_EQ(to_string(Dimension::situational_awareness), "situational_awareness");
  EXPECT_THROW(parse_dimension("comfort"), Error);
}

TEST(Ratings, CsvRoundTripIsStable) {
  RatingExport e = uniform_export("a1", 2, 4);
  e.ratings.push_back({"p0", "a1", Dimension::reflection, "r0", 2});
  e.object_checks.push_back({"p1", "a1", false});
  e.object_checks.push_back({"p0", "a1", true});
  const std::string csv = write_rating_csv(e);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kRatingCsvHeader);
  const RatingExport back = parse_rating_csv(csv);
  EXPECT_EQ(back.ratings.size(), e.ratings.size());
  EXPECT_EQ(back.object_checks.size(), 2u);
  EXPECT_EQ(write_rating_csv(back), csv);
  std::reverse(e.ratings.begin(), e.ratings.end());
  EXPECT_EQ(write_rating_csv(e), csv);
}

TEST(Ratings, CsvErrors) {
  EXPECT_THROW(parse_rating_csv(""), Error);
  EXPECT_THROW(parse_rating_csv("a,b,c\n"), Error);
  const std::string h = std::string(kRatingCsvHeader) + "\n";
  EXPECT_THROW(parse_rating_csv(h + "a1,p1,drivability,i1,6\n"), Error);
  EXPECT_THROW(parse_rating_csv(h + "a1,p1,drivability,i1,x\n"), Error);
  EXPECT_THROW(parse_rating_csv(h + "a1,p1,comfort,i1,3\n"), Error);
  EXPECT_THROW(parse_rating_csv(h + "a1,p1,drivability,3\n"), Error);
  EXPECT_THROW(parse_rating_csv(h + "a1,p1,object_check,correct,2\n"), Error);
  EXPECT_NO_THROW(parse_rating_csv(h + "a1,p1,drivability,i1,3\r\n"));
  RatingExport bad;
  bad.ratings.push_back({"p,1", "a", Dimension::drivability, "i", 3});
  EXPECT_THROW(write_rating_csv(bad), Error);
}

TEST(AggregateMos, ScaleEndpoints) {
  const auto top = uniform_export("a", 3, 5);
  const MosLabel hi = aggregate_mos(top.ratings, kLabelDimensions);
  EXPECT_EQ(hi.mos_raw, 5.0);
  EXPECT_EQ(hi.mos_vmaf, 100.0);
  EXPECT_EQ(hi.n_raters, 3);
  EXPECT_EQ(hi.std, 0.0);
  const auto bottom = uniform_export("a", 3, 1);
  EXPECT_EQ(aggregate_mos(bottom.ratings, kLabelDimensions).mos_vmaf, 0.0);
  for (double m : {1.0, 2.2, 3.0, 4.75, 5.0}) EXPECT_DOUBLE_EQ(to_vmaf_scale(m), 25.0 * m - 25.0);
}

TEST(AggregateMos, MeansOfParticipantMeans) {
  std::vector<RatingRecord> r;
  // p0 averages 2 over 3 items, p1 averages 4 over 1 item per dimension.
  for (int v : {1, 2, 3}) r.push_back({"p0", "a", Dimension::detail_loss, "i" + std::to_string(v), v});
  r.push_back({"p1", "a", Dimension::detail_loss, "i1", 4});
  const Dimension only[] = {Dimension::detail_loss};
  const MosLabel m = aggregate_mos(r, only);
  EXPECT_DOUBLE_EQ(m.mos_raw, 3.0);
  EXPECT_DOUBLE_EQ(m.mos_vmaf, 50.0);
  EXPECT_EQ(m.n_raters, 2);
  EXPECT_NEAR(m.std, 25.0 * std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(m.ci95_half_width, 1.959963984540054 * 25.0, 1e-9);
}

TEST(AggregateMos, ReflectionIsIgnoredUnlessPooled) {
  auto e = uniform_export("a", 2, 3);
  e.ratings.push_back({"p0", "a", Dimension::reflection, "r", 5});
  EXPECT_DOUBLE_EQ(aggregate_mos(e.ratings, kLabelDimensions).mos_raw, 3.0);
}

TEST(AggregateMos, Errors) {
  EXPECT_THROW(aggregate_mos({}, kLabelDimensions), Error);
  std::vector<RatingRecord> r{{"p", "a", Dimension::drivability, "i", 3}};
  EXPECT_THROW(aggregate_mos(r, kLabelDimensions), Error);  // detail_loss missing
  r.push_back({"p", "b", Dimension::drivability, "i", 3});
  const Dimension drv[] = {Dimension::drivability};
  EXPECT_THROW(aggregate_mos(r, drv), Error);
  std::vector<RatingRecord> bad{{"p", "a", Dimension::drivability, "i", 0}};
  EXPECT_THROW(aggregate_mos(bad, drv), Error);
}

TEST(Screening, ExcludesAboveHalfFailures) {
  RatingExport e;
  const auto add = [&](const std::string& p, int fails, int total) {
    for (int i = 0; i < total; ++i) e.object_checks.push_back({p, "a" + std::to_string(i), i >= fails});
  };
  add("half", 5, 10);
  add("most", 6, 10);
  add("good", 0, 10);
  const auto r = screen_participants(e);
  EXPECT_EQ(r.excluded, std::set<std::string>{"most"});
  EXPECT_DOUBLE_EQ(r.failure_rate.at("half"), 0.5);
  EXPECT_EQ(screen_participants(e, 0.4).excluded.size(), 2u);
  EXPECT_THROW(screen_participants(e, 1.5), Error);
}

TEST(Screening, ExcludedParticipantsDropOutOfLabels) {
  auto e = uniform_export("a", 2, 5);
  auto low = uniform_export("a", 1, 1);
  for (auto& r : low.ratings) r.participant_id = "cheat";
  e.ratings.insert(e.ratings.end(), low.ratings.begin(), low.ratings.end());
  EXPECT_LT(aggregate_all(e, kLabelDimensions).at("a").mos_vmaf, 100.0);
  EXPECT_EQ(aggregate_all(e, kLabelDimensions, {"cheat"}).at("a").mos_vmaf, 100.0);
}

TEST(ItemMatrix, ShapesAndMissingCells) {
  auto e = uniform_export("a", 2, 3);
  e.ratings.pop_back();
  const auto m = item_matrix(e);
  ASSERT_EQ(m.size(), 2u);
  ASSERT_EQ(m[0].size(), 6u);
  int missing = 0;
  for (const auto& row : m)
    for (double v : row) missing += std::isnan(v);
  EXPECT_EQ(missing, 1);
}

TEST(CompressionReport, MonotonePatternIsSignificantWithGrowingEffect) {
  const auto r = compression_effect_report(monotone_mos(42));
  ASSERT_EQ(r.adjacent.size(), 3u);
  for (const auto& a : r.adjacent) {
    EXPECT_LT(*a.p_holm, 0.001) << a.first << " vs " << a.second;
    EXPECT_GT(a.cliffs_delta, 0.0);
  }
  // delta grows with the CRF gap from the best level
  double prev = 0.0;
  for (const auto& m : r.mann_whitney) {
    if (m.first != "30") continue;
    EXPECT_GE(m.cliffs_delta, prev);
    prev = m.cliffs_delta;
  }
  EXPECT_LT(*r.omnibus.p_value, 1e-6);
  EXPECT_EQ(r.groups.size(), 4u);
}

TEST(CompressionReport, RouteFollowsNormality) {
  // Normal-score samples pass any normality check by construction.
  std::map<int, std::vector<double>> scores;
  for (int level = 0; level < 4; ++level)
    for (int i = 0; i < 39; ++i)
      scores[30 + 6 * level].push_back(80.0 - 12.0 * level + 3.0 * stats::normal_quantile((i + 0.5) / 39.0));
  const auto normal = compression_effect_report(scores);
  EXPECT_EQ(normal.route, "anova_tukey");
  EXPECT_EQ(normal.omnibus.statistic, "F");
  EXPECT_EQ(*normal.omnibus.df, 3.0);
  EXPECT_EQ(*normal.omnibus.df2, 152.0);
  EXPECT_EQ(normal.tukey.size(), 6u);

  auto skewed = monotone_mos(7);
  for (auto& [crf, v] : skewed)
    for (double& x : v) x = std::exp(x / 10.0);
  const auto r = compression_effect_report(skewed);
  EXPECT_EQ(r.route, "kruskal_mann_whitney");
  EXPECT_EQ(r.omnibus.statistic, "H");
  EXPECT_TRUE(r.tukey.empty());
}

TEST(CompressionReport, IdenticalLabelsShowNothing) {
  std::map<int, std::vector<double>> same{{30, {50, 50, 50, 50}}, {36, {50, 50, 50, 50}}, {42, {50, 50, 50}}};
  const auto r = compression_effect_report(same);
  EXPECT_EQ(*r.omnibus.p_value, 1.0);
  for (const auto& m : r.mann_whitney) {
    EXPECT_GE(*m.p_holm, 0.05);
    EXPECT_EQ(m.cliffs_delta, 0.0);
  }
  EXPECT_FALSE(r.notes.empty());
}

TEST(CompressionReport, PreconditionsAndJson) {
  EXPECT_THROW(compression_effect_report({{30, {1, 2, 3}}}), Error);
  const auto r = compression_effect_report(monotone_mos(3, 10));
  const nlohmann::json j = r;
  EXPECT_EQ(j["report"], "compression_effect");
  EXPECT_EQ(j["unit_of_analysis"], "asset");
  EXPECT_EQ(j["mann_whitney_holm"].size(), 6u);
  EXPECT_NE(to_table(r).find("omnibus"), std::string::npos);
}

TEST(EnvironmentalReport, ThreeCategoriesGiveTwoDf) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(50.0, 10.0);
  std::map<std::string, std::vector<double>> cats;
  for (const char* c : {"day_good", "day_bad", "night_good"})
    for (int i = 0; i < 40; ++i) cats[c].push_back(n(rng));
  const auto r = environmental_report(cats);
  EXPECT_EQ(*r.omnibus.df, 2.0);
  EXPECT_EQ(r.welch.size(), 3u);
  for (const auto& w : r.welch) {
    EXPECT_GE(*w.test.p_value, 0.0);
    EXPECT_LE(*w.test.p_value, 1.0);
  }
  const nlohmann::json j = r;
  EXPECT_EQ(j["welch"].size(), 3u);
  EXPECT_NE(to_table(r).find("welch"), std::string::npos);
}
