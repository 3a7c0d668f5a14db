#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "svr_oracle.hpp"
#include "teleqa/error.hpp"
#include "teleqa/svr_fusion.hpp"

using namespace teleqa;
using namespace teleqa::svr;

namespace {

TrainingSet one_dim_set(const std::vector<double>& xs, const std::vector<double>& ys) {
  TrainingSet s{{"x"}, {}};
  for (std::size_t i = 0; i < xs.size(); ++i)
    s.rows.push_back({"r" + std::to_string(i), "g" + std::to_string(i), {xs[i]}, ys[i]});
  return s;
}

TrainingSet linear_feature_set(int n, std::uint64_t seed, int first_id = 0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_real_distribution<double> jitter(-0.5, 0.5);
  TrainingSet s = TrainingSet::for_features();
  for (int i = 0; i < n; ++i) {
    features::FeatureVector fv;
    for (double& v : fv.vif) v = u(rng);
    fv.dlm = u(rng);
    fv.motion = 20.0 * u(rng);
    const double label = 40.0 * fv.vif[0] + 30.0 * fv.dlm + 10.0 + jitter(rng);
    s.add("clip" + std::to_string(first_id + i), "scene" + std::to_string((first_id + i) % 7), fv, label);
  }
  return s;
}

std::vector<std::vector<double>> scaled_inputs(const TrainingSet& s) {
  const FeatureScaler sc = fit_scaler(s);
  std::vector<std::vector<double>> x;
  for (const auto& r : s.rows) x.push_back(sc.transform(r.features));
  return x;
}

}  // namespace

TEST(FeatureScaler, MapsToUnitInterval) {
  const TrainingSet s = one_dim_set({0.2, 0.8}, {1, 2});
  const FeatureScaler sc = fit_scaler(s);
  EXPECT_DOUBLE_EQ(sc.transform(std::vector<double>{0.2})[0], 0.0);
  EXPECT_DOUBLE_EQ(sc.transform(std::vector<double>{0.8})[0], 1.0);

  const FeatureScaler three = fit_scaler(one_dim_set({1, 2, 3}, {0, 0, 0}));
  EXPECT_DOUBLE_EQ(three.transform(std::vector<double>{2})[0], 0.5);
  EXPECT_DOUBLE_EQ(three.transform(std::vector<double>{3})[0], 1.0);
}

TEST(FeatureScaler, ConstantColumnMapsToHalf) {
  const FeatureScaler sc = fit_scaler(one_dim_set({0.5, 0.5, 0.5}, {1, 2, 3}));
  for (double v : {0.5, 0.0, 7.0}) EXPECT_DOUBLE_EQ(sc.transform(std::vector<double>{v})[0], 0.5);
}

TEST(FeatureScaler, NeedsTwoRows) {
  EXPECT_THROW(fit_scaler(one_dim_set({1}, {1})), Error);
  EXPECT_THROW(fit_scaler(one_dim_set({}, {})), Error);
}

TEST(Train, ConstantTargetsGiveFlatModel) {
  const TrainingSet s = one_dim_set({0.1, 0.4, 0.5, 0.9, 0.3}, {70, 70, 70, 70, 70});
  const SvrModel m = train(s, {});
  EXPECT_TRUE(m.support_vectors.empty());
  EXPECT_DOUBLE_EQ(m.bias, 70.0);
  for (double v : {-3.0, 0.0, 0.42, 10.0}) EXPECT_DOUBLE_EQ(predict(m, std::vector<double>{v}), 70.0);
}

TEST(Train, LineWithinTubeMatchesExactDual) {
  const std::vector<double> xs{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<double> ys;
  for (double x : xs) ys.push_back(10.0 * x);
  SvrHyperparams hp;
  hp.c = 100.0;
  hp.epsilon = 0.1;
  hp.gamma = 1.0;
  hp.tolerance = 1e-6;
  const TrainingSet s = one_dim_set(xs, ys);
  const SvrModel m = train(s, hp);
  for (std::size_t i = 0; i < xs.size(); ++i)
    EXPECT_LE(std::abs(predict_unclipped(m, std::vector<double>{xs[i]}) - ys[i]), 0.1 + hp.tolerance);

  const auto x = scaled_inputs(s);
  const DualSolution sol = solve_dual(x, ys, hp);
  const teleqa::testing::OracleSolution exact = teleqa::testing::dense_svr_dual(x, ys, hp);
  EXPECT_NEAR(sol.objective, exact.objective, 1e-6);
}

TEST(Train, SyntheticHoldOutRmse) {
  const TrainingSet train_set = linear_feature_set(50, 20240611);
  const TrainingSet fresh = linear_feature_set(10, 99, 1000);
  SvrHyperparams hp;
  hp.c = 50.0;
  hp.gamma = 1.0;
  hp.epsilon = 1.0;
  const SvrModel m = train(train_set, hp);
  double sse = 0.0;
  for (const auto& r : fresh.rows) {
    const double d = predict(m, r.features) - r.label;
    sse += d * d;
  }
  EXPECT_LT(std::sqrt(sse / 10.0), 2.0);
}

TEST(Train, RejectsBadInput) {
  EXPECT_THROW(train(one_dim_set({1, 2, 3}, {1, 2, 3}), {}), Error);
  TrainingSet nan_set = one_dim_set({1, 2, 3, 4}, {1, 2, 3, 4});
  nan_set.rows[2].features[0] = std::nan("");
  try {
    train(nan_set, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::non_finite);
  }
  TrainingSet out_of_range = one_dim_set({1, 2, 3, 4}, {1, 2, 3, 140});
  EXPECT_THROW(train(out_of_range, {}), Error);
  SvrHyperparams bad;
  bad.gamma = 0.0;
  EXPECT_THROW(train(one_dim_set({1, 2, 3, 4}, {1, 2, 3, 4}), bad), Error);
}

TEST(Train, IterationCapReportsViolation) {
  SvrHyperparams hp;
  hp.max_iterations = 1;
  hp.epsilon = 0.0;
  try {
    train(linear_feature_set(20, 3), hp);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::not_converged);
    EXPECT_EQ(e.exit_code(), 4);
    EXPECT_NE(std::string(e.what()).find("KKT violation"), std::string::npos);
  }
}

TEST(Predict, ClipsToScoreRange) {
  SvrModel m;
  m.feature_names = {"x"};
  m.scaler = {{0.0}, {1.0}};
  m.bias = 112.4;
  EXPECT_DOUBLE_EQ(predict_unclipped(m, std::vector<double>{0.3}), 112.4);
  EXPECT_DOUBLE_EQ(predict(m, std::vector<double>{0.3}), 100.0);
  m.bias = -5.0;
  EXPECT_DOUBLE_EQ(predict(m, std::vector<double>{0.3}), 0.0);
}

TEST(Predict, SupportVectorSelfSimilarity) {
  SvrModel m;
  m.feature_names = {"a", "b"};
  m.scaler = {{0.0, 0.0}, {10.0, 2.0}};
  m.support_vectors = {{0.3, 0.6}};
  m.coefficients = {12.5};
  m.bias = 40.0;
  EXPECT_DOUBLE_EQ(predict(m, std::vector<double>{3.0, 1.2}), 52.5);
}

TEST(Predict, RejectsOtherFeatureVersionAndNonFinite) {
  const SvrModel& m = baseline_model();
  features::FeatureVector fv;
  fv.vif = {0.9, 0.9, 0.9, 0.9};
  fv.dlm = 0.9;
  features::FeatureConfig other;
  other.version = "teleqa-features/0";
  try {
    predict(m, fv, other);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::version_mismatch);
  }
  EXPECT_NO_THROW(predict(m, fv, features::FeatureConfig{}));
  fv.dlm = std::numeric_limits<double>::infinity();
  EXPECT_THROW(predict(m, fv, features::FeatureConfig{}), Error);
}

TEST(BaselineModel, MonotoneInFidelity) {
  const SvrModel& m = baseline_model();
  double prev = -1.0;
  for (int step = 0; step <= 10; ++step) {
    const double t = step / 10.0;
    features::FeatureVector fv;
    for (std::size_t s = 0; s < 4; ++s) fv.vif[s] = std::pow(t, 1.0 + 0.35 * static_cast<double>(s));
    fv.dlm = std::pow(t, 0.8);
    fv.motion = 4.0;
    const double p = predict(m, fv, features::FeatureConfig{});
    EXPECT_GT(p, prev - 1.0);
    prev = p;
  }
  EXPECT_GT(prev, 90.0);
}

TEST(GridSearch, SinglePoint) {
  Grid g{{4}, {0.5}, {1}};
  const auto r = grid_search(g, {}, 2, [](const SvrHyperparams&, std::size_t) { return 3.0; });
  EXPECT_EQ(r.best.c, 4);
  EXPECT_EQ(r.best.gamma, 0.5);
  EXPECT_EQ(r.table.size(), 1u);
}

TEST(GridSearch, PicksLowerRmse) {
  Grid g{{1, 10}, {1}, {1}};
  auto eval = [](const SvrHyperparams& hp, std::size_t) { return hp.c == 10 ? 2.0 : 5.0; };
  const auto r = grid_search(g, {}, 3, eval, 2);
  EXPECT_EQ(r.best.c, 10);
  EXPECT_DOUBLE_EQ(r.best_rmse, 2.0);
}

TEST(GridSearch, TiesPreferSmallerCThenGamma) {
  Grid g{{10, 1}, {2, 1}, {1}};
  const auto r = grid_search(g, {}, 2, [](const SvrHyperparams&, std::size_t) { return 1.5; }, 4);
  EXPECT_EQ(r.best.c, 1);
  EXPECT_EQ(r.best.gamma, 1);
}

TEST(GridSearch, RealFoldsAreDeterministicAcrossJobs) {
  const TrainingSet s = linear_feature_set(28, 5);
  const auto folds = scene_folds(s, 3);
  Grid g{{4, 16}, {0.5, 1}, {1}};
  const auto a = grid_search(s, folds, g, {}, {}, 1);
  const auto b = grid_search(s, folds, g, {}, {}, 4);
  EXPECT_EQ(a.best, b.best);
  ASSERT_EQ(a.table.size(), b.table.size());
  for (std::size_t i = 0; i < a.table.size(); ++i) EXPECT_EQ(a.table[i].mean_rmse, b.table[i].mean_rmse);
  double mean = 0.0;
  for (const auto& r : s.rows) mean += r.label / static_cast<double>(s.rows.size());
  double var = 0.0;
  for (const auto& r : s.rows) var += (r.label - mean) * (r.label - mean) / static_cast<double>(s.rows.size());
  EXPECT_LT(a.best_rmse, std::sqrt(var));
}

TEST(GridSearch, FoldErrors) {
  const TrainingSet s = linear_feature_set(14, 1);
  Grid g{{4}, {1}, {1}};
  EXPECT_THROW(grid_search(s, {Fold{{0, 1}}}, g), Error);
  EXPECT_THROW(grid_search(s, {Fold{{0}}, Fold{}}, g), Error);
  // rows 0 and 7 share a scene; splitting them across sides is rejected
  EXPECT_THROW(grid_search(s, {Fold{{0}}, Fold{{7}}}, g), Error);
  EXPECT_THROW(scene_folds(s, 8), Error);
}

TEST(SceneFolds, AreSceneDisjointAndCoverEveryRow) {
  const TrainingSet s = linear_feature_set(30, 8);
  const auto folds = scene_folds(s, 4);
  std::vector<int> seen(s.rows.size(), 0);
  std::map<std::string, std::size_t> scene_fold;
  for (std::size_t f = 0; f < folds.size(); ++f)
    for (std::size_t r : folds[f].validation_rows) {
      ++seen[r];
      auto [it, fresh] = scene_fold.emplace(s.rows[r].group, f);
      EXPECT_EQ(it->second, f);
    }
  for (int c : seen) EXPECT_EQ(c, 1);
}

TEST(ModelFile, RoundTripIsBitIdentical) {
  const SvrModel m = train(linear_feature_set(30, 11), SvrHyperparams{});
  const SvrModel back = load_model(save_model(m));
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(-0.2, 1.2);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> in(6);
    for (double& v : in) v = u(rng);
    in[5] *= 20.0;
    EXPECT_EQ(predict_unclipped(m, in), predict_unclipped(back, in));
  }
  EXPECT_EQ(back.hyperparams, m.hyperparams);
  EXPECT_EQ(save_model(back), save_model(m));
}

TEST(ModelFile, ConstantModelRoundTrips) {
  const SvrModel m = train(one_dim_set({1, 2, 3, 4}, {55, 55, 55, 55}), {});
  const SvrModel back = load_model(save_model(m));
  EXPECT_TRUE(back.support_vectors.empty());
  EXPECT_EQ(predict(back, std::vector<double>{2.5}), 55.0);
}

TEST(ModelFile, CorruptionAndSchemaErrors) {
  const std::string bytes = save_model(train(linear_feature_set(10, 2), {}));
  try {
    load_model(std::string_view(bytes).substr(0, bytes.size() / 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::corrupted_payload);
  }
  auto j = nlohmann::json::parse(bytes);
  j["schema_version"] = 99;
  try {
    load_model(j.dump());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::schema_version);
  }
  j = nlohmann::json::parse(bytes);
  j["coefficients"].push_back(1.0);
  EXPECT_THROW(load_model(j.dump()), Error);
  j = nlohmann::json::parse(bytes);
  j.erase("bias");
  EXPECT_THROW(load_model(j.dump()), Error);
}

class SvrInvariants : public ::testing::TestWithParam<int> {};

TEST_P(SvrInvariants, FeasibleMonotoneAndOptimal) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(GetParam()) * 7919u + 13u);
  const teleqa::testing::SvrInstance inst = teleqa::testing::random_svr_instance(rng);
  const DualSolution sol = solve_dual(inst.x, inst.y, inst.hp, true);
  ASSERT_TRUE(sol.converged);
  EXPECT_LE(sol.kkt_violation, inst.hp.tolerance);

  const double sum = std::accumulate(sol.coefficients.begin(), sol.coefficients.end(), 0.0);
  EXPECT_NEAR(sum, 0.0, 1e-9 * inst.hp.c);
  for (double b : sol.coefficients) EXPECT_LE(std::abs(b), inst.hp.c * (1 + 1e-12));

  for (std::size_t i = 1; i < sol.objective_trace.size(); ++i)
    EXPECT_GE(sol.objective_trace[i], sol.objective_trace[i - 1] - 1e-9 * std::abs(sol.objective_trace[i - 1]));

  EXPECT_NEAR(dual_objective(inst.x, inst.y, sol.coefficients, inst.hp), sol.objective,
              1e-9 * std::max(1.0, std::abs(sol.objective)));
  const teleqa::testing::OracleSolution exact = teleqa::testing::dense_svr_dual(inst.x, inst.y, inst.hp);
  EXPECT_NEAR(sol.objective, exact.objective, 1e-6);
}

INSTANTIATE_TEST_SUITE_P(Random, SvrInvariants, ::testing::Range(0, 40));

TEST(SvrInvariants, TrainingFitsTubeOrHitsBound) {
  const TrainingSet s = linear_feature_set(25, 31);
  SvrHyperparams hp;
  hp.c = 8.0;
  hp.epsilon = 1.0;
  const SvrModel m = train(s, hp);
  const auto x = scaled_inputs(s);
  const DualSolution sol = solve_dual(x, [&] {
    std::vector<double> y;
    for (const auto& r : s.rows) y.push_back(r.label);
    return y;
  }(), hp);
  for (std::size_t i = 0; i < s.rows.size(); ++i) {
    const double resid = std::abs(predict_unclipped(m, s.rows[i].features) - s.rows[i].label);
    const bool at_bound = std::abs(std::abs(sol.coefficients[i]) - hp.c) < 1e-9;
    EXPECT_TRUE(resid <= hp.epsilon + 2 * hp.tolerance || at_bound) << "row " << i << " residual " << resid;
  }
}

TEST(SvrInvariants, RowOrderDoesNotMatter) {
  TrainingSet s = linear_feature_set(24, 17);
  const SvrModel a = train(s, {});
  std::mt19937_64 rng(4);
  std::shuffle(s.rows.begin(), s.rows.end(), rng);
  const SvrModel b = train(s, {});
  EXPECT_EQ(save_model(a), save_model(b));
}
