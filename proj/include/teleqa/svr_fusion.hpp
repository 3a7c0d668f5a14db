#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "teleqa/perceptual_features.hpp"

namespace teleqa::svr {

struct TrainingRow {
  std::string id;     // clip / asset identifier, unique
  std::string group;  // scene (content) identifier used for disjoint folds
  std::vector<double> features;
  double label = 0.0;  // score on [0,100]
};

struct TrainingSet {
  std::vector<std::string> feature_names;
  std::vector<TrainingRow> rows;

  void validate() const;
  // Rows for the six pooled perceptual features.
  static TrainingSet for_features();
  void add(std::string id, std::string group, const features::FeatureVector& fv, double label);
};

// Per-feature min/max scaling into [0,1]; constant features map to 0.5.
struct FeatureScaler {
  std::vector<double> min;
  std::vector<double> max;

  std::vector<double> transform(std::span<const double> raw) const;
};

FeatureScaler fit_scaler(const TrainingSet& set);

struct SvrHyperparams {
  double c = 4.0;
  double gamma = 0.5;  // RBF width on scaled features
  double epsilon = 1.0;
  double tolerance = 1e-3;  // maximal KKT violation at termination
  std::int64_t max_iterations = 10'000'000;

  void validate() const;
  friend bool operator==(const SvrHyperparams&, const SvrHyperparams&) = default;
};

// Epsilon-SVR dual on already scaled inputs. `coefficients` are alpha - alpha*.
struct DualSolution {
  std::vector<double> coefficients;
  double bias = 0.0;
  double objective = 0.0;  // dual objective, maximised
  double kkt_violation = 0.0;
  std::int64_t iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;  // filled when tracing is requested
};

double rbf_kernel(std::span<const double> a, std::span<const double> b, double gamma);

DualSolution solve_dual(const std::vector<std::vector<double>>& x, std::span<const double> y,
                        const SvrHyperparams& hp, bool trace_objective = false);

// -1/2 b'Kb - eps*sum|b| + y'b for coefficient vector b.
double dual_objective(const std::vector<std::vector<double>>& x, std::span<const double> y,
                      std::span<const double> coefficients, const SvrHyperparams& hp);

inline constexpr int kModelSchemaVersion = 1;

struct SvrModel {
  int schema_version = kModelSchemaVersion;
  features::FeatureConfig feature_config;
  std::vector<std::string> feature_names;
  FeatureScaler scaler;
  SvrHyperparams hyperparams;
  std::vector<std::vector<double>> support_vectors;  // scaled space
  std::vector<double> coefficients;
  double bias = 0.0;
  double clip_min = 0.0;
  double clip_max = 100.0;
  // Solver diagnostics, informational only.
  double kkt_violation = 0.0;
  std::int64_t iterations = 0;
};

// Rows are sorted by id before solving so row order never matters.
// Throws Errc::not_converged (with the final KKT violation) at the iteration cap.
SvrModel train(const TrainingSet& set, const SvrHyperparams& hp, const features::FeatureConfig& config = {});

double predict_unclipped(const SvrModel& model, std::span<const double> raw_features);
double predict(const SvrModel& model, std::span<const double> raw_features);
// Refuses features computed under a different feature definition.
double predict(const SvrModel& model, const features::FeatureVector& fv, const features::FeatureConfig& config);

struct Grid {
  std::vector<double> c{1, 4, 16, 64};
  std::vector<double> gamma{0.25, 0.5, 1, 2};
  std::vector<double> epsilon{1, 2.5};
};

// Validation rows of one fold; the fold trains on every other row.
struct Fold {
  std::vector<std::size_t> validation_rows;
};

// Groups are dealt round-robin (in sorted order) into k folds.
std::vector<Fold> scene_folds(const TrainingSet& set, int k);

struct GridPoint {
  SvrHyperparams hyperparams;
  double mean_rmse = 0.0;
};

struct GridSearchResult {
  SvrHyperparams best;
  double best_rmse = 0.0;
  std::vector<GridPoint> table;
};

// Lowest mean fold RMSE; ties go to smaller C, then smaller gamma, then smaller epsilon.
GridSearchResult select_best(std::vector<GridPoint> points);

using FoldEvaluator = std::function<double(const SvrHyperparams&, std::size_t fold)>;
GridSearchResult grid_search(const Grid& grid, const SvrHyperparams& base, std::size_t fold_count,
                             const FoldEvaluator& evaluate, int jobs = 1);
GridSearchResult grid_search(const TrainingSet& set, const std::vector<Fold>& folds, const Grid& grid,
                             const SvrHyperparams& base = {}, const features::FeatureConfig& config = {},
                             int jobs = 1);

std::string save_model(const SvrModel& model);
SvrModel load_model(std::string_view bytes);

// Frozen generic-content model used as the pre-retraining baseline.
const SvrModel& baseline_model();

}  // namespace teleqa::svr
