#include "teleqa/svr_fusion.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include "teleqa/error.hpp"

namespace teleqa::svr {
namespace {

constexpr double kTau = 1e-12;
constexpr double kInf = std::numeric_limits<double>::infinity();

using Matrix = std::vector<std::vector<double>>;

Matrix kernel_matrix(const Matrix& x, double gamma) {
  const std::size_t n = x.size();
  Matrix k(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    k[i][i] = 1.0;
    for (std::size_t j = 0; j < i; ++j) k[i][j] = k[j][i] = rbf_kernel(x[i], x[j], gamma);
  }
  return k;
}

// SMO over the 2l-variable form: t < l is alpha_t (sign +1), t >= l is
// alpha*_{t-l} (sign -1). Minimises f = 1/2 a'Qa + p'a subject to y'a = 0,
// 0 <= a <= C, with Q_tu = s_t s_u K(t mod l, u mod l).
class SmoSolver {
 public:
  SmoSolver(const Matrix& kernel, std::span<const double> target, const SvrHyperparams& hp)
      : k_(kernel), l_(target.size()), c_(hp.c), alpha_(2 * l_, 0.0), grad_(2 * l_), p_(2 * l_) {
    for (std::size_t i = 0; i < l_; ++i) {
      p_[i] = hp.epsilon - target[i];
      p_[i + l_] = hp.epsilon + target[i];
    }
    grad_ = p_;
  }

  double sign(std::size_t t) const { return t < l_ ? 1.0 : -1.0; }
  double q(std::size_t t, std::size_t u) const { return sign(t) * sign(u) * k_[t % l_][u % l_]; }
  bool at_upper(std::size_t t) const { return alpha_[t] >= c_; }
  bool at_lower(std::size_t t) const { return alpha_[t] <= 0.0; }
  bool in_up(std::size_t t) const { return sign(t) > 0 ? !at_upper(t) : !at_lower(t); }
  bool in_low(std::size_t t) const { return sign(t) > 0 ? !at_lower(t) : !at_upper(t); }

  // Most violating pair; returns the violation m - M.
  double select(std::size_t& i, std::size_t& j) const {
    double gmax = -kInf;
    double gmin = kInf;
    i = j = 2 * l_;
    for (std::size_t t = 0; t < 2 * l_; ++t) {
      const double v = -sign(t) * grad_[t];
      if (in_up(t) && v > gmax) {
        gmax = v;
        i = t;
      }
      if (in_low(t) && v < gmin) {
        gmin = v;
        j = t;
      }
    }
    if (i == 2 * l_ || j == 2 * l_) return 0.0;
    return gmax - gmin;
  }

  void update(std::size_t i, std::size_t j) {
    const double old_i = alpha_[i];
    const double old_j = alpha_[j];
    const double qii = q(i, i);
    const double qjj = q(j, j);
    const double qij = q(i, j);
    double& ai = alpha_[i];
    double& aj = alpha_[j];
    if (sign(i) != sign(j)) {
      double quad = qii + qjj + 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (-grad_[i] - grad_[j]) / quad;
      const double diff = ai - aj;
      ai += delta;
      aj += delta;
      if (diff > 0.0) {
        if (aj < 0.0) {
          aj = 0.0;
          ai = diff;
        }
      } else if (ai < 0.0) {
        ai = 0.0;
        aj = -diff;
      }
      if (diff > 0.0) {
        if (ai > c_) {
          ai = c_;
          aj = c_ - diff;
        }
      } else if (aj > c_) {
        aj = c_;
        ai = c_ + diff;
      }
    } else {
      double quad = qii + qjj - 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (grad_[i] - grad_[j]) / quad;
      const double sum = ai + aj;
      ai -= delta;
      aj += delta;
      if (sum > c_) {
        if (ai > c_) {
          ai = c_;
          aj = sum - c_;
        }
      } else if (aj < 0.0) {
        aj = 0.0;
        ai = sum;
      }
      if (sum > c_) {
        if (aj > c_) {
          aj = c_;
          ai = sum - c_;
        }
      } else if (ai < 0.0) {
        ai = 0.0;
        aj = sum;
      }
    }
    const double di = ai - old_i;
    const double dj = aj - old_j;
    for (std::size_t t = 0; t < 2 * l_; ++t) grad_[t] += q(t, i) * di + q(t, j) * dj;
  }

  double objective() const {
    double f = 0.0;
    for (std::size_t t = 0; t < 2 * l_; ++t) f += alpha_[t] * (grad_[t] + p_[t]);
    return -0.5 * f;
  }

  double rho() const {
    double ub = kInf;
    double lb = -kInf;
    double sum_free = 0.0;
    std::size_t free = 0;
    for (std::size_t t = 0; t < 2 * l_; ++t) {
      const double yg = sign(t) * grad_[t];
      if (at_upper(t)) {
        if (sign(t) < 0) ub = std::min(ub, yg);
        else lb = std::max(lb, yg);
      } else if (at_lower(t)) {
        if (sign(t) > 0) ub = std::min(ub, yg);
        else lb = std::max(lb, yg);
      } else {
        ++free;
        sum_free += yg;
      }
    }
    return free > 0 ? sum_free / static_cast<double>(free) : 0.5 * (ub + lb);
  }

  std::vector<double> coefficients() const {
    std::vector<double> b(l_);
    for (std::size_t i = 0; i < l_; ++i) b[i] = alpha_[i] - alpha_[i + l_];
    return b;
  }

 private:
  const Matrix& k_;
  std::size_t l_;
  double c_;
  std::vector<double> alpha_;
  std::vector<double> grad_;
  std::vector<double> p_;
};

void check_finite(std::span<const double> values, const std::string& what) {
  for (double v : values) require(std::isfinite(v), Errc::non_finite, what + " contains a non-finite value");
}

}  // namespace

void TrainingSet::validate() const {
  require(!feature_names.empty(), Errc::invalid_argument, "training set has no feature columns");
  std::set<std::string> ids;
  for (const TrainingRow& r : rows) {
    require(ids.insert(r.id).second, Errc::duplicate_entry, "duplicate training row id " + r.id);
    require(r.features.size() == feature_names.size(), Errc::dimension_mismatch,
            "row " + r.id + " has the wrong number of features");
    check_finite(r.features, "row " + r.id);
    require(std::isfinite(r.label), Errc::non_finite, "row " + r.id + " has a non-finite label");
    require(r.label >= 0.0 && r.label <= 100.0, Errc::out_of_range, "row " + r.id + " label outside [0,100]");
  }
}

TrainingSet TrainingSet::for_features() {
  TrainingSet s;
  s.feature_names.assign(features::kFeatureNames.begin(), features::kFeatureNames.end());
  return s;
}

void TrainingSet::add(std::string id, std::string group, const features::FeatureVector& fv, double label) {
  const auto a = fv.as_array();
  rows.push_back(TrainingRow{std::move(id), std::move(group), {a.begin(), a.end()}, label});
}

std::vector<double> FeatureScaler::transform(std::span<const double> raw) const {
  require(raw.size() == min.size(), Errc::dimension_mismatch, "feature count does not match scaler");
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double range = max[i] - min[i];
    out[i] = range > 0.0 ? (raw[i] - min[i]) / range : 0.5;
  }
  return out;
}

FeatureScaler fit_scaler(const TrainingSet& set) {
  require(set.rows.size() >= 2, Errc::empty_input, "a scaler needs at least 2 rows");
  const std::size_t d = set.feature_names.size();
  FeatureScaler s{std::vector<double>(d, kInf), std::vector<double>(d, -kInf)};
  for (const TrainingRow& r : set.rows) {
    require(r.features.size() == d, Errc::dimension_mismatch, "row " + r.id + " has the wrong number of features");
    for (std::size_t i = 0; i < d; ++i) {
      s.min[i] = std::min(s.min[i], r.features[i]);
      s.max[i] = std::max(s.max[i], r.features[i]);
    }
  }
  return s;
}

void SvrHyperparams::validate() const {
  require(gamma > 0.0 && std::isfinite(gamma), Errc::invalid_argument, "gamma must be positive");
  require(c > 0.0 && std::isfinite(c), Errc::invalid_argument, "C must be positive");
  require(epsilon >= 0.0 && std::isfinite(epsilon), Errc::invalid_argument, "epsilon must be non-negative");
  require(tolerance > 0.0, Errc::invalid_argument, "tolerance must be positive");
  require(max_iterations > 0, Errc::invalid_argument, "iteration cap must be positive");
}

double rbf_kernel(std::span<const double> a, std::span<const double> b, double gamma) {
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    d2 += d * d;
  }
  return std::exp(-gamma * d2);
}

DualSolution solve_dual(const Matrix& x, std::span<const double> y, const SvrHyperparams& hp, bool trace_objective) {
  hp.validate();
  require(x.size() == y.size() && !x.empty(), Errc::invalid_argument, "solver needs matching, non-empty inputs");
  const Matrix k = kernel_matrix(x, hp.gamma);
  SmoSolver smo(k, y, hp);
  DualSolution sol;
  std::size_t i = 0, j = 0;
  if (trace_objective) sol.objective_trace.push_back(smo.objective());
  for (;;) {
    sol.kkt_violation = smo.select(i, j);
    if (sol.kkt_violation <= hp.tolerance) {
      sol.converged = true;
      break;
    }
    if (sol.iterations >= hp.max_iterations) break;
    smo.update(i, j);
    ++sol.iterations;
    if (trace_objective) sol.objective_trace.push_back(smo.objective());
  }
  sol.coefficients = smo.coefficients();
  sol.bias = -smo.rho();
  sol.objective = smo.objective();
  return sol;
}

double dual_objective(const Matrix& x, std::span<const double> y, std::span<const double> coefficients,
                      const SvrHyperparams& hp) {
  double quad = 0.0;
  double lin = 0.0;
  for (std::size_t a = 0; a < x.size(); ++a) {
    for (std::size_t b = 0; b < x.size(); ++b)
      quad += coefficients[a] * coefficients[b] * rbf_kernel(x[a], x[b], hp.gamma);
    lin += y[a] * coefficients[a] - hp.epsilon * std::abs(coefficients[a]);
  }
  return -0.5 * quad + lin;
}

SvrModel train(const TrainingSet& input, const SvrHyperparams& hp, const features::FeatureConfig& config) {
  hp.validate();
  input.validate();
  require(input.rows.size() >= 4, Errc::empty_input, "training needs at least 4 rows");
  TrainingSet set = input;
  std::sort(set.rows.begin(), set.rows.end(), [](const auto& a, const auto& b) { return a.id < b.id; });

  SvrModel model;
  model.feature_config = config;
  model.feature_names = set.feature_names;
  model.scaler = fit_scaler(set);
  model.hyperparams = hp;

  Matrix x;
  std::vector<double> y;
  for (const TrainingRow& r : set.rows) {
    x.push_back(model.scaler.transform(r.features));
    y.push_back(r.label);
  }
  const DualSolution sol = solve_dual(x, y, hp);
  if (!sol.converged) {
    fail(Errc::not_converged, "SMO hit the iteration cap (" + std::to_string(hp.max_iterations) +
                                  ") with KKT violation " + std::to_string(sol.kkt_violation));
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (sol.coefficients[i] != 0.0) {
      model.support_vectors.push_back(x[i]);
      model.coefficients.push_back(sol.coefficients[i]);
    }
  }
  model.bias = sol.bias;
  model.kkt_violation = sol.kkt_violation;
  model.iterations = sol.iterations;
  return model;
}

double predict_unclipped(const SvrModel& model, std::span<const double> raw_features) {
  check_finite(raw_features, "prediction input");
  const std::vector<double> z = model.scaler.transform(raw_features);
  double acc = model.bias;
  for (std::size_t i = 0; i < model.support_vectors.size(); ++i)
    acc += model.coefficients[i] * rbf_kernel(model.support_vectors[i], z, model.hyperparams.gamma);
  return acc;
}

double predict(const SvrModel& model, std::span<const double> raw_features) {
  return std::clamp(predict_unclipped(model, raw_features), model.clip_min, model.clip_max);
}

double predict(const SvrModel& model, const features::FeatureVector& fv, const features::FeatureConfig& config) {
  require(config.version == model.feature_config.version, Errc::version_mismatch,
          "model was trained on feature definition " + model.feature_config.version + ", input uses " +
              config.version);
  const auto a = fv.as_array();
  return predict(model, std::span<const double>(a));
}

std::vector<Fold> scene_folds(const TrainingSet& set, int k) {
  require(k >= 2, Errc::invalid_argument, "need at least 2 folds");
  std::map<std::string, std::vector<std::size_t>> by_group;
  for (std::size_t i = 0; i < set.rows.size(); ++i) by_group[set.rows[i].group].push_back(i);
  require(by_group.size() >= static_cast<std::size_t>(k), Errc::too_few_scenes,
          "fewer scenes than folds");
  std::vector<Fold> folds(static_cast<std::size_t>(k));
  std::size_t g = 0;
  for (const auto& [group, rows] : by_group) {
    auto& dst = folds[g++ % folds.size()].validation_rows;
    dst.insert(dst.end(), rows.begin(), rows.end());
  }
  return folds;
}

GridSearchResult select_best(std::vector<GridPoint> points) {
  require(!points.empty(), Errc::empty_input, "empty hyperparameter grid");
  std::stable_sort(points.begin(), points.end(), [](const GridPoint& a, const GridPoint& b) {
    if (a.mean_rmse != b.mean_rmse) return a.mean_rmse < b.mean_rmse;
    if (a.hyperparams.c != b.hyperparams.c) return a.hyperparams.c < b.hyperparams.c;
    if (a.hyperparams.gamma != b.hyperparams.gamma) return a.hyperparams.gamma < b.hyperparams.gamma;
    return a.hyperparams.epsilon < b.hyperparams.epsilon;
  });
  GridSearchResult r;
  r.best = points.front().hyperparams;
  r.best_rmse = points.front().mean_rmse;
  r.table = std::move(points);
  return r;
}

GridSearchResult grid_search(const Grid& grid, const SvrHyperparams& base, std::size_t fold_count,
                             const FoldEvaluator& evaluate, int jobs) {
  require(fold_count >= 2, Errc::invalid_argument, "grid search needs at least 2 folds");
  std::vector<GridPoint> points;
  for (double c : grid.c)
    for (double g : grid.gamma)
      for (double e : grid.epsilon) {
        SvrHyperparams hp = base;
        hp.c = c;
        hp.gamma = g;
        hp.epsilon = e;
        hp.validate();
        points.push_back({hp, 0.0});
      }
  require(!points.empty(), Errc::empty_input, "empty hyperparameter grid");

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t p = next++; p < points.size(); p = next++) {
      try {
        double sum = 0.0;
        for (std::size_t f = 0; f < fold_count; ++f) sum += evaluate(points[p].hyperparams, f);
        points[p].mean_rmse = sum / static_cast<double>(fold_count);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int threads = std::clamp(jobs, 1, static_cast<int>(points.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return select_best(std::move(points));
}

GridSearchResult grid_search(const TrainingSet& set, const std::vector<Fold>& folds, const Grid& grid,
                             const SvrHyperparams& base, const features::FeatureConfig& config, int jobs) {
  set.validate();
  require(folds.size() >= 2, Errc::invalid_argument, "grid search needs at least 2 folds");
  std::vector<std::pair<TrainingSet, TrainingSet>> splits;
  for (const Fold& fold : folds) {
    require(!fold.validation_rows.empty(), Errc::empty_input, "fold with no rows");
    std::vector<bool> in_fold(set.rows.size(), false);
    std::set<std::string> fold_groups;
    for (std::size_t r : fold.validation_rows) {
      require(r < set.rows.size(), Errc::out_of_range, "fold references a missing row");
      in_fold[r] = true;
      fold_groups.insert(set.rows[r].group);
    }
    TrainingSet train_part{set.feature_names, {}};
    TrainingSet val_part{set.feature_names, {}};
    for (std::size_t r = 0; r < set.rows.size(); ++r) {
      if (in_fold[r]) {
        val_part.rows.push_back(set.rows[r]);
      } else {
        require(!fold_groups.contains(set.rows[r].group), Errc::invalid_argument,
                "fold is not scene-disjoint: scene " + set.rows[r].group + " is on both sides");
        train_part.rows.push_back(set.rows[r]);
      }
    }
    splits.emplace_back(std::move(train_part), std::move(val_part));
  }

  auto evaluate = [&](const SvrHyperparams& hp, std::size_t f) {
    const auto& [train_part, val_part] = splits[f];
    SvrModel model;
    try {
      model = train(train_part, hp, config);
    } catch (const Error& e) {
      if (e.code() == Errc::not_converged) return kInf;
      throw;
    }
    double sse = 0.0;
    for (const TrainingRow& r : val_part.rows) {
      const double d = predict(model, r.features) - r.label;
      sse += d * d;
    }
    return std::sqrt(sse / static_cast<double>(val_part.rows.size()));
  };
  return grid_search(grid, base, splits.size(), evaluate, jobs);
}

std::string save_model(const SvrModel& m) {
  nlohmann::json j{{"schema_version", m.schema_version},
                   {"feature_config", m.feature_config},
                   {"feature_names", m.feature_names},
                   {"scaler", {{"min", m.scaler.min}, {"max", m.scaler.max}}},
                   {"hyperparams",
                    {{"kernel", "rbf"},
                     {"c", m.hyperparams.c},
                     {"gamma", m.hyperparams.gamma},
                     {"epsilon", m.hyperparams.epsilon},
                     {"tolerance", m.hyperparams.tolerance},
                     {"max_iterations", m.hyperparams.max_iterations}}},
                   {"support_vectors", m.support_vectors},
                   {"coefficients", m.coefficients},
                   {"bias", m.bias},
                   {"clip_range", {m.clip_min, m.clip_max}},
                   {"solver", {{"kkt_violation", m.kkt_violation}, {"iterations", m.iterations}}}};
  return j.dump(2) + "\n";
}

SvrModel load_model(std::string_view bytes) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes);
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::corrupted_payload, std::string("model file is not valid JSON: ") + e.what());
  }
  SvrModel m;
  try {
    m.schema_version = j.at("schema_version").get<int>();
  } catch (const nlohmann::json::exception&) {
    fail(Errc::corrupted_payload, "model file lacks schema_version");
  }
  require(m.schema_version == kModelSchemaVersion, Errc::schema_version,
          "unsupported model schema version " + std::to_string(m.schema_version));
  try {
    m.feature_config = j.at("feature_config").get<features::FeatureConfig>();
    m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    m.scaler.min = j.at("scaler").at("min").get<std::vector<double>>();
    m.scaler.max = j.at("scaler").at("max").get<std::vector<double>>();
    const auto& h = j.at("hyperparams");
    require(h.at("kernel") == "rbf", Errc::corrupted_payload, "unsupported kernel");
    m.hyperparams.c = h.at("c").get<double>();
    m.hyperparams.gamma = h.at("gamma").get<double>();
    m.hyperparams.epsilon = h.at("epsilon").get<double>();
    m.hyperparams.tolerance = h.at("tolerance").get<double>();
    m.hyperparams.max_iterations = h.at("max_iterations").get<std::int64_t>();
    m.support_vectors = j.at("support_vectors").get<std::vector<std::vector<double>>>();
    m.coefficients = j.at("coefficients").get<std::vector<double>>();
    m.bias = j.at("bias").get<double>();
    const auto clip = j.at("clip_range").get<std::vector<double>>();
    require(clip.size() == 2, Errc::corrupted_payload, "clip_range needs two values");
    m.clip_min = clip[0];
    m.clip_max = clip[1];
    if (j.contains("solver")) {
      m.kkt_violation = j["solver"].value("kkt_violation", 0.0);
      m.iterations = j["solver"].value("iterations", std::int64_t{0});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::corrupted_payload, std::string("model file is incomplete: ") + e.what());
  }
  const std::size_t d = m.feature_names.size();
  require(m.scaler.min.size() == d && m.scaler.max.size() == d, Errc::corrupted_payload, "scaler size mismatch");
  require(m.coefficients.size() == m.support_vectors.size(), Errc::corrupted_payload,
          "coefficient count differs from support vector count");
  for (const auto& sv : m.support_vectors)
    require(sv.size() == d, Errc::corrupted_payload, "support vector has the wrong dimension");
  return m;
}

}  // namespace teleqa::svr
