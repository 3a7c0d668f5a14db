#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace teleqa::alignment {

struct AssetMeta {
  std::string category;
  int crf = 0;
};

struct Residual {
  std::string asset_id;
  double mos = 0.0;
  double prediction = 0.0;
  double residual = 0.0;  // prediction - mos
  std::optional<AssetMeta> meta;
};

struct AlignmentReport {
  double mad = 0.0;
  double mse = 0.0;
  double rmse = 0.0;
  double pearson_r = 0.0;     // NaN when either series is constant
  double spearman_rho = 0.0;  // NaN when either series is constant
  bool correlation_defined = true;
  std::size_t n = 0;
  std::vector<Residual> residuals;  // sorted by asset id
};

double pearson(std::span<const double> x, std::span<const double> y);
// Pearson on average ranks.
double spearman(std::span<const double> x, std::span<const double> y);

// Key sets must match exactly and hold at least 3 assets.
AlignmentReport evaluate(const std::map<std::string, double>& predictions, const std::map<std::string, double>& labels,
                         const std::map<std::string, AssetMeta>& meta = {});

struct MetricDelta {
  std::string metric;
  double before = 0.0;
  double after = 0.0;
  double delta = 0.0;                // after - before
  double improvement_percent = 0.0;  // (before - after) / before * 100
  std::string printed;               // three significant figures, e.g. "14.8%"
  std::string rounded;               // nearest whole percent, e.g. "15%"
};

struct ModelComparison {
  std::vector<MetricDelta> metrics;
};

ModelComparison compare_models(const AlignmentReport& before, const AlignmentReport& after);

struct Outlier {
  std::string asset_id;
  double mos = 0.0;
  double prediction = 0.0;
  double delta = 0.0;  // mos - prediction
};

// The k assets with the largest |mos - prediction|, largest first.
std::vector<Outlier> outlier_report(const AlignmentReport& report, std::size_t k);

void to_json(nlohmann::json& j, const AlignmentReport& r);
void to_json(nlohmann::json& j, const ModelComparison& c);
void to_json(nlohmann::json& j, const Outlier& o);

// asset_id,mos,prediction,residual,category,crf
std::string residual_csv(const AlignmentReport& r);
// Whitespace-separated "mos prediction" columns with a comment header.
std::string gnuplot_columns(const AlignmentReport& r);

}  // namespace teleqa::alignment
