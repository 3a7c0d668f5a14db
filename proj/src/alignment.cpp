#include "teleqa/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "teleqa/error.hpp"
#include "teleqa/statistics.hpp"

namespace teleqa::alignment {
namespace {

std::string format_number(double v, const char* pattern) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string three_significant(double v) {
  if (v == 0.0 || !std::isfinite(v)) return format_number(v, "%.1f");
  const int digits = static_cast<int>(std::floor(std::log10(std::abs(v))));
  const int decimals = std::max(0, 2 - digits);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

}  // namespace

double pearson(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, Errc::invalid_argument, "correlation needs paired samples");
  const double mx = stats::mean(x);
  const double my = stats::mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = stats::midranks(x);
  const auto ry = stats::midranks(y);
  return pearson(rx, ry);
}

AlignmentReport evaluate(const std::map<std::string, double>& predictions, const std::map<std::string, double>& labels,
                         const std::map<std::string, AssetMeta>& meta) {
  for (const auto& [id, v] : predictions)
    require(labels.contains(id), Errc::key_mismatch, "prediction for asset " + id + " has no label");
  for (const auto& [id, v] : labels)
    require(predictions.contains(id), Errc::key_mismatch, "label for asset " + id + " has no prediction");
  require(labels.size() >= 3, Errc::invalid_argument, "alignment needs at least 3 assets");

  AlignmentReport r;
  r.n = labels.size();
  std::vector<double> p, l;
  for (const auto& [id, mos] : labels) {
    const double pred = predictions.at(id);
    require(std::isfinite(pred) && std::isfinite(mos), Errc::non_finite, "non-finite score for asset " + id);
    Residual res{id, mos, pred, pred - mos, std::nullopt};
    if (auto it = meta.find(id); it != meta.end()) res.meta = it->second;
    r.residuals.push_back(res);
    p.push_back(pred);
    l.push_back(mos);
    r.mad += std::abs(pred - mos);
    r.mse += (pred - mos) * (pred - mos);
  }
  const double n = static_cast<double>(r.n);
  r.mad /= n;
  r.mse /= n;
  r.rmse = std::sqrt(r.mse);
  r.pearson_r = pearson(p, l);
  r.spearman_rho = spearman(p, l);
  r.correlation_defined = !std::isnan(r.pearson_r);
  return r;
}

ModelComparison compare_models(const AlignmentReport& before, const AlignmentReport& after) {
  require(before.residuals.size() == after.residuals.size(), Errc::key_mismatch, "reports cover different asset sets");
  for (std::size_t i = 0; i < before.residuals.size(); ++i)
    require(before.residuals[i].asset_id == after.residuals[i].asset_id, Errc::key_mismatch,
            "reports cover different asset sets");
  ModelComparison c;
  const std::pair<const char*, double AlignmentReport::*> fields[] = {{"mad", &AlignmentReport::mad},
                                                                      {"mse", &AlignmentReport::mse},
                                                                      {"rmse", &AlignmentReport::rmse},
                                                                      {"pearson_r", &AlignmentReport::pearson_r},
                                                                      {"spearman_rho", &AlignmentReport::spearman_rho}};
  for (const auto& [name, field] : fields) {
    MetricDelta d;
    d.metric = name;
    d.before = before.*field;
    d.after = after.*field;
    d.delta = d.after - d.before;
    d.improvement_percent = d.before != 0.0 ? (d.before - d.after) / d.before * 100.0 : 0.0;
    d.printed = three_significant(d.improvement_percent) + "%";
    d.rounded = format_number(std::round(d.improvement_percent) + 0.0, "%.0f") + "%";
    c.metrics.push_back(d);
  }
  return c;
}

std::vector<Outlier> outlier_report(const AlignmentReport& report, std::size_t k) {
  require(k <= report.residuals.size(), Errc::out_of_range, "more outliers requested than assets");
  std::vector<Outlier> all;
  for (const Residual& r : report.residuals) all.push_back({r.asset_id, r.mos, r.prediction, r.mos - r.prediction});
  std::stable_sort(all.begin(), all.end(),
                   [](const Outlier& a, const Outlier& b) { return std::abs(a.delta) > std::abs(b.delta); });
  all.resize(k);
  return all;
}

void to_json(nlohmann::json& j, const AlignmentReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  j = nlohmann::json{{"n", r.n},
                     {"mad", r.mad},
                     {"mse", r.mse},
                     {"rmse", r.rmse},
                     {"pearson_r", num(r.pearson_r)},
                     {"spearman_rho", num(r.spearman_rho)},
                     {"correlation_defined", r.correlation_defined},
                     {"residual_convention", "prediction - mos"}};
  auto& rows = j["residuals"] = nlohmann::json::array();
  for (const auto& res : r.residuals) {
    nlohmann::json row{{"asset_id", res.asset_id}, {"mos", res.mos}, {"prediction", res.prediction}, {"residual", res.residual}};
    if (res.meta) {
      row["category"] = res.meta->category;
      row["crf"] = res.meta->crf;
    }
    rows.push_back(row);
  }
}

void to_json(nlohmann::json& j, const ModelComparison& c) {
  j = nlohmann::json::array();
  for (const auto& d : c.metrics)
    j.push_back({{"metric", d.metric},
                 {"before", d.before},
                 {"after", d.after},
                 {"delta", d.delta},
                 {"improvement_percent", d.improvement_percent},
                 {"printed", d.printed},
                 {"rounded", d.rounded}});
}

void to_json(nlohmann::json& j, const Outlier& o) {
  j = nlohmann::json{{"asset_id", o.asset_id}, {"mos", o.mos}, {"prediction", o.prediction}, {"delta", o.delta}};
}

std::string residual_csv(const AlignmentReport& r) {
  std::string out = "asset_id,mos,prediction,residual,category,crf\n";
  for (const auto& res : r.residuals) {
    out += res.asset_id + ',' + format_number(res.mos, "%.17g") + ',' + format_number(res.prediction, "%.17g") + ',' +
           format_number(res.residual, "%.17g") + ',';
    if (res.meta) out += res.meta->category + ',' + std::to_string(res.meta->crf);
    else out += ',';
    out += '\n';
  }
  return out;
}

std::string gnuplot_columns(const AlignmentReport& r) {
  std::string out = "# mos prediction\n";
  for (const auto& res : r.residuals)
    out += format_number(res.mos, "%.10g") + ' ' + format_number(res.prediction, "%.10g") + '\n';
  return out;
}

}  // namespace teleqa::alignment
