#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "teleqa/statistics.hpp"

namespace teleqa::subjective {

enum class Dimension { detail_loss, drivability, situational_awareness, reflection };

std::string_view to_string(Dimension d);
Dimension parse_dimension(std::string_view s);

// Dimensions pooled into training labels; reflection is reported separately.
inline const std::vector<Dimension> kLabelDimensions{Dimension::detail_loss, Dimension::drivability,
                                                     Dimension::situational_awareness};

struct RatingRecord {
  std::string participant_id;
  std::string asset_id;
  Dimension dimension = Dimension::detail_loss;
  std::string item_id;
  int value = 0;  // Likert 1..5

  void validate() const;
};

// Outcome of the object-identification question asked after the original video.
struct ObjectCheck {
  std::string participant_id;
  std::string asset_id;
  bool correct = false;
};

// Shared rating export. CSV columns: asset_id,participant_id,dimension,item,value.
// Object checks use dimension "object_check", item "correct" and value 1 or 0.
struct RatingExport {
  std::vector<RatingRecord> ratings;
  std::vector<ObjectCheck> object_checks;
};

inline constexpr std::string_view kRatingCsvHeader = "asset_id,participant_id,dimension,item,value";
inline constexpr std::string_view kObjectCheckDimension = "object_check";

// Identifiers travel through CSV unquoted, so separators and quotes are refused.
void validate_identifier(std::string_view id, std::string_view what);

// Rows are sorted, so equal exports serialize to identical bytes.
std::string write_rating_csv(const RatingExport& e);
RatingExport parse_rating_csv(std::string_view text);

inline double to_vmaf_scale(double likert_mean) { return (likert_mean - 1.0) * 25.0; }

struct MosLabel {
  std::string asset_id;
  double mos_raw = 0.0;   // mean Likert, [1,5]
  double mos_vmaf = 0.0;  // [0,100]
  int n_raters = 0;
  double std = 0.0;              // across participant means, VMAF scale
  double ci95_half_width = 0.0;  // 1.96 * std / sqrt(n), VMAF scale
};

void to_json(nlohmann::json& j, const MosLabel& m);

// Per participant: mean over every item of the pooled dimensions; then the mean over participants.
MosLabel aggregate_mos(std::span<const RatingRecord> records, std::span<const Dimension> pooled);

// One label per asset, skipping excluded participants.
std::map<std::string, MosLabel> aggregate_all(const RatingExport& e, std::span<const Dimension> pooled,
                                              const std::set<std::string>& excluded = {});

struct ScreeningResult {
  std::set<std::string> excluded;
  std::map<std::string, double> failure_rate;  // per participant with at least one check
};

// Participants failing the object check on more than `max_failure_fraction` of their scenarios are excluded.
ScreeningResult screen_participants(const RatingExport& e, double max_failure_fraction = 0.5);

// Rows are (participant, asset) pairs, columns every (dimension, item) seen; absent cells are NaN.
std::vector<std::vector<double>> item_matrix(const RatingExport& e);

struct GroupSummary {
  std::string key;
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;
  std::optional<stats::TestResult> normality;  // absent when not assessable
  bool normal = false;
};

void to_json(nlohmann::json& j, const GroupSummary& g);

struct PairComparison {
  std::string first;
  std::string second;
  stats::TestResult test;
  std::optional<double> p_holm;
  double cliffs_delta = 0.0;  // positive when `first` is rated higher
};

void to_json(nlohmann::json& j, const PairComparison& p);

struct CompressionReport {
  std::string unit_of_analysis;
  double alpha = 0.05;
  std::vector<GroupSummary> groups;  // ascending CRF
  std::string route;                 // "anova_tukey" or "kruskal_mann_whitney"
  stats::TestResult omnibus;
  std::vector<PairComparison> tukey;          // parametric route only
  std::vector<PairComparison> mann_whitney;   // every pair, Holm-adjusted
  std::vector<PairComparison> adjacent;       // consecutive CRF levels, subset of mann_whitney
  std::vector<std::string> notes;
};

void to_json(nlohmann::json& j, const CompressionReport& r);

CompressionReport compression_effect_report(const std::map<int, std::vector<double>>& by_crf, double alpha = 0.05,
                                            std::string unit_of_analysis = "asset");

struct EnvironmentReport {
  std::string unit_of_analysis;
  std::vector<GroupSummary> groups;
  stats::TestResult omnibus;          // Kruskal-Wallis across categories
  std::vector<PairComparison> welch;  // pairwise Welch t-tests
};

void to_json(nlohmann::json& j, const EnvironmentReport& r);

EnvironmentReport environmental_report(const std::map<std::string, std::vector<double>>& by_category,
                                       std::string unit_of_analysis = "asset");

// Plain-text table of a report, one test per line.
std::string to_table(const CompressionReport& r);
std::string to_table(const EnvironmentReport& r);

}  // namespace teleqa::subjective
