#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "teleqa/alignment.hpp"
#include "teleqa/dataset.hpp"
#include "teleqa/perceptual_features.hpp"
#include "teleqa/svr_fusion.hpp"

namespace teleqa::pipeline {

inline constexpr std::string_view kToolVersion = "0.1.0";

// BLAKE2b-256, lowercase hex.
std::string hash_bytes(std::string_view bytes);
std::string hash_file(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it over `path`.
void write_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_text_file(const std::filesystem::path& path);

// Provenance record written next to every command output.
struct RunManifest {
  std::string command;
  std::optional<std::uint64_t> seed;
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::filesystem::path> inputs;
  std::vector<std::filesystem::path> outputs;
};

nlohmann::json run_manifest_json(const RunManifest& m);
void write_run_manifest(const std::filesystem::path& path, const RunManifest& m);

// ---------------------------------------------------------------- features

struct FeatureFailure {
  std::string asset_id;
  std::string error;  // error code name
  std::string message;
};

struct FeatureRunReport {
  std::vector<std::string> computed;
  std::vector<std::string> skipped;  // sidecar content hash unchanged
  std::vector<FeatureFailure> failures;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& path);

// Reference clip of a scene: a registered reference asset when present, else the scene's reference path.
std::filesystem::path reference_clip_path(const dataset::DatasetManifest& m, const std::string& content_id,
                                          const std::filesystem::path& base);
std::filesystem::path distorted_clip_path(const dataset::AssetEntry& a, const std::filesystem::path& base);

// One <asset_id>.csv (per-frame) and <asset_id>.json (sidecar) per distorted asset.
// Failures are collected per asset and do not stop the others.
FeatureRunReport extract_features(const dataset::DatasetManifest& m, const std::filesystem::path& base,
                                  const std::filesystem::path& out_dir, const features::FeatureConfig& config,
                                  int jobs = 1);

// Pooled vectors from every sidecar in `dir`.
std::map<std::string, features::FeatureVector> load_pooled_features(const std::filesystem::path& dir);

// ---------------------------------------------------------------- labels and predictions

// {"labels": {asset_id: score}, ...}; extra keys are ignored.
std::map<std::string, double> load_labels(const std::filesystem::path& path);
nlohmann::json labels_json(const dataset::JoinResult& joined);

std::string predictions_csv(const std::map<std::string, double>& predictions);
std::map<std::string, double> parse_predictions_csv(std::string_view text);

std::map<std::string, double> predict_all(const svr::SvrModel& model,
                                          const std::map<std::string, features::FeatureVector>& pooled);

std::map<std::string, alignment::AssetMeta> asset_meta(const dataset::DatasetManifest& m);

// ---------------------------------------------------------------- training

struct TrainOptions {
  svr::Grid grid;
  svr::SvrHyperparams base;
  int folds = 5;
  int jobs = 1;
  features::FeatureConfig feature_config;
};

struct TrainOutcome {
  svr::SvrModel model;
  svr::GridSearchResult search;
  std::size_t train_rows = 0;
  alignment::AlignmentReport validation;           // retrained model on validation scenes
  alignment::AlignmentReport baseline_validation;  // frozen default model on the same assets
  alignment::ModelComparison comparison;           // baseline -> retrained
};

// Grid search with scene-disjoint folds on the training scenes, refit on all of
// them, then score validation scenes for both models.
TrainOutcome train_and_validate(const dataset::DatasetManifest& m, const dataset::SplitResult& split,
                                const std::map<std::string, features::FeatureVector>& pooled,
                                const std::map<std::string, double>& labels, const TrainOptions& options);

nlohmann::json validation_report(const TrainOutcome& outcome);

}  // namespace teleqa::pipeline
