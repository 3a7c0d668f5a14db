#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "teleqa/perceptual_features.hpp"
#include "teleqa/random.hpp"
#include "teleqa/subjective.hpp"
#include "teleqa/svr_fusion.hpp"

namespace teleqa::dataset {

inline constexpr int kManifestSchemaVersion = 1;
inline const std::vector<std::string> kCategories{"day_good", "day_bad", "night_good"};
inline const std::vector<int> kCrfLevels{30, 36, 42, 48};
inline constexpr int kReferenceCrf = 0;

struct SceneEntry {
  std::string content_id;
  std::string category;
  std::string reference_path;
  double duration = 8.0;  // seconds
  // Declared source metadata, checked by curation_warnings.
  std::optional<int> width;
  std::optional<int> height;
  std::optional<double> frame_rate;
};

struct AssetEntry {
  std::string asset_id;
  std::string content_id;
  int crf = 0;  // 0 marks the reference
  std::string path;
  std::optional<std::string> decoded_path;  // Y4M used for feature extraction
};

// Raw .yuv inputs need explicit geometry.
struct Geometry {
  int width = 0;
  int height = 0;
  int fps_num = 30;
  int fps_den = 1;
};

struct DatasetManifest {
  int schema_version = kManifestSchemaVersion;
  std::string encoder_version;
  std::optional<Geometry> geometry;
  std::vector<SceneEntry> scenes;
  std::vector<AssetEntry> assets;
  std::map<std::string, double> labels;

  void validate() const;
  const SceneEntry& scene(const std::string& content_id) const;
  const AssetEntry* find_asset(const std::string& content_id, int crf) const;
  const AssetEntry& asset(const std::string& asset_id) const;
  std::vector<const AssetEntry*> distorted_assets() const;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

DatasetManifest parse_manifest(std::string_view text);
DatasetManifest load_manifest(const std::filesystem::path& path);
std::string dump_manifest(const DatasetManifest& m);

// Declared-metadata checks for source footage (>= 1920x1200, >= 10 Hz, ~8 s).
std::vector<std::string> curation_warnings(const DatasetManifest& m);

std::string asset_id_for(const std::string& content_id, int crf);

struct EncoderConfig {
  // Program and arguments with {input}, {output} and {crf} placeholders; run without a shell.
  std::string command_template;
  std::optional<std::string> decode_template;  // {input}, {output}: produce a Y4M for features
  std::string version_command;                 // stdout's first line is recorded, if set
  std::string output_extension = ".mp4";
  std::filesystem::path output_dir;
  int jobs = 1;
};

// Mirrors the study setup: H.264, slow preset, CRF rate control.
inline constexpr const char* kDefaultEncoderTemplate =
    "ffmpeg -nostdin -y -loglevel error -i {input} -c:v libx264 -preset slow -crf {crf} -an {output}";
inline constexpr const char* kDefaultDecodeTemplate =
    "ffmpeg -nostdin -y -loglevel error -i {input} -pix_fmt yuv420p -f yuv4mpegpipe {output}";

// Throws Errc::template_error when a placeholder is missing.
void validate_encoder_config(const EncoderConfig& config);
std::string probe_encoder_version(const EncoderConfig& config);

// Encodes one scene at each CRF. Throws on the first failure; an empty CRF list does nothing.
std::vector<AssetEntry> encode_variants(const SceneEntry& scene, const std::vector<int>& crfs,
                                        const EncoderConfig& config);

struct EncodeFailure {
  std::string content_id;
  int crf = 0;
  std::string message;
};

struct PrepareReport {
  std::size_t encoded = 0;
  std::size_t skipped = 0;
  std::vector<EncodeFailure> failures;
};

// Encodes every (scene, crf) pair missing from the manifest, in parallel, adding
// the new assets to `m`. Pairs already present with an existing output are skipped.
PrepareReport encode_missing(DatasetManifest& m, const std::vector<int>& crfs, const EncoderConfig& config,
                             const std::filesystem::path& base_dir = {});

struct SplitResult {
  std::set<std::string> train;
  std::set<std::string> val;
  std::uint64_t seed = 0;
  double fraction = 0.0;
};

void to_json(nlohmann::json& j, const SplitResult& s);
void from_json(const nlohmann::json& j, SplitResult& s);

// Training scene count for a category of n scenes (at least one scene stays on each side).
std::size_t train_count(std::size_t n, double fraction);

// Stratified by category; scenes within a category are shuffled with a seeded generator.
SplitResult split_by_scene(const DatasetManifest& m, double train_fraction, std::uint64_t seed);

struct LabeledAsset {
  std::string asset_id;
  std::string content_id;
  int crf = 0;
  subjective::MosLabel label;
  double score = 0.0;  // training label on [0,100]
};

struct FlaggedAsset {
  std::string asset_id;
  int n_raters = 0;
  std::string reason;
};

struct JoinOptions {
  int min_raters = 15;
  std::vector<subjective::Dimension> dimensions = subjective::kLabelDimensions;
  std::set<std::string> excluded_participants;
  bool dmos = false;  // score = 100 - (reference MOS - distorted MOS), clipped to [0,100]
};

struct JoinResult {
  std::vector<LabeledAsset> rows;  // sorted by asset id
  std::vector<FlaggedAsset> flagged;
};

JoinResult join_labels(const DatasetManifest& m, const subjective::RatingExport& ratings, const JoinOptions& options = {});

// Assembles regression rows grouped by scene; every labeled asset needs features.
svr::TrainingSet build_training_set(const JoinResult& joined,
                                    const std::map<std::string, features::FeatureVector>& pooled_features);

using teleqa::seeded_shuffle;

}  // namespace teleqa::dataset
