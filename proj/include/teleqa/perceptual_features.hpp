#pragma once

#include <array>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "teleqa/frame_io.hpp"
#include "teleqa/image.hpp"

namespace teleqa::features {

// Versioned definition of the feature set. A trained model records the
// version it was fitted on and refuses inputs from any other.
struct FeatureConfig {
  std::string version = "teleqa-features/1";
  double vif_noise_variance = 2.0;
  double vif_gain_limit = 1.0;  // enhancement gain clip
  std::array<int, 4> vif_kernel_sides{17, 9, 5, 3};
  int dlm_levels = 4;
  int motion_kernel_side = 5;
  double motion_sigma = 1.0797;

  friend bool operator==(const FeatureConfig&, const FeatureConfig&) = default;
};

void to_json(nlohmann::json& j, const FeatureConfig& c);
void from_json(const nlohmann::json& j, FeatureConfig& c);

inline constexpr std::size_t kFeatureCount = 6;
inline constexpr std::array<const char*, kFeatureCount> kFeatureNames{"vif0", "vif1", "vif2",
                                                                      "vif3", "dlm",  "motion"};

struct FeatureVector {
  std::array<double, 4> vif{};
  double dlm = 0.0;
  double motion = 0.0;

  std::array<double, kFeatureCount> as_array() const {
    return {vif[0], vif[1], vif[2], vif[3], dlm, motion};
  }
  static FeatureVector from_array(const std::array<double, kFeatureCount>& a) {
    return FeatureVector{{a[0], a[1], a[2], a[3]}, a[4], a[5]};
  }
  bool finite() const;

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

struct VifResult {
  std::array<double, 4> scales{};
  std::array<bool, 4> degenerate{};  // reference carried no variance at that scale
};

struct DlmResult {
  double value = 1.0;
  bool degenerate = false;  // reference carried no detail energy
};

inline constexpr int kMinVifSide = 32;
inline constexpr int kMinDlmSide = 16;

VifResult vif_scales(const Image& ref, const Image& dist, const FeatureConfig& config = {});
DlmResult dlm(const Image& ref, const Image& dist, const FeatureConfig& config = {});
double motion(const Image& prev, const Image& curr, const FeatureConfig& config = {});

struct ClipFeatures {
  std::vector<FeatureVector> per_frame;
  FeatureVector pooled;
  std::vector<std::string> warnings;
};

FeatureVector pool_mean(const std::vector<FeatureVector>& frames);

// Motion is measured on the reference clip; frame 0 has motion 0.
// `jobs` bounds frame-level parallelism; output does not depend on it.
ClipFeatures extract_clip_features(const io::VideoClip& ref, const io::VideoClip& dist,
                                   const FeatureConfig& config = {}, int jobs = 1);

// CSV with header frame_idx,vif0,vif1,vif2,vif3,dlm,motion.
std::string to_csv(const ClipFeatures& features);
std::vector<FeatureVector> per_frame_from_csv(const std::string& csv);

nlohmann::json sidecar(const ClipFeatures& features, const FeatureConfig& config,
                       const std::string& reference_id, const std::string& distorted_id);

}  // namespace teleqa::features
