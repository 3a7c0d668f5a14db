#include "teleqa/perceptual_features.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <mutex>
#include <thread>

#include "teleqa/error.hpp"
#include "teleqa/filters.hpp"

namespace teleqa::features {
namespace {

constexpr double kVarianceFloor = 1e-10;
// Wavelet detail of a flat plane is rounding residue, far below one grey level.
constexpr double kDetailEnergyFloor = 1e-6;

void require_same_shape(const Image& a, const Image& b) {
  require(a.same_shape(b), Errc::dimension_mismatch, "reference and distorted planes differ in size");
}

Image decimate(const Image& src) {
  Image out(src.width() / 2, src.height() / 2);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) out(x, y) = src(2 * x, 2 * y);
  return out;
}

// One VIF scale in the pixel domain (Gaussian scale mixture locality).
double vif_ratio(const Image& ref, const Image& dist, std::span<const double> kernel, const FeatureConfig& c,
                 bool& degenerate) {
  using filters::Border;
  const Image mu1 = filters::convolve(ref, kernel, Border::reflect);
  const Image mu2 = filters::convolve(dist, kernel, Border::reflect);
  const Image e11 = filters::convolve(filters::multiply(ref, ref), kernel, Border::reflect);
  const Image e22 = filters::convolve(filters::multiply(dist, dist), kernel, Border::reflect);
  const Image e12 = filters::convolve(filters::multiply(ref, dist), kernel, Border::reflect);

  auto m1 = mu1.pixels();
  auto m2 = mu2.pixels();
  auto s11 = e11.pixels();
  auto s22 = e22.pixels();
  auto s12 = e12.pixels();
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < m1.size(); ++i) {
    double var_ref = std::max(0.0, s11[i] - m1[i] * m1[i]);
    double var_dist = std::max(0.0, s22[i] - m2[i] * m2[i]);
    const double cov = s12[i] - m1[i] * m2[i];

    double gain = cov / (var_ref + kVarianceFloor);
    double noise = var_dist - gain * cov;
    if (var_ref < kVarianceFloor) {
      gain = 0.0;
      noise = var_dist;
      var_ref = 0.0;
    }
    if (var_dist < kVarianceFloor) {
      gain = 0.0;
      noise = 0.0;
    }
    if (gain < 0.0) {
      noise = var_dist;
      gain = 0.0;
    }
    gain = std::min(gain, c.vif_gain_limit);
    noise = std::max(noise, kVarianceFloor);

    num += std::log2(1.0 + gain * gain * var_ref / (noise + c.vif_noise_variance));
    den += std::log2(1.0 + var_ref / c.vif_noise_variance);
  }
  if (den <= 0.0) {
    degenerate = true;
    return 1.0;
  }
  degenerate = false;
  return num / den;
}

// Orthogonal 4-tap Daubechies analysis filters.
struct Wavelet {
  std::array<double, 4> lo;
  std::array<double, 4> hi;
};

const Wavelet& db2() {
  static const Wavelet w = [] {
    const double s3 = std::sqrt(3.0);
    const double n = 4.0 * std::sqrt(2.0);
    Wavelet out{};
    out.lo = {(1 + s3) / n, (3 + s3) / n, (3 - s3) / n, (1 - s3) / n};
    out.hi = {out.lo[3], -out.lo[2], out.lo[1], -out.lo[0]};
    return out;
  }();
  return w;
}

// Pads an odd dimension by repeating the last row/column.
Image make_even(const Image& src) {
  const int w = src.width() + (src.width() % 2);
  const int h = src.height() + (src.height() % 2);
  if (w == src.width() && h == src.height()) return src;
  Image out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out(x, y) = src(std::min(x, src.width() - 1), std::min(y, src.height() - 1));
  return out;
}

struct Subbands {
  Image approx;
  std::array<Image, 3> detail;  // horizontal, vertical, diagonal
};

Subbands dwt2(const Image& input) {
  const Image src = make_even(input);
  const auto& wv = db2();
  const int w = src.width();
  const int h = src.height();
  const int hw = w / 2;
  const int hh = h / 2;

  Image lo_rows(hw, h);
  Image hi_rows(hw, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < hw; ++x) {
      double lo = 0.0;
      double hi = 0.0;
      for (int k = 0; k < 4; ++k) {
        const double v = src((2 * x + k) % w, y);
        lo += wv.lo[static_cast<std::size_t>(k)] * v;
        hi += wv.hi[static_cast<std::size_t>(k)] * v;
      }
      lo_rows(x, y) = lo;
      hi_rows(x, y) = hi;
    }
  }
  auto columns = [&](const Image& rows, const std::array<double, 4>& f) {
    Image out(hw, hh);
    for (int y = 0; y < hh; ++y)
      for (int x = 0; x < hw; ++x) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += f[static_cast<std::size_t>(k)] * rows(x, (2 * y + k) % h);
        out(x, y) = acc;
      }
    return out;
  };
  return Subbands{columns(lo_rows, wv.lo),
                  {columns(lo_rows, wv.hi), columns(hi_rows, wv.lo), columns(hi_rows, wv.hi)}};
}

double cube_norm(std::span<const double> c) {
  double acc = 0.0;
  for (double v : c) acc += std::abs(v) * v * v;
  return std::cbrt(acc);
}

}  // namespace

bool FeatureVector::finite() const {
  for (double v : as_array())
    if (!std::isfinite(v)) return false;
  return true;
}

void to_json(nlohmann::json& j, const FeatureConfig& c) {
  j = nlohmann::json{{"version", c.version},
                     {"vif_noise_variance", c.vif_noise_variance},
                     {"vif_gain_limit", c.vif_gain_limit},
                     {"vif_kernel_sides", c.vif_kernel_sides},
                     {"dlm_levels", c.dlm_levels},
                     {"motion_kernel_side", c.motion_kernel_side},
                     {"motion_sigma", c.motion_sigma}};
}

void from_json(const nlohmann::json& j, FeatureConfig& c) {
  j.at("version").get_to(c.version);
  j.at("vif_noise_variance").get_to(c.vif_noise_variance);
  j.at("vif_gain_limit").get_to(c.vif_gain_limit);
  j.at("vif_kernel_sides").get_to(c.vif_kernel_sides);
  j.at("dlm_levels").get_to(c.dlm_levels);
  j.at("motion_kernel_side").get_to(c.motion_kernel_side);
  j.at("motion_sigma").get_to(c.motion_sigma);
}

VifResult vif_scales(const Image& ref, const Image& dist, const FeatureConfig& config) {
  require_same_shape(ref, dist);
  require(ref.width() >= kMinVifSide && ref.height() >= kMinVifSide, Errc::insufficient_resolution,
          "VIF needs planes of at least 32 pixels per side");
  VifResult result;
  Image r = ref;
  Image d = dist;
  for (std::size_t s = 0; s < 4; ++s) {
    const int side = config.vif_kernel_sides[s];
    const auto kernel = filters::gaussian_kernel(side, side / 5.0);
    if (s > 0) {
      r = decimate(filters::convolve(r, kernel, filters::Border::reflect));
      d = decimate(filters::convolve(d, kernel, filters::Border::reflect));
    }
    bool degenerate = false;
    result.scales[s] = vif_ratio(r, d, kernel, config, degenerate);
    result.degenerate[s] = degenerate;
  }
  return result;
}

DlmResult dlm(const Image& ref, const Image& dist, const FeatureConfig& config) {
  require_same_shape(ref, dist);
  require(ref.width() >= kMinDlmSide && ref.height() >= kMinDlmSide, Errc::insufficient_resolution,
          "DLM needs planes of at least 16 pixels per side");
  double restored_sum = 0.0;
  double reference_sum = 0.0;
  Image r = ref;
  Image d = dist;
  for (int level = 0; level < config.dlm_levels; ++level) {
    Subbands rb = dwt2(r);
    Subbands db = dwt2(d);
    for (std::size_t b = 0; b < 3; ++b) {
      auto rc = rb.detail[b].pixels();
      auto dc = db.detail[b].pixels();
      // Restored detail keeps only the part of the distorted coefficient that
      // agrees in sign with, and does not exceed, the reference coefficient.
      // The remainder is additive impairment and is dropped.
      std::vector<double> restored(rc.size());
      for (std::size_t i = 0; i < rc.size(); ++i) {
        const double k = rc[i] != 0.0 ? std::clamp(dc[i] / rc[i], 0.0, 1.0) : 0.0;
        restored[i] = k * rc[i];
      }
      restored_sum += cube_norm(restored);
      reference_sum += cube_norm(rc);
    }
    r = std::move(rb.approx);
    d = std::move(db.approx);
  }
  if (reference_sum <= kDetailEnergyFloor) return DlmResult{1.0, true};
  const double ratio = restored_sum / reference_sum;
  return DlmResult{ratio * ratio * ratio, false};
}

double motion(const Image& prev, const Image& curr, const FeatureConfig& config) {
  require(prev.same_shape(curr), Errc::dimension_mismatch, "motion: frames differ in size");
  const auto kernel = filters::gaussian_kernel(config.motion_kernel_side, config.motion_sigma);
  const Image a = filters::convolve(prev, kernel, filters::Border::reflect);
  const Image b = filters::convolve(curr, kernel, filters::Border::reflect);
  auto pa = a.pixels();
  auto pb = b.pixels();
  double acc = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) acc += std::abs(pa[i] - pb[i]);
  return acc / static_cast<double>(pa.size());
}

FeatureVector pool_mean(const std::vector<FeatureVector>& frames) {
  require(!frames.empty(), Errc::empty_input, "cannot pool zero frames");
  std::array<double, kFeatureCount> acc{};
  for (const auto& f : frames) {
    const auto a = f.as_array();
    for (std::size_t i = 0; i < kFeatureCount; ++i) acc[i] += a[i];
  }
  for (double& v : acc) v /= static_cast<double>(frames.size());
  return FeatureVector::from_array(acc);
}

ClipFeatures extract_clip_features(const io::VideoClip& ref, const io::VideoClip& dist, const FeatureConfig& config,
                                   int jobs) {
  require(ref.width() == dist.width() && ref.height() == dist.height(), Errc::dimension_mismatch,
          "reference and distorted clips differ in dimensions");
  require(ref.frame_count() == dist.frame_count(), Errc::frame_count_mismatch,
          "reference has " + std::to_string(ref.frame_count()) + " frames, distorted has " +
              std::to_string(dist.frame_count()));

  const std::size_t n = ref.frame_count();
  std::vector<FeatureVector> frames(n);
  std::vector<std::string> frame_warnings(n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        const Image r(io::luma(ref.frame(i)));
        const Image d(io::luma(dist.frame(i)));
        const VifResult v = vif_scales(r, d, config);
        const DlmResult l = dlm(r, d, config);
        FeatureVector fv;
        fv.vif = v.scales;
        fv.dlm = l.value;
        fv.motion = i == 0 ? 0.0 : motion(Image(io::luma(ref.frame(i - 1))), r, config);
        frames[i] = fv;
        std::string warn;
        for (std::size_t s = 0; s < 4; ++s)
          if (v.degenerate[s]) warn += " vif" + std::to_string(s) + "-flat-reference";
        if (l.degenerate) warn += " dlm-flat-reference";
        if (!warn.empty()) frame_warnings[i] = "frame " + std::to_string(i) + ":" + warn;
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };

  const int threads = std::clamp(jobs, 1, static_cast<int>(std::max<std::size_t>(n, 1)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  ClipFeatures out;
  out.per_frame = std::move(frames);
  out.pooled = pool_mean(out.per_frame);
  for (auto& w : frame_warnings)
    if (!w.empty()) out.warnings.push_back(std::move(w));
  return out;
}

std::string to_csv(const ClipFeatures& features) {
  std::string out = "frame_idx,vif0,vif1,vif2,vif3,dlm,motion\n";
  char buf[64];
  for (std::size_t i = 0; i < features.per_frame.size(); ++i) {
    out += std::to_string(i);
    for (double v : features.per_frame[i].as_array()) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

std::vector<FeatureVector> per_frame_from_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)) && line.starts_with("frame_idx,vif0"),
          Errc::corrupted_payload, "feature csv: bad header");
  std::vector<FeatureVector> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::getline(row, cell, ',');
    std::array<double, kFeatureCount> a{};
    for (auto& v : a) {
      require(static_cast<bool>(std::getline(row, cell, ',')), Errc::corrupted_payload, "feature csv: short row");
      v = std::stod(cell);
    }
    out.push_back(FeatureVector::from_array(a));
  }
  return out;
}

nlohmann::json sidecar(const ClipFeatures& features, const FeatureConfig& config, const std::string& reference_id,
                       const std::string& distorted_id) {
  nlohmann::json pooled;
  const auto arr = features.pooled.as_array();
  for (std::size_t i = 0; i < kFeatureCount; ++i) pooled[kFeatureNames[i]] = arr[i];
  return nlohmann::json{{"feature_config", config},
                        {"reference_id", reference_id},
                        {"distorted_id", distorted_id},
                        {"frames", features.per_frame.size()},
                        {"pooled", pooled},
                        {"warnings", features.warnings}};
}

}  // namespace teleqa::features
