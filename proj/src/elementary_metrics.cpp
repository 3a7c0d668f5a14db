#include "teleqa/elementary_metrics.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "teleqa/error.hpp"
#include "teleqa/filters.hpp"

namespace teleqa::metrics {
namespace {

void require_same_shape(const Image& a, const Image& b) {
  require(a.same_shape(b), Errc::dimension_mismatch, "reference and distorted planes differ in size");
}

struct TermMaps {
  Image luminance;
  Image contrast_structure;
};

TermMaps term_maps(const Image& x, const Image& y, const SsimParams& p) {
  const auto kernel = filters::gaussian_kernel(p.window, p.sigma);
  using filters::Border;
  const Image mu_x = filters::convolve(x, kernel, Border::valid);
  const Image mu_y = filters::convolve(y, kernel, Border::valid);
  const Image e_xx = filters::convolve(filters::multiply(x, x), kernel, Border::valid);
  const Image e_yy = filters::convolve(filters::multiply(y, y), kernel, Border::valid);
  const Image e_xy = filters::convolve(filters::multiply(x, y), kernel, Border::valid);

  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);

  TermMaps maps{Image(mu_x.width(), mu_x.height()), Image(mu_x.width(), mu_x.height())};
  auto mx = mu_x.pixels();
  auto my = mu_y.pixels();
  auto xx = e_xx.pixels();
  auto yy = e_yy.pixels();
  auto xy = e_xy.pixels();
  auto lum = maps.luminance.pixels();
  auto cs = maps.contrast_structure.pixels();
  for (std::size_t i = 0; i < lum.size(); ++i) {
    const double mxy = mx[i] * my[i];
    const double var_x = xx[i] - mx[i] * mx[i];
    const double var_y = yy[i] - my[i] * my[i];
    const double cov = xy[i] - mxy;
    lum[i] = (2.0 * mxy + c1) / (mx[i] * mx[i] + my[i] * my[i] + c1);
    // With C3 = C2/2 the contrast and structure terms collapse into one ratio.
    cs[i] = (2.0 * cov + c2) / (var_x + var_y + c2);
  }
  return maps;
}

}  // namespace

void SsimParams::validate() const {
  require(k1 > 0.0 && k2 > 0.0, Errc::invalid_argument, "SSIM constants must be positive");
  require(dynamic_range > 0.0, Errc::invalid_argument, "dynamic range must be positive");
  require(window > 0 && window % 2 == 1, Errc::invalid_argument, "SSIM window side must be odd");
  require(sigma > 0.0, Errc::invalid_argument, "SSIM window sigma must be positive");
}

void MsSsimParams::validate() const {
  base.validate();
  require(!weights.empty(), Errc::invalid_argument, "MS-SSIM needs at least one scale");
  double sum = 0.0;
  for (double w : weights) {
    require(w >= 0.0 && std::isfinite(w), Errc::invalid_argument, "MS-SSIM weights must be non-negative");
    sum += w;
  }
  require(std::abs(sum - 1.0) <= 1e-4, Errc::invalid_argument, "MS-SSIM weights must sum to 1");
}

double psnr(const Image& ref, const Image& dist) {
  require_same_shape(ref, dist);
  require(ref.size() > 0, Errc::empty_input, "empty plane");
  auto a = ref.pixels();
  auto b = dist.pixels();
  double sse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sse += d * d;
  }
  const double mse = sse / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double psnr(const Plane& ref, const Plane& dist) { return psnr(Image(ref), Image(dist)); }

double psnr_for_report(double db) { return std::min(db, kPsnrCapDb); }

SsimTerms ssim_terms(const Image& ref, const Image& dist, const SsimParams& params) {
  params.validate();
  require_same_shape(ref, dist);
  require(ref.width() >= params.window && ref.height() >= params.window, Errc::plane_too_small,
          "plane smaller than SSIM window");
  const TermMaps maps = term_maps(ref, dist, params);
  SsimTerms t;
  t.luminance = filters::mean(maps.luminance);
  t.contrast_structure = filters::mean(maps.contrast_structure);
  t.ssim = filters::mean(filters::multiply(maps.luminance, maps.contrast_structure));
  return t;
}

double ssim(const Image& ref, const Image& dist, const SsimParams& params) {
  return ssim_terms(ref, dist, params).ssim;
}

double ssim(const Plane& ref, const Plane& dist, const SsimParams& params) {
  return ssim(Image(ref), Image(dist), params);
}

int ms_ssim_min_side(const MsSsimParams& params) {
  return params.base.window << (static_cast<int>(params.weights.size()) - 1);
}

double ms_ssim(const Image& ref, const Image& dist, const MsSsimParams& params) {
  params.validate();
  require_same_shape(ref, dist);
  const int min_side = ms_ssim_min_side(params);
  require(ref.width() >= min_side && ref.height() >= min_side, Errc::insufficient_resolution,
          "MS-SSIM needs planes of at least " + std::to_string(min_side) + " pixels per side");

  Image x = ref;
  Image y = dist;
  double score = 1.0;
  const std::size_t scales = params.weights.size();
  for (std::size_t s = 0; s < scales; ++s) {
    const SsimTerms t = ssim_terms(x, y, params.base);
    score *= std::pow(std::max(t.contrast_structure, 0.0), params.weights[s]);
    if (s + 1 == scales) {
      score *= std::pow(std::max(t.luminance, 0.0), params.weights[s]);
    } else {
      x = filters::downsample_box2(x);
      y = filters::downsample_box2(y);
    }
  }
  return score;
}

double ms_ssim(const Plane& ref, const Plane& dist, const MsSsimParams& params) {
  return ms_ssim(Image(ref), Image(dist), params);
}

}  // namespace teleqa::metrics
