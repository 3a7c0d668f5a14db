#pragma once

#include <vector>

#include "teleqa/image.hpp"

namespace teleqa::metrics {

struct SsimParams {
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 255.0;
  int window = 11;  // Gaussian window side, odd
  double sigma = 1.5;

  void validate() const;
};

// Per-scale exponents; the number of weights is the number of scales.
struct MsSsimParams {
  std::vector<double> weights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  SsimParams base{};

  void validate() const;
};

// Window-averaged SSIM terms. `luminance` and `contrast_structure` are the
// means of the respective maps, `ssim` the mean of their pointwise product.
struct SsimTerms {
  double luminance = 1.0;
  double contrast_structure = 1.0;
  double ssim = 1.0;
};

// Sentinel for lossless input is +infinity; tabular output caps it.
double psnr(const Image& ref, const Image& dist);
double psnr(const Plane& ref, const Plane& dist);
inline constexpr double kPsnrCapDb = 100.0;
double psnr_for_report(double db);

SsimTerms ssim_terms(const Image& ref, const Image& dist, const SsimParams& params = {});
double ssim(const Image& ref, const Image& dist, const SsimParams& params = {});
double ssim(const Plane& ref, const Plane& dist, const SsimParams& params = {});

// Smallest side a plane must have for ms_ssim with these parameters.
int ms_ssim_min_side(const MsSsimParams& params);

double ms_ssim(const Image& ref, const Image& dist, const MsSsimParams& params = {});
double ms_ssim(const Plane& ref, const Plane& dist, const MsSsimParams& params = {});

}  // namespace teleqa::metrics
