#include "teleqa/filters.hpp"

#include <cmath>
#include <numeric>

#include "teleqa/error.hpp"

namespace teleqa::filters {
namespace {

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

}  // namespace

std::vector<double> gaussian_kernel(int side, double sigma) {
  require(side > 0 && side % 2 == 1, Errc::invalid_argument, "kernel side must be odd and positive");
  require(sigma > 0.0, Errc::invalid_argument, "kernel sigma must be positive");
  std::vector<double> k(static_cast<std::size_t>(side));
  const int half = side / 2;
  for (int i = 0; i < side; ++i) {
    const double d = i - half;
    k[static_cast<std::size_t>(i)] = std::exp(-(d * d) / (2.0 * sigma * sigma));
  }
  const double sum = std::accumulate(k.begin(), k.end(), 0.0);
  for (double& v : k) v /= sum;
  return k;
}

Image convolve(const Image& src, std::span<const double> kernel, Border border) {
  const int side = static_cast<int>(kernel.size());
  const int half = side / 2;
  const int w = src.width();
  const int h = src.height();

  if (border == Border::valid) {
    require(w >= side && h >= side, Errc::plane_too_small, "plane smaller than filter window");
    const int ow = w - side + 1;
    const int oh = h - side + 1;
    Image rows(ow, h);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (int k = 0; k < side; ++k) acc += kernel[static_cast<std::size_t>(k)] * src(x + k, y);
        rows(x, y) = acc;
      }
    }
    Image out(ow, oh);
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (int k = 0; k < side; ++k) acc += kernel[static_cast<std::size_t>(k)] * rows(x, y + k);
        out(x, y) = acc;
      }
    }
    return out;
  }

  Image rows(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = 0; k < side; ++k) {
        acc += kernel[static_cast<std::size_t>(k)] * src(reflect_index(x + k - half, w), y);
      }
      rows(x, y) = acc;
    }
  }
  Image out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = 0; k < side; ++k) {
        acc += kernel[static_cast<std::size_t>(k)] * rows(x, reflect_index(y + k - half, h));
      }
      out(x, y) = acc;
    }
  }
  return out;
}

Image downsample_box2(const Image& src) {
  const int ow = src.width() / 2;
  const int oh = src.height() / 2;
  Image out(ow, oh);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      out(x, y) = 0.25 * (src(2 * x, 2 * y) + src(2 * x + 1, 2 * y) + src(2 * x, 2 * y + 1) +
                          src(2 * x + 1, 2 * y + 1));
    }
  }
  return out;
}

Image multiply(const Image& a, const Image& b) {
  Image out(a.width(), a.height());
  auto pa = a.pixels();
  auto pb = b.pixels();
  auto po = out.pixels();
  for (std::size_t i = 0; i < po.size(); ++i) po[i] = pa[i] * pb[i];
  return out;
}

Image gaussian_blur(const Image& src, double sigma) {
  const int side = 2 * static_cast<int>(std::ceil(3.0 * sigma)) + 1;
  const auto kernel = gaussian_kernel(side, sigma);
  return convolve(src, kernel, Border::reflect);
}

double mean(const Image& image) {
  auto px = image.pixels();
  if (px.empty()) return 0.0;
  return std::accumulate(px.begin(), px.end(), 0.0) / static_cast<double>(px.size());
}

}  // namespace teleqa::filters
