#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace teleqa {

// 8-bit sample plane, row-major, no padding.
struct Plane {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  Plane() = default;
  Plane(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return data.size(); }

  friend bool operator==(const Plane&, const Plane&) = default;
};

// Floating-point working image used by the metric and feature kernels.
class Image {
 public:
  Image() = default;
  Image(int width, int height, double fill = 0.0)
      : width_(width), height_(height), px_(static_cast<std::size_t>(width) * height, fill) {}
  explicit Image(const Plane& plane)
      : width_(plane.width), height_(plane.height), px_(plane.data.begin(), plane.data.end()) {}

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return px_.size(); }

  double operator()(int x, int y) const { return px_[static_cast<std::size_t>(y) * width_ + x]; }
  double& operator()(int x, int y) { return px_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<const double> pixels() const { return px_; }
  std::span<double> pixels() { return px_; }

  bool same_shape(const Image& other) const {
    return width_ == other.width_ && height_ == other.height_;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> px_;
};

// Rounds and saturates to [0,255].
Plane to_plane(const Image& image);

}  // namespace teleqa
