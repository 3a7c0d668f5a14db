#pragma once

#include <span>
#include <vector>

#include "teleqa/image.hpp"

namespace teleqa::filters {

// Sampled Gaussian of odd length, normalised to unit sum.
std::vector<double> gaussian_kernel(int side, double sigma);

enum class Border {
  valid,    // output shrinks by side-1 in each direction
  reflect,  // mirror without repeating the edge sample
};

// Separable 2-D convolution with the same 1-D kernel on rows and columns.
Image convolve(const Image& src, std::span<const double> kernel, Border border);

// 2x2 box mean followed by decimation; odd trailing rows/columns are dropped.
Image downsample_box2(const Image& src);

Image multiply(const Image& a, const Image& b);

// Gaussian blur with reflect borders, kernel side = 2*ceil(3*sigma)+1.
Image gaussian_blur(const Image& src, double sigma);

double mean(const Image& image);

}  // namespace teleqa::filters
