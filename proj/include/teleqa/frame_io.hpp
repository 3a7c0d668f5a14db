#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "teleqa/image.hpp"

namespace teleqa::io {

struct FrameRate {
  int num = 0;
  int den = 1;

  double hz() const { return static_cast<double>(num) / den; }
  friend bool operator==(const FrameRate&, const FrameRate&) = default;
};

// One 8-bit 4:2:0 picture. Chroma planes are half size in each direction.
struct Frame {
  Plane y;
  Plane u;
  Plane v;

  friend bool operator==(const Frame&, const Frame&) = default;
};

class VideoClip {
 public:
  static constexpr int bit_depth = 8;

  // Throws Error on odd dimensions, empty frame list, or plane size mismatch.
  VideoClip(int width, int height, FrameRate rate, std::vector<Frame> frames);

  int width() const { return width_; }
  int height() const { return height_; }
  FrameRate frame_rate() const { return rate_; }
  std::size_t frame_count() const { return frames_.size(); }
  const Frame& frame(std::size_t i) const { return frames_.at(i); }
  const std::vector<Frame>& frames() const { return frames_; }

  static std::size_t frame_bytes(int width, int height) {
    return static_cast<std::size_t>(width) * height * 3 / 2;
  }

 private:
  int width_;
  int height_;
  FrameRate rate_;
  std::vector<Frame> frames_;
};

// Convenience: builds a 4:2:0 frame from a luma plane with neutral chroma.
Frame make_gray_frame(Plane luma, std::uint8_t chroma = 128);

VideoClip read_y4m(std::span<const std::uint8_t> bytes);
VideoClip read_raw_yuv(std::span<const std::uint8_t> bytes, int width, int height, FrameRate rate);

// Dispatches on extension: .y4m is self-describing, anything else is raw YUV420p
// and needs the declared geometry.
VideoClip read_clip_file(const std::filesystem::path& path, int width = 0, int height = 0,
                         FrameRate rate = {});

const Plane& luma(const Frame& frame);

std::vector<std::uint8_t> write_raw_yuv(const VideoClip& clip);
std::vector<std::uint8_t> write_y4m(const VideoClip& clip);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace teleqa::io
