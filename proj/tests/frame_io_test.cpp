#include <gtest/gtest.h>

#include <random>
#include <string>

#include "teleqa/error.hpp"
#include "teleqa/frame_io.hpp"

using namespace teleqa;
using namespace teleqa::io;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return Errc::io;
}

}  // namespace

TEST(ReadY4m, SingleTwoByTwoFrame) {
  auto data = bytes_of("YUV4MPEG2 W2 H2 F10:1 C420\nFRAME\n");
  for (std::uint8_t b : {10, 20, 30, 40, 50, 60}) data.push_back(b);
  const VideoClip clip = read_y4m(data);
  EXPECT_EQ(clip.width(), 2);
  EXPECT_EQ(clip.height(), 2);
  EXPECT_EQ(clip.frame_count(), 1u);
  EXPECT_DOUBLE_EQ(clip.frame_rate().hz(), 10.0);
  EXPECT_EQ(clip.frame(0).y.data, (std::vector<std::uint8_t>{10, 20, 30, 40}));
  EXPECT_EQ(clip.frame(0).u.data, (std::vector<std::uint8_t>{50}));
  EXPECT_EQ(clip.frame(0).v.data, (std::vector<std::uint8_t>{60}));
}

TEST(ReadY4m, TruncatedPayload) {
  auto data = bytes_of("YUV4MPEG2 W2 H2 F10:1 C420\nFRAME\n");
  data.insert(data.end(), 5, 0);
  EXPECT_EQ(code_of([&] { read_y4m(data); }), Errc::truncated_frame);
}

TEST(ReadY4m, RejectsNon420) {
  auto data = bytes_of("YUV4MPEG2 W2 H2 F10:1 C444\nFRAME\n");
  data.insert(data.end(), 12, 0);
  EXPECT_EQ(code_of([&] { read_y4m(data); }), Errc::unsupported_colorspace);
  EXPECT_EQ(code_of([&] { read_y4m(bytes_of("YUV4MPEG2 W2 H2 F10:1 C420p10\n")); }), Errc::unsupported_colorspace);
}

TEST(ReadY4m, AcceptsChromaSitingVariantsAndDefault) {
  for (std::string tag : {" C420jpeg", " C420mpeg2", ""}) {
    auto data = bytes_of("YUV4MPEG2 W2 H2 F30000:1001" + tag + " Ip A1:1\nFRAME\n");
    data.insert(data.end(), 6, 7);
    EXPECT_EQ(read_y4m(data).frame_count(), 1u) << tag;
  }
}

TEST(ReadY4m, MalformedHeaders) {
  EXPECT_EQ(code_of([&] { read_y4m(bytes_of("YUV4MPEG W2 H2 F1:1\n")); }), Errc::malformed_header);
  EXPECT_EQ(code_of([&] { read_y4m(bytes_of("YUV4MPEG2 H2 F1:1\nFRAME\n")); }), Errc::malformed_header);
  EXPECT_EQ(code_of([&] { read_y4m(bytes_of("YUV4MPEG2 W2 H2\nFRAME\n")); }), Errc::malformed_header);
  EXPECT_EQ(code_of([&] { read_y4m(bytes_of("YUV4MPEG2 W2 H2 F1:1")); }), Errc::malformed_header);
  EXPECT_EQ(code_of([&] { read_y4m(bytes_of("YUV4MPEG2 Wx H2 F1:1\n")); }), Errc::malformed_header);
  EXPECT_EQ(code_of([&] { read_y4m(bytes_of("YUV4MPEG2 W2 H2 F1:1 It\n")); }), Errc::unsupported_colorspace);
  EXPECT_EQ(code_of([&] { read_y4m(bytes_of("YUV4MPEG2 W3 H2 F1:1\n")); }), Errc::odd_dimensions);
  EXPECT_EQ(code_of([&] { read_y4m(bytes_of("YUV4MPEG2 W2 H2 F1:1\n")); }), Errc::empty_clip);
}

TEST(ReadRawYuv, FrameCountFromLength) {
  std::vector<std::uint8_t> data(12, 1);
  EXPECT_EQ(read_raw_yuv(data, 2, 2, {25, 1}).frame_count(), 2u);
}

TEST(ReadRawYuv, Errors) {
  std::vector<std::uint8_t> seven(7, 0);
  EXPECT_EQ(code_of([&] { read_raw_yuv(seven, 2, 2, {25, 1}); }), Errc::frame_size);
  EXPECT_EQ(code_of([&] { read_raw_yuv({}, 2, 2, {25, 1}); }), Errc::empty_clip);
  std::vector<std::uint8_t> odd(9, 0);
  EXPECT_EQ(code_of([&] { read_raw_yuv(odd, 3, 2, {25, 1}); }), Errc::odd_dimensions);
}

TEST(Luma, ReturnsPlaneUnmodified) {
  std::vector<std::uint8_t> data{0, 64, 128, 255, 9, 9};
  const VideoClip clip = read_raw_yuv(data, 2, 2, {1, 1});
  const Plane& y = luma(clip.frame(0));
  EXPECT_EQ(y.data, (std::vector<std::uint8_t>{0, 64, 128, 255}));
  EXPECT_EQ(y.at(1, 0), 64);
  EXPECT_EQ(y.at(0, 1), 128);
  EXPECT_EQ(&luma(clip.frame(0)), &y);

  const Frame flat = make_gray_frame(Plane(4, 4, 128));
  for (auto v : luma(flat).data) EXPECT_EQ(v, 128);
}

TEST(VideoClip, RejectsMismatchedFrames) {
  std::vector<Frame> frames{make_gray_frame(Plane(4, 4)), make_gray_frame(Plane(4, 2))};
  EXPECT_EQ(code_of([&] { VideoClip(4, 4, {1, 1}, frames); }), Errc::dimension_mismatch);
  EXPECT_EQ(code_of([&] { VideoClip(4, 4, {1, 1}, {}); }), Errc::empty_clip);
}

// Property: writing and re-reading gives byte-identical planes, for both forms.
TEST(RoundTrip, RandomClips) {
  std::mt19937 rng(1234);
  for (int trial = 0; trial < 50; ++trial) {
    const int w = 2 * std::uniform_int_distribution<int>(1, 12)(rng);
    const int h = 2 * std::uniform_int_distribution<int>(1, 12)(rng);
    const int n = std::uniform_int_distribution<int>(1, 4)(rng);
    std::vector<std::uint8_t> raw(VideoClip::frame_bytes(w, h) * n);
    for (auto& b : raw) b = static_cast<std::uint8_t>(rng());
    const VideoClip clip = read_raw_yuv(raw, w, h, {30, 1});
    EXPECT_EQ(write_raw_yuv(clip), raw);
    const VideoClip again = read_y4m(write_y4m(clip));
    EXPECT_EQ(again.frames(), clip.frames());
    EXPECT_EQ(again.frame_rate(), clip.frame_rate());
  }
}
