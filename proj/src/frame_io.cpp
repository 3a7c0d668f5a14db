#include "teleqa/frame_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string_view>

#include "teleqa/error.hpp"

namespace teleqa {

Plane to_plane(const Image& image) {
  Plane out(image.width(), image.height());
  auto src = image.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) {
    out.data[i] = static_cast<std::uint8_t>(std::clamp(std::lround(src[i]), 0L, 255L));
  }
  return out;
}

}  // namespace teleqa

namespace teleqa::io {
namespace {

constexpr int kMaxDimension = 16384;

void check_dimensions(int width, int height) {
  require(width > 0 && height > 0, Errc::invalid_argument, "clip dimensions must be positive");
  require(width <= kMaxDimension && height <= kMaxDimension, Errc::invalid_argument,
          "clip dimensions exceed supported maximum");
  require(width % 2 == 0 && height % 2 == 0, Errc::odd_dimensions,
          "4:2:0 requires even width and height");
}

Frame frame_from_bytes(std::span<const std::uint8_t> payload, int width, int height) {
  const std::size_t luma_size = static_cast<std::size_t>(width) * height;
  const std::size_t chroma_size = luma_size / 4;
  Frame f{Plane(width, height), Plane(width / 2, height / 2), Plane(width / 2, height / 2)};
  auto it = payload.begin();
  std::copy_n(it, luma_size, f.y.data.begin());
  it += static_cast<std::ptrdiff_t>(luma_size);
  std::copy_n(it, chroma_size, f.u.data.begin());
  it += static_cast<std::ptrdiff_t>(chroma_size);
  std::copy_n(it, chroma_size, f.v.data.begin());
  return f;
}

int parse_int(std::string_view token, std::string_view what) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    fail(Errc::malformed_header, "y4m: bad " + std::string(what) + " '" + std::string(token) + "'");
  }
  return value;
}

std::vector<std::string_view> split_tokens(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && line[pos] == ' ') ++pos;
    std::size_t end = line.find(' ', pos);
    if (end == std::string_view::npos) end = line.size();
    if (end > pos) out.push_back(line.substr(pos, end - pos));
    pos = end;
  }
  return out;
}

}  // namespace

VideoClip::VideoClip(int width, int height, FrameRate rate, std::vector<Frame> frames)
    : width_(width), height_(height), rate_(rate), frames_(std::move(frames)) {
  check_dimensions(width, height);
  require(!frames_.empty(), Errc::empty_clip, "clip has no frames");
  require(rate.num > 0 && rate.den > 0, Errc::invalid_argument, "frame rate must be positive");
  for (const Frame& f : frames_) {
    bool ok = f.y.width == width && f.y.height == height && f.y.size() == static_cast<std::size_t>(width) * height &&
              f.u.width == width / 2 && f.u.height == height / 2 && f.u.size() == f.v.size() &&
              f.v.width == width / 2 && f.v.height == height / 2 &&
              f.u.size() == static_cast<std::size_t>(width / 2) * (height / 2);
    require(ok, Errc::dimension_mismatch, "frame plane sizes do not match clip dimensions");
  }
}

Frame make_gray_frame(Plane luma_plane, std::uint8_t chroma) {
  const int w = luma_plane.width;
  const int h = luma_plane.height;
  return Frame{std::move(luma_plane), Plane(w / 2, h / 2, chroma), Plane(w / 2, h / 2, chroma)};
}

VideoClip read_y4m(std::span<const std::uint8_t> bytes) {
  const std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  constexpr std::string_view kMagic = "YUV4MPEG2";
  require(text.starts_with(kMagic), Errc::malformed_header, "y4m: missing YUV4MPEG2 signature");
  const std::size_t eol = text.find('\n');
  require(eol != std::string_view::npos, Errc::malformed_header, "y4m: unterminated header");

  int width = -1;
  int height = -1;
  FrameRate rate{};
  bool have_rate = false;
  for (std::string_view tok : split_tokens(text.substr(kMagic.size(), eol - kMagic.size()))) {
    const char tag = tok.front();
    const std::string_view val = tok.substr(1);
    switch (tag) {
      case 'W': width = parse_int(val, "width"); break;
      case 'H': height = parse_int(val, "height"); break;
      case 'F': {
        const auto colon = val.find(':');
        require(colon != std::string_view::npos, Errc::malformed_header, "y4m: frame rate needs n:d");
        rate.num = parse_int(val.substr(0, colon), "frame rate");
        rate.den = parse_int(val.substr(colon + 1), "frame rate");
        require(rate.num > 0 && rate.den > 0, Errc::malformed_header, "y4m: non-positive frame rate");
        have_rate = true;
        break;
      }
      case 'C':
        if (val != "420" && val != "420jpeg" && val != "420mpeg2") {
          fail(Errc::unsupported_colorspace, "y4m: unsupported colorspace C" + std::string(val));
        }
        break;
      case 'I':
        if (val != "p" && val != "?") {
          fail(Errc::unsupported_colorspace, "y4m: interlaced content is not supported");
        }
        break;
      case 'A':
      case 'X':
        break;
      default:
        fail(Errc::malformed_header, "y4m: unknown header token '" + std::string(tok) + "'");
    }
  }
  require(width > 0 && height > 0, Errc::malformed_header, "y4m: header lacks W/H");
  require(have_rate, Errc::malformed_header, "y4m: header lacks frame rate");
  check_dimensions(width, height);

  const std::size_t payload = VideoClip::frame_bytes(width, height);
  std::vector<Frame> frames;
  std::size_t pos = eol + 1;
  while (pos < text.size()) {
    require(text.substr(pos).starts_with("FRAME"), Errc::malformed_header, "y4m: expected FRAME marker");
    const std::size_t line_end = text.find('\n', pos);
    require(line_end != std::string_view::npos, Errc::truncated_frame, "y4m: unterminated FRAME marker");
    pos = line_end + 1;
    require(bytes.size() - pos >= payload, Errc::truncated_frame, "y4m: truncated frame payload");
    frames.push_back(frame_from_bytes(bytes.subspan(pos, payload), width, height));
    pos += payload;
  }
  require(!frames.empty(), Errc::empty_clip, "y4m: no frames");
  return VideoClip(width, height, rate, std::move(frames));
}

VideoClip read_raw_yuv(std::span<const std::uint8_t> bytes, int width, int height, FrameRate rate) {
  check_dimensions(width, height);
  require(!bytes.empty(), Errc::empty_clip, "raw yuv: empty stream");
  const std::size_t payload = VideoClip::frame_bytes(width, height);
  require(bytes.size() % payload == 0, Errc::frame_size,
          "raw yuv: stream length " + std::to_string(bytes.size()) + " is not a multiple of frame size " +
              std::to_string(payload));
  std::vector<Frame> frames;
  frames.reserve(bytes.size() / payload);
  for (std::size_t off = 0; off < bytes.size(); off += payload) {
    frames.push_back(frame_from_bytes(bytes.subspan(off, payload), width, height));
  }
  return VideoClip(width, height, rate, std::move(frames));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), Errc::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

VideoClip read_clip_file(const std::filesystem::path& path, int width, int height, FrameRate rate) {
  const auto bytes = read_file_bytes(path);
  if (path.extension() == ".y4m") return read_y4m(bytes);
  require(width > 0 && height > 0 && rate.num > 0, Errc::invalid_argument,
          "raw yuv input " + path.string() + " needs declared width, height and frame rate");
  return read_raw_yuv(bytes, width, height, rate);
}

const Plane& luma(const Frame& frame) { return frame.y; }

std::vector<std::uint8_t> write_raw_yuv(const VideoClip& clip) {
  std::vector<std::uint8_t> out;
  out.reserve(clip.frame_count() * VideoClip::frame_bytes(clip.width(), clip.height()));
  for (const Frame& f : clip.frames()) {
    out.insert(out.end(), f.y.data.begin(), f.y.data.end());
    out.insert(out.end(), f.u.data.begin(), f.u.data.end());
    out.insert(out.end(), f.v.data.begin(), f.v.data.end());
  }
  return out;
}

std::vector<std::uint8_t> write_y4m(const VideoClip& clip) {
  const std::string header = "YUV4MPEG2 W" + std::to_string(clip.width()) + " H" + std::to_string(clip.height()) +
                             " F" + std::to_string(clip.frame_rate().num) + ":" +
                             std::to_string(clip.frame_rate().den) + " Ip A1:1 C420jpeg\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  constexpr std::string_view kFrame = "FRAME\n";
  for (const Frame& f : clip.frames()) {
    out.insert(out.end(), kFrame.begin(), kFrame.end());
    out.insert(out.end(), f.y.data.begin(), f.y.data.end());
    out.insert(out.end(), f.u.data.begin(), f.u.data.end());
    out.insert(out.end(), f.v.data.begin(), f.v.data.end());
  }
  return out;
}

}  // namespace teleqa::io
