#include "diffedit/pgm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "diffedit/error.hpp"

namespace diffedit {

std::uint8_t pixel_to_byte(double x) {
  const double v = std::round((x + 1.0) * 0.5 * 255.0);
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

double byte_to_pixel(std::uint8_t b) { return static_cast<double>(b) / 255.0 * 2.0 - 1.0; }

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(const std::string& bytes) : bytes_(bytes) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError("PGM: " + what + " at byte " + std::to_string(pos_));
  }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const unsigned char c = static_cast<unsigned char>(bytes_[pos_]);
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(c)) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t value = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      value = value * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (value > 1u << 20) fail(std::string("oversized ") + what);
      ++pos_;
    }
    if (pos_ == start) fail(std::string("expected ") + what);
    return value;
  }

  std::size_t pos_ = 0;

 private:
  const std::string& bytes_;
};

}  // namespace

GrayImage parse_pgm(const std::string& bytes) {
  HeaderReader r(bytes);
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') r.fail("missing P5 magic");
  r.pos_ = 2;
  GrayImage img;
  img.width = r.number("width");
  img.height = r.number("height");
  r.skip_space_and_comments();
  const std::size_t maxval_at = r.pos_;
  const std::size_t maxval = r.number("maxval");
  if (img.width == 0 || img.height == 0) r.fail("zero image dimension");
  if (maxval != 255) {
    r.pos_ = maxval_at;
    r.fail("unsupported maxval " + std::to_string(maxval));
  }
  if (r.pos_ >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[r.pos_]))) {
    r.fail("expected whitespace before raster");
  }
  ++r.pos_;
  const std::size_t n = img.width * img.height;
  if (bytes.size() - r.pos_ < n) {
    r.pos_ = bytes.size();
    r.fail("truncated raster (need " + std::to_string(n) + " bytes)");
  }
  img.pixels = Tensor({1, n});
  for (std::size_t i = 0; i < n; ++i) {
    img.pixels[i] = byte_to_pixel(static_cast<std::uint8_t>(bytes[r.pos_ + i]));
  }
  return img;
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_pgm(ss.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string encode_pgm(const Tensor& pixels, std::size_t width, std::size_t height) {
  if (pixels.size() != width * height) {
    throw ShapeError("encode_pgm: " + shape_string(pixels.shape()) + " is not " +
                     std::to_string(width) + "x" + std::to_string(height));
  }
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.reserve(out.size() + pixels.size());
  for (double v : pixels.data()) out.push_back(static_cast<char>(pixel_to_byte(v)));
  return out;
}

void write_pgm(const std::filesystem::path& path, const Tensor& pixels, std::size_t width,
               std::size_t height) {
  const std::string bytes = encode_pgm(pixels, width, height);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace diffedit
