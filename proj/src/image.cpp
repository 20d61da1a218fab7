#include "bino/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "bino/errors.hpp"

namespace bino {

std::size_t DisparityGrid::valid_count() const {
  return static_cast<std::size_t>(std::count_if(valid.begin(), valid.end(), [](std::uint8_t v) { return v != 0; }));
}

namespace {

std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

// Reads one whitespace-delimited header integer, skipping '#' comments.
long read_header_int(std::istream& in, const std::string& path) {
  int ch = in.get();
  while (in && (std::isspace(ch) || ch == '#')) {
    if (ch == '#') {
      while (in && ch != '\n') ch = in.get();
    }
    ch = in.get();
  }
  if (!in || !std::isdigit(ch)) throw DataError("malformed PNM header in " + path);
  long value = 0;
  while (in && std::isdigit(ch)) {
    value = value * 10 + (ch - '0');
    ch = in.get();
  }
  return value;  // the single whitespace after the value is consumed here
}

}  // namespace

Image quantize8(const Image& img) {
  Image out = img;
  for (float& v : out.data) v = static_cast<float>(to_byte(v)) / 255.0f;
  return out;
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '6' && magic[1] != '5'))
    throw DataError("unsupported image format (expected P5/P6) in " + path.string());
  const bool color = magic[1] == '6';
  const long w = read_header_int(in, path.string());
  const long h = read_header_int(in, path.string());
  const long maxval = read_header_int(in, path.string());
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw DataError("unsupported PNM dimensions or depth in " + path.string());
  const std::size_t src_channels = color ? 3 : 1;
  std::vector<unsigned char> raw(static_cast<std::size_t>(w * h) * src_channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw DataError("truncated image " + path.string());
  Image img(3, static_cast<std::size_t>(h), static_cast<std::size_t>(w));
  const auto scale = static_cast<float>(maxval);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t sc = color ? c : 0;
        img.at(c, y, x) = static_cast<float>(raw[(y * img.width + x) * src_channels + sc]) / scale;
      }
  return img;
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 3) throw DataError("write_ppm expects a 3-channel image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image " + path.string());
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.width * img.height * 3);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) raw[(y * img.width + x) * 3 + c] = to_byte(img.at(c, y, x));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw DataError("failed writing image " + path.string());
}

}  // namespace bino
