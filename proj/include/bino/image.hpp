#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace bino {

// Planar CHW float image, values nominally in [0, 1].
struct Image {
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(c * h * w, fill) {}

  float& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }

  bool same_shape(const Image& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  friend bool operator==(const Image&, const Image&) = default;
};

// Per-cell disparity on the patch-column lattice, in per-view pixels.
struct DisparityGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> disp_px;
  std::vector<std::uint8_t> valid;

  float at(std::size_t r, std::size_t p) const { return disp_px[r * cols + p]; }
  bool is_valid(std::size_t r, std::size_t p) const { return valid[r * cols + p] != 0; }
  std::size_t valid_count() const;
  friend bool operator==(const DisparityGrid&, const DisparityGrid&) = default;
};

// A rectified stereo pair.
struct ImagePair {
  Image left;
  Image right;
  std::optional<DisparityGrid> gt;
};

// Rounds to 8 bits, as stored on disk.
Image quantize8(const Image& img);

// Binary PPM (P6) and PGM (P5), 8-bit. PGM is replicated to three channels.
Image read_pnm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& img);

}  // namespace bino
