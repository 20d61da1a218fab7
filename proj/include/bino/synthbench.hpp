#pragma once

// Controlled stereo pairs: a textured crop and a horizontally shifted,
// reflect-padded copy, with the per-token disparity known by construction.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "bino/distill.hpp"
#include "bino/image.hpp"

namespace bino {

enum class Preset { easy_s1, hard_s1, hard_s2 };

std::string to_string(Preset p);
Preset parse_preset(const std::string& s);

struct BenchConfig {
  // Text file listing PPM/PGM sources (one path per line, relative to the
  // manifest). Empty means procedural textures.
  std::filesystem::path source_manifest;
  std::size_t crop_h = 48;
  std::size_t crop_w = 160;
  std::size_t patch_h = 4;
  std::size_t patch_w = 4;
  double d_min = 2.0;  // pixels
  double d_max = 12.0;
  Preset preset = Preset::hard_s1;
  bool occlusion = true;
  bool photometric = true;
  std::uint64_t seed = 0;

  // Shift range and nuisance switches of a preset; geometry is left alone.
  static BenchConfig for_preset(Preset p);
  void apply_preset(Preset p);

  std::size_t grid_rows() const { return crop_h / patch_h; }
  std::size_t grid_cols() const { return crop_w / patch_w; }
  // Shifts are whole patch columns: k * patch_w pixels.
  std::size_t pitch() const { return patch_w; }
  std::vector<std::size_t> shift_tokens() const;
  NuisanceConfig nuisance() const;
  void validate() const;
  friend bool operator==(const BenchConfig&, const BenchConfig&) = default;
};

struct BenchSample {
  std::size_t index = 0;
  ImagePair pair;       // gt filled, in per-view pixels
  double shift_px = 0;  // constant displacement of this pair
  std::size_t shift_tokens = 0;
  std::uint64_t seed = 0;
  Preset preset = Preset::hard_s1;
};

// right(u) = left(u + s) with reflect padding past the crop border.
Image shift_reflect(const Image& left, std::size_t s);

// Disparity grid for a constant shift; cells whose content left the crop are
// invalid.
DisparityGrid constant_disparity(std::size_t rows, std::size_t cols, std::size_t shift_tokens, std::size_t pitch);

// Procedural source texture (value noise plus flat shapes), 8-bit quantized.
Image procedural_source(std::size_t height, std::size_t width, Rng& rng);

// Sample `index` depends only on (cfg, index).
BenchSample generate_one(const BenchConfig& cfg, std::size_t index);
std::vector<BenchSample> generate(const BenchConfig& cfg, std::size_t n);
// Same pair with an explicit shift and no nuisance.
BenchSample generate_with_shift(const BenchConfig& cfg, std::size_t index, std::size_t shift_px);

std::vector<std::pair<std::string, std::string>> echo(const BenchConfig& cfg);

// <root>/<index>_L.ppm, <index>_R.ppm, <index>_gt.csv and manifest.json.
void write_dataset(const std::filesystem::path& root, const BenchConfig& cfg, const std::vector<BenchSample>& samples);
struct Dataset {
  BenchConfig config;
  std::vector<BenchSample> samples;
};
Dataset load_dataset(const std::filesystem::path& root);

struct MatchScores {
  double pck0 = 0, pck1 = 0, pck2 = 0;  // percent
  double epe = 0;                        // token columns
  std::size_t count = 0;
};

// pred_tokens is [rows x cols], row-major, in token columns.
MatchScores score_matching(const std::vector<double>& pred_tokens, const DisparityGrid& gt, std::size_t pitch);

}  // namespace bino
