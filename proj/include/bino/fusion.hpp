#pragma once

// Binocular input fusion X = Phi(L, R), the micro-cell token lattice, and
// one-view patch masks aligned to that lattice.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bino/image.hpp"
#include "bino/rng.hpp"

namespace bino {

enum class FusionMode { interleave, concat };
enum class Provenance { normal, duplicated, counterfactual };
enum class View { left, right };

std::string to_string(FusionMode m);
FusionMode parse_fusion_mode(const std::string& s);

struct FusedImage {
  Image data;  // 3 x H x 2W
  Provenance provenance = Provenance::normal;
};

// Token lattice over the fused image.
//
// A token covers patch_h x patch_w fused pixels. Fused token columns come in
// adjacent pairs c = 2p + q; the pair index p is the patch column, and the
// per-view patch-column grid is token_rows x patch_cols. One patch column spans
// column_pitch() = patch_w pixels of each view.
struct TokenGridGeometry {
  std::size_t image_h = 48;
  std::size_t image_w = 160;
  std::size_t patch_h = 4;
  std::size_t patch_w = 4;
  FusionMode fusion = FusionMode::interleave;
  std::size_t interleave_stride = 1;

  std::size_t token_rows() const { return image_h / patch_h; }
  std::size_t fused_cols() const { return 2 * image_w / patch_w; }
  std::size_t patch_cols() const { return fused_cols() / 2; }
  std::size_t token_count() const { return token_rows() * fused_cols(); }
  // Pixels of each view inside one token.
  std::size_t view_patch_w() const { return patch_w / 2; }
  // Per-view pixels spanned by one patch column (disparity unit).
  std::size_t column_pitch() const { return image_w / patch_cols(); }

  // The two fused token columns holding patch column p.
  std::pair<std::size_t, std::size_t> phase_pair(std::size_t p) const;

  // Throws ShapeError when the lattice does not tile the image exactly.
  void validate() const;
  friend bool operator==(const TokenGridGeometry&, const TokenGridGeometry&) = default;
};

struct PhaseIndex {
  std::size_t p;
  std::size_t q;
};

// c = 2p + q.
constexpr PhaseIndex phase_decompose(std::size_t c) { return {c / 2, c % 2}; }

// X(:,:,2u) = L(:,:,u), X(:,:,2u+1) = R(:,:,u). With stride s > 1, blocks of
// s columns per view alternate instead (experimental).
FusedImage interleave(const ImagePair& pair, std::size_t stride = 1);
ImagePair deinterleave(const FusedImage& fused, std::size_t stride = 1);
// Left in columns [0, W), right in [W, 2W).
FusedImage concat_fuse(const ImagePair& pair);
ImagePair deconcat(const FusedImage& fused);

FusedImage fuse(const ImagePair& pair, const TokenGridGeometry& geom);
// Phi(I, I), tagged as duplicated.
FusedImage fuse_duplicated(const Image& image, const TokenGridGeometry& geom);

struct ViewMask {
  View which = View::left;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> cells;  // 1 = masked
  double ratio = 0.0;               // realized fraction

  std::size_t masked_count() const;
};

// Picks a view by coin flip and masks round(ratio * rows * cols) distinct
// cells of it, chosen uniformly.
ViewMask sample_one_view_mask(const TokenGridGeometry& geom, double ratio, Rng& rng);
ViewMask sample_view_mask(const TokenGridGeometry& geom, View view, double ratio, Rng& rng);

// Zero-fills the masked cells of the mask's view.
void apply_mask(ImagePair& pair, const ViewMask& mask, const TokenGridGeometry& geom);

}  // namespace bino
