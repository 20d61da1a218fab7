#include "bino/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bino/errors.hpp"

namespace bino {

std::string to_string(FusionMode m) { return m == FusionMode::interleave ? "interleave" : "concat"; }

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "interleave") return FusionMode::interleave;
  if (s == "concat") return FusionMode::concat;
  throw ConfigError("unknown fusion mode '" + s + "'");
}

std::pair<std::size_t, std::size_t> TokenGridGeometry::phase_pair(std::size_t p) const {
  if (fusion == FusionMode::concat) return {p, patch_cols() + p};
  return {2 * p, 2 * p + 1};
}

void TokenGridGeometry::validate() const {
  auto fail = [](const std::string& msg) { throw ShapeError("token geometry: " + msg); };
  if (patch_h == 0 || patch_w == 0) fail("patch extents must be positive");
  if (patch_w % 2 != 0) fail("patch_w must be even");
  if (image_h == 0 || image_w == 0) fail("image extents must be positive");
  if (image_h % patch_h != 0) fail("H=" + std::to_string(image_h) + " not divisible by patch_h");
  if ((2 * image_w) % patch_w != 0) fail("2W not divisible by patch_w");
  if (fused_cols() % 2 != 0) fail("fused token columns must be even");
  if (image_w % patch_cols() != 0) fail("W not divisible by patch columns");
  if (fusion == FusionMode::interleave) {
    if (interleave_stride == 0 || patch_w % interleave_stride != 0)
      fail("interleave stride must divide patch_w");
    if (image_w % interleave_stride != 0) fail("interleave stride must divide W");
  } else if (image_w % patch_w != 0) {
    fail("concat fusion needs W divisible by patch_w");
  }
}

namespace {

void require_same_shape(const ImagePair& pair) {
  if (!pair.left.same_shape(pair.right)) throw ShapeError("left and right images differ in shape");
}

// Fused column holding view column u of the given view.
std::size_t interleaved_column(std::size_t u, View view, std::size_t stride) {
  const std::size_t block = u / stride, offset = u % stride;
  return 2 * stride * block + (view == View::right ? stride : 0) + offset;
}

}  // namespace

FusedImage interleave(const ImagePair& pair, std::size_t stride) {
  require_same_shape(pair);
  const Image& l = pair.left;
  if (stride == 0 || l.width % stride != 0) throw ShapeError("interleave stride must divide the image width");
  FusedImage out{Image(l.channels, l.height, 2 * l.width), Provenance::normal};
  for (std::size_t c = 0; c < l.channels; ++c)
    for (std::size_t y = 0; y < l.height; ++y)
      for (std::size_t u = 0; u < l.width; ++u) {
        out.data.at(c, y, interleaved_column(u, View::left, stride)) = l.at(c, y, u);
        out.data.at(c, y, interleaved_column(u, View::right, stride)) = pair.right.at(c, y, u);
      }
  return out;
}

ImagePair deinterleave(const FusedImage& fused, std::size_t stride) {
  const Image& x = fused.data;
  if (x.width % 2 != 0) throw ShapeError("deinterleave: fused width must be even");
  const std::size_t w = x.width / 2;
  if (stride == 0 || w % stride != 0) throw ShapeError("interleave stride must divide the image width");
  ImagePair out{Image(x.channels, x.height, w), Image(x.channels, x.height, w), std::nullopt};
  for (std::size_t c = 0; c < x.channels; ++c)
    for (std::size_t y = 0; y < x.height; ++y)
      for (std::size_t u = 0; u < w; ++u) {
        out.left.at(c, y, u) = x.at(c, y, interleaved_column(u, View::left, stride));
        out.right.at(c, y, u) = x.at(c, y, interleaved_column(u, View::right, stride));
      }
  return out;
}

FusedImage concat_fuse(const ImagePair& pair) {
  require_same_shape(pair);
  const Image& l = pair.left;
  FusedImage out{Image(l.channels, l.height, 2 * l.width), Provenance::normal};
  for (std::size_t c = 0; c < l.channels; ++c)
    for (std::size_t y = 0; y < l.height; ++y)
      for (std::size_t u = 0; u < l.width; ++u) {
        out.data.at(c, y, u) = l.at(c, y, u);
        out.data.at(c, y, l.width + u) = pair.right.at(c, y, u);
      }
  return out;
}

ImagePair deconcat(const FusedImage& fused) {
  const Image& x = fused.data;
  if (x.width % 2 != 0) throw ShapeError("deconcat: fused width must be even");
  const std::size_t w = x.width / 2;
  ImagePair out{Image(x.channels, x.height, w), Image(x.channels, x.height, w), std::nullopt};
  for (std::size_t c = 0; c < x.channels; ++c)
    for (std::size_t y = 0; y < x.height; ++y)
      for (std::size_t u = 0; u < w; ++u) {
        out.left.at(c, y, u) = x.at(c, y, u);
        out.right.at(c, y, u) = x.at(c, y, w + u);
      }
  return out;
}

FusedImage fuse(const ImagePair& pair, const TokenGridGeometry& geom) {
  if (pair.left.height != geom.image_h || pair.left.width != geom.image_w)
    throw ShapeError("image " + std::to_string(pair.left.height) + "x" + std::to_string(pair.left.width) +
                     " does not match geometry " + std::to_string(geom.image_h) + "x" +
                     std::to_string(geom.image_w));
  return geom.fusion == FusionMode::concat ? concat_fuse(pair) : interleave(pair, geom.interleave_stride);
}

FusedImage fuse_duplicated(const Image& image, const TokenGridGeometry& geom) {
  FusedImage out = fuse(ImagePair{image, image, std::nullopt}, geom);
  out.provenance = Provenance::duplicated;
  return out;
}

std::size_t ViewMask::masked_count() const {
  return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), std::uint8_t{1}));
}

ViewMask sample_view_mask(const TokenGridGeometry& geom, View view, double ratio, Rng& rng) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw std::invalid_argument("mask ratio must lie in [0, 1]");
  ViewMask mask;
  mask.which = view;
  mask.rows = geom.token_rows();
  mask.cols = geom.patch_cols();
  const std::size_t total = mask.rows * mask.cols;
  mask.cells.assign(total, 0);
  const auto count = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(total)));
  // Partial Fisher-Yates: the first `count` slots form a uniform subset.
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(i),
                                                        static_cast<std::int64_t>(total - 1)));
    std::swap(order[i], order[j]);
    mask.cells[order[i]] = 1;
  }
  mask.ratio = total ? static_cast<double>(count) / static_cast<double>(total) : 0.0;
  return mask;
}

ViewMask sample_one_view_mask(const TokenGridGeometry& geom, double ratio, Rng& rng) {
  const View view = coin(rng) ? View::right : View::left;
  return sample_view_mask(geom, view, ratio, rng);
}

void apply_mask(ImagePair& pair, const ViewMask& mask, const TokenGridGeometry& geom) {
  Image& img = mask.which == View::left ? pair.left : pair.right;
  if (mask.rows != geom.token_rows() || mask.cols != geom.patch_cols())
    throw ShapeError("mask grid does not match token geometry");
  const std::size_t pitch = geom.column_pitch();
  for (std::size_t r = 0; r < mask.rows; ++r)
    for (std::size_t p = 0; p < mask.cols; ++p) {
      if (!mask.cells[r * mask.cols + p]) continue;
      for (std::size_t c = 0; c < img.channels; ++c)
        for (std::size_t y = r * geom.patch_h; y < (r + 1) * geom.patch_h; ++y)
          for (std::size_t x = p * pitch; x < (p + 1) * pitch; ++x) img.at(c, y, x) = 0.0f;
    }
}

}  // namespace bino
