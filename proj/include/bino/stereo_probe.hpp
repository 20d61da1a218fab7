#pragma once

// Frozen descriptor stereo: duplicated-input export, row-wise cosine cost
// volume, WTA, four-direction SGM, local soft refinement, left-right check,
// plus disparity metrics and pooled-descriptor retrieval.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "bino/encoder.hpp"
#include "bino/image.hpp"
#include "bino/rng.hpp"

namespace bino {

struct DescriptorMap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t dim = 0;
  std::vector<float> desc;  // rows x cols x dim
  bool normalized = false;
  std::string source;

  const float* at(std::size_t r, std::size_t p) const { return desc.data() + (r * cols + p) * dim; }
  float* at(std::size_t r, std::size_t p) { return desc.data() + (r * cols + p) * dim; }
};

// Phase average of a fused token grid [tokens x d]: D[r,p] = (T[r,2p] + T[r,2p+1]) / 2.
DescriptorMap phase_average(const Tensor& tokens, const TokenGridGeometry& geom, bool normalize);
// Encoder on (I, I), de-positioned, phase averaged.
DescriptorMap export_descriptors(const ParamSet& params, const EncoderConfig& cfg, const Image& image,
                                 bool normalize = true, std::string source = {});

inline constexpr double kInvalidCost = std::numeric_limits<double>::infinity();

// cost(r, p, d) matches left (r, p) to right (r, p - d).
struct CostVolume {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t dmax = 0;
  std::vector<double> cost;

  CostVolume() = default;
  CostVolume(std::size_t r, std::size_t c, std::size_t d) : rows(r), cols(c), dmax(d), cost(r * c * d, kInvalidCost) {}
  double& at(std::size_t r, std::size_t p, std::size_t d) { return cost[(r * cols + p) * dmax + d]; }
  double at(std::size_t r, std::size_t p, std::size_t d) const { return cost[(r * cols + p) * dmax + d]; }
};

CostVolume build_cost_volume(const DescriptorMap& left, const DescriptorMap& right, std::size_t dmax);
// Right-reference volume of the same pair: cost_R(r, p, d) = cost_L(r, p + d, d).
CostVolume mirror_volume(const CostVolume& left);

// Per-cell argmin over d, ties to the smaller d. Row-major [rows x cols].
std::vector<int> wta(const CostVolume& volume);

struct SgmResult {
  CostVolume aggregated;  // sum over the four directions
  std::vector<int> disparity;
};
// Directions are accumulated in the order from-left, from-right, from-top,
// from-bottom.
SgmResult sgm(const CostVolume& volume, double p1, double p2);

// Soft-argmin of exp(-(S - S_min) / temperature) within +-window of the
// discrete optimum, clamped to +-0.5 of it.
std::vector<double> soft_refine(const CostVolume& aggregated, const std::vector<int>& disparity, std::size_t window,
                                double temperature = 1.0);

struct LrCheck {
  std::vector<std::uint8_t> valid;
  double keep = 0.0;  // percent
};
LrCheck lr_check(const std::vector<double>& disp_left, const std::vector<double>& disp_right, std::size_t rows,
                 std::size_t cols, double tol);

struct DisparityErrors {
  double epe_px = 0.0;
  double bad1tok = 0.0;  // percent with error > 1 token
  double d1 = 0.0;       // percent with error >= max(3 px, 0.05 gt)
  std::size_t count = 0;
};
// pred in token columns, gt in pixels; token_px converts between them.
DisparityErrors disparity_metrics(const std::vector<double>& pred_tokens, const DisparityGrid& gt, double token_px);

struct StereoParams {
  std::size_t dmax = 24;
  double p1 = 0.1;
  double p2 = 0.8;
  std::size_t refine_window = 2;
  double refine_temperature = 0.1;
  double lr_tol = 1.0;
};

// Everything the pipeline produces for one pair.
struct StereoOutput {
  std::vector<int> wta;
  std::vector<int> sgm;
  std::vector<double> refined;
  std::vector<double> refined_right;
  LrCheck lr;
};
StereoOutput run_stereo(const DescriptorMap& left, const DescriptorMap& right, const StereoParams& params);

// u = [T_even, T_odd, |T_even - T_odd|, T_even * T_odd], length 4d.
std::vector<float> pair_collapse_feature(const Tensor& tokens, const TokenGridGeometry& geom, std::size_t r,
                                         std::size_t p);

// Mean over cells, then L2 normalized.
std::vector<float> mean_pool(const DescriptorMap& map);

struct RetrievalResult {
  double top1 = 0, top5 = 0;    // percent, ranked against all right images
  double hard1 = 0, hard5 = 0;  // percent, ranked against the positive and a random negative subset
  double margin = 0;            // mean sim(pos) - max sim(subset negatives)
  std::size_t n = 0;
  std::size_t subset = 0;
};
// Similarity ties rank the lower index first.
RetrievalResult retrieval_eval(const std::vector<std::vector<float>>& left, const std::vector<std::vector<float>>& right,
                               std::size_t hard_subset_size, Rng& rng);

}  // namespace bino
