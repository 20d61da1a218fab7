#pragma once

// Epipolar geometry of the fused token grid: even-phase (left-origin) queries
// against odd-phase (right-origin) candidates, layer by layer, plus input
// counterfactuals.

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bino/encoder.hpp"
#include "bino/synthbench.hpp"

namespace bino {

struct PhaseSimilarity {
  std::size_t rows = 0;
  std::size_t cols = 0;
  double temperature = 0.0;
  // [rows*cols queries x rows*cols candidates], each row sums to 1.
  std::vector<double> prob;

  const double* query(std::size_t r, std::size_t p) const { return prob.data() + (r * cols + p) * rows * cols; }
};

// Cosine similarity from every even-phase token to every odd-phase token,
// softmax at `temperature` over the whole odd-phase grid.
PhaseSimilarity phase_distribution(const Tensor& tokens, const TokenGridGeometry& geom, double temperature);

struct GridTarget {
  std::size_t r = 0;
  std::size_t p = 0;
};

struct GeometryMetrics {
  double row_conc = 0, gt_at_0 = 0, gt_at_1 = 0, mrr = 0, entropy = 0, acc_at_0 = 0, acc_at_1 = 0;
  std::size_t queries = 0;
};

// One query's distribution over a rows x cols candidate grid. GT@k and the
// entropy use the distribution conditioned on the target row.
GeometryMetrics query_metrics(const double* dist, std::size_t rows, std::size_t cols, GridTarget target);

// Averages over queries that have a target.
GeometryMetrics geometry_metrics(const PhaseSimilarity& dist, const std::vector<std::optional<GridTarget>>& targets);

// Running mean over queries from several samples, in insertion order.
struct MetricAccumulator {
  GeometryMetrics sum;
  void add(const GeometryMetrics& m);  // m holds means over m.queries queries
  GeometryMetrics mean() const;
};

// Query (r, p) targets (r, p - shift); queries whose target falls off-grid get none.
std::vector<std::optional<GridTarget>> shift_targets(std::size_t rows, std::size_t cols, std::size_t shift_tokens);

enum class Counterfactual { none, replace_right, row_shuffle_right, duplicate_left };
std::string to_string(Counterfactual c);
Counterfactual parse_counterfactual(const std::string& s);

// Permutes per-view patch columns of the right image, independently per token
// row. perms[row] is a permutation of [0, W_p): destination p takes source perms[row][p].
Image permute_patch_columns(const Image& img, const TokenGridGeometry& geom,
                            const std::vector<std::vector<std::size_t>>& perms);

struct ProbeSample {
  ImagePair pair;
  std::size_t shift_tokens = 0;
};

// Applies `kind` to pool[index]. Replace-right draws a donor from the rest of
// the pool and keeps the original target; duplicate-left sets the target to 0.
ProbeSample apply_counterfactual(const std::vector<ProbeSample>& pool, std::size_t index, Counterfactual kind,
                                 const TokenGridGeometry& geom, Rng& rng);

struct LayerMetrics {
  std::string name;  // layer0_raw ... layer{depth}_raw, final_raw, final_depos
  GeometryMetrics metrics;
};
std::vector<LayerMetrics> layerwise_sweep(const ParamSet& params, const EncoderConfig& cfg,
                                          const std::vector<ProbeSample>& samples, double temperature);

}  // namespace bino
