#include "bino/mech_probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bino/errors.hpp"
#include "bino/kernels.hpp"

namespace bino {

PhaseSimilarity phase_distribution(const Tensor& tokens, const TokenGridGeometry& geom, double temperature) {
  if (tokens.rank() != 2 || tokens.dim(0) != geom.token_count())
    throw ShapeError("phase_distribution: token grid does not match the geometry");
  if (!(temperature > 0.0)) throw ConfigError("phase_distribution: temperature must be positive");
  const std::size_t R = geom.token_rows(), P = geom.patch_cols(), n = R * P, d = tokens.dim(1);
  const std::size_t fused = geom.fused_cols();
  std::vector<float> even(n * d), odd(n * d);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t p = 0; p < P; ++p) {
      const auto [c0, c1] = geom.phase_pair(p);
      const float* a = tokens.ptr() + (r * fused + c0) * d;
      const float* b = tokens.ptr() + (r * fused + c1) * d;
      const double na = std::sqrt(kernels::sum_squares(a, d)), nb = std::sqrt(kernels::sum_squares(b, d));
      for (std::size_t j = 0; j < d; ++j) {
        even[(r * P + p) * d + j] = na > 0 ? static_cast<float>(a[j] / na) : 0.0f;
        odd[(r * P + p) * d + j] = nb > 0 ? static_cast<float>(b[j] / nb) : 0.0f;
      }
    }
  std::vector<float> sim(n * n);
  kernels::gemm(n, n, d, {even.data(), d, false}, {odd.data(), d, true}, 0.0f, sim.data(), n);
  PhaseSimilarity out;
  out.rows = R;
  out.cols = P;
  out.temperature = temperature;
  out.prob.resize(n * n);
  for (std::size_t q = 0; q < n; ++q) {
    const float* s = sim.data() + q * n;
    double* pr = out.prob.data() + q * n;
    const double mx = *std::max_element(s, s + n);
    double z = 0.0;
    for (std::size_t k = 0; k < n; ++k) z += (pr[k] = std::exp((s[k] - mx) / temperature));
    for (std::size_t k = 0; k < n; ++k) pr[k] /= z;
  }
  return out;
}

GeometryMetrics query_metrics(const double* dist, std::size_t rows, std::size_t cols, GridTarget t) {
  if (t.r >= rows || t.p >= cols) throw ShapeError("geometry_metrics: target off-grid");
  GeometryMetrics m;
  m.queries = 1;
  const double* row = dist + t.r * cols;
  double row_mass = 0.0;
  for (std::size_t p = 0; p < cols; ++p) row_mass += row[p];
  m.row_conc = row_mass;
  if (row_mass > 0.0) {
    m.gt_at_0 = row[t.p] / row_mass;
    double win = 0.0;
    for (std::size_t p = t.p > 0 ? t.p - 1 : 0; p <= std::min(cols - 1, t.p + 1); ++p) win += row[p];
    m.gt_at_1 = win / row_mass;
    double h = 0.0;
    for (std::size_t p = 0; p < cols; ++p) {
      const double q = row[p] / row_mass;
      if (q > 0.0) h -= q * std::log(q);
    }
    m.entropy = h;
  }
  const std::size_t n = rows * cols, target = t.r * cols + t.p;
  std::size_t rank = 0, argmax = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (dist[k] >= dist[target]) ++rank;  // ties count against the target
    if (dist[k] > dist[argmax]) argmax = k;
  }
  m.mrr = 1.0 / static_cast<double>(rank);
  const std::size_t ar = argmax / cols, ap = argmax % cols;
  const std::size_t off = ap > t.p ? ap - t.p : t.p - ap;
  m.acc_at_0 = ar == t.r && off == 0 ? 1.0 : 0.0;
  m.acc_at_1 = ar == t.r && off <= 1 ? 1.0 : 0.0;
  return m;
}

void MetricAccumulator::add(const GeometryMetrics& m) {
  const auto w = static_cast<double>(m.queries);
  sum.row_conc += w * m.row_conc;
  sum.gt_at_0 += w * m.gt_at_0;
  sum.gt_at_1 += w * m.gt_at_1;
  sum.mrr += w * m.mrr;
  sum.entropy += w * m.entropy;
  sum.acc_at_0 += w * m.acc_at_0;
  sum.acc_at_1 += w * m.acc_at_1;
  sum.queries += m.queries;
}

GeometryMetrics MetricAccumulator::mean() const {
  GeometryMetrics m;
  m.queries = sum.queries;
  if (sum.queries == 0) return m;
  const auto n = static_cast<double>(sum.queries);
  m.row_conc = sum.row_conc / n;
  m.gt_at_0 = sum.gt_at_0 / n;
  m.gt_at_1 = sum.gt_at_1 / n;
  m.mrr = sum.mrr / n;
  m.entropy = sum.entropy / n;
  m.acc_at_0 = sum.acc_at_0 / n;
  m.acc_at_1 = sum.acc_at_1 / n;
  return m;
}

GeometryMetrics geometry_metrics(const PhaseSimilarity& dist, const std::vector<std::optional<GridTarget>>& targets) {
  const std::size_t n = dist.rows * dist.cols;
  if (targets.size() != n) throw ShapeError("geometry_metrics: one target slot per query expected");
  MetricAccumulator acc;
  for (std::size_t q = 0; q < n; ++q)
    if (targets[q]) acc.add(query_metrics(dist.prob.data() + q * n, dist.rows, dist.cols, *targets[q]));
  return acc.mean();
}

std::vector<std::optional<GridTarget>> shift_targets(std::size_t rows, std::size_t cols, std::size_t shift) {
  std::vector<std::optional<GridTarget>> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t p = shift; p < cols; ++p) out[r * cols + p] = GridTarget{r, p - shift};
  return out;
}

std::string to_string(Counterfactual c) {
  switch (c) {
    case Counterfactual::none: return "none";
    case Counterfactual::replace_right: return "replace-right";
    case Counterfactual::row_shuffle_right: return "row-shuffle-right";
    case Counterfactual::duplicate_left: return "duplicate-left";
  }
  return "?";
}

Counterfactual parse_counterfactual(const std::string& s) {
  for (Counterfactual c : {Counterfactual::none, Counterfactual::replace_right, Counterfactual::row_shuffle_right,
                           Counterfactual::duplicate_left})
    if (to_string(c) == s) return c;
  throw ConfigError("unknown counterfactual '" + s + "'");
}

Image permute_patch_columns(const Image& img, const TokenGridGeometry& geom,
                            const std::vector<std::vector<std::size_t>>& perms) {
  const std::size_t R = geom.token_rows(), P = geom.patch_cols(), pitch = geom.column_pitch();
  if (img.height != geom.image_h || img.width != geom.image_w) throw ShapeError("permute_patch_columns: image size");
  if (perms.size() != R) throw ShapeError("permute_patch_columns: one permutation per token row expected");
  Image out = img;
  for (std::size_t r = 0; r < R; ++r) {
    const auto& perm = perms[r];
    std::vector<std::size_t> check = perm;
    std::sort(check.begin(), check.end());
    for (std::size_t i = 0; i < check.size(); ++i)
      if (check[i] != i) throw ShapeError("permute_patch_columns: not a permutation");
    if (perm.size() != P) throw ShapeError("permute_patch_columns: permutation length");
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t c = 0; c < img.channels; ++c)
        for (std::size_t y = r * geom.patch_h; y < (r + 1) * geom.patch_h; ++y)
          for (std::size_t x = 0; x < pitch; ++x) out.at(c, y, p * pitch + x) = img.at(c, y, perm[p] * pitch + x);
  }
  return out;
}

ProbeSample apply_counterfactual(const std::vector<ProbeSample>& pool, std::size_t index, Counterfactual kind,
                                 const TokenGridGeometry& geom, Rng& rng) {
  if (index >= pool.size()) throw std::out_of_range("apply_counterfactual: index");
  ProbeSample out = pool[index];
  switch (kind) {
    case Counterfactual::none: break;
    case Counterfactual::replace_right: {
      if (pool.size() < 2) throw DataError("replace-right needs a donor pool of at least two samples");
      auto donor = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(pool.size()) - 2));
      if (donor >= index) ++donor;
      out.pair.right = pool[donor].pair.right;
      break;
    }
    case Counterfactual::row_shuffle_right: {
      std::vector<std::vector<std::size_t>> perms(geom.token_rows());
      for (auto& perm : perms) {
        perm.resize(geom.patch_cols());
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = perm.size(); i > 1; --i)
          std::swap(perm[i - 1], perm[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i) - 1))]);
      }
      out.pair.right = permute_patch_columns(out.pair.right, geom, perms);
      break;
    }
    case Counterfactual::duplicate_left:
      out.pair.right = out.pair.left;
      out.shift_tokens = 0;
      break;
  }
  return out;
}

std::vector<LayerMetrics> layerwise_sweep(const ParamSet& params, const EncoderConfig& cfg,
                                          const std::vector<ProbeSample>& samples, double temperature) {
  const auto& g = cfg.geometry;
  std::vector<MetricAccumulator> acc(cfg.depth + 3);
  for (const ProbeSample& s : samples) {
    const EncoderState st = encode(fuse(s.pair, g), cfg, params);
    const auto targets = shift_targets(g.token_rows(), g.patch_cols(), s.shift_tokens);
    for (std::size_t l = 0; l <= cfg.depth; ++l)
      acc[l].add(geometry_metrics(phase_distribution(st.per_layer_tokens[l], g, temperature), targets));
    acc[cfg.depth + 1].add(geometry_metrics(phase_distribution(st.per_layer_tokens.back(), g, temperature), targets));
    acc[cfg.depth + 2].add(geometry_metrics(phase_distribution(st.final_depos, g, temperature), targets));
  }
  std::vector<LayerMetrics> out;
  for (std::size_t l = 0; l <= cfg.depth; ++l) out.push_back({"layer" + std::to_string(l) + "_raw", acc[l].mean()});
  out.push_back({"final_raw", acc[cfg.depth + 1].mean()});
  out.push_back({"final_depos", acc[cfg.depth + 2].mean()});
  return out;
}

}  // namespace bino
