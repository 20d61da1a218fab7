#include "bino/stereo_probe.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "bino/errors.hpp"
#include "bino/kernels.hpp"
#include "bino/parallel.hpp"

namespace bino {

namespace {
void normalize(float* v, std::size_t n) {
  const double norm = std::sqrt(kernels::sum_squares(v, n));
  if (norm <= 0.0) return;
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<float>(v[i] / norm);
}
}  // namespace

DescriptorMap phase_average(const Tensor& tokens, const TokenGridGeometry& geom, bool norm) {
  if (tokens.rank() != 2 || tokens.dim(0) != geom.token_count())
    throw ShapeError("phase_average: token grid does not match the geometry");
  DescriptorMap m;
  m.rows = geom.token_rows();
  m.cols = geom.patch_cols();
  m.dim = tokens.dim(1);
  m.desc.resize(m.rows * m.cols * m.dim);
  m.normalized = norm;
  const std::size_t fused = geom.fused_cols();
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t p = 0; p < m.cols; ++p) {
      const auto [c0, c1] = geom.phase_pair(p);
      const float* a = tokens.ptr() + (r * fused + c0) * m.dim;
      const float* b = tokens.ptr() + (r * fused + c1) * m.dim;
      float* out = m.at(r, p);
      for (std::size_t j = 0; j < m.dim; ++j) out[j] = 0.5f * (a[j] + b[j]);
      if (norm) normalize(out, m.dim);
    }
  return m;
}

DescriptorMap export_descriptors(const ParamSet& params, const EncoderConfig& cfg, const Image& image, bool norm,
                                 std::string source) {
  if (image.height != cfg.geometry.image_h || image.width != cfg.geometry.image_w)
    throw ShapeError("export_descriptors: image is " + std::to_string(image.height) + "x" +
                     std::to_string(image.width) + ", encoder expects " + std::to_string(cfg.geometry.image_h) + "x" +
                     std::to_string(cfg.geometry.image_w));
  const EncoderState st = encode(fuse_duplicated(image, cfg.geometry), cfg, params);
  DescriptorMap m = phase_average(st.final_depos, cfg.geometry, norm);
  m.source = std::move(source);
  return m;
}

CostVolume build_cost_volume(const DescriptorMap& left, const DescriptorMap& right, std::size_t dmax) {
  if (left.rows != right.rows || left.cols != right.cols || left.dim != right.dim)
    throw ShapeError("build_cost_volume: descriptor maps differ in shape");
  if (dmax == 0 || dmax > left.cols) throw ConfigError("build_cost_volume: dmax must lie in [1, W_p]");
  CostVolume v(left.rows, left.cols, dmax);
  parallel_for(left.rows, [&](std::size_t r) {
    for (std::size_t p = 0; p < left.cols; ++p)
      for (std::size_t d = 0; d <= p && d < dmax; ++d)
        v.at(r, p, d) = 1.0 - kernels::dot(left.at(r, p), right.at(r, p - d), left.dim);
  });
  return v;
}

CostVolume mirror_volume(const CostVolume& left) {
  CostVolume v(left.rows, left.cols, left.dmax);
  for (std::size_t r = 0; r < left.rows; ++r)
    for (std::size_t p = 0; p < left.cols; ++p)
      for (std::size_t d = 0; d < left.dmax && p + d < left.cols; ++d) v.at(r, p, d) = left.at(r, p + d, d);
  return v;
}

std::vector<int> wta(const CostVolume& vol) {
  std::vector<int> out(vol.rows * vol.cols, 0);
  for (std::size_t r = 0; r < vol.rows; ++r)
    for (std::size_t p = 0; p < vol.cols; ++p) {
      std::size_t best = 0;
      for (std::size_t d = 1; d < vol.dmax; ++d)
        if (vol.at(r, p, d) < vol.at(r, p, best)) best = d;
      out[r * vol.cols + p] = static_cast<int>(best);
    }
  return out;
}

namespace {

// One scanline pass. `cells` lists the flat cell indices in path order.
void aggregate_path(const CostVolume& vol, const std::vector<std::size_t>& cells, double p1, double p2,
                    CostVolume& acc) {
  const std::size_t D = vol.dmax;
  std::vector<double> prev(D), cur(D);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const double* c = vol.cost.data() + cells[i] * D;
    if (i == 0) {
      std::copy(c, c + D, cur.begin());
    } else {
      const double m = *std::min_element(prev.begin(), prev.end());
      for (std::size_t d = 0; d < D; ++d) {
        double best = prev[d];
        if (d > 0) best = std::min(best, prev[d - 1] + p1);
        if (d + 1 < D) best = std::min(best, prev[d + 1] + p1);
        best = std::min(best, m + p2);
        cur[d] = c[d] + (best - m);
      }
    }
    double* a = acc.cost.data() + cells[i] * D;
    for (std::size_t d = 0; d < D; ++d) a[d] += cur[d];
    std::swap(prev, cur);
  }
}

}  // namespace

SgmResult sgm(const CostVolume& vol, double p1, double p2) {
  if (!(p1 >= 0.0) || !(p2 >= p1)) throw ConfigError("sgm requires P2 >= P1 >= 0");
  SgmResult res;
  res.aggregated = CostVolume(vol.rows, vol.cols, vol.dmax);
  std::fill(res.aggregated.cost.begin(), res.aggregated.cost.end(), 0.0);
  const std::size_t R = vol.rows, C = vol.cols;
  std::vector<std::size_t> path;
  // from left
  for (std::size_t r = 0; r < R; ++r) {
    path.clear();
    for (std::size_t p = 0; p < C; ++p) path.push_back(r * C + p);
    aggregate_path(vol, path, p1, p2, res.aggregated);
  }
  // from right
  for (std::size_t r = 0; r < R; ++r) {
    path.clear();
    for (std::size_t p = C; p-- > 0;) path.push_back(r * C + p);
    aggregate_path(vol, path, p1, p2, res.aggregated);
  }
  // from top
  for (std::size_t p = 0; p < C; ++p) {
    path.clear();
    for (std::size_t r = 0; r < R; ++r) path.push_back(r * C + p);
    aggregate_path(vol, path, p1, p2, res.aggregated);
  }
  // from bottom
  for (std::size_t p = 0; p < C; ++p) {
    path.clear();
    for (std::size_t r = R; r-- > 0;) path.push_back(r * C + p);
    aggregate_path(vol, path, p1, p2, res.aggregated);
  }
  res.disparity = wta(res.aggregated);
  return res;
}

std::vector<double> soft_refine(const CostVolume& agg, const std::vector<int>& disp, std::size_t window,
                                double temperature) {
  if (window == 0) throw ConfigError("soft_refine window must be >= 1");
  if (window >= agg.dmax) throw ConfigError("soft_refine window exceeds the disparity range");
  if (!(temperature > 0.0)) throw ConfigError("soft_refine temperature must be positive");
  if (disp.size() != agg.rows * agg.cols) throw ShapeError("soft_refine: disparity grid shape mismatch");
  std::vector<double> out(disp.size());
  for (std::size_t i = 0; i < disp.size(); ++i) {
    const auto d0 = static_cast<std::size_t>(disp[i]);
    const double* s = agg.cost.data() + i * agg.dmax;
    const std::size_t lo = d0 >= window ? d0 - window : 0;
    const std::size_t hi = std::min(agg.dmax - 1, d0 + window);
    double smin = kInvalidCost;
    for (std::size_t d = lo; d <= hi; ++d) smin = std::min(smin, s[d]);
    double wsum = 0.0, dsum = 0.0;
    if (std::isfinite(smin)) {
      for (std::size_t d = lo; d <= hi; ++d) {
        if (!std::isfinite(s[d])) continue;
        const double w = std::exp(-(s[d] - smin) / temperature);
        wsum += w;
        dsum += w * static_cast<double>(d);
      }
    }
    const double center = static_cast<double>(d0);
    const double e = wsum > 0.0 ? dsum / wsum : center;
    out[i] = std::clamp(e, center - 0.5, center + 0.5);
  }
  return out;
}

LrCheck lr_check(const std::vector<double>& dl, const std::vector<double>& dr, std::size_t rows, std::size_t cols,
                 double tol) {
  if (dl.size() != rows * cols || dr.size() != rows * cols) throw ShapeError("lr_check: grid shape mismatch");
  LrCheck out;
  out.valid.assign(rows * cols, 0);
  std::size_t kept = 0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t p = 0; p < cols; ++p) {
      const double d = dl[r * cols + p];
      const double q = static_cast<double>(p) - std::round(d);
      if (q < 0.0 || q >= static_cast<double>(cols)) continue;
      const auto pq = static_cast<std::size_t>(q);
      if (std::abs(d - dr[r * cols + pq]) <= tol) {
        out.valid[r * cols + p] = 1;
        ++kept;
      }
    }
  out.keep = rows * cols == 0 ? 0.0 : 100.0 * static_cast<double>(kept) / static_cast<double>(rows * cols);
  return out;
}

DisparityErrors disparity_metrics(const std::vector<double>& pred, const DisparityGrid& gt, double token_px) {
  if (pred.size() != gt.rows * gt.cols) throw ShapeError("disparity_metrics: grid shape mismatch");
  if (!(token_px > 0.0)) throw ConfigError("disparity_metrics: token_px must be positive");
  DisparityErrors e;
  std::size_t bad = 0, d1 = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!gt.valid[i]) continue;
    const double g = gt.disp_px[i];
    const double err_px = std::abs(pred[i] * token_px - g);
    const double err_tok = std::abs(pred[i] - g / token_px);
    sum += err_px;
    bad += err_tok > 1.0 ? 1 : 0;
    d1 += err_px >= std::max(3.0, 0.05 * g) ? 1 : 0;
    ++e.count;
  }
  if (e.count == 0) throw DataError("disparity_metrics: no valid cells");
  const double n = static_cast<double>(e.count);
  e.epe_px = sum / n;
  e.bad1tok = 100.0 * static_cast<double>(bad) / n;
  e.d1 = 100.0 * static_cast<double>(d1) / n;
  return e;
}

StereoOutput run_stereo(const DescriptorMap& left, const DescriptorMap& right, const StereoParams& prm) {
  const std::size_t dmax = std::min(prm.dmax, left.cols);
  const CostVolume vol = build_cost_volume(left, right, dmax);
  StereoOutput out;
  out.wta = wta(vol);
  const SgmResult sl = sgm(vol, prm.p1, prm.p2);
  out.sgm = sl.disparity;
  const std::size_t window = std::min(prm.refine_window, dmax > 1 ? dmax - 1 : std::size_t{1});
  if (dmax > 1) {
    out.refined = soft_refine(sl.aggregated, sl.disparity, window, prm.refine_temperature);
    const SgmResult sr = sgm(mirror_volume(vol), prm.p1, prm.p2);
    out.refined_right = soft_refine(sr.aggregated, sr.disparity, window, prm.refine_temperature);
  } else {
    out.refined.assign(sl.disparity.begin(), sl.disparity.end());
    out.refined_right = out.refined;
  }
  out.lr = lr_check(out.refined, out.refined_right, left.rows, left.cols, prm.lr_tol);
  return out;
}

std::vector<float> pair_collapse_feature(const Tensor& tokens, const TokenGridGeometry& geom, std::size_t r,
                                         std::size_t p) {
  if (tokens.rank() != 2 || tokens.dim(0) != geom.token_count())
    throw ShapeError("pair_collapse_feature: token grid does not match the geometry");
  if (r >= geom.token_rows() || p >= geom.patch_cols()) throw ShapeError("pair_collapse_feature: cell off-grid");
  const std::size_t d = tokens.dim(1);
  const auto [c0, c1] = geom.phase_pair(p);
  const float* a = tokens.ptr() + (r * geom.fused_cols() + c0) * d;
  const float* b = tokens.ptr() + (r * geom.fused_cols() + c1) * d;
  std::vector<float> u(4 * d);
  for (std::size_t j = 0; j < d; ++j) {
    u[j] = a[j];
    u[d + j] = b[j];
    u[2 * d + j] = std::abs(a[j] - b[j]);
    u[3 * d + j] = a[j] * b[j];
  }
  return u;
}

}  // namespace bino
