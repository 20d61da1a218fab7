#include <algorithm>
#include <cmath>
#include <numeric>

#include "bino/errors.hpp"
#include "bino/kernels.hpp"
#include "bino/stereo_probe.hpp"

namespace bino {

std::vector<float> mean_pool(const DescriptorMap& m) {
  std::vector<double> acc(m.dim, 0.0);
  const std::size_t cells = m.rows * m.cols;
  for (std::size_t i = 0; i < cells; ++i)
    for (std::size_t j = 0; j < m.dim; ++j) acc[j] += m.desc[i * m.dim + j];
  std::vector<float> out(m.dim);
  for (std::size_t j = 0; j < m.dim; ++j) out[j] = static_cast<float>(acc[j] / static_cast<double>(cells));
  const double norm = std::sqrt(kernels::sum_squares(out.data(), out.size()));
  if (norm > 0.0)
    for (float& v : out) v = static_cast<float>(v / norm);
  return out;
}

namespace {
// 1-based rank of `pos` among `cands` (which contains it): higher similarity
// first, equal similarity by index.
std::size_t rank_of(const std::vector<double>& sims, const std::vector<std::size_t>& cands, std::size_t pos) {
  std::size_t rank = 1;
  for (std::size_t j : cands) {
    if (j == pos) continue;
    if (sims[j] > sims[pos] || (sims[j] == sims[pos] && j < pos)) ++rank;
  }
  return rank;
}
}  // namespace

RetrievalResult retrieval_eval(const std::vector<std::vector<float>>& left, const std::vector<std::vector<float>>& right,
                               std::size_t hard_subset_size, Rng& rng) {
  const std::size_t n = left.size();
  if (n < 2) throw DataError("retrieval needs at least two pairs");
  if (right.size() != n) throw ShapeError("retrieval: left and right sets differ in size");
  if (hard_subset_size == 0) throw ConfigError("retrieval: hard subset must be non-empty");
  RetrievalResult res;
  res.n = n;
  res.subset = std::min(hard_subset_size, n - 1);
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  std::size_t top1 = 0, top5 = 0, hard1 = 0, hard5 = 0;
  double margin = 0.0;
  std::vector<double> sims(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (right[j].size() != left[i].size()) throw ShapeError("retrieval: descriptor lengths differ");
      sims[j] = kernels::dot(left[i].data(), right[j].data(), left[i].size());
    }
    const std::size_t r_all = rank_of(sims, all, i);
    top1 += r_all <= 1;
    top5 += r_all <= 5;

    std::vector<std::size_t> negatives;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) negatives.push_back(j);
    // Partial Fisher-Yates for the random subset.
    for (std::size_t k = 0; k < res.subset; ++k) {
      const auto pick = static_cast<std::size_t>(
          uniform_int(rng, static_cast<std::int64_t>(k), static_cast<std::int64_t>(negatives.size()) - 1));
      std::swap(negatives[k], negatives[pick]);
    }
    negatives.resize(res.subset);
    std::sort(negatives.begin(), negatives.end());
    double hardest = -INFINITY;
    for (std::size_t j : negatives) hardest = std::max(hardest, sims[j]);
    std::vector<std::size_t> cands = negatives;
    cands.push_back(i);
    const std::size_t r_hard = rank_of(sims, cands, i);
    hard1 += r_hard <= 1;
    hard5 += r_hard <= 5;
    margin += sims[i] - hardest;
  }
  const double dn = static_cast<double>(n);
  res.top1 = 100.0 * static_cast<double>(top1) / dn;
  res.top5 = 100.0 * static_cast<double>(top5) / dn;
  res.hard1 = 100.0 * static_cast<double>(hard1) / dn;
  res.hard5 = 100.0 * static_cast<double>(hard5) / dn;
  res.margin = margin / dn;
  return res;
}

}  // namespace bino
