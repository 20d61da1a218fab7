#include <set>
#include <numeric>

#include "bino/errors.hpp"
#include "bino/mech_probe.hpp"
#include "bino/synthbench.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace bino;

namespace {

TokenGridGeometry grid(std::size_t h, std::size_t w) {
  TokenGridGeometry g;
  g.image_h = h;
  g.image_w = w;
  return g;
}

std::vector<double> random_dist(std::size_t n, Rng& rng, double sharp = 3.0) {
  std::vector<double> p(n);
  double s = 0;
  for (double& x : p) s += (x = std::exp(sharp * uniform(rng, -1, 1)));
  for (double& x : p) x /= s;
  return p;
}

}  // namespace

TEST_SUITE("mech") {

TEST_CASE("identical tokens give a uniform distribution") {
  const TokenGridGeometry g = grid(16, 32);
  Tensor t({g.token_count(), 4}, 0.5f);
  const PhaseSimilarity d = phase_distribution(t, g, 0.07);
  const std::size_t n = g.token_rows() * g.patch_cols();
  CHECK(d.prob.size() == n * n);
  for (double x : d.prob) CHECK(x == doctest::Approx(1.0 / n).epsilon(1e-12));
  const GeometryMetrics m = query_metrics(d.query(1, 3), d.rows, d.cols, GridTarget{1, 3});
  CHECK(m.row_conc == doctest::Approx(1.0 / g.token_rows()).epsilon(1e-9));
}

TEST_CASE("low temperature gives a one-hot argmax") {
  // odd tokens are one-hot directions; each even query copies one of them
  const TokenGridGeometry g = grid(8, 16);
  const std::size_t n = g.token_rows() * g.patch_cols(), fc = g.fused_cols();
  Tensor t({g.token_count(), n});
  Rng rng(1);
  std::vector<std::size_t> pick(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t r = k / g.patch_cols(), p = k % g.patch_cols();
    t.at(r * fc + 2 * p + 1, k) = 1.0f;
    pick[k] = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(n) - 1));
    t.at(r * fc + 2 * p, pick[k]) = 1.0f;
  }
  const PhaseSimilarity d = phase_distribution(t, g, 1e-3);
  for (std::size_t q = 0; q < n; ++q) {
    const double* p = d.prob.data() + q * n;
    CHECK(p[pick[q]] == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("distributions are normalized") {
  const TokenGridGeometry g = grid(16, 32);
  Rng rng(2);
  Tensor t({g.token_count(), 8});
  for (float& v : t.data()) v = static_cast<float>(uniform(rng, -1, 1));
  const PhaseSimilarity d = phase_distribution(t, g, 0.07);
  const std::size_t n = d.rows * d.cols;
  for (std::size_t q = 0; q < n; ++q) {
    double s = 0;
    for (std::size_t j = 0; j < n; ++j) {
      CHECK(d.prob[q * n + j] >= 0.0);
      s += d.prob[q * n + j];
    }
    CHECK(std::abs(s - 1.0) <= 1e-6);
  }
}

TEST_CASE("phase distribution equals a direct cosine softmax") {
  const TokenGridGeometry g = grid(8, 16);
  Rng rng(3);
  const std::size_t dim = 5;
  Tensor t({g.token_count(), dim});
  for (float& v : t.data()) v = static_cast<float>(uniform(rng, -1, 1));
  const double tau = 0.2;
  const PhaseSimilarity d = phase_distribution(t, g, tau);
  const std::size_t fc = g.fused_cols(), n = d.rows * d.cols;
  auto tok = [&](std::size_t r, std::size_t c) { return t.ptr() + (r * fc + c) * dim; };
  auto cosine = [&](const float* a, const float* b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < dim; ++i) {
      ab += double(a[i]) * b[i];
      aa += double(a[i]) * a[i];
      bb += double(b[i]) * b[i];
    }
    return ab / std::sqrt(aa * bb);
  };
  for (std::size_t r = 0; r < d.rows; ++r)
    for (std::size_t p = 0; p < d.cols; ++p) {
      std::vector<double> e(n);
      double z = 0;
      for (std::size_t r2 = 0; r2 < d.rows; ++r2)
        for (std::size_t p2 = 0; p2 < d.cols; ++p2)
          z += (e[r2 * d.cols + p2] = std::exp(cosine(tok(r, 2 * p), tok(r2, 2 * p2 + 1)) / tau));
      for (std::size_t j = 0; j < n; ++j) CHECK(d.query(r, p)[j] == doctest::Approx(e[j] / z).epsilon(1e-6));
    }
}

TEST_CASE("chance levels on the 12x40 grid") {
  const std::size_t rows = 12, cols = 40;
  const std::vector<double> u(rows * cols, 1.0 / (rows * cols));
  const GeometryMetrics m = query_metrics(u.data(), rows, cols, GridTarget{5, 20});
  CHECK(std::abs(m.row_conc - 1.0 / 12) <= 1e-6);
  CHECK(std::abs(m.gt_at_1 - 3.0 / 40) <= 1e-6);
  CHECK(m.entropy == doctest::Approx(std::log(40.0)).epsilon(1e-9));
  const GeometryMetrics edge = query_metrics(u.data(), rows, cols, GridTarget{5, 0});
  CHECK(edge.gt_at_1 == doctest::Approx(2.0 / 40));
}

TEST_CASE("one-hot at the target") {
  std::vector<double> p(12 * 40, 0.0);
  p[3 * 40 + 7] = 1.0;
  const GeometryMetrics m = query_metrics(p.data(), 12, 40, GridTarget{3, 7});
  CHECK(m.row_conc == 1.0);
  CHECK(m.gt_at_0 == 1.0);
  CHECK(m.gt_at_1 == 1.0);
  CHECK(m.mrr == 1.0);
  CHECK(m.entropy == 0.0);
  CHECK(m.acc_at_0 == 1.0);
  CHECK(m.acc_at_1 == 1.0);
}

TEST_CASE("metrics equal the scalar oracle") {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const auto rows = static_cast<std::size_t>(uniform_int(rng, 1, 6));
    const auto cols = static_cast<std::size_t>(uniform_int(rng, 1, 9));
    std::vector<double> p = random_dist(rows * cols, rng, t % 3 == 0 ? 0.0 : 4.0);
    if (t % 5 == 0) p[0] = p[rows * cols - 1];  // force ties
    const GridTarget tg{static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(rows) - 1)),
                        static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(cols) - 1))};
    const GeometryMetrics m = query_metrics(p.data(), rows, cols, tg);
    const oracle::Geo o = oracle::geometry(p, rows, cols, tg.r, tg.p);
    CHECK(std::abs(m.row_conc - o.row_conc) <= 1e-6);
    CHECK(std::abs(m.gt_at_0 - o.gt0) <= 1e-6);
    CHECK(std::abs(m.gt_at_1 - o.gt1) <= 1e-6);
    CHECK(std::abs(m.mrr - o.mrr) <= 1e-6);
    CHECK(std::abs(m.entropy - o.entropy) <= 1e-6);
    CHECK(m.acc_at_0 == o.acc0);
    CHECK(m.acc_at_1 == o.acc1);
    CHECK(m.gt_at_0 <= m.gt_at_1 + 1e-12);
    CHECK(m.entropy <= std::log(double(cols)) + 1e-9);
  }
}

TEST_CASE("metrics do not depend on candidate labelling") {
  // swapping two off-target rows (and two off-target columns within the target row's
  // complement) is a relabelling that leaves every metric unchanged
  Rng rng(5);
  const std::size_t rows = 4, cols = 6;
  for (int t = 0; t < 20; ++t) {
    const std::vector<double> p = random_dist(rows * cols, rng);
    const GridTarget tg{1, 2};
    std::vector<double> q = p;
    for (std::size_t c = 0; c < cols; ++c) std::swap(q[0 * cols + c], q[3 * cols + c]);
    const GeometryMetrics a = query_metrics(p.data(), rows, cols, tg), b = query_metrics(q.data(), rows, cols, tg);
    CHECK(a.row_conc == b.row_conc);
    CHECK(a.gt_at_1 == b.gt_at_1);
    CHECK(a.mrr == b.mrr);
    CHECK(a.entropy == b.entropy);
    CHECK(a.acc_at_1 == b.acc_at_1);
  }
}

TEST_CASE("aggregation over queries") {
  Rng rng(6);
  const std::size_t rows = 3, cols = 5;
  PhaseSimilarity d;
  d.rows = rows;
  d.cols = cols;
  for (std::size_t q = 0; q < rows * cols; ++q) {
    const auto p = random_dist(rows * cols, rng);
    d.prob.insert(d.prob.end(), p.begin(), p.end());
  }
  const auto targets = shift_targets(rows, cols, 2);
  CHECK_FALSE(targets[1].has_value());
  REQUIRE(targets[4].has_value());
  CHECK(targets[4]->p == 2);
  const GeometryMetrics m = geometry_metrics(d, targets);
  CHECK(m.queries == rows * (cols - 2));
  double rc = 0;
  for (std::size_t i = 0; i < targets.size(); ++i)
    if (targets[i]) rc += query_metrics(d.prob.data() + i * rows * cols, rows, cols, *targets[i]).row_conc;
  CHECK(m.row_conc == doctest::Approx(rc / m.queries));

  MetricAccumulator acc;
  acc.add(m);
  acc.add(m);
  CHECK(acc.mean().row_conc == doctest::Approx(m.row_conc));
  CHECK(acc.mean().queries == 2 * m.queries);
}

TEST_CASE("counterfactuals") {
  BenchConfig b = BenchConfig::for_preset(Preset::easy_s1);
  b.crop_h = 8;
  b.crop_w = 32;
  const TokenGridGeometry g = grid(8, 32);
  std::vector<ProbeSample> pool;
  for (const auto& s : generate(b, 4)) pool.push_back({s.pair, s.shift_tokens});
  Rng rng(7);

  const ProbeSample dup = apply_counterfactual(pool, 1, Counterfactual::duplicate_left, g, rng);
  CHECK(dup.pair.right == dup.pair.left);
  CHECK(dup.shift_tokens == 0);

  const ProbeSample rep = apply_counterfactual(pool, 2, Counterfactual::replace_right, g, rng);
  CHECK(rep.pair.left == pool[2].pair.left);
  CHECK_FALSE(rep.pair.right == pool[2].pair.right);
  CHECK(rep.shift_tokens == pool[2].shift_tokens);
  CHECK_THROWS_AS(apply_counterfactual({pool[0]}, 0, Counterfactual::replace_right, g, rng), DataError);

  std::vector<std::vector<std::size_t>> identity(g.token_rows(), std::vector<std::size_t>(g.patch_cols()));
  for (auto& p : identity) std::iota(p.begin(), p.end(), std::size_t{0});
  CHECK(permute_patch_columns(pool[0].pair.right, g, identity) == pool[0].pair.right);

  const std::size_t pitch = g.image_w / g.patch_cols();
  for (int t = 0; t < 10; ++t) {
    const ProbeSample sh = apply_counterfactual(pool, 0, Counterfactual::row_shuffle_right, g, rng);
    CHECK(sh.pair.left == pool[0].pair.left);
    CHECK(sh.shift_tokens == pool[0].shift_tokens);
    for (std::size_t r = 0; r < g.token_rows(); ++r) {
      auto cells = [&](const Image& img) {
        std::multiset<std::vector<float>> out;
        for (std::size_t p = 0; p < g.patch_cols(); ++p) {
          std::vector<float> cell;
          for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = r * g.patch_h; y < (r + 1) * g.patch_h; ++y)
              for (std::size_t x = p * pitch; x < (p + 1) * pitch; ++x) cell.push_back(img.at(c, y, x));
          out.insert(cell);
        }
        return out;
      };
      CHECK(cells(sh.pair.right) == cells(pool[0].pair.right));
    }
  }
  CHECK(parse_counterfactual("row-shuffle-right") == Counterfactual::row_shuffle_right);
  CHECK_THROWS_AS(parse_counterfactual("swap"), ConfigError);
}

TEST_CASE("layerwise sweep bookkeeping") {
  EncoderConfig cfg;
  cfg.depth = 0;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.geometry = grid(8, 32);
  Rng rng(8);
  const ParamSet params = init_encoder(cfg, rng);
  BenchConfig b = BenchConfig::for_preset(Preset::easy_s1);
  b.crop_h = 8;
  b.crop_w = 32;
  std::vector<ProbeSample> samples;
  for (const auto& s : generate(b, 2)) samples.push_back({s.pair, s.shift_tokens});
  const auto l0 = layerwise_sweep(params, cfg, samples, 0.07);
  REQUIRE(l0.size() == 3);
  CHECK(l0[0].name == "layer0_raw");
  CHECK(l0[1].name == "final_raw");
  CHECK(l0[2].name == "final_depos");
  CHECK(l0[0].metrics.gt_at_1 == l0[1].metrics.gt_at_1);
  CHECK(l0[0].metrics.row_conc == l0[1].metrics.row_conc);

  cfg.depth = 2;
  const ParamSet p2 = init_encoder(cfg, rng);
  const auto l2 = layerwise_sweep(p2, cfg, samples, 0.07);
  REQUIRE(l2.size() == 5);
  CHECK(l2[2].name == "layer2_raw");
  for (const auto& l : l2) {
    CHECK(l.metrics.row_conc >= 0.0);
    CHECK(l.metrics.row_conc <= 1.0);
    CHECK(l.metrics.queries > 0);
  }
}

}  // TEST_SUITE
