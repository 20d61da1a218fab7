#include <numeric>

#include "bino/errors.hpp"
#include "bino/stereo_probe.hpp"
#include "bino/synthbench.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace bino;

namespace {

DescriptorMap random_map(std::size_t rows, std::size_t cols, std::size_t dim, Rng& rng) {
  DescriptorMap m;
  m.rows = rows;
  m.cols = cols;
  m.dim = dim;
  m.normalized = true;
  m.desc.resize(rows * cols * dim);
  for (std::size_t i = 0; i < rows * cols; ++i) {
    double n = 0.0;
    float* v = m.desc.data() + i * dim;
    for (std::size_t j = 0; j < dim; ++j) {
      v[j] = static_cast<float>(uniform(rng, -1, 1));
      n += double(v[j]) * v[j];
    }
    for (std::size_t j = 0; j < dim; ++j) v[j] = static_cast<float>(v[j] / std::sqrt(n));
  }
  return m;
}

CostVolume random_volume(std::size_t rows, std::size_t cols, std::size_t dmax, Rng& rng) {
  CostVolume v(rows, cols, dmax);
  for (double& c : v.cost) c = uniform(rng, 0, 2);
  return v;
}

oracle::Volume to_oracle(const CostVolume& v) { return {v.rows, v.cols, v.dmax, v.cost}; }

}  // namespace

TEST_SUITE("stereo") {

TEST_CASE("phase averaging and descriptor export") {
  TokenGridGeometry g;
  g.image_h = 8;
  g.image_w = 16;
  const std::size_t d = 3;
  Tensor t({g.token_count(), d});
  for (std::size_t n = 0; n < g.token_count(); ++n)
    for (std::size_t j = 0; j < d; ++j) t.at(n, j) = static_cast<float>((n / 2) * 10 + j);
  const DescriptorMap m = phase_average(t, g, false);
  CHECK(m.rows == 2);
  CHECK(m.cols == 4);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t p = 0; p < 4; ++p)
      for (std::size_t j = 0; j < d; ++j) CHECK(m.at(r, p)[j] == t.at(r * 8 + 2 * p, j));

  EncoderConfig cfg;
  cfg.depth = 1;
  cfg.dim = 16;
  cfg.heads = 2;
  Rng rng(1);
  const ParamSet params = init_encoder(cfg, rng);
  Image img(3, 48, 160);
  for (float& v : img.data) v = static_cast<float>(uniform(rng, 0, 1));
  const DescriptorMap a = export_descriptors(params, cfg, img);
  CHECK(a.rows == 12);
  CHECK(a.cols == 40);
  CHECK(a.dim == 16);
  CHECK(a.normalized);
  for (std::size_t i = 0; i < a.rows * a.cols; ++i) {
    double n = 0;
    for (std::size_t j = 0; j < a.dim; ++j) n += double(a.desc[i * a.dim + j]) * a.desc[i * a.dim + j];
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-5));
  }
  CHECK(export_descriptors(params, cfg, img).desc == a.desc);
  CHECK_THROWS_AS(export_descriptors(params, cfg, Image(3, 40, 160)), ShapeError);
}

TEST_CASE("cost volume") {
  Rng rng(2);
  const DescriptorMap l = random_map(3, 7, 5, rng), r = random_map(3, 7, 5, rng);
  const CostVolume self = build_cost_volume(l, l, 4);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t p = 0; p < 7; ++p) CHECK(self.at(i, p, 0) == doctest::Approx(0.0).epsilon(1e-6));

  const CostVolume v = build_cost_volume(l, r, 4);
  for (int t = 0; t < 20; ++t) {
    const auto i = static_cast<std::size_t>(uniform_int(rng, 0, 2));
    const auto p = static_cast<std::size_t>(uniform_int(rng, 0, 6));
    const auto d = static_cast<std::size_t>(uniform_int(rng, 0, 3));
    if (p < d) {
      CHECK(v.at(i, p, d) == kInvalidCost);
      continue;
    }
    double dot = 0;
    for (std::size_t j = 0; j < 5; ++j) dot += double(l.at(i, p)[j]) * r.at(i, p - d)[j];
    CHECK(v.at(i, p, d) == doctest::Approx(1.0 - dot).epsilon(1e-9));
  }

  DescriptorMap e1, e2;
  e1.rows = e2.rows = 1;
  e1.cols = e2.cols = 1;
  e1.dim = e2.dim = 2;
  e1.desc = {1, 0};
  e2.desc = {0, 1};
  CHECK(build_cost_volume(e1, e2, 1).at(0, 0, 0) == 1.0);
  CHECK_THROWS_AS(build_cost_volume(l, r, 8), ConfigError);
  CHECK_THROWS_AS(build_cost_volume(l, r, 0), ConfigError);
}

TEST_CASE("mirror volume convention") {
  Rng rng(3);
  const CostVolume v = build_cost_volume(random_map(2, 6, 4, rng), random_map(2, 6, 4, rng), 3);
  const CostVolume m = mirror_volume(v);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t p = 0; p < 6; ++p)
      for (std::size_t d = 0; d < 3; ++d) CHECK(m.at(r, p, d) == (p + d < 6 ? v.at(r, p + d, d) : kInvalidCost));
}

TEST_CASE("winner take all") {
  CostVolume v(1, 3, 4);
  std::fill(v.cost.begin(), v.cost.end(), 1.0);
  v.at(0, 0, 2) = 0.0;
  v.at(0, 1, 3) = 0.0;
  CHECK(wta(v) == std::vector<int>{2, 3, 0});
  Rng rng(4);
  for (int t = 0; t < 10; ++t) {
    const CostVolume r = random_volume(3, 5, 4, rng);
    CHECK(wta(r) == oracle::argmin_scan(to_oracle(r)));
  }
}

TEST_CASE("sgm hand example") {
  CostVolume v(1, 3, 2);
  const double c[3][2] = {{1, 3}, {2, 1}, {4, 0}};
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t d = 0; d < 2; ++d) v.at(0, p, d) = c[p][d];
  const SgmResult s = sgm(v, 1.0, 3.0);
  const double want[3][2] = {{5, 12}, {9, 5}, {16, 0}};
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t d = 0; d < 2; ++d) CHECK(s.aggregated.at(0, p, d) == want[p][d]);
  CHECK(s.disparity == std::vector<int>{0, 1, 1});
}

TEST_CASE("sgm without penalties is winner take all") {
  Rng rng(5);
  for (int t = 0; t < 10; ++t) {
    const CostVolume v = random_volume(4, 6, 5, rng);
    CHECK(sgm(v, 0.0, 0.0).disparity == wta(v));
  }
  CHECK_THROWS_AS(sgm(random_volume(2, 2, 2, rng), 0.5, 0.1), ConfigError);
  CHECK_THROWS_AS(sgm(random_volume(2, 2, 2, rng), -1.0, 0.1), ConfigError);
}

TEST_CASE("sgm equals the brute-force recursion") {
  Rng rng(6);
  for (int t = 0; t < 30; ++t) {
    const auto rows = static_cast<std::size_t>(uniform_int(rng, 1, 6));
    const auto cols = static_cast<std::size_t>(uniform_int(rng, 1, 8));
    const auto dmax = static_cast<std::size_t>(uniform_int(rng, 1, std::min<std::int64_t>(6, cols)));
    const double p1 = uniform(rng, 0, 0.5), p2 = p1 + uniform(rng, 0, 1);
    // odd trials use a real cost volume, with infinite entries at the left border
    const CostVolume v = t % 2 ? build_cost_volume(random_map(rows, cols, 4, rng), random_map(rows, cols, 4, rng), dmax)
                               : random_volume(rows, cols, dmax, rng);
    const SgmResult s = sgm(v, p1, p2);
    const oracle::Volume o = oracle::sgm_aggregate(to_oracle(v), p1, p2);
    CHECK(s.aggregated.cost == o.v);
    CHECK(s.disparity == oracle::argmin_scan(o));
  }
  const CostVolume v = random_volume(4, 6, 5, rng);
  const oracle::Volume o = oracle::sgm_aggregate(to_oracle(v), 0.1, 0.8);
  CHECK(sgm(v, 0.1, 0.8).aggregated.cost == o.v);
}

TEST_CASE("soft refinement") {
  CostVolume v(1, 1, 6);
  std::fill(v.cost.begin(), v.cost.end(), 5.0);
  v.at(0, 0, 2) = 1.0;
  v.at(0, 0, 3) = 0.0;
  v.at(0, 0, 4) = 1.0;
  CHECK(soft_refine(v, {3}, 1, 1.0)[0] == doctest::Approx(3.0));
  CHECK(soft_refine(v, {3}, 2, 1.0)[0] == doctest::Approx(3.0));

  CostVolume b(1, 1, 4);
  b.cost = {0.0, 0.5, 1.0, 2.0};
  const double e = soft_refine(b, {0}, 2, 1.0)[0];
  CHECK(e >= 0.0);
  CHECK(e <= 2.0);
  const double w0 = 1, w1 = std::exp(-0.5), w2 = std::exp(-1.0);
  CHECK(e == doctest::Approx(std::min(0.5, (w1 + 2 * w2) / (w0 + w1 + w2))));

  Rng rng(7);
  const CostVolume r = random_volume(3, 4, 5, rng);
  const SgmResult s = sgm(r, 0.1, 0.8);
  const auto refined = soft_refine(s.aggregated, s.disparity, 2, 0.3);
  for (std::size_t i = 0; i < refined.size(); ++i) CHECK(std::abs(refined[i] - s.disparity[i]) <= 0.5);
  CHECK_THROWS_AS(soft_refine(r, s.disparity, 0), ConfigError);
  CHECK_THROWS_AS(soft_refine(r, s.disparity, 5), ConfigError);
}

TEST_CASE("left right check") {
  Rng rng(8);
  const DescriptorMap m = random_map(3, 8, 6, rng);
  const StereoOutput o = run_stereo(m, m, StereoParams{4, 0.1, 0.8, 2, 0.1, 1.0});
  for (int d : o.sgm) CHECK(d == 0);
  CHECK(o.lr.keep == 100.0);

  const std::vector<double> zero(24, 0.0), two(24, 2.0);
  CHECK(lr_check(zero, two, 3, 8, 1.0).keep == 0.0);

  for (int t = 0; t < 10; ++t) {
    std::vector<double> dl(24), dr(24);
    for (auto& x : dl) x = uniform(rng, 0, 4);
    for (auto& x : dr) x = uniform(rng, 0, 4);
    const double tol = uniform(rng, 0.2, 1.5);
    const LrCheck c = lr_check(dl, dr, 3, 8, tol);
    std::size_t kept = 0;
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t p = 0; p < 8; ++p) {
        const long q = static_cast<long>(p) - std::lround(dl[r * 8 + p]);
        const bool ok = q >= 0 && q < 8 && std::fabs(dl[r * 8 + p] - dr[r * 8 + static_cast<std::size_t>(q)]) <= tol;
        CHECK(bool(c.valid[r * 8 + p]) == ok);
        kept += ok;
      }
    CHECK(c.keep == doctest::Approx(100.0 * kept / 24.0));
    CHECK(c.keep >= 0.0);
    CHECK(c.keep <= 100.0);
  }
}

TEST_CASE("stereo on a true translation recovers the shift") {
  Rng rng(9);
  const DescriptorMap l = random_map(4, 20, 8, rng);
  DescriptorMap r = l;
  const std::size_t k = 3;
  // right(p) = left(p + k); unmatched tail keeps random content
  const DescriptorMap noise = random_map(4, 20, 8, rng);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t p = 0; p < 20; ++p)
      std::copy_n(p + k < 20 ? l.at(i, p + k) : noise.at(i, p), 8, r.at(i, p));
  const StereoOutput o = run_stereo(l, r, StereoParams{6, 0.1, 0.8, 2, 0.1, 1.0});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t p = k; p < 20; ++p) {
      CHECK(o.wta[i * 20 + p] == static_cast<int>(k));
      CHECK(o.refined[i * 20 + p] == doctest::Approx(k).epsilon(0.02));
    }
}

TEST_CASE("disparity metrics") {
  const DisparityGrid g = constant_disparity(2, 6, 2, 4);
  const std::vector<double> perfect(12, 2.0);
  const DisparityErrors p = disparity_metrics(perfect, g, 4.0);
  CHECK(p.epe_px == 0.0);
  CHECK(p.bad1tok == 0.0);
  CHECK(p.d1 == 0.0);

  DisparityGrid g2 = constant_disparity(2, 6, 5, 2);  // gt 10 px
  const std::vector<double> off(12, 6.5);
  const DisparityErrors e = disparity_metrics(off, g2, 2.0);
  CHECK(e.epe_px == doctest::Approx(3.0));
  CHECK(e.bad1tok == 100.0);
  CHECK(e.d1 == 100.0);

  Rng rng(10);
  for (int t = 0; t < 10; ++t) {
    DisparityGrid gg;
    gg.rows = 4;
    gg.cols = 5;
    std::vector<double> pred(20), gt_tok(20);
    std::vector<int> valid(20);
    for (std::size_t i = 0; i < 20; ++i) {
      gt_tok[i] = static_cast<double>(uniform_int(rng, 0, 30));
      gg.disp_px.push_back(static_cast<float>(gt_tok[i] * 4));
      valid[i] = i < 3 || coin(rng);
      gg.valid.push_back(static_cast<std::uint8_t>(valid[i]));
      pred[i] = gt_tok[i] + uniform(rng, -3, 3);
    }
    const DisparityErrors m = disparity_metrics(pred, gg, 4.0);
    double n = 0, epe = 0, bad = 0, d1 = 0;
    for (std::size_t i = 0; i < 20; ++i) {
      if (!valid[i]) continue;
      const double err = std::fabs(pred[i] - gt_tok[i]) * 4.0;
      n += 1;
      epe += err;
      bad += err / 4.0 > 1.0;
      d1 += err >= std::max(3.0, 0.05 * gt_tok[i] * 4.0);
    }
    CHECK(m.epe_px == doctest::Approx(epe / n));
    CHECK(m.bad1tok == doctest::Approx(100 * bad / n));
    CHECK(m.d1 == doctest::Approx(100 * d1 / n));
    // complement of PCK@1 on the same valid set
    CHECK(m.bad1tok == doctest::Approx(100.0 - score_matching(pred, gg, 4).pck1));
  }
  DisparityGrid none = g;
  std::fill(none.valid.begin(), none.valid.end(), 0);
  CHECK_THROWS_AS(disparity_metrics(perfect, none, 4.0), DataError);
}

TEST_CASE("pair collapse feature") {
  TokenGridGeometry g;
  g.image_h = 4;
  g.image_w = 8;
  const std::size_t d = 3;
  Tensor t({g.token_count(), d});
  const std::vector<float> v{0.5f, -2.0f, 3.0f};
  for (std::size_t j = 0; j < d; ++j) {
    t.at(2, j) = v[j];
    t.at(3, j) = v[j];
  }
  const auto u = pair_collapse_feature(t, g, 0, 1);
  REQUIRE(u.size() == 4 * d);
  for (std::size_t j = 0; j < d; ++j) {
    CHECK(u[j] == v[j]);
    CHECK(u[d + j] == v[j]);
    CHECK(u[2 * d + j] == 0.0f);
    CHECK(u[3 * d + j] == v[j] * v[j]);
  }
  for (float x : pair_collapse_feature(t, g, 0, 0)) CHECK(x == 0.0f);
}

TEST_CASE("retrieval") {
  Rng rng(11);
  const std::size_t n = 8;
  std::vector<std::vector<float>> eye(n, std::vector<float>(n, 0.0f));
  for (std::size_t i = 0; i < n; ++i) eye[i][i] = 1.0f;
  const RetrievalResult ok = retrieval_eval(eye, eye, 4, rng);
  CHECK(ok.top1 == 100.0);
  CHECK(ok.hard1 == 100.0);
  CHECK(ok.margin == doctest::Approx(1.0));

  const std::vector<std::vector<float>> same(n, std::vector<float>{0.6f, 0.8f});
  const RetrievalResult tie = retrieval_eval(same, same, 4, rng);
  CHECK(tie.margin == doctest::Approx(0.0));
  CHECK(tie.top1 == doctest::Approx(100.0 / n));
  CHECK(tie.top5 == doctest::Approx(100.0 * 5 / n));

  CHECK_THROWS_AS(retrieval_eval({eye[0]}, {eye[0]}, 1, rng), DataError);
}

TEST_CASE("retrieval equals an exhaustive similarity matrix") {
  Rng rng(12);
  const std::size_t n = 10, d = 6;
  std::vector<std::vector<float>> l(n, std::vector<float>(d)), r = l;
  for (auto* set : {&l, &r})
    for (auto& v : *set) {
      double s = 0;
      for (float& x : v) s += double(x = static_cast<float>(uniform(rng, -1, 1))) * x;
      for (float& x : v) x = static_cast<float>(x / std::sqrt(s));
    }
  // subset = n - 1 means every negative is mined, so Hard@k equals Top@k
  Rng a(1);
  const RetrievalResult res = retrieval_eval(l, r, n - 1, a);
  double top1 = 0, top5 = 0, margin = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> sim(n);
    for (std::size_t j = 0; j < n; ++j) {
      sim[j] = 0;
      for (std::size_t k = 0; k < d; ++k) sim[j] += double(l[i][k]) * r[j][k];
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return sim[x] > sim[y]; });
    const auto rank = static_cast<std::size_t>(std::find(order.begin(), order.end(), i) - order.begin()) + 1;
    top1 += rank <= 1;
    top5 += rank <= 5;
    double hardest = -1e9;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) hardest = std::max(hardest, sim[j]);
    margin += sim[i] - hardest;
  }
  CHECK(res.top1 == doctest::Approx(100 * top1 / n));
  CHECK(res.top5 == doctest::Approx(100 * top5 / n));
  CHECK(res.hard1 == doctest::Approx(100 * top1 / n));
  CHECK(res.hard5 == doctest::Approx(100 * top5 / n));
  CHECK(res.margin == doctest::Approx(margin / n).epsilon(1e-6));
  CHECK(res.subset == n - 1);

  Rng b(2);
  const RetrievalResult small = retrieval_eval(l, r, 3, b);
  CHECK(small.subset == 3);
  CHECK(small.hard1 >= res.top1);
  CHECK(small.margin >= res.margin - 1e-9);
}

TEST_CASE("mean pooling normalizes") {
  Rng rng(13);
  const DescriptorMap m = random_map(2, 3, 4, rng);
  const auto v = mean_pool(m);
  double s = 0;
  for (float x : v) s += double(x) * x;
  CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-6));
}

}  // TEST_SUITE
