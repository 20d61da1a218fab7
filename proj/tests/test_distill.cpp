#include <algorithm>

#include "bino/distill.hpp"
#include "bino/errors.hpp"
#include "bino/synthbench.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace bino;

namespace {

EncoderConfig tiny_encoder() {
  EncoderConfig e;
  e.depth = 1;
  e.dim = 16;
  e.heads = 2;
  e.ffn_ratio = 2;
  e.geometry.image_h = 8;
  e.geometry.image_w = 16;
  return e;
}

DistillConfig tiny_distill() {
  DistillConfig d;
  d.proj_dim = 16;
  d.head_hidden = 16;
  d.steps = 20;
  d.batch = 2;
  d.optim.lr = 1e-3;
  return d;
}

std::vector<ImagePair> tiny_batch(std::size_t n, std::uint64_t seed) {
  BenchConfig b;
  b.crop_h = 8;
  b.crop_w = 16;
  b.d_min = 4;
  b.d_max = 8;
  b.seed = seed;
  std::vector<ImagePair> out;
  for (const auto& s : generate(b, n)) out.push_back(s.pair);
  return out;
}

Tensor random_logits(std::size_t n, std::size_t k, Rng& rng, double spread = 3.0) {
  Tensor t({n, k});
  for (float& v : t.data()) v = static_cast<float>(uniform(rng, -spread, spread));
  return t;
}

}  // namespace

TEST_SUITE("distill") {

TEST_CASE("schedules") {
  const MaskSchedule m{0.3, 0.7, 0.8};
  CHECK(mask_ratio_at(0, 100, m) == doctest::Approx(0.3));
  CHECK(mask_ratio_at(100, 100, m) == doctest::Approx(0.7));
  CHECK(mask_ratio_at(40, 100, m) == doctest::Approx(0.5));
  CHECK(mask_ratio_at(90, 100, m) == doctest::Approx(0.7));
  const MaskSchedule fixed{0.5, 0.5, 0.8};
  for (int s = 0; s <= 10; ++s) CHECK(mask_ratio_at(s, 10, fixed) == 0.5);
  CHECK(ema_momentum_at(0, 100, 0.996, 1.0) == doctest::Approx(0.996));
  CHECK(ema_momentum_at(100, 100, 0.996, 1.0) == doctest::Approx(1.0));
  CHECK(ema_momentum_at(50, 100, 0.996, 1.0) == doctest::Approx(0.998));
  CHECK(learning_rate_at(0, 100, 1e-3, 0) == doctest::Approx(1e-3));
  CHECK(learning_rate_at(100, 100, 1e-3, 0) == doctest::Approx(0.0));
  double prev = 1.0;
  for (int s = 0; s <= 100; ++s) {
    const double lr = learning_rate_at(s, 100, 1.0, 0);
    CHECK(lr <= prev + 1e-12);
    prev = lr;
  }
  CHECK(learning_rate_at(4, 100, 1.0, 10) < learning_rate_at(9, 100, 1.0, 10));
}

TEST_CASE("config validation and warnings") {
  DistillConfig d;
  CHECK_NOTHROW(d.validate());
  CHECK(d.warnings().empty());
  d.tau_t = 0.2;
  CHECK_FALSE(d.warnings().empty());
  d = DistillConfig{};
  d.center_momentum = 1.5;
  CHECK_THROWS_AS(d.validate(), ConfigError);
  d = DistillConfig{};
  d.nuisance.occlusion_area_max = 2.0;
  CHECK_THROWS_AS(d.validate(), ConfigError);
}

TEST_CASE("token head shapes and zero weights") {
  Rng rng(1);
  ParamSet p;
  add_token_head(p, 8, 6, 5, rng);
  Tape<float> tape;
  Tensor x({7, 8});
  for (float& v : x.data()) v = static_cast<float>(uniform(rng, -1, 1));
  {
    const ParamVars pv(tape, p, false);
    CHECK(token_head(pv, tape.input(x, false)).shape() == Shape{7, 5});
  }
  for (std::size_t i = 0; i < p.size(); ++i) p.tensor(i).fill(0.0f);
  const ParamVars pv(tape, p, false);
  const Tensor z = token_head(pv, tape.input(x, false)).value();
  for (float v : z.data()) CHECK(v == 0.0f);
}

TEST_CASE("loss closed forms") {
  Rng rng(2);
  const std::size_t n = 6, k = 5;
  const Tensor z = random_logits(n, k, rng);
  const Tensor mu({k});
  // equal logits at unit temperature: cross-entropy reduces to entropy
  double entropy = 0.0;
  const Tensor pt = teacher_distribution(z, mu, 1.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) entropy -= pt.at(i, j) * std::log(double(pt.at(i, j)));
  CHECK(distill_loss_value(z, z, mu, 1.0, 1.0) == doctest::Approx(entropy / n).epsilon(1e-6));

  Tensor onehot({1, 64}, -50.0f);
  onehot[3] = 50.0f;
  const Tensor flat({1, 64});
  CHECK(distill_loss_value(onehot, flat, Tensor({64}), 0.04, 0.1) == doctest::Approx(std::log(64.0)).epsilon(1e-6));
}

TEST_CASE("loss matches direct re-evaluation") {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const Tensor zt = random_logits(4, 3, rng), zs = random_logits(4, 3, rng), mu = random_logits(1, 3, rng, 0.5);
    const Tensor center = mu.reshaped({3});
    const double ref = oracle::distill_loss(zt, zs, center, 0.04, 0.1);
    CHECK(distill_loss_value(zt, zs, center, 0.04, 0.1) == doctest::Approx(ref).epsilon(1e-6));
    Tape<float> tape;
    const Var<float> l = distill_loss(tape.input(zs, false), teacher_distribution(zt, center, 0.04), 0.1);
    CHECK(l.value()[0] == doctest::Approx(ref).epsilon(1e-5));
  }
}

TEST_CASE("centering consistency and token order invariance") {
  Rng rng(4);
  const std::size_t n = 8, k = 6;
  const Tensor zt = random_logits(n, k, rng), zs = random_logits(n, k, rng);
  Tensor mu({k});
  for (float& v : mu.data()) v = static_cast<float>(uniform(rng, -1, 1));
  const double base = distill_loss_value(zt, zs, mu, 0.04, 0.1);
  Tensor zt2 = zt, mu2 = mu;
  for (std::size_t j = 0; j < k; ++j) {
    const float c = 0.5f * static_cast<float>(j) - 1.0f;
    mu2[j] += c;
    for (std::size_t i = 0; i < n; ++i) zt2.at(i, j) += c;
  }
  CHECK(distill_loss_value(zt2, zs, mu2, 0.04, 0.1) == doctest::Approx(base).epsilon(1e-5));

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor zt3({n, k}), zs3({n, k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      zt3.at(i, j) = zt.at(perm[i], j);
      zs3.at(i, j) = zs.at(perm[i], j);
    }
  CHECK(distill_loss_value(zt3, zs3, mu, 0.04, 0.1) == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("center update") {
  Rng rng(5);
  const Tensor mu = random_logits(1, 4, rng).reshaped({4});
  std::vector<Tensor> batch{random_logits(3, 4, rng), random_logits(5, 4, rng)};
  CHECK(update_center(mu, batch, 1.0) == mu);
  const Tensor m0 = update_center(mu, batch, 0.0);
  for (std::size_t j = 0; j < 4; ++j) {
    double s = 0.0;
    for (const auto& b : batch)
      for (std::size_t i = 0; i < b.shape()[0]; ++i) s += b.at(i, j);
    CHECK(m0[j] == doctest::Approx(s / 8.0).epsilon(1e-6));
  }
  Tensor c({4});
  std::vector<Tensor> constant{Tensor({2, 4}, 2.5f)};
  double gap = 2.5;
  for (int i = 0; i < 50; ++i) {
    c = update_center(c, constant, 0.9);
    const double g = std::abs(2.5 - c[0]);
    CHECK(g == doctest::Approx(gap * 0.9).epsilon(1e-4));
    gap = g;
  }
}

TEST_CASE("teacher update") {
  Rng rng(6);
  ParamSet t, s;
  t.add("w", random_logits(2, 3, rng));
  s.add("w", random_logits(2, 3, rng));
  ParamSet frozen = t;
  update_teacher(frozen, s, 1.0);
  CHECK(frozen == t);
  ParamSet copy = t;
  update_teacher(copy, s, 0.0);
  CHECK(copy == s);
  ParamSet mid = t;
  update_teacher(mid, s, 0.75);
  for (std::size_t i = 0; i < 6; ++i)
    CHECK(mid.at("w")[i] == doctest::Approx(0.75 * t.at("w")[i] + 0.25 * s.at("w")[i]).epsilon(1e-6));
  ParamSet other;
  other.add("w", Tensor({3, 2}));
  CHECK_THROWS_AS(update_teacher(mid, other, 0.5), ShapeError);
}

TEST_CASE("nuisance identity, shared mode and occlusion area") {
  Rng rng(7);
  BenchConfig b;
  b.crop_h = 16;
  b.crop_w = 32;
  const ImagePair pair = generate_with_shift(b, 0, 4).pair;
  const ImagePair same = apply_nuisance(pair, NuisanceConfig::none(), rng);
  CHECK(same.left == pair.left);
  CHECK(same.right == pair.right);

  NuisanceConfig shared = NuisanceConfig::none();
  shared.photometric = true;
  shared.photometric_mode = PhotometricMode::shared;
  const Image flat(3, 16, 32, 0.4f);
  for (int t = 0; t < 20; ++t) {
    const ImagePair out = apply_nuisance(ImagePair{flat, flat, std::nullopt}, shared, rng);
    CHECK(out.left == out.right);
  }
  NuisanceConfig indep = shared;
  indep.photometric_mode = PhotometricMode::independent;
  int differ = 0;
  for (int t = 0; t < 20; ++t) {
    const ImagePair out = apply_nuisance(ImagePair{flat, flat, std::nullopt}, indep, rng);
    differ += !(out.left == out.right);
  }
  CHECK(differ >= 18);

  Image ph(3, 1, 2);
  ph.data = {0.5f, 1.0f, 0.5f, 1.0f, 0.5f, 1.0f};
  apply_photometric(ph, {0.1, 1.2, 2.0});
  CHECK(ph.data[0] == doctest::Approx(0.49).epsilon(1e-6));
  CHECK(ph.data[1] == doctest::Approx(1.0));

  NuisanceConfig occ = NuisanceConfig::none();
  occ.occlusion = true;
  const std::size_t h = 48, w = 160;
  double sum = 0.0;
  const int draws = 1000;
  for (int i = 0; i < draws; ++i) {
    const Rect r = sample_occlusion(h, w, occ, rng);
    CHECK(r.y + r.h <= h);
    CHECK(r.x + r.w <= w);
    const double frac = double(r.h * r.w) / double(h * w);
    // rounding the rectangle to whole pixels moves the area by at most one row and one column
    const double slack = double(r.h + r.w + 1) / double(h * w);
    CHECK(frac >= occ.occlusion_area_min - slack);
    CHECK(frac <= occ.occlusion_area_max + slack);
    sum += frac;
  }
  CHECK(sum / draws >= occ.occlusion_area_min);
  CHECK(sum / draws <= occ.occlusion_area_max);
}

TEST_CASE("noise stays in range") {
  Rng rng(8);
  NuisanceConfig n = NuisanceConfig::none();
  n.noise = true;
  n.noise_sigma_min = 0.2;
  n.noise_sigma_max = 0.3;
  const ImagePair out = apply_nuisance(ImagePair{Image(3, 8, 8, 0.95f), Image(3, 8, 8, 0.05f), std::nullopt}, n, rng);
  for (float v : out.left.data) CHECK((v >= 0.0f && v <= 1.0f));
  for (float v : out.right.data) CHECK((v >= 0.0f && v <= 1.0f));
  CHECK_FALSE(out.left == Image(3, 8, 8, 0.95f));
}

TEST_CASE("init state") {
  const auto st = init_distill(tiny_encoder(), tiny_distill(), 3);
  CHECK(st.teacher == st.student);
  CHECK(st.student.contains("head.fc2.w"));
  CHECK(st.center.shape() == Shape{16});
  CHECK(st.step == 0);
  const auto again = init_distill(tiny_encoder(), tiny_distill(), 3);
  CHECK(again.student == st.student);
}

TEST_CASE("gradient reaches the encoder through the depositioned tokens") {
  const EncoderConfig enc = tiny_encoder();
  const DistillConfig dc = tiny_distill();
  auto st = init_distill(enc, dc, 4);
  for (std::size_t i = 0; i < st.student.size(); ++i)
    for (float& v : st.student.tensor(i).data()) v *= 10.0f;
  const auto batch = tiny_batch(1, 2);
  const FusedImage fused = fuse(batch[0], enc.geometry);
  Rng rng(9);
  const Tensor pt = teacher_distribution(random_logits(enc.geometry.token_count(), dc.proj_dim, rng), st.center, 1.0);
  auto loss = [&](const ParamSet& ps, std::size_t* grad_index, double* grad) {
    Tape<float> tape;
    const ParamVars pv(tape, ps, true);
    const EncoderVars ev = encoder_forward(tape, pv, fused, enc);
    const Var<float> l = distill_loss(token_head(pv, ev.depos), pt, 1.0);
    if (grad) {
      tape.backward(l);
      const Tensor& g = pv["patch.w"].grad();
      std::size_t best = 0;
      for (std::size_t i = 0; i < g.size(); ++i)
        if (std::abs(g[i]) > std::abs(g[best])) best = i;
      *grad_index = best;
      *grad = g[best];
    }
    return static_cast<double>(l.value()[0]);
  };
  std::size_t idx = 0;
  double analytic = 0.0;
  loss(st.student, &idx, &analytic);
  CHECK(analytic != 0.0);
  const float h = 1e-2f;
  ParamSet up = st.student, dn = st.student;
  up.at("patch.w")[idx] += h;
  dn.at("patch.w")[idx] -= h;
  const double numeric = (loss(up, nullptr, nullptr) - loss(dn, nullptr, nullptr)) / (2.0 * h);
  CHECK(numeric == doctest::Approx(analytic).epsilon(0.05));
}

TEST_CASE("train step bookkeeping, audit and determinism") {
  const EncoderConfig enc = tiny_encoder();
  DistillConfig dc = tiny_distill();
  const auto batch = tiny_batch(2, 5);
  auto run = [&](int steps) {
    auto st = init_distill(enc, dc, 7);
    std::vector<double> losses;
    for (int s = 0; s < steps; ++s) {
      Rng rng = derive_rng(7, 1, static_cast<std::uint64_t>(s));
      const StepReport r = train_step(st, batch, enc, dc, rng);
      CHECK(r.audit.teacher_grad_nodes == 0);
      CHECK(r.audit.foreign_grad_leaves == 0);
      CHECK(r.left_masked + r.right_masked == batch.size());
      CHECK(r.step == s);
      losses.push_back(r.loss);
    }
    return std::make_pair(losses, st);
  };
  const auto [l1, s1] = run(4);
  const auto [l2, s2] = run(4);
  CHECK(l1 == l2);
  CHECK(s1.student == s2.student);
  CHECK(s1.teacher == s2.teacher);
  CHECK(s1.center == s2.center);
  CHECK(s1.step == 4);
  CHECK(l1[0] > 0.0);
  CHECK(std::isfinite(l1[0]));
}

TEST_CASE("zero learning rate leaves the student unchanged") {
  const EncoderConfig enc = tiny_encoder();
  DistillConfig dc = tiny_distill();
  dc.optim.lr = 0.0;
  auto st = init_distill(enc, dc, 8);
  const ParamSet before = st.student;
  const auto batch = tiny_batch(2, 6);
  Rng rng(1);
  for (int s = 0; s < 3; ++s) train_step(st, batch, enc, dc, rng);
  CHECK(st.student == before);
  CHECK(st.teacher == before);
  CHECK_FALSE(st.center == Tensor({dc.proj_dim}));
}

TEST_CASE("teacher stays within the per-coordinate hull of its history") {
  const EncoderConfig enc = tiny_encoder();
  DistillConfig dc = tiny_distill();
  dc.ema_start = 0.5;
  dc.ema_end = 0.9;
  dc.optim.lr = 1e-2;
  auto st = init_distill(enc, dc, 9);
  const auto batch = tiny_batch(2, 7);
  ParamSet lo = st.teacher, hi = st.teacher;
  Rng rng(2);
  for (int s = 0; s < 6; ++s) {
    train_step(st, batch, enc, dc, rng);
    for (std::size_t i = 0; i < st.student.size(); ++i)
      for (std::size_t j = 0; j < st.student.tensor(i).size(); ++j) {
        float& l = lo.tensor(i)[j];
        float& h = hi.tensor(i)[j];
        l = std::min(l, st.student.tensor(i)[j]);
        h = std::max(h, st.student.tensor(i)[j]);
        const float t = st.teacher.tensor(i)[j];
        const float tol = 1e-6f * (1.0f + std::abs(t));
        CHECK((t >= l - tol && t <= h + tol));
      }
  }
}

TEST_CASE("mask side is balanced over many steps") {
  TokenGridGeometry g;
  g.image_h = 8;
  g.image_w = 16;
  Rng rng(10);
  const int n = 4000;
  int left = 0;
  for (int i = 0; i < n; ++i) left += sample_one_view_mask(g, 0.5, rng).which == View::left;
  CHECK(std::abs(left - n / 2.0) <= 3.0 * std::sqrt(n * 0.25));
}

TEST_CASE("non-finite loss aborts") {
  const EncoderConfig enc = tiny_encoder();
  DistillConfig dc = tiny_distill();
  auto st = init_distill(enc, dc, 11);
  // shifted normed tokens through two huge same-sign layers overflow float
  st.teacher.at("head.ln.b").fill(1.0f);
  st.teacher.at("head.fc1.w").fill(1e20f);
  st.teacher.at("head.fc2.w").fill(1e20f);
  const auto batch = tiny_batch(1, 8);
  Rng rng(3);
  CHECK_THROWS_AS(train_step(st, batch, enc, dc, rng), NumericalError);
}

}  // TEST_SUITE
