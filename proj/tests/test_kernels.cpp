#include <cmath>
#include <random>
#include <vector>

#include "bino/kernels.hpp"
#include "doctest.h"

using namespace bino::kernels;

namespace {
std::vector<float> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (float& x : v) x = u(rng);
  return v;
}
}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("gemm: AVX2 equals scalar on random shapes and transposes") {
    if (!cpu_supports(Isa::avx2)) return;
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 60; ++trial) {
      const std::size_t m = 1 + rng() % 23, n = 1 + rng() % 37, k = 1 + rng() % 29;
      const bool ta = rng() % 2, tb = rng() % 2;
      const auto a = random_vec(m * k, rng), b = random_vec(k * n, rng), c0 = random_vec(m * n, rng);
      const MatrixRef<float> ar{a.data(), ta ? m : k, ta}, br{b.data(), tb ? k : n, tb};
      for (float beta : {0.0f, 1.0f, 0.5f}) {
        auto cs = c0, cv = c0;
        scalar::gemm(m, n, k, ar, br, beta, cs.data(), n);
        avx2::gemm(m, n, k, ar, br, beta, cv.data(), n);
        // Products of floats are exact in double and both sum k ascending.
        CHECK(cs == cv);
      }
    }
  }

  TEST_CASE("gemm: identity and hand example") {
    const std::vector<float> id{1, 0, 0, 0, 1, 0, 0, 0, 1};
    const std::vector<float> b{1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::vector<float> c(9, -1.0f);
    gemm(3, 3, 3, {id.data(), 3}, {b.data(), 3}, 0.0f, c.data(), 3);
    CHECK(c == b);
    const std::vector<float> x{1, 2}, y{3, 4};
    float out = 0;
    gemm(1, 1, 2, {x.data(), 2}, {y.data(), 1}, 0.0f, &out, 1);
    CHECK(out == 11.0f);
  }

  TEST_CASE("dot and sum_squares: AVX2 matches scalar") {
    if (!cpu_supports(Isa::avx2)) return;
    std::mt19937_64 rng(3);
    for (std::size_t n : {0u, 1u, 7u, 8u, 9u, 96u, 1001u}) {
      const auto x = random_vec(n, rng), y = random_vec(n, rng);
      CHECK(avx2::dot(x.data(), y.data(), n) == doctest::Approx(scalar::dot(x.data(), y.data(), n)).epsilon(1e-12));
      CHECK(avx2::sum_squares(x.data(), n) == doctest::Approx(scalar::sum_squares(x.data(), n)).epsilon(1e-12));
    }
  }

  TEST_CASE("softmax_rows: variants agree and rows sum to one") {
    std::mt19937_64 rng(11);
    for (std::size_t cols : {1u, 5u, 8u, 13u, 640u}) {
      auto x = random_vec(4 * cols, rng);
      for (float& v : x) v *= 20.0f;
      auto s = x, v = x;
      scalar::softmax_rows(s.data(), 4, cols, 0.3f);
      if (cpu_supports(Isa::avx2)) avx2::softmax_rows(v.data(), 4, cols, 0.3f);
      else v = s;
      for (std::size_t r = 0; r < 4; ++r) {
        double sum = 0;
        for (std::size_t j = 0; j < cols; ++j) {
          sum += s[r * cols + j];
          CHECK(v[r * cols + j] == doctest::Approx(s[r * cols + j]).epsilon(1e-5));
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
      }
    }
  }

  TEST_CASE("softmax_rows: matches the exact softmax") {
    std::mt19937_64 rng(5);
    auto x = random_vec(64, rng);
    std::vector<double> ref(64);
    double mx = -1e9, z = 0;
    for (float v : x) mx = std::max(mx, 2.0 * v);
    for (std::size_t j = 0; j < 64; ++j) z += (ref[j] = std::exp(2.0 * x[j] - mx));
    softmax_rows(x.data(), 1, 64, 2.0f);
    for (std::size_t j = 0; j < 64; ++j) CHECK(x[j] == doctest::Approx(ref[j] / z).epsilon(1e-6));
  }

  TEST_CASE("dispatch honours the CPU") {
    CHECK((active_isa() == Isa::scalar || cpu_supports(Isa::avx2)));
    CHECK(isa_name(Isa::avx2) == "avx2");
  }
}
