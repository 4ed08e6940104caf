#include <cmath>

#include "cineseg/metrics.hpp"
#include "cineseg/rng.hpp"
#include "doctest.h"

using namespace cineseg;

namespace {

Tensor mask_from(std::vector<double> v, int h, int w) {
  return Tensor::from_vector({h, w}, std::move(v));
}

}  // namespace

TEST_CASE("dice score hand cases") {
  Tensor a = mask_from({1, 1, 0, 0}, 2, 2);
  CHECK(dice_score(a, a) == doctest::Approx(1.0).epsilon(1e-6));

  Tensor b = mask_from({0, 0, 1, 1}, 2, 2);
  CHECK(dice_score(a, b) == doctest::Approx(1e-5 / (4 + 1e-5)).epsilon(1e-9));

  // 2 px vs 2 px with 1 px overlap
  Tensor c = mask_from({1, 0, 1, 0}, 2, 2);
  const double expect = (2.0 + 1e-5) / (4.0 + 1e-5);
  CHECK(std::fabs(dice_score(a, c) - expect) < 1e-9);

  // symmetry and joint-translation invariance
  CHECK(dice_score(a, c) == dice_score(c, a));
  Tensor a2 = mask_from({0, 0, 1, 1}, 2, 2);
  Tensor c2 = mask_from({0, 0, 1, 0}, 2, 2);
  Tensor c1 = mask_from({1, 0, 0, 0}, 2, 2);
  CHECK(dice_score(a, c1) == doctest::Approx(dice_score(a2, c2)).epsilon(1e-12));

  CHECK_THROWS_AS(dice_score(mask_from({0.5, 0, 0, 0}, 2, 2), a), ValueError);
  CHECK_THROWS_AS(dice_score(a, Tensor::zeros({3, 3})), ShapeError);
}

TEST_CASE("hausdorff hand cases") {
  Tensor a = mask_from({1, 0, 0, 0, 1, 0, 0, 0, 0}, 3, 3);
  CHECK(hausdorff(a, a) == 0.0);

  // single pixels at (0,0) and (3,4): distance 5
  std::vector<double> p(5 * 5, 0.0), q(5 * 5, 0.0);
  p[0] = 1.0;       // (x=0, y=0)
  q[4 * 5 + 3] = 1.0;  // (x=3, y=4)
  CHECK(std::fabs(hausdorff(mask_from(p, 5, 5), mask_from(q, 5, 5)) - 5.0) < 1e-12);

  // pred = gt plus one pixel at a 2*sqrt(2) diagonal offset
  std::vector<double> gt(6 * 6, 0.0), pred(6 * 6, 0.0);
  gt[0] = 1.0;
  pred[0] = 1.0;
  pred[2 * 6 + 2] = 1.0;
  CHECK(std::fabs(hausdorff(mask_from(pred, 6, 6), mask_from(gt, 6, 6)) - 2.0 * std::sqrt(2.0)) <
        1e-12);

  // symmetric; monotone in the percentile
  Rng rng(5);
  std::vector<double> m1(8 * 8, 0.0), m2(8 * 8, 0.0);
  for (int i = 0; i < 64; ++i) {
    m1[static_cast<std::size_t>(i)] = rng.bernoulli(0.3) ? 1.0 : 0.0;
    m2[static_cast<std::size_t>(i)] = rng.bernoulli(0.3) ? 1.0 : 0.0;
  }
  Tensor t1 = mask_from(m1, 8, 8), t2 = mask_from(m2, 8, 8);
  CHECK(hausdorff(t1, t2) == hausdorff(t2, t1));
  CHECK(hausdorff(t1, t2, 95.0) <= hausdorff(t1, t2, 100.0));
  CHECK(hausdorff(t1, t2, 50.0) <= hausdorff(t1, t2, 95.0));

  try {
    hausdorff(mask_from(std::vector<double>(9, 0.0), 3, 3), a);
    FAIL("expected error");
  } catch (const ValueError& e) {
    CHECK(std::string(e.what()).find("undefined: empty mask") != std::string::npos);
  }
}

TEST_CASE("endpoint error hand cases") {
  Tensor zero = Tensor::zeros({2, 3, 3});
  CHECK(endpoint_error(zero, zero) == 0.0);

  // uniform offset (0.3, 0.4): 3-4-5 triangle
  std::vector<double> f(18);
  for (int i = 0; i < 9; ++i) {
    f[static_cast<std::size_t>(i)] = 0.3;
    f[static_cast<std::size_t>(9 + i)] = 0.4;
  }
  CHECK(endpoint_error(Tensor::from_vector({2, 3, 3}, f), zero) == doctest::Approx(0.5).epsilon(1e-12));

  // random fields match a direct recomputation
  Rng rng(7);
  std::vector<double> a(2 * 16), b(2 * 16);
  for (auto& v : a) v = rng.uniform(-2, 2);
  for (auto& v : b) v = rng.uniform(-2, 2);
  Tensor fa = Tensor::from_vector({2, 4, 4}, a), fb = Tensor::from_vector({2, 4, 4}, b);
  double direct = 0;
  for (int i = 0; i < 16; ++i) {
    direct += std::hypot(a[static_cast<std::size_t>(i)] - b[static_cast<std::size_t>(i)],
                         a[static_cast<std::size_t>(16 + i)] - b[static_cast<std::size_t>(16 + i)]);
  }
  direct /= 16;
  CHECK(std::fabs(endpoint_error(fa, fb) - direct) < 1e-12);

  // triangle inequality
  std::vector<double> cvals(2 * 16);
  for (auto& v : cvals) v = rng.uniform(-2, 2);
  Tensor fc = Tensor::from_vector({2, 4, 4}, cvals);
  CHECK(endpoint_error(fa, fc) <= endpoint_error(fa, fb) + endpoint_error(fb, fc) + 1e-12);

  // mask restriction
  std::vector<double> m(16, 0.0);
  m[5] = 1.0;
  const double masked = endpoint_error(fa, fb, Tensor::from_vector({4, 4}, m));
  CHECK(masked == doctest::Approx(std::hypot(a[5] - b[5], a[21] - b[21])).epsilon(1e-12));
}

TEST_CASE("aggregate mean and population sd") {
  auto a = aggregate({1, 1, 1});
  CHECK(a.mean == 1.0);
  CHECK(a.sd == 0.0);
  auto b = aggregate({0, 1});
  CHECK(b.mean == doctest::Approx(0.5));
  CHECK(b.sd == doctest::Approx(0.5));
  auto c = aggregate({3.7});
  CHECK(c.mean == 3.7);
  CHECK(c.sd == 0.0);
  CHECK_THROWS_AS(aggregate({}), ValueError);
}
