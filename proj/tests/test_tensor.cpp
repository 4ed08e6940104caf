#include <cmath>
#include <vector>

#include "cineseg/ops.hpp"
#include "cineseg/rng.hpp"
#include "cineseg/tensor.hpp"
#include "doctest.h"
#include "grad_check.hpp"

using namespace cineseg;

TEST_CASE("tensor basics") {
  Tensor t = Tensor::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.shape() == std::vector<int>{2, 3});
  CHECK(t.at(4) == 5.0);
  CHECK_THROWS_AS(Tensor::from_vector({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({0, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor::scalar(1.0).set_requires_grad(true).grad_vector(), ValueError);
}

TEST_CASE("relu definition") {
  Tensor x = Tensor::from_vector({3}, {-1, 0, 2});
  CHECK(relu(x).to_vector() == std::vector<double>{0, 0, 2});
}

TEST_CASE("conv2d identity and hand-evaluated cases") {
  Rng rng(7);
  // 1x1 identity kernel reproduces the image
  Tensor img = Tensor::from_vector({1, 1, 3, 4}, gradcheck::random_values(rng, 12, -1, 1));
  Tensor ident = Tensor::from_vector({1, 1, 1, 1}, {1.0});
  Tensor out = conv2d(img, ident, Tensor(), 1, 0);
  CHECK(out.to_vector() == img.to_vector());

  // constant-5 image, 3x3 all-ones kernel, zero padding: interior sums to 45
  Tensor five = Tensor::full({1, 1, 5, 5}, 5.0);
  Tensor ones = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor c = conv2d(five, ones, Tensor(), 1, 1);
  for (int y = 1; y < 4; ++y) {
    for (int x = 1; x < 4; ++x) {
      CHECK(c.at(y * 5 + x) == doctest::Approx(45.0).epsilon(1e-12));
    }
  }
  CHECK(c.at(0) == doctest::Approx(20.0));  // corner sees a 2x2 window

  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 3, 3}), Tensor()),
                  ShapeError);
}

TEST_CASE("backward of simple graphs") {
  SUBCASE("d(x*x)/dx = 2x") {
    Tensor x = Tensor::scalar(3.0).set_requires_grad(true);
    GradTape tape;
    Tensor loss = mul(x, x);
    tape.backward(loss);
    CHECK(x.grad_vector()[0] == doctest::Approx(6.0).epsilon(1e-12));
  }
  SUBCASE("sigmoid'(0) = 1/4 per element") {
    Tensor x = Tensor::zeros({5}).set_requires_grad(true);
    GradTape tape;
    tape.backward(sum(sigmoid(x)));
    for (double g : x.grad_vector()) CHECK(g == doctest::Approx(0.25).epsilon(1e-12));
  }
  SUBCASE("backward twice is an error") {
    Tensor x = Tensor::scalar(1.0).set_requires_grad(true);
    GradTape tape;
    Tensor loss = square(x);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), ValueError);
  }
  SUBCASE("non-scalar loss rejected") {
    Tensor x = Tensor::zeros({3}).set_requires_grad(true);
    GradTape tape;
    Tensor y = relu(x);
    CHECK_THROWS_AS(tape.backward(y), ShapeError);
  }
  SUBCASE("empty tape rejected") {
    GradTape tape;
    Tensor l = Tensor::scalar(0.0);
    CHECK_THROWS_AS(tape.backward(l), ValueError);
  }
}

TEST_CASE("gradient accumulation doubles on double use") {
  Tensor x = Tensor::from_vector({3}, {1, 2, 3}).set_requires_grad(true);
  std::vector<double> g_once, g_twice;
  {
    GradTape tape;
    tape.backward(sum(x));
    g_once = x.grad_vector();
  }
  x.zero_grad();
  {
    GradTape tape;
    tape.backward(add(sum(x), sum(x)));
    g_twice = x.grad_vector();
  }
  for (std::size_t i = 0; i < 3; ++i) CHECK(g_twice[i] == doctest::Approx(2.0 * g_once[i]).epsilon(1e-14));
}

TEST_CASE("backward linearity") {
  // grad of a*f + b*g equals a*grad(f) + b*grad(g), elementwise to 1e-10
  Rng rng(11);
  const std::vector<int> shape{2, 3};
  const auto vals = gradcheck::random_values(rng, 6, -1, 1, 0.05);
  const double a = 1.7, b = -2.3;

  auto grad_of = [&](auto make_loss) {
    Tensor x = Tensor::from_vector(shape, vals).set_requires_grad(true);
    GradTape tape;
    tape.backward(make_loss(x));
    return x.grad_vector();
  };
  auto f = [](const Tensor& x) { return sum(square(x)); };
  auto g = [](const Tensor& x) { return sum(sigmoid(x)); };
  auto gf = grad_of(f);
  auto gg = grad_of(g);
  auto gc = grad_of([&](const Tensor& x) { return add(scalar_mul(f(x), a), scalar_mul(g(x), b)); });
  for (std::size_t i = 0; i < gc.size(); ++i) {
    CHECK(std::fabs(gc[i] - (a * gf[i] + b * gg[i])) < 1e-10);
  }
}

TEST_CASE("finite-difference check across every primitive") {
  Rng rng(23);
  using gradcheck::check;
  using gradcheck::random_values;
  using gradcheck::random_weights;
  using gradcheck::weighted_sum;

  const int instances = 4;  // the acceptance suite runs 20+
  double worst = 0.0;
  for (int it = 0; it < instances; ++it) {
    const std::vector<int> s{2, 3, 4};
    const auto n = shape_numel(s);
    Tensor w = random_weights(rng, s);

    auto unary_cases = std::vector<std::pair<const char*, std::function<Tensor(const Tensor&)>>>{
        {"neg", [](const Tensor& x) { return neg(x); }},
        {"square", [](const Tensor& x) { return square(x); }},
        {"abs", [](const Tensor& x) { return abs(x); }},
        {"relu", [](const Tensor& x) { return relu(x); }},
        {"sigmoid", [](const Tensor& x) { return sigmoid(x); }},
        {"clamp", [](const Tensor& x) { return clamp(x, -0.75, 0.75); }},
        {"scalar_mul", [](const Tensor& x) { return scalar_mul(x, -1.37); }},
        {"add_scalar", [](const Tensor& x) { return add_scalar(x, 0.4); }},
    };
    for (auto& [name, op] : unary_cases) {
      CAPTURE(name);
      auto r = check([&](const std::vector<Tensor>& in) { return weighted_sum(op(in[0]), w); }, {s},
                     {random_values(rng, n, -2, 2, 0.05)});
      CHECK_MESSAGE(r.max_rel_err <= 1e-4, name);
      worst = std::max(worst, r.max_rel_err);
    }

    // log on a strictly positive domain
    auto rl = check([&](const std::vector<Tensor>& in) { return weighted_sum(log(in[0]), w); }, {s},
                    {random_values(rng, n, 0.2, 3.0)});
    CHECK(rl.max_rel_err <= 1e-4);
    auto rlg = check([&](const std::vector<Tensor>& in) { return weighted_sum(log_guarded(in[0]), w); },
                     {s}, {random_values(rng, n, 0.2, 3.0)});
    CHECK(rlg.max_rel_err <= 1e-4);

    // binary ops, equal shapes and scalar broadcast
    auto binary_cases = std::vector<std::pair<const char*, std::function<Tensor(const Tensor&, const Tensor&)>>>{
        {"add", [](const Tensor& a, const Tensor& b) { return add(a, b); }},
        {"sub", [](const Tensor& a, const Tensor& b) { return sub(a, b); }},
        {"mul", [](const Tensor& a, const Tensor& b) { return mul(a, b); }},
        {"div", [](const Tensor& a, const Tensor& b) { return div(a, b); }},
    };
    for (auto& [name, op] : binary_cases) {
      CAPTURE(name);
      auto r = check([&](const std::vector<Tensor>& in) { return weighted_sum(op(in[0], in[1]), w); },
                     {s, s}, {random_values(rng, n, -2, 2), random_values(rng, n, 0.5, 2.0)});
      CHECK_MESSAGE(r.max_rel_err <= 1e-4, name);
      auto rb = check(
          [&](const std::vector<Tensor>& in) { return weighted_sum(op(in[0], in[1]), w); }, {s, {1}},
          {random_values(rng, n, -2, 2), random_values(rng, 1, 0.5, 2.0)});
      CHECK_MESSAGE(rb.max_rel_err <= 1e-4, name);
      worst = std::max(worst, std::max(r.max_rel_err, rb.max_rel_err));
    }

    // reductions
    auto rs = check([&](const std::vector<Tensor>& in) { return sum(in[0]); }, {s},
                    {random_values(rng, n, -2, 2)});
    CHECK(rs.max_rel_err <= 1e-4);
    auto rm = check([&](const std::vector<Tensor>& in) { return mean(square(in[0])); }, {s},
                    {random_values(rng, n, -2, 2)});
    CHECK(rm.max_rel_err <= 1e-4);

    // concat + slice + reshape
    auto rc = check(
        [&](const std::vector<Tensor>& in) {
          Tensor cat = concat({in[0], in[1]}, 1);
          return sum(square(slice(cat, 1, 1, 3)));
        },
        {{2, 2, 2}, {2, 3, 2}},
        {random_values(rng, 8, -2, 2), random_values(rng, 12, -2, 2)});
    CHECK(rc.max_rel_err <= 1e-4);
    auto rr = check(
        [&](const std::vector<Tensor>& in) { return sum(square(reshape(in[0], {4, 6}))); }, {s},
        {random_values(rng, n, -2, 2)});
    CHECK(rr.max_rel_err <= 1e-4);

    // conv2d: stride 1 and 2, with bias, w.r.t. image, weight and bias
    for (int stride : {1, 2}) {
      const std::vector<int> xs{1, 2, 6, 6}, ws{3, 2, 3, 3}, bs{3};
      const int oh = (6 + 2 - 3) / stride + 1;
      Tensor cw = random_weights(rng, {1, 3, oh, oh});
      auto rcv = check(
          [&](const std::vector<Tensor>& in) {
            return weighted_sum(conv2d(in[0], in[1], in[2], stride, 1), cw);
          },
          {xs, ws, bs},
          {random_values(rng, shape_numel(xs), -1, 1), random_values(rng, shape_numel(ws), -1, 1),
           random_values(rng, 3, -1, 1)});
      CHECK_MESSAGE(rcv.max_rel_err <= 1e-4, "conv2d stride " << stride);
      worst = std::max(worst, rcv.max_rel_err);
    }

    // pooling and upsampling
    {
      const std::vector<int> xs{1, 2, 4, 4};
      Tensor pw = random_weights(rng, {1, 2, 2, 2});
      auto rp = check(
          [&](const std::vector<Tensor>& in) { return weighted_sum(maxpool2(in[0]), pw); }, {xs},
          {random_values(rng, 32, -1, 1)});
      CHECK(rp.max_rel_err <= 1e-4);
      auto ra = check(
          [&](const std::vector<Tensor>& in) { return weighted_sum(avgpool2(in[0]), pw); }, {xs},
          {random_values(rng, 32, -1, 1)});
      CHECK(ra.max_rel_err <= 1e-4);
      Tensor uw = random_weights(rng, {1, 2, 8, 8});
      auto ru = check(
          [&](const std::vector<Tensor>& in) { return weighted_sum(upsample_nearest2(in[0]), uw); },
          {xs}, {random_values(rng, 32, -1, 1)});
      CHECK(ru.max_rel_err <= 1e-4);
    }

    // grid_sample w.r.t. image and flow; irrational offsets keep the flow
    // away from the bilinear kinks at integer coordinates
    {
      const std::vector<int> is{1, 1, 5, 5}, fs{1, 2, 5, 5};
      std::vector<double> fv(static_cast<std::size_t>(shape_numel(fs)));
      for (auto& v : fv) v = rng.uniform(-1.2, 1.2) + 0.1415926535;
      Tensor gw = random_weights(rng, is);
      auto rg = check(
          [&](const std::vector<Tensor>& in) { return weighted_sum(grid_sample(in[0], in[1]), gw); },
          {is, fs}, {random_values(rng, 25, -1, 1), fv});
      CHECK(rg.max_rel_err <= 1e-4);
      worst = std::max(worst, rg.max_rel_err);
    }

    // resize_bilinear
    {
      const std::vector<int> xs{1, 1, 4, 6};
      Tensor rw = random_weights(rng, {1, 1, 7, 9});
      auto rz = check(
          [&](const std::vector<Tensor>& in) { return weighted_sum(resize_bilinear(in[0], 7, 9), rw); },
          {xs}, {random_values(rng, 24, -1, 1)});
      CHECK(rz.max_rel_err <= 1e-4);
    }
  }
  MESSAGE("worst relative error: " << worst);
}

TEST_CASE("forward and backward are deterministic") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor x = Tensor::from_vector({1, 2, 8, 8}, gradcheck::random_values(rng, 128, -1, 1))
                   .set_requires_grad(true);
    Tensor w = Tensor::from_vector({4, 2, 3, 3}, gradcheck::random_values(rng, 72, -1, 1))
                   .set_requires_grad(true);
    GradTape tape;
    Tensor loss = mean(square(relu(conv2d(x, w, Tensor(), 1, 1))));
    tape.backward(loss);
    return std::tuple{loss.item(), x.grad_vector(), w.grad_vector()};
  };
  auto [l1, gx1, gw1] = run(99);
  auto [l2, gx2, gw2] = run(99);
  CHECK(l1 == l2);
  CHECK(gx1 == gx2);
  CHECK(gw1 == gw2);
}

TEST_CASE("shape mismatch errors name both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({3, 2});
  try {
    add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[3,2]") != std::string::npos);
  }
}

TEST_CASE("log guards") {
  Tensor bad = Tensor::from_vector({2}, {0.5, -1.0});
  CHECK_THROWS_AS(log(bad), NumericError);
  Tensor g = log_guarded(bad);
  CHECK(g.at(0) == doctest::Approx(std::log(0.5)));
  CHECK(g.at(1) == doctest::Approx(std::log(1e-12)));
}

TEST_CASE("f32 run mode") {
  PrecisionGuard guard(Precision::f32);
  Tensor x = Tensor::from_vector({2, 2}, {0.1, 0.2, 0.3, 0.4});
  CHECK(x.precision() == Precision::f32);
  CHECK(x.at(0) == doctest::Approx(0.1).epsilon(1e-6));
  Tensor y = add(mul(x, x), x);
  CHECK(y.precision() == Precision::f32);
  // gradients still flow
  Tensor p = Tensor::from_vector({2}, {1.0, 2.0}).set_requires_grad(true);
  GradTape tape;
  tape.backward(sum(square(p)));
  CHECK(p.grad_vector()[0] == doctest::Approx(2.0));
  CHECK(p.grad_vector()[1] == doctest::Approx(4.0));
}

TEST_CASE("mixed precision operands are rejected") {
  Tensor a = Tensor::zeros({2});
  PrecisionGuard guard(Precision::f32);
  Tensor b = Tensor::zeros({2});
  CHECK_THROWS_AS(add(a, b), ValueError);
}
