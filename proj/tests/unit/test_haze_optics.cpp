#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "rvsl/errors.hpp"
#include "rvsl/haze.hpp"
#include "rvsl/rng.hpp"

using namespace rvsl;
using fixture::uniform;

namespace {

// Smooth procedural depth in [0, 1].
Tensor ramp_depth(std::size_t h, std::size_t w) {
  Tensor d({h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      d.at({y, x}) = 0.5 * (static_cast<double>(y) / (h - 1)) + 0.5 * std::abs(std::sin(0.3 * x));
  return d;
}

}  // namespace

TEST_CASE("transmission from depth") {
  CHECK(haze::transmission_from_depth(Tensor({2, 2}, 0.0), 1.3)[0] == 1.0);
  CHECK(haze::transmission_from_depth(Tensor({2, 2}, 1e6), 0.4)[3] < 1e-12);
  CHECK(haze::transmission_from_depth(Tensor({1, 1}, 1.0), 0.4)[0] == doctest::Approx(std::exp(-0.4)).epsilon(1e-15));
  CHECK_THROWS_AS(haze::transmission_from_depth(Tensor({2, 2}, -0.1), 1.0), std::invalid_argument);
  CHECK_THROWS_AS(haze::transmission_from_depth(Tensor({2, 2}, 0.1), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(haze::transmission_from_depth(Tensor({2, 2, 1}, 0.1), 1.0), ShapeError);
}

TEST_CASE("transmission is monotone decreasing in beta and depth") {
  Tensor d({1, 21});
  for (std::size_t i = 0; i < 21; ++i) d[i] = 0.1 * static_cast<double>(i);
  double prev_beta_t = 2.0;
  for (double beta = 0.05; beta <= 5.0; beta += 0.25) {
    const Tensor t = haze::transmission_from_depth(d, beta);
    for (std::size_t i = 1; i < 21; ++i) CHECK(t[i] < t[i - 1]);
    CHECK(t[10] < prev_beta_t);
    prev_beta_t = t[10];
  }
}

TEST_CASE("synthesis limits") {
  const Tensor J = uniform({3, 6, 6}, 1);
  const haze::HazeParams p{1.0, {0.7, 0.8, 0.9}};
  CHECK(haze::synthesize_haze(J, Tensor({6, 6}, 1.0), p) == J);
  const Tensor I0 = haze::synthesize_haze(J, Tensor({6, 6}, 0.0), p);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 36; ++i) CHECK(I0[c * 36 + i] == p.airlight[c]);
  Tensor A({3, 6, 6});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 36; ++i) A[c * 36 + i] = p.airlight[c];
  const Tensor IA = haze::synthesize_haze(A, uniform({6, 6}, 2), p);
  CHECK(max_abs_diff(IA, A) < 1e-15);
}

TEST_CASE("haze parameters are range checked") {
  CHECK_THROWS(haze::HazeParams{0.01, {1, 1, 1}}.validate());
  CHECK_THROWS(haze::HazeParams{6.0, {1, 1, 1}}.validate());
  CHECK_THROWS(haze::HazeParams{1.0, {1.2, 1, 1}}.validate());
  CHECK_NOTHROW(haze::HazeParams{1.0, {0.5, 1, 0}}.validate());
  CHECK_THROWS(haze::DarkChannelConfig{4}.validate());
  CHECK_THROWS(haze::DarkChannelConfig{0}.validate());
}

TEST_CASE("inversion recovers the clear image") {
  const Tensor J = uniform({3, 16, 16}, 3);
  const Tensor t = haze::transmission_from_depth(ramp_depth(16, 16), 1.0);
  const haze::HazeParams p{1.0, {0.9, 0.85, 0.95}};
  const auto back = haze::invert_haze(haze::synthesize_haze(J, t, p), t, p);
  CHECK(back.clamped_pixels == 0);
  CHECK(max_abs_diff(back.image, J) < 1e-9);

  // t = 1 and hazy = A are exact.
  CHECK(max_abs_diff(haze::invert_haze(J, Tensor({16, 16}, 1.0), p).image, J) < 1e-12);
  Tensor A({3, 4, 4});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 16; ++i) A[c * 16 + i] = p.airlight[c];
  CHECK(max_abs_diff(haze::invert_haze(A, uniform({4, 4}, 4, 0.0, 1.0), p).image, A) < 1e-12);
}

TEST_CASE("inversion floors tiny transmission") {
  const Tensor J = uniform({3, 4, 4}, 5);
  Tensor t({4, 4}, 0.5);
  t[0] = 0.001;
  const auto r = haze::invert_haze(J, t, haze::HazeParams{}, 0.05);
  CHECK(r.clamped_pixels == 1);
  CHECK(r.image.min() >= 0.0);
  CHECK(r.image.max() <= 1.0);
}

TEST_CASE("dark channel examples") {
  const Tensor c = haze::dark_channel(Tensor({3, 7, 9}, 0.4), {5});
  for (double v : c.data()) CHECK(v == 0.4);

  Tensor img({3, 11, 11}, 1.0);
  img.at({1, 5, 5}) = 0.0;
  const Tensor dc = haze::dark_channel(img, {5});
  for (std::size_t y = 0; y < 11; ++y)
    for (std::size_t x = 0; x < 11; ++x) {
      const bool near = y >= 3 && y <= 7 && x >= 3 && x <= 7;
      CHECK(dc.at({y, x}) == (near ? 0.0 : 1.0));
    }

  CHECK_THROWS(haze::dark_channel(Tensor({3, 4, 4}, 0.5), {7}));
  CHECK_THROWS_AS(haze::dark_channel(Tensor({1, 4, 4}, 0.5), {3}), ShapeError);
}

TEST_CASE("dark channel equals the brute-force oracle on every size up to 16x16") {
  Rng rng(99);
  for (std::size_t h = 1; h <= 16; ++h) {
    for (std::size_t w = 1; w <= 16; ++w) {
      const Tensor img = uniform({3, h, w}, rng.next_u64());
      for (std::size_t patch : {1, 3, 5, 7, 15}) {
        if (patch > h && patch > w) continue;
        CHECK(haze::dark_channel(img, {patch}) == oracle::dark_channel(img, patch));
      }
    }
  }
}

TEST_CASE("airlight estimation") {
  const auto a = haze::estimate_airlight(Tensor({3, 8, 8}, 0.3));
  for (double v : a) CHECK(v == doctest::Approx(0.3).epsilon(1e-15));

  Tensor dot({3, 9, 9}, 0.0);
  for (std::size_t c = 0; c < 3; ++c) dot.at({c, 4, 4}) = 1.0;
  for (double v : haze::estimate_airlight(dot, {1})) CHECK(v == 1.0);

  // Far field where t < 0.05 is nearly pure airlight.
  const Tensor J = uniform({3, 64, 64}, 6, 0.0, 0.6);
  Tensor d({64, 64});
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64; ++x) d.at({y, x}) = y < 16 ? 4.0 : 0.3;
  const haze::HazeParams p{1.0, {0.8, 0.8, 0.8}};
  const auto est = haze::estimate_airlight(haze::synthesize_haze(J, haze::transmission_from_depth(d, 1.0), p));
  for (double v : est) CHECK(std::abs(v - 0.8) < 0.05);
}

TEST_CASE("colinearity residual") {
  const haze::Rgb A{0.9, 0.8, 0.85};
  const Tensor J = uniform({3, 12, 12}, 7);
  const Tensor I = haze::synthesize_haze(J, uniform({12, 12}, 8, 0.05, 1.0), haze::HazeParams{1.0, A});
  CHECK(haze::colinearity_residual(J, I, A).max() < 1e-10);
  CHECK(haze::colinearity_residual(J, J, A).max() < 1e-12);

  Tensor u({3, 1, 1}), v({3, 1, 1});
  const haze::Rgb zero{0, 0, 0};
  u[0] = 1.0;
  v[1] = 1.0;
  CHECK(haze::colinearity_residual(u, v, zero)[0] == doctest::Approx(1.0).epsilon(1e-15));
  // Pixel equal to the airlight is excluded.
  CHECK(haze::colinearity_residual(u, v, {1.0, 0.0, 0.0})[0] == 0.0);
  CHECK_THROWS_AS(haze::colinearity_residual(u, Tensor({3, 2, 1}), zero), ShapeError);
}

TEST_CASE("colinearity holds for arbitrary genuine triples") {
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const haze::Rgb A{rng.uniform(), rng.uniform(), rng.uniform()};
    const Tensor J = uniform({3, 5, 5}, rng.next_u64());
    const Tensor t = uniform({5, 5}, rng.next_u64(), 0.01, 1.0);
    CHECK(haze::colinearity_residual(J, haze::synthesize_haze(J, t, haze::HazeParams{1.0, A}), A).max() < 1e-10);
  }
}

TEST_CASE("white airlight never darkens the dark channel") {
  Rng rng(12);
  const haze::HazeParams white{1.0, {1.0, 1.0, 1.0}};
  for (int i = 0; i < 1000; ++i) {
    const Tensor J = uniform({3, 10, 10}, rng.next_u64());
    const Tensor t = uniform({10, 10}, rng.next_u64());
    const Tensor I = haze::synthesize_haze(J, t, white);
    for (std::size_t k = 0; k < I.size(); ++k) REQUIRE(I[k] >= J[k]);
    const Tensor dj = haze::dark_channel(J, {5}), di = haze::dark_channel(I, {5});
    for (std::size_t k = 0; k < di.size(); ++k) REQUIRE(di[k] >= dj[k]);
  }
}
