#include "doctest.h"

#include <cmath>

#include "nep/error.hpp"
#include "nep/metrics.hpp"
#include "nep/rng.hpp"
#include "nep/scene.hpp"

using namespace nep;

namespace {

Image random_image(Rng& rng, std::size_t h, std::size_t w) {
  Image img(h, w, 3);
  for (auto& p : img.pixels) p = std::uint8_t(rng.below(256));
  return img;
}

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

}  // namespace

TEST_CASE("pixel distances match a long double brute force") {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const std::size_t h = 1 + rng.below(40), w = 1 + rng.below(40);
    const auto a = random_image(rng, h, w), b = random_image(rng, h, w);
    long double s1 = 0, s2 = 0;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) {
          const long double d = ((long double)a.at(y, x)[c] - (long double)b.at(y, x)[c]) / 255.0L;
          s1 += d < 0 ? -d : d;
          s2 += d * d;
        }
    const long double n = (long double)(h * w * 3);
    const auto m = pixel_metrics(a, b);
    CHECK(std::fabs(m.l1 - double(s1 / n)) < 1e-9);
    CHECK(std::fabs(m.l2 - double(s2 / n)) < 1e-9);
  }
  const Image black(8, 8, 3, 0), white(8, 8, 3, 255);
  CHECK(pixel_metrics(black, white).l1 == 1.0);
  CHECK(pixel_metrics(black, white).l2 == 1.0);
  CHECK_THROWS_AS(pixel_metrics(black, Image(8, 9, 3)), Error);
}

TEST_CASE("cosine matches the normalize-then-dot form") {
  Rng rng(2);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + rng.below(200);
    const auto a = random_vec(rng, n), b = random_vec(rng, n);
    long double na = 0, nb = 0;
    for (std::size_t i = 0; i < n; ++i) {
      na += (long double)a[i] * a[i];
      nb += (long double)b[i] * b[i];
    }
    long double dot = 0;
    for (std::size_t i = 0; i < n; ++i) dot += ((long double)a[i] / std::sqrt(na)) * ((long double)b[i] / std::sqrt(nb));
    CHECK(std::fabs(cosine(a, b) - double(dot)) < 1e-9);
  }
  try {
    cosine({0, 0}, {1, 2});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Undefined);
  }
}

TEST_CASE("feature similarity is one on identical images and zero on disjoint palettes") {
  TokenizerConfig cfg;
  Rng rng(3);
  const auto img = scene::render(scene::random_scene(rng, 8, 8), cfg);
  CHECK(feature_similarity(img, img, cfg) == doctest::Approx(1.0).epsilon(1e-12));
  const Image black(32, 32, 3, 0), white(32, 32, 3, 255);
  CHECK(feature_similarity(black, white, cfg) == 0.0);
  CHECK(proxy_features(img, cfg).size() == proxy_feature_dim(cfg));
}

TEST_CASE("frechet distance matches the one-dimensional closed form") {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const std::size_t na = 2 + rng.below(50), nb = 2 + rng.below(50);
    const double sa = 0.1 + 3 * rng.uniform(), sb = 0.1 + 3 * rng.uniform();
    const double oa = rng.normal(), ob = rng.normal();
    std::vector<std::vector<double>> a(na), b(nb);
    for (auto& v : a) v = {oa + sa * rng.normal()};
    for (auto& v : b) v = {ob + sb * rng.normal()};
    auto moments = [](const std::vector<std::vector<double>>& s, long double& mu, long double& var) {
      mu = 0;
      for (const auto& v : s) mu += v[0];
      mu /= (long double)s.size();
      var = 0;
      for (const auto& v : s) var += (v[0] - mu) * (v[0] - mu);
      var /= (long double)(s.size() - 1);
    };
    long double ma, va, mb, vb;
    moments(a, ma, va);
    moments(b, mb, vb);
    const long double closed = (ma - mb) * (ma - mb) + va + vb - 2 * std::sqrt(va * vb);
    CHECK(std::fabs(frechet_distance(a, b) - double(closed)) < 1e-9);
  }
}

TEST_CASE("frechet distance of diagonal covariances is a sum of per-axis terms") {
  // Axis-aligned +-s points give exactly diagonal covariances.
  std::vector<std::vector<double>> a, b;
  const double s1[3] = {1.0, 2.0, 0.5}, s2[3] = {3.0, 0.25, 0.5};
  for (int k = 0; k < 3; ++k)
    for (int sign : {-1, 1}) {
      std::vector<double> pa(3, 0.0), pb(3, 1.0);
      pa[std::size_t(k)] = sign * s1[k];
      pb[std::size_t(k)] = 1.0 + sign * s2[k];
      a.push_back(pa);
      b.push_back(pb);
    }
  // Per axis: variance = 2 s^2 / 5, mean offset 1.
  double expect = 3.0;
  for (int k = 0; k < 3; ++k) {
    const double va = 2 * s1[k] * s1[k] / 5, vb = 2 * s2[k] * s2[k] / 5;
    expect += va + vb - 2 * std::sqrt(va * vb);
  }
  CHECK(std::fabs(frechet_distance(a, b) - expect) < 1e-9);
}

TEST_CASE("frechet distance is zero on identical sets and adds squared translation") {
  Rng rng(5);
  std::vector<std::vector<double>> a(40);
  for (auto& v : a) v = random_vec(rng, 12);
  CHECK(std::fabs(frechet_distance(a, a)) < 1e-6);
  const auto shift = random_vec(rng, 12);
  double norm2 = 0;
  for (double x : shift) norm2 += x * x;
  auto b = a;
  for (auto& v : b)
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += shift[i];
  CHECK(frechet_distance(a, b) == doctest::Approx(norm2).epsilon(1e-6));
  // Rank-deficient covariances (fewer samples than dimensions) stay finite.
  std::vector<std::vector<double>> c(3);
  for (auto& v : c) v = random_vec(rng, 12);
  CHECK(std::isfinite(frechet_distance(a, c)));
  CHECK_THROWS_AS(frechet_stats({{1.0}}), Error);
}

TEST_CASE("directional similarity follows the edit direction") {
  TokenizerConfig cfg;
  using namespace scene;
  SceneSpec src;
  src.objects.push_back({Shape::Square, Color::Red, 1, 1, 2});
  SceneSpec tgt = src, wrong = src;
  tgt.objects[0].color = Color::Blue;
  wrong.objects[0].color = Color::Green;
  const auto src_img = render(src, cfg), tgt_img = render(tgt, cfg), wrong_img = render(wrong, cfg);
  const auto good = directional_metrics(src_img, tgt_img, caption(src), caption(tgt), cfg);
  REQUIRE(good.dir_defined);
  CHECK(good.dir_sim == doctest::Approx(1.0));
  CHECK(good.out_sim == doctest::Approx(1.0));
  const auto bad = directional_metrics(src_img, wrong_img, caption(src), caption(tgt), cfg);
  REQUIRE(bad.dir_defined);
  CHECK(bad.dir_sim == doctest::Approx(0.5));
  CHECK(bad.out_sim < good.out_sim);
  const auto none = directional_metrics(src_img, src_img, caption(src), caption(tgt), cfg);
  CHECK_FALSE(none.dir_defined);
  // A solid off-scene color yields no keywords: out_sim is 0, not an error.
  Image odd(32, 32, 3, 0);
  for (std::size_t i = 0; i < odd.pixels.size(); i += 3) odd.pixels[i] = 85;
  CHECK(directional_metrics(src_img, odd, caption(src), caption(tgt), cfg).out_sim == 0.0);
}
