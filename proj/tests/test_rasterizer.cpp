// Copyright Contributors to the mgs Project
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>

#include "mgs/rasterizer.hpp"
#include "mgs/rng.hpp"
#include "mgs/synth.hpp"
#include "mgs/types.hpp"

using namespace mgs;

namespace {

MaterialGaussian2D unit_splat() {
  MaterialGaussian2D g;
  g.position = {0, 0, 0};
  g.scale = {1, 1};
  g.rotation = {1, 0, 0, 0};
  g.opacity = 1.0;
  g.albedo = {1, 1, 1};
  return g;
}

Scene random_scene(uint64_t seed, int n) {
  Rng rng(seed);
  Scene s;
  for (int i = 0; i < n; ++i) {
    MaterialGaussian2D g;
    g.position = {rng.uniform(-0.35, 0.35), rng.uniform(-0.35, 0.35),
                  rng.uniform(-0.35, 0.35)};
    g.scale = {rng.uniform(0.03, 0.25), rng.uniform(0.03, 0.25)};
    Vec4 q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    g.rotation = q.normalized();
    g.opacity = rng.uniform(0.05, 0.95);
    g.albedo = {rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)};
    g.roughness = rng.uniform(0.0, 1.0);
    g.metallic = rng.uniform(0.0, 1.0);
    s.gaussians.push_back(g);
  }
  return s;
}

Camera test_camera(int size, double azim_deg = 30.0, double elev_deg = 15.0) {
  SynthConfig cfg;
  cfg.image_size = size;
  return camera_ring(cfg, {azim_deg}, elev_deg)[0];
}

double max_abs_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

double gbuffer_max_diff(const GBuffer& a, const GBuffer& b) {
  return std::max({max_abs_diff(a.albedo, b.albedo),
                   max_abs_diff(a.roughness, b.roughness),
                   max_abs_diff(a.metallic, b.metallic),
                   max_abs_diff(a.depth, b.depth), max_abs_diff(a.normal, b.normal),
                   max_abs_diff(a.alpha, b.alpha)});
}

}  // namespace

TEST_CASE("intersect center hit and offset hit") {
  const auto g = unit_splat();
  SUBCASE("ray down the normal through the center") {
    const auto hit = intersect(g, {{0, 0, 5}, {0, 0, -1}});
    REQUIRE(hit.has_value());
    CHECK(hit->uv.x == doctest::Approx(0.0));
    CHECK(hit->uv.y == doctest::Approx(0.0));
    CHECK(hit->depth == doctest::Approx(5.0));
  }
  SUBCASE("offset ray") {
    const auto hit = intersect(g, {{1, 0, 5}, {0, 0, -1}});
    REQUIRE(hit.has_value());
    CHECK(hit->uv.x == doctest::Approx(1.0));
    CHECK(hit->uv.y == doctest::Approx(0.0));
  }
  SUBCASE("ray parallel to the splat plane misses") {
    CHECK(!intersect(g, {{0, 5, 0.5}, {0, -1, 0}}).has_value());
  }
  SUBCASE("hit behind the origin misses") {
    CHECK(!intersect(g, {{0, 0, 5}, {0, 0, 1}}).has_value());
  }
}

TEST_CASE("eval_gaussian formula") {
  CHECK(eval_gaussian({0, 0}) == doctest::Approx(1.0));
  CHECK(eval_gaussian({1, 0}) == doctest::Approx(std::exp(-0.5)));
  CHECK(eval_gaussian({3, 4}) == doctest::Approx(std::exp(-12.5)));
}

TEST_CASE("low_pass filter") {
  CHECK(low_pass(1.0, 7.0) == doctest::Approx(1.0));
  CHECK(low_pass(0.0, 0.0) == doctest::Approx(1.0));
  const double sigma = std::sqrt(2.0) / 2.0;
  CHECK(low_pass(0.1, sigma) == doctest::Approx(std::exp(-0.5)));
}

TEST_CASE("blend_ray examples") {
  Scene s;
  MaterialGaussian2D g1 = unit_splat();
  g1.albedo = {0.8, 0.6, 0.4};
  g1.roughness = 0.5;
  g1.metallic = 0.25;
  s.gaussians.push_back(g1);
  s.gaussians.push_back(g1);

  SUBCASE("single opaque sample") {
    const BlendEntry e{0, 1.0, 3.0};
    const auto out = blend_ray(s, std::span(&e, 1));
    CHECK(out.channels[0] == doctest::Approx(0.8));
    CHECK(out.channels[3] == doctest::Approx(0.5));
    CHECK(out.channels[4] == doctest::Approx(0.25));
    CHECK(out.alpha == doctest::Approx(1.0));
    CHECK(out.expected_depth == doctest::Approx(3.0));
  }
  SUBCASE("two half-weight samples compose front to back") {
    s.gaussians[0].opacity = 0.5;
    s.gaussians[1].opacity = 0.5;
    s.gaussians[1].albedo = {0.2, 0.2, 0.2};
    const BlendEntry entries[2] = {{0, 1.0, 1.0}, {1, 1.0, 2.0}};
    const auto out = blend_ray(s, entries);
    CHECK(out.channels[0] == doctest::Approx(0.5 * 0.8 + 0.25 * 0.2));
    CHECK(out.alpha == doctest::Approx(0.75));
    CHECK(out.expected_depth == doctest::Approx((0.5 * 1.0 + 0.25 * 2.0) / 0.75));
  }
  SUBCASE("empty input gives zeros") {
    const auto out = blend_ray(s, {});
    CHECK(out.alpha == 0.0);
    CHECK(out.expected_depth == 0.0);
    CHECK(out.channels[0] == 0.0);
  }
  SUBCASE("unsorted input throws") {
    const BlendEntry entries[2] = {{0, 1.0, 2.0}, {1, 1.0, 1.0}};
    CHECK_THROWS(blend_ray(s, entries));
  }
}

TEST_CASE("render_oracle basics") {
  const Camera cam = test_camera(16);
  SUBCASE("empty scene renders zeros") {
    const GBuffer gb = render_oracle(Scene{}, cam);
    for (const double v : gb.alpha.data) CHECK(v == 0.0);
    for (const double v : gb.albedo.data) CHECK(v == 0.0);
  }
  SUBCASE("single centered opaque splat covers a disk around the center") {
    Scene s;
    auto g = unit_splat();
    g.scale = {0.05, 0.05};
    s.gaussians.push_back(g);
    // view straight down the splat normal from the canonical distance
    const Camera front = make_lookat_camera({0, 0, 1.5}, {0, 0, 0}, {0, 1, 0}, 33, 33, 50.0);
    const GBuffer gb = render_oracle(s, front);
    const int c = 16;
    CHECK(gb.alpha.at(c, c, 0) > 0.5);
    CHECK(gb.alpha.at(0, 0, 0) == 0.0);
    CHECK(gb.depth.at(c, c, 0) == doctest::Approx(1.5).epsilon(1e-3));
  }
  SUBCASE("scene fully behind the camera renders zeros") {
    Scene s;
    auto g = unit_splat();
    g.position = {0, 0, 0};
    s.gaussians.push_back(g);
    Camera cam2 = make_lookat_camera({0, 0, 1.5}, {0, 0, 3.0}, {0, 1, 0}, 16, 16, 50.0);
    const GBuffer gb = render_fast(s, cam2);
    for (const double v : gb.alpha.data) CHECK(v == 0.0);
  }
}

TEST_CASE("render_fast equals render_oracle over seeded random scenes") {
  RenderOptions fast_opts;
  fast_opts.tile_size = 8;
  double worst = 0.0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    const Scene s = random_scene(seed, 1 + static_cast<int>(seed % 16));
    const Camera cam = test_camera(16, 20.0 + 3.1 * seed, -25.0 + 0.7 * seed);
    const GBuffer fast = render_fast(s, cam, fast_opts);
    const GBuffer oracle = render_oracle(s, cam);
    worst = std::max(worst, gbuffer_max_diff(fast, oracle));
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("per-ray weights sum to at most one and transmittance is nonincreasing") {
  RenderOptions opts;
  opts.retain_samples = true;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const Scene s = random_scene(seed + 500, 12);
    const Camera cam = test_camera(16, 45.0, 10.0);
    const GBuffer gb = render_fast(s, cam, opts);
    for (int py = 0; py < cam.height; ++py)
      for (int px = 0; px < cam.width; ++px) {
        const auto samples = gb.pixel_samples(px, py);
        double sum = 0.0;
        double prev_t = 1.0;
        for (const auto& smp : samples) {
          const double a = s.gaussians[smp.gaussian_index].opacity * smp.g_filtered;
          const double t = smp.weight / std::max(a, 1e-300);
          CHECK(t <= prev_t + 1e-12);
          prev_t = t;
          sum += smp.weight;
        }
        CHECK(sum <= 1.0 + 1e-9);
        CHECK(gb.alpha.at(px, py, 0) == doctest::Approx(sum));
      }
  }
}

TEST_CASE("rendering is invariant to permuting the gaussian list") {
  const Scene s = random_scene(77, 9);
  const Camera cam = test_camera(16);
  const GBuffer ref = render_fast(s, cam);
  Scene perm = s;
  std::reverse(perm.gaussians.begin(), perm.gaussians.end());
  const GBuffer out = render_fast(perm, cam);
  CHECK(gbuffer_max_diff(ref, out) == 0.0);  // bitwise under distinct depths
}

TEST_CASE("zero opacities render a zero gbuffer") {
  Scene s = random_scene(5, 10);
  for (auto& g : s.gaussians) g.opacity = 0.0;
  const GBuffer gb = render_fast(s, test_camera(16));
  for (const double v : gb.alpha.data) CHECK(v == 0.0);
  for (const double v : gb.albedo.data) CHECK(v == 0.0);
  for (const double v : gb.depth.data) CHECK(v == 0.0);
}

TEST_CASE("rendered channels never exceed the contributing maxima") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    const Scene s = random_scene(seed + 900, 8);
    double max_rough = 0.0;
    for (const auto& g : s.gaussians) max_rough = std::max(max_rough, g.roughness);
    const GBuffer gb = render_fast(s, test_camera(16, 10.0 * seed, 5.0));
    for (const double v : gb.roughness.data) CHECK(v <= max_rough + 1e-12);
  }
}

TEST_CASE("render_fast output is independent of the worker count") {
  const Scene s = random_scene(42, 14);
  const Camera cam = test_camera(32);
  RenderOptions one;
  one.n_threads = 1;
  one.retain_samples = true;
  RenderOptions four;
  four.n_threads = 4;
  four.retain_samples = true;
  const GBuffer a = render_fast(s, cam, one);
  const GBuffer b = render_fast(s, cam, four);
  CHECK(gbuffer_max_diff(a, b) == 0.0);
  REQUIRE(a.samples.size() == b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].gaussian_index == b.samples[i].gaussian_index);
    CHECK(a.samples[i].weight == b.samples[i].weight);
  }
}

TEST_CASE("512px render of a 10k-splat scene stays within the time budget" *
          doctest::timeout(60)) {
  Scene s;
  Rng rng(123);
  for (int i = 0; i < 10000; ++i) {
    MaterialGaussian2D g;
    g.position = {rng.uniform(-0.45, 0.45), rng.uniform(-0.45, 0.45),
                  rng.uniform(-0.45, 0.45)};
    g.scale = {rng.uniform(0.005, 0.04), rng.uniform(0.005, 0.04)};
    Vec4 q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    g.rotation = q.normalized();
    g.opacity = rng.uniform(0.2, 0.95);
    g.albedo = {rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)};
    g.roughness = rng.uniform(0.0, 1.0);
    g.metallic = rng.uniform(0.0, 1.0);
    s.gaussians.push_back(g);
  }
  SynthConfig sc;
  sc.image_size = 512;
  const Camera cam = camera_ring(sc, {30}, 12)[0];
  RenderOptions opts;
  opts.n_threads = 1;  // budget is one desktop core
  const auto t0 = std::chrono::steady_clock::now();
  const GBuffer gb = render_fast(s, cam, opts);
  const double dt =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("512x512 x 10k splats: " << dt << " s single-threaded");
  CHECK(dt < 10.0);
  double coverage = 0.0;
  for (const double v : gb.alpha.data) coverage += v;
  CHECK(coverage > 0.0);
}
