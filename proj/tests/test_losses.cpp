// Copyright Contributors to the mgs Project
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mgs/losses.hpp"
#include "mgs/rasterizer.hpp"
#include "mgs/rng.hpp"
#include "mgs/synth.hpp"
#include "test_scenes.hpp"

using namespace mgs;

namespace {

Image constant_image(int w, int h, int c, double v) {
  Image img(w, h, c);
  for (auto& x : img.data) x = v;
  return img;
}

Scene random_scene(uint64_t seed, int n) {
  Rng rng(seed);
  Scene s;
  for (int i = 0; i < n; ++i) {
    MaterialGaussian2D g;
    g.position = {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)};
    g.scale = {rng.uniform(0.08, 0.3), rng.uniform(0.08, 0.3)};
    Vec4 q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    g.rotation = q.normalized();
    g.opacity = rng.uniform(0.3, 0.9);
    g.albedo = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
    g.roughness = rng.uniform(0.1, 0.9);
    g.metallic = rng.uniform(0.1, 0.9);
    s.gaussians.push_back(g);
  }
  return s;
}

// ground truth from a reference scene so every loss term is active
Supervision make_supervision(uint64_t seed, int size, int n_views = 8) {
  SynthConfig cfg;
  cfg.image_size = size;
  cfg.seed = seed;
  cfg.n_splats = 12;
  const Scene gt = synthetic_scene(cfg);
  std::vector<double> az_in, az_nv;
  for (int i = 0; i < n_views / 2; ++i) az_in.push_back(15.0 + 360.0 * i / (n_views / 2));
  for (int i = 0; i < n_views - n_views / 2; ++i)
    az_nv.push_back(55.0 + 360.0 * i / (n_views - n_views / 2));
  return render_supervision(gt, camera_ring(cfg, az_in, 8.0),
                            camera_ring(cfg, az_nv, 33.0), 1);
}

SplatSample ws(double w, double z) {
  SplatSample s;
  s.weight = w;
  s.depth = z;
  return s;
}


}  // namespace

TEST_CASE("mse examples") {
  CHECK(mse(constant_image(4, 4, 3, 0.7), constant_image(4, 4, 3, 0.7)) == 0.0);
  CHECK(mse(constant_image(4, 4, 1, 0.0), constant_image(4, 4, 1, 0.5)) ==
        doctest::Approx(0.25));
  CHECK_THROWS(mse(constant_image(4, 4, 1, 0.0), constant_image(4, 5, 1, 0.0)));
}

TEST_CASE("ssim loss against the scalar reference formula") {
  LossConfig cfg;
  SUBCASE("identical images give zero loss") {
    Rng rng(9);
    Image a(16, 16, 3);
    for (auto& v : a.data) v = rng.uniform();
    CHECK(ssim_loss(a, a, cfg) == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("constant images match the closed form") {
    const Image a = constant_image(16, 16, 1, 0.5);
    const Image b = constant_image(16, 16, 1, 0.6);
    const double c1 = 1e-4, c2 = 9e-4;
    const double expected_ssim =
        (2.0 * 0.5 * 0.6 + c1) * c2 / ((0.25 + 0.36 + c1) * c2);
    CHECK(ssim_loss(a, b, cfg) == doctest::Approx(1.0 - expected_ssim).epsilon(1e-6));
  }
  SUBCASE("an image and its negative have loss above one") {
    Rng rng(10);
    Image a(16, 16, 1);
    for (auto& v : a.data) v = rng.uniform();
    Image b = a;
    for (auto& v : b.data) v = 1.0 - v;
    CHECK(ssim_loss(a, b, cfg) > 1.0);
  }
  SUBCASE("shape mismatch throws") {
    CHECK_THROWS(ssim_loss(constant_image(16, 16, 1, 0.1), constant_image(16, 12, 1, 0.1), cfg));
  }
}

TEST_CASE("ssim gradient matches finite differences") {
  LossConfig cfg;
  Rng rng(21);
  Image pred(13, 12, 1), gt(13, 12, 1);
  for (auto& v : pred.data) v = rng.uniform(0.2, 0.8);
  for (auto& v : gt.data) v = rng.uniform(0.2, 0.8);
  Image grad(13, 12, 1);
  ssim_loss_grad(pred, gt, cfg, 1.0, grad);
  const double eps = 1e-6;
  double max_err = 0.0;
  for (int i = 0; i < 20; ++i) {
    const std::size_t idx = rng.next_u64() % pred.size();
    Image p = pred;
    p.data[idx] += eps;
    const double lp = ssim_loss(p, gt, cfg);
    p.data[idx] -= 2 * eps;
    const double lm = ssim_loss(p, gt, cfg);
    const double fd = (lp - lm) / (2 * eps);
    max_err = std::max(max_err, std::abs(fd - grad.data[idx]));
  }
  CHECK(max_err < 1e-6);
}

TEST_CASE("image_loss sums channel terms") {
  const Scene s = random_scene(3, 6);
  SynthConfig cfg;
  cfg.image_size = 24;
  const Camera cam = camera_ring(cfg, {30}, 12)[0];
  RenderOptions ropts;
  const GBuffer a = render_fast(s, cam, ropts);
  SUBCASE("identical gbuffers give zero") {
    CHECK(image_loss(a, a) == doctest::Approx(0.0));
  }
  SUBCASE("albedo shift contributes mse 0.25 plus the ssim term") {
    GBuffer b = a;
    for (auto& v : b.albedo.data) v += 0.5;
    const double l = image_loss(b, a);
    const double ssim_term = ssim_loss(b.albedo, a.albedo);
    CHECK(l == doctest::Approx(0.25 + ssim_term));
  }
  SUBCASE("roughness-only perturbation is counted") {
    GBuffer b = a;
    for (auto& v : b.roughness.data) v += 0.1;
    CHECK(image_loss(b, a) > 0.0);
  }
}

TEST_CASE("geometry_loss masked depth and normal error") {
  const Scene s = random_scene(4, 6);
  SynthConfig cfg;
  cfg.image_size = 24;
  const Camera cam = camera_ring(cfg, {10}, -5)[0];
  const GBuffer gb = render_fast(s, cam);
  SUBCASE("prediction equal to ground truth gives zero") {
    CHECK(geometry_loss(gb, gb.depth, gb.normal, gb.alpha) == doctest::Approx(0.0));
  }
  SUBCASE("uniform depth offset inside the mask") {
    GBuffer pred = gb;
    for (auto& v : pred.depth.data) v += 0.1;
    const double l = geometry_loss(pred, gb.depth, gb.normal, gb.alpha);
    CHECK(l == doctest::Approx(0.01).epsilon(1e-9));
  }
  SUBCASE("empty mask gives zero") {
    const Image zero_alpha = constant_image(24, 24, 1, 0.0);
    CHECK(geometry_loss(gb, gb.depth, gb.normal, zero_alpha) == 0.0);
  }
}

TEST_CASE("distortion oracle examples") {
  CHECK(distortion_oracle(std::vector<SplatSample>{ws(0.7, 2.0)}) == 0.0);
  const std::vector<SplatSample> two{ws(0.5, 1.0), ws(0.5, 2.0)};
  CHECK(distortion_oracle(two) == doctest::Approx(0.5));
  const std::vector<SplatSample> equal{ws(0.3, 1.5), ws(0.4, 1.5), ws(0.2, 1.5)};
  CHECK(distortion_oracle(equal) == doctest::Approx(0.0));
}

TEST_CASE("distortion incremental equals the oracle and is linear work") {
  SUBCASE("hand example") {
    const std::vector<SplatSample> two{ws(0.5, 1.0), ws(0.5, 2.0)};
    CHECK(distortion_incremental(two) == doctest::Approx(0.5));
  }
  SUBCASE("empty list") { CHECK(distortion_incremental({}) == 0.0); }
  SUBCASE("unsorted input throws") {
    const std::vector<SplatSample> bad{ws(0.5, 2.0), ws(0.5, 1.0)};
    CHECK_THROWS(distortion_incremental(bad));
  }
  SUBCASE("random sorted lists match the oracle within 1e-9") {
    Rng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
      const int n = 1 + rng.uniform_int(24);
      std::vector<SplatSample> samples;
      double z = 0.5;
      double wsum = 0.0;
      for (int i = 0; i < n; ++i) {
        z += rng.uniform(0.0, 0.3);
        const double w = rng.uniform(0.0, 1.0 - wsum) * 0.5;
        wsum += w;
        samples.push_back(ws(w, z));
      }
      uint64_t work = 0;
      const double inc = distortion_incremental(samples, &work);
      CHECK(std::abs(inc - distortion_oracle(samples)) < 1e-9);
      CHECK(work == static_cast<uint64_t>(n));  // one pass, O(n)
    }
  }
}

TEST_CASE("normal_from_depth analytic planes") {
  Camera cam;
  cam.width = cam.height = 17;
  cam.fx = cam.fy = 20.0;
  cam.cx = cam.cy = 8.5;
  SUBCASE("fronto-parallel plane faces the camera") {
    const Image depth = constant_image(17, 17, 1, 2.0);
    const Image alpha = constant_image(17, 17, 1, 1.0);
    const Image n = normal_from_depth(depth, alpha, cam);
    CHECK(n.at(8, 8, 0) == doctest::Approx(0.0));
    CHECK(n.at(8, 8, 1) == doctest::Approx(0.0));
    CHECK(n.at(8, 8, 2) == doctest::Approx(-1.0));
    // border pixels carry no normal
    CHECK(n.at(0, 8, 2) == 0.0);
  }
  SUBCASE("tilted plane matches the analytic normal") {
    // camera-space plane z = 2 + 0.3 x  =>  z(px) = 2 / (1 - 0.3 * xn)
    Image depth(17, 17, 1);
    const Image alpha = constant_image(17, 17, 1, 1.0);
    for (int y = 0; y < 17; ++y)
      for (int x = 0; x < 17; ++x) {
        const double xn = (x + 0.5 - cam.cx) / cam.fx;
        depth.at(x, y, 0) = 2.0 / (1.0 - 0.3 * xn);
      }
    const Image n = normal_from_depth(depth, alpha, cam);
    const Vec3 expected = Vec3{0.3, 0.0, -1.0}.normalized();
    const Vec3 got{n.at(8, 8, 0), n.at(8, 8, 1), n.at(8, 8, 2)};
    CHECK((got - expected).norm() < 1e-3);
  }
  SUBCASE("isolated pixels have no normal") {
    Image depth(17, 17, 1);
    Image alpha(17, 17, 1);
    depth.at(8, 8, 0) = 1.0;
    alpha.at(8, 8, 0) = 1.0;
    const Image n = normal_from_depth(depth, alpha, cam);
    for (const double v : n.data) CHECK(v == 0.0);
  }
}

TEST_CASE("normal_consistency examples") {
  const Vec3 n_ref{0, 0, 1};
  std::vector<SplatSample> samples{ws(0.4, 1.0), ws(0.3, 1.2)};
  SUBCASE("aligned normals give zero") {
    const std::vector<Vec3> normals{n_ref, n_ref};
    CHECK(normal_consistency(samples, normals, n_ref) == doctest::Approx(0.0));
  }
  SUBCASE("opposed unit-weight normal gives two") {
    std::vector<SplatSample> one{ws(1.0, 1.0)};
    const std::vector<Vec3> normals{-n_ref};
    CHECK(normal_consistency(one, normals, n_ref) == doctest::Approx(2.0));
  }
  SUBCASE("zero weights give zero") {
    std::vector<SplatSample> zero{ws(0.0, 1.0), ws(0.0, 2.0)};
    const std::vector<Vec3> normals{n_ref, -n_ref};
    CHECK(normal_consistency(zero, normals, n_ref) == doctest::Approx(0.0));
  }
}

TEST_CASE("total_loss composition and self consistency") {
  LossConfig cfg;
  cfg.n_threads = 1;
  const Supervision sup = make_supervision(17, 24);

  SUBCASE("scene reproducing ground truth leaves only regularizers") {
    SynthConfig scfg;
    scfg.image_size = 24;
    scfg.seed = 17;
    scfg.n_splats = 12;
    const Scene gt = synthetic_scene(scfg);
    const LossReport r = total_loss(gt, sup, cfg, false);
    CHECK(r.l_image < 1e-8);
    CHECK(r.l_geometry < 1e-8);
    CHECK(r.l_total == doctest::Approx(cfg.gamma_d * r.l_distortion +
                                       cfg.gamma_n * r.l_normal));
  }
  SUBCASE("composition identity at the default weights") {
    const Scene s = random_scene(8, 6);
    const LossReport r = total_loss(s, sup, cfg, false);
    CHECK(cfg.gamma_d == 1000.0);
    CHECK(cfg.gamma_n == 0.2);
    CHECK(std::abs(r.l_total - (r.l_image + 1000.0 * r.l_distortion +
                                0.2 * r.l_normal + r.l_geometry)) <= 1e-9);
  }
  SUBCASE("albedo perturbation moves the image term only") {
    Scene s = random_scene(8, 6);
    const LossReport base = total_loss(s, sup, cfg, false);
    s.gaussians[0].albedo.x = std::min(1.0, s.gaussians[0].albedo.x + 0.2);
    const LossReport moved = total_loss(s, sup, cfg, false);
    CHECK(moved.l_image != doctest::Approx(base.l_image));
    CHECK(moved.l_geometry == doctest::Approx(base.l_geometry));
    CHECK(moved.l_distortion == doctest::Approx(base.l_distortion));
  }
  SUBCASE("doubling gamma_d doubles the distortion contribution") {
    const Scene s = random_scene(9, 6);
    LossConfig c2 = cfg;
    c2.gamma_d *= 2.0;
    const LossReport a = total_loss(s, sup, cfg, false);
    const LossReport b = total_loss(s, sup, c2, false);
    CHECK(b.l_distortion == doctest::Approx(a.l_distortion));
    CHECK(b.l_total - b.l_image - b.l_geometry - cfg.gamma_n * b.l_normal ==
          doctest::Approx(2.0 * (a.l_total - a.l_image - a.l_geometry -
                                 cfg.gamma_n * a.l_normal)));
  }
  SUBCASE("missing supervision channel throws") {
    Supervision broken = sup;
    broken[2].roughness = Image();
    CHECK_THROWS(total_loss(random_scene(8, 4), broken, cfg, false));
  }
}

TEST_CASE("analytic gradients match finite differences") {
  LossConfig cfg;
  cfg.n_threads = 1;
  const double eps = 1e-4;
  int tested = 0;
  double worst = 0.0;
  for (uint64_t seed = 0; tested < 4 && seed < 200; ++seed) {
    const Supervision sup = mgs_test::grad_supervision(100 + seed, 16);
    const Scene s = mgs_test::grad_test_scene(1000 + seed, 3);
    if (fd_hazards(s, sup, cfg, eps)) continue;
    const double err = grad_check(s, sup, cfg, eps);
    worst = std::max(worst, err);
    ++tested;
  }
  REQUIRE(tested == 4);
  CHECK(worst < 1e-3);
}

TEST_CASE("zero-opacity scene has zero material-channel gradients") {
  LossConfig cfg;
  cfg.n_threads = 1;
  const Supervision sup = make_supervision(23, 24);
  Scene s = random_scene(23, 5);
  for (auto& g : s.gaussians) g.opacity = 0.0;
  const LossReport r = total_loss(s, sup, cfg, true);
  for (const auto& g : r.gradients) {
    CHECK(g.albedo.norm() == 0.0);
    CHECK(g.roughness == 0.0);
    CHECK(g.metallic == 0.0);
  }
}

TEST_CASE("image loss alone still moves positions") {
  LossConfig cfg;
  cfg.n_threads = 1;
  cfg.gamma_d = 0.0;
  cfg.gamma_n = 0.0;
  Supervision sup = make_supervision(29, 24);
  for (auto& v : sup) v.has_geometry = false;  // image term only
  const Scene s = random_scene(29, 5);
  const LossReport r = total_loss(s, sup, cfg, true);
  double pos_norm = 0.0;
  for (const auto& g : r.gradients) pos_norm += g.position.norm2();
  CHECK(pos_norm > 0.0);
}

TEST_CASE("image loss stays nonnegative on in-range inputs") {
  const Scene a = random_scene(41, 6), b = random_scene(42, 6);
  SynthConfig cfg;
  cfg.image_size = 20;
  for (const double az : {15.0, 140.0, 260.0}) {
    const Camera cam = camera_ring(cfg, {az}, 10.0)[0];
    const GBuffer ga = render_fast(a, cam), gb = render_fast(b, cam);
    CHECK(image_loss(ga, gb) >= 0.0);
    CHECK(image_loss(gb, ga) >= 0.0);
  }
}

TEST_CASE("psnr formula") {
  const Image a = constant_image(8, 8, 1, 0.5);
  Image b = a;
  CHECK(std::isinf(psnr(a, b)));
  for (auto& v : b.data) v += 0.1;
  CHECK(psnr(a, b) == doctest::Approx(20.0));
}
