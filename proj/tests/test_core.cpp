// Copyright Contributors to the mgs Project
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mgs/rng.hpp"
#include "mgs/types.hpp"

using namespace mgs;

namespace {

// independent quaternion->rotation oracle: rotate v by q v q*
Vec3 rotate_by_quat(const Vec4& q, const Vec3& v) {
  const Vec3 u{q.x, q.y, q.z};
  return u * (2.0 * dot(u, v)) + v * (q.w * q.w - dot(u, u)) +
         cross(u, v) * (2.0 * q.w);
}

Scene one_gaussian_scene() {
  Scene s;
  MaterialGaussian2D g;
  g.position = {0.1, -0.2, 0.0};
  g.scale = {0.2, 0.1};
  g.opacity = 0.7;
  g.albedo = {0.2, 0.4, 0.6};
  g.roughness = 0.3;
  g.metallic = 0.1;
  s.gaussians.push_back(g);
  return s;
}

}  // namespace

TEST_CASE("quat_to_frame identity rotation") {
  const auto f = quat_to_frame({1, 0, 0, 0});
  CHECK(f.t_u.x == doctest::Approx(1.0));
  CHECK(f.t_u.y == doctest::Approx(0.0));
  CHECK(f.t_v.y == doctest::Approx(1.0));
  CHECK(f.normal.z == doctest::Approx(1.0));
}

TEST_CASE("quat_to_frame 90 degrees about z matches quaternion oracle") {
  const double s = std::sqrt(2.0) / 2.0;
  const Vec4 q{s, 0, 0, s};
  const auto f = quat_to_frame(q);
  const Vec3 tu_oracle = rotate_by_quat(q, {1, 0, 0});
  const Vec3 tv_oracle = rotate_by_quat(q, {0, 1, 0});
  CHECK((f.t_u - tu_oracle).norm() < 1e-12);
  CHECK((f.t_v - tv_oracle).norm() < 1e-12);
  CHECK(f.t_u.x == doctest::Approx(0.0));
  CHECK(f.t_u.y == doctest::Approx(1.0));
  CHECK(f.t_v.x == doctest::Approx(-1.0));
  CHECK(f.normal.z == doctest::Approx(1.0));
}

TEST_CASE("quat_to_frame rejects non-unit quaternions") {
  CHECK_THROWS(quat_to_frame({0.5, 0.5, 0.5, 0.4}));
}

TEST_CASE("quat_to_frame double cover: q and -q give the same frame") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Vec4 q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    q = q.normalized();
    const auto f1 = quat_to_frame(q);
    const auto f2 = quat_to_frame(q * -1.0);
    CHECK((f1.t_u - f2.t_u).norm() < 1e-14);
    CHECK((f1.t_v - f2.t_v).norm() < 1e-14);
    CHECK((f1.normal - f2.normal).norm() < 1e-14);
  }
}

TEST_CASE("pixel_ray principal pixel of an identity camera") {
  Camera cam;
  cam.width = cam.height = 5;
  cam.fx = cam.fy = 2.0;
  cam.cx = cam.cy = 2.5;
  const Ray r = pixel_ray(cam, 2, 2);
  CHECK(r.direction.x == doctest::Approx(0.0));
  CHECK(r.direction.y == doctest::Approx(0.0));
  CHECK(r.direction.z == doctest::Approx(1.0));
  CHECK(r.origin.norm() == doctest::Approx(0.0));
}

TEST_CASE("pixel_ray origin for the canonical camera distance") {
  const Camera cam = make_lookat_camera({0, 0, 1.5}, {0, 0, 0}, {0, 1, 0}, 64, 64, 50.0);
  const Ray r = pixel_ray(cam, 10, 20);
  CHECK(r.origin.x == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.origin.y == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.origin.z == doctest::Approx(1.5));
}

TEST_CASE("pixel_ray rejects out-of-range pixels") {
  Camera cam;
  cam.width = cam.height = 4;
  cam.fx = cam.fy = 2.0;
  cam.cx = cam.cy = 2.0;
  CHECK_THROWS(pixel_ray(cam, 4, 0));
  CHECK_THROWS(pixel_ray(cam, 0, -1));
}

TEST_CASE("pixel_ray directions are unit and plucker moments orthogonal") {
  const Camera cam = make_lookat_camera({0.4, -1.2, 0.8}, {0, 0, 0}, {0, 0, 1}, 17, 13, 50.0);
  for (int py = 0; py < cam.height; py += 3)
    for (int px = 0; px < cam.width; px += 2) {
      const Ray r = pixel_ray(cam, px, py);
      CHECK(std::abs(r.direction.norm() - 1.0) < 1e-6);
      const PluckerEmbedding pe = plucker_embed(cam, px, py);
      CHECK(std::abs(dot(pe.moment, pe.direction)) < 1e-6);
      CHECK(std::abs(pe.direction.norm() - 1.0) < 1e-6);
    }
}

TEST_CASE("plucker embedding rejects invalid pixels") {
  Camera cam;
  cam.width = cam.height = 4;
  cam.fx = cam.fy = 2.0;
  cam.cx = cam.cy = 2.0;
  CHECK_THROWS(plucker_embed(cam, 4, 0));
}

TEST_CASE("plucker embedding values") {
  SUBCASE("origin camera ray") {
    const PluckerEmbedding pe = plucker_of_ray({{0, 0, 0}, {0, 0, 1}});
    CHECK(pe.direction.z == doctest::Approx(1.0));
    CHECK(pe.moment.norm() == doctest::Approx(0.0));
  }
  SUBCASE("offset origin") {
    const PluckerEmbedding pe = plucker_of_ray({{1, 0, 0}, {0, 0, 1}});
    // cross-product oracle: (1,0,0) x (0,0,1) = (0,-1,0)
    CHECK(pe.moment.x == doctest::Approx(0.0));
    CHECK(pe.moment.y == doctest::Approx(-1.0));
    CHECK(pe.moment.z == doctest::Approx(0.0));
  }
}

TEST_CASE("validate_scene reports violations with index and field") {
  Scene s = one_gaussian_scene();
  CHECK(validate_scene(s).empty());

  SUBCASE("opacity out of range") {
    s.gaussians[0].opacity = 1.2;
    const auto v = validate_scene(s);
    REQUIRE(v.size() == 1);
    CHECK(v[0].gaussian_index == 0);
    CHECK(v[0].field == "opacity");
  }
  SUBCASE("position outside bbox") {
    s.gaussians[0].position = {0.9, 0, 0};
    const auto v = validate_scene(s);
    REQUIRE(v.size() == 1);
    CHECK(v[0].field == "position");
  }
  SUBCASE("negative scale") {
    s.gaussians[0].scale.y = -0.1;
    CHECK(validate_scene(s).size() == 1);
  }
  SUBCASE("idempotent and side-effect free") {
    s.gaussians[0].opacity = 1.2;
    const auto v1 = validate_scene(s);
    const auto v2 = validate_scene(s);
    CHECK(v1.size() == v2.size());
    CHECK(s.gaussians[0].opacity == 1.2);
  }
}

TEST_CASE("camera rotation validation") {
  Camera cam = make_lookat_camera({1, 1, 1}, {0, 0, 0}, {0, 0, 1}, 8, 8, 50.0);
  CHECK(camera_rotation_valid(cam));
  cam.world_to_camera[1] += 0.01;  // shear
  CHECK(!camera_rotation_valid(cam));
}

TEST_CASE("deterministic rng reproduces sequences") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.uniform() == b.uniform());
  Rng c(42), d(43);
  CHECK(c.uniform() != d.uniform());
}
