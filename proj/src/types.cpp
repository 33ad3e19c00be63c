// Copyright Contributors to the mgs Project
// SPDX-License-Identifier: Apache-2.0
#include "mgs/types.hpp"

#include <cmath>
#include <stdexcept>

namespace mgs {

SurfelFrame quat_to_frame(const Vec4& rotation) {
  if (std::abs(rotation.norm() - 1.0) > 1e-4)
    throw std::invalid_argument("quat_to_frame: quaternion is not unit length");
  const Mat3 r = quat_to_matrix(rotation);
  SurfelFrame f;
  f.t_u = r.col(0);
  f.t_v = r.col(1);
  f.normal = cross(f.t_u, f.t_v);
  return f;
}

Ray pixel_ray(const Camera& camera, int px, int py) {
  if (px < 0 || px >= camera.width || py < 0 || py >= camera.height)
    throw std::out_of_range("pixel_ray: pixel outside image");
  const Vec3 dir_cam{(px + 0.5 - camera.cx) / camera.fx,
                     (py + 0.5 - camera.cy) / camera.fy, 1.0};
  const Mat3 r = camera.rotation();
  Ray ray;
  ray.origin = camera.position();
  ray.direction = r.tmul(dir_cam).normalized();
  return ray;
}

PluckerEmbedding plucker_of_ray(const Ray& ray) {
  return {ray.direction, cross(ray.origin, ray.direction)};
}

PluckerEmbedding plucker_embed(const Camera& camera, int px, int py) {
  return plucker_of_ray(pixel_ray(camera, px, py));
}

std::vector<Violation> validate_scene(const Scene& scene) {
  std::vector<Violation> out;
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  for (std::size_t i = 0; i < scene.gaussians.size(); ++i) {
    const auto& g = scene.gaussians[i];
    const int idx = static_cast<int>(i);
    if (!scene.bbox.contains(g.position))
      out.push_back({idx, "position", "position outside scene bbox"});
    if (!(g.scale.x > 0.0) || !(g.scale.y > 0.0))
      out.push_back({idx, "scale", "scale components must be > 0"});
    if (std::abs(g.rotation.norm() - 1.0) > 1e-6)
      out.push_back({idx, "rotation", "quaternion not unit length"});
    if (!in01(g.opacity)) out.push_back({idx, "opacity", "opacity outside [0,1]"});
    if (!in01(g.albedo.x) || !in01(g.albedo.y) || !in01(g.albedo.z))
      out.push_back({idx, "albedo", "albedo channel outside [0,1]"});
    if (!in01(g.roughness)) out.push_back({idx, "roughness", "roughness outside [0,1]"});
    if (!in01(g.metallic)) out.push_back({idx, "metallic", "metallic outside [0,1]"});
  }
  return out;
}

bool camera_rotation_valid(const Camera& camera, double tol) {
  const Mat3 r = camera.rotation();
  const Mat3 rtr = mul(r.transposed(), r);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const double expect = i == j ? 1.0 : 0.0;
      if (std::abs(rtr.at(i, j) - expect) > tol) return false;
    }
  return r.det() > 0.0;
}

Camera make_lookat_camera(const Vec3& eye, const Vec3& target, const Vec3& up,
                          int width, int height, double fov_y_deg) {
  const Vec3 fwd = (target - eye).normalized();
  Vec3 right = cross(fwd, up);
  if (right.norm() < 1e-9)
    throw std::invalid_argument("make_lookat_camera: view direction parallel to up");
  right = right.normalized();
  const Vec3 down = cross(fwd, right);  // +y in camera space points down in world

  Camera cam;
  cam.width = width;
  cam.height = height;
  const double f = 0.5 * height / std::tan(0.5 * fov_y_deg * M_PI / 180.0);
  cam.fx = cam.fy = f;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;

  const Vec3 rows[3] = {right, down, fwd};
  for (int i = 0; i < 3; ++i) {
    cam.world_to_camera[i * 4 + 0] = rows[i].x;
    cam.world_to_camera[i * 4 + 1] = rows[i].y;
    cam.world_to_camera[i * 4 + 2] = rows[i].z;
    cam.world_to_camera[i * 4 + 3] = -dot(rows[i], eye);
  }
  for (int j = 0; j < 3; ++j) cam.world_to_camera[12 + j] = 0.0;
  cam.world_to_camera[15] = 1.0;
  return cam;
}

}  // namespace mgs
