// Copyright Contributors to the mgs Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "mgs/vec.hpp"

namespace mgs {

// One 2D Gaussian surfel with view-independent material channels.
struct MaterialGaussian2D {
  Vec3 position;            // world units, inside the scene bbox
  Vec2 scale{1, 1};         // (s_u, s_v), strictly positive
  Vec4 rotation{1, 0, 0, 0};  // unit quaternion (w, x, y, z)
  double opacity{1};        // [0, 1]
  Vec3 albedo{1, 1, 1};     // linear color, each channel [0, 1]
  double roughness{0.5};    // [0, 1]
  double metallic{0};       // [0, 1]
};

struct Bbox {
  Vec3 min{-0.5, -0.5, -0.5};
  Vec3 max{0.5, 0.5, 0.5};

  bool contains(const Vec3& p) const {
    return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y &&
           p.z >= min.z && p.z <= max.z;
  }
  double edge_length() const { return max.x - min.x; }
  Vec3 clamp(const Vec3& p) const {
    auto c = [](double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); };
    return {c(p.x, min.x, max.x), c(p.y, min.y, max.y), c(p.z, min.z, max.z)};
  }
};

struct Scene {
  std::vector<MaterialGaussian2D> gaussians;
  Bbox bbox;
};

// Pinhole camera with a rigid world-to-camera transform (row-major 4x4).
// Camera space looks along +z; pixel rays pass through pixel centers.
struct Camera {
  int width{0};
  int height{0};
  double fx{0}, fy{0}, cx{0}, cy{0};
  double world_to_camera[16]{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};

  Mat3 rotation() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r.at(i, j) = world_to_camera[i * 4 + j];
    return r;
  }
  Vec3 translation() const {
    return {world_to_camera[3], world_to_camera[7], world_to_camera[11]};
  }
  Vec3 position() const {  // camera center in world space
    const Mat3 r = rotation();
    return r.tmul(translation()) * -1.0;
  }
  Vec3 to_camera(const Vec3& p) const { return rotation() * p + translation(); }
};

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit length
};

// 6-vector (d, o x d) used as a per-pixel camera embedding.
struct PluckerEmbedding {
  Vec3 direction;
  Vec3 moment;
};

struct Violation {
  int gaussian_index{-1};  // -1 for scene-level problems
  std::string field;
  std::string message;
};

// Tangent frame of a surfel: first two rotation-matrix columns (unscaled)
// plus normal = t_u x t_v. Throws if the quaternion is off unit length by
// more than 1e-4.
struct SurfelFrame {
  Vec3 t_u, t_v, normal;
};
SurfelFrame quat_to_frame(const Vec4& rotation);

// Ray through the center of pixel (px, py). Throws on out-of-range pixels.
Ray pixel_ray(const Camera& camera, int px, int py);

PluckerEmbedding plucker_embed(const Camera& camera, int px, int py);
PluckerEmbedding plucker_of_ray(const Ray& ray);

// Reports all invariant violations; empty means the scene is valid.
std::vector<Violation> validate_scene(const Scene& scene);

// Rotation block orthonormal within tol and right-handed.
bool camera_rotation_valid(const Camera& camera, double tol = 1e-4);

// World-to-camera transform of a camera at `eye` looking at `target`.
Camera make_lookat_camera(const Vec3& eye, const Vec3& target, const Vec3& up,
                          int width, int height, double fov_y_deg);

}  // namespace mgs
