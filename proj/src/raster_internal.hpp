// Copyright Contributors to the mgs Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mgs/rasterizer.hpp"
#include "mgs/types.hpp"

// Per-view precomputation shared by the oracle, the fast path and the
// backward pass. Both render paths must run the exact same per-pixel
// arithmetic so their outputs agree bitwise.

namespace mgs::detail {

struct PrepGaussian {
  Vec3 t_u, t_v, normal;  // frame of the normalized quaternion
  Vec4 q_unit;
  double q_norm{1};
  Vec3 center_cam;
  double sx{0}, sy{0};  // projected center, pixel coordinates
  bool visible{false};
};

struct PreparedView {
  std::vector<PrepGaussian> prep;
  std::vector<uint32_t> order;  // visible splats sorted by (center depth, index)
  Mat3 rot;
  Vec3 cam_pos;
};

inline PreparedView prepare_view(const Scene& scene, const Camera& camera) {
  PreparedView pv;
  pv.rot = camera.rotation();
  pv.cam_pos = camera.position();
  const std::size_t n = scene.gaussians.size();
  pv.prep.resize(n);
  pv.order.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& g = scene.gaussians[i];
    auto& p = pv.prep[i];
    p.q_norm = g.rotation.norm();
    p.q_unit = g.rotation.normalized();
    const Mat3 r = quat_to_matrix(p.q_unit);
    p.t_u = r.col(0);
    p.t_v = r.col(1);
    p.normal = cross(p.t_u, p.t_v);
    p.center_cam = camera.to_camera(g.position);
    p.visible = p.center_cam.z > raster::kNearEps;
    if (p.visible) {
      p.sx = camera.fx * p.center_cam.x / p.center_cam.z + camera.cx;
      p.sy = camera.fy * p.center_cam.y / p.center_cam.z + camera.cy;
      pv.order.push_back(static_cast<uint32_t>(i));
    }
  }
  std::sort(pv.order.begin(), pv.order.end(), [&](uint32_t a, uint32_t b) {
    const double za = pv.prep[a].center_cam.z, zb = pv.prep[b].center_cam.z;
    return za < zb || (za == zb && a < b);
  });
  return pv;
}

struct PixelRay {
  Vec3 origin;
  Vec3 dir;       // unit, world space
  double kappa;   // view-space z per unit ray parameter
  double pcx, pcy;  // pixel center
};

inline PixelRay make_pixel_ray(const Camera& camera, const PreparedView& pv,
                               int px, int py) {
  PixelRay r;
  r.pcx = px + 0.5;
  r.pcy = py + 0.5;
  const Vec3 dir_cam{(r.pcx - camera.cx) / camera.fx,
                     (r.pcy - camera.cy) / camera.fy, 1.0};
  const double inv_norm = 1.0 / dir_cam.norm();
  r.dir = pv.rot.tmul(dir_cam) * inv_norm;
  r.kappa = inv_norm;  // (R d).z for d_cam = (.,.,1)
  r.origin = pv.cam_pos;
  return r;
}

// Forward state for one ray-splat sample; also reused by the backward pass.
struct SampleEval {
  double denom{0}, tstar{0};
  Vec3 delta;     // hit point minus splat center
  double u{0}, v{0};
  double g_obj{0}, g_scr{0}, g_hat{0};
  bool screen_branch{false};
  double z{0};
  double flip{1};  // normal flip sign so the splat faces the camera
};

// Evaluates one splat against one pixel ray. Returns false when the splat
// produces no sample for this ray.
inline bool eval_sample(const MaterialGaussian2D& g, const PrepGaussian& p,
                        const PixelRay& ray, SampleEval& s) {
  s.denom = dot(ray.dir, p.normal);
  if (std::abs(s.denom) <= raster::kDenomMin) return false;
  s.tstar = dot(g.position - ray.origin, p.normal) / s.denom;
  if (s.tstar <= 0.0) return false;
  const Vec3 hit = ray.origin + ray.dir * s.tstar;
  s.delta = hit - g.position;
  s.u = dot(s.delta, p.t_u) / g.scale.x;
  s.v = dot(s.delta, p.t_v) / g.scale.y;
  const double r2 = s.u * s.u + s.v * s.v;
  s.g_obj = r2 <= raster::kCutoffUvNormSq ? std::exp(-0.5 * r2) : 0.0;
  const double dx = p.sx - ray.pcx, dy = p.sy - ray.pcy;
  const double dist2 = dx * dx + dy * dy;
  constexpr double inv_two_sigma2 =
      1.0 / (2.0 * raster::kLowPassSigma * raster::kLowPassSigma);
  s.g_scr = dist2 <= raster::kCutoffScreenDistSq
                ? std::exp(-dist2 * inv_two_sigma2)
                : 0.0;
  s.screen_branch = s.g_scr > s.g_obj;
  s.g_hat = s.screen_branch ? s.g_scr : s.g_obj;
  if (s.g_hat <= 0.0) return false;
  s.z = s.tstar * ray.kappa;
  if (s.z > raster::kFarZ) return false;  // grazing-plane hit, unusable depth
  s.flip = dot(p.normal, ray.dir) > 0.0 ? -1.0 : 1.0;
  return true;
}

struct PixelAccum {
  double c[5]{0, 0, 0, 0, 0};
  double alpha{0};
  double depth_sum{0};
  Vec3 normal_sum;
};

// Blends the candidate splats (already in global sorted order) for one pixel.
// Appends retained samples to `samples` when it is non-null.
inline PixelAccum shade_pixel(const Scene& scene, const PreparedView& pv,
                              const std::vector<uint32_t>& candidates,
                              const PixelRay& ray,
                              std::vector<SplatSample>* samples) {
  PixelAccum acc;
  double transmittance = 1.0;
  SampleEval s;
  for (const uint32_t idx : candidates) {
    const auto& g = scene.gaussians[idx];
    if (!eval_sample(g, pv.prep[idx], ray, s)) continue;
    const double a = g.opacity * s.g_hat;
    const double w = a * transmittance;
    acc.c[0] += w * g.albedo.x;
    acc.c[1] += w * g.albedo.y;
    acc.c[2] += w * g.albedo.z;
    acc.c[3] += w * g.roughness;
    acc.c[4] += w * g.metallic;
    acc.alpha += w;
    acc.depth_sum += w * s.z;
    acc.normal_sum += (pv.prep[idx].normal * s.flip) * w;
    if (samples)
      samples->push_back({idx, {s.u, s.v}, s.g_obj, s.g_hat, s.z, w});
    transmittance *= 1.0 - a;
    if (transmittance < raster::kTransmittanceMin) break;
  }
  return acc;
}

inline void store_pixel(GBuffer& gb, int px, int py, const PixelAccum& acc) {
  gb.albedo.at(px, py, 0) = acc.c[0];
  gb.albedo.at(px, py, 1) = acc.c[1];
  gb.albedo.at(px, py, 2) = acc.c[2];
  gb.roughness.at(px, py, 0) = acc.c[3];
  gb.metallic.at(px, py, 0) = acc.c[4];
  gb.alpha.at(px, py, 0) = acc.alpha;
  if (acc.alpha > raster::kAlphaMin) {
    gb.depth.at(px, py, 0) = acc.depth_sum / acc.alpha;
    const double len = acc.normal_sum.norm();
    if (len > 1e-12) {
      const Vec3 n = acc.normal_sum / len;
      gb.normal.at(px, py, 0) = n.x;
      gb.normal.at(px, py, 1) = n.y;
      gb.normal.at(px, py, 2) = n.z;
    }
  }
}

inline GBuffer make_gbuffer(int w, int h) {
  GBuffer gb;
  gb.albedo = Image(w, h, 3);
  gb.roughness = Image(w, h, 1);
  gb.metallic = Image(w, h, 1);
  gb.depth = Image(w, h, 1);
  gb.normal = Image(w, h, 3);
  gb.alpha = Image(w, h, 1);
  return gb;
}

// Conservative screen-space radius (pixels) around the projected center that
// bounds every pixel this splat can sample, or a negative value when no
// finite bound exists. Covers the 3-sigma uv disk and the low-pass kernel.
inline double cull_radius_px(const Camera& camera, const MaterialGaussian2D& g,
                             const PrepGaussian& p) {
  const double world_r = 3.0 * std::max(g.scale.x, g.scale.y);
  const double z0 = p.center_cam.z;
  if (z0 - world_r <= raster::kNearEps) return -1.0;
  const double zr = z0 - world_r;
  const double rx =
      camera.fx * world_r / zr * (1.0 + std::abs(p.center_cam.x) / z0);
  const double ry =
      camera.fy * world_r / zr * (1.0 + std::abs(p.center_cam.y) / z0);
  const double screen_kernel = std::sqrt(raster::kCutoffScreenDistSq);
  return std::max(rx, ry) + screen_kernel + 1.0;
}

}  // namespace mgs::detail
