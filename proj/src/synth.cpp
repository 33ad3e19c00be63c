// Copyright Contributors to the mgs Project
// SPDX-License-Identifier: Apache-2.0
#include "mgs/synth.hpp"

#include <cmath>

#include "mgs/rasterizer.hpp"
#include "mgs/rng.hpp"

namespace mgs {

Scene synthetic_scene(const SynthConfig& cfg) {
  Rng rng(cfg.seed);
  Scene scene;
  scene.gaussians.reserve(cfg.n_splats);
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int k = 0; k < cfg.n_splats; ++k) {
    // Fibonacci sphere directions for even shell coverage.
    const double t = (k + 0.5) / cfg.n_splats;
    const double z = 1.0 - 2.0 * t;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * k;
    const Vec3 dir{r * std::cos(phi), r * std::sin(phi), z};

    MaterialGaussian2D g;
    g.position = dir * (cfg.shell_radius * (1.0 + 0.04 * (rng.uniform() - 0.5)));
    const double twist = rng.uniform(0.0, 2.0 * M_PI);
    const Vec4 spin{std::cos(0.5 * twist), 0, 0, std::sin(0.5 * twist)};
    g.rotation = quat_mul(quat_align_z_to(dir), spin).normalized();
    const double base = 2.4 * cfg.shell_radius / std::sqrt(static_cast<double>(cfg.n_splats));
    g.scale = {base * (1.0 + 0.25 * rng.uniform()), base * (0.8 + 0.25 * rng.uniform())};
    g.opacity = 0.90 + 0.08 * rng.uniform();
    g.albedo = {0.5 + 0.4 * dir.x, 0.5 + 0.4 * dir.y, 0.5 + 0.4 * dir.z};
    g.roughness = 0.5 + 0.35 * dir.z;
    g.metallic = 0.5 + 0.4 * dir.x;
    scene.gaussians.push_back(g);
  }
  return scene;
}

std::vector<Camera> camera_ring(const SynthConfig& cfg,
                                const std::vector<double>& azimuths_deg,
                                double elevation_deg) {
  std::vector<Camera> cams;
  const double el = elevation_deg * M_PI / 180.0;
  for (const double az_deg : azimuths_deg) {
    const double az = az_deg * M_PI / 180.0;
    const Vec3 eye{cfg.cam_distance * std::cos(el) * std::cos(az),
                   cfg.cam_distance * std::cos(el) * std::sin(az),
                   cfg.cam_distance * std::sin(el)};
    cams.push_back(make_lookat_camera(eye, {0, 0, 0}, {0, 0, 1}, cfg.image_size,
                                      cfg.image_size, cfg.fov_y_deg));
  }
  return cams;
}

std::vector<Camera> input_ring(const SynthConfig& cfg) {
  return camera_ring(cfg, {0, 90, 180, 270}, 0.0);
}

std::vector<Camera> novel_ring(const SynthConfig& cfg) {
  return camera_ring(cfg, {45, 135, 225, 315}, 20.0);
}

std::vector<Camera> heldout_ring(const SynthConfig& cfg) {
  return camera_ring(cfg, {22.5, 112.5, 202.5, 292.5}, -15.0);
}

Supervision render_supervision(const Scene& scene,
                               const std::vector<Camera>& input_views,
                               const std::vector<Camera>& novel_views,
                               int n_threads) {
  Supervision sup;
  RenderOptions ropts;
  ropts.n_threads = n_threads;
  for (std::size_t i = 0; i < input_views.size() + novel_views.size(); ++i) {
    const bool is_input = i < input_views.size();
    const Camera& cam = is_input ? input_views[i] : novel_views[i - input_views.size()];
    GBuffer gb = render_fast(scene, cam, ropts);
    SupervisionView v;
    v.camera = cam;
    v.albedo = std::move(gb.albedo);
    v.roughness = std::move(gb.roughness);
    v.metallic = std::move(gb.metallic);
    if (is_input) {
      v.has_geometry = true;
      v.depth = std::move(gb.depth);
      v.normal = std::move(gb.normal);
      v.alpha = std::move(gb.alpha);
    }
    sup.push_back(std::move(v));
  }
  return sup;
}

}  // namespace mgs
