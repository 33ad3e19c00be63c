// Copyright Contributors to the mgs Project
// SPDX-License-Identifier: Apache-2.0

// Composition of the full training objective: image reconstruction on the
// material renders, masked geometry supervision, depth distortion and normal
// consistency, with analytic gradients routed through the renderer backward
// pass. Scalars and gradients are accumulated in double over a fixed view
// order so evaluations are reproducible.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <stdexcept>

#include "mgs/losses.hpp"
#include "param_ref.hpp"
#include "raster_internal.hpp"

namespace mgs {

namespace {

void check_view(const SupervisionView& v, std::size_t idx) {
  auto fail = [&](const std::string& what) {
    throw std::invalid_argument("supervision view " + std::to_string(idx) + ": " + what);
  };
  if (v.albedo.empty()) fail("missing albedo");
  if (v.roughness.empty()) fail("missing roughness");
  if (v.metallic.empty()) fail("missing metallic");
  if (v.albedo.width != v.camera.width || v.albedo.height != v.camera.height)
    fail("albedo resolution does not match camera");
  if (v.has_geometry) {
    if (v.depth.empty()) fail("missing depth");
    if (v.normal.empty()) fail("missing normal");
    if (v.alpha.empty()) fail("missing alpha");
  }
}

void add_mse_grad(const Image& pred, const Image& gt, double scale, Image& d_pred) {
  const double k = 2.0 * scale / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i)
    d_pred.data[i] += k * (pred.data[i] - gt.data[i]);
}

// Per-pixel distortion over samples sorted by intersection depth. Returns the
// loss; optionally adds scaled gradients w.r.t. the original sample slots.
// Callable concurrently from the backward pass.
double pixel_distortion(std::span<const SplatSample> samples, double grad_scale,
                        double* d_weight, double* d_depth) {
  const std::size_t m = samples.size();
  if (m < 2) return 0.0;
  thread_local std::vector<uint32_t> order;
  order.resize(m);
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
    return samples[a].depth < samples[b].depth ||
           (samples[a].depth == samples[b].depth && a < b);
  });
  double loss = 0.0, prefix_w = 0.0, prefix_wz = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    const auto& s = samples[order[k]];
    loss += s.weight * (s.depth * prefix_w - prefix_wz);
    prefix_w += s.weight;
    prefix_wz += s.weight * s.depth;
  }
  loss *= 2.0;
  if (d_weight) {
    double suffix_w = 0.0, suffix_wz = 0.0;
    double pre_w = prefix_w, pre_wz = prefix_wz;
    for (std::size_t k = m; k-- > 0;) {
      const auto& s = samples[order[k]];
      pre_w -= s.weight;
      pre_wz -= s.weight * s.depth;
      d_weight[order[k]] += grad_scale * 2.0 *
                            ((s.depth * pre_w - pre_wz) + (suffix_wz - s.depth * suffix_w));
      d_depth[order[k]] += grad_scale * 2.0 * s.weight * (pre_w - suffix_w);
      suffix_w += s.weight;
      suffix_wz += s.weight * s.depth;
    }
  }
  return loss;
}



}  // namespace

LossReport total_loss(const Scene& scene, const Supervision& sup,
                      const LossConfig& cfg, bool with_gradients) {
  if (sup.empty()) throw std::invalid_argument("total_loss: empty supervision");
  std::size_t n_geo = 0;
  for (std::size_t i = 0; i < sup.size(); ++i) {
    check_view(sup[i], i);
    if (sup[i].has_geometry) ++n_geo;
  }
  const double n_views = static_cast<double>(sup.size());

  LossReport report;
  if (with_gradients) report.gradients.assign(scene.gaussians.size(), GaussianGrad{});

  RenderOptions ropts;
  ropts.retain_samples = true;
  ropts.n_threads = cfg.n_threads;

  for (const auto& view : sup) {
    const Camera& cam = view.camera;
    const GBuffer gb = render_fast(scene, cam, ropts);
    const detail::PreparedView pv = detail::prepare_view(scene, cam);
    const Mat3 cam_rot = cam.rotation();
    const std::size_t n_px = static_cast<std::size_t>(cam.width) * cam.height;
    const double inv_px = 1.0 / static_cast<double>(n_px);

    report.l_image += (mse(gb.albedo, view.albedo) +
                       ssim_loss(gb.albedo, view.albedo, cfg)) / n_views;
    if (!cfg.albedo_only) {
      report.l_image += (mse(gb.roughness, view.roughness) +
                         ssim_loss(gb.roughness, view.roughness, cfg)) / n_views;
      report.l_image += (mse(gb.metallic, view.metallic) +
                         ssim_loss(gb.metallic, view.metallic, cfg)) / n_views;
    }
    if (view.has_geometry)
      report.l_geometry +=
          geometry_loss(gb, view.depth, view.normal, view.alpha, cfg) /
          static_cast<double>(n_geo);

    const Image n_cam = normal_from_depth(gb.depth, gb.alpha, cam);

    // Distortion and normal consistency, averaged over pixels. With
    // gradients requested, the per-pixel work is fused into the backward
    // callback and reduced afterwards in row-major order.
    if (!with_gradients) {
      double ld_view = 0.0, ln_view = 0.0;
      for (int py = 0; py < cam.height; ++py)
        for (int px = 0; px < cam.width; ++px) {
          const auto samples = gb.pixel_samples(px, py);
          if (samples.empty()) continue;
          ld_view += pixel_distortion(samples, 0.0, nullptr, nullptr);
          const Vec3 nc{n_cam.at(px, py, 0), n_cam.at(px, py, 1), n_cam.at(px, py, 2)};
          if (nc.norm2() > 0.0) {
            const Vec3 n_world = cam_rot.tmul(nc);
            const detail::PixelRay ray = detail::make_pixel_ray(cam, pv, px, py);
            for (const auto& s : samples) {
              const auto& prep = pv.prep[s.gaussian_index];
              const double flip = dot(prep.normal, ray.dir) > 0.0 ? -1.0 : 1.0;
              ln_view += s.weight * (1.0 - flip * dot(prep.normal, n_world));
            }
          }
        }
      report.l_distortion += ld_view * inv_px / n_views;
      report.l_normal += ln_view * inv_px / n_views;
      continue;
    }

    GBufferGrads gg;
    const double img_scale = 1.0 / n_views;
    gg.d_albedo = Image(cam.width, cam.height, 3);
    add_mse_grad(gb.albedo, view.albedo, img_scale, gg.d_albedo);
    ssim_loss_grad(gb.albedo, view.albedo, cfg, img_scale, gg.d_albedo);
    if (!cfg.albedo_only) {
      gg.d_roughness = Image(cam.width, cam.height, 1);
      gg.d_metallic = Image(cam.width, cam.height, 1);
      add_mse_grad(gb.roughness, view.roughness, img_scale, gg.d_roughness);
      ssim_loss_grad(gb.roughness, view.roughness, cfg, img_scale, gg.d_roughness);
      add_mse_grad(gb.metallic, view.metallic, img_scale, gg.d_metallic);
      ssim_loss_grad(gb.metallic, view.metallic, cfg, img_scale, gg.d_metallic);
    }

    gg.d_depth = Image(cam.width, cam.height, 1);
    gg.d_normal = Image(cam.width, cam.height, 3);
    if (view.has_geometry) {
      std::size_t n_mask = 0;
      for (int py = 0; py < cam.height; ++py)
        for (int px = 0; px < cam.width; ++px)
          if (view.alpha.at(px, py, 0) > cfg.mask_threshold) ++n_mask;
      if (n_mask > 0) {
        const double kd = 2.0 / (static_cast<double>(n_mask) * n_geo);
        const double kn = 2.0 / (static_cast<double>(3 * n_mask) * n_geo);
        for (int py = 0; py < cam.height; ++py)
          for (int px = 0; px < cam.width; ++px) {
            if (view.alpha.at(px, py, 0) <= cfg.mask_threshold) continue;
            gg.d_depth.at(px, py, 0) +=
                kd * (gb.depth.at(px, py, 0) - view.depth.at(px, py, 0));
            for (int c = 0; c < 3; ++c)
              gg.d_normal.at(px, py, c) +=
                  kn * (gb.normal.at(px, py, c) - view.normal.at(px, py, c));
          }
      }
    }

    // Normal-consistency gradient w.r.t. the depth-derived normal, pushed
    // back through the central differences into the depth image.
    const double gn_scale = cfg.gamma_n * inv_px / n_views;
    const double gd_scale = cfg.gamma_d * inv_px / n_views;
    {
      Image g_ncam(cam.width, cam.height, 3);
      for (int py = 0; py < cam.height; ++py)
        for (int px = 0; px < cam.width; ++px) {
          const Vec3 nc{n_cam.at(px, py, 0), n_cam.at(px, py, 1), n_cam.at(px, py, 2)};
          if (nc.norm2() == 0.0) continue;
          const auto samples = gb.pixel_samples(px, py);
          if (samples.empty()) continue;
          const detail::PixelRay ray = detail::make_pixel_ray(cam, pv, px, py);
          Vec3 g_nworld;
          for (const auto& s : samples) {
            const auto& prep = pv.prep[s.gaussian_index];
            const double flip = dot(prep.normal, ray.dir) > 0.0 ? -1.0 : 1.0;
            g_nworld -= (prep.normal * flip) * (s.weight * gn_scale);
          }
          const Vec3 g_nc = cam_rot * g_nworld;  // N_world = R^T N_cam
          g_ncam.at(px, py, 0) = g_nc.x;
          g_ncam.at(px, py, 1) = g_nc.y;
          g_ncam.at(px, py, 2) = g_nc.z;
        }
      // backward of normal_from_depth
      auto defined = [&](int x, int y) {
        return gb.alpha.at(x, y, 0) > raster::kAlphaMin && gb.depth.at(x, y, 0) > 0.0;
      };
      auto point = [&](int x, int y) -> Vec3 {
        const double z = gb.depth.at(x, y, 0);
        return {(x + 0.5 - cam.cx) / cam.fx * z, (y + 0.5 - cam.cy) / cam.fy * z, z};
      };
      auto add_point_grad = [&](int x, int y, const Vec3& gp) {
        gg.d_depth.at(x, y, 0) += gp.x * (x + 0.5 - cam.cx) / cam.fx +
                                  gp.y * (y + 0.5 - cam.cy) / cam.fy + gp.z;
      };
      for (int y = 1; y + 1 < cam.height; ++y)
        for (int x = 1; x + 1 < cam.width; ++x) {
          const Vec3 gn{g_ncam.at(x, y, 0), g_ncam.at(x, y, 1), g_ncam.at(x, y, 2)};
          if (gn.norm2() == 0.0) continue;
          if (!defined(x, y) || !defined(x - 1, y) || !defined(x + 1, y) ||
              !defined(x, y - 1) || !defined(x, y + 1))
            continue;
          const Vec3 dx = point(x + 1, y) - point(x - 1, y);
          const Vec3 dy = point(x, y + 1) - point(x, y - 1);
          const Vec3 c = cross(dy, dx);
          const double len = c.norm();
          if (len < 1e-15) continue;
          const Vec3 nhat = c / len;
          const Vec3 g_cross = (gn - nhat * dot(gn, nhat)) / len;
          const Vec3 g_dy = cross(dx, g_cross);
          const Vec3 g_dx = cross(g_cross, dy);
          add_point_grad(x + 1, y, g_dx);
          add_point_grad(x - 1, y, -g_dx);
          add_point_grad(x, y + 1, g_dy);
          add_point_grad(x, y - 1, -g_dy);
        }
    }

    Image ld_img(cam.width, cam.height, 1);
    Image ln_img(cam.width, cam.height, 1);
    SampleGradFn sample_fn = [&](int px, int py,
                                 std::span<const SplatSample> samples,
                                 PixelSampleGrads& out) {
      if (samples.empty()) return;
      ld_img.at(px, py, 0) = pixel_distortion(samples, gd_scale, out.d_weight, out.d_depth);
      const Vec3 nc{n_cam.at(px, py, 0), n_cam.at(px, py, 1), n_cam.at(px, py, 2)};
      if (nc.norm2() > 0.0) {
        const Vec3 n_world = cam_rot.tmul(nc);
        const detail::PixelRay ray = detail::make_pixel_ray(cam, pv, px, py);
        double ln_px = 0.0;
        for (std::size_t i = 0; i < samples.size(); ++i) {
          const auto& prep = pv.prep[samples[i].gaussian_index];
          const double flip = dot(prep.normal, ray.dir) > 0.0 ? -1.0 : 1.0;
          const Vec3 m = prep.normal * flip;
          ln_px += samples[i].weight * (1.0 - dot(m, n_world));
          out.d_weight[i] += gn_scale * (1.0 - dot(m, n_world));
          out.d_normal[i] -= n_world * (gn_scale * samples[i].weight);
        }
        ln_img.at(px, py, 0) = ln_px;
      }
    };

    // Distortion/normal-consistency sample gradients are filled per pixel by
    // the backward pass itself; must run single-tile-batch deterministic.
    RenderOptions bopts = ropts;
    const SceneGrads view_grads =
        render_backward(scene, cam, gb, gg, sample_fn, bopts);
    double ld_view = 0.0, ln_view = 0.0;
    for (const double v : ld_img.data) ld_view += v;
    for (const double v : ln_img.data) ln_view += v;
    report.l_distortion += ld_view * inv_px / n_views;
    report.l_normal += ln_view * inv_px / n_views;
    for (std::size_t i = 0; i < view_grads.size(); ++i) {
      auto& t = report.gradients[i];
      const auto& g = view_grads[i];
      t.position += g.position;
      t.scale.x += g.scale.x;
      t.scale.y += g.scale.y;
      t.rotation = t.rotation + g.rotation;
      t.opacity += g.opacity;
      t.albedo += g.albedo;
      t.roughness += g.roughness;
      t.metallic += g.metallic;
    }
  }

  report.l_total = report.l_image + cfg.gamma_d * report.l_distortion +
                   cfg.gamma_n * report.l_normal + report.l_geometry;
  const double recomposed = report.l_image + cfg.gamma_d * report.l_distortion +
                            cfg.gamma_n * report.l_normal + report.l_geometry;
  if (std::abs(report.l_total - recomposed) > 1e-9)
    throw std::logic_error("total_loss: composition identity violated");
  return report;
}

double grad_check(const Scene& scene, const Supervision& sup,
                  const LossConfig& cfg, double epsilon, double* per_class) {
  const LossReport base = total_loss(scene, sup, cfg, true);
  // slot -> class: position, scale, rotation, opacity, albedo rgb, rough, metal
  constexpr int slot_class[15] = {0, 0, 0, 1, 1, 2, 2, 2, 2, 3, 4, 5, 6, 7, 8};
  if (per_class)
    for (int c = 0; c < kGradClasses; ++c) per_class[c] = 0.0;
  double max_rel = 0.0;
  for (std::size_t i = 0; i < scene.gaussians.size(); ++i) {
    for (int k = 0; k < 15; ++k) {
      Scene plus = scene, minus = scene;
      detail::param_add(plus.gaussians[i], k, epsilon);
      detail::param_add(minus.gaussians[i], k, -epsilon);
      const double lp = total_loss(plus, sup, cfg, false).l_total;
      const double lm = total_loss(minus, sup, cfg, false).l_total;
      const double fd = (lp - lm) / (2.0 * epsilon);
      const double ana = detail::param_grad(base.gradients[i], k);
      const double rel = std::abs(ana - fd) / std::max(1e-6, std::abs(ana) + std::abs(fd));
      max_rel = std::max(max_rel, rel);
      if (per_class)
        per_class[slot_class[k]] = std::max(per_class[slot_class[k]], rel);
    }
  }
  return max_rel;
}

}  // namespace mgs
