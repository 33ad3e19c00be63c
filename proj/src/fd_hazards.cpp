// Copyright Contributors to the mgs Project
// SPDX-License-Identifier: Apache-2.0

// Finite-difference hazard scanner. The renderer has hard gates (uv and
// screen-space cutoffs, transmittance termination, the alpha head, the far-z
// guard) and kinks (the low-pass max, |z_i - z_j|, depth-sort ties). Central
// differences taken across one of them disagree with the analytic gradient,
// so gradient-check scenes must be re-seeded away from them. Candidate gates
// are probed exactly: the gate is re-evaluated at the perturbed parameter
// values, and a crossing only counts when the loss jump it causes is not
// negligible against the smallest analytic gradient it can corrupt.

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "mgs/losses.hpp"
#include "param_ref.hpp"
#include "raster_internal.hpp"

namespace mgs {

namespace {

double grad_floor(const GaussianGrad& g) {
  double m = std::numeric_limits<double>::infinity();
  auto upd = [&](double v) { m = std::min(m, std::abs(v)); };
  upd(g.position.x);
  upd(g.position.y);
  upd(g.position.z);
  upd(g.scale.x);
  upd(g.scale.y);
  upd(g.rotation.w);
  upd(g.rotation.x);
  upd(g.rotation.y);
  upd(g.rotation.z);
  return m;
}

// Gate quantities of one splat against one pixel ray, recomputed from scratch
// so probes can evaluate them at perturbed parameters.
struct GateEval {
  bool hit{false};
  double r2{1e30};
  double dist2{1e30};
  double g_obj{0}, g_scr{0};
  double z{1e30};
  double abs_denom{1.0};
};

constexpr double kInvTwoSigma2 =
    1.0 / (2.0 * raster::kLowPassSigma * raster::kLowPassSigma);

GateEval eval_gates(const MaterialGaussian2D& g, const Camera& cam,
                    const detail::PixelRay& ray) {
  GateEval e;
  const Vec4 q = g.rotation.normalized();
  const Mat3 r = quat_to_matrix(q);
  const Vec3 t_u = r.col(0), t_v = r.col(1);
  const Vec3 n = cross(t_u, t_v);
  const Vec3 center_cam = cam.to_camera(g.position);
  if (center_cam.z > raster::kNearEps) {
    const double sx = cam.fx * center_cam.x / center_cam.z + cam.cx;
    const double sy = cam.fy * center_cam.y / center_cam.z + cam.cy;
    const double dx = sx - ray.pcx, dy = sy - ray.pcy;
    e.dist2 = dx * dx + dy * dy;
  }
  const double denom = dot(ray.dir, n);
  e.abs_denom = std::abs(denom);
  if (e.abs_denom <= raster::kDenomMin) return e;
  const double tstar = dot(g.position - ray.origin, n) / denom;
  if (tstar <= 0.0) return e;
  const Vec3 delta = ray.origin + ray.dir * tstar - g.position;
  const double u = dot(delta, t_u) / g.scale.x;
  const double v = dot(delta, t_v) / g.scale.y;
  e.hit = true;
  e.r2 = u * u + v * v;
  e.z = tstar * ray.kappa;
  e.g_obj = e.r2 <= raster::kCutoffUvNormSq ? std::exp(-0.5 * e.r2) : 0.0;
  e.g_scr =
      e.dist2 <= raster::kCutoffScreenDistSq ? std::exp(-e.dist2 * kInvTwoSigma2) : 0.0;
  return e;
}

bool sample_exists(const GateEval& e) {
  return e.hit && std::max(e.g_obj, e.g_scr) > 0.0 && e.z <= raster::kFarZ;
}

constexpr int kGeomParams[] = {0, 1, 2, 3, 4, 5, 6, 7, 8};

}  // namespace

const char* fd_hazard_kind_impl(const Scene& scene, const Supervision& sup,
                                const LossConfig& cfg, double epsilon,
                                std::set<std::string>* collect) {
  const char* first = nullptr;
  auto note = [&](const char* kind) -> bool {
    if (!first) first = kind;
    if (collect) {
      collect->insert(kind);
      return false;
    }
    return true;
  };

  const LossReport report = total_loss(scene, sup, cfg, true);
  auto tau = [&](std::size_t splat) {
    return std::max(1e-9, 3e-4 * grad_floor(report.gradients[splat]));
  };

  std::size_t n_geo = 0;
  for (const auto& v : sup)
    if (v.has_geometry) ++n_geo;

  const double g_edge = std::exp(-raster::kCutoffScreenDistSq * kInvTwoSigma2);

  struct Rec {
    uint32_t idx;
    GateEval gate;
    double t_before{1.0};
    double w{0.0};
    bool live{false};
  };
  std::vector<Rec> recs;

  for (const auto& view : sup) {
    const Camera& cam = view.camera;
    const detail::PreparedView pv = detail::prepare_view(scene, cam);
    const double n_views = static_cast<double>(sup.size());
    const std::size_t n_px = static_cast<std::size_t>(cam.width) * cam.height;
    const double gd_scale = cfg.gamma_d / (static_cast<double>(n_px) * n_views);
    const double gn_scale = cfg.gamma_n / (static_cast<double>(n_px) * n_views);
    const double img_sens = 15.0 / (static_cast<double>(n_px) * n_views);
    double geo_sens = 0.0;
    if (view.has_geometry) {
      std::size_t n_mask = 0;
      for (int py = 0; py < cam.height; ++py)
        for (int px = 0; px < cam.width; ++px)
          if (view.alpha.at(px, py, 0) > cfg.mask_threshold) ++n_mask;
      if (n_mask > 0)
        geo_sens = 8.0 / (static_cast<double>(n_mask) * static_cast<double>(n_geo));
    }

    // depth-sort order flips: center depth is position along the view axis,
    // unit sensitivity, so a 3 epsilon band is already generous
    for (std::size_t i = 1; i < pv.order.size(); ++i) {
      const double dz = pv.prep[pv.order[i]].center_cam.z -
                        pv.prep[pv.order[i - 1]].center_cam.z;
      if (dz < epsilon * 3.0)
        if (note("center_tie")) return first;
    }

    for (int py = 0; py < cam.height; ++py)
      for (int px = 0; px < cam.width; ++px) {
        const detail::PixelRay ray = detail::make_pixel_ray(cam, pv, px, py);
        recs.clear();
        double transmittance = 1.0;
        for (const uint32_t idx : pv.order) {
          const auto& g = scene.gaussians[idx];
          const GateEval gate = eval_gates(g, cam, ray);
          const bool screen_near = gate.dist2 <= raster::kCutoffScreenDistSq + 0.3;
          if (!gate.hit) {
            // behind or parallel; only a screen-supported sample could appear
            if (screen_near && gate.abs_denom < 1e-5 &&
                gate.abs_denom > raster::kDenomMin)
              if (note("denom")) return first;
            continue;
          }
          const double g_hat = std::max(gate.g_obj, gate.g_scr);
          if (g_hat > 0.0 && gate.z > 0.9 * raster::kFarZ) {
            if (gate.z < 1.2 * raster::kFarZ)
              if (note("farz")) return first;
            continue;
          }
          const bool near_gate =
              std::abs(gate.r2 - raster::kCutoffUvNormSq) < 0.5 ||
              std::abs(gate.dist2 - raster::kCutoffScreenDistSq) < 0.3 ||
              (gate.g_obj > 0.0 && gate.g_scr > 0.0 &&
               std::abs(gate.g_obj - gate.g_scr) < 0.05 + 0.2 * g_hat);
          if (g_hat > 0.0 || near_gate) {
            Rec rec;
            rec.idx = idx;
            rec.gate = gate;
            rec.t_before = transmittance;
            rec.w = g.opacity * g_hat * transmittance;
            rec.live = g_hat > 0.0;
            recs.push_back(rec);
          }
          if (g_hat > 0.0) {
            // grazing splats: derivatives scale like 1/denom^2 and central
            // differences at the probe step are dominated by truncation
            if (gate.abs_denom < 0.12 && g.opacity * g_hat * transmittance > 3e-4)
              if (note("grazing")) return first;
            transmittance *= 1.0 - g.opacity * g_hat;
            if (transmittance >= raster::kTransmittanceMin * 0.99 &&
                transmittance < raster::kTransmittanceMin * 1.01)
              if (note("termination")) return first;
            if (transmittance < raster::kTransmittanceMin) break;
          }
        }

        double alpha_sum = 0.0, z_min = 1e30, z_max = -1e30;
        Vec3 normal_sum;
        for (const auto& r : recs) {
          if (!r.live) continue;
          alpha_sum += r.w;
          z_min = std::min(z_min, r.gate.z);
          z_max = std::max(z_max, r.gate.z);
          const auto& p = pv.prep[r.idx];
          const double flip = dot(p.normal, ray.dir) > 0.0 ? -1.0 : 1.0;
          normal_sum += p.normal * (flip * r.w);
        }
        if (alpha_sum >= raster::kAlphaMin * 0.99 && alpha_sum < raster::kAlphaMin * 1.01)
          if (note("alpha_head")) return first;
        if (alpha_sum > raster::kAlphaMin && normal_sum.norm() < 1e-5)
          if (note("nsum")) return first;

        const bool in_mask =
            view.has_geometry && view.alpha.at(px, py, 0) > cfg.mask_threshold;
        const double z_spread = alpha_sum > 0.0 ? (z_max - z_min) : 0.0;
        // loss change per unit of sample weight appearing at this pixel
        double pixel_sens = img_sens +
                            gd_scale * 2.0 * (z_spread + 0.01) *
                                std::min(alpha_sum + 0.01, 1.0) +
                            gn_scale * 2.0;
        if (in_mask)
          pixel_sens += geo_sens * (1.0 + z_spread / std::max(alpha_sum, 0.05));

        for (const auto& r : recs) {
          const auto& gate = r.gate;
          const bool near_uv = std::abs(gate.r2 - raster::kCutoffUvNormSq) < 0.5;
          const bool near_scr =
              std::abs(gate.dist2 - raster::kCutoffScreenDistSq) < 0.3;
          const bool near_branch =
              gate.g_obj > 0.0 && gate.g_scr > 0.0 &&
              std::abs(gate.g_obj - gate.g_scr) <
                  0.05 + 0.2 * std::max(gate.g_obj, gate.g_scr);
          if (!near_uv && !near_scr && !near_branch) continue;

          const double opa = scene.gaussians[r.idx].opacity;
          // value jumps at the cutoffs: the created/destroyed weight is the
          // kernel value at the boundary, minus what the other branch keeps
          const double spike_uv = opa * r.t_before *
                                  std::max(0.0, g_edge - gate.g_scr) * pixel_sens /
                                  (2.0 * epsilon);
          const double spike_scr = opa * r.t_before *
                                   std::max(0.0, g_edge - gate.g_obj) * pixel_sens /
                                   (2.0 * epsilon);
          const double harm_floor = tau(r.idx);
          const bool check_uv = near_uv && spike_uv > harm_floor;
          const bool check_scr = near_scr && spike_scr > harm_floor;
          const bool check_branch = near_branch;
          if (!check_uv && !check_scr && !check_branch) continue;

          for (const int k : kGeomParams) {
            MaterialGaussian2D plus = scene.gaussians[r.idx];
            MaterialGaussian2D minus = plus;
            detail::param_add(plus, k, epsilon);
            detail::param_add(minus, k, -epsilon);
            const GateEval ep = eval_gates(plus, cam, ray);
            const GateEval em = eval_gates(minus, cam, ray);
            if (check_uv) {
              const bool in_p = ep.hit && ep.r2 <= raster::kCutoffUvNormSq;
              const bool in_m = em.hit && em.r2 <= raster::kCutoffUvNormSq;
              if (in_p != in_m)
                if (note("uv_ring")) return first;
            }
            if (check_scr) {
              const bool in_p = ep.dist2 <= raster::kCutoffScreenDistSq;
              const bool in_m = em.dist2 <= raster::kCutoffScreenDistSq;
              if (in_p != in_m)
                if (note("scr_ring")) return first;
            }
            if (check_branch) {
              // slope discontinuity of the max(): harmful when the slope gap
              // itself is large against the parameter's gradient
              const double slope_gap =
                  std::abs((ep.g_obj - ep.g_scr) - (em.g_obj - em.g_scr)) /
                  (2.0 * epsilon);
              const double kink = opa * r.t_before * slope_gap * pixel_sens;
              const bool side_p = ep.g_obj >= ep.g_scr;
              const bool side_m = em.g_obj >= em.g_scr;
              if (side_p != side_m && kink > harm_floor)
                if (note("branch")) return first;
            }
          }
        }

        // |z_i - z_j| kinks in the distortion term
        for (std::size_t i = 0; i < recs.size(); ++i) {
          if (!recs[i].live) continue;
          for (std::size_t j = i + 1; j < recs.size(); ++j) {
            if (!recs[j].live) continue;
            if (std::abs(recs[i].gate.z - recs[j].gate.z) > 2e-3) continue;
            const double kink = gd_scale * 2.0 * recs[i].w * recs[j].w * 6.0;
            if (kink <= std::min(tau(recs[i].idx), tau(recs[j].idx))) continue;
            for (const std::size_t which : {i, j}) {
              const std::size_t other = which == i ? j : i;
              for (const int k : kGeomParams) {
                MaterialGaussian2D plus = scene.gaussians[recs[which].idx];
                MaterialGaussian2D minus = plus;
                detail::param_add(plus, k, epsilon);
                detail::param_add(minus, k, -epsilon);
                const GateEval ep = eval_gates(plus, cam, ray);
                const GateEval em = eval_gates(minus, cam, ray);
                if (!sample_exists(ep) || !sample_exists(em)) continue;
                const double dzp = ep.z - recs[other].gate.z;
                const double dzm = em.z - recs[other].gate.z;
                if ((dzp > 0.0) != (dzm > 0.0))
                  if (note("z_tie")) return first;
              }
            }
          }
        }
      }
  }
  return first;
}

const char* fd_hazard_kind(const Scene& scene, const Supervision& sup,
                           const LossConfig& cfg, double epsilon) {
  return fd_hazard_kind_impl(scene, sup, cfg, epsilon, nullptr);
}

bool fd_hazards(const Scene& scene, const Supervision& sup, const LossConfig& cfg,
                double epsilon) {
  return fd_hazard_kind_impl(scene, sup, cfg, epsilon, nullptr) != nullptr;
}

}  // namespace mgs
