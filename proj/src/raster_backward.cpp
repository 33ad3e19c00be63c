// Copyright Contributors to the mgs Project
// SPDX-License-Identifier: Apache-2.0

// Reverse pass of the tiled renderer. Walks the retained per-pixel samples,
// rebuilds the forward intermediates exactly, and chains image-space plus
// per-sample gradients back to every Gaussian parameter. The depth sort, the
// low-pass branch choice, cutoffs and the termination point are treated as
// locally constant.

#include <cmath>
#include <stdexcept>

#include "mgs/parallel.hpp"
#include "mgs/rasterizer.hpp"
#include "raster_internal.hpp"

namespace mgs {

namespace {

struct PixelUpstream {
  double c[5]{0, 0, 0, 0, 0};
  double alpha{0};
  double depth{0};
  Vec3 normal;
};

inline PixelUpstream gather_upstream(const GBufferGrads& g, int px, int py) {
  PixelUpstream u;
  if (!g.d_albedo.empty()) {
    u.c[0] = g.d_albedo.at(px, py, 0);
    u.c[1] = g.d_albedo.at(px, py, 1);
    u.c[2] = g.d_albedo.at(px, py, 2);
  }
  if (!g.d_roughness.empty()) u.c[3] = g.d_roughness.at(px, py, 0);
  if (!g.d_metallic.empty()) u.c[4] = g.d_metallic.at(px, py, 0);
  if (!g.d_alpha.empty()) u.alpha = g.d_alpha.at(px, py, 0);
  if (!g.d_depth.empty()) u.depth = g.d_depth.at(px, py, 0);
  if (!g.d_normal.empty())
    u.normal = {g.d_normal.at(px, py, 0), g.d_normal.at(px, py, 1),
                g.d_normal.at(px, py, 2)};
  return u;
}

// d(column)/d(q_k) for the first two rotation columns of a unit quaternion.
inline void quat_column_grads(const Vec4& q, const Vec3& g_tu, const Vec3& g_tv,
                              Vec4& gq) {
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  // t_u = (1-2(y^2+z^2), 2(xy+wz), 2(xz-wy))
  gq.w += dot(g_tu, Vec3{0, 2 * z, -2 * y});
  gq.x += dot(g_tu, Vec3{0, 2 * y, 2 * z});
  gq.y += dot(g_tu, Vec3{-4 * y, 2 * x, -2 * w});
  gq.z += dot(g_tu, Vec3{-4 * z, 2 * w, 2 * x});
  // t_v = (2(xy-wz), 1-2(x^2+z^2), 2(yz+wx))
  gq.w += dot(g_tv, Vec3{-2 * z, 0, 2 * x});
  gq.x += dot(g_tv, Vec3{2 * y, -4 * x, 2 * w});
  gq.y += dot(g_tv, Vec3{2 * x, 0, 2 * z});
  gq.z += dot(g_tv, Vec3{-2 * w, -4 * z, 2 * y});
}

struct TileScratch {
  std::vector<detail::SampleEval> evals;
  std::vector<double> trans;  // T_i per sample
  std::vector<double> gw, gz;
  std::vector<Vec3> gm;
};

void backward_pixel(const Scene& scene, const Camera& camera,
                    const detail::PreparedView& pv,
                    std::span<const SplatSample> samples, int px, int py,
                    const PixelUpstream& up, const SampleGradFn& sample_grads,
                    TileScratch& ts, SceneGrads& acc) {
  const std::size_t m = samples.size();
  const detail::PixelRay ray = detail::make_pixel_ray(camera, pv, px, py);

  ts.evals.resize(m);
  ts.trans.resize(m);
  ts.gw.assign(m, 0.0);
  ts.gz.assign(m, 0.0);
  ts.gm.assign(m, Vec3{});

  // Rebuild forward intermediates (identical arithmetic to the forward pass).
  double c_sum[5] = {0, 0, 0, 0, 0};
  double alpha_sum = 0, depth_sum = 0;
  Vec3 normal_sum;
  double transmittance = 1.0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto& smp = samples[i];
    const auto& g = scene.gaussians[smp.gaussian_index];
    auto& ev = ts.evals[i];
    if (!detail::eval_sample(g, pv.prep[smp.gaussian_index], ray, ev))
      throw std::logic_error("render_backward: retained sample does not re-evaluate");
    ts.trans[i] = transmittance;
    const double a = g.opacity * ev.g_hat;
    const double w = a * transmittance;
    c_sum[0] += w * g.albedo.x;
    c_sum[1] += w * g.albedo.y;
    c_sum[2] += w * g.albedo.z;
    c_sum[3] += w * g.roughness;
    c_sum[4] += w * g.metallic;
    alpha_sum += w;
    depth_sum += w * ev.z;
    normal_sum += (pv.prep[smp.gaussian_index].normal * ev.flip) * w;
    transmittance *= 1.0 - a;
  }

  if (sample_grads) {
    PixelSampleGrads psg{ts.gw.data(), ts.gz.data(), ts.gm.data()};
    sample_grads(px, py, samples, psg);
  }

  // Output heads: expected depth and renormalized normal.
  double g_alpha_total = up.alpha;
  double g_depth_sum = 0;
  Vec3 g_normal_sum;
  if (alpha_sum > raster::kAlphaMin) {
    g_depth_sum = up.depth / alpha_sum;
    g_alpha_total -= up.depth * depth_sum / (alpha_sum * alpha_sum);
    const double len = normal_sum.norm();
    if (len > 1e-12) {
      const Vec3 nhat = normal_sum / len;
      g_normal_sum = (up.normal - nhat * dot(up.normal, nhat)) / len;
    }
  }

  // Per-sample upstream gradients.
  for (std::size_t i = 0; i < m; ++i) {
    const auto& smp = samples[i];
    const auto& g = scene.gaussians[smp.gaussian_index];
    const auto& ev = ts.evals[i];
    const Vec3 flipped_n = pv.prep[smp.gaussian_index].normal * ev.flip;
    ts.gw[i] += up.c[0] * g.albedo.x + up.c[1] * g.albedo.y +
                up.c[2] * g.albedo.z + up.c[3] * g.roughness +
                up.c[4] * g.metallic;
    ts.gw[i] += g_alpha_total + g_depth_sum * ev.z + dot(g_normal_sum, flipped_n);
    ts.gz[i] += g_depth_sum * smp.weight;
    ts.gm[i] += g_normal_sum * smp.weight;

    // Channel gradients are direct.
    auto& ga = acc[smp.gaussian_index];
    ga.albedo += Vec3{up.c[0], up.c[1], up.c[2]} * smp.weight;
    ga.roughness += up.c[3] * smp.weight;
    ga.metallic += up.c[4] * smp.weight;
  }

  // Back-to-front transmittance chain: d/da_j = T_j gw_j - sum_{i>j} gw_i w_i / (1 - a_j).
  double suffix = 0.0;
  for (std::size_t ii = m; ii-- > 0;) {
    const auto& smp = samples[ii];
    const auto& g = scene.gaussians[smp.gaussian_index];
    const auto& ev = ts.evals[ii];
    const auto& prep = pv.prep[smp.gaussian_index];
    const double a = g.opacity * ev.g_hat;
    double ga_blend = ts.trans[ii] * ts.gw[ii];
    if (1.0 - a > 1e-12) ga_blend -= suffix / (1.0 - a);
    suffix += ts.gw[ii] * smp.weight;

    auto& out = acc[smp.gaussian_index];
    out.opacity += ga_blend * ev.g_hat;
    const double g_ghat = ga_blend * g.opacity;

    Vec3 gx;          // position
    Vec3 g_n;         // unit splat normal (pre-flip)
    Vec3 g_tu, g_tv;  // frame columns
    double g_tstar = ts.gz[ii] * ray.kappa;

    g_n += ts.gm[ii] * ev.flip;

    if (ev.screen_branch) {
      // G_scr = exp(-dist^2 / (2 sigma^2)); dist measured to the projected center.
      constexpr double inv_two_sigma2 =
          1.0 / (2.0 * raster::kLowPassSigma * raster::kLowPassSigma);
      const double g_dist2 = -g_ghat * ev.g_scr * inv_two_sigma2;
      const double dx = prep.sx - ray.pcx, dy = prep.sy - ray.pcy;
      const double g_sx = g_dist2 * 2.0 * dx;
      const double g_sy = g_dist2 * 2.0 * dy;
      const Vec3& xc = prep.center_cam;
      Vec3 g_xc{g_sx * camera.fx / xc.z, g_sy * camera.fy / xc.z,
                -(g_sx * camera.fx * xc.x + g_sy * camera.fy * xc.y) / (xc.z * xc.z)};
      gx += pv.rot.tmul(g_xc);
    } else if (ev.g_obj > 0.0) {
      // G_obj = exp(-(u^2+v^2)/2)
      const double gu = -g_ghat * ev.g_obj * ev.u;
      const double gv = -g_ghat * ev.g_obj * ev.v;
      // u = (delta . t_u) / s_u, delta = o + t* d - x
      out.scale.x += -gu * ev.u / g.scale.x;
      out.scale.y += -gv * ev.v / g.scale.y;
      Vec3 g_delta = prep.t_u * (gu / g.scale.x) + prep.t_v * (gv / g.scale.y);
      g_tu += ev.delta * (gu / g.scale.x);
      g_tv += ev.delta * (gv / g.scale.y);
      g_tstar += dot(g_delta, ray.dir);
      gx -= g_delta;
    }

    // t* = ((x - o) . n) / (d . n)  =>  dt* = (dx . n - delta . dn) / denom
    gx += prep.normal * (g_tstar / ev.denom);
    g_n -= ev.delta * (g_tstar / ev.denom);

    // n = t_u x t_v
    g_tu += cross(prep.t_v, g_n);
    g_tv += cross(g_n, prep.t_u);

    Vec4 g_q{0, 0, 0, 0};
    quat_column_grads(prep.q_unit, g_tu, g_tv, g_q);
    // chain through quaternion normalization
    const Vec4& qu = prep.q_unit;
    const double proj = dot(g_q, qu);
    out.rotation = out.rotation + (g_q - qu * proj) * (1.0 / prep.q_norm);

    out.position += gx;
  }
}

}  // namespace

SceneGrads render_backward(const Scene& scene, const Camera& camera,
                           const GBuffer& gbuffer, const GBufferGrads& grads,
                           const SampleGradFn& sample_grads,
                           const RenderOptions& opts) {
  if (!gbuffer.has_samples())
    throw std::invalid_argument("render_backward: GBuffer has no retained samples");
  const detail::PreparedView pv = detail::prepare_view(scene, camera);
  const int ts_px = opts.tile_size;
  const int tiles_x = (camera.width + ts_px - 1) / ts_px;
  const int tiles_y = (camera.height + ts_px - 1) / ts_px;
  const std::size_t n_tiles = static_cast<std::size_t>(tiles_x) * tiles_y;

  SceneGrads total(scene.gaussians.size());

  // Fixed-size batches of tiles, reduced in tile order: results do not depend
  // on the worker count.
  constexpr std::size_t kBatch = 4;
  std::vector<SceneGrads> slot(kBatch);
  std::vector<TileScratch> scratch(kBatch);
  for (std::size_t b = 0; b < n_tiles; b += kBatch) {
    const std::size_t count = std::min(kBatch, n_tiles - b);
    for (std::size_t s = 0; s < count; ++s)
      slot[s].assign(scene.gaussians.size(), GaussianGrad{});
    parallel_for(count, opts.n_threads, [&](std::size_t s) {
      const std::size_t t = b + s;
      const int tx = static_cast<int>(t) % tiles_x;
      const int ty = static_cast<int>(t) / tiles_x;
      const int x0 = tx * ts_px, y0 = ty * ts_px;
      const int x1 = std::min(camera.width, x0 + ts_px);
      const int y1 = std::min(camera.height, y0 + ts_px);
      for (int py = y0; py < y1; ++py)
        for (int px = x0; px < x1; ++px) {
          const auto samples = gbuffer.pixel_samples(px, py);
          const PixelUpstream up = gather_upstream(grads, px, py);
          backward_pixel(scene, camera, pv, samples, px, py, up, sample_grads,
                         scratch[s], slot[s]);
        }
    });
    for (std::size_t s = 0; s < count; ++s)
      for (std::size_t i = 0; i < total.size(); ++i) {
        total[i].position += slot[s][i].position;
        total[i].scale.x += slot[s][i].scale.x;
        total[i].scale.y += slot[s][i].scale.y;
        total[i].rotation = total[i].rotation + slot[s][i].rotation;
        total[i].opacity += slot[s][i].opacity;
        total[i].albedo += slot[s][i].albedo;
        total[i].roughness += slot[s][i].roughness;
        total[i].metallic += slot[s][i].metallic;
      }
  }
  return total;
}

}  // namespace mgs
