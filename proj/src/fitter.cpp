// Copyright Contributors to the mgs Project
// SPDX-License-Identifier: Apache-2.0
#include "mgs/fitter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "mgs/rasterizer.hpp"
#include "mgs/rng.hpp"

namespace mgs {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double logit(double p) { return std::log(p / (1.0 - p)); }

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw std::invalid_argument(std::string("activate: non-finite ") + what);
}

}  // namespace

MaterialGaussian2D activate(const RawParams& raw, const Bbox& bbox) {
  for (double v : {raw.position.x, raw.position.y, raw.position.z, raw.log_scale.x,
                   raw.log_scale.y, raw.quat.w, raw.quat.x, raw.quat.y, raw.quat.z,
                   raw.logit_opacity, raw.logit_albedo.x, raw.logit_albedo.y,
                   raw.logit_albedo.z, raw.logit_roughness, raw.logit_metallic})
    require_finite(v, "raw parameter");
  MaterialGaussian2D g;
  g.position = bbox.clamp(raw.position);
  g.scale = {std::exp(raw.log_scale.x), std::exp(raw.log_scale.y)};
  g.rotation = raw.quat.normalized();
  g.opacity = sigmoid(raw.logit_opacity);
  g.albedo = {sigmoid(raw.logit_albedo.x), sigmoid(raw.logit_albedo.y),
              sigmoid(raw.logit_albedo.z)};
  g.roughness = sigmoid(raw.logit_roughness);
  g.metallic = sigmoid(raw.logit_metallic);
  return g;
}

Scene activate_scene(const std::vector<RawParams>& raw, const Bbox& bbox) {
  Scene s;
  s.bbox = bbox;
  s.gaussians.reserve(raw.size());
  for (const auto& r : raw) s.gaussians.push_back(activate(r, bbox));
  return s;
}

std::vector<RawParams> init_scene(const FitConfig& cfg, const Bbox& bbox,
                                  const Supervision* geometry_views) {
  if (cfg.n_gaussians <= 0) throw std::invalid_argument("init_scene: n_gaussians must be > 0");
  Rng rng(cfg.seed);
  const double extent = bbox.edge_length();
  const double scale_init = extent / std::sqrt(static_cast<double>(cfg.n_gaussians));

  std::vector<const SupervisionView*> geo;
  if (geometry_views)
    for (const auto& v : *geometry_views)
      if (v.has_geometry && !v.depth.empty() && !v.alpha.empty()) geo.push_back(&v);

  std::vector<RawParams> out(cfg.n_gaussians);
  for (auto& r : out) {
    Vec3 pos;
    bool seeded = false;
    if (!geo.empty()) {
      // back-project a random foreground pixel of a random input view
      for (int attempt = 0; attempt < 64 && !seeded; ++attempt) {
        const auto& v = *geo[rng.uniform_int(static_cast<int>(geo.size()))];
        const int px = rng.uniform_int(v.camera.width);
        const int py = rng.uniform_int(v.camera.height);
        if (v.alpha.at(px, py, 0) <= 0.5) continue;
        const double z = v.depth.at(px, py, 0);
        if (z <= 0.0) continue;
        const Vec3 p_cam{(px + 0.5 - v.camera.cx) / v.camera.fx * z,
                         (py + 0.5 - v.camera.cy) / v.camera.fy * z, z};
        const Mat3 rot = v.camera.rotation();
        pos = rot.tmul(p_cam - v.camera.translation());
        seeded = true;
      }
    }
    if (!seeded)
      pos = {rng.uniform(bbox.min.x, bbox.max.x), rng.uniform(bbox.min.y, bbox.max.y),
             rng.uniform(bbox.min.z, bbox.max.z)};
    r.position = bbox.clamp(pos);
    r.log_scale = {std::log(scale_init), std::log(scale_init)};
    const Vec4 q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    r.quat = q.norm() > 1e-12 ? q.normalized() : Vec4{1, 0, 0, 0};
    r.logit_opacity = logit(0.1);
    r.logit_albedo = {logit(0.5), logit(0.5), logit(0.5)};
    r.logit_roughness = logit(0.5);
    r.logit_metallic = logit(0.1);
  }
  return out;
}

void adam_step(std::vector<double>& params, const std::vector<double>& grads,
               AdamState& state, const std::vector<double>& rates) {
  if (params.size() != grads.size() || params.size() != state.m.size() ||
      params.size() != rates.size())
    throw std::invalid_argument("adam_step: shape mismatch");
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= rates[i] * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

std::vector<double> flatten_raw(const std::vector<RawParams>& raw) {
  std::vector<double> flat;
  flat.reserve(raw.size() * kRawParamsPerGaussian);
  for (const auto& r : raw) {
    flat.insert(flat.end(), {r.position.x, r.position.y, r.position.z,
                             r.log_scale.x, r.log_scale.y, r.quat.w, r.quat.x,
                             r.quat.y, r.quat.z, r.logit_opacity,
                             r.logit_albedo.x, r.logit_albedo.y, r.logit_albedo.z,
                             r.logit_roughness, r.logit_metallic});
  }
  return flat;
}

std::vector<RawParams> unflatten_raw(const std::vector<double>& flat) {
  if (flat.size() % kRawParamsPerGaussian != 0)
    throw std::invalid_argument("unflatten_raw: bad length");
  std::vector<RawParams> raw(flat.size() / kRawParamsPerGaussian);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double* p = &flat[i * kRawParamsPerGaussian];
    raw[i].position = {p[0], p[1], p[2]};
    raw[i].log_scale = {p[3], p[4]};
    raw[i].quat = {p[5], p[6], p[7], p[8]};
    raw[i].logit_opacity = p[9];
    raw[i].logit_albedo = {p[10], p[11], p[12]};
    raw[i].logit_roughness = p[13];
    raw[i].logit_metallic = p[14];
  }
  return raw;
}

namespace {

// d(activated)/d(raw), applied to the scene-space gradients.
void chain_raw_grads(const std::vector<RawParams>& raw, const Scene& scene,
                     const SceneGrads& grads, const Bbox& bbox,
                     std::vector<double>& out) {
  out.resize(raw.size() * kRawParamsPerGaussian);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& r = raw[i];
    const auto& g = scene.gaussians[i];
    const auto& d = grads[i];
    double* o = &out[i * kRawParamsPerGaussian];
    // position: clamp passes gradient inside the box only
    o[0] = (r.position.x > bbox.min.x && r.position.x < bbox.max.x) ? d.position.x : 0.0;
    o[1] = (r.position.y > bbox.min.y && r.position.y < bbox.max.y) ? d.position.y : 0.0;
    o[2] = (r.position.z > bbox.min.z && r.position.z < bbox.max.z) ? d.position.z : 0.0;
    o[3] = d.scale.x * g.scale.x;
    o[4] = d.scale.y * g.scale.y;
    // the renderer gradient already projects out the norm direction, and the
    // stored quaternion is kept unit, so it is the raw gradient directly
    o[5] = d.rotation.w;
    o[6] = d.rotation.x;
    o[7] = d.rotation.y;
    o[8] = d.rotation.z;
    o[9] = d.opacity * g.opacity * (1.0 - g.opacity);
    o[10] = d.albedo.x * g.albedo.x * (1.0 - g.albedo.x);
    o[11] = d.albedo.y * g.albedo.y * (1.0 - g.albedo.y);
    o[12] = d.albedo.z * g.albedo.z * (1.0 - g.albedo.z);
    o[13] = d.roughness * g.roughness * (1.0 - g.roughness);
    o[14] = d.metallic * g.metallic * (1.0 - g.metallic);
  }
}

double heldout_psnr(const Scene& scene, const Supervision& heldout, int which,
                    int n_threads) {
  if (heldout.empty()) return std::numeric_limits<double>::quiet_NaN();
  RenderOptions ropts;
  ropts.n_threads = n_threads;
  double acc = 0.0;
  for (const auto& v : heldout) {
    const GBuffer gb = render_fast(scene, v.camera, ropts);
    if (which == 0) acc += psnr(gb.albedo, v.albedo);
    else if (which == 1) acc += psnr(gb.roughness, v.roughness);
    else acc += psnr(gb.metallic, v.metallic);
  }
  return acc / static_cast<double>(heldout.size());
}

}  // namespace

FitResult fit(const Supervision& sup, const Supervision& heldout,
              const FitConfig& cfg) {
  if (sup.empty()) throw std::invalid_argument("fit: missing supervision");
  bool any_geometry = false;
  for (const auto& v : sup) any_geometry |= v.has_geometry;

  Bbox bbox;  // scenes are fit inside the canonical box
  std::vector<RawParams> raw =
      init_scene(cfg, bbox, any_geometry ? &sup : nullptr);
  std::vector<double> flat = flatten_raw(raw);

  FitResult result;
  result.raw_init = flat;

  AdamState state(flat.size(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  std::vector<double> rates(flat.size());
  const double extent = bbox.edge_length();
  for (std::size_t i = 0; i < raw.size(); ++i) {
    double* r = &rates[i * kRawParamsPerGaussian];
    r[0] = r[1] = r[2] = cfg.lr_position * extent;
    r[3] = r[4] = cfg.lr_scale;
    r[5] = r[6] = r[7] = r[8] = cfg.lr_rotation;
    r[9] = cfg.lr_opacity;
    r[10] = r[11] = r[12] = cfg.lr_albedo;
    r[13] = cfg.lr_roughness;
    r[14] = cfg.lr_metallic;
  }

  const int total_iters = cfg.iterations_stage1 + cfg.iterations_stage2;
  std::vector<double> raw_grads;
  double last_psnr = std::numeric_limits<double>::quiet_NaN();
  result.trace.reserve(total_iters);

  for (int iter = 0; iter < total_iters; ++iter) {
    const bool stage1 = cfg.two_stage && iter < cfg.iterations_stage1;
    raw = unflatten_raw(flat);
    const Scene scene = activate_scene(raw, bbox);

    LossConfig lcfg = cfg.loss;
    lcfg.albedo_only = stage1;
    const double reg_ramp =
        cfg.reg_ramp_iters <= 0
            ? (iter >= cfg.reg_warmup_iters ? 1.0 : 0.0)
            : std::clamp((iter - cfg.reg_warmup_iters) /
                             static_cast<double>(cfg.reg_ramp_iters),
                         0.0, 1.0);
    lcfg.gamma_d = cfg.loss.gamma_d * reg_ramp * cfg.distortion_scale;
    lcfg.gamma_n = cfg.loss.gamma_n * reg_ramp;
    const LossReport report = total_loss(scene, sup, lcfg, true);
    chain_raw_grads(raw, scene, report.gradients, bbox, raw_grads);
    adam_step(flat, raw_grads, state, rates);
    // keep stored quaternions unit
    for (std::size_t i = 0; i < raw.size(); ++i) {
      double* q = &flat[i * kRawParamsPerGaussian + 5];
      const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
      if (n > 1e-12)
        for (int k = 0; k < 4; ++k) q[k] /= n;
    }

    const bool stage_end = iter == cfg.iterations_stage1 - 1 || iter == total_iters - 1;
    if (!heldout.empty() &&
        (iter % cfg.psnr_interval == cfg.psnr_interval - 1 || stage_end || iter == 0)) {
      const Scene cur = activate_scene(unflatten_raw(flat), bbox);
      last_psnr = heldout_psnr(cur, heldout, 0, cfg.loss.n_threads);
    }
    result.trace.push_back({iter, report.l_image, report.l_geometry,
                            report.l_distortion, report.l_normal, report.l_total,
                            last_psnr});

    if (cfg.two_stage && iter == cfg.iterations_stage1 - 1) {
      result.raw_stage1_end = flat;
      result.stage1_psnr_albedo = last_psnr;
    }
  }

  result.scene = activate_scene(unflatten_raw(flat), bbox);
  result.final_psnr_albedo = heldout_psnr(result.scene, heldout, 0, cfg.loss.n_threads);
  result.final_psnr_roughness = heldout_psnr(result.scene, heldout, 1, cfg.loss.n_threads);
  result.final_psnr_metallic = heldout_psnr(result.scene, heldout, 2, cfg.loss.n_threads);
  return result;
}

}  // namespace mgs
