// Copyright Contributors to the mgs Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "mgs/losses.hpp"
#include "mgs/types.hpp"

namespace mgs {

struct FitConfig {
  int n_gaussians{4096};
  int iterations_stage1{1500};
  int iterations_stage2{1500};
  bool two_stage{true};
  // learning rates per parameter group; position is scaled by the bbox extent
  double lr_position{1.6e-4};
  double lr_scale{5e-3};
  double lr_rotation{1e-3};
  double lr_opacity{5e-2};
  double lr_albedo{2.5e-2};
  double lr_roughness{2.5e-2};
  double lr_metallic{2.5e-2};
  double adam_beta1{0.9};
  double adam_beta2{0.999};
  double adam_eps{1e-15};
  uint64_t seed{0};
  int psnr_interval{25};  // held-out PSNR cadence in iterations
  // 2DGS-style schedule: the regularizers switch on after a warmup and ramp
  // up. The distortion weight is additionally scaled: the lineage computes
  // this term on near/far-mapped depth, which shrinks it by roughly the
  // near-plane factor relative to raw view-space depth.
  int reg_warmup_iters{150};
  int reg_ramp_iters{150};
  double distortion_scale{0.01};
  LossConfig loss;
};

// Unconstrained optimizer-space parameters for one gaussian. Activation
// always yields a valid MaterialGaussian2D.
struct RawParams {
  Vec3 position;   // clamped to the bbox on activation
  Vec2 log_scale;
  Vec4 quat;       // renormalized after every optimizer step
  double logit_opacity{0};
  Vec3 logit_albedo;
  double logit_roughness{0};
  double logit_metallic{0};
};

constexpr int kRawParamsPerGaussian = 15;

MaterialGaussian2D activate(const RawParams& raw, const Bbox& bbox);
Scene activate_scene(const std::vector<RawParams>& raw, const Bbox& bbox);

// Seeded initialization. When geometry views (depth + alpha + camera) are
// supplied, positions are seeded by back-projecting random foreground pixels;
// otherwise they are uniform in the bbox.
std::vector<RawParams> init_scene(const FitConfig& cfg, const Bbox& bbox,
                                  const Supervision* geometry_views = nullptr);

struct AdamState {
  std::vector<double> m, v;
  long step_count{0};
  double beta1{0.9}, beta2{0.999}, eps{1e-15};

  explicit AdamState(std::size_t n = 0, double b1 = 0.9, double b2 = 0.999,
                     double e = 1e-15)
      : m(n, 0.0), v(n, 0.0), beta1(b1), beta2(b2), eps(e) {}
};

// Bias-corrected adaptive-moment update with per-element learning rates.
void adam_step(std::vector<double>& params, const std::vector<double>& grads,
               AdamState& state, const std::vector<double>& rates);

// flat (de)serialization of raw parameters, 15 doubles per gaussian
std::vector<double> flatten_raw(const std::vector<RawParams>& raw);
std::vector<RawParams> unflatten_raw(const std::vector<double>& flat);

struct TraceRow {
  int iteration{0};
  double l_image{0}, l_geometry{0}, l_distortion{0}, l_normal{0}, l_total{0};
  double psnr{0};  // held-out albedo PSNR, carried between evaluations
};

struct FitResult {
  Scene scene;
  std::vector<TraceRow> trace;
  std::vector<double> raw_init;        // flat, for freeze-contract checks
  std::vector<double> raw_stage1_end;  // flat; empty for one-stage runs
  double stage1_psnr_albedo{0};
  double final_psnr_albedo{0};
  double final_psnr_roughness{0};
  double final_psnr_metallic{0};
};

// Two-stage per-scene optimization: stage 1 trains albedo and geometry with
// roughness/metallic frozen (their image terms excluded, so their gradients
// are identically zero); stage 2 trains all material components.
FitResult fit(const Supervision& sup, const Supervision& heldout,
              const FitConfig& cfg);

}  // namespace mgs
