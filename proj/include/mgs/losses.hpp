// Copyright Contributors to the mgs Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mgs/image.hpp"
#include "mgs/rasterizer.hpp"
#include "mgs/types.hpp"

namespace mgs {

struct LossConfig {
  double gamma_d{1000.0};
  double gamma_n{0.2};
  int ssim_window{11};
  double ssim_sigma{1.5};
  double ssim_k1{0.01};
  double ssim_k2{0.03};
  double dynamic_range{1.0};
  double mask_threshold{0.5};  // ground-truth alpha cutoff for the geometry term
  bool albedo_only{false};     // stage-1 schedule: image term over albedo only
  int n_threads{0};
};

// Supervision for one view. Geometry images are only consulted when
// has_geometry is set (the reconstructed input views).
struct SupervisionView {
  Camera camera;
  Image albedo;     // H x W x 3
  Image roughness;  // H x W x 1
  Image metallic;   // H x W x 1
  bool has_geometry{false};
  Image depth;   // H x W x 1
  Image normal;  // H x W x 3, world space
  Image alpha;   // H x W x 1
};
using Supervision = std::vector<SupervisionView>;

struct LossReport {
  double l_image{0};
  double l_geometry{0};
  double l_distortion{0};  // unweighted
  double l_normal{0};      // unweighted
  double l_total{0};       // l_image + gamma_d*l_distortion + gamma_n*l_normal + l_geometry
  SceneGrads gradients;    // d l_total / d parameter; empty unless requested
};

double mse(const Image& pred, const Image& gt);

// 1 - mean SSIM over windows fully inside the image (channels averaged).
double ssim_loss(const Image& pred, const Image& gt, const LossConfig& cfg = {});
// Same value; also accumulates d(loss)/d(pred) * upstream into d_pred.
double ssim_loss_grad(const Image& pred, const Image& gt, const LossConfig& cfg,
                      double upstream, Image& d_pred);
// Mean SSIM itself (used by the eval command).
double ssim_index(const Image& a, const Image& b, const LossConfig& cfg = {});

// Sum over the material images of (mse + ssim loss).
double image_loss(const GBuffer& pred, const GBuffer& gt, const LossConfig& cfg = {});

// Masked depth + normal MSE; zero when the mask is empty.
double geometry_loss(const GBuffer& pred, const Image& gt_depth,
                     const Image& gt_normal, const Image& gt_alpha,
                     const LossConfig& cfg = {});

// L_d = sum over ordered pairs of w_i w_j |z_i - z_j|.
double distortion_oracle(std::span<const SplatSample> samples);
// Single pass over depth-sorted samples; equals the oracle exactly. The
// optional counter reports inner-loop work for complexity checks.
double distortion_incremental(std::span<const SplatSample> samples,
                              uint64_t* work_counter = nullptr);

// Camera-space normals from an alpha-normalized depth image via central
// differences; zero at the border and where depth is undefined.
Image normal_from_depth(const Image& depth, const Image& alpha, const Camera& camera);

// sum_i w_i (1 - n_i . N) with explicit per-sample unit normals.
double normal_consistency(std::span<const SplatSample> samples,
                          std::span<const Vec3> sample_normals, const Vec3& n_ref);

// Renders every supervised view, composes the scalar loss terms, and (when
// requested) returns analytic gradients of l_total for every parameter.
LossReport total_loss(const Scene& scene, const Supervision& sup,
                      const LossConfig& cfg, bool with_gradients = true);

// Max relative error between analytic gradients and central differences over
// every parameter of every gaussian. When per_class is given it receives the
// maxima for the 9 parameter classes: position, scale, rotation, opacity,
// albedo r/g/b, roughness, metallic.
constexpr int kGradClasses = 9;
double grad_check(const Scene& scene, const Supervision& sup,
                  const LossConfig& cfg, double epsilon,
                  double* per_class = nullptr);

// True when the configuration sits near a non-differentiable switch (depth
// ties, cutoff boundaries, termination thresholds) that a +-epsilon probe
// could cross; finite differences are unreliable there and test scenes
// should be re-seeded.
bool fd_hazards(const Scene& scene, const Supervision& sup, const LossConfig& cfg,
                double epsilon = 1e-4);
// Same check, reporting the first hazard found (nullptr when clean).
const char* fd_hazard_kind(const Scene& scene, const Supervision& sup,
                           const LossConfig& cfg, double epsilon = 1e-4);

double psnr(const Image& pred, const Image& gt);  // peak 1.0, +inf when mse ~ 0

}  // namespace mgs
