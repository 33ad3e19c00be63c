// Copyright Contributors to the mgs Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "mgs/image.hpp"
#include "mgs/types.hpp"

namespace mgs {

// One ray-splat intersection retained for the loss kernels.
struct SplatSample {
  uint32_t gaussian_index{0};
  Vec2 uv;            // local splat coordinates at the intersection
  double g_value{0};  // object-space Gaussian value (0 beyond the 3-sigma cutoff)
  double g_filtered{0};  // after the screen-space low-pass filter
  double depth{0};    // view-space z of the intersection
  double weight{0};   // alpha_i * G_hat_i * T_i
};

struct GBuffer {
  Image albedo;     // H x W x 3
  Image roughness;  // H x W x 1
  Image metallic;   // H x W x 1
  Image depth;      // H x W x 1, alpha-normalized expected depth
  Image normal;     // H x W x 3, world space, blended then renormalized
  Image alpha;      // H x W x 1

  // Per-ray samples in blend order (CSR over pixels), present when the
  // renderer was asked to retain them.
  std::vector<SplatSample> samples;
  std::vector<uint32_t> sample_offsets;  // size H*W+1 when retained

  bool has_samples() const { return !sample_offsets.empty(); }
  std::span<const SplatSample> pixel_samples(int px, int py) const {
    const std::size_t p = static_cast<std::size_t>(py) * albedo.width + px;
    return {samples.data() + sample_offsets[p], samples.data() + sample_offsets[p + 1]};
  }
};

struct RenderOptions {
  int tile_size{16};
  bool retain_samples{false};
  int n_threads{0};  // 0 = hardware concurrency; output never depends on it
};

// Blending constants shared by the oracle and the fast path.
namespace raster {
constexpr double kLowPassSigma = 0.7071067811865476;  // sqrt(2)/2 px
constexpr double kCutoffUvNormSq = 9.0;               // 3 sigma in uv space
constexpr double kCutoffScreenDistSq = 9.0 * kLowPassSigma * kLowPassSigma;
constexpr double kTransmittanceMin = 1e-4;
constexpr double kAlphaMin = 1e-4;   // depth/normal defined above this
constexpr double kDenomMin = 1e-9;   // ray parallel to splat plane below this
constexpr double kNearEps = 1e-6;    // splat centers at or behind this are culled
constexpr double kFarZ = 1e3;        // grazing hits beyond this depth produce no sample
}  // namespace raster

// Ray-splat plane intersection. Returns uv in local splat coordinates and the
// ray parameter t*, or nothing when the ray is parallel to the plane or the
// hit lies behind the origin.
struct SplatHit {
  Vec2 uv;
  double depth;  // ray parameter t* (|direction| = 1)
};
std::optional<SplatHit> intersect(const MaterialGaussian2D& gaussian, const Ray& ray);

// exp(-(u^2+v^2)/2), no cutoff.
double eval_gaussian(const Vec2& uv);

// max(g_object, exp(-d^2 / (2 sigma^2))) with sigma = sqrt(2)/2 px.
double low_pass(double g_object, double screen_dist_px);

struct BlendEntry {
  uint32_t gaussian_index{0};
  double g_filtered{0};
  double depth{0};
};

struct BlendResult {
  double channels[5]{0, 0, 0, 0, 0};  // albedo rgb, roughness, metallic
  double alpha{0};
  double expected_depth{0};
  Vec3 normal;
  std::vector<SplatSample> samples;
};

// Front-to-back blending of depth-sorted entries. Throws on unsorted input.
// When view_dir is given, splat normals are flipped to face the viewer.
BlendResult blend_ray(const Scene& scene, std::span<const BlendEntry> entries,
                      const Vec3* view_dir = nullptr);

// Reference renderer: every pixel tests every splat. Deterministic.
GBuffer render_oracle(const Scene& scene, const Camera& camera,
                      const RenderOptions& opts = {});

// Tiled renderer with conservative screen-space culling. Produces output
// equal to render_oracle (same per-pixel arithmetic, same order).
GBuffer render_fast(const Scene& scene, const Camera& camera,
                    const RenderOptions& opts = {});

// ---- gradients -------------------------------------------------------------

struct GaussianGrad {
  Vec3 position;
  Vec2 scale;
  Vec4 rotation{0, 0, 0, 0};  // w.r.t. stored quaternion (normalization included)
  double opacity{0};
  Vec3 albedo;
  double roughness{0};
  double metallic{0};
};

using SceneGrads = std::vector<GaussianGrad>;

// Upstream gradients w.r.t. the rendered images. Empty images mean zero.
struct GBufferGrads {
  Image d_albedo;     // H x W x 3
  Image d_roughness;  // H x W x 1
  Image d_metallic;   // H x W x 1
  Image d_depth;      // H x W x 1 (w.r.t. the alpha-normalized depth)
  Image d_normal;     // H x W x 3 (w.r.t. the renormalized world normal)
  Image d_alpha;      // H x W x 1
};

// Extra per-sample upstream gradients (distortion and normal-consistency
// terms). Filled per pixel by the loss layer; arrays are pre-zeroed and sized
// to the pixel's sample count.
struct PixelSampleGrads {
  double* d_weight{nullptr};
  double* d_depth{nullptr};
  Vec3* d_normal{nullptr};  // w.r.t. the flipped per-splat unit normal
};
using SampleGradFn =
    std::function<void(int px, int py, std::span<const SplatSample>, PixelSampleGrads&)>;

// Backpropagates image-space and per-sample gradients through blending,
// filtering and intersection to every Gaussian parameter. The GBuffer must
// have been rendered with retain_samples=true for the same scene and camera.
// The depth-sort permutation and branch choices are treated as constant.
SceneGrads render_backward(const Scene& scene, const Camera& camera,
                           const GBuffer& gbuffer, const GBufferGrads& grads,
                           const SampleGradFn& sample_grads = nullptr,
                           const RenderOptions& opts = {});

}  // namespace mgs
