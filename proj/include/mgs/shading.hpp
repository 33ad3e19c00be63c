// Copyright Contributors to the mgs Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "mgs/image.hpp"
#include "mgs/rasterizer.hpp"
#include "mgs/types.hpp"

namespace mgs {

// Equirectangular grid of linear HDR radiance, width = 2 * height.
// Directions use theta = pi*(ty+0.5)/H from +z, phi = 2*pi*(tx+0.5)/W.
struct EnvironmentMap {
  int width{0};
  int height{0};
  std::vector<double> radiance;  // H x W x 3, row-major from theta = 0

  EnvironmentMap() = default;
  EnvironmentMap(int w, int h, const Vec3& fill = {0, 0, 0});

  Vec3 texel(int tx, int ty) const {
    const std::size_t i = (static_cast<std::size_t>(ty) * width + tx) * 3;
    return {radiance[i], radiance[i + 1], radiance[i + 2]};
  }
  void set_texel(int tx, int ty, const Vec3& v) {
    const std::size_t i = (static_cast<std::size_t>(ty) * width + tx) * 3;
    radiance[i] = v.x;
    radiance[i + 1] = v.y;
    radiance[i + 2] = v.z;
  }

  // bilinear lookup of a unit direction (wraps in phi, clamps at the poles)
  Vec3 lookup(const Vec3& dir) const;

  void validate() const;  // throws on bad shape, negatives, non-finite texels
  EnvironmentMap resampled(int new_height) const;
};

struct MaterialSample {
  Vec3 albedo;        // [0,1]^3
  double roughness{0.5};
  double metallic{0};
  Vec3 normal{0, 0, 1};  // unit
  Vec3 view{0, 0, 1};    // unit, from surface toward the eye
};

struct BRDFConfig {
  double f0_dielectric{0.04};
  double min_roughness_clamp{0.03};
  bool diffuse_only{false};  // test hook
  int n_threads{0};
};

// GGX normal distribution, alpha = roughness^2.
double ggx_d(double n_dot_h, double roughness, const BRDFConfig& cfg = {});

// F = f0 + (1 - f0)(1 - h.v)^5
Vec3 fresnel_schlick(double h_dot_v, const Vec3& f0);

// Separable Schlick-GGX with k = roughness^2 / 2 (image-based-lighting form).
double smith_g(double n_dot_l, double n_dot_v, double roughness,
               const BRDFConfig& cfg = {});

// Cook-Torrance: (1 - m) a/pi + D F G / (4 (n.l)(n.v)); zero outside the
// upper hemisphere; specular denominator clamped at 1e-4.
Vec3 brdf_eval(const MaterialSample& sample, const Vec3& light_dir,
               const BRDFConfig& cfg = {});

// Quadrature node for one texel: direction at its center and its solid angle.
std::pair<Vec3, double> texel_direction_and_solid_angle(const EnvironmentMap& env,
                                                        int tx, int ty);

// Deterministic hemisphere quadrature of the rendering equation.
Vec3 integrate_pixel(const MaterialSample& sample, const EnvironmentMap& env,
                     const BRDFConfig& cfg = {});

struct RelightResult {
  Image linear;   // H x W x 3
  Image display;  // H x W x 3, clamp + gamma 1/2.2, still in [0,1]
};

// Shades every pixel of a G-buffer under an environment map and composites
// over the environment lookup along the view ray.
RelightResult relight(const GBuffer& gbuffer, const Camera& camera,
                      const EnvironmentMap& env, const BRDFConfig& cfg = {});

// clamp to [0,1], gamma 1/2.2, round-half-up quantization to 0..255.
std::vector<uint8_t> tonemap(const Image& linear);

}  // namespace mgs
