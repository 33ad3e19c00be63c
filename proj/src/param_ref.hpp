// Copyright Contributors to the mgs Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "mgs/rasterizer.hpp"
#include "mgs/types.hpp"

// Flat parameter indexing shared by the gradient checker and the hazard
// scanner: 0-2 position, 3-4 scale, 5-8 rotation, 9 opacity, 10-12 albedo,
// 13 roughness, 14 metallic.

namespace mgs::detail {

inline double param_get(const MaterialGaussian2D& g, int k) {
  switch (k) {
    case 0: return g.position.x;
    case 1: return g.position.y;
    case 2: return g.position.z;
    case 3: return g.scale.x;
    case 4: return g.scale.y;
    case 5: return g.rotation.w;
    case 6: return g.rotation.x;
    case 7: return g.rotation.y;
    case 8: return g.rotation.z;
    case 9: return g.opacity;
    case 10: return g.albedo.x;
    case 11: return g.albedo.y;
    case 12: return g.albedo.z;
    case 13: return g.roughness;
    default: return g.metallic;
  }
}

inline void param_add(MaterialGaussian2D& g, int k, double d) {
  switch (k) {
    case 0: g.position.x += d; break;
    case 1: g.position.y += d; break;
    case 2: g.position.z += d; break;
    case 3: g.scale.x += d; break;
    case 4: g.scale.y += d; break;
    case 5: g.rotation.w += d; break;
    case 6: g.rotation.x += d; break;
    case 7: g.rotation.y += d; break;
    case 8: g.rotation.z += d; break;
    case 9: g.opacity += d; break;
    case 10: g.albedo.x += d; break;
    case 11: g.albedo.y += d; break;
    case 12: g.albedo.z += d; break;
    case 13: g.roughness += d; break;
    default: g.metallic += d; break;
  }
}

inline double param_grad(const GaussianGrad& g, int k) {
  switch (k) {
    case 0: return g.position.x;
    case 1: return g.position.y;
    case 2: return g.position.z;
    case 3: return g.scale.x;
    case 4: return g.scale.y;
    case 5: return g.rotation.w;
    case 6: return g.rotation.x;
    case 7: return g.rotation.y;
    case 8: return g.rotation.z;
    case 9: return g.opacity;
    case 10: return g.albedo.x;
    case 11: return g.albedo.y;
    case 12: return g.albedo.z;
    case 13: return g.roughness;
    default: return g.metallic;
  }
}

}  // namespace mgs::detail
