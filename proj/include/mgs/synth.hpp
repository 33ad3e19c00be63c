// Copyright Contributors to the mgs Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "mgs/losses.hpp"
#include "mgs/types.hpp"

namespace mgs {

// Self-contained synthetic ground truth: a shell of overlapping surfels with
// smoothly varying materials, plus the canonical camera rigs.
struct SynthConfig {
  uint64_t seed{7};
  int n_splats{32};
  int image_size{128};
  double fov_y_deg{50.0};
  double cam_distance{1.5};
  double shell_radius{0.35};
};

Scene synthetic_scene(const SynthConfig& cfg);

// Ring of cameras looking at the origin. Azimuths in degrees.
std::vector<Camera> camera_ring(const SynthConfig& cfg,
                                const std::vector<double>& azimuths_deg,
                                double elevation_deg);

std::vector<Camera> input_ring(const SynthConfig& cfg);    // 0/90/180/270, elev 0
std::vector<Camera> novel_ring(const SynthConfig& cfg);    // 45/135/225/315, elev 20
std::vector<Camera> heldout_ring(const SynthConfig& cfg);  // 22.5/..., elev -15

// Renders ground-truth supervision from a scene: input views carry geometry
// channels, novel views carry material channels only.
Supervision render_supervision(const Scene& scene,
                               const std::vector<Camera>& input_views,
                               const std::vector<Camera>& novel_views,
                               int n_threads = 0);

}  // namespace mgs
