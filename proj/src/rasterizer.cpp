// Copyright Contributors to the mgs Project
// SPDX-License-Identifier: Apache-2.0
#include "mgs/rasterizer.hpp"

#include <cmath>
#include <stdexcept>

#include "mgs/parallel.hpp"
#include "raster_internal.hpp"

namespace mgs {

std::optional<SplatHit> intersect(const MaterialGaussian2D& gaussian, const Ray& ray) {
  const SurfelFrame f = quat_to_frame(gaussian.rotation);
  const double denom = dot(ray.direction, f.normal);
  if (std::abs(denom) <= raster::kDenomMin) return std::nullopt;
  const double tstar = dot(gaussian.position - ray.origin, f.normal) / denom;
  if (tstar <= 0.0) return std::nullopt;
  const Vec3 hit = ray.origin + ray.direction * tstar;
  const Vec3 delta = hit - gaussian.position;
  SplatHit out;
  out.uv = {dot(delta, f.t_u) / gaussian.scale.x,
            dot(delta, f.t_v) / gaussian.scale.y};
  out.depth = tstar;
  return out;
}

double eval_gaussian(const Vec2& uv) {
  return std::exp(-0.5 * (uv.x * uv.x + uv.y * uv.y));
}

double low_pass(double g_object, double screen_dist_px) {
  constexpr double two_sigma2 =
      2.0 * raster::kLowPassSigma * raster::kLowPassSigma;
  return std::max(g_object,
                  std::exp(-screen_dist_px * screen_dist_px / two_sigma2));
}

BlendResult blend_ray(const Scene& scene, std::span<const BlendEntry> entries,
                      const Vec3* view_dir) {
  for (std::size_t i = 0; i + 1 < entries.size(); ++i)
    if (entries[i].depth > entries[i + 1].depth)
      throw std::invalid_argument("blend_ray: entries not sorted by depth");
  BlendResult out;
  Vec3 normal_sum;
  double transmittance = 1.0;
  for (const auto& e : entries) {
    if (e.gaussian_index >= scene.gaussians.size())
      throw std::out_of_range("blend_ray: gaussian index out of range");
    const auto& g = scene.gaussians[e.gaussian_index];
    const SurfelFrame f = quat_to_frame(g.rotation);
    Vec3 n = f.normal;
    if (view_dir && dot(n, *view_dir) > 0.0) n = -n;
    const double a = g.opacity * e.g_filtered;
    const double w = a * transmittance;
    out.channels[0] += w * g.albedo.x;
    out.channels[1] += w * g.albedo.y;
    out.channels[2] += w * g.albedo.z;
    out.channels[3] += w * g.roughness;
    out.channels[4] += w * g.metallic;
    out.alpha += w;
    out.expected_depth += w * e.depth;  // normalized below
    normal_sum += n * w;
    out.samples.push_back({e.gaussian_index, {0, 0}, e.g_filtered, e.g_filtered,
                           e.depth, w});
    transmittance *= 1.0 - a;
    if (transmittance < raster::kTransmittanceMin) break;
  }
  if (out.alpha > raster::kAlphaMin) {
    out.expected_depth /= out.alpha;
    const double len = normal_sum.norm();
    if (len > 1e-12) out.normal = normal_sum / len;
  } else {
    out.expected_depth = 0.0;
  }
  return out;
}

GBuffer render_oracle(const Scene& scene, const Camera& camera,
                      const RenderOptions& opts) {
  const detail::PreparedView pv = detail::prepare_view(scene, camera);
  GBuffer gb = detail::make_gbuffer(camera.width, camera.height);
  std::vector<SplatSample> px_samples;
  if (opts.retain_samples)
    gb.sample_offsets.assign(static_cast<std::size_t>(camera.width) * camera.height + 1, 0);
  for (int py = 0; py < camera.height; ++py) {
    for (int px = 0; px < camera.width; ++px) {
      const detail::PixelRay ray = detail::make_pixel_ray(camera, pv, px, py);
      px_samples.clear();
      const detail::PixelAccum acc = detail::shade_pixel(
          scene, pv, pv.order, ray, opts.retain_samples ? &px_samples : nullptr);
      detail::store_pixel(gb, px, py, acc);
      if (opts.retain_samples) {
        gb.samples.insert(gb.samples.end(), px_samples.begin(), px_samples.end());
        gb.sample_offsets[static_cast<std::size_t>(py) * camera.width + px + 1] =
            static_cast<uint32_t>(gb.samples.size());
      }
    }
  }
  return gb;
}

namespace {

struct TileGrid {
  int tile_size, tiles_x, tiles_y;
  std::vector<std::vector<uint32_t>> lists;  // sorted candidates per tile
};

TileGrid build_tiles(const Scene& scene, const Camera& camera,
                     const detail::PreparedView& pv, int tile_size) {
  TileGrid grid;
  grid.tile_size = tile_size;
  grid.tiles_x = (camera.width + tile_size - 1) / tile_size;
  grid.tiles_y = (camera.height + tile_size - 1) / tile_size;
  grid.lists.resize(static_cast<std::size_t>(grid.tiles_x) * grid.tiles_y);
  // Iterating in sorted order keeps every tile list depth-sorted.
  for (const uint32_t idx : pv.order) {
    const auto& p = pv.prep[idx];
    const double r = detail::cull_radius_px(camera, scene.gaussians[idx], p);
    int tx0 = 0, ty0 = 0, tx1 = grid.tiles_x - 1, ty1 = grid.tiles_y - 1;
    if (r >= 0.0) {
      tx0 = std::max(0, static_cast<int>(std::floor((p.sx - r) / tile_size)));
      tx1 = std::min(grid.tiles_x - 1,
                     static_cast<int>(std::floor((p.sx + r) / tile_size)));
      ty0 = std::max(0, static_cast<int>(std::floor((p.sy - r) / tile_size)));
      ty1 = std::min(grid.tiles_y - 1,
                     static_cast<int>(std::floor((p.sy + r) / tile_size)));
      if (tx0 > grid.tiles_x - 1 || tx1 < 0 || ty0 > grid.tiles_y - 1 || ty1 < 0)
        continue;
    }
    for (int ty = ty0; ty <= ty1; ++ty)
      for (int tx = tx0; tx <= tx1; ++tx)
        grid.lists[static_cast<std::size_t>(ty) * grid.tiles_x + tx].push_back(idx);
  }
  return grid;
}

}  // namespace

GBuffer render_fast(const Scene& scene, const Camera& camera,
                    const RenderOptions& opts) {
  const detail::PreparedView pv = detail::prepare_view(scene, camera);
  const TileGrid grid = build_tiles(scene, camera, pv, opts.tile_size);
  GBuffer gb = detail::make_gbuffer(camera.width, camera.height);

  const std::size_t n_tiles = grid.lists.size();
  std::vector<std::vector<SplatSample>> tile_samples;
  std::vector<std::vector<uint32_t>> tile_counts;  // per-pixel counts per tile
  if (opts.retain_samples) {
    tile_samples.resize(n_tiles);
    tile_counts.resize(n_tiles);
  }

  parallel_for(n_tiles, opts.n_threads, [&](std::size_t t) {
    const int tx = static_cast<int>(t) % grid.tiles_x;
    const int ty = static_cast<int>(t) / grid.tiles_x;
    const int x0 = tx * grid.tile_size;
    const int y0 = ty * grid.tile_size;
    const int x1 = std::min(camera.width, x0 + grid.tile_size);
    const int y1 = std::min(camera.height, y0 + grid.tile_size);
    const auto& candidates = grid.lists[t];
    std::vector<SplatSample>* samples = opts.retain_samples ? &tile_samples[t] : nullptr;
    for (int py = y0; py < y1; ++py) {
      for (int px = x0; px < x1; ++px) {
        const detail::PixelRay ray = detail::make_pixel_ray(camera, pv, px, py);
        const std::size_t before = samples ? samples->size() : 0;
        const detail::PixelAccum acc =
            detail::shade_pixel(scene, pv, candidates, ray, samples);
        detail::store_pixel(gb, px, py, acc);
        if (samples)
          tile_counts[t].push_back(static_cast<uint32_t>(samples->size() - before));
      }
    }
  });

  if (opts.retain_samples) {
    const std::size_t n_px = static_cast<std::size_t>(camera.width) * camera.height;
    gb.sample_offsets.assign(n_px + 1, 0);
    for (std::size_t t = 0; t < n_tiles; ++t) {
      const int tx = static_cast<int>(t) % grid.tiles_x;
      const int ty = static_cast<int>(t) / grid.tiles_x;
      const int x0 = tx * grid.tile_size, y0 = ty * grid.tile_size;
      const int x1 = std::min(camera.width, x0 + grid.tile_size);
      const int y1 = std::min(camera.height, y0 + grid.tile_size);
      std::size_t k = 0;
      for (int py = y0; py < y1; ++py)
        for (int px = x0; px < x1; ++px)
          gb.sample_offsets[static_cast<std::size_t>(py) * camera.width + px + 1] =
              tile_counts[t][k++];
    }
    for (std::size_t p = 0; p < n_px; ++p) gb.sample_offsets[p + 1] += gb.sample_offsets[p];
    gb.samples.resize(gb.sample_offsets[n_px]);
    for (std::size_t t = 0; t < n_tiles; ++t) {
      const int tx = static_cast<int>(t) % grid.tiles_x;
      const int ty = static_cast<int>(t) / grid.tiles_x;
      const int x0 = tx * grid.tile_size, y0 = ty * grid.tile_size;
      const int x1 = std::min(camera.width, x0 + grid.tile_size);
      const int y1 = std::min(camera.height, y0 + grid.tile_size);
      std::size_t src = 0, k = 0;
      for (int py = y0; py < y1; ++py)
        for (int px = x0; px < x1; ++px) {
          const std::size_t p = static_cast<std::size_t>(py) * camera.width + px;
          const uint32_t count = tile_counts[t][k++];
          std::copy_n(tile_samples[t].begin() + src, count,
                      gb.samples.begin() + gb.sample_offsets[p]);
          src += count;
        }
    }
  }
  return gb;
}

}  // namespace mgs
