// Copyright Contributors to the mgs Project
// SPDX-License-Identifier: Apache-2.0
#include "mgs/shading.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mgs/parallel.hpp"

namespace mgs {

EnvironmentMap::EnvironmentMap(int w, int h, const Vec3& fill)
    : width(w), height(h), radiance(static_cast<std::size_t>(w) * h * 3) {
  for (int ty = 0; ty < h; ++ty)
    for (int tx = 0; tx < w; ++tx) set_texel(tx, ty, fill);
}

void EnvironmentMap::validate() const {
  if (width != 2 * height || height <= 0)
    throw std::invalid_argument("environment map width must be 2 * height");
  if (radiance.size() != static_cast<std::size_t>(width) * height * 3)
    throw std::invalid_argument("environment map payload size mismatch");
  for (const double v : radiance)
    if (!std::isfinite(v) || v < 0.0)
      throw std::invalid_argument("environment map has negative or non-finite radiance");
}

Vec3 EnvironmentMap::lookup(const Vec3& dir) const {
  const Vec3 d = dir.normalized();
  const double theta = std::acos(std::clamp(d.z, -1.0, 1.0));
  double phi = std::atan2(d.y, d.x);
  if (phi < 0.0) phi += 2.0 * M_PI;
  const double fx = phi / (2.0 * M_PI) * width - 0.5;
  const double fy = theta / M_PI * height - 0.5;
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const double ax = fx - x0, ay = fy - y0;
  auto wrap_x = [&](int x) { return ((x % width) + width) % width; };
  auto clamp_y = [&](int y) { return std::clamp(y, 0, height - 1); };
  const Vec3 c00 = texel(wrap_x(x0), clamp_y(y0));
  const Vec3 c10 = texel(wrap_x(x0 + 1), clamp_y(y0));
  const Vec3 c01 = texel(wrap_x(x0), clamp_y(y0 + 1));
  const Vec3 c11 = texel(wrap_x(x0 + 1), clamp_y(y0 + 1));
  return c00 * ((1 - ax) * (1 - ay)) + c10 * (ax * (1 - ay)) +
         c01 * ((1 - ax) * ay) + c11 * (ax * ay);
}

EnvironmentMap EnvironmentMap::resampled(int new_height) const {
  if (new_height == height) return *this;
  EnvironmentMap out(2 * new_height, new_height);
  for (int ty = 0; ty < new_height; ++ty)
    for (int tx = 0; tx < out.width; ++tx) {
      const auto [dir, _] = texel_direction_and_solid_angle(out, tx, ty);
      out.set_texel(tx, ty, lookup(dir));
    }
  return out;
}

double ggx_d(double n_dot_h, double roughness, const BRDFConfig& cfg) {
  const double rho = std::clamp(roughness, cfg.min_roughness_clamp, 1.0);
  const double alpha = rho * rho;
  const double a2 = alpha * alpha;
  const double t = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0;
  return a2 / (M_PI * t * t);
}

Vec3 fresnel_schlick(double h_dot_v, const Vec3& f0) {
  const double f = std::pow(1.0 - h_dot_v, 5.0);
  return f0 + (Vec3{1, 1, 1} - f0) * f;
}

double smith_g(double n_dot_l, double n_dot_v, double roughness,
               const BRDFConfig& cfg) {
  const double rho = std::clamp(roughness, cfg.min_roughness_clamp, 1.0);
  const double k = rho * rho / 2.0;
  auto g1 = [&](double x) { return x / (x * (1.0 - k) + k); };
  return g1(n_dot_l) * g1(n_dot_v);
}

Vec3 brdf_eval(const MaterialSample& sample, const Vec3& light_dir,
               const BRDFConfig& cfg) {
  const double n_dot_l = dot(sample.normal, light_dir);
  const double n_dot_v = dot(sample.normal, sample.view);
  if (n_dot_l <= 0.0 || n_dot_v <= 0.0) return {0, 0, 0};
  const Vec3 diffuse = sample.albedo * ((1.0 - sample.metallic) / M_PI);
  if (cfg.diffuse_only) return diffuse;
  const Vec3 h = (light_dir + sample.view).normalized();
  const double n_dot_h = std::clamp(dot(sample.normal, h), 0.0, 1.0);
  const double h_dot_v = std::clamp(dot(h, sample.view), 0.0, 1.0);
  const double d = ggx_d(n_dot_h, sample.roughness, cfg);
  const Vec3 f0 = Vec3{1, 1, 1} * (cfg.f0_dielectric * (1.0 - sample.metallic)) +
                  sample.albedo * sample.metallic;
  const Vec3 f = fresnel_schlick(h_dot_v, f0);
  const double g = smith_g(n_dot_l, n_dot_v, sample.roughness, cfg);
  const double denom = std::max(4.0 * n_dot_l * n_dot_v, 1e-4);
  return diffuse + f * (d * g / denom);
}

std::pair<Vec3, double> texel_direction_and_solid_angle(const EnvironmentMap& env,
                                                        int tx, int ty) {
  if (tx < 0 || tx >= env.width || ty < 0 || ty >= env.height)
    throw std::out_of_range("texel_direction_and_solid_angle: texel out of range");
  const double theta = M_PI * (ty + 0.5) / env.height;
  const double phi = 2.0 * M_PI * (tx + 0.5) / env.width;
  const double st = std::sin(theta);
  const Vec3 dir{st * std::cos(phi), st * std::sin(phi), std::cos(theta)};
  const double solid = (2.0 * M_PI / env.width) * (M_PI / env.height) * st;
  return {dir, solid};
}

Vec3 integrate_pixel(const MaterialSample& sample, const EnvironmentMap& env,
                     const BRDFConfig& cfg) {
  Vec3 out;
  for (int ty = 0; ty < env.height; ++ty) {
    const double theta = M_PI * (ty + 0.5) / env.height;
    const double st = std::sin(theta), ct = std::cos(theta);
    const double solid = (2.0 * M_PI / env.width) * (M_PI / env.height) * st;
    for (int tx = 0; tx < env.width; ++tx) {
      const double phi = 2.0 * M_PI * (tx + 0.5) / env.width;
      const Vec3 l{st * std::cos(phi), st * std::sin(phi), ct};
      const double cos_term = dot(l, sample.normal);
      if (cos_term <= 0.0) continue;
      const Vec3 fr = brdf_eval(sample, l, cfg);
      out += cmul(env.texel(tx, ty), fr) * (cos_term * solid);
    }
  }
  return out;
}

RelightResult relight(const GBuffer& gbuffer, const Camera& camera,
                      const EnvironmentMap& env, const BRDFConfig& cfg) {
  if (gbuffer.albedo.width != camera.width || gbuffer.albedo.height != camera.height)
    throw std::invalid_argument("relight: G-buffer resolution does not match camera");
  env.validate();
  RelightResult out;
  out.linear = Image(camera.width, camera.height, 3);
  out.display = Image(camera.width, camera.height, 3);

  parallel_for(static_cast<std::size_t>(camera.height), cfg.n_threads, [&](std::size_t row) {
    const int py = static_cast<int>(row);
    for (int px = 0; px < camera.width; ++px) {
      const Ray ray = pixel_ray(camera, px, py);
      const double a = gbuffer.alpha.at(px, py, 0);
      Vec3 shaded;
      if (a > 0.5) {
        MaterialSample s;
        // stored channels are alpha-weighted sums; recover surface values
        s.albedo = {std::clamp(gbuffer.albedo.at(px, py, 0) / a, 0.0, 1.0),
                    std::clamp(gbuffer.albedo.at(px, py, 1) / a, 0.0, 1.0),
                    std::clamp(gbuffer.albedo.at(px, py, 2) / a, 0.0, 1.0)};
        s.roughness = std::clamp(gbuffer.roughness.at(px, py, 0) / a, 0.0, 1.0);
        s.metallic = std::clamp(gbuffer.metallic.at(px, py, 0) / a, 0.0, 1.0);
        Vec3 n{gbuffer.normal.at(px, py, 0), gbuffer.normal.at(px, py, 1),
               gbuffer.normal.at(px, py, 2)};
        const double len = n.norm();
        if (len > 1e-12) {
          n = n / len;
          if (dot(n, ray.direction) > 0.0) n = -n;  // face the viewer
          s.normal = n;
          s.view = -ray.direction;
          shaded = integrate_pixel(s, env, cfg);
        }
      }
      const Vec3 bg = env.lookup(ray.direction);
      const Vec3 lin = shaded * a + bg * (1.0 - a);
      out.linear.at(px, py, 0) = lin.x;
      out.linear.at(px, py, 1) = lin.y;
      out.linear.at(px, py, 2) = lin.z;
      for (int c = 0; c < 3; ++c)
        out.display.at(px, py, c) =
            std::pow(std::clamp(out.linear.at(px, py, c), 0.0, 1.0), 1.0 / 2.2);
    }
  });
  return out;
}

std::vector<uint8_t> tonemap(const Image& linear) {
  for (const double v : linear.data)
    if (v < 0.0) throw std::invalid_argument("tonemap: negative input");
  std::vector<uint8_t> out(linear.size());
  for (std::size_t i = 0; i < linear.size(); ++i) {
    const double c = std::pow(std::min(linear.data[i], 1.0), 1.0 / 2.2);
    out[i] = static_cast<uint8_t>(std::floor(255.0 * c + 0.5));
  }
  return out;
}

}  // namespace mgs
