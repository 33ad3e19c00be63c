// Copyright Contributors to the mgs Project
// SPDX-License-Identifier: Apache-2.0
#include "mgs/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace mgs {

double mse(const Image& pred, const Image& gt) {
  require_same_shape(pred, gt, "mse");
  if (pred.size() == 0) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.data[i] - gt.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

namespace {

std::vector<double> gaussian_kernel(int window, double sigma) {
  std::vector<double> k(window);
  const int half = window / 2;
  double sum = 0.0;
  for (int i = 0; i < window; ++i) {
    const double d = i - half;
    k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable valid-mode convolution of a single-channel plane.
void conv_valid(const std::vector<double>& in, int w, int h,
                const std::vector<double>& k, std::vector<double>& tmp,
                std::vector<double>& out) {
  const int win = static_cast<int>(k.size());
  const int vw = w - win + 1, vh = h - win + 1;
  tmp.assign(static_cast<std::size_t>(vw) * h, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < vw; ++x) {
      double s = 0.0;
      for (int j = 0; j < win; ++j) s += k[j] * in[static_cast<std::size_t>(y) * w + x + j];
      tmp[static_cast<std::size_t>(y) * vw + x] = s;
    }
  out.assign(static_cast<std::size_t>(vw) * vh, 0.0);
  for (int y = 0; y < vh; ++y)
    for (int x = 0; x < vw; ++x) {
      double s = 0.0;
      for (int j = 0; j < win; ++j) s += k[j] * tmp[static_cast<std::size_t>(y + j) * vw + x];
      out[static_cast<std::size_t>(y) * vw + x] = s;
    }
}

// Transposed counterpart: scatters window-space values back to pixel space.
void conv_transpose(const std::vector<double>& in, int vw, int vh,
                    const std::vector<double>& k, int w, int h,
                    std::vector<double>& tmp, std::vector<double>& out) {
  const int win = static_cast<int>(k.size());
  tmp.assign(static_cast<std::size_t>(vw) * h, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < vw; ++x) {
      double s = 0.0;
      for (int j = 0; j < win; ++j) {
        const int yy = y - j;
        if (yy >= 0 && yy < vh) s += k[j] * in[static_cast<std::size_t>(yy) * vw + x];
      }
      tmp[static_cast<std::size_t>(y) * vw + x] = s;
    }
  out.assign(static_cast<std::size_t>(w) * h, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int j = 0; j < win; ++j) {
        const int xx = x - j;
        if (xx >= 0 && xx < vw) s += k[j] * tmp[static_cast<std::size_t>(y) * vw + xx];
      }
      out[static_cast<std::size_t>(y) * w + x] = s;
    }
}

void extract_plane(const Image& img, int c, std::vector<double>& out) {
  out.resize(static_cast<std::size_t>(img.width) * img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      out[static_cast<std::size_t>(y) * img.width + x] = img.at(x, y, c);
}

struct SsimPlanes {
  std::vector<double> mu_x, mu_y, ex2, ey2, exy;
  int vw{0}, vh{0};
};

void ssim_moments(const std::vector<double>& x, const std::vector<double>& y,
                  int w, int h, const std::vector<double>& k, SsimPlanes& p) {
  p.vw = w - static_cast<int>(k.size()) + 1;
  p.vh = h - static_cast<int>(k.size()) + 1;
  std::vector<double> tmp, sq(x.size());
  conv_valid(x, w, h, k, tmp, p.mu_x);
  conv_valid(y, w, h, k, tmp, p.mu_y);
  for (std::size_t i = 0; i < x.size(); ++i) sq[i] = x[i] * x[i];
  conv_valid(sq, w, h, k, tmp, p.ex2);
  for (std::size_t i = 0; i < y.size(); ++i) sq[i] = y[i] * y[i];
  conv_valid(sq, w, h, k, tmp, p.ey2);
  for (std::size_t i = 0; i < x.size(); ++i) sq[i] = x[i] * y[i];
  conv_valid(sq, w, h, k, tmp, p.exy);
}

double ssim_impl(const Image& pred, const Image& gt, const LossConfig& cfg,
                 double upstream, Image* d_pred) {
  require_same_shape(pred, gt, "ssim");
  if (cfg.ssim_window % 2 == 0 || cfg.ssim_window < 3)
    throw std::invalid_argument("ssim: window must be odd and >= 3");
  if (pred.width < cfg.ssim_window || pred.height < cfg.ssim_window)
    throw std::invalid_argument("ssim: image smaller than window");
  const auto k = gaussian_kernel(cfg.ssim_window, cfg.ssim_sigma);
  const double c1 = cfg.ssim_k1 * cfg.dynamic_range * cfg.ssim_k1 * cfg.dynamic_range;
  const double c2 = cfg.ssim_k2 * cfg.dynamic_range * cfg.ssim_k2 * cfg.dynamic_range;

  double mean_acc = 0.0;
  std::vector<double> xp, yp, tmp, scat;
  SsimPlanes p;
  std::vector<double> p_mu, p_ex2, p_exy;
  for (int c = 0; c < pred.channels; ++c) {
    extract_plane(pred, c, xp);
    extract_plane(gt, c, yp);
    ssim_moments(xp, yp, pred.width, pred.height, k, p);
    const std::size_t nwin = static_cast<std::size_t>(p.vw) * p.vh;
    const double inv_n = 1.0 / (static_cast<double>(nwin) * pred.channels);
    if (d_pred) {
      p_mu.assign(nwin, 0.0);
      p_ex2.assign(nwin, 0.0);
      p_exy.assign(nwin, 0.0);
    }
    for (std::size_t i = 0; i < nwin; ++i) {
      const double mx = p.mu_x[i], my = p.mu_y[i];
      const double sxy = p.exy[i] - mx * my;
      const double sx2 = p.ex2[i] - mx * mx;
      const double sy2 = p.ey2[i] - my * my;
      const double a1 = 2.0 * mx * my + c1;
      const double a2 = 2.0 * sxy + c2;
      const double b1 = mx * mx + my * my + c1;
      const double b2 = sx2 + sy2 + c2;
      const double s = (a1 * a2) / (b1 * b2);
      mean_acc += s * inv_n;
      if (d_pred) {
        // loss = 1 - mean(S): dL/dS = -inv_n, times upstream.
        const double gs = -upstream * inv_n;
        p_mu[i] = gs * (2.0 * my * (a2 - a1) / (b1 * b2) -
                        2.0 * mx * s * (1.0 / b1 - 1.0 / b2));
        p_ex2[i] = gs * (-s / b2);
        p_exy[i] = gs * (2.0 * a1 / (b1 * b2));
      }
    }
    if (d_pred) {
      conv_transpose(p_mu, p.vw, p.vh, k, pred.width, pred.height, tmp, scat);
      for (int y = 0; y < pred.height; ++y)
        for (int x = 0; x < pred.width; ++x)
          d_pred->at(x, y, c) += scat[static_cast<std::size_t>(y) * pred.width + x];
      conv_transpose(p_ex2, p.vw, p.vh, k, pred.width, pred.height, tmp, scat);
      for (int y = 0; y < pred.height; ++y)
        for (int x = 0; x < pred.width; ++x)
          d_pred->at(x, y, c) +=
              2.0 * pred.at(x, y, c) * scat[static_cast<std::size_t>(y) * pred.width + x];
      conv_transpose(p_exy, p.vw, p.vh, k, pred.width, pred.height, tmp, scat);
      for (int y = 0; y < pred.height; ++y)
        for (int x = 0; x < pred.width; ++x)
          d_pred->at(x, y, c) +=
              gt.at(x, y, c) * scat[static_cast<std::size_t>(y) * pred.width + x];
    }
  }
  return 1.0 - mean_acc;
}

}  // namespace

double ssim_loss(const Image& pred, const Image& gt, const LossConfig& cfg) {
  return ssim_impl(pred, gt, cfg, 0.0, nullptr);
}

double ssim_loss_grad(const Image& pred, const Image& gt, const LossConfig& cfg,
                      double upstream, Image& d_pred) {
  return ssim_impl(pred, gt, cfg, upstream, &d_pred);
}

double ssim_index(const Image& a, const Image& b, const LossConfig& cfg) {
  return 1.0 - ssim_impl(a, b, cfg, 0.0, nullptr);
}

double image_loss(const GBuffer& pred, const GBuffer& gt, const LossConfig& cfg) {
  double l = mse(pred.albedo, gt.albedo) + ssim_loss(pred.albedo, gt.albedo, cfg);
  if (!cfg.albedo_only) {
    l += mse(pred.roughness, gt.roughness) + ssim_loss(pred.roughness, gt.roughness, cfg);
    l += mse(pred.metallic, gt.metallic) + ssim_loss(pred.metallic, gt.metallic, cfg);
  }
  return l;
}

double geometry_loss(const GBuffer& pred, const Image& gt_depth,
                     const Image& gt_normal, const Image& gt_alpha,
                     const LossConfig& cfg) {
  require_same_shape(pred.depth, gt_depth, "geometry_loss depth");
  require_same_shape(pred.normal, gt_normal, "geometry_loss normal");
  require_same_shape(pred.depth, gt_alpha, "geometry_loss alpha");
  std::size_t n_mask = 0;
  double acc_d = 0.0, acc_n = 0.0;
  for (int y = 0; y < gt_depth.height; ++y)
    for (int x = 0; x < gt_depth.width; ++x) {
      if (gt_alpha.at(x, y, 0) <= cfg.mask_threshold) continue;
      ++n_mask;
      const double dd = pred.depth.at(x, y, 0) - gt_depth.at(x, y, 0);
      acc_d += dd * dd;
      for (int c = 0; c < 3; ++c) {
        const double dn = pred.normal.at(x, y, c) - gt_normal.at(x, y, c);
        acc_n += dn * dn;
      }
    }
  if (n_mask == 0) return 0.0;
  return acc_d / static_cast<double>(n_mask) + acc_n / static_cast<double>(3 * n_mask);
}

double distortion_oracle(std::span<const SplatSample> samples) {
  double acc = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t j = 0; j < samples.size(); ++j)
      acc += samples[i].weight * samples[j].weight *
             std::abs(samples[i].depth - samples[j].depth);
  return acc;
}

double distortion_incremental(std::span<const SplatSample> samples,
                              uint64_t* work_counter) {
  double prefix_w = 0.0, prefix_wz = 0.0, acc = 0.0;
  double prev = -std::numeric_limits<double>::infinity();
  uint64_t work = 0;
  for (const auto& s : samples) {
    if (s.depth < prev)
      throw std::invalid_argument("distortion_incremental: depths not sorted");
    prev = s.depth;
    acc += s.weight * (s.depth * prefix_w - prefix_wz);
    prefix_w += s.weight;
    prefix_wz += s.weight * s.depth;
    ++work;
  }
  if (work_counter) *work_counter = work;
  return 2.0 * acc;
}

Image normal_from_depth(const Image& depth, const Image& alpha, const Camera& camera) {
  Image out(depth.width, depth.height, 3);
  auto defined = [&](int x, int y) {
    return alpha.at(x, y, 0) > raster::kAlphaMin && depth.at(x, y, 0) > 0.0;
  };
  auto point = [&](int x, int y) -> Vec3 {
    const double z = depth.at(x, y, 0);
    return {(x + 0.5 - camera.cx) / camera.fx * z,
            (y + 0.5 - camera.cy) / camera.fy * z, z};
  };
  for (int y = 1; y + 1 < depth.height; ++y)
    for (int x = 1; x + 1 < depth.width; ++x) {
      if (!defined(x, y) || !defined(x - 1, y) || !defined(x + 1, y) ||
          !defined(x, y - 1) || !defined(x, y + 1))
        continue;
      const Vec3 dx = point(x + 1, y) - point(x - 1, y);
      const Vec3 dy = point(x, y + 1) - point(x, y - 1);
      const Vec3 c = cross(dy, dx);  // faces the camera (-z) for front surfaces
      const double len = c.norm();
      if (len < 1e-15) continue;
      out.at(x, y, 0) = c.x / len;
      out.at(x, y, 1) = c.y / len;
      out.at(x, y, 2) = c.z / len;
    }
  return out;
}

double normal_consistency(std::span<const SplatSample> samples,
                          std::span<const Vec3> sample_normals, const Vec3& n_ref) {
  if (samples.size() != sample_normals.size())
    throw std::invalid_argument("normal_consistency: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    acc += samples[i].weight * (1.0 - dot(sample_normals[i], n_ref));
  return acc;
}

double psnr(const Image& pred, const Image& gt) {
  const double m = mse(pred, gt);
  if (m < 1e-12) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / m);
}

}  // namespace mgs
