// Copyright Contributors to the mgs Project
// SPDX-License-Identifier: Apache-2.0

// Forward-only group-attention volume transformer and coarse-to-fine Gaussian
// decoding. Weights are seeded or file-backed, never trained here; the module
// exists for architectural fidelity and invariant testing. Float math inside,
// double at the Scene boundary.

#include "mgs/decoder.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "mgs/parallel.hpp"
#include "mgs/rng.hpp"

namespace mgs {

namespace {

// Y = X * W^T (+ bias). X is [m x k] row-major, W is [n x k] row-major.
// accumulate=true adds into Y and skips the bias.
void gemm_xwt(const float* x, std::size_t m, std::size_t k, const float* w,
              std::size_t n, const float* bias, float* y, bool accumulate,
              int n_threads) {
  // transpose W once so the inner loop is a contiguous axpy over n
  std::vector<float> wt(k * n);
  for (std::size_t row = 0; row < n; ++row)
    for (std::size_t col = 0; col < k; ++col) wt[col * n + row] = w[row * k + col];
  const std::size_t chunk = 256;
  const std::size_t n_chunks = (m + chunk - 1) / chunk;
  parallel_for(n_chunks, n_threads, [&](std::size_t c) {
    const std::size_t m0 = c * chunk, m1 = std::min(m, m0 + chunk);
    for (std::size_t row = m0; row < m1; ++row) {
      float* yr = y + row * n;
      if (!accumulate) {
        if (bias) std::memcpy(yr, bias, n * sizeof(float));
        else std::memset(yr, 0, n * sizeof(float));
      }
      const float* xr = x + row * k;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const float a = xr[kk];
        if (a == 0.0f) continue;
        const float* wr = wt.data() + kk * n;
        for (std::size_t j = 0; j < n; ++j) yr[j] += a * wr[j];
      }
    }
  });
}

void layer_norm(const float* in, std::size_t tokens, std::size_t c,
                const float* gamma, const float* beta, float* out, int n_threads) {
  const std::size_t chunk = 1024;
  const std::size_t n_chunks = (tokens + chunk - 1) / chunk;
  parallel_for(n_chunks, n_threads, [&](std::size_t b) {
    const std::size_t t0 = b * chunk, t1 = std::min(tokens, t0 + chunk);
    for (std::size_t t = t0; t < t1; ++t) {
      const float* row = in + t * c;
      float mean = 0.0f;
      for (std::size_t i = 0; i < c; ++i) mean += row[i];
      mean /= static_cast<float>(c);
      float var = 0.0f;
      for (std::size_t i = 0; i < c; ++i) {
        const float d = row[i] - mean;
        var += d * d;
      }
      var /= static_cast<float>(c);
      const float inv = 1.0f / std::sqrt(var + 1e-5f);
      float* o = out + t * c;
      for (std::size_t i = 0; i < c; ++i)
        o[i] = (row[i] - mean) * inv * gamma[i] + beta[i];
    }
  });
}

inline float gelu(float x) {
  return 0.5f * x * (1.0f + std::erf(x * 0.70710678118654752f));
}

std::vector<float> randn(Rng& rng, std::size_t n, double stddev) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal() * stddev);
  return v;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct TensorRef {
  std::string name;
  std::vector<int> shape;
  std::vector<float>* data;
};

std::vector<TensorRef> tensor_registry(DecoderWeights& w) {
  const auto& c = w.cfg;
  std::vector<TensorRef> t;
  t.push_back({"stub_proj", {c.feature_channels, 10}, &w.stub_proj});
  t.push_back({"lift_w", {c.embed_channels, c.feature_channels}, &w.lift_w});
  t.push_back({"lift_b", {c.embed_channels}, &w.lift_b});
  t.push_back({"embed_init",
               {c.embed_dim, c.embed_dim, c.embed_dim, c.embed_channels},
               &w.embed_init});
  for (int l = 0; l < static_cast<int>(w.layers.size()); ++l) {
    auto& lw = w.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    const int cc = c.embed_channels, hid = c.mlp_ratio * c.embed_channels;
    t.push_back({p + "ln1_g", {cc}, &lw.ln1_g});
    t.push_back({p + "ln1_b", {cc}, &lw.ln1_b});
    t.push_back({p + "wq", {cc, cc}, &lw.wq});
    t.push_back({p + "bq", {cc}, &lw.bq});
    t.push_back({p + "wk", {cc, cc}, &lw.wk});
    t.push_back({p + "bk", {cc}, &lw.bk});
    t.push_back({p + "wv", {cc, cc}, &lw.wv});
    t.push_back({p + "bv", {cc}, &lw.bv});
    t.push_back({p + "wo", {cc, cc}, &lw.wo});
    t.push_back({p + "bo", {cc}, &lw.bo});
    t.push_back({p + "ln2_g", {cc}, &lw.ln2_g});
    t.push_back({p + "ln2_b", {cc}, &lw.ln2_b});
    t.push_back({p + "mlp_w1", {hid, cc}, &lw.mlp_w1});
    t.push_back({p + "mlp_b1", {hid}, &lw.mlp_b1});
    t.push_back({p + "mlp_w2", {cc, hid}, &lw.mlp_w2});
    t.push_back({p + "mlp_b2", {cc}, &lw.mlp_b2});
    t.push_back({p + "ln3_g", {cc}, &lw.ln3_g});
    t.push_back({p + "ln3_b", {cc}, &lw.ln3_b});
    t.push_back({p + "conv_w", {27, cc, cc}, &lw.conv_w});
    t.push_back({p + "conv_b", {cc}, &lw.conv_b});
  }
  t.push_back({"up_w", {8, c.gaussian_channels, c.embed_channels}, &w.up_w});
  t.push_back({"up_b", {c.gaussian_channels}, &w.up_b});
  t.push_back({"coarse_w1", {c.coarse_hidden, c.gaussian_channels}, &w.coarse_w1});
  t.push_back({"coarse_b1", {c.coarse_hidden}, &w.coarse_b1});
  t.push_back({"coarse_w2", {c.primitives_per_voxel * 15, c.coarse_hidden}, &w.coarse_w2});
  t.push_back({"coarse_b2", {c.primitives_per_voxel * 15}, &w.coarse_b2});
  t.push_back({"fine_wq", {c.fine_width, c.gaussian_channels}, &w.fine_wq});
  t.push_back({"fine_bq", {c.fine_width}, &w.fine_bq});
  t.push_back({"fine_wk", {c.fine_width, 8}, &w.fine_wk});
  t.push_back({"fine_bk", {c.fine_width}, &w.fine_bk});
  t.push_back({"fine_wv", {c.fine_width, 8}, &w.fine_wv});
  t.push_back({"fine_bv", {c.fine_width}, &w.fine_bv});
  t.push_back({"fine_w1", {c.fine_width, c.fine_width}, &w.fine_w1});
  t.push_back({"fine_b1", {c.fine_width}, &w.fine_b1});
  t.push_back({"fine_w2", {5, c.fine_width}, &w.fine_w2});
  t.push_back({"fine_b2", {5}, &w.fine_b2});
  return t;
}

}  // namespace

DecoderWeights DecoderWeights::seeded(const DecoderConfig& cfg) {
  DecoderWeights w;
  w.cfg = cfg;
  w.layers.resize(cfg.n_layers);
  Rng rng(cfg.seed);
  const int c = cfg.embed_channels;
  const int hid = cfg.mlp_ratio * c;

  auto lin = [&](int fan_in, std::size_t n) { return randn(rng, n, 1.0 / std::sqrt(fan_in)); };

  w.stub_proj = lin(10, static_cast<std::size_t>(cfg.feature_channels) * 10);
  w.lift_w = lin(cfg.feature_channels,
                 static_cast<std::size_t>(c) * cfg.feature_channels);
  w.lift_b.assign(c, 0.0f);
  w.embed_init = randn(rng, static_cast<std::size_t>(cfg.embed_dim) * cfg.embed_dim *
                                cfg.embed_dim * c, 0.5);
  for (auto& lw : w.layers) {
    lw.ln1_g.assign(c, 1.0f);
    lw.ln1_b.assign(c, 0.0f);
    lw.wq = lin(c, static_cast<std::size_t>(c) * c);
    lw.bq.assign(c, 0.0f);
    lw.wk = lin(c, static_cast<std::size_t>(c) * c);
    lw.bk.assign(c, 0.0f);
    lw.wv = lin(c, static_cast<std::size_t>(c) * c);
    lw.bv.assign(c, 0.0f);
    lw.wo = lin(c, static_cast<std::size_t>(c) * c);
    lw.bo.assign(c, 0.0f);
    lw.ln2_g.assign(c, 1.0f);
    lw.ln2_b.assign(c, 0.0f);
    lw.mlp_w1 = lin(c, static_cast<std::size_t>(hid) * c);
    lw.mlp_b1.assign(hid, 0.0f);
    lw.mlp_w2 = lin(hid, static_cast<std::size_t>(c) * hid);
    lw.mlp_b2.assign(c, 0.0f);
    lw.ln3_g.assign(c, 1.0f);
    lw.ln3_b.assign(c, 0.0f);
    lw.conv_w = lin(27 * c, static_cast<std::size_t>(27) * c * c);
    lw.conv_b.assign(c, 0.0f);
  }
  w.up_w = lin(c, static_cast<std::size_t>(8) * cfg.gaussian_channels * c);
  w.up_b.assign(cfg.gaussian_channels, 0.0f);
  w.coarse_w1 = lin(cfg.gaussian_channels,
                    static_cast<std::size_t>(cfg.coarse_hidden) * cfg.gaussian_channels);
  w.coarse_b1.assign(cfg.coarse_hidden, 0.0f);
  w.coarse_w2 = lin(cfg.coarse_hidden,
                    static_cast<std::size_t>(cfg.primitives_per_voxel) * 15 * cfg.coarse_hidden);
  w.coarse_b2.assign(cfg.primitives_per_voxel * 15, 0.0f);
  for (int k = 0; k < cfg.primitives_per_voxel; ++k) {
    float* b = &w.coarse_b2[static_cast<std::size_t>(k) * 15];
    b[3] = b[4] = -4.5f;  // log-scale: primitives around voxel size
    b[9] = -2.0f;         // opacity around 0.12
  }
  w.fine_wq = lin(cfg.gaussian_channels,
                  static_cast<std::size_t>(cfg.fine_width) * cfg.gaussian_channels);
  w.fine_bq.assign(cfg.fine_width, 0.0f);
  w.fine_wk = lin(8, static_cast<std::size_t>(cfg.fine_width) * 8);
  w.fine_bk.assign(cfg.fine_width, 0.0f);
  w.fine_wv = lin(8, static_cast<std::size_t>(cfg.fine_width) * 8);
  w.fine_bv.assign(cfg.fine_width, 0.0f);
  w.fine_w1 = lin(cfg.fine_width, static_cast<std::size_t>(cfg.fine_width) * cfg.fine_width);
  w.fine_b1.assign(cfg.fine_width, 0.0f);
  w.fine_w2 = randn(rng, static_cast<std::size_t>(5) * cfg.fine_width,
                    0.02 / std::sqrt(cfg.fine_width));
  w.fine_b2.assign(5, 0.0f);
  return w;
}

void DecoderWeights::save(const std::string& manifest_path) const {
  auto& self = const_cast<DecoderWeights&>(*this);
  const auto tensors = tensor_registry(self);
  const std::string bin_path = manifest_path + ".bin";
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot open for writing: " + bin_path);
  nlohmann::ordered_json j;
  j["data_file"] = bin_path.substr(bin_path.find_last_of('/') + 1);
  j["config"] = {{"feature_hw", cfg.feature_hw},
                 {"feature_channels", cfg.feature_channels},
                 {"embed_dim", cfg.embed_dim},
                 {"embed_channels", cfg.embed_channels},
                 {"groups", cfg.groups},
                 {"n_layers", cfg.n_layers},
                 {"n_heads", cfg.n_heads},
                 {"mlp_ratio", cfg.mlp_ratio},
                 {"gaussian_dim", cfg.gaussian_dim},
                 {"gaussian_channels", cfg.gaussian_channels},
                 {"primitives_per_voxel", cfg.primitives_per_voxel},
                 {"coarse_hidden", cfg.coarse_hidden},
                 {"fine_width", cfg.fine_width}};
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  std::size_t offset = 0;
  for (const auto& t : tensors) {
    nlohmann::ordered_json e;
    e["name"] = t.name;
    e["shape"] = t.shape;
    e["offset"] = offset;
    arr.push_back(e);
    bin.write(reinterpret_cast<const char*>(t.data->data()),
              static_cast<std::streamsize>(t.data->size() * sizeof(float)));
    offset += t.data->size() * sizeof(float);
  }
  if (!bin) throw std::runtime_error("write failed: " + bin_path);
  j["tensors"] = std::move(arr);
  std::ofstream mf(manifest_path);
  if (!mf) throw std::runtime_error("cannot open for writing: " + manifest_path);
  mf << j.dump(2) << "\n";
}

DecoderWeights DecoderWeights::load(const std::string& manifest_path) {
  std::ifstream mf(manifest_path);
  if (!mf) throw std::runtime_error("cannot open " + manifest_path);
  nlohmann::json j;
  mf >> j;
  DecoderWeights w;
  const auto& c = j.at("config");
  w.cfg.feature_hw = c.at("feature_hw").get<int>();
  w.cfg.feature_channels = c.at("feature_channels").get<int>();
  w.cfg.embed_dim = c.at("embed_dim").get<int>();
  w.cfg.embed_channels = c.at("embed_channels").get<int>();
  w.cfg.groups = c.at("groups").get<int>();
  w.cfg.n_layers = c.at("n_layers").get<int>();
  w.cfg.n_heads = c.at("n_heads").get<int>();
  w.cfg.mlp_ratio = c.at("mlp_ratio").get<int>();
  w.cfg.gaussian_dim = c.at("gaussian_dim").get<int>();
  w.cfg.gaussian_channels = c.at("gaussian_channels").get<int>();
  w.cfg.primitives_per_voxel = c.at("primitives_per_voxel").get<int>();
  w.cfg.coarse_hidden = c.at("coarse_hidden").get<int>();
  w.cfg.fine_width = c.at("fine_width").get<int>();
  w.layers.resize(w.cfg.n_layers);

  const std::string dir = manifest_path.find('/') == std::string::npos
                              ? std::string()
                              : manifest_path.substr(0, manifest_path.find_last_of('/') + 1);
  const std::string bin_path = dir + j.at("data_file").get<std::string>();
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot open " + bin_path);

  auto tensors = tensor_registry(w);
  for (auto& t : tensors) {
    bool found = false;
    for (const auto& e : j.at("tensors")) {
      if (e.at("name").get<std::string>() != t.name) continue;
      std::size_t n = 1;
      for (const int d : e.at("shape")) n *= static_cast<std::size_t>(d);
      t.data->resize(n);
      bin.seekg(static_cast<std::streamoff>(e.at("offset").get<std::size_t>()));
      bin.read(reinterpret_cast<char*>(t.data->data()),
               static_cast<std::streamsize>(n * sizeof(float)));
      if (!bin) throw std::runtime_error("weights: truncated tensor " + t.name);
      found = true;
      break;
    }
    if (!found) throw std::runtime_error("weights: missing tensor " + t.name);
  }
  return w;
}

std::vector<std::vector<int>> group_partition(const FeatureVolume& volume, int groups) {
  const int d = volume.dim;
  if (groups <= 0 || d % groups != 0)
    throw std::invalid_argument("group_partition: dim not divisible by groups");
  const int s = d / groups;  // block edge
  std::vector<std::vector<int>> out;
  out.reserve(static_cast<std::size_t>(groups) * groups * groups);
  for (int gz = 0; gz < groups; ++gz)
    for (int gy = 0; gy < groups; ++gy)
      for (int gx = 0; gx < groups; ++gx) {
        std::vector<int> g;
        g.reserve(static_cast<std::size_t>(s) * s * s);
        for (int lz = 0; lz < s; ++lz)
          for (int ly = 0; ly < s; ++ly)
            for (int lx = 0; lx < s; ++lx) {
              const int x = gx * s + lx, y = gy * s + ly, z = gz * s + lz;
              g.push_back((z * d + y) * d + x);
            }
        out.push_back(std::move(g));
      }
  return out;
}

FeatureVolume group_attention_layer(const FeatureVolume& embed,
                                    const FeatureVolume& feat,
                                    const AttentionLayerWeights& w,
                                    const DecoderConfig& cfg) {
  if (embed.dim != feat.dim || embed.channels != feat.channels)
    throw std::invalid_argument("group_attention_layer: embed/feature shape mismatch");
  const int c = embed.channels;
  const std::size_t tokens = embed.n_voxels();
  if (c % cfg.n_heads != 0)
    throw std::invalid_argument("group_attention_layer: channels not divisible by heads");
  const int dh = c / cfg.n_heads;

  FeatureVolume out = embed;
  std::vector<float> ln(tokens * c), q(tokens * c), k(tokens * c), v(tokens * c),
      ctx(tokens * c, 0.0f), proj(tokens * c);

  // group cross-attention
  layer_norm(embed.data.data(), tokens, c, w.ln1_g.data(), w.ln1_b.data(), ln.data(),
             cfg.n_threads);
  gemm_xwt(ln.data(), tokens, c, w.wq.data(), c, w.bq.data(), q.data(), false, cfg.n_threads);
  gemm_xwt(feat.data.data(), tokens, c, w.wk.data(), c, w.bk.data(), k.data(), false,
           cfg.n_threads);
  gemm_xwt(feat.data.data(), tokens, c, w.wv.data(), c, w.bv.data(), v.data(), false,
           cfg.n_threads);

  const auto groups = group_partition(embed, cfg.groups);
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  parallel_for(groups.size(), cfg.n_threads, [&](std::size_t gi) {
    const auto& g = groups[gi];
    const std::size_t m = g.size();
    std::vector<float> scores(m);
    for (int h = 0; h < cfg.n_heads; ++h) {
      const int co = h * dh;
      for (std::size_t i = 0; i < m; ++i) {
        const float* qi = q.data() + static_cast<std::size_t>(g[i]) * c + co;
        float maxs = -1e30f;
        for (std::size_t jj = 0; jj < m; ++jj) {
          const float* kj = k.data() + static_cast<std::size_t>(g[jj]) * c + co;
          float s = 0.0f;
          for (int Dd = 0; Dd < dh; ++Dd) s += qi[Dd] * kj[Dd];
          scores[jj] = s * scale;
          maxs = std::max(maxs, scores[jj]);
        }
        float denom = 0.0f;
        for (std::size_t jj = 0; jj < m; ++jj) {
          scores[jj] = std::exp(scores[jj] - maxs);
          denom += scores[jj];
        }
        float* ci = ctx.data() + static_cast<std::size_t>(g[i]) * c + co;
        for (std::size_t jj = 0; jj < m; ++jj) {
          const float p = scores[jj] / denom;
          const float* vj = v.data() + static_cast<std::size_t>(g[jj]) * c + co;
          for (int Dd = 0; Dd < dh; ++Dd) ci[Dd] += p * vj[Dd];
        }
      }
    }
  });
  gemm_xwt(ctx.data(), tokens, c, w.wo.data(), c, w.bo.data(), proj.data(), false,
           cfg.n_threads);
  for (std::size_t i = 0; i < tokens * c; ++i) out.data[i] += proj[i];

  // MLP
  const int hid = cfg.mlp_ratio * c;
  std::vector<float> h1(tokens * hid);
  layer_norm(out.data.data(), tokens, c, w.ln2_g.data(), w.ln2_b.data(), ln.data(),
             cfg.n_threads);
  gemm_xwt(ln.data(), tokens, c, w.mlp_w1.data(), hid, w.mlp_b1.data(), h1.data(), false,
           cfg.n_threads);
  for (auto& x : h1) x = gelu(x);
  gemm_xwt(h1.data(), tokens, hid, w.mlp_w2.data(), c, w.mlp_b2.data(), proj.data(), false,
           cfg.n_threads);
  for (std::size_t i = 0; i < tokens * c; ++i) out.data[i] += proj[i];

  // 3x3x3 convolution over the reassembled volume
  layer_norm(out.data.data(), tokens, c, w.ln3_g.data(), w.ln3_b.data(), ln.data(),
             cfg.n_threads);
  std::vector<float> shifted(tokens * c);
  for (std::size_t t = 0; t < tokens; ++t)
    std::memcpy(proj.data() + t * c, w.conv_b.data(), c * sizeof(float));
  const int d = embed.dim;
  int off_idx = 0;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx, ++off_idx) {
        for (int z = 0; z < d; ++z)
          for (int y = 0; y < d; ++y)
            for (int x = 0; x < d; ++x) {
              const std::size_t t = (static_cast<std::size_t>(z) * d + y) * d + x;
              const int sx = x + dx, sy = y + dy, sz = z + dz;
              float* dst = shifted.data() + t * c;
              if (sx < 0 || sx >= d || sy < 0 || sy >= d || sz < 0 || sz >= d)
                std::memset(dst, 0, c * sizeof(float));
              else
                std::memcpy(dst,
                            ln.data() + ((static_cast<std::size_t>(sz) * d + sy) * d + sx) * c,
                            c * sizeof(float));
            }
        gemm_xwt(shifted.data(), tokens, c,
                 w.conv_w.data() + static_cast<std::size_t>(off_idx) * c * c, c, nullptr,
                 proj.data(), true, cfg.n_threads);
      }
  for (std::size_t i = 0; i < tokens * c; ++i) out.data[i] += proj[i];
  return out;
}

GaussianVolume upscale_volume(const FeatureVolume& embed, const DecoderWeights& w) {
  const auto& cfg = w.cfg;
  if (embed.dim != cfg.embed_dim || embed.channels != cfg.embed_channels)
    throw std::invalid_argument("upscale_volume: unexpected input shape");
  const int d = embed.dim, c = embed.channels, oc = cfg.gaussian_channels;
  GaussianVolume out(2 * d, oc);
  const std::size_t tokens = embed.n_voxels();
  std::vector<float> corner(tokens * oc);
  int corner_idx = 0;
  for (int dz = 0; dz <= 1; ++dz)
    for (int dy = 0; dy <= 1; ++dy)
      for (int dx = 0; dx <= 1; ++dx, ++corner_idx) {
        gemm_xwt(embed.data.data(), tokens, c,
                 w.up_w.data() + static_cast<std::size_t>(corner_idx) * oc * c, oc,
                 w.up_b.data(), corner.data(), false, cfg.n_threads);
        for (int z = 0; z < d; ++z)
          for (int y = 0; y < d; ++y)
            for (int x = 0; x < d; ++x) {
              const std::size_t src = (static_cast<std::size_t>(z) * d + y) * d + x;
              const std::size_t dst =
                  ((static_cast<std::size_t>(2 * z + dz) * out.dim + (2 * y + dy)) * out.dim +
                   (2 * x + dx));
              std::memcpy(out.data.data() + dst * oc, corner.data() + src * oc,
                          oc * sizeof(float));
            }
      }
  return out;
}

namespace {

// direction-preserving tanh bound: |offset| <= radius
Vec3 bounded_offset(const Vec3& raw, double radius) {
  const double len = raw.norm();
  if (len < 1e-9) return raw * radius;  // tanh(x)/x -> 1
  return raw * (radius * std::tanh(len) / len);
}

MaterialGaussian2D decode_primitive(const double* p, const Vec3& voxel_center,
                                    double radius, const Bbox& bbox) {
  MaterialGaussian2D g;
  g.position = bbox.clamp(voxel_center + bounded_offset({p[0], p[1], p[2]}, radius));
  g.scale = {std::exp(std::clamp(p[3], -12.0, 4.0)), std::exp(std::clamp(p[4], -12.0, 4.0))};
  Vec4 q{p[5], p[6], p[7], p[8]};
  g.rotation = q.norm() > 1e-9 ? q.normalized() : Vec4{1, 0, 0, 0};
  g.opacity = sigmoid(p[9]);
  g.albedo = {sigmoid(p[10]), sigmoid(p[11]), sigmoid(p[12])};
  g.roughness = sigmoid(p[13]);
  g.metallic = sigmoid(p[14]);
  return g;
}

}  // namespace

Scene coarse_decode(const GaussianVolume& vg, int k, const DecoderWeights& w,
                    const Bbox& bbox) {
  if (k < 1) throw std::invalid_argument("coarse_decode: k must be >= 1");
  const auto& cfg = w.cfg;
  if (vg.channels != cfg.gaussian_channels)
    throw std::invalid_argument("coarse_decode: unexpected channel count");
  const std::size_t voxels = vg.n_voxels();
  const int hid = cfg.coarse_hidden;
  std::vector<float> h1(voxels * hid), raw(voxels * static_cast<std::size_t>(k) * 15);
  gemm_xwt(vg.data.data(), voxels, vg.channels, w.coarse_w1.data(), hid,
           w.coarse_b1.data(), h1.data(), false, cfg.n_threads);
  for (auto& x : h1) x = std::max(x, 0.0f);
  gemm_xwt(h1.data(), voxels, hid, w.coarse_w2.data(), k * 15, w.coarse_b2.data(),
           raw.data(), false, cfg.n_threads);

  Scene scene;
  scene.bbox = bbox;
  scene.gaussians.resize(voxels * static_cast<std::size_t>(k));
  const double edge = bbox.edge_length();
  const double radius = cfg.offset_radius_frac * edge;
  const double cell = edge / vg.dim;
  parallel_for(voxels, cfg.n_threads, [&](std::size_t vv) {
    const int x = static_cast<int>(vv % vg.dim);
    const int y = static_cast<int>((vv / vg.dim) % vg.dim);
    const int z = static_cast<int>(vv / (static_cast<std::size_t>(vg.dim) * vg.dim));
    const Vec3 center{bbox.min.x + (x + 0.5) * cell, bbox.min.y + (y + 0.5) * cell,
                      bbox.min.z + (z + 0.5) * cell};
    for (int kk = 0; kk < k; ++kk) {
      double p[15];
      const float* src = raw.data() + (vv * k + kk) * 15;
      for (int i = 0; i < 15; ++i) p[i] = src[i];
      scene.gaussians[vv * k + kk] = decode_primitive(p, center, radius, bbox);
    }
  });
  return scene;
}

std::optional<Vec2> project_point(const Camera& camera, const Vec3& world) {
  const Vec3 pc = camera.to_camera(world);
  if (pc.z <= 1e-9) return std::nullopt;
  return Vec2{camera.fx * pc.x / pc.z + camera.cx, camera.fy * pc.y / pc.z + camera.cy};
}

namespace {

// bilinear sample at pixel coordinates (clamped); images indexed at centers
double sample_bilinear(const Image& img, double sx, double sy, int c) {
  const double fx = std::clamp(sx - 0.5, 0.0, static_cast<double>(img.width - 1));
  const double fy = std::clamp(sy - 0.5, 0.0, static_cast<double>(img.height - 1));
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
  const int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
  const double ax = fx - x0, ay = fy - y0;
  return img.at(x0, y0, c) * (1 - ax) * (1 - ay) + img.at(x1, y0, c) * ax * (1 - ay) +
         img.at(x0, y1, c) * (1 - ax) * ay + img.at(x1, y1, c) * ax * ay;
}

}  // namespace

Scene fine_refine(const Scene& coarse, const GaussianVolume& vg,
                  const std::vector<Image>& input_images,
                  const std::vector<CoarseRenders>& coarse_renders,
                  const std::vector<Camera>& cameras, const DecoderWeights& w) {
  const auto& cfg = w.cfg;
  if (cameras.size() != input_images.size() || cameras.size() != coarse_renders.size())
    throw std::invalid_argument("fine_refine: cameras and renders count mismatch");
  if (cameras.empty()) throw std::invalid_argument("fine_refine: no views");
  const int k = cfg.primitives_per_voxel;
  if (coarse.gaussians.size() != vg.n_voxels() * static_cast<std::size_t>(k))
    throw std::invalid_argument("fine_refine: scene does not match gaussian volume");
  for (std::size_t m = 0; m < cameras.size(); ++m)
    if (input_images[m].width != cameras[m].width ||
        input_images[m].height != cameras[m].height)
      throw std::invalid_argument("fine_refine: image resolution does not match camera");

  Scene fine = coarse;
  const int width = cfg.fine_width;
  const std::size_t n_views = cameras.size();
  parallel_for(coarse.gaussians.size(), cfg.n_threads, [&](std::size_t i) {
    const std::size_t voxel = i / k;
    const float* feat = vg.voxel(voxel);
    std::vector<float> qv(width), kv(width), vv(width), ctx(width, 0.0f);
    // query from the primitive's voxel feature
    for (int o = 0; o < width; ++o) {
      float s = w.fine_bq[o];
      const float* row = w.fine_wq.data() + static_cast<std::size_t>(o) * vg.channels;
      for (int ci = 0; ci < vg.channels; ++ci) s += row[ci] * feat[ci];
      qv[o] = s;
    }
    std::vector<float> scores(n_views);
    std::vector<std::vector<float>> values(n_views);
    float maxs = -1e30f;
    for (std::size_t m = 0; m < n_views; ++m) {
      // 8 sampled channels: input image, coarse albedo, coarse depth, coarse alpha
      float tok[8] = {0, 0, 0, 0, 0, 0, 0, 0};
      const auto px = project_point(cameras[m], fine.gaussians[i].position);
      const auto& cam = cameras[m];
      if (px && px->x >= 0 && px->x <= cam.width && px->y >= 0 && px->y <= cam.height) {
        const Image& ci = input_images[m];
        const double isx = px->x / cam.width * ci.width;
        const double isy = px->y / cam.height * ci.height;
        for (int c = 0; c < 3; ++c)
          tok[c] = static_cast<float>(sample_bilinear(ci, isx, isy, c));
        const auto& cr = coarse_renders[m];
        const double rsx = px->x / cam.width * cr.albedo.width;
        const double rsy = px->y / cam.height * cr.albedo.height;
        for (int c = 0; c < 3; ++c)
          tok[3 + c] = static_cast<float>(sample_bilinear(cr.albedo, rsx, rsy, c));
        tok[6] = static_cast<float>(sample_bilinear(cr.depth, rsx, rsy, 0));
        tok[7] = static_cast<float>(sample_bilinear(cr.alpha, rsx, rsy, 0));
      }
      float score = 0.0f;
      values[m].resize(width);
      for (int o = 0; o < width; ++o) {
        float sk = w.fine_bk[o], sv = w.fine_bv[o];
        const float* rk = w.fine_wk.data() + static_cast<std::size_t>(o) * 8;
        const float* rv = w.fine_wv.data() + static_cast<std::size_t>(o) * 8;
        for (int ci = 0; ci < 8; ++ci) {
          sk += rk[ci] * tok[ci];
          sv += rv[ci] * tok[ci];
        }
        kv[o] = sk;
        values[m][o] = sv;
        score += qv[o] * sk;
      }
      scores[m] = score / std::sqrt(static_cast<float>(width));
      maxs = std::max(maxs, scores[m]);
    }
    float denom = 0.0f;
    for (std::size_t m = 0; m < n_views; ++m) {
      scores[m] = std::exp(scores[m] - maxs);
      denom += scores[m];
    }
    for (std::size_t m = 0; m < n_views; ++m) {
      const float p = scores[m] / denom;
      for (int o = 0; o < width; ++o) ctx[o] += p * values[m][o];
    }
    std::vector<float> h(width);
    for (int o = 0; o < width; ++o) {
      float s = w.fine_b1[o];
      const float* row = w.fine_w1.data() + static_cast<std::size_t>(o) * width;
      for (int ci = 0; ci < width; ++ci) s += row[ci] * ctx[ci];
      h[o] = gelu(s);
    }
    double res[5];
    for (int o = 0; o < 5; ++o) {
      float s = w.fine_b2[o];
      const float* row = w.fine_w2.data() + static_cast<std::size_t>(o) * width;
      for (int ci = 0; ci < width; ++ci) s += row[ci] * h[ci];
      res[o] = s;
    }
    auto& g = fine.gaussians[i];
    g.albedo = {std::clamp(g.albedo.x + res[0], 0.0, 1.0),
                std::clamp(g.albedo.y + res[1], 0.0, 1.0),
                std::clamp(g.albedo.z + res[2], 0.0, 1.0)};
    g.roughness = std::clamp(g.roughness + res[3], 0.0, 1.0);
    g.metallic = std::clamp(g.metallic + res[4], 0.0, 1.0);
  });
  return fine;
}

std::vector<float> stub_image_features(const Image& image, const Camera& camera,
                                       const DecoderWeights& w) {
  const auto& cfg = w.cfg;
  if (image.channels != 3)
    throw std::invalid_argument("stub_image_features: expected a 3-channel image");
  const int hw = cfg.feature_hw, fc = cfg.feature_channels;
  std::vector<float> out(static_cast<std::size_t>(hw) * hw * fc, 0.0f);
  const int pw = std::max(1, image.width / hw), ph = std::max(1, image.height / hw);
  for (int gy = 0; gy < hw; ++gy)
    for (int gx = 0; gx < hw; ++gx) {
      // pooled patch statistics
      double mean[3] = {0, 0, 0};
      double lum2 = 0, lum1 = 0;
      int count = 0;
      for (int y = gy * ph; y < std::min(image.height, (gy + 1) * ph); ++y)
        for (int x = gx * pw; x < std::min(image.width, (gx + 1) * pw); ++x) {
          double l = 0;
          for (int c = 0; c < 3; ++c) {
            mean[c] += image.at(x, y, c);
            l += image.at(x, y, c);
          }
          l /= 3.0;
          lum1 += l;
          lum2 += l * l;
          ++count;
        }
      double in10[10] = {0};
      if (count > 0) {
        for (int c = 0; c < 3; ++c) in10[c] = mean[c] / count;
        const double m = lum1 / count;
        in10[3] = std::sqrt(std::max(0.0, lum2 / count - m * m));
      }
      const int px = std::min(image.width - 1, gx * pw + pw / 2);
      const int py = std::min(image.height - 1, gy * ph + ph / 2);
      const PluckerEmbedding pl = plucker_embed(camera, px, py);
      in10[4] = pl.direction.x;
      in10[5] = pl.direction.y;
      in10[6] = pl.direction.z;
      in10[7] = pl.moment.x;
      in10[8] = pl.moment.y;
      in10[9] = pl.moment.z;
      float* dst = out.data() + (static_cast<std::size_t>(gy) * hw + gx) * fc;
      for (int f = 0; f < fc; ++f) {
        double s = 0;
        const float* row = w.stub_proj.data() + static_cast<std::size_t>(f) * 10;
        for (int i = 0; i < 10; ++i) s += row[i] * in10[i];
        dst[f] = static_cast<float>(s);
      }
    }
  return out;
}

FeatureVolume lift_features(const std::vector<std::vector<float>>& view_features,
                            const std::vector<Camera>& cameras,
                            const DecoderWeights& w, const Bbox& bbox) {
  const auto& cfg = w.cfg;
  if (view_features.size() != cameras.size() || cameras.empty())
    throw std::invalid_argument("lift_features: view count mismatch");
  const int d = cfg.embed_dim, hw = cfg.feature_hw, fc = cfg.feature_channels;
  const std::size_t voxels = static_cast<std::size_t>(d) * d * d;
  std::vector<float> pooled(voxels * fc, 0.0f);
  const double cell = bbox.edge_length() / d;

  parallel_for(voxels, cfg.n_threads, [&](std::size_t vv) {
    const int x = static_cast<int>(vv % d);
    const int y = static_cast<int>((vv / d) % d);
    const int z = static_cast<int>(vv / (static_cast<std::size_t>(d) * d));
    const Vec3 center{bbox.min.x + (x + 0.5) * cell, bbox.min.y + (y + 0.5) * cell,
                      bbox.min.z + (z + 0.5) * cell};
    float* dst = pooled.data() + vv * fc;
    int hits = 0;
    for (std::size_t m = 0; m < cameras.size(); ++m) {
      const auto px = project_point(cameras[m], center);
      if (!px) continue;
      // feature-grid coordinates of the projection
      const double gx = px->x / cameras[m].width * hw - 0.5;
      const double gy = px->y / cameras[m].height * hw - 0.5;
      if (gx < -1.0 || gx > hw || gy < -1.0 || gy > hw) continue;
      const double cx = std::clamp(gx, 0.0, static_cast<double>(hw - 1));
      const double cy = std::clamp(gy, 0.0, static_cast<double>(hw - 1));
      const int x0 = static_cast<int>(cx), y0 = static_cast<int>(cy);
      const int x1 = std::min(x0 + 1, hw - 1), y1 = std::min(y0 + 1, hw - 1);
      const double ax = cx - x0, ay = cy - y0;
      const float* f = view_features[m].data();
      auto tok = [&](int yy, int xx) {
        return f + (static_cast<std::size_t>(yy) * hw + xx) * fc;
      };
      const float* t00 = tok(y0, x0);
      const float* t10 = tok(y0, x1);
      const float* t01 = tok(y1, x0);
      const float* t11 = tok(y1, x1);
      for (int c = 0; c < fc; ++c)
        dst[c] += static_cast<float>(t00[c] * (1 - ax) * (1 - ay) + t10[c] * ax * (1 - ay) +
                                     t01[c] * (1 - ax) * ay + t11[c] * ax * ay);
      ++hits;
    }
    if (hits > 1)
      for (int c = 0; c < fc; ++c) dst[c] /= static_cast<float>(hits);
  });

  FeatureVolume vf(d, cfg.embed_channels);
  gemm_xwt(pooled.data(), voxels, fc, w.lift_w.data(), cfg.embed_channels,
           w.lift_b.data(), vf.data.data(), false, cfg.n_threads);
  return vf;
}

DecoderForward decoder_forward(const std::vector<Image>& input_images,
                               const std::vector<Camera>& cameras,
                               const DecoderWeights& w, int render_size) {
  if (input_images.size() != cameras.size() || cameras.empty())
    throw std::invalid_argument("decoder_forward: image/camera count mismatch");
  const auto& cfg = w.cfg;

  std::vector<std::vector<float>> feats;
  feats.reserve(cameras.size());
  for (std::size_t m = 0; m < cameras.size(); ++m)
    feats.push_back(stub_image_features(input_images[m], cameras[m], w));

  DecoderForward fwd;
  fwd.feature_volume = lift_features(feats, cameras, w);

  FeatureVolume embed(cfg.embed_dim, cfg.embed_channels);
  embed.data.assign(w.embed_init.begin(), w.embed_init.end());
  for (int l = 0; l < cfg.n_layers; ++l)
    embed = group_attention_layer(embed, fwd.feature_volume, w.layers[l], cfg);
  fwd.embed_final = embed;

  fwd.gaussian_volume = upscale_volume(embed, w);
  fwd.coarse_scene = coarse_decode(fwd.gaussian_volume, cfg.primitives_per_voxel, w);

  // Coarse renders for the fine stage, at a reduced resolution; the fine
  // stage samples them in normalized image coordinates.
  std::vector<CoarseRenders> renders;
  RenderOptions ropts;
  ropts.n_threads = cfg.n_threads;
  for (std::size_t m = 0; m < cameras.size(); ++m) {
    Camera rc = cameras[m];
    const double sx = static_cast<double>(render_size) / rc.width;
    const double sy = static_cast<double>(render_size) / rc.height;
    rc.fx *= sx;
    rc.fy *= sy;
    rc.cx *= sx;
    rc.cy *= sy;
    rc.width = rc.height = render_size;
    GBuffer gb = render_fast(fwd.coarse_scene, rc, ropts);
    renders.push_back({std::move(gb.albedo), std::move(gb.depth), std::move(gb.alpha)});
  }
  fwd.fine_scene = fine_refine(fwd.coarse_scene, fwd.gaussian_volume, input_images,
                               renders, cameras, w);
  return fwd;
}

}  // namespace mgs
