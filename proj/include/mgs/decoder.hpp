// Copyright Contributors to the mgs Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mgs/image.hpp"
#include "mgs/rasterizer.hpp"
#include "mgs/types.hpp"

namespace mgs {

// Dense voxel grid of per-voxel feature vectors, voxel-major storage:
// ((z*D + y)*D + x) * C + c.
struct FeatureVolume {
  int dim{0};
  int channels{0};
  std::vector<float> data;

  FeatureVolume() = default;
  FeatureVolume(int d, int c)
      : dim(d), channels(c),
        data(static_cast<std::size_t>(d) * d * d * c, 0.0f) {}

  std::size_t n_voxels() const { return static_cast<std::size_t>(dim) * dim * dim; }
  float* voxel(std::size_t v) { return data.data() + v * channels; }
  const float* voxel(std::size_t v) const { return data.data() + v * channels; }
};

struct GaussianVolume {
  int dim{0};
  int channels{0};
  std::vector<float> data;

  GaussianVolume() = default;
  GaussianVolume(int d, int c)
      : dim(d), channels(c),
        data(static_cast<std::size_t>(d) * d * d * c, 0.0f) {}
  std::size_t n_voxels() const { return static_cast<std::size_t>(dim) * dim * dim; }
  const float* voxel(std::size_t v) const { return data.data() + v * channels; }
};

struct DecoderConfig {
  int feature_hw{32};        // stub feature maps are feature_channels x hw x hw
  int feature_channels{768};
  int embed_dim{32};         // D
  int embed_channels{256};   // C
  int groups{16};            // G per axis
  int n_layers{12};
  int n_heads{8};
  int mlp_ratio{4};
  int gaussian_dim{64};
  int gaussian_channels{80};
  int primitives_per_voxel{2};  // K
  double offset_radius_frac{1.0 / 32.0};
  int coarse_hidden{128};
  int fine_width{64};
  uint64_t seed{1234};
  int n_threads{0};
};

struct AttentionLayerWeights {
  std::vector<float> ln1_g, ln1_b;
  std::vector<float> wq, bq, wk, bk, wv, bv, wo, bo;  // weights are [out x in]
  std::vector<float> ln2_g, ln2_b;
  std::vector<float> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  std::vector<float> ln3_g, ln3_b;
  std::vector<float> conv_w, conv_b;  // [27 x out x in], [out]
};

struct DecoderWeights {
  DecoderConfig cfg;
  std::vector<float> stub_proj;       // feature_channels x 10 (patch stats + Plucker)
  std::vector<float> lift_w, lift_b;  // C x feature_channels, C
  std::vector<float> embed_init;      // D^3 x C learnable query volume
  std::vector<AttentionLayerWeights> layers;
  std::vector<float> up_w, up_b;  // [8 x out x in], [out]
  std::vector<float> coarse_w1, coarse_b1, coarse_w2, coarse_b2;
  std::vector<float> fine_wq, fine_bq, fine_wk, fine_bk, fine_wv, fine_bv;
  std::vector<float> fine_w1, fine_b1, fine_w2, fine_b2;  // residual head

  static DecoderWeights seeded(const DecoderConfig& cfg);
  void save(const std::string& manifest_path) const;
  static DecoderWeights load(const std::string& manifest_path);
};

// Disjoint cover of the voxel grid into groups^3 blocks; reassembly of the
// returned index lists is the identity. Throws when dim % groups != 0.
std::vector<std::vector<int>> group_partition(const FeatureVolume& volume, int groups);

// One residual block: pre-LN group cross-attention (embed queries, feature
// keys/values), pre-LN MLP, pre-LN 3x3x3 convolution.
FeatureVolume group_attention_layer(const FeatureVolume& embed,
                                    const FeatureVolume& feat,
                                    const AttentionLayerWeights& w,
                                    const DecoderConfig& cfg);

// Stride-2 transposed 3D convolution: D^3 x C -> (2D)^3 x gaussian_channels.
GaussianVolume upscale_volume(const FeatureVolume& embed, const DecoderWeights& w);

// Per-voxel feed-forward decode of K primitives; positions are the voxel
// center plus a tanh-bounded offset of radius offset_radius_frac * bbox edge.
Scene coarse_decode(const GaussianVolume& vg, int k, const DecoderWeights& w,
                    const Bbox& bbox = {});

// Coarse renders consumed by the fine stage, one per input view.
struct CoarseRenders {
  Image albedo;  // H x W x 3
  Image depth;   // H x W x 1
  Image alpha;   // H x W x 1
};

// Projects primitive centers into the input views, samples input + coarse
// renders, and adds cross-attention residuals to the 5 material channels.
// All other parameters pass through unchanged.
Scene fine_refine(const Scene& coarse, const GaussianVolume& vg,
                  const std::vector<Image>& input_images,
                  const std::vector<CoarseRenders>& coarse_renders,
                  const std::vector<Camera>& cameras, const DecoderWeights& w);

// Pinhole projection to pixel coordinates; empty when behind the camera.
std::optional<Vec2> project_point(const Camera& camera, const Vec3& world);

// Deterministic stand-in for the image encoder: pooled patch statistics
// concatenated with Plucker ray embeddings, through a seeded projection.
std::vector<float> stub_image_features(const Image& image, const Camera& camera,
                                       const DecoderWeights& w);

// Lifts per-view stub features into the image feature volume.
FeatureVolume lift_features(const std::vector<std::vector<float>>& view_features,
                            const std::vector<Camera>& cameras,
                            const DecoderWeights& w, const Bbox& bbox = {});

struct DecoderForward {
  FeatureVolume feature_volume;
  FeatureVolume embed_final;
  GaussianVolume gaussian_volume;
  Scene coarse_scene;
  Scene fine_scene;
};

// Full forward pass from input views to a refined scene. Coarse renders for
// the fine stage are produced at render_size pixels.
DecoderForward decoder_forward(const std::vector<Image>& input_images,
                               const std::vector<Camera>& cameras,
                               const DecoderWeights& w, int render_size = 64);

}  // namespace mgs
