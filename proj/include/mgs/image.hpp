// Copyright Contributors to the mgs Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace mgs {

// Dense interleaved image, double precision. Pixel (x, y) channel c lives at
// ((y * width + x) * channels + c). y grows downward.
struct Image {
  int width{0};
  int height{0};
  int channels{0};
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, 0.0) {}

  bool empty() const { return data.empty(); }
  std::size_t size() const { return data.size(); }

  double& at(int x, int y, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(what) + ": image shape mismatch");
}

}  // namespace mgs
