// Copyright Contributors to the mgs Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mgs/image.hpp"
#include "mgs/types.hpp"

namespace mgs {

// Scene files: versioned JSON documents. Readers validate every invariant
// and reject violations with a field path like "gaussians[0].opacity".
void write_scene(const std::string& path, const Scene& scene);
Scene read_scene(const std::string& path);

// Portable float maps ("PF" 3-channel / "Pf" 1-channel, scale -1.0,
// little-endian float32, rows bottom-to-top). Byte-exact round trips.
void write_floatmap(const std::string& path, const Image& img);
Image read_floatmap(const std::string& path);

void write_cameras(const std::string& path, const std::vector<Camera>& cams);
std::vector<Camera> read_cameras(const std::string& path);

// Minimal 8-bit PNG writer (grayscale or RGB), uncompressed deflate stream.
void write_png(const std::string& path, int width, int height, int channels,
               const std::vector<uint8_t>& data);

}  // namespace mgs
