// Copyright Contributors to the mgs Project
// SPDX-License-Identifier: Apache-2.0
#include "mgs/assets_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "float map IO assumes a little-endian host");

namespace mgs {

using json = nlohmann::ordered_json;

namespace {

json read_json_file(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(std::string(what) + ": cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string(what) + ": malformed document in " + path +
                             ": " + e.what());
  }
  return j;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

json vec3_to_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

Vec3 json_to_vec3(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3)
    throw std::runtime_error("scene file: " + path + " must be a 3-array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

void write_scene(const std::string& path, const Scene& scene) {
  json j;
  j["version"] = 1;
  j["bbox"]["min"] = vec3_to_json(scene.bbox.min);
  j["bbox"]["max"] = vec3_to_json(scene.bbox.max);
  json arr = json::array();
  for (const auto& g : scene.gaussians) {
    json e;
    e["position"] = vec3_to_json(g.position);
    e["scale"] = json::array({g.scale.x, g.scale.y});
    e["rotation"] = json::array({g.rotation.w, g.rotation.x, g.rotation.y, g.rotation.z});
    e["opacity"] = g.opacity;
    e["albedo"] = vec3_to_json(g.albedo);
    e["roughness"] = g.roughness;
    e["metallic"] = g.metallic;
    arr.push_back(std::move(e));
  }
  j["gaussians"] = std::move(arr);
  write_text_file(path, j.dump(2) + "\n");
}

Scene read_scene(const std::string& path) {
  const json j = read_json_file(path, "read_scene");
  if (!j.contains("version")) throw std::runtime_error("scene file: missing version");
  if (j["version"].get<int>() != 1)
    throw std::runtime_error("scene file: unknown version " + j["version"].dump());
  Scene scene;
  if (j.contains("bbox")) {
    scene.bbox.min = json_to_vec3(j["bbox"]["min"], "bbox.min");
    scene.bbox.max = json_to_vec3(j["bbox"]["max"], "bbox.max");
  }
  if (!j.contains("gaussians") || !j["gaussians"].is_array())
    throw std::runtime_error("scene file: missing gaussians array");
  std::size_t idx = 0;
  for (const auto& e : j["gaussians"]) {
    const std::string base = "gaussians[" + std::to_string(idx) + "]";
    auto need = [&](const char* key) -> const json& {
      if (!e.contains(key)) throw std::runtime_error("scene file: missing " + base + "." + key);
      return e[key];
    };
    MaterialGaussian2D g;
    g.position = json_to_vec3(need("position"), base + ".position");
    const auto& s = need("scale");
    if (!s.is_array() || s.size() != 2)
      throw std::runtime_error("scene file: " + base + ".scale must be a 2-array");
    g.scale = {s[0].get<double>(), s[1].get<double>()};
    const auto& q = need("rotation");
    if (!q.is_array() || q.size() != 4)
      throw std::runtime_error("scene file: " + base + ".rotation must be a 4-array");
    g.rotation = {q[0].get<double>(), q[1].get<double>(), q[2].get<double>(),
                  q[3].get<double>()};
    g.opacity = need("opacity").get<double>();
    g.albedo = json_to_vec3(need("albedo"), base + ".albedo");
    g.roughness = need("roughness").get<double>();
    g.metallic = need("metallic").get<double>();
    scene.gaussians.push_back(g);
    ++idx;
  }
  const auto violations = validate_scene(scene);
  if (!violations.empty()) {
    const auto& v = violations.front();
    throw std::runtime_error("scene file: invariant violation at gaussians[" +
                             std::to_string(v.gaussian_index) + "]." + v.field + ": " +
                             v.message);
  }
  return scene;
}

void write_floatmap(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("write_floatmap: image must have 1 or 3 channels");
  for (const double v : img.data)
    if (!std::isfinite(v)) throw std::invalid_argument("write_floatmap: non-finite pixel");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << (img.channels == 3 ? "PF\n" : "Pf\n");
  out << img.width << " " << img.height << "\n-1.0\n";
  std::vector<float> row(static_cast<std::size_t>(img.width) * img.channels);
  for (int y = img.height - 1; y >= 0; --y) {  // bottom-to-top
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        row[static_cast<std::size_t>(x) * img.channels + c] =
            static_cast<float>(img.at(x, y, c));
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

Image read_floatmap(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_floatmap: cannot open " + path);
  std::string magic;
  std::getline(in, magic);
  int channels = 0;
  if (magic == "PF") channels = 3;
  else if (magic == "Pf") channels = 1;
  else throw std::runtime_error("read_floatmap: bad magic in " + path);
  int w = 0, h = 0;
  std::string dims;
  std::getline(in, dims);
  {
    std::istringstream ds(dims);
    if (!(ds >> w >> h) || w <= 0 || h <= 0)
      throw std::runtime_error("read_floatmap: bad dimensions in " + path);
  }
  std::string scale_line;
  std::getline(in, scale_line);
  const double scale = std::strtod(scale_line.c_str(), nullptr);
  if (!(scale < 0.0))
    throw std::runtime_error("read_floatmap: big-endian float maps are not supported");
  Image img(w, h, channels);
  std::vector<float> row(static_cast<std::size_t>(w) * channels);
  for (int y = h - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!in) throw std::runtime_error("read_floatmap: truncated payload in " + path);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(x, y, c) = row[static_cast<std::size_t>(x) * channels + c];
  }
  return img;
}

void write_cameras(const std::string& path, const std::vector<Camera>& cams) {
  json j;
  json arr = json::array();
  for (const auto& c : cams) {
    json e;
    e["width"] = c.width;
    e["height"] = c.height;
    e["fx"] = c.fx;
    e["fy"] = c.fy;
    e["cx"] = c.cx;
    e["cy"] = c.cy;
    json m = json::array();
    for (int i = 0; i < 16; ++i) m.push_back(c.world_to_camera[i]);
    e["world_to_camera"] = std::move(m);
    arr.push_back(std::move(e));
  }
  j["cameras"] = std::move(arr);
  write_text_file(path, j.dump(2) + "\n");
}

std::vector<Camera> read_cameras(const std::string& path) {
  const json j = read_json_file(path, "read_cameras");
  if (!j.contains("cameras") || !j["cameras"].is_array())
    throw std::runtime_error("camera file: missing cameras array");
  std::vector<Camera> out;
  std::size_t idx = 0;
  for (const auto& e : j["cameras"]) {
    const std::string base = "cameras[" + std::to_string(idx) + "]";
    Camera c;
    c.width = e.at("width").get<int>();
    c.height = e.at("height").get<int>();
    c.fx = e.at("fx").get<double>();
    c.fy = e.at("fy").get<double>();
    c.cx = e.at("cx").get<double>();
    c.cy = e.at("cy").get<double>();
    const auto& m = e.at("world_to_camera");
    if (!m.is_array() || m.size() != 16)
      throw std::runtime_error("camera file: " + base + ".world_to_camera must have 16 entries");
    for (int i = 0; i < 16; ++i) c.world_to_camera[i] = m[i].get<double>();
    if (!(c.fx > 0.0) || !(c.fy > 0.0) || c.cx < 0.0 || c.cx >= c.width ||
        c.cy < 0.0 || c.cy >= c.height || c.width <= 0 || c.height <= 0)
      throw std::runtime_error("camera file: " + base + " has invalid intrinsics");
    if (!camera_rotation_valid(c))
      throw std::runtime_error("camera file: " + base +
                               " rotation is not orthonormal with determinant +1");
    out.push_back(c);
    ++idx;
  }
  if (out.empty()) throw std::runtime_error("camera file: empty camera list");
  return out;
}

namespace {

uint32_t crc32(const uint8_t* data, std::size_t n, uint32_t crc = 0xFFFFFFFFu) {
  static uint32_t table[256];
  static bool init = false;
  if (!init) {
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    init = true;
  }
  for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  return crc;
}

void push_be32(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(static_cast<uint8_t>(x >> 24));
  v.push_back(static_cast<uint8_t>(x >> 16));
  v.push_back(static_cast<uint8_t>(x >> 8));
  v.push_back(static_cast<uint8_t>(x));
}

void push_chunk(std::vector<uint8_t>& out, const char type[4],
                const std::vector<uint8_t>& payload) {
  push_be32(out, static_cast<uint32_t>(payload.size()));
  std::vector<uint8_t> body(type, type + 4);
  body.insert(body.end(), payload.begin(), payload.end());
  out.insert(out.end(), body.begin(), body.end());
  push_be32(out, crc32(body.data(), body.size()) ^ 0xFFFFFFFFu);
}

}  // namespace

void write_png(const std::string& path, int width, int height, int channels,
               const std::vector<uint8_t>& data) {
  if (channels != 1 && channels != 3)
    throw std::invalid_argument("write_png: channels must be 1 or 3");
  if (data.size() != static_cast<std::size_t>(width) * height * channels)
    throw std::invalid_argument("write_png: payload size mismatch");

  // raw scanlines, filter byte 0
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(height) * (1 + static_cast<std::size_t>(width) * channels));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);
    const std::size_t off = static_cast<std::size_t>(y) * width * channels;
    raw.insert(raw.end(), data.begin() + off, data.begin() + off + static_cast<std::size_t>(width) * channels);
  }

  // zlib stream with stored deflate blocks
  std::vector<uint8_t> z;
  z.push_back(0x78);
  z.push_back(0x01);
  std::size_t pos = 0;
  while (pos < raw.size() || raw.empty()) {
    const std::size_t len = std::min<std::size_t>(65535, raw.size() - pos);
    const bool final = pos + len == raw.size();
    z.push_back(final ? 1 : 0);
    z.push_back(static_cast<uint8_t>(len & 0xFF));
    z.push_back(static_cast<uint8_t>(len >> 8));
    z.push_back(static_cast<uint8_t>(~len & 0xFF));
    z.push_back(static_cast<uint8_t>((~len >> 8) & 0xFF));
    z.insert(z.end(), raw.begin() + pos, raw.begin() + pos + len);
    pos += len;
    if (raw.empty()) break;
  }
  uint32_t a = 1, b = 0;
  for (const uint8_t byte : raw) {
    a = (a + byte) % 65521;
    b = (b + a) % 65521;
  }
  push_be32(z, (b << 16) | a);

  std::vector<uint8_t> out{0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  std::vector<uint8_t> ihdr;
  push_be32(ihdr, static_cast<uint32_t>(width));
  push_be32(ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(8);                          // bit depth
  ihdr.push_back(channels == 3 ? 2 : 0);      // color type
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  push_chunk(out, "IHDR", ihdr);
  push_chunk(out, "IDAT", z);
  push_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace mgs
