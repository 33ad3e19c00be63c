// Copyright Contributors to the mgs Project
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "mgs/assets_io.hpp"
#include "mgs/rng.hpp"
#include "mgs/synth.hpp"

using namespace mgs;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("mgs_test_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Scene small_scene() {
  Scene s;
  Rng rng(3);
  for (int i = 0; i < 3; ++i) {
    MaterialGaussian2D g;
    g.position = {rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)};
    g.scale = {rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3)};
    Vec4 q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    g.rotation = q.normalized();
    g.opacity = rng.uniform(0.1, 0.9);
    g.albedo = {rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)};
    g.roughness = rng.uniform(0.0, 1.0);
    g.metallic = rng.uniform(0.0, 1.0);
    s.gaussians.push_back(g);
  }
  return s;
}

}  // namespace

TEST_CASE("scene file round trip") {
  TempDir dir;
  const Scene s = small_scene();
  write_scene(dir.file("scene.json"), s);
  const Scene r = read_scene(dir.file("scene.json"));
  REQUIRE(r.gaussians.size() == s.gaussians.size());
  for (std::size_t i = 0; i < s.gaussians.size(); ++i) {
    const auto &a = s.gaussians[i], &b = r.gaussians[i];
    CHECK((a.position - b.position).norm() <= 1e-7 * (1.0 + a.position.norm()));
    CHECK(a.opacity == doctest::Approx(b.opacity).epsilon(1e-7));
    CHECK(a.roughness == doctest::Approx(b.roughness).epsilon(1e-7));
    CHECK((a.albedo - b.albedo).norm() <= 1e-7);
  }
  CHECK(r.bbox.min.x == s.bbox.min.x);
}

TEST_CASE("scene writer is byte deterministic") {
  TempDir dir;
  const Scene s = small_scene();
  write_scene(dir.file("a.json"), s);
  write_scene(dir.file("b.json"), s);
  CHECK(slurp(dir.file("a.json")) == slurp(dir.file("b.json")));
}

TEST_CASE("scene reader rejects invariant violations with a field path") {
  TempDir dir;
  Scene s = small_scene();
  s.gaussians[0].opacity = 1.5;
  write_scene(dir.file("bad.json"), s);
  try {
    read_scene(dir.file("bad.json"));
    FAIL("expected rejection");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("gaussians[0].opacity") != std::string::npos);
  }
}

TEST_CASE("scene reader rejects missing version and malformed files") {
  TempDir dir;
  {
    std::ofstream out(dir.file("noversion.json"));
    out << "{\"gaussians\": []}";
  }
  CHECK_THROWS(read_scene(dir.file("noversion.json")));
  {
    std::ofstream out(dir.file("garbage.json"));
    out << "this is not json";
  }
  CHECK_THROWS(read_scene(dir.file("garbage.json")));
  {
    std::ofstream out(dir.file("badversion.json"));
    out << "{\"version\": 99, \"gaussians\": []}";
  }
  CHECK_THROWS(read_scene(dir.file("badversion.json")));
}

TEST_CASE("float map round trip is bitwise") {
  TempDir dir;
  Rng rng(5);
  for (const int channels : {1, 3}) {
    Image img(7, 5, channels);
    for (auto& v : img.data) v = static_cast<float>(rng.normal());  // float-representable
    const std::string path = dir.file("img.pfm");
    write_floatmap(path, img);
    const Image back = read_floatmap(path);
    REQUIRE(back.same_shape(img));
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(back.data[i] == img.data[i]);
    // writing the reread image reproduces the file byte for byte
    write_floatmap(dir.file("img2.pfm"), back);
    CHECK(slurp(dir.file("img.pfm")) == slurp(dir.file("img2.pfm")));
  }
}

TEST_CASE("float map header format is exact") {
  TempDir dir;
  Image img(640, 480, 3);
  write_floatmap(dir.file("h.pfm"), img);
  const std::string bytes = slurp(dir.file("h.pfm"));
  const std::string expected = "PF\n640 480\n-1.0\n";
  REQUIRE(bytes.size() > expected.size());
  CHECK(bytes.substr(0, expected.size()) == expected);
  CHECK(bytes.size() == expected.size() + 640ull * 480 * 3 * 4);
}

TEST_CASE("float map reader rejects bad files") {
  TempDir dir;
  {
    std::ofstream out(dir.file("bad_magic.pfm"), std::ios::binary);
    out << "XX\n2 2\n-1.0\n";
  }
  CHECK_THROWS(read_floatmap(dir.file("bad_magic.pfm")));
  {
    std::ofstream out(dir.file("trunc.pfm"), std::ios::binary);
    out << "Pf\n4 4\n-1.0\nzz";
  }
  CHECK_THROWS(read_floatmap(dir.file("trunc.pfm")));
}

TEST_CASE("camera file round trip and validation") {
  TempDir dir;
  SynthConfig scfg;
  const auto cams = input_ring(scfg);
  REQUIRE(cams.size() == 4);
  write_cameras(dir.file("cams.json"), cams);
  const auto back = read_cameras(dir.file("cams.json"));
  REQUIRE(back.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(back[i].width == cams[i].width);
    for (int k = 0; k < 16; ++k)
      CHECK(back[i].world_to_camera[k] == doctest::Approx(cams[i].world_to_camera[k]));
    // each ring camera looks at the origin from distance 1.5
    CHECK(back[i].position().norm() == doctest::Approx(1.5));
  }

  SUBCASE("sheared rotation is rejected") {
    auto bad = cams;
    bad[0].world_to_camera[1] += 0.01;
    write_cameras(dir.file("bad.json"), bad);
    CHECK_THROWS(read_cameras(dir.file("bad.json")));
  }
  SUBCASE("empty camera list is rejected") {
    write_cameras(dir.file("empty.json"), {});
    CHECK_THROWS(read_cameras(dir.file("empty.json")));
  }
}

TEST_CASE("png writer emits a structurally sound file") {
  TempDir dir;
  std::vector<uint8_t> px(8 * 4 * 3, 128);
  write_png(dir.file("img.png"), 8, 4, 3, px);
  const std::string bytes = slurp(dir.file("img.png"));
  REQUIRE(bytes.size() > 8);
  CHECK(static_cast<uint8_t>(bytes[0]) == 0x89);
  CHECK(bytes.substr(1, 3) == "PNG");
  CHECK(bytes.find("IHDR") != std::string::npos);
  CHECK(bytes.find("IDAT") != std::string::npos);
  CHECK(bytes.find("IEND") != std::string::npos);
}
