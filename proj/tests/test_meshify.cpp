#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "rendermap/meshify.hpp"
#include "rendermap/raster.hpp"
#include "support.hpp"

using namespace rendermap;
using namespace rendermap::testing;

namespace {

std::size_t count_label(const LabeledMesh& m, Interface l) {
  return static_cast<std::size_t>(std::count(m.labels.begin(), m.labels.end(), l));
}

}  // namespace

TEST(Meshify, AllInvalidGoesToMaxRange) {
  CameraModel cam;
  DepthImage d(cam.width, cam.height);
  LabeledMesh m = meshify(d, cam, {4.0, 0.1});
  EXPECT_EQ(m.triangle_count(), 2u * 319 * 239);
  EXPECT_EQ(count_label(m, Interface::FreeUnknown), m.triangle_count());
  for (const Vec3& v : m.vertices) EXPECT_EQ(v.z(), 4.0);
}

TEST(Meshify, FrontoParallelPlaneIsAllOccupied) {
  CameraModel cam;
  LabeledMesh m = meshify(constant_depth(cam, 1.0), cam);
  m.validate();
  EXPECT_EQ(count_label(m, Interface::FreeOccupied), m.triangle_count());
  for (const Vec3& v : m.vertices) EXPECT_EQ(v.z(), 1.0);
}

TEST(Meshify, SeamBetweenHalfPlanesIsUnknown) {
  CameraModel cam;
  DepthImage d(cam.width, cam.height);
  const int seam = cam.width / 2;
  for (int r = 0; r < cam.height; ++r)
    for (int c = 0; c < cam.width; ++c) d.at(c, r) = c < seam ? 1.0 : 2.0;
  LabeledMesh m = meshify(d, cam);
  const int qw = cam.width - 1;
  for (int r = 0; r + 1 < cam.height; ++r)
    for (int c = 0; c < qw; ++c) {
      std::size_t q = static_cast<std::size_t>(r) * qw + c;
      Interface want = c == seam - 1 ? Interface::FreeUnknown : Interface::FreeOccupied;
      ASSERT_EQ(m.labels[2 * q], want) << "quad " << c << "," << r;
      ASSERT_EQ(m.labels[2 * q + 1], want);
    }
  // discontinuity quads keep their measured corners
  std::size_t q = static_cast<std::size_t>(10) * qw + (seam - 1);
  EXPECT_EQ(m.vertices[m.triangles[2 * q][0]].z(), 1.0);
  EXPECT_EQ(m.vertices[m.triangles[2 * q][1]].z(), 2.0);
}

TEST(Meshify, SplitsAlongTopLeftBottomRightDiagonal) {
  CameraModel cam;
  cam.width = 2;
  cam.height = 2;
  DepthImage d(2, 2);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) d.at(c, r) = 1.0;
  LabeledMesh m = meshify(d, cam);
  ASSERT_EQ(m.triangle_count(), 2u);
  // vertex index = row * width + col
  EXPECT_EQ(m.triangles[0], (std::array<std::uint32_t, 3>{0, 1, 3}));
  EXPECT_EQ(m.triangles[1], (std::array<std::uint32_t, 3>{0, 3, 2}));
}

TEST(Meshify, MixedQuadIsUnknownWithInvalidCornerAtMaxRange) {
  CameraModel cam;
  cam.width = 3;
  cam.height = 2;
  DepthImage d(3, 2);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) d.at(c, r) = 1.0;
  d.at(0, 0) = DepthImage::kInvalid;
  d.at(2, 1) = 9.0;  // beyond range
  LabeledMesh m = meshify(d, cam, {4.0, 0.1});
  EXPECT_EQ(m.labels[0], Interface::FreeUnknown);
  EXPECT_EQ(m.labels[2], Interface::FreeUnknown);
  EXPECT_EQ(m.vertices[0].z(), 4.0);
  EXPECT_EQ(m.vertices[5].z(), 4.0);
  EXPECT_EQ(m.vertices[1].z(), 1.0);
}

TEST(Meshify, RejectsTinyOrMismatchedImages) {
  CameraModel cam;
  cam.width = 1;
  cam.height = 5;
  EXPECT_THROW(meshify(DepthImage(1, 5), cam), std::invalid_argument);
  EXPECT_THROW(meshify(DepthImage(10, 10), CameraModel{}), std::invalid_argument);
}

TEST(Meshify, LabelsPartitionTriangles) {
  SceneSpec spec = room_scene({{0, 0, 0, 0, 0, 0}});
  LabeledMesh m = meshify(synth_render(spec, 0), spec.camera);
  m.validate();
  EXPECT_EQ(count_label(m, Interface::FreeOccupied) + count_label(m, Interface::FreeUnknown), m.triangle_count());
  EXPECT_GT(count_label(m, Interface::FreeUnknown), 0u);
  EXPECT_GT(count_label(m, Interface::FreeOccupied), m.triangle_count() / 2);
}

TEST(Meshify, ShrinkingThresholdNeverRecoversOccupied) {
  CameraModel cam;
  cam.width = 60;
  cam.height = 40;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> jitter(-0.08, 0.08);
  DepthImage d(cam.width, cam.height);
  for (int r = 0; r < cam.height; ++r)
    for (int c = 0; c < cam.width; ++c) d.at(c, r) = 2.0 + jitter(rng);
  LabeledMesh prev = meshify(d, cam, {4.0, 0.3});
  for (double disc : {0.2, 0.1, 0.05, 0.02}) {
    LabeledMesh cur = meshify(d, cam, {4.0, disc});
    for (std::size_t k = 0; k < cur.labels.size(); ++k)
      if (prev.labels[k] == Interface::FreeUnknown) ASSERT_EQ(cur.labels[k], Interface::FreeUnknown);
    EXPECT_GE(count_label(cur, Interface::FreeUnknown), count_label(prev, Interface::FreeUnknown));
    prev = cur;
  }
}

TEST(Meshify, RenderFromSourcePoseReproducesDepth) {
  SceneSpec spec = room_scene({{0.1, -0.1, 0.2, deg2rad(-10), deg2rad(15), deg2rad(3)}});
  DepthImage d = synth_render(spec, 0);
  LabeledMesh m = meshify(d, spec.camera);
  LabeledRender r = render(m, spec.camera, RigidTransform::identity());
  std::size_t fo = 0, good = 0;
  for (int y = 0; y < spec.camera.height; ++y)
    for (int x = 0; x < spec.camera.width; ++x) {
      RenderedPixel p = r.at(x, y);
      if (p.label != Interface::FreeOccupied || !d.valid(x, y)) continue;
      ++fo;
      if (std::abs(p.depth - d.at(x, y)) <= 0.005) ++good;
    }
  ASSERT_GT(fo, 50000u);
  EXPECT_GE(double(good) / fo, 0.99);
}

TEST(Meshify, PlyHasOneFacePerTriangle) {
  CameraModel cam;
  cam.width = 3;
  cam.height = 3;
  DepthImage d(3, 3);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) d.at(c, r) = 1.0;
  auto path = std::filesystem::temp_directory_path() / "rendermap_test_mesh.ply";
  write_ply(path.string(), meshify(d, cam));
  std::ifstream in(path);
  std::string text((std::istreambuf_iterator<char>(in)), {});
  EXPECT_NE(text.find("element face 8"), std::string::npos);
}
