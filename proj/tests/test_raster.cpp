#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "rendermap/raster.hpp"
#include "support.hpp"

using namespace rendermap;
using namespace rendermap::testing;

namespace {

// Quad perpendicular to the optical axis covering a (2w x 2h) window at depth z.
void add_fronto_quad(LabeledMesh& m, double w, double h, double z, Interface l) {
  Vec3 a(-w, -h, z), b(w, -h, z), c(w, h, z), d(-w, h, z);
  m.add_triangle(a, b, c, l);
  m.add_triangle(a, c, d, l);
}

}  // namespace

TEST(Render, EmptySceneIsBackground) {
  CameraModel cam;
  LabeledRender r = render(std::span<const MeshInstance>{}, cam, RigidTransform::identity());
  ASSERT_EQ(r.size(), cam.pixel_count());
  for (std::size_t i = 0; i < r.size(); ++i) {
    EXPECT_TRUE(r.at(i).is_background());
    EXPECT_TRUE(std::isnan(r.depth(i)));
  }
}

TEST(Render, FrontoQuadFillsFrame) {
  CameraModel cam;
  LabeledMesh m;
  add_fronto_quad(m, 10, 10, 2.0, Interface::FreeOccupied);
  LabeledRender r = render(m, cam, RigidTransform::identity());
  LabeledRender o = raycast_reference(m, cam, RigidTransform::identity());
  for (std::size_t i = 0; i < r.size(); ++i) {
    ASSERT_EQ(r.label(i), Interface::FreeOccupied);
    ASSERT_NEAR(r.depth(i), 2.0, 1e-12);
    ASSERT_EQ(o.label(i), Interface::FreeOccupied);
  }
}

TEST(Render, NearerSurfaceWins) {
  CameraModel cam;
  LabeledMesh m;
  add_fronto_quad(m, 0.3, 0.3, 1.0, Interface::FreeOccupied);
  add_fronto_quad(m, 10, 10, 3.0, Interface::FreeUnknown);
  for (const auto& r : {render(m, cam, RigidTransform::identity()), raycast_reference(m, cam, RigidTransform::identity())}) {
    EXPECT_EQ(r.at(160, 120).label, Interface::FreeOccupied);
    EXPECT_NEAR(r.at(160, 120).depth, 1.0, 1e-12);
    EXPECT_EQ(r.at(5, 5).label, Interface::FreeUnknown);
    EXPECT_NEAR(r.at(5, 5).depth, 3.0, 1e-12);
  }
}

TEST(Render, CameraPoseMovesTheView) {
  CameraModel cam;
  LabeledMesh m;
  add_fronto_quad(m, 10, 10, 2.0, Interface::FreeOccupied);
  LabeledRender r = render(m, cam, pose_to_transform({0, 0, 0.5, 0, 0, 0}));
  EXPECT_NEAR(r.at(100, 100).depth, 1.5, 1e-12);
  // a camera turned around sees nothing
  LabeledRender back = render(m, cam, pose_to_transform({0, 0, 0, 0, kPi, 0}));
  for (std::size_t i = 0; i < back.size(); ++i) ASSERT_TRUE(back.at(i).is_background());
}

TEST(Render, PerspectiveCorrectDepthOnSlantedPlane) {
  CameraModel cam;
  LabeledMesh m;
  // plane z = 2 + 0.5 x
  auto z = [](double x) { return 2.0 + 0.5 * x; };
  Vec3 a(-2, -2, z(-2)), b(2, -2, z(2)), c(2, 2, z(2)), d(-2, 2, z(-2));
  m.add_triangle(a, b, c, Interface::FreeOccupied);
  m.add_triangle(a, c, d, Interface::FreeOccupied);
  LabeledRender r = render(m, cam, RigidTransform::identity());
  DepthImage want = plane_depth(cam, Vec3(-0.5, 0, 1).normalized(), 2.0 / Vec3(-0.5, 0, 1).norm());
  for (int y = 0; y < cam.height; y += 7)
    for (int x = 0; x < cam.width; x += 7) ASSERT_NEAR(r.at(x, y).depth, want.at(x, y), 1e-9);
}

TEST(Render, SubPixelTriangleCoversAtMostOnePixel) {
  CameraModel cam;
  LabeledMesh m;
  Vec3 c = backproject(cam, 100.3, 50.3, 2.0);
  double s = 0.2 * 2.0 / cam.fx;
  m.add_triangle(c, c + Vec3(s, 0, 0), c + Vec3(0, s, 0), Interface::FreeOccupied);
  for (const auto& r : {render(m, cam, RigidTransform::identity()), raycast_reference(m, cam, RigidTransform::identity())}) {
    int hit = 0;
    for (std::size_t i = 0; i < r.size(); ++i) hit += !r.at(i).is_background();
    EXPECT_LE(hit, 1);
  }
}

TEST(Render, SharedEdgeCoveredExactlyOnce) {
  CameraModel cam;
  cam.width = 40;
  cam.height = 30;
  cam.cx = 20;
  cam.cy = 15;
  LabeledMesh m;
  // Diagonal passes exactly through pixel centres (u == v offset).
  auto P = [&](double u, double v) { return backproject(cam, u, v, 2.0); };
  m.add_triangle(P(5, 5), P(25, 5), P(25, 25), Interface::FreeOccupied);
  m.add_triangle(P(5, 5), P(25, 25), P(5, 25), Interface::FreeUnknown);
  LabeledRender r = render(m, cam, RigidTransform::identity(), true);
  // Drawing the two triangles separately must not double-count the edge.
  LabeledMesh a, b;
  a.add_triangle(P(5, 5), P(25, 5), P(25, 25), Interface::FreeOccupied);
  b.add_triangle(P(5, 5), P(25, 25), P(5, 25), Interface::FreeUnknown);
  LabeledRender ra = render(a, cam, RigidTransform::identity());
  LabeledRender rb = render(b, cam, RigidTransform::identity());
  for (std::size_t i = 0; i < r.size(); ++i) {
    bool in_a = !ra.at(i).is_background(), in_b = !rb.at(i).is_background();
    ASSERT_FALSE(in_a && in_b) << "pixel " << i;
    if (in_a || in_b) EXPECT_EQ(r.triangle_ids()[i], in_a ? 0 : 1);
  }
  // Oracle: a diagonal pixel centre sits on both triangles; the lower index wins.
  LabeledRender o = raycast_reference(m, cam, RigidTransform::identity());
  EXPECT_EQ(o.at(10, 10).label, Interface::FreeOccupied);
}

TEST(Render, TriangleIdsIndexConcatenatedInstances) {
  CameraModel cam;
  LabeledMesh near_m, far_m;
  add_fronto_quad(near_m, 0.2, 0.2, 1.0, Interface::FreeOccupied);
  add_fronto_quad(far_m, 10, 10, 3.0, Interface::FreeUnknown);
  MeshInstance inst[2] = {{&far_m, RigidTransform::identity()}, {&near_m, RigidTransform::identity()}};
  LabeledRender r = render(std::span<const MeshInstance>(inst, 2), cam, RigidTransform::identity(), true);
  const auto& ids = r.triangle_ids();
  EXPECT_GE(ids[120 * 320 + 160], 2);
  EXPECT_LT(ids[5 * 320 + 5], 2);
}

TEST(Render, SubmissionOrderDoesNotMatter) {
  CameraModel cam;
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 3; ++trial) {
    LabeledMesh m = random_scene(rng, cam);
    LabeledMesh shuffled = m;
    std::vector<std::size_t> order(m.triangle_count());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t k = 0; k < order.size(); ++k) {
      shuffled.triangles[k] = m.triangles[order[k]];
      shuffled.labels[k] = m.labels[order[k]];
    }
    EXPECT_TRUE(render(m, cam, RigidTransform::identity()) == render(shuffled, cam, RigidTransform::identity()));
  }
}

TEST(Render, AgreesWithRaycastOracle) {
  CameraModel cam;
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 4; ++trial) {
    LabeledMesh m = random_scene(rng, cam, 120);
    LabeledRender r = render(m, cam, RigidTransform::identity());
    LabeledRender o = raycast_reference(m, cam, RigidTransform::identity());
    OracleAgreement s = compare_renders(r, o, edge_mask(m, cam, RigidTransform::identity()));
    EXPECT_GE(s.label_fraction(), 0.995);
    EXPECT_EQ(s.depth_fraction(), 1.0) << "max depth diff " << s.max_depth_diff;
  }
}

TEST(Render, ClipsAgainstNearPlane) {
  CameraModel cam;
  LabeledMesh m;
  // floor running from behind the camera to far ahead
  m.add_triangle({-3, 0.5, -2}, {3, 0.5, -2}, {3, 0.5, 8}, Interface::FreeOccupied);
  m.add_triangle({-3, 0.5, -2}, {3, 0.5, 8}, {-3, 0.5, 8}, Interface::FreeOccupied);
  LabeledRender r = render(m, cam, RigidTransform::identity());
  LabeledRender o = raycast_reference(m, cam, RigidTransform::identity());
  std::size_t agree = 0, n = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (!r.at(i).is_background()) {
      ASSERT_GE(r.depth(i), cam.z_near - 1e-12);
      ASSERT_LE(r.depth(i), cam.z_far + 1e-12);
    }
    ++n;
    agree += r.label(i) == o.label(i);
  }
  EXPECT_GE(double(agree) / n, 0.99);
  EXPECT_NEAR(r.at(160, 239).depth, o.at(160, 239).depth, 1e-9);
}

TEST(ZBuffer, ClosedForm) {
  EXPECT_EQ(zbuffer_to_depth(0.0, 0.5, 4.0), 0.5);
  EXPECT_NEAR(zbuffer_to_depth(1.0, 0.5, 4.0), 4.0, 1e-15);
  EXPECT_NEAR(zbuffer_to_depth(0.5, 0.5, 4.0), 0.5 / (1 - 0.5 * 0.875), 1e-15);
  EXPECT_NEAR(zbuffer_to_depth(0.5, 0.5, 4.0), 0.8888888888888888, 1e-15);
  for (double zb : {0.0, 0.3, 0.9}) EXPECT_NEAR(depth_to_zbuffer(zbuffer_to_depth(zb, 0.1, 10), 0.1, 10), zb, 1e-14);
}

TEST(ZBuffer, DomainErrors) {
  EXPECT_THROW(zbuffer_to_depth(-0.1, 0.5, 4), std::domain_error);
  EXPECT_THROW(zbuffer_to_depth(1.1, 0.5, 4), std::domain_error);
  EXPECT_THROW(zbuffer_to_depth(0.5, 4, 0.5), std::domain_error);
  EXPECT_THROW(zbuffer_to_depth(0.5, 0, 4), std::domain_error);
}

TEST(Render, FalseColourBackgroundIsWhite) {
  LabeledRender r(4, 3);
  r.set(1, 1, {1.0, Interface::FreeUnknown});
  Rgb8Image img = false_color(r);
  EXPECT_EQ(img.at(0, 0), (std::array<std::uint8_t, 3>{255, 255, 255}));
  EXPECT_NE(img.at(1, 1), img.at(0, 0));
}
