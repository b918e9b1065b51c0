#include <gtest/gtest.h>

#include <random>

#include "rendermap/geometry.hpp"

using namespace rendermap;

namespace {

Pose6D random_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> t(-5.0, 5.0), a(-kPi, kPi), b(-1.5, 1.5);
  return {t(rng), t(rng), t(rng), a(rng), b(rng), a(rng)};
}

RigidTransform random_transform(std::mt19937_64& rng) { return pose_to_transform(random_pose(rng)); }

double max_abs(const Mat4& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(Pose, ZeroIsIdentity) {
  RigidTransform t = pose_to_transform({});
  EXPECT_EQ(t.matrix(), Mat4::Identity());
}

TEST(Pose, PureTranslation) {
  RigidTransform t = pose_to_transform({1, 2, 3, 0, 0, 0});
  EXPECT_EQ(t.rotation(), Mat3::Identity());
  EXPECT_EQ(t.translation(), Vec3(1, 2, 3));
}

TEST(Pose, QuarterTurnAboutZ) {
  Vec3 p = pose_to_transform({0, 0, 0, 0, 0, kPi / 2}) * Vec3(1, 0, 0);
  EXPECT_LT((p - Vec3(0, 1, 0)).norm(), 1e-12);
}

// Independent construction from Eigen's axis-angle type: yaw, then pitch, then roll.
TEST(Pose, MatchesZyxAxisAngleProduct) {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 200; ++k) {
    Pose6D p = random_pose(rng);
    Mat3 ref = (Eigen::AngleAxisd(p.theta_z, Vec3::UnitZ()) * Eigen::AngleAxisd(p.theta_y, Vec3::UnitY()) *
                Eigen::AngleAxisd(p.theta_x, Vec3::UnitX()))
                   .toRotationMatrix();
    EXPECT_LT((pose_to_transform(p).rotation() - ref).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Pose, OrthonormalOnRandomPoses) {
  std::mt19937_64 rng(1);
  for (int k = 0; k < 1000; ++k) {
    RigidTransform t = random_transform(rng);
    ASSERT_TRUE(t.is_valid(1e-12));
  }
}

TEST(Pose, TransformToPoseRoundTrip) {
  std::mt19937_64 rng(2);
  for (int k = 0; k < 500; ++k) {
    Pose6D p = random_pose(rng);
    Pose6D q = transform_to_pose(pose_to_transform(p));
    for (int i = 0; i < 6; ++i) EXPECT_NEAR(p[i], q[i], 1e-9) << "component " << i;
  }
}

TEST(Compose, IdentityIsNeutral) {
  std::mt19937_64 rng(4);
  RigidTransform t = random_transform(rng);
  EXPECT_EQ(compose(RigidTransform::identity(), t).matrix(), t.matrix());
  EXPECT_EQ(invert(RigidTransform::identity()).matrix(), Mat4::Identity());
}

TEST(Compose, HalfTurn) {
  RigidTransform q = pose_to_transform({0, 0, 0, 0, 0, kPi / 2});
  Vec3 p = compose(q, q) * Vec3(1, 0, 0);
  EXPECT_LT((p - Vec3(-1, 0, 0)).norm(), 1e-12);
}

TEST(Compose, InverseCancels) {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 200; ++k) {
    RigidTransform t = random_transform(rng);
    EXPECT_LT(max_abs(compose(t, invert(t)).matrix() - Mat4::Identity()), 1e-9);
    EXPECT_LT(max_abs(compose(invert(t), t).matrix() - Mat4::Identity()), 1e-9);
  }
}

TEST(Compose, MatchesHomogeneousProductAndIsAssociative) {
  std::mt19937_64 rng(6);
  for (int k = 0; k < 200; ++k) {
    RigidTransform a = random_transform(rng), b = random_transform(rng), c = random_transform(rng);
    EXPECT_LT(max_abs(compose(a, b).matrix() - a.matrix() * b.matrix()), 1e-12);
    EXPECT_LT(max_abs(compose(compose(a, b), c).matrix() - compose(a, compose(b, c)).matrix()), 1e-12);
  }
}

TEST(Transform, RotationAngle) {
  EXPECT_NEAR(pose_to_transform({0, 0, 0, 0.3, 0, 0}).rotation_angle(), 0.3, 1e-12);
  EXPECT_NEAR(pose_to_transform({0, 0, 0, 0, 0, -2.0}).rotation_angle(), 2.0, 1e-12);
}

TEST(Transform, OrthonormalizeRestoresRotation) {
  Mat3 r = rot_z(0.4) * rot_x(-0.2);
  Mat3 noisy = r + 1e-4 * Mat3::Ones();
  Mat3 o = orthonormalize(noisy);
  EXPECT_LT((o.transpose() * o - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(o.determinant(), 1.0, 1e-12);
  EXPECT_LT((o - r).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Camera, OpticalAxisHitsPrincipalPoint) {
  CameraModel cam;
  auto p = project(cam, Vec3(0, 0, 2));
  ASSERT_TRUE(p);
  EXPECT_EQ(p->u, cam.cx);
  EXPECT_EQ(p->v, cam.cy);
  EXPECT_EQ(p->depth, 2.0);
}

TEST(Camera, BehindCameraRejected) {
  CameraModel cam;
  EXPECT_FALSE(project(cam, Vec3(1, 1, 0)));
  EXPECT_FALSE(project(cam, Vec3(0, 0, -1)));
}

TEST(Camera, AxesFollowImageOrder) {
  CameraModel cam;
  auto right = project(cam, Vec3(0.1, 0, 1));
  auto down = project(cam, Vec3(0, 0.1, 1));
  EXPECT_GT(right->u, cam.cx);
  EXPECT_GT(down->v, cam.cy);
}

TEST(Camera, ProjectBackprojectRoundTrip) {
  CameraModel cam;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, cam.width), v(0, cam.height), z(0.2, 8.0);
  for (int k = 0; k < 1000; ++k) {
    Vec3 p = backproject(cam, u(rng), v(rng), z(rng));
    auto q = project(cam, p);
    ASSERT_TRUE(q);
    EXPECT_LT((backproject(cam, q->u, q->v, q->depth) - p).norm(), 1e-9);
  }
}

TEST(Camera, PixelRayHasUnitDepth) {
  CameraModel cam;
  Vec3 r = pixel_ray(cam, 10, 200);
  EXPECT_EQ(r.z(), 1.0);
  EXPECT_LT((backproject(cam, 10, 200, 3.0) - 3.0 * r).norm(), 1e-12);
}

TEST(Camera, DownsampledMapsPixelGrid) {
  CameraModel cam = CameraModel::tum_fr3();
  CameraModel half = cam.downsampled(2);
  EXPECT_EQ(half.width, 320);
  EXPECT_EQ(half.height, 240);
  // pixel (2i, 2j) of the full image sees the same ray as (i, j) of the half one
  EXPECT_LT((pixel_ray(cam, 100, 60) - pixel_ray(half, 50, 30)).norm(), 1e-12);
}

TEST(Camera, ValidateRejectsBadIntrinsics) {
  CameraModel cam;
  cam.fx = 0;
  EXPECT_THROW(cam.validate(), std::invalid_argument);
  cam = {};
  cam.width = 0;
  EXPECT_THROW(cam.validate(), std::invalid_argument);
  EXPECT_THROW(CameraModel{}.downsampled(0), std::invalid_argument);
}
