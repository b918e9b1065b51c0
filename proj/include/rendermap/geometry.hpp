#pragma once

// Rigid poses, the pinhole camera and projection helpers shared by every
// other part of the library.
//
// Conventions:
//   * Euler angles compose intrinsically as Z-Y-X: R = Rz(theta_z) * Ry(theta_y) * Rx(theta_x).
//   * Camera frame: +z forward, +x right, +y down. Pixel (col, row) has its
//     centre at continuous image coordinates (u, v) = (col, row).
//   * Depth is camera-frame z (distance to the image plane), not ray length.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

namespace rendermap {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

inline constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

struct Pose6D {
  double x = 0.0, y = 0.0, z = 0.0;
  double theta_x = 0.0, theta_y = 0.0, theta_z = 0.0;

  double& operator[](int i) { return (&x)[i]; }
  double operator[](int i) const { return (&x)[i]; }

  bool finite() const {
    for (int i = 0; i < 6; ++i)
      if (!std::isfinite((*this)[i])) return false;
    return true;
  }

  friend bool operator==(const Pose6D&, const Pose6D&) = default;
};

class RigidTransform {
 public:
  RigidTransform() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
  RigidTransform(const Mat3& rotation, const Vec3& translation)
      : rotation_(rotation), translation_(translation) {}

  static RigidTransform identity() { return {}; }
  static RigidTransform from_matrix(const Mat4& m) {
    return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
  }

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }
  Vec3 operator*(const Vec3& p) const { return apply(p); }

  RigidTransform operator*(const RigidTransform& b) const {
    return {rotation_ * b.rotation_, rotation_ * b.translation_ + translation_};
  }

  RigidTransform inverse() const {
    Mat3 rt = rotation_.transpose();
    return {rt, -(rt * translation_)};
  }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation_;
    m.topRightCorner<3, 1>() = translation_;
    return m;
  }

  /// Rotation angle in radians, in [0, pi].
  double rotation_angle() const {
    double c = std::clamp((rotation_.trace() - 1.0) * 0.5, -1.0, 1.0);
    return std::acos(c);
  }

  bool is_valid(double tol = 1e-9) const {
    return (rotation_.transpose() * rotation_ - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(rotation_.determinant() - 1.0) <= tol && translation_.allFinite();
  }

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) { return a * b; }
inline RigidTransform invert(const RigidTransform& a) { return a.inverse(); }

inline Mat3 rot_x(double a) {
  Mat3 r;
  double c = std::cos(a), s = std::sin(a);
  r << 1, 0, 0, 0, c, -s, 0, s, c;
  return r;
}
inline Mat3 rot_y(double a) {
  Mat3 r;
  double c = std::cos(a), s = std::sin(a);
  r << c, 0, s, 0, 1, 0, -s, 0, c;
  return r;
}
inline Mat3 rot_z(double a) {
  Mat3 r;
  double c = std::cos(a), s = std::sin(a);
  r << c, -s, 0, s, c, 0, 0, 0, 1;
  return r;
}

inline RigidTransform pose_to_transform(const Pose6D& p) {
  return {rot_z(p.theta_z) * rot_y(p.theta_y) * rot_x(p.theta_x), Vec3(p.x, p.y, p.z)};
}

/// Inverse of pose_to_transform. Away from gimbal lock (|theta_y| = pi/2) the
/// round trip is exact up to rounding.
inline Pose6D transform_to_pose(const RigidTransform& t) {
  const Mat3& r = t.rotation();
  Pose6D p;
  p.x = t.translation().x();
  p.y = t.translation().y();
  p.z = t.translation().z();
  p.theta_y = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
  p.theta_x = std::atan2(r(2, 1), r(2, 2));
  p.theta_z = std::atan2(r(1, 0), r(0, 0));
  return p;
}

/// Projects `r` onto SO(3) (nearest rotation in Frobenius norm).
inline Mat3 orthonormalize(const Mat3& r) {
  Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  Mat3 v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  d(2, 2) = (u * v.transpose()).determinant() < 0 ? -1.0 : 1.0;
  return u * d * v.transpose();
}

struct CameraModel {
  int width = 320;
  int height = 240;
  double fx = 267.7, fy = 269.6;
  double cx = 160.05, cy = 123.8;
  double z_near = 0.1;
  double z_far = 10.0;

  void validate() const {
    if (width <= 0 || height <= 0) throw std::invalid_argument("camera: width and height must be positive");
    if (!(fx > 0) || !(fy > 0)) throw std::invalid_argument("camera: focal lengths must be positive");
    if (!(z_near > 0) || !(z_near < z_far)) throw std::invalid_argument("camera: need 0 < z_near < z_far");
  }

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }

  /// Intrinsics for an image subsampled by `factor` (pixel i maps to i*factor).
  CameraModel downsampled(int factor) const {
    if (factor < 1) throw std::invalid_argument("camera: downsample factor must be >= 1");
    CameraModel c = *this;
    c.width = (width + factor - 1) / factor;
    c.height = (height + factor - 1) / factor;
    c.fx = fx / factor;
    c.fy = fy / factor;
    c.cx = cx / factor;
    c.cy = cy / factor;
    return c;
  }

  /// Intrinsics rescaled to an arbitrary resolution.
  CameraModel resized(int new_width, int new_height) const {
    CameraModel c = *this;
    double sx = static_cast<double>(new_width) / width;
    double sy = static_cast<double>(new_height) / height;
    c.width = new_width;
    c.height = new_height;
    c.fx = fx * sx;
    c.fy = fy * sy;
    c.cx = cx * sx;
    c.cy = cy * sy;
    return c;
  }

  /// TUM freiburg3 calibration at 640x480.
  static CameraModel tum_fr3() {
    CameraModel c;
    c.width = 640;
    c.height = 480;
    c.fx = 535.4;
    c.fy = 539.2;
    c.cx = 320.1;
    c.cy = 247.6;
    return c;
  }
};

struct Projection {
  double u = 0.0, v = 0.0;
  double depth = 0.0;
};

/// Pinhole projection; empty when the point is on or behind the camera plane.
inline std::optional<Projection> project(const CameraModel& cam, const Vec3& p) {
  if (!(p.z() > 0.0)) return std::nullopt;
  return Projection{cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy, p.z()};
}

inline Vec3 backproject(const CameraModel& cam, double u, double v, double depth) {
  return {(u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth};
}

/// Ray direction through (u, v) scaled so its z component is 1.
inline Vec3 pixel_ray(const CameraModel& cam, double u, double v) {
  return {(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0};
}

}  // namespace rendermap
