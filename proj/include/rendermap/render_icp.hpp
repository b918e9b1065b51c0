#pragma once

// Projective point-to-plane ICP on depth images, with normals estimated from
// the depth image itself, plus a classic point-to-point ICP baseline.

#include "rendermap/depth_io.hpp"
#include "rendermap/geometry.hpp"
#include "rendermap/meshify.hpp"
#include "rendermap/optimize.hpp"
#include "rendermap/png_io.hpp"
#include "rendermap/raster.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace rendermap {

class NormalImage {
 public:
  NormalImage() = default;
  NormalImage(int width, int height)
      : width_(width),
        height_(height),
        data_(static_cast<std::size_t>(width) * height, Vec3::Constant(std::numeric_limits<double>::quiet_NaN())) {}

  int width() const { return width_; }
  int height() const { return height_; }
  const Vec3& at(int col, int row) const { return data_[static_cast<std::size_t>(row) * width_ + col]; }
  Vec3& at(int col, int row) { return data_[static_cast<std::size_t>(row) * width_ + col]; }
  bool valid(int col, int row) const { return at(col, row).allFinite(); }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<Vec3> data_;
};

/// Surface normals from a depth image: Gaussian-smooth the depth (ignoring
/// invalid pixels), take central differences of the back-projected surface
/// across and down the image, and cross the vertical tangent with the
/// horizontal one. Normals face the camera. Border pixels, invalid pixels and
/// pixels whose stencil touches an invalid pixel or spans a depth jump larger
/// than `max_step` get no normal; the smoothing does not cross such jumps.
inline NormalImage estimate_normals(const DepthImage& depth, const CameraModel& cam, double sigma = 2.0,
                                    double max_step = 0.1) {
  if (depth.width() != cam.width || depth.height() != cam.height)
    throw std::invalid_argument("estimate_normals: depth image does not match camera");
  const DepthImage z = gaussian_blur(depth, sigma, max_step);
  const int w = depth.width(), h = depth.height();
  NormalImage out(w, h);
  auto point = [&](int c, int r) { return backproject(cam, c, r, z.at(c, r)); };
  for (int r = 1; r + 1 < h; ++r)
    for (int c = 1; c + 1 < w; ++c) {
      if (!z.valid(c, r) || !z.valid(c - 1, r) || !z.valid(c + 1, r) || !z.valid(c, r - 1) || !z.valid(c, r + 1))
        continue;
      const double z0 = depth.at(c, r);
      if (std::abs(depth.at(c - 1, r) - z0) > max_step || std::abs(depth.at(c + 1, r) - z0) > max_step ||
          std::abs(depth.at(c, r - 1) - z0) > max_step || std::abs(depth.at(c, r + 1) - z0) > max_step)
        continue;
      Vec3 across = point(c + 1, r) - point(c - 1, r);
      Vec3 down = point(c, r + 1) - point(c, r - 1);
      Vec3 n = down.cross(across);
      double len = n.norm();
      if (!(len > 0.0)) continue;
      n /= len;
      if (n.dot(point(c, r)) > 0.0) n = -n;
      out.at(c, r) = n;
    }
  return out;
}

using Rgb = std::array<std::uint8_t, 3>;

/// Each component c in [-1, 1] maps to round((c + 1) / 2 * 255).
inline Rgb normal_to_rgb(const Vec3& n) {
  Rgb rgb;
  for (int i = 0; i < 3; ++i) {
    double v = std::round((std::clamp(n[i], -1.0, 1.0) + 1.0) * 0.5 * 255.0);
    rgb[i] = static_cast<std::uint8_t>(v);
  }
  return rgb;
}

/// Inverse of normal_to_rgb (not renormalised).
inline Vec3 rgb_to_normal(const Rgb& rgb) {
  return {rgb[0] / 255.0 * 2.0 - 1.0, rgb[1] / 255.0 * 2.0 - 1.0, rgb[2] / 255.0 * 2.0 - 1.0};
}

inline Rgb8Image normals_image(const NormalImage& n) {
  Rgb8Image img(n.width(), n.height());
  for (int r = 0; r < n.height(); ++r)
    for (int c = 0; c < n.width(); ++c) img.at(c, r) = n.valid(c, r) ? normal_to_rgb(n.at(c, r)) : Rgb{0, 0, 0};
  return img;
}

struct Correspondence {
  Vec3 source;  // current point, moved into the previous frame
  Vec3 target;  // surface point of the previous frame
  Vec3 normal;  // unit normal at target
};
using CorrespondenceSet = std::vector<Correspondence>;

/// Direct projective association: each valid current pixel is lifted,
/// moved by `pose` (current -> previous frame) and projected into the previous
/// image; the landed pixel is accepted when it has depth and normal and the
/// depths differ by less than z_tol.
inline CorrespondenceSet projective_correspond(const DepthImage& prev_depth, const NormalImage& prev_normals,
                                               const CameraModel& cam, const RigidTransform& pose,
                                               const DepthImage& cur_depth, double z_tol) {
  CorrespondenceSet out;
  const int w = cam.width, h = cam.height;
  for (int r = 0; r < cur_depth.height(); ++r)
    for (int c = 0; c < cur_depth.width(); ++c) {
      if (!cur_depth.valid(c, r)) continue;
      Vec3 q = pose.apply(backproject(cam, c, r, cur_depth.at(c, r)));
      auto proj = project(cam, q);
      if (!proj) continue;
      long pc = std::lround(proj->u), pr = std::lround(proj->v);
      if (pc < 0 || pr < 0 || pc >= w || pr >= h) continue;
      int ic = static_cast<int>(pc), ir = static_cast<int>(pr);
      if (!prev_depth.valid(ic, ir) || !prev_normals.valid(ic, ir)) continue;
      double zp = prev_depth.at(ic, ir);
      if (!(std::abs(q.z() - zp) < z_tol)) continue;
      out.push_back({q, backproject(cam, ic, ir, zp), prev_normals.at(ic, ir)});
    }
  return out;
}

/// The previous frame's mesh with each free-occupied triangle tagged by the
/// RGB code of its normal, ready to be rendered for normal lookup.
struct NormalMesh {
  LabeledMesh mesh;
  std::vector<Rgb> colors;  // per triangle
};

inline NormalMesh build_normal_mesh(const DepthImage& prev_depth, const NormalImage& prev_normals,
                                    const CameraModel& cam, const MeshifyOptions& mopts = {}) {
  NormalMesh nm;
  nm.mesh = meshify(prev_depth, cam, mopts);
  nm.colors.resize(nm.mesh.triangles.size(), Rgb{0, 0, 0});
  const int w = cam.width;
  for (std::size_t t = 0; t < nm.mesh.triangles.size(); ++t) {
    // Both triangles of a quad share its top-left vertex.
    std::uint32_t v = nm.mesh.triangles[t][0];
    int c = static_cast<int>(v % w), r = static_cast<int>(v / w);
    if (!prev_normals.valid(c, r)) {
      // No usable normal: demote so the render path skips it.
      if (nm.mesh.labels[t] == Interface::FreeOccupied) nm.mesh.labels[t] = Interface::FreeUnknown;
      continue;
    }
    nm.colors[t] = normal_to_rgb(prev_normals.at(c, r));
  }
  return nm;
}

/// Render-based association: draw the normal-coded previous mesh from `pose`
/// and pair each current pixel with the rendered surface under it.
inline CorrespondenceSet render_correspond(const NormalMesh& prev, const CameraModel& cam, const RigidTransform& pose,
                                           const DepthImage& cur_depth, double z_tol) {
  LabeledRender zm = render(prev.mesh, cam, pose, /*want_triangle_ids=*/true);
  const auto& ids = zm.triangle_ids();
  CorrespondenceSet out;
  for (int r = 0; r < cur_depth.height(); ++r)
    for (int c = 0; c < cur_depth.width(); ++c) {
      if (!cur_depth.valid(c, r)) continue;
      std::size_t i = static_cast<std::size_t>(r) * cam.width + c;
      if (zm.label(i) != Interface::FreeOccupied) continue;
      double z1 = cur_depth.at(c, r), zr = zm.depth(i);
      if (!(std::abs(zr - z1) < z_tol)) continue;
      Vec3 n = rgb_to_normal(prev.colors[static_cast<std::size_t>(ids[i])]);
      if (!(n.norm() > 0.0)) continue;
      out.push_back({pose.apply(backproject(cam, c, r, z1)), pose.apply(backproject(cam, c, r, zr)), n.normalized()});
    }
  return out;
}

class DegenerateGeometryError : public std::runtime_error {
 public:
  DegenerateGeometryError(const std::string& msg, VecN<6> null_direction)
      : std::runtime_error(msg), null_direction_(std::move(null_direction)) {}
  /// Least-constrained motion (rx, ry, rz, tx, ty, tz), unit length.
  const VecN<6>& null_direction() const { return null_direction_; }

 private:
  VecN<6> null_direction_;
};

struct PointToPlaneSolveOptions {
  int max_iterations = 20;
  double max_condition = 1e8;
  double step_tol = 1e-12;
};

/// Minimises sum(((R p + t - q) . n)^2) over the correspondences by repeated
/// small-angle linearisation: each round solves the 6x6 normal equations for
/// (rx, ry, rz, tx, ty, tz), applies the re-orthonormalised increment and
/// relinearises until the increment vanishes.
inline RigidTransform solve_point_to_plane(const CorrespondenceSet& corr, const PointToPlaneSolveOptions& opts = {}) {
  if (corr.size() < 6) throw DegenerateGeometryError("point-to-plane: fewer than 6 correspondences", VecN<6>::Zero());
  RigidTransform est;
  for (int it = 0; it < opts.max_iterations; ++it) {
    Eigen::Matrix<double, 6, 6> ata = Eigen::Matrix<double, 6, 6>::Zero();
    VecN<6> atb = VecN<6>::Zero();
    for (const auto& c : corr) {
      Vec3 p = est.apply(c.source);
      VecN<6> row;
      row.head<3>() = p.cross(c.normal);
      row.tail<3>() = c.normal;
      double res = (p - c.target).dot(c.normal);
      ata.noalias() += row * row.transpose();
      atb.noalias() -= row * res;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 6, 6>> eig(ata);
    double lmin = eig.eigenvalues()[0], lmax = eig.eigenvalues()[5];
    if (!(lmax > 0.0) || !(lmin > 0.0) || lmax / lmin > opts.max_condition) {
      VecN<6> dir = eig.eigenvectors().col(0);
      std::ostringstream msg;
      msg << "point-to-plane: degenerate geometry (condition " << (lmin > 0 ? lmax / lmin : INFINITY)
          << "), unconstrained motion (rx ry rz tx ty tz) = (" << dir.transpose() << ")";
      throw DegenerateGeometryError(msg.str(), dir);
    }
    VecN<6> x = ata.ldlt().solve(atb);
    Mat3 dr;
    dr << 1.0, -x[2], x[1], x[2], 1.0, -x[0], -x[1], x[0], 1.0;
    est = RigidTransform(orthonormalize(dr), x.tail<3>()) * est;
    if (x.norm() < opts.step_tol) break;
  }
  return est;
}

struct IcpOptions {
  int max_iterations = 30;
  double z_tolerance = 0.1;          // projective association gate, m
  double rejection_threshold = 0.2;  // point-to-point pair rejection, m
  double translation_eps = 1e-4;     // m
  double rotation_eps = 1e-4;        // rad
  int downsample_factor = 2;
  double max_range = 4.0;
  double normal_sigma = 2.0;         // pixels
  bool render_correspondences = false;
  int point_stride = 1;              // extra subsampling for point clouds
};

struct IcpResult {
  RigidTransform pose;
  int iterations = 0;
  std::size_t correspondences = 0;
  double residual_rms = 0.0;
  bool converged = false;
  bool diverged = false;
  std::string message;
  std::vector<double> rms_history;
};

/// Frame-to-frame point-to-plane ICP. The result maps points of `cur` into
/// the frame of `prev`.
inline IcpResult icp_point_to_plane(const DepthImage& prev, const DepthImage& cur, const CameraModel& cam,
                                    const RigidTransform& x0, const IcpOptions& opts = {}) {
  if (prev.width() != cam.width || prev.height() != cam.height || cur.width() != cam.width ||
      cur.height() != cam.height)
    throw std::invalid_argument("icp_point_to_plane: images do not match camera");
  const CameraModel dcam = cam.downsampled(opts.downsample_factor);
  const DepthImage p = clip_range(downsample(prev, opts.downsample_factor), opts.max_range);
  const DepthImage c = clip_range(downsample(cur, opts.downsample_factor), opts.max_range);
  const NormalImage normals = estimate_normals(p, dcam, opts.normal_sigma);
  NormalMesh nmesh;
  if (opts.render_correspondences) nmesh = build_normal_mesh(p, normals, dcam, {opts.max_range, 0.1});

  IcpResult res;
  res.pose = x0;
  for (int it = 0; it < opts.max_iterations; ++it) {
    res.iterations = it + 1;
    CorrespondenceSet corr = opts.render_correspondences
                                 ? render_correspond(nmesh, dcam, res.pose, c, opts.z_tolerance)
                                 : projective_correspond(p, normals, dcam, res.pose, c, opts.z_tolerance);
    res.correspondences = corr.size();
    if (corr.empty()) {
      res.diverged = true;
      res.message = "no correspondences at iteration " + std::to_string(it + 1);
      return res;
    }
    double ss = 0.0;
    for (const auto& k : corr) ss += std::pow((k.source - k.target).dot(k.normal), 2);
    res.residual_rms = std::sqrt(ss / corr.size());
    res.rms_history.push_back(res.residual_rms);

    RigidTransform inc;
    try {
      // One linearised step per association. The RMS over a freshly
      // associated set can rise while new pairs join; no line search here,
      // it stalls on exactly those steps.
      inc = solve_point_to_plane(corr, {1, 1e8, 0.0});
    } catch (const DegenerateGeometryError& e) {
      res.diverged = true;
      res.message = e.what();
      return res;
    }
    res.pose = inc * res.pose;
    if (inc.translation().norm() < opts.translation_eps && inc.rotation_angle() < opts.rotation_eps) {
      res.converged = true;
      break;
    }
  }
  if (!res.converged) res.message = "iteration limit reached";
  return res;
}

/// Back-projects every `stride`-th valid pixel within max_range.
inline std::vector<Vec3> depth_to_points(const DepthImage& d, const CameraModel& cam, double max_range,
                                         int stride = 1) {
  std::vector<Vec3> pts;
  for (int r = 0; r < d.height(); r += stride)
    for (int c = 0; c < d.width(); c += stride)
      if (d.valid(c, r) && d.at(c, r) <= max_range) pts.push_back(backproject(cam, c, r, d.at(c, r)));
  return pts;
}

/// Uniform 3-D hash grid; exact nearest neighbour for queries within one cell
/// size of a point.
class PointGrid {
 public:
  PointGrid(const std::vector<Vec3>& points, double cell) : points_(points), cell_(cell) {
    if (!(cell > 0.0)) throw std::invalid_argument("PointGrid: cell size must be positive");
    for (std::size_t i = 0; i < points_.size(); ++i) cells_[key(cell_of(points_[i]))].push_back(i);
  }

  /// Index of the nearest point within `radius` (<= cell size), or -1.
  long nearest(const Vec3& q, double radius) const {
    auto base = cell_of(q);
    long best = -1;
    double best_d2 = radius * radius;
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          auto it = cells_.find(key({base[0] + dx, base[1] + dy, base[2] + dz}));
          if (it == cells_.end()) continue;
          for (std::size_t i : it->second) {
            double d2 = (points_[i] - q).squaredNorm();
            // Ties go to the lower index so results do not depend on hashing.
            if (d2 < best_d2 || (d2 == best_d2 && best >= 0 && static_cast<long>(i) < best)) {
              best_d2 = d2;
              best = static_cast<long>(i);
            }
          }
        }
    return best;
  }

 private:
  std::array<std::int64_t, 3> cell_of(const Vec3& p) const {
    return {static_cast<std::int64_t>(std::floor(p.x() / cell_)), static_cast<std::int64_t>(std::floor(p.y() / cell_)),
            static_cast<std::int64_t>(std::floor(p.z() / cell_))};
  }
  static std::uint64_t key(const std::array<std::int64_t, 3>& c) {
    auto u = [](std::int64_t v) { return static_cast<std::uint64_t>(v) & 0x1FFFFF; };
    return (u(c[0]) << 42) | (u(c[1]) << 21) | u(c[2]);
  }

  const std::vector<Vec3>& points_;
  double cell_;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells_;
};

/// Closed-form rigid transform minimising sum |R a_i + t - b_i|^2 (centroids
/// plus SVD of the cross-covariance, reflection-corrected).
inline RigidTransform kabsch(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("kabsch: need equal, non-empty point sets");
  Vec3 ca = Vec3::Zero(), cb = Vec3::Zero();
  for (std::size_t i = 0; i < a.size(); ++i) {
    ca += a[i];
    cb += b[i];
  }
  ca /= static_cast<double>(a.size());
  cb /= static_cast<double>(b.size());
  Mat3 cov = Mat3::Zero();
  for (std::size_t i = 0; i < a.size(); ++i) cov += (b[i] - cb) * (a[i] - ca).transpose();
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) d(2, 2) = -1.0;
  Mat3 r = svd.matrixU() * d * svd.matrixV().transpose();
  return {r, cb - r * ca};
}

/// Point-to-point ICP with nearest neighbours from a hash grid; pairs farther
/// apart than the rejection threshold are dropped. The result maps `source`
/// into the frame of `target`.
inline IcpResult icp_point_to_point(const std::vector<Vec3>& source, const std::vector<Vec3>& target,
                                    const RigidTransform& x0, const IcpOptions& opts = {}) {
  if (source.empty() || target.empty()) throw std::invalid_argument("icp_point_to_point: empty point cloud");
  const PointGrid grid(target, opts.rejection_threshold);
  IcpResult res;
  res.pose = x0;
  std::vector<Vec3> a, b;
  for (int it = 0; it < opts.max_iterations; ++it) {
    res.iterations = it + 1;
    a.clear();
    b.clear();
    double ss = 0.0;
    for (const auto& s : source) {
      Vec3 p = res.pose.apply(s);
      long j = grid.nearest(p, opts.rejection_threshold);
      if (j < 0) continue;
      a.push_back(p);
      b.push_back(target[static_cast<std::size_t>(j)]);
      ss += (b.back() - p).squaredNorm();
    }
    res.correspondences = a.size();
    if (a.empty()) {
      res.diverged = true;
      res.message = "all pairs rejected at iteration " + std::to_string(it + 1);
      return res;
    }
    res.residual_rms = std::sqrt(ss / a.size());
    res.rms_history.push_back(res.residual_rms);
    RigidTransform inc = kabsch(a, b);
    res.pose = inc * res.pose;
    if (inc.translation().norm() < opts.translation_eps && inc.rotation_angle() < opts.rotation_eps) {
      res.converged = true;
      break;
    }
  }
  if (!res.converged) res.message = "iteration limit reached";
  return res;
}

/// Point-to-point ICP between two depth images (same camera).
inline IcpResult icp_point_to_point(const DepthImage& prev, const DepthImage& cur, const CameraModel& cam,
                                    const RigidTransform& x0, const IcpOptions& opts = {}) {
  const CameraModel dcam = cam.downsampled(opts.downsample_factor);
  auto tgt = depth_to_points(downsample(prev, opts.downsample_factor), dcam, opts.max_range, opts.point_stride);
  auto src = depth_to_points(downsample(cur, opts.downsample_factor), dcam, opts.max_range, opts.point_stride);
  if (src.empty() || tgt.empty()) {
    IcpResult r;
    r.pose = x0;
    r.diverged = true;
    r.message = "no valid points";
    return r;
  }
  return icp_point_to_point(src, tgt, x0, opts);
}

struct KeyframeOptions {
  bool enabled = false;
  double translation = 0.1;       // re-anchor beyond this displacement, m
  double rotation = deg2rad(5.0);
};

/// Sequential depth-image tracking with point-to-plane ICP. Each frame is
/// matched to the previous frame, or, with keyframes enabled, to the last
/// keyframe until the motion since it becomes significant. Returns the pose
/// of every frame in the frame of the first.
inline std::vector<RigidTransform> track_sequence(const std::vector<DepthImage>& frames, const CameraModel& cam,
                                                  const IcpOptions& opts = {}, const KeyframeOptions& kf = {}) {
  std::vector<RigidTransform> poses;
  if (frames.empty()) return poses;
  poses.push_back(RigidTransform::identity());
  std::size_t anchor = 0;
  RigidTransform last_rel;  // previous frame relative to the anchor
  for (std::size_t k = 1; k < frames.size(); ++k) {
    std::size_t ref = kf.enabled ? anchor : k - 1;
    RigidTransform guess = kf.enabled ? last_rel : RigidTransform::identity();
    IcpResult r = icp_point_to_plane(frames[ref], frames[k], cam, guess, opts);
    RigidTransform rel = r.diverged ? guess : r.pose;
    poses.push_back(poses[ref] * rel);
    if (kf.enabled) {
      if (rel.translation().norm() > kf.translation || rel.rotation_angle() > kf.rotation) {
        anchor = k;
        last_rel = RigidTransform::identity();
      } else {
        last_rel = rel;
      }
    }
  }
  return poses;
}

}  // namespace rendermap
