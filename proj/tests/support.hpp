#pragma once
// Shared fixtures for the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rendermap/geometry.hpp"
#include "rendermap/meshify.hpp"
#include "rendermap/raster.hpp"
#include "rendermap/scene.hpp"

namespace rendermap::testing {

#ifdef RENDERMAP_DATA_DIR
inline std::string data_path(const std::string& rel) { return std::string(RENDERMAP_DATA_DIR) + "/" + rel; }
#endif

/// Depth image of a plane n.p = d seen from the identity camera, by direct ray intersection.
inline DepthImage plane_depth(const CameraModel& cam, const Vec3& n, double d) {
  DepthImage img(cam.width, cam.height);
  for (int r = 0; r < cam.height; ++r)
    for (int c = 0; c < cam.width; ++c) {
      Vec3 ray = pixel_ray(cam, c, r);
      double den = n.dot(ray);
      if (std::abs(den) < 1e-12) continue;
      img.set(c, r, d / den);
    }
  return img;
}

inline DepthImage constant_depth(const CameraModel& cam, double z) { return plane_depth(cam, Vec3(0, 0, 1), z); }

/// Random triangle soup in front of the identity camera.
inline LabeledMesh random_scene(std::mt19937_64& rng, const CameraModel& cam, int max_triangles = 200) {
  std::uniform_int_distribution<int> count(10, max_triangles);
  std::uniform_real_distribution<double> u(-20.0, cam.width + 20.0), v(-20.0, cam.height + 20.0);
  std::uniform_real_distribution<double> z(0.5, 6.0), size(0.02, 1.2), unit(-1.0, 1.0);
  std::uniform_int_distribution<int> label(0, 2);
  LabeledMesh m;
  int n = count(rng);
  for (int k = 0; k < n; ++k) {
    Vec3 centre = backproject(cam, u(rng), v(rng), z(rng));
    double s = size(rng);
    Vec3 p[3];
    for (auto& q : p) {
      q = centre + s * Vec3(unit(rng), unit(rng), unit(rng));
      q.z() = std::max(q.z(), 0.3);
    }
    m.add_triangle(p[0], p[1], p[2], static_cast<Interface>(label(rng)));
  }
  return m;
}

/// Pixels whose centre lies within `radius` pixels of any projected triangle
/// edge. Assumes every vertex is in front of the camera.
inline std::vector<std::uint8_t> edge_mask(const LabeledMesh& mesh, const CameraModel& cam,
                                           const RigidTransform& cam_from_mesh, double radius = 1.0) {
  std::vector<std::uint8_t> mask(cam.pixel_count(), 0);
  auto mark_segment = [&](double u0, double v0, double u1, double v1) {
    int c0 = std::max(0, static_cast<int>(std::floor(std::min(u0, u1) - radius)));
    int c1 = std::min(cam.width - 1, static_cast<int>(std::ceil(std::max(u0, u1) + radius)));
    int r0 = std::max(0, static_cast<int>(std::floor(std::min(v0, v1) - radius)));
    int r1 = std::min(cam.height - 1, static_cast<int>(std::ceil(std::max(v0, v1) + radius)));
    double du = u1 - u0, dv = v1 - v0, len2 = du * du + dv * dv;
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        double t = len2 > 0 ? std::clamp(((c - u0) * du + (r - v0) * dv) / len2, 0.0, 1.0) : 0.0;
        double eu = u0 + t * du - c, ev = v0 + t * dv - r;
        if (eu * eu + ev * ev <= radius * radius) mask[static_cast<std::size_t>(r) * cam.width + c] = 1;
      }
  };
  for (const auto& tri : mesh.triangles) {
    std::optional<Projection> p[3];
    for (int k = 0; k < 3; ++k) p[k] = project(cam, cam_from_mesh * mesh.vertices[tri[k]]);
    if (!p[0] || !p[1] || !p[2]) continue;
    for (int k = 0; k < 3; ++k) mark_segment(p[k]->u, p[k]->v, p[(k + 1) % 3]->u, p[(k + 1) % 3]->v);
  }
  return mask;
}

struct OracleAgreement {
  std::size_t compared = 0;
  std::size_t label_agree = 0;
  std::size_t depth_checked = 0;
  std::size_t depth_agree = 0;
  double max_depth_diff = 0.0;

  double label_fraction() const { return compared ? double(label_agree) / compared : 1.0; }
  double depth_fraction() const { return depth_checked ? double(depth_agree) / depth_checked : 1.0; }
};

inline OracleAgreement compare_renders(const LabeledRender& a, const LabeledRender& b,
                                       const std::vector<std::uint8_t>& skip, double depth_tol = 1e-4) {
  OracleAgreement s;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!skip.empty() && skip[i]) continue;
    ++s.compared;
    RenderedPixel p = a.at(i), q = b.at(i);
    if (p.label == q.label) ++s.label_agree;
    if (!p.is_background() && !q.is_background()) {
      ++s.depth_checked;
      double d = std::abs(p.depth - q.depth);
      s.max_depth_diff = std::max(s.max_depth_diff, d);
      if (d <= depth_tol) ++s.depth_agree;
    }
  }
  return s;
}

/// The small office room, one camera per entry of `poses`.
inline SceneSpec room_scene(const std::vector<Pose6D>& poses) {
  SceneSpec spec = parse_scene_string(R"(
camera 320 240 267.7 269.6 160.05 123.8
max_range 4.0
plane 0 1.2 0  0 -1 0
quad -2.5 -1.3 3.6   5 0 0   0 2.5 0
quad -2.5 -1.3 -1.0  0 0 4.6  0 2.5 0
quad  2.5 -1.3 -1.0  0 0 4.6  0 2.5 0
box -0.8 0.35 1.6   0.8 0.40 2.4
box -0.75 0.40 1.65 -0.70 1.2 1.70
box  0.70 0.40 1.65  0.75 1.2 1.70
box -0.3 -0.05 2.1   0.3 0.35 2.15
box  0.45 0.10 1.8   0.65 0.35 2.0
box -1.9 -0.2 2.6   -1.2 1.2 3.3
)");
  double t = 0.0;
  for (const Pose6D& p : poses) spec.trajectory.push_back({t++, p});
  return spec;
}

}  // namespace rendermap::testing
