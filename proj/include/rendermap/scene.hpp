#pragma once

// Analytic primitive scenes and a ray-cast depth sensor, used to produce
// synthetic sequences with exact ground truth.
//
// Scene files hold one directive per line ('#' starts a comment):
//
//   camera W H fx fy cx cy          intrinsics (default: TUM fr3 at 640x480)
//   max_range R                     sensor range; farther returns are dropped (default 4)
//   noise SIGMA                     additive Gaussian depth noise, metres (default 0)
//   seed N                          noise seed (default 1)
//   plane PX PY PZ NX NY NZ         infinite plane through P with normal N
//   quad OX OY OZ AX AY AZ BX BY BZ parallelogram O + s*A + t*B, s,t in [0,1]
//   box X0 Y0 Z0 X1 Y1 Z1           axis-aligned solid box
//   frame T X Y Z RX RY RZ          camera pose at time T (angles in degrees)
//   sweep N DT X Y Z RX RY RZ VX VY VZ WX WY WZ
//                                   N frames every DT seconds from the given
//                                   pose, moving at constant rates (deg/s)
//
// World axes follow the camera convention: y points down, so a floor one
// metre below a level camera at the origin is "plane 0 1 0 0 -1 0".

#include "rendermap/depth_io.hpp"
#include "rendermap/geometry.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace rendermap {

struct PlanePrim {
  Vec3 point;
  Vec3 normal;
};
struct QuadPrim {
  Vec3 origin, edge_a, edge_b;
};
struct BoxPrim {
  Vec3 lo, hi;
};
using Primitive = std::variant<PlanePrim, QuadPrim, BoxPrim>;

struct SceneFrame {
  double timestamp = 0.0;
  Pose6D pose;  // camera-to-world
};

struct SceneSpec {
  std::vector<Primitive> primitives;
  std::vector<SceneFrame> trajectory;
  CameraModel camera = CameraModel::tum_fr3();
  double max_range = 4.0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 1;

  void validate() const {
    camera.validate();
    if (trajectory.empty()) throw std::invalid_argument("scene: trajectory has no frames");
    if (!(max_range > 0.0)) throw std::invalid_argument("scene: max_range must be positive");
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("scene: noise must be non-negative");
    for (std::size_t k = 1; k < trajectory.size(); ++k)
      if (!(trajectory[k].timestamp > trajectory[k - 1].timestamp))
        throw std::invalid_argument("scene: frame timestamps must increase");
  }
};

namespace detail {

inline double hit_plane(const PlanePrim& p, const Vec3& o, const Vec3& d) {
  double den = p.normal.dot(d);
  if (std::abs(den) < 1e-15) return std::numeric_limits<double>::infinity();
  double t = p.normal.dot(p.point - o) / den;
  return t > 0.0 ? t : std::numeric_limits<double>::infinity();
}

inline double hit_quad(const QuadPrim& q, const Vec3& o, const Vec3& d) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  Vec3 n = q.edge_a.cross(q.edge_b);
  double den = n.dot(d);
  if (std::abs(den) < 1e-15) return kInf;
  double t = n.dot(q.origin - o) / den;
  if (!(t > 0.0)) return kInf;
  Vec3 rel = o + t * d - q.origin;
  // Solve rel = s*A + u*B in the quad's plane.
  double aa = q.edge_a.dot(q.edge_a), ab = q.edge_a.dot(q.edge_b), bb = q.edge_b.dot(q.edge_b);
  double ra = rel.dot(q.edge_a), rb = rel.dot(q.edge_b);
  double det = aa * bb - ab * ab;
  double s = (ra * bb - rb * ab) / det;
  double u = (rb * aa - ra * ab) / det;
  return (s >= 0.0 && s <= 1.0 && u >= 0.0 && u <= 1.0) ? t : kInf;
}

inline double hit_box(const BoxPrim& b, const Vec3& o, const Vec3& d) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  double t_enter = -kInf, t_exit = kInf;
  for (int k = 0; k < 3; ++k) {
    if (std::abs(d[k]) < 1e-15) {
      if (o[k] < b.lo[k] || o[k] > b.hi[k]) return kInf;
      continue;
    }
    double t0 = (b.lo[k] - o[k]) / d[k], t1 = (b.hi[k] - o[k]) / d[k];
    if (t0 > t1) std::swap(t0, t1);
    t_enter = std::max(t_enter, t0);
    t_exit = std::min(t_exit, t1);
  }
  if (t_enter > t_exit || t_exit <= 0.0) return kInf;
  return t_enter > 0.0 ? t_enter : t_exit;
}

}  // namespace detail

/// Distance along `dir` from `origin` to the first primitive surface.
inline double cast_ray(const SceneSpec& spec, const Vec3& origin, const Vec3& dir) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& prim : spec.primitives) {
    double t = std::visit(
        [&](const auto& p) {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, PlanePrim>) return detail::hit_plane(p, origin, dir);
          else if constexpr (std::is_same_v<T, QuadPrim>) return detail::hit_quad(p, origin, dir);
          else return detail::hit_box(p, origin, dir);
        },
        prim);
    best = std::min(best, t);
  }
  return best;
}

/// Exact depth image of the scene from frame `index`, plus optional noise.
inline DepthImage synth_render(const SceneSpec& spec, std::size_t index) {
  if (index >= spec.trajectory.size()) throw std::out_of_range("synth_render: frame index out of range");
  const CameraModel& cam = spec.camera;
  const RigidTransform pose = pose_to_transform(spec.trajectory[index].pose);
  DepthImage d(cam.width, cam.height);
  d.timestamp = spec.trajectory[index].timestamp;

  std::mt19937_64 rng(spec.seed * 0x9E3779B97F4A7C15ull + index);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int r = 0; r < cam.height; ++r)
    for (int c = 0; c < cam.width; ++c) {
      // The camera-frame ray has unit z, so the hit parameter is the depth.
      Vec3 dir = pose.rotation() * pixel_ray(cam, c, r);
      double z = cast_ray(spec, pose.translation(), dir);
      if (spec.noise_sigma > 0.0) z += spec.noise_sigma * noise(rng);
      if (std::isfinite(z) && z > 0.0 && z <= spec.max_range) d.at(c, r) = z;
    }
  return d;
}

/// Ground-truth camera-to-world poses of the scene trajectory.
inline Trajectory scene_trajectory(const SceneSpec& spec) {
  Trajectory t;
  for (const auto& f : spec.trajectory) t.poses.push_back({f.timestamp, pose_to_transform(f.pose)});
  return t;
}

inline SceneSpec parse_scene(std::istream& in, const std::string& source = "<scene>") {
  SceneSpec spec;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& msg) -> void {
    throw std::runtime_error(source + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::string key;
    if (!(ss >> key)) continue;
    auto read = [&](int n) {
      std::vector<double> v(n);
      for (double& x : v)
        if (!(ss >> x)) fail("'" + key + "' expects " + std::to_string(n) + " numbers");
      std::string extra;
      if (ss >> extra) fail("unexpected token '" + extra + "' after '" + key + "'");
      for (double x : v)
        if (!std::isfinite(x)) fail("non-finite value in '" + key + "'");
      return v;
    };
    auto vec = [](const std::vector<double>& v, int at) { return Vec3(v[at], v[at + 1], v[at + 2]); };
    if (key == "camera") {
      auto v = read(6);
      spec.camera.width = static_cast<int>(v[0]);
      spec.camera.height = static_cast<int>(v[1]);
      spec.camera.fx = v[2];
      spec.camera.fy = v[3];
      spec.camera.cx = v[4];
      spec.camera.cy = v[5];
      try {
        spec.camera.validate();
      } catch (const std::invalid_argument& e) {
        fail(e.what());
      }
    } else if (key == "max_range") {
      spec.max_range = read(1)[0];
      if (!(spec.max_range > 0)) fail("max_range must be positive");
    } else if (key == "noise") {
      spec.noise_sigma = read(1)[0];
      if (spec.noise_sigma < 0) fail("noise must be non-negative");
    } else if (key == "seed") {
      spec.seed = static_cast<std::uint64_t>(read(1)[0]);
    } else if (key == "plane") {
      auto v = read(6);
      Vec3 n = vec(v, 3);
      if (n.norm() == 0.0) fail("plane normal is zero");
      spec.primitives.emplace_back(PlanePrim{vec(v, 0), n.normalized()});
    } else if (key == "quad") {
      auto v = read(9);
      if (vec(v, 3).cross(vec(v, 6)).norm() == 0.0) fail("quad edges are parallel");
      spec.primitives.emplace_back(QuadPrim{vec(v, 0), vec(v, 3), vec(v, 6)});
    } else if (key == "box") {
      auto v = read(6);
      Vec3 lo = vec(v, 0), hi = vec(v, 3);
      if (!(lo.array() < hi.array()).all()) fail("box needs min < max on every axis");
      spec.primitives.emplace_back(BoxPrim{lo, hi});
    } else if (key == "frame") {
      auto v = read(7);
      spec.trajectory.push_back({v[0], {v[1], v[2], v[3], deg2rad(v[4]), deg2rad(v[5]), deg2rad(v[6])}});
    } else if (key == "sweep") {
      auto v = read(14);
      int n = static_cast<int>(v[0]);
      double dt = v[1];
      if (n < 0 || !(dt > 0)) fail("sweep needs N >= 0 and DT > 0");
      double t0 = spec.trajectory.empty() ? 0.0 : spec.trajectory.back().timestamp + dt;
      for (int k = 0; k < n; ++k) {
        double s = k * dt;
        Pose6D p{v[2] + s * v[8],           v[3] + s * v[9],           v[4] + s * v[10],
                 deg2rad(v[5] + s * v[11]), deg2rad(v[6] + s * v[12]), deg2rad(v[7] + s * v[13])};
        spec.trajectory.push_back({t0 + s, p});
      }
    } else {
      fail("unknown directive '" + key + "'");
    }
  }
  return spec;
}

inline SceneSpec load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scene: " + path);
  return parse_scene(in, path);
}

inline SceneSpec parse_scene_string(const std::string& text, const std::string& source = "<scene>") {
  std::istringstream in(text);
  return parse_scene(in, source);
}

}  // namespace rendermap
