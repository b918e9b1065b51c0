#pragma once

// Deterministic software Z-buffer for labelled meshes.
//
// Coverage is decided on vertex positions snapped to 1/256 pixel with exact
// 64-bit edge functions and a top-left fill rule, so triangles sharing an
// edge never both claim (or both miss) a pixel centre. Depth is interpolated
// perspective-correctly (1/z is affine in screen space) from the unsnapped
// projections and stored in metres. Ties in depth go to the lower Interface
// value, which makes the output independent of submission order.

#include "rendermap/geometry.hpp"
#include "rendermap/meshify.hpp"
#include "rendermap/png_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace rendermap {

struct RenderedPixel {
  double depth = std::numeric_limits<double>::quiet_NaN();
  Interface label = Interface::Background;

  bool is_background() const { return label == Interface::Background; }
};

class LabeledRender {
 public:
  LabeledRender() = default;
  LabeledRender(int width, int height)
      : width_(width),
        height_(height),
        depth_(static_cast<std::size_t>(width) * height, std::numeric_limits<double>::quiet_NaN()),
        label_(static_cast<std::size_t>(width) * height, Interface::Background) {}

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return depth_.size(); }

  RenderedPixel at(int col, int row) const { return at(index(col, row)); }
  RenderedPixel at(std::size_t i) const { return {depth_[i], label_[i]}; }
  void set(int col, int row, RenderedPixel p) { set(index(col, row), p); }
  void set(std::size_t i, RenderedPixel p) {
    depth_[i] = p.depth;
    label_[i] = p.label;
  }

  double depth(std::size_t i) const { return depth_[i]; }
  Interface label(std::size_t i) const { return label_[i]; }

  /// Global triangle index (instances concatenated in order) that produced
  /// each pixel, -1 for background. Only filled when requested.
  const std::vector<std::int32_t>& triangle_ids() const { return ids_; }

  bool operator==(const LabeledRender& o) const {
    if (width_ != o.width_ || height_ != o.height_ || label_ != o.label_) return false;
    for (std::size_t i = 0; i < depth_.size(); ++i) {
      bool a = std::isnan(depth_[i]), b = std::isnan(o.depth_[i]);
      if (a != b || (!a && depth_[i] != o.depth_[i])) return false;
    }
    return true;
  }

 private:
  friend class Rasterizer;
  std::size_t index(int col, int row) const { return static_cast<std::size_t>(row) * width_ + col; }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> depth_;
  std::vector<Interface> label_;
  std::vector<std::int32_t> ids_;
};

struct MeshInstance {
  const LabeledMesh* mesh = nullptr;
  RigidTransform world_from_mesh;
};

/// Converts a normalised hardware depth-buffer value to metric camera-z for a
/// projection with near plane z0 and far plane z_inf.
inline double zbuffer_to_depth(double z_b, double z0, double z_inf) {
  if (!(z_b >= 0.0 && z_b <= 1.0)) throw std::domain_error("zbuffer_to_depth: z_b must lie in [0, 1]");
  if (!(z0 > 0.0 && z0 < z_inf)) throw std::domain_error("zbuffer_to_depth: need 0 < z0 < z_inf");
  // 1 - z_b (1 - z0/z_inf), regrouped as a sum of two non-negative terms so
  // nothing cancels when z_b is near 1 and z_inf >> z0.
  return z0 / ((1.0 - z_b) + z_b * (z0 / z_inf));
}

/// Inverse of zbuffer_to_depth, for encoding metric depths into a [0, 1] buffer.
inline double depth_to_zbuffer(double depth, double z0, double z_inf) {
  if (!(z0 > 0.0 && z0 < z_inf)) throw std::domain_error("depth_to_zbuffer: need 0 < z0 < z_inf");
  return (1.0 - z0 / depth) / (1.0 - z0 / z_inf);
}

class Rasterizer {
 public:
  static constexpr int kSubpixelBits = 8;
  static constexpr std::int64_t kSubpixel = 1 << kSubpixelBits;
  // Pixels beyond the viewport kept unclipped; bounds fixed-point magnitudes.
  static constexpr double kGuardBand = 2048.0;

  Rasterizer(const CameraModel& cam, bool want_ids = false) : cam_(cam) {
    cam_.validate();
    out_.width_ = cam_.width;
    out_.height_ = cam_.height;
    // Depth holds +inf while drawing; finish() turns untouched pixels into NaN.
    out_.depth_.assign(cam_.pixel_count(), std::numeric_limits<double>::infinity());
    out_.label_.assign(cam_.pixel_count(), Interface::Background);
    if (want_ids) out_.ids_.assign(out_.size(), -1);
    planes_ = {{
        {0.0, 0.0, 1.0, -cam_.z_near},                          // z >= near
        {0.0, 0.0, -1.0, cam_.z_far},                           // z <= far
        {cam_.fx, 0.0, cam_.cx + kGuardBand, 0.0},              // u >= -G
        {-cam_.fx, 0.0, (cam_.width - 1 + kGuardBand) - cam_.cx, 0.0},   // u <= W-1+G
        {0.0, cam_.fy, cam_.cy + kGuardBand, 0.0},              // v >= -G
        {0.0, -cam_.fy, (cam_.height - 1 + kGuardBand) - cam_.cy, 0.0},  // v <= H-1+G
    }};
  }

  void draw(const LabeledMesh& mesh, const RigidTransform& cam_from_mesh) {
    const std::size_t nv = mesh.vertices.size();
    verts_.resize(nv);
    points_.resize(nv);
    for (std::size_t i = 0; i < nv; ++i) {
      ScreenVertex& sv = verts_[i];
      points_[i] = cam_from_mesh.apply(mesh.vertices[i]);
      sv.outcode = outcode(points_[i]);
      if (sv.outcode == 0) set_projection(sv, points_[i]);
    }
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t, ++tri_base_) {
      const auto& tri = mesh.triangles[t];
      const ScreenVertex& a = verts_[tri[0]];
      const ScreenVertex& b = verts_[tri[1]];
      const ScreenVertex& c = verts_[tri[2]];
      if (a.outcode & b.outcode & c.outcode) continue;
      Interface label = mesh.labels[t];
      if ((a.outcode | b.outcode | c.outcode) == 0) {
        raster_triangle(a, b, c, label);
      } else {
        clip_and_raster(points_[tri[0]], points_[tri[1]], points_[tri[2]], label);
      }
    }
  }

  LabeledRender finish() && {
    for (double& d : out_.depth_)
      if (std::isinf(d)) d = std::numeric_limits<double>::quiet_NaN();
    return std::move(out_);
  }

 private:
  struct ScreenVertex {
    double u = 0, v = 0, inv_z = 0;
    std::int32_t fx = 0, fy = 0;  // fixed point; the guard band keeps these small
    unsigned outcode = 0;
  };
  struct Plane {
    double a, b, c, d;  // a*x + b*y + c*z + d >= 0 inside
    double eval(const Vec3& p) const { return a * p.x() + b * p.y() + c * p.z() + d; }
  };

  unsigned outcode(const Vec3& p) const {
    unsigned code = 0;
    for (std::size_t k = 0; k < planes_.size(); ++k)
      if (planes_[k].eval(p) < 0.0) code |= 1u << k;
    return code;
  }

  void set_projection(ScreenVertex& sv, const Vec3& p) const {
    sv.inv_z = 1.0 / p.z();
    sv.u = cam_.fx * p.x() * sv.inv_z + cam_.cx;
    sv.v = cam_.fy * p.y() * sv.inv_z + cam_.cy;
    // Default rounding mode (to nearest) is assumed throughout.
    sv.fx = static_cast<std::int32_t>(std::lrint(sv.u * kSubpixel));
    sv.fy = static_cast<std::int32_t>(std::lrint(sv.v * kSubpixel));
  }

  void clip_and_raster(const Vec3& a, const Vec3& b, const Vec3& c, Interface label) {
    // Sutherland-Hodgman against the convex clip volume. A triangle gains at
    // most one vertex per plane.
    std::array<Vec3, 9> buf_a, buf_b;
    int n = 3;
    buf_a[0] = a;
    buf_a[1] = b;
    buf_a[2] = c;
    auto* in = &buf_a;
    auto* out = &buf_b;
    for (const Plane& pl : planes_) {
      int m = 0;
      for (int i = 0; i < n; ++i) {
        const Vec3& p = (*in)[i];
        const Vec3& q = (*in)[(i + 1) % n];
        double dp = pl.eval(p), dq = pl.eval(q);
        if (dp >= 0.0) (*out)[m++] = p;
        if ((dp >= 0.0) != (dq >= 0.0)) (*out)[m++] = p + (q - p) * (dp / (dp - dq));
      }
      n = m;
      std::swap(in, out);
      if (n < 3) return;
    }
    std::array<ScreenVertex, 9> sv;
    for (int i = 0; i < n; ++i) {
      Vec3 p = (*in)[i];
      // Clipped vertices can sit a rounding error outside the near plane.
      if (p.z() < cam_.z_near) p.z() = cam_.z_near;
      set_projection(sv[i], p);
    }
    for (int i = 1; i + 1 < n; ++i) raster_triangle(sv[0], sv[i], sv[i + 1], label);
  }

  static bool owns_edge(std::int64_t dx, std::int64_t dy) { return dy < 0 || (dy == 0 && dx > 0); }

  void raster_triangle(const ScreenVertex& v0, const ScreenVertex& v1_in, const ScreenVertex& v2_in,
                       Interface label) {
    const ScreenVertex* v1 = &v1_in;
    const ScreenVertex* v2 = &v2_in;
    // Pixel centres sit at integer multiples of kSubpixel.
    auto ceil_div = [](std::int64_t a) { return a >= 0 ? (a + kSubpixel - 1) >> kSubpixelBits : -((-a) >> kSubpixelBits); };
    auto floor_div = [](std::int64_t a) { return a >= 0 ? a >> kSubpixelBits : -((-a + kSubpixel - 1) >> kSubpixelBits); };
    int x0 = static_cast<int>(std::max<std::int64_t>(ceil_div(std::min({v0.fx, v1->fx, v2->fx})), 0));
    int x1 = static_cast<int>(std::min<std::int64_t>(floor_div(std::max({v0.fx, v1->fx, v2->fx})), cam_.width - 1));
    if (x0 > x1) return;
    int y0 = static_cast<int>(std::max<std::int64_t>(ceil_div(std::min({v0.fy, v1->fy, v2->fy})), 0));
    int y1 = static_cast<int>(std::min<std::int64_t>(floor_div(std::max({v0.fy, v1->fy, v2->fy})), cam_.height - 1));
    if (y0 > y1) return;

    std::int64_t area = std::int64_t{v1->fx - v0.fx} * (v2->fy - v0.fy) - std::int64_t{v1->fy - v0.fy} * (v2->fx - v0.fx);
    if (area == 0) return;
    if (area < 0) std::swap(v1, v2);

    // Edge i is opposite vertex i; e_i(p) = (b - a) x (p - a).
    const ScreenVertex* pv[3] = {&v0, v1, v2};
    std::int64_t ex[3], ey[3], e_row[3], bias[3];
    const std::int64_t px0 = static_cast<std::int64_t>(x0) << kSubpixelBits;
    const std::int64_t py0 = static_cast<std::int64_t>(y0) << kSubpixelBits;
    for (int i = 0; i < 3; ++i) {
      const ScreenVertex* a = pv[(i + 1) % 3];
      const ScreenVertex* b = pv[(i + 2) % 3];
      std::int64_t dx = std::int64_t{b->fx} - a->fx, dy = std::int64_t{b->fy} - a->fy;
      ex[i] = -dy * kSubpixel;  // step in +x
      ey[i] = dx * kSubpixel;   // step in +y
      e_row[i] = dx * (py0 - a->fy) - dy * (px0 - a->fx);
      bias[i] = owns_edge(dx, dy) ? 0 : -1;
    }

    const double z_near = cam_.z_near, z_far = cam_.z_far;
    const int w = cam_.width;
    const std::int32_t id = static_cast<std::int32_t>(tri_base_);
    const bool want_ids = !out_.ids_.empty();
    // 1/z is affine in screen space; its gradient is set up on the first
    // covered pixel since most small triangles cover none.
    bool have_plane = false;
    double grad_u = 0.0, grad_v = 0.0;
    for (int y = y0; y <= y1; ++y) {
      std::int64_t e0 = e_row[0], e1 = e_row[1], e2 = e_row[2];
      for (int x = x0; x <= x1; ++x) {
        if ((e0 + bias[0]) >= 0 && (e1 + bias[1]) >= 0 && (e2 + bias[2]) >= 0) {
          if (!have_plane) {
            const double du1 = v1->u - v0.u, dv1 = v1->v - v0.v;
            const double du2 = v2->u - v0.u, dv2 = v2->v - v0.v;
            const double det = du1 * dv2 - du2 * dv1;
            if (det == 0.0) return;
            const double di1 = v1->inv_z - v0.inv_z, di2 = v2->inv_z - v0.inv_z;
            grad_u = (di1 * dv2 - di2 * dv1) / det;
            grad_v = (di2 * du1 - di1 * du2) / det;
            have_plane = true;
          }
          double inv_z = v0.inv_z + grad_u * (x - v0.u) + grad_v * (y - v0.v);
          if (inv_z > 0.0) {
            double z = 1.0 / inv_z;
            if (z <= z_far) {
              if (z < z_near) z = z_near;
              std::size_t i = static_cast<std::size_t>(y) * w + x;
              double& cur = out_.depth_[i];
              Interface& cur_label = out_.label_[i];
              if (z < cur || (z == cur && label < cur_label)) {
                cur = z;
                cur_label = label;
                if (want_ids) out_.ids_[i] = id;
              }
            }
          }
        }
        e0 += ex[0];
        e1 += ex[1];
        e2 += ex[2];
      }
      e_row[0] += ey[0];
      e_row[1] += ey[1];
      e_row[2] += ey[2];
    }
  }

  CameraModel cam_;
  LabeledRender out_;
  std::vector<ScreenVertex> verts_;
  std::vector<Vec3> points_;
  std::array<Plane, 6> planes_;
  std::size_t tri_base_ = 0;
};

/// Renders `instances` seen from a camera whose camera-to-world transform is
/// `camera_pose`.
inline LabeledRender render(std::span<const MeshInstance> instances, const CameraModel& cam,
                            const RigidTransform& camera_pose, bool want_triangle_ids = false) {
  Rasterizer rz(cam, want_triangle_ids);
  const RigidTransform cam_from_world = camera_pose.inverse();
  for (const auto& inst : instances) {
    if (!inst.mesh) continue;
    rz.draw(*inst.mesh, cam_from_world * inst.world_from_mesh);
  }
  return std::move(rz).finish();
}

inline LabeledRender render(const LabeledMesh& mesh, const CameraModel& cam, const RigidTransform& camera_pose,
                            bool want_triangle_ids = false) {
  MeshInstance inst{&mesh, RigidTransform::identity()};
  return render(std::span<const MeshInstance>(&inst, 1), cam, camera_pose, want_triangle_ids);
}

/// Per-pixel exact ray casting (Moller-Trumbore) over every triangle. Slow;
/// exists to check the rasterizer. Equal hit depths go to the lower global
/// triangle index.
inline LabeledRender raycast_reference(std::span<const MeshInstance> instances, const CameraModel& cam,
                                       const RigidTransform& camera_pose) {
  cam.validate();
  struct Tri {
    Vec3 a, e1, e2;
    Interface label;
  };
  std::vector<Tri> tris;
  const RigidTransform cam_from_world = camera_pose.inverse();
  for (const auto& inst : instances) {
    if (!inst.mesh) continue;
    RigidTransform t = cam_from_world * inst.world_from_mesh;
    const LabeledMesh& m = *inst.mesh;
    for (std::size_t k = 0; k < m.triangles.size(); ++k) {
      Vec3 a = t.apply(m.vertices[m.triangles[k][0]]);
      Vec3 b = t.apply(m.vertices[m.triangles[k][1]]);
      Vec3 c = t.apply(m.vertices[m.triangles[k][2]]);
      tris.push_back({a, b - a, c - a, m.labels[k]});
    }
  }

  constexpr double kEdgeTol = 1e-12;
  LabeledRender out(cam.width, cam.height);
  for (int r = 0; r < cam.height; ++r)
    for (int c = 0; c < cam.width; ++c) {
      const Vec3 dir = pixel_ray(cam, c, r);  // unit z, so hit t is camera depth
      double best = std::numeric_limits<double>::infinity();
      Interface best_label = Interface::Background;
      for (const Tri& tri : tris) {
        Vec3 pvec = dir.cross(tri.e2);
        double det = tri.e1.dot(pvec);
        if (std::abs(det) < 1e-300) continue;
        double inv_det = 1.0 / det;
        Vec3 tvec = -tri.a;
        double u = tvec.dot(pvec) * inv_det;
        if (u < -kEdgeTol || u > 1.0 + kEdgeTol) continue;
        Vec3 qvec = tvec.cross(tri.e1);
        double v = dir.dot(qvec) * inv_det;
        if (v < -kEdgeTol || u + v > 1.0 + kEdgeTol) continue;
        double t = tri.e2.dot(qvec) * inv_det;
        if (t < cam.z_near || t > cam.z_far) continue;
        if (t < best - 1e-12 * t) {
          best = t;
          best_label = tri.label;
        }
      }
      if (best_label != Interface::Background) out.set(c, r, {best, best_label});
    }
  return out;
}

inline LabeledRender raycast_reference(const LabeledMesh& mesh, const CameraModel& cam,
                                       const RigidTransform& camera_pose) {
  MeshInstance inst{&mesh, RigidTransform::identity()};
  return raycast_reference(std::span<const MeshInstance>(&inst, 1), cam, camera_pose);
}

/// False-colour view: hue from the label, brightness falling off with depth.
inline Rgb8Image false_color(const LabeledRender& r, double max_depth = 4.0) {
  Rgb8Image img(r.width(), r.height());
  for (std::size_t i = 0; i < r.size(); ++i) {
    RenderedPixel p = r.at(i);
    std::array<double, 3> base{};
    switch (p.label) {
      case Interface::FreeOccupied: base = {0.75, 0.75, 0.75}; break;
      case Interface::FreeUnknown: base = {0.1, 0.85, 0.1}; break;
      case Interface::UnknownOccupied: base = {0.6, 0.2, 0.8}; break;
      case Interface::Background: img.data[i] = {255, 255, 255}; continue;
    }
    double k = std::clamp(1.0 - 0.75 * p.depth / max_depth, 0.25, 1.0);
    for (int ch = 0; ch < 3; ++ch) img.data[i][ch] = static_cast<std::uint8_t>(std::lround(255.0 * base[ch] * k));
  }
  return img;
}

}  // namespace rendermap
