#pragma once

// Range image -> labelled triangle mesh of the space-partition interfaces.
//
// Every 2x2 pixel block becomes one quad, split along the top-left /
// bottom-right diagonal. Quads whose four returns are valid and mutually
// close bound observed surface (free-occupied). Quads touching a no-return
// pixel, or straddling a depth discontinuity, bound observed free space with
// nothing known behind it (free-unknown). No-return pixels are placed at the
// sensor's maximum range along their ray.

#include "rendermap/depth_io.hpp"
#include "rendermap/geometry.hpp"

#include <array>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rendermap {

/// Interface a rendered pixel landed on. Meshes only ever carry the first
/// three; Background marks pixels no triangle covered. The numeric order is
/// also the tie-break order of the depth test.
enum class Interface : std::uint8_t {
  FreeOccupied = 0,
  FreeUnknown = 1,
  UnknownOccupied = 2,
  Background = 3,
};

inline const char* to_string(Interface l) {
  switch (l) {
    case Interface::FreeOccupied: return "free-occupied";
    case Interface::FreeUnknown: return "free-unknown";
    case Interface::UnknownOccupied: return "unknown-occupied";
    case Interface::Background: return "background";
  }
  return "?";
}

struct LabeledMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;
  std::vector<Interface> labels;

  std::size_t triangle_count() const { return triangles.size(); }
  bool empty() const { return triangles.empty(); }

  void add_triangle(const Vec3& a, const Vec3& b, const Vec3& c, Interface label) {
    auto base = static_cast<std::uint32_t>(vertices.size());
    vertices.push_back(a);
    vertices.push_back(b);
    vertices.push_back(c);
    triangles.push_back({base, base + 1, base + 2});
    labels.push_back(label);
  }

  /// Throws on out-of-range indices, label/triangle count mismatch or
  /// triangles labelled Background.
  void validate() const {
    if (labels.size() != triangles.size()) throw std::invalid_argument("mesh: one label per triangle required");
    for (const auto& t : triangles)
      for (auto i : t)
        if (i >= vertices.size()) throw std::invalid_argument("mesh: vertex index out of range");
    for (auto l : labels)
      if (l == Interface::Background) throw std::invalid_argument("mesh: triangles cannot be labelled background");
  }
};

struct MeshifyOptions {
  double max_range = 4.0;
  double discontinuity = 0.1;
};

inline LabeledMesh meshify(const DepthImage& depth, const CameraModel& cam, const MeshifyOptions& opts = {}) {
  if (depth.width() != cam.width || depth.height() != cam.height)
    throw std::invalid_argument("meshify: depth image " + std::to_string(depth.width()) + "x" +
                                std::to_string(depth.height()) + " does not match camera " +
                                std::to_string(cam.width) + "x" + std::to_string(cam.height));
  if (depth.width() < 2 || depth.height() < 2) throw std::invalid_argument("meshify: image smaller than 2x2");
  if (!(opts.max_range > 0.0) || !(opts.discontinuity > 0.0))
    throw std::invalid_argument("meshify: max_range and discontinuity must be positive");

  const int w = depth.width(), h = depth.height();
  LabeledMesh mesh;
  mesh.vertices.resize(static_cast<std::size_t>(w) * h);
  std::vector<std::uint8_t> measured(mesh.vertices.size(), 0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      std::size_t i = static_cast<std::size_t>(r) * w + c;
      double z = depth.at(c, r);
      bool ok = DepthImage::is_valid_depth(z) && z <= opts.max_range;
      measured[i] = ok;
      mesh.vertices[i] = backproject(cam, c, r, ok ? z : opts.max_range);
    }

  const double disc2 = opts.discontinuity * opts.discontinuity;
  const std::size_t quads = static_cast<std::size_t>(w - 1) * (h - 1);
  mesh.triangles.reserve(2 * quads);
  mesh.labels.reserve(2 * quads);
  for (int r = 0; r + 1 < h; ++r)
    for (int c = 0; c + 1 < w; ++c) {
      auto tl = static_cast<std::uint32_t>(r * w + c);
      std::uint32_t tr = tl + 1;
      auto bl = static_cast<std::uint32_t>(tl + w);
      std::uint32_t br = bl + 1;
      std::array<std::uint32_t, 4> q{tl, tr, bl, br};

      Interface label = Interface::FreeOccupied;
      if (!(measured[tl] && measured[tr] && measured[bl] && measured[br])) {
        label = Interface::FreeUnknown;
      } else {
        double span2 = 0.0;
        for (int a = 0; a < 4; ++a)
          for (int b = a + 1; b < 4; ++b)
            span2 = std::max(span2, (mesh.vertices[q[a]] - mesh.vertices[q[b]]).squaredNorm());
        if (span2 > disc2) label = Interface::FreeUnknown;
      }
      mesh.triangles.push_back({tl, tr, br});
      mesh.triangles.push_back({tl, br, bl});
      mesh.labels.push_back(label);
      mesh.labels.push_back(label);
    }
  return mesh;
}

/// ASCII PLY with a per-face "label" property (0 free-occupied, 1 free-unknown,
/// 2 unknown-occupied).
inline void write_ply(const std::string& path, const LabeledMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write mesh: " + path);
  out << "ply\nformat ascii 1.0\n"
      << "element vertex " << mesh.vertices.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "element face " << mesh.triangles.size() << "\n"
      << "property list uchar int vertex_indices\nproperty uchar label\nend_header\n";
  for (const auto& v : mesh.vertices) out << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
    const auto& t = mesh.triangles[i];
    out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << ' ' << static_cast<int>(mesh.labels[i]) << '\n';
  }
}

}  // namespace rendermap
