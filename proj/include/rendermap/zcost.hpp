#pragma once

// Per-pixel comparison of a map render Z_r against the current scan's own
// render Z_s, summed into an integer alignment cost.
//
//                      Z_s free-occupied        Z_s free-unknown        Z_s unknown-occ.  Z_s background
//   Z_r free-occupied  +1 if |dz| > eps else -1  +1 if dz <= 0 else -1   (n/a) ignore      ignore
//   Z_r free-unknown   +1 if dz > 0 else -1      ignore                  (n/a) ignore      ignore
//   Z_r unknown-occ.   ignore                    ignore                  (n/a) ignore      ignore
//   Z_r background     ignore                    ignore                  (n/a) ignore      ignore
//
// with dz = d(p_r) - d(p_s).

#include "rendermap/geometry.hpp"
#include "rendermap/meshify.hpp"
#include "rendermap/png_io.hpp"
#include "rendermap/raster.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace rendermap {

enum class Verdict : int { Reward = -1, Ignore = 0, Penalize = 1 };

/// Which cell of the comparison table a pixel pair fell into.
enum class CostCell : std::uint8_t {
  OccupiedOccupied = 0,  // Z_r free-occupied, Z_s free-occupied
  OccupiedUnknown,       // Z_r free-occupied, Z_s free-unknown
  UnknownOccupied,       // Z_r free-unknown, Z_s free-occupied
  UnknownUnknown,        // both free-unknown
  MapBackground,         // Z_r hit nothing
  ScanBackground,        // Z_s hit nothing (and Z_r did)
  HiddenSurface,         // an unknown-occupied pixel on either side
};
inline constexpr std::size_t kCostCellCount = 7;

struct PixelClass {
  Verdict verdict = Verdict::Ignore;
  CostCell cell = CostCell::MapBackground;
};

inline PixelClass classify_pixel_detail(const RenderedPixel& p_r, const RenderedPixel& p_s, double eps) {
  using I = Interface;
  if (p_r.label == I::Background) return {Verdict::Ignore, CostCell::MapBackground};
  if (p_s.label == I::Background) return {Verdict::Ignore, CostCell::ScanBackground};
  if (p_r.label == I::UnknownOccupied || p_s.label == I::UnknownOccupied)
    return {Verdict::Ignore, CostCell::HiddenSurface};

  const double dz = p_r.depth - p_s.depth;
  if (p_r.label == I::FreeOccupied) {
    if (p_s.label == I::FreeOccupied)
      return {std::abs(dz) <= eps ? Verdict::Reward : Verdict::Penalize, CostCell::OccupiedOccupied};
    return {dz <= 0.0 ? Verdict::Penalize : Verdict::Reward, CostCell::OccupiedUnknown};
  }
  if (p_s.label == I::FreeOccupied)
    return {dz > 0.0 ? Verdict::Penalize : Verdict::Reward, CostCell::UnknownOccupied};
  return {Verdict::Ignore, CostCell::UnknownUnknown};
}

inline Verdict classify_pixel(const RenderedPixel& p_r, const RenderedPixel& p_s, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("classify_pixel: eps must be positive");
  return classify_pixel_detail(p_r, p_s, eps).verdict;
}

/// Score added per pixel, by table cell. Defaults are the plain +-1 table.
struct CostWeights {
  std::array<int, 3> reward{-1, -1, -1};   // OccupiedOccupied, OccupiedUnknown, UnknownOccupied
  std::array<int, 3> penalty{1, 1, 1};

  int score(PixelClass pc) const {
    auto cell = static_cast<std::size_t>(pc.cell);
    if (pc.verdict == Verdict::Ignore || cell > 2) return 0;
    return pc.verdict == Verdict::Reward ? reward[cell] : penalty[cell];
  }
};

struct CostReport {
  std::int64_t total = 0;
  std::int64_t rewarded = 0;
  std::int64_t penalized = 0;
  std::int64_t ignored = 0;
  std::array<std::int64_t, kCostCellCount> cells{};
  double valid_overlap_fraction = 0.0;

  std::int64_t pixel_count() const { return rewarded + penalized + ignored; }
};

inline CostReport cost(const LabeledRender& z_r, const LabeledRender& z_s, double eps,
                       const CostWeights& weights = {}) {
  if (z_r.width() != z_s.width() || z_r.height() != z_s.height())
    throw std::invalid_argument("cost: render dimensions differ (" + std::to_string(z_r.width()) + "x" +
                                std::to_string(z_r.height()) + " vs " + std::to_string(z_s.width()) + "x" +
                                std::to_string(z_s.height()) + ")");
  if (!(eps > 0.0)) throw std::invalid_argument("cost: eps must be positive");
  CostReport rep;
  for (std::size_t i = 0; i < z_r.size(); ++i) {
    PixelClass pc = classify_pixel_detail(z_r.at(i), z_s.at(i), eps);
    ++rep.cells[static_cast<std::size_t>(pc.cell)];
    switch (pc.verdict) {
      case Verdict::Reward: ++rep.rewarded; break;
      case Verdict::Penalize: ++rep.penalized; break;
      case Verdict::Ignore: ++rep.ignored; break;
    }
    rep.total += weights.score(pc);
  }
  if (z_r.size() > 0)
    rep.valid_overlap_fraction = static_cast<double>(rep.rewarded + rep.penalized) / static_cast<double>(z_r.size());
  return rep;
}

/// Cost of observing the scan render `z_s` from pose `x` in the map frame.
inline CostReport evaluate_pose(const LabeledMesh& map_mesh, const LabeledRender& z_s, const CameraModel& cam,
                                const Pose6D& x, double eps, const CostWeights& weights = {}) {
  return cost(render(map_mesh, cam, pose_to_transform(x)), z_s, eps, weights);
}

/// Classification image: blue rewarded, cyan penalised occupied/occupied
/// outliers, magenta penalised occupied/unknown disagreements, red both
/// free-unknown, orange unterminated in the map render, yellow unterminated
/// in the scan, grey hidden surfaces.
inline Rgb8Image classification_image(const LabeledRender& z_r, const LabeledRender& z_s, double eps) {
  if (z_r.width() != z_s.width() || z_r.height() != z_s.height())
    throw std::invalid_argument("classification_image: render dimensions differ");
  Rgb8Image img(z_r.width(), z_r.height());
  for (std::size_t i = 0; i < z_r.size(); ++i) {
    PixelClass pc = classify_pixel_detail(z_r.at(i), z_s.at(i), eps);
    std::array<std::uint8_t, 3> rgb{};
    if (pc.verdict == Verdict::Reward) {
      rgb = {0, 0, 255};
    } else if (pc.verdict == Verdict::Penalize) {
      rgb = pc.cell == CostCell::OccupiedOccupied ? std::array<std::uint8_t, 3>{0, 255, 255}
                                                   : std::array<std::uint8_t, 3>{255, 0, 255};
    } else {
      switch (pc.cell) {
        case CostCell::UnknownUnknown: rgb = {255, 0, 0}; break;
        case CostCell::MapBackground: rgb = {255, 140, 0}; break;
        case CostCell::ScanBackground: rgb = {255, 255, 0}; break;
        default: rgb = {128, 128, 128}; break;
      }
    }
    img.data[i] = rgb;
  }
  return img;
}

}  // namespace rendermap
