#pragma once

// Derivative-free minimisers and the hybrid pose aligner built from them.
//
// The aligner runs three phases on the render-and-compare cost, each starting
// from the best pose seen so far:
//   1. finite-difference gradient descent with a step-doubling line search,
//   2. Nelder-Mead (reflect 1, expand 2, contract 0.5, shrink 0.5),
//   3. coordinate descent with per-axis step doubling / halving.
// All three share one evaluation budget, and every call of the cost counts.

#include "rendermap/depth_io.hpp"
#include "rendermap/geometry.hpp"
#include "rendermap/meshify.hpp"
#include "rendermap/raster.hpp"
#include "rendermap/zcost.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace rendermap {

template <int N>
using VecN = Eigen::Matrix<double, N, 1>;

template <int N>
struct MinimizeResult {
  VecN<N> x;
  double f = std::numeric_limits<double>::infinity();
  int evaluations = 0;
  bool converged = false;
};

struct NelderMeadOptions {
  int max_evals = 400;
  int max_iters = 100000;
  double alpha = 1.0;  // reflection
  double gamma = 2.0;  // expansion
  double rho = 0.5;    // contraction
  double sigma = 0.5;  // shrink
  double f_tol = 1e-12;
  double x_tol = 1e-8;
};

/// Nelder-Mead from the axis-aligned simplex {x0, x0 + step_i e_i}.
/// `f0`, when finite, is taken as the already known value at x0.
template <int N, class F>
MinimizeResult<N> nelder_mead(F&& f, const VecN<N>& x0, const VecN<N>& step, const NelderMeadOptions& opts,
                              double f0 = std::numeric_limits<double>::quiet_NaN()) {
  MinimizeResult<N> res;
  res.x = x0;
  int evals = 0;
  auto eval = [&](const VecN<N>& x, double& out) {
    if (evals >= opts.max_evals) return false;
    ++evals;
    out = f(x);
    return true;
  };

  std::array<VecN<N>, N + 1> pts;
  std::array<double, N + 1> vals;
  pts[0] = x0;
  if (std::isnan(f0)) {
    if (!eval(x0, vals[0])) return res;
  } else {
    vals[0] = f0;
  }
  res.f = vals[0];
  int have = 1;
  for (int i = 0; i < N; ++i) {
    pts[i + 1] = x0;
    pts[i + 1][i] += step[i];
    if (!eval(pts[i + 1], vals[i + 1])) break;
    ++have;
  }

  auto finish = [&](bool converged) {
    int best = static_cast<int>(std::min_element(vals.begin(), vals.begin() + have) - vals.begin());
    if (vals[best] < res.f || (vals[best] == res.f && best == 0)) {
      res.f = vals[best];
      res.x = pts[best];
    }
    res.evaluations = evals;
    res.converged = converged;
    return res;
  };
  if (have < N + 1) return finish(false);

  std::array<int, N + 1> order;
  for (int iter = 0; iter < opts.max_iters; ++iter) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return vals[a] < vals[b]; });
    const int best = order[0], worst = order[N], second = order[N - 1];

    double spread = vals[worst] - vals[best];
    double size = 0.0;
    for (int i = 0; i <= N; ++i) size = std::max(size, (pts[i] - pts[best]).cwiseAbs().maxCoeff());
    // Both tolerances must hold, as in MATLAB's fminsearch.
    if (spread <= opts.f_tol && size <= opts.x_tol) return finish(true);

    VecN<N> centroid = VecN<N>::Zero();
    for (int k = 0; k < N; ++k) centroid += pts[order[k]];
    centroid /= N;

    VecN<N> xr = centroid + opts.alpha * (centroid - pts[worst]);
    double fr;
    if (!eval(xr, fr)) return finish(false);
    if (fr < vals[best]) {
      VecN<N> xe = centroid + opts.gamma * (xr - centroid);
      double fe;
      if (!eval(xe, fe)) {
        pts[worst] = xr;
        vals[worst] = fr;
        return finish(false);
      }
      if (fe < fr) {
        pts[worst] = xe;
        vals[worst] = fe;
      } else {
        pts[worst] = xr;
        vals[worst] = fr;
      }
      continue;
    }
    if (fr < vals[second]) {
      pts[worst] = xr;
      vals[worst] = fr;
      continue;
    }
    // Contraction: outside when the reflection beat the worst point, inside otherwise.
    bool outside = fr < vals[worst];
    VecN<N> xc = outside ? VecN<N>(centroid + opts.rho * (xr - centroid))
                         : VecN<N>(centroid + opts.rho * (pts[worst] - centroid));
    double fc;
    if (!eval(xc, fc)) return finish(false);
    if (fc < (outside ? fr : vals[worst])) {
      pts[worst] = xc;
      vals[worst] = fc;
      continue;
    }
    for (int k = 1; k <= N; ++k) {
      int i = order[k];
      pts[i] = pts[best] + opts.sigma * (pts[i] - pts[best]);
      if (!eval(pts[i], vals[i])) return finish(false);
    }
  }
  return finish(false);
}

struct CoordinateDescentOptions {
  int max_evals = 200;
  int max_sweeps = 50;
  double improvement_tol = 0.0;  // a sweep must beat this to continue
};

/// Cycles through the axes; on each axis probes +-step, keeps going (doubling
/// the step) while the cost drops, and halves the step on failure until it
/// falls below `min_step`.
template <int N, class F>
MinimizeResult<N> coordinate_descent(F&& f, const VecN<N>& x0, const VecN<N>& step, const VecN<N>& min_step,
                                     const CoordinateDescentOptions& opts,
                                     double f0 = std::numeric_limits<double>::quiet_NaN()) {
  MinimizeResult<N> res;
  res.x = x0;
  int evals = 0;
  auto eval = [&](const VecN<N>& x, double& out) {
    if (evals >= opts.max_evals) return false;
    ++evals;
    out = f(x);
    return true;
  };
  if (std::isnan(f0)) {
    if (!eval(x0, res.f)) return res;
  } else {
    res.f = f0;
  }

  for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    const double f_start = res.f;
    for (int axis = 0; axis < N; ++axis) {
      double s = step[axis];
      while (s >= min_step[axis]) {
        bool moved = false;
        for (double dir : {1.0, -1.0}) {
          VecN<N> xt = res.x;
          xt[axis] += dir * s;
          double ft;
          if (!eval(xt, ft)) {
            res.evaluations = evals;
            return res;
          }
          if (ft < res.f) {
            res.x = xt;
            res.f = ft;
            // Keep striding in the same direction while it pays off.
            double stride = 2.0 * s;
            for (;;) {
              VecN<N> xn = res.x;
              xn[axis] += dir * stride;
              double fn;
              if (!eval(xn, fn)) {
                res.evaluations = evals;
                return res;
              }
              if (!(fn < res.f)) break;
              res.x = xn;
              res.f = fn;
              stride *= 2.0;
            }
            moved = true;
            break;
          }
        }
        if (!moved) s *= 0.5;
      }
    }
    if (!(res.f < f_start - opts.improvement_tol)) {
      res.converged = true;
      break;
    }
  }
  res.evaluations = evals;
  return res;
}

struct GradientDescentOptions {
  int max_evals = 100;
  int max_steps = 20;
  double initial_step = 0.04;  // line-search length along the unit descent direction
  double min_step = 0.002;
};

/// Forward-difference gradient descent. `delta` holds the per-axis difference
/// offsets. Each step normalises the gradient and line-searches along it.
template <int N, class F>
MinimizeResult<N> gradient_descent(F&& f, const VecN<N>& x0, const VecN<N>& delta, const GradientDescentOptions& opts,
                                   double f0 = std::numeric_limits<double>::quiet_NaN()) {
  MinimizeResult<N> res;
  res.x = x0;
  int evals = 0;
  auto eval = [&](const VecN<N>& x, double& out) {
    if (evals >= opts.max_evals) return false;
    ++evals;
    out = f(x);
    return true;
  };
  if (std::isnan(f0)) {
    if (!eval(x0, res.f)) return res;
  } else {
    res.f = f0;
  }

  double step = opts.initial_step;
  for (int it = 0; it < opts.max_steps; ++it) {
    if (!std::isfinite(res.f)) break;
    VecN<N> g;
    for (int i = 0; i < N; ++i) {
      VecN<N> xt = res.x;
      xt[i] += delta[i];
      double ft;
      if (!eval(xt, ft)) {
        res.evaluations = evals;
        return res;
      }
      g[i] = std::isfinite(ft) ? (ft - res.f) / delta[i] : 0.0;
    }
    double gn = g.norm();
    if (gn == 0.0) {
      res.converged = true;
      break;
    }
    VecN<N> dir = -g / gn;

    bool improved = false;
    while (step >= opts.min_step) {
      VecN<N> xt = res.x + step * dir;
      double ft;
      if (!eval(xt, ft)) {
        res.evaluations = evals;
        return res;
      }
      if (ft < res.f) {
        res.x = xt;
        res.f = ft;
        improved = true;
        // One optimistic doubling.
        VecN<N> xd = res.x + step * dir;
        double fd;
        if (!eval(xd, fd)) {
          res.evaluations = evals;
          return res;
        }
        if (fd < res.f) {
          res.x = xd;
          res.f = fd;
          step *= 2.0;
        }
        break;
      }
      step *= 0.5;
    }
    if (!improved) {
      res.converged = true;
      break;
    }
  }
  res.evaluations = evals;
  return res;
}

// ---------------------------------------------------------------------------
// Pose alignment

enum class Phase : std::uint8_t { Initial, GradientDescent, NelderMead, CoordinateDescent };

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::Initial: return "init";
    case Phase::GradientDescent: return "gd";
    case Phase::NelderMead: return "nm";
    case Phase::CoordinateDescent: return "cd";
  }
  return "?";
}

struct TraceEntry {
  int index = 0;
  Pose6D pose;
  std::int64_t cost = 0;
  double overlap = 0.0;
  bool rejected = false;
  Phase phase = Phase::Initial;
};

struct OptimizerOptions {
  int eval_budget = 700;
  int gd_evals = 100;
  int nm_evals = 400;
  int cd_evals = 200;
  int gd_steps = 20;
  int nm_iters = 1000;
  int cd_sweeps = 10;
  int nm_restarts = 3;  // fresh simplex at the best point while the NM share lasts

  double simplex_translation = 0.02;         // m
  double simplex_rotation = deg2rad(1.0);    // rad
  double translation_step = 0.005;           // finite-difference offsets
  double rotation_step = deg2rad(0.25);
  double gd_initial_step = 0.04;             // internal units
  double cd_translation_resolution = 0.0005;
  double cd_rotation_resolution = deg2rad(0.025);
  double convergence_tol = 0.5;              // cost units
  // Internal coordinates carry rotations as rotation_scale * radians so the
  // simplex is not degenerate across mixed units.
  double rotation_scale = 0.5;

  void validate() const {
    if (eval_budget <= 0 || gd_evals < 0 || nm_evals < 0 || cd_evals < 0 || nm_restarts < 0)
      throw std::invalid_argument("optimizer: budgets must be non-negative and eval_budget positive");
    if (!(simplex_translation > 0 && simplex_rotation > 0 && translation_step > 0 && rotation_step > 0 &&
          rotation_scale > 0 && gd_initial_step > 0 && cd_translation_resolution > 0 && cd_rotation_resolution > 0))
      throw std::invalid_argument("optimizer: step sizes must be positive");
  }
};

struct AlignOptions {
  OptimizerOptions optimizer;
  MeshifyOptions meshify;
  double eps = 0.1;
  CostWeights weights;
  double blur_sigma = 0.0;  // optional Gaussian pre-blur of depth (pixels), 0 = off
  // Candidates whose overlap drops below this fraction of the starting
  // overlap are rejected.
  double min_overlap_ratio = 0.2;
  // A start whose overlap fraction is below this is rejected outright.
  double min_initial_overlap = 0.01;
  std::function<void(const TraceEntry&)> trace;
};

struct AlignmentResult {
  Pose6D pose;
  std::int64_t cost = 0;
  int evaluations = 0;
  bool converged = false;
  bool rejected_low_overlap = false;
  std::string message;
};

/// The scan side of the comparison: its mesh rendered from its own pose.
inline LabeledRender scan_render(const DepthImage& scan, const CameraModel& cam, const AlignOptions& opts) {
  DepthImage d = opts.blur_sigma > 0.0 ? gaussian_blur(scan, opts.blur_sigma) : scan;
  return render(meshify(d, cam, opts.meshify), cam, RigidTransform::identity());
}

inline LabeledMesh map_mesh_from_scan(const DepthImage& scan, const CameraModel& cam, const AlignOptions& opts) {
  DepthImage d = opts.blur_sigma > 0.0 ? gaussian_blur(scan, opts.blur_sigma) : scan;
  return meshify(d, cam, opts.meshify);
}

/// Minimises the render-and-compare cost over the pose of the scan camera in
/// the map frame, starting at x0.
inline AlignmentResult align_rendered(const LabeledMesh& map_mesh, const LabeledRender& z_s, const CameraModel& cam,
                                      const Pose6D& x0, const AlignOptions& opts) {
  const OptimizerOptions& o = opts.optimizer;
  o.validate();
  if (map_mesh.empty()) throw std::invalid_argument("align: map mesh is empty");
  if (!x0.finite()) throw std::invalid_argument("align: initial pose not finite");

  using V6 = VecN<6>;
  const double rs = o.rotation_scale;
  auto to_internal = [rs](const Pose6D& p) {
    V6 v;
    v << p.x, p.y, p.z, rs * p.theta_x, rs * p.theta_y, rs * p.theta_z;
    return v;
  };
  auto to_pose = [rs](const V6& v) { return Pose6D{v[0], v[1], v[2], v[3] / rs, v[4] / rs, v[5] / rs}; };

  AlignmentResult result;
  result.pose = x0;

  Phase phase = Phase::Initial;
  int used = 0;
  double overlap_floor = 0.0;
  double best_f = std::numeric_limits<double>::infinity();
  V6 best_x = to_internal(x0);
  std::int64_t best_cost = 0;
  auto objective = [&](const V6& v) -> double {
    if (used >= o.eval_budget) throw std::logic_error("align: evaluation budget exceeded");
    ++used;
    Pose6D p = to_pose(v);
    CostReport rep = evaluate_pose(map_mesh, z_s, cam, p, opts.eps, opts.weights);
    bool rejected = rep.valid_overlap_fraction < overlap_floor;
    if (opts.trace) opts.trace({used, p, rep.total, rep.valid_overlap_fraction, rejected, phase});
    if (rejected) return std::numeric_limits<double>::infinity();
    auto f = static_cast<double>(rep.total);
    if (f < best_f) {
      best_f = f;
      best_x = v;
      best_cost = rep.total;
    }
    return f;
  };

  // Starting point.
  const V6 v0 = to_internal(x0);
  {
    ++used;
    CostReport rep = evaluate_pose(map_mesh, z_s, cam, x0, opts.eps, opts.weights);
    bool rejected = rep.valid_overlap_fraction < opts.min_initial_overlap;
    if (opts.trace) opts.trace({used, x0, rep.total, rep.valid_overlap_fraction, rejected, phase});
    result.cost = rep.total;
    result.evaluations = used;
    if (rejected) {
      result.rejected_low_overlap = true;
      result.message = "initial pose sees almost none of the map";
      return result;
    }
    overlap_floor = opts.min_overlap_ratio * rep.valid_overlap_fraction;
    best_f = static_cast<double>(rep.total);
    best_x = v0;
    best_cost = rep.total;
  }

  auto remaining = [&](int cap) { return std::max(0, std::min(cap, o.eval_budget - used)); };

  // 1. gradient descent
  phase = Phase::GradientDescent;
  GradientDescentOptions gdo;
  gdo.max_evals = remaining(o.gd_evals);
  gdo.max_steps = o.gd_steps;
  gdo.initial_step = o.gd_initial_step;
  gdo.min_step = 0.05 * o.gd_initial_step;
  V6 delta;
  delta << o.translation_step, o.translation_step, o.translation_step, rs * o.rotation_step, rs * o.rotation_step,
      rs * o.rotation_step;
  if (gdo.max_evals > 0) gradient_descent<6>(objective, best_x, delta, gdo, best_f);

  // 2. Nelder-Mead
  phase = Phase::NelderMead;
  NelderMeadOptions nmo;
  nmo.max_evals = remaining(o.nm_evals);
  nmo.max_iters = o.nm_iters;
  nmo.f_tol = o.convergence_tol;
  nmo.x_tol = std::min(o.cd_translation_resolution, rs * o.cd_rotation_resolution);
  V6 simplex;
  simplex << o.simplex_translation, o.simplex_translation, o.simplex_translation, rs * o.simplex_rotation,
      rs * o.simplex_rotation, rs * o.simplex_rotation;
  bool nm_converged = false;
  // A collapsed simplex is restarted around the best point; stop once a
  // restart no longer improves the cost.
  const int nm_end = std::min(o.eval_budget, used + nmo.max_evals);
  for (int round = 0; round <= o.nm_restarts && nm_end - used > 7; ++round) {
    nmo.max_evals = nm_end - used;
    const double before = best_f;
    nm_converged = nelder_mead<6>(objective, V6(best_x), simplex, nmo, best_f).converged;
    if (!nm_converged || !(best_f < before - o.convergence_tol)) break;
  }

  // 3. coordinate descent
  phase = Phase::CoordinateDescent;
  CoordinateDescentOptions cdo;
  cdo.max_evals = remaining(o.cd_evals);
  cdo.max_sweeps = o.cd_sweeps;
  cdo.improvement_tol = o.convergence_tol;
  V6 cd_step, cd_min;
  cd_step << 4 * o.translation_step, 4 * o.translation_step, 4 * o.translation_step, rs * 4 * o.rotation_step,
      rs * 4 * o.rotation_step, rs * 4 * o.rotation_step;
  cd_min << o.cd_translation_resolution, o.cd_translation_resolution, o.cd_translation_resolution,
      rs * o.cd_rotation_resolution, rs * o.cd_rotation_resolution, rs * o.cd_rotation_resolution;
  bool cd_converged = false;
  if (cdo.max_evals > 0) cd_converged = coordinate_descent<6>(objective, V6(best_x), cd_step, cd_min, cdo, best_f).converged;

  result.pose = to_pose(best_x);
  result.cost = best_cost;
  result.evaluations = used;
  result.converged = cd_converged || (nm_converged && cdo.max_evals == 0);
  if (!result.converged) result.message = "evaluation budget exhausted before convergence";
  return result;
}

/// Meshes and renders `scan_depth` once, then aligns it against `map_mesh`.
inline AlignmentResult align(const LabeledMesh& map_mesh, const DepthImage& scan_depth, const CameraModel& cam,
                             const Pose6D& x0, const AlignOptions& opts = {}) {
  if (map_mesh.empty()) throw std::invalid_argument("align: map mesh is empty");
  return align_rendered(map_mesh, scan_render(scan_depth, cam, opts), cam, x0, opts);
}

}  // namespace rendermap
