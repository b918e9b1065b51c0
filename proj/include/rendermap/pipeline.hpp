#pragma once

// Scan-to-scan matching over a depth sequence with ground truth, drift
// statistics and the files a run leaves behind.

#include "rendermap/depth_io.hpp"
#include "rendermap/geometry.hpp"
#include "rendermap/optimize.hpp"
#include "rendermap/render_icp.hpp"
#include "rendermap/scene.hpp"
#include "rendermap/zcost.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace rendermap {

enum class Method { RenderMap, IcpPointToPlane, IcpPointToPoint };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::RenderMap: return "rendermap";
    case Method::IcpPointToPlane: return "icp-p2plane";
    case Method::IcpPointToPoint: return "icp-p2point";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "rendermap") return Method::RenderMap;
  if (s == "icp-p2plane") return Method::IcpPointToPlane;
  if (s == "icp-p2point") return Method::IcpPointToPoint;
  throw std::invalid_argument("unknown method '" + s + "' (expected rendermap, icp-p2plane or icp-p2point)");
}

struct Frame {
  double timestamp = 0.0;
  DepthImage depth;
  RigidTransform gt;  // camera-to-world
};

struct Sequence {
  CameraModel camera;
  std::vector<Frame> frames;
};

/// Frames of a TUM RGB-D sequence directory (depth.txt + groundtruth.txt),
/// keeping those with a ground-truth pose within `max_dt` and, if
/// `max_seconds` > 0, within that long of the first kept frame.
inline Sequence load_tum_sequence(const std::string& dir, const CameraModel& cam, double max_seconds = 0.0,
                                  double max_dt = 0.02, double depth_scale = kTumDepthScale) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  auto list = load_depth_list((root / "depth.txt").string());
  Trajectory gt = load_trajectory((root / "groundtruth.txt").string());
  Sequence seq;
  seq.camera = cam;
  for (const auto& e : list) {
    auto pose = gt.lookup(e.timestamp, max_dt);
    if (!pose) continue;
    if (max_seconds > 0.0 && !seq.frames.empty() && e.timestamp - seq.frames.front().timestamp > max_seconds) break;
    Frame f;
    f.timestamp = e.timestamp;
    f.depth = load_depth((root / e.path).string(), depth_scale);
    if (f.depth.width() != cam.width || f.depth.height() != cam.height)
      throw std::runtime_error("depth image " + e.path + " does not match the camera size");
    f.gt = *pose;
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

inline Sequence sequence_from_scene(const SceneSpec& spec) {
  spec.validate();
  Sequence seq;
  seq.camera = spec.camera;
  for (std::size_t k = 0; k < spec.trajectory.size(); ++k)
    seq.frames.push_back({spec.trajectory[k].timestamp, synth_render(spec, k), pose_to_transform(spec.trajectory[k].pose)});
  return seq;
}

struct PipelineOptions {
  Method method = Method::RenderMap;
  double interval = 1.0;  // seconds between matched frames
  int render_width = 320;
  int render_height = 240;
  AlignOptions align;
  IcpOptions icp;
  bool warm_start = false;
  int threads = 1;
};

struct MatchRecord {
  std::size_t first = 0, second = 0;
  double t_first = 0.0, t_second = 0.0;
  Method method = Method::RenderMap;
  RigidTransform estimate;      // second camera in the first camera's frame
  RigidTransform ground_truth;
  double translation_error = 0.0;  // m
  double rotation_error = 0.0;     // rad
  double gap = 0.0;                // s
  double drift = 0.0;              // m/s
  int evaluations = 0;             // cost renders, or ICP iterations
  std::int64_t final_cost = 0;     // render cost of the estimate
  bool diverged = false;
  std::string message;
  double wall_time = 0.0;          // s
};

/// Relative pose error: translation and angle of gt^-1 * est.
inline std::pair<double, double> relative_pose_error(const RigidTransform& gt, const RigidTransform& est) {
  RigidTransform d = gt.inverse() * est;
  return {d.translation().norm(), d.rotation_angle()};
}

namespace detail {

inline int resolution_factor(const CameraModel& cam, int w, int h) {
  if (w <= 0 || h <= 0 || cam.width % w != 0 || cam.height % h != 0 || cam.width / w != cam.height / h)
    throw std::invalid_argument("render size " + std::to_string(w) + "x" + std::to_string(h) +
                                " is not an integer reduction of " + std::to_string(cam.width) + "x" +
                                std::to_string(cam.height));
  return cam.width / w;
}

}  // namespace detail

/// Matches one pair; `x0` is the initial relative pose.
inline MatchRecord match_pair(const Sequence& seq, std::size_t i, std::size_t j, const RigidTransform& x0,
                              const PipelineOptions& opts) {
  const Frame& a = seq.frames.at(i);
  const Frame& b = seq.frames.at(j);
  MatchRecord rec;
  rec.first = i;
  rec.second = j;
  rec.t_first = a.timestamp;
  rec.t_second = b.timestamp;
  rec.method = opts.method;
  rec.gap = b.timestamp - a.timestamp;
  if (!(rec.gap > 0.0)) throw std::invalid_argument("match_pair: frames are not time-ordered");
  rec.ground_truth = a.gt.inverse() * b.gt;

  const int f = detail::resolution_factor(seq.camera, opts.render_width, opts.render_height);
  const CameraModel rcam = seq.camera.downsampled(f);
  const DepthImage da = downsample(a.depth, f), db = downsample(b.depth, f);
  const LabeledMesh map = map_mesh_from_scan(da, rcam, opts.align);
  const LabeledRender z_s = scan_render(db, rcam, opts.align);

  auto start = std::chrono::steady_clock::now();
  switch (opts.method) {
    case Method::RenderMap: {
      AlignmentResult r = align_rendered(map, z_s, rcam, transform_to_pose(x0), opts.align);
      rec.estimate = pose_to_transform(r.pose);
      rec.evaluations = r.evaluations;
      rec.diverged = r.rejected_low_overlap;
      rec.message = r.message;
      break;
    }
    case Method::IcpPointToPlane:
    case Method::IcpPointToPoint: {
      IcpResult r = opts.method == Method::IcpPointToPlane ? icp_point_to_plane(a.depth, b.depth, seq.camera, x0, opts.icp)
                                                           : icp_point_to_point(a.depth, b.depth, seq.camera, x0, opts.icp);
      rec.estimate = r.pose;
      rec.evaluations = r.iterations;
      rec.diverged = r.diverged;
      rec.message = r.message;
      break;
    }
  }
  rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  rec.final_cost = evaluate_pose(map, z_s, rcam, transform_to_pose(rec.estimate), opts.align.eps, opts.align.weights).total;
  auto [te, re] = relative_pose_error(rec.ground_truth, rec.estimate);
  rec.translation_error = te;
  rec.rotation_error = re;
  rec.drift = te / rec.gap;
  return rec;
}

/// Matches every chained pair of the sequence (see select_pairs). Pairs are
/// independent unless warm-started, and the result is ordered by pair.
inline std::vector<MatchRecord> run_sequence(const Sequence& seq, const PipelineOptions& opts) {
  if (seq.frames.size() < 2) throw std::invalid_argument("run_sequence: need at least 2 frames");
  std::vector<double> ts;
  for (const auto& f : seq.frames) ts.push_back(f.timestamp);
  const auto pairs = select_pairs(ts, opts.interval);
  std::vector<MatchRecord> out(pairs.size());

  if (opts.warm_start) {
    RigidTransform guess;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      out[k] = match_pair(seq, pairs[k].first, pairs[k].second, guess, opts);
      guess = out[k].diverged ? RigidTransform::identity() : out[k].estimate;
    }
    return out;
  }

  const int workers = std::max(1, std::min<int>(opts.threads, static_cast<int>(pairs.size())));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t k; (k = next++) < pairs.size();) {
      try {
        out[k] = match_pair(seq, pairs[k].first, pairs[k].second, RigidTransform::identity(), opts);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

struct DriftSummary {
  std::size_t pairs = 0;
  std::size_t diverged = 0;
  double median_drift = 0.0;   // m/s, over non-diverged pairs
  double mean_drift = 0.0;     // m/s, over non-diverged pairs
  double median_error = 0.0;   // m
  double fraction_below_1cm = 0.0;  // over all pairs; diverged pairs count as misses
  double median_evaluations = 0.0;
  double bin_width = 0.001;    // m/s
  std::vector<std::size_t> histogram;  // 100 bins over [0, 0.1) m/s, then one overflow bin
};

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

inline DriftSummary drift_stats(const std::vector<MatchRecord>& records) {
  if (records.empty()) throw std::invalid_argument("drift_stats: no records");
  DriftSummary s;
  s.pairs = records.size();
  s.histogram.assign(101, 0);
  std::vector<double> drift, error, evals;
  std::size_t below = 0;
  for (const auto& r : records) {
    if (r.diverged) {
      ++s.diverged;
      continue;
    }
    drift.push_back(r.drift);
    error.push_back(r.translation_error);
    evals.push_back(r.evaluations);
    if (r.translation_error < 0.01) ++below;
    // Integer bin index from a rounded product keeps bin edges exact.
    auto bin = static_cast<std::size_t>(std::floor(r.drift / s.bin_width + 1e-9));
    ++s.histogram[std::min<std::size_t>(bin, 100)];
  }
  s.median_drift = detail::median(drift);
  s.median_error = detail::median(error);
  s.median_evaluations = detail::median(evals);
  // Summation in sorted order so the mean does not depend on record order.
  std::sort(drift.begin(), drift.end());
  s.mean_drift = drift.empty() ? std::numeric_limits<double>::quiet_NaN()
                               : std::accumulate(drift.begin(), drift.end(), 0.0) / static_cast<double>(drift.size());
  s.fraction_below_1cm = static_cast<double>(below) / static_cast<double>(records.size());
  return s;
}

inline constexpr const char* kRecordsHeader =
    "first,second,t_first,t_second,method,est_tx,est_ty,est_tz,est_qx,est_qy,est_qz,est_qw,"
    "gt_tx,gt_ty,gt_tz,gt_qx,gt_qy,gt_qz,gt_qw,translation_error,rotation_error_deg,gap,drift,"
    "evaluations,final_cost,diverged";

namespace detail {

inline void write_pose_fields(std::ostream& out, const RigidTransform& p) {
  Eigen::Quaterniond q(p.rotation());
  q.normalize();
  if (q.w() < 0) q.coeffs() *= -1.0;
  out << p.translation().x() << ',' << p.translation().y() << ',' << p.translation().z() << ',' << q.x() << ','
      << q.y() << ',' << q.z() << ',' << q.w();
}

}  // namespace detail

/// One row per record. Wall time is left out so identical runs give
/// identical files; see write_timing_csv.
inline void write_records_csv(std::ostream& out, const std::vector<MatchRecord>& records) {
  out << kRecordsHeader << '\n' << std::setprecision(9) << std::fixed;
  for (const auto& r : records) {
    out << r.first << ',' << r.second << ',' << std::setprecision(6) << r.t_first << ',' << r.t_second << ','
        << std::setprecision(9) << to_string(r.method) << ',';
    detail::write_pose_fields(out, r.estimate);
    out << ',';
    detail::write_pose_fields(out, r.ground_truth);
    out << ',' << r.translation_error << ',' << rad2deg(r.rotation_error) << ',' << r.gap << ',' << r.drift << ','
        << r.evaluations << ',' << r.final_cost << ',' << (r.diverged ? 1 : 0) << '\n';
  }
}

inline void write_timing_csv(std::ostream& out, const std::vector<MatchRecord>& records) {
  out << "first,second,wall_time\n" << std::fixed << std::setprecision(4);
  for (const auto& r : records) out << r.first << ',' << r.second << ',' << r.wall_time << '\n';
}

inline void write_summary(std::ostream& out, const DriftSummary& s, Method m) {
  out << std::setprecision(6) << std::fixed;
  out << "method " << to_string(m) << '\n'
      << "pairs " << s.pairs << '\n'
      << "diverged " << s.diverged << '\n'
      << "median_drift_m_per_s " << s.median_drift << '\n'
      << "mean_drift_m_per_s " << s.mean_drift << '\n'
      << "median_translation_error_m " << s.median_error << '\n'
      << "fraction_error_below_1cm " << s.fraction_below_1cm << '\n'
      << "median_evaluations " << s.median_evaluations << '\n';
}

inline void write_histogram_csv(std::ostream& out, const DriftSummary& s) {
  out << "bin_lo,bin_hi,count\n" << std::fixed << std::setprecision(3);
  for (std::size_t k = 0; k + 1 < s.histogram.size(); ++k)
    out << k * s.bin_width << ',' << (k + 1) * s.bin_width << ',' << s.histogram[k] << '\n';
  out << 100 * s.bin_width << ",inf," << s.histogram.back() << '\n';
}

/// Bar chart of the drift histogram as a standalone SVG.
inline void write_histogram_svg(std::ostream& out, const DriftSummary& s, const std::string& title) {
  const int bins = static_cast<int>(s.histogram.size());
  const double bar = 6.0, left = 50.0, top = 30.0, height = 200.0;
  std::size_t peak = std::max<std::size_t>(1, *std::max_element(s.histogram.begin(), s.histogram.end()));
  const double width = left + bins * bar + 20.0;
  out << std::fixed << std::setprecision(1);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << top + height + 50
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << left << "\" y=\"18\">" << title << "</text>\n";
  for (int k = 0; k < bins; ++k) {
    double h = height * static_cast<double>(s.histogram[k]) / static_cast<double>(peak);
    out << "<rect x=\"" << left + k * bar << "\" y=\"" << top + height - h << "\" width=\"" << bar - 1 << "\" height=\""
        << h << "\" fill=\"" << (k == bins - 1 ? "#c44" : "#47a") << "\"/>\n";
  }
  out << "<line x1=\"" << left << "\" y1=\"" << top + height << "\" x2=\"" << left + bins * bar << "\" y2=\""
      << top + height << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 100; k += 20)
    out << "<text x=\"" << left + k * bar << "\" y=\"" << top + height + 15 << "\" text-anchor=\"middle\">"
        << std::setprecision(2) << k * s.bin_width << std::setprecision(1) << "</text>\n";
  out << "<text x=\"" << left + 50 * bar << "\" y=\"" << top + height + 35
      << "\" text-anchor=\"middle\">drift (m/s), last bar = overflow</text>\n";
  out << "<text x=\"10\" y=\"" << top + 10 << "\">" << peak << "</text>\n";
  out << "</svg>\n";
}

/// Estimated relative poses in TUM trajectory format, stamped with the time
/// of the second frame of each pair.
inline void write_relative_poses(std::ostream& out, const std::vector<MatchRecord>& records) {
  out << "# relative pose of the second frame in the first; timestamp = second frame\n";
  for (const auto& r : records) write_trajectory_line(out, r.t_second, r.estimate);
}

/// Writes records.csv, timing.csv, summary.txt, drift_hist.csv,
/// drift_hist.svg and relative_poses.txt into `dir`.
inline DriftSummary write_outputs(const std::string& dir, const std::vector<MatchRecord>& records, Method m) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream f(fs::path(dir) / name);
    if (!f) throw std::runtime_error("cannot write " + (fs::path(dir) / name).string());
    return f;
  };
  DriftSummary s = drift_stats(records);
  {
    auto f = open("records.csv");
    write_records_csv(f, records);
  }
  {
    auto f = open("timing.csv");
    write_timing_csv(f, records);
  }
  {
    auto f = open("summary.txt");
    write_summary(f, s, m);
  }
  {
    auto f = open("drift_hist.csv");
    write_histogram_csv(f, s);
  }
  {
    auto f = open("drift_hist.svg");
    write_histogram_svg(f, s, std::string("drift rate, ") + to_string(m));
  }
  {
    auto f = open("relative_poses.txt");
    write_relative_poses(f, records);
  }
  return s;
}

}  // namespace rendermap
