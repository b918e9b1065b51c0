#pragma once

// Depth images and trajectories in the TUM RGB-D layout:
//   depth/<stamp>.png   16-bit, value / depth_scale metres, 0 = no return
//   depth.txt           "timestamp filename" per line, '#' comments
//   groundtruth.txt     "timestamp tx ty tz qx qy qz qw" per line

#include "rendermap/geometry.hpp"
#include "rendermap/png_io.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rendermap {

inline constexpr double kTumDepthScale = 5000.0;

/// Row-major grid of metric depths. Pixels without a return hold NaN so that
/// accidental arithmetic on them is visible downstream.
class DepthImage {
 public:
  static constexpr double kInvalid = std::numeric_limits<double>::quiet_NaN();

  DepthImage() = default;
  DepthImage(int width, int height)
      : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height, kInvalid) {
    if (width < 0 || height < 0) throw std::invalid_argument("depth image: negative dimensions");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }

  double at(int col, int row) const { return data_[index(col, row)]; }
  double& at(int col, int row) { return data_[index(col, row)]; }
  bool valid(int col, int row) const { return is_valid_depth(at(col, row)); }

  static bool is_valid_depth(double d) { return std::isfinite(d) && d > 0.0; }

  /// Stores `d` if it is a usable depth, otherwise the invalid marker.
  void set(int col, int row, double d) { at(col, row) = is_valid_depth(d) ? d : kInvalid; }

  const std::vector<double>& data() const { return data_; }

  std::optional<double> timestamp;

 private:
  std::size_t index(int col, int row) const { return static_cast<std::size_t>(row) * width_ + col; }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

inline DepthImage load_depth(const std::string& path, double depth_scale = kTumDepthScale) {
  if (!(depth_scale > 0.0) || !std::isfinite(depth_scale))
    throw std::invalid_argument("load_depth: depth_scale must be positive, got " + std::to_string(depth_scale));
  if (!std::filesystem::exists(path)) throw std::runtime_error("depth image not found: " + path);
  Gray16Image raw = read_png16(path);
  DepthImage d(raw.width, raw.height);
  for (int r = 0; r < raw.height; ++r)
    for (int c = 0; c < raw.width; ++c) {
      std::uint16_t v = raw.data[static_cast<std::size_t>(r) * raw.width + c];
      if (v != 0) d.at(c, r) = v / depth_scale;
    }
  return d;
}

/// Quantises to the nearest count; invalid pixels and depths that would
/// overflow 16 bits are written as 0 (no return).
inline void save_depth(const std::string& path, const DepthImage& d, double depth_scale = kTumDepthScale) {
  if (!(depth_scale > 0.0)) throw std::invalid_argument("save_depth: depth_scale must be positive");
  Gray16Image raw{d.width(), d.height(), std::vector<std::uint16_t>(d.size(), 0)};
  for (int r = 0; r < d.height(); ++r)
    for (int c = 0; c < d.width(); ++c) {
      if (!d.valid(c, r)) continue;
      double counts = std::round(d.at(c, r) * depth_scale);
      if (counts >= 1.0 && counts <= 65535.0)
        raw.data[static_cast<std::size_t>(r) * d.width() + c] = static_cast<std::uint16_t>(counts);
    }
  write_png16(path, raw);
}

/// Subsamples by keeping pixel (i*factor, j*factor). Pair with
/// CameraModel::downsampled(factor).
inline DepthImage downsample(const DepthImage& d, int factor) {
  if (factor < 1) throw std::invalid_argument("downsample: factor must be >= 1");
  if (factor == 1) return d;
  DepthImage out((d.width() + factor - 1) / factor, (d.height() + factor - 1) / factor);
  for (int r = 0; r < out.height(); ++r)
    for (int c = 0; c < out.width(); ++c) out.at(c, r) = d.at(c * factor, r * factor);
  out.timestamp = d.timestamp;
  return out;
}

/// Invalidates every return beyond `max_range`.
inline DepthImage clip_range(const DepthImage& d, double max_range) {
  DepthImage out = d;
  for (int r = 0; r < d.height(); ++r)
    for (int c = 0; c < d.width(); ++c)
      if (d.valid(c, r) && d.at(c, r) > max_range) out.at(c, r) = DepthImage::kInvalid;
  return out;
}

/// Separable Gaussian blur over valid pixels. Near the border or a hole the
/// window shrinks symmetrically, so a linear ramp passes through unchanged.
/// Invalid pixels stay invalid. A step larger than `max_step` between
/// neighbours also stops the window, so surfaces do not bleed into each other.
inline DepthImage gaussian_blur(const DepthImage& d, double sigma,
                                double max_step = std::numeric_limits<double>::infinity()) {
  if (!(sigma > 0.0)) return d;
  int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  for (int k = -radius; k <= radius; ++k) kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));

  const int w = d.width(), h = d.height();
  auto pass = [&](const DepthImage& src, bool horizontal) {
    DepthImage dst(w, h);
    dst.timestamp = src.timestamp;
    auto ok = [&](int cc, int rr) { return cc >= 0 && cc < w && rr >= 0 && rr < h && src.valid(cc, rr); };
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        if (!src.valid(c, r)) continue;
        int reach = 0;
        while (reach < radius) {
          int k = reach + 1;
          bool both = horizontal ? ok(c - k, r) && ok(c + k, r) : ok(c, r - k) && ok(c, r + k);
          if (!both) break;
          if (horizontal ? std::abs(src.at(c - k, r) - src.at(c - k + 1, r)) > max_step ||
                               std::abs(src.at(c + k, r) - src.at(c + k - 1, r)) > max_step
                         : std::abs(src.at(c, r - k) - src.at(c, r - k + 1)) > max_step ||
                               std::abs(src.at(c, r + k) - src.at(c, r + k - 1)) > max_step)
            break;
          reach = k;
        }
        double sum = 0.0, wsum = 0.0;
        for (int k = -reach; k <= reach; ++k) {
          sum += kernel[k + radius] * (horizontal ? src.at(c + k, r) : src.at(c, r + k));
          wsum += kernel[k + radius];
        }
        dst.at(c, r) = sum / wsum;
      }
    return dst;
  };
  return pass(pass(d, true), false);
}

struct StampedPose {
  double timestamp = 0.0;
  RigidTransform pose;
};

struct Trajectory {
  std::vector<StampedPose> poses;

  bool empty() const { return poses.empty(); }
  std::size_t size() const { return poses.size(); }

  /// Pose with the nearest timestamp, if it lies within `max_dt` seconds.
  std::optional<RigidTransform> lookup(double t, double max_dt = 0.02) const {
    if (poses.empty()) return std::nullopt;
    auto it = std::lower_bound(poses.begin(), poses.end(), t,
                               [](const StampedPose& p, double v) { return p.timestamp < v; });
    const StampedPose* best = nullptr;
    if (it != poses.end()) best = &*it;
    if (it != poses.begin()) {
      const StampedPose& prev = *std::prev(it);
      if (!best || std::abs(prev.timestamp - t) <= std::abs(best->timestamp - t)) best = &prev;
    }
    if (std::abs(best->timestamp - t) > max_dt) return std::nullopt;
    return best->pose;
  }
};

inline Mat3 quaternion_to_matrix(double qx, double qy, double qz, double qw) {
  Eigen::Quaterniond q(qw, qx, qy, qz);
  if (!(q.norm() > 0.0)) throw std::invalid_argument("zero quaternion");
  return q.normalized().toRotationMatrix();
}

namespace detail {

inline bool is_blank_or_comment(const std::string& line) {
  auto pos = line.find_first_not_of(" \t\r");
  return pos == std::string::npos || line[pos] == '#';
}

}  // namespace detail

inline Trajectory parse_trajectory(std::istream& in, const std::string& source = "<stream>") {
  Trajectory traj;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::is_blank_or_comment(line)) continue;
    std::istringstream ss(line);
    double v[8];
    for (double& x : v)
      if (!(ss >> x)) throw std::runtime_error(source + ":" + std::to_string(line_no) + ": malformed trajectory line");
    std::string extra;
    if (ss >> extra) throw std::runtime_error(source + ":" + std::to_string(line_no) + ": trailing fields");
    for (double x : v)
      if (!std::isfinite(x)) throw std::runtime_error(source + ":" + std::to_string(line_no) + ": non-finite value");
    Mat3 r;
    try {
      r = quaternion_to_matrix(v[4], v[5], v[6], v[7]);
    } catch (const std::invalid_argument&) {
      throw std::runtime_error(source + ":" + std::to_string(line_no) + ": zero quaternion");
    }
    if (!traj.poses.empty() && !(v[0] > traj.poses.back().timestamp))
      throw std::runtime_error(source + ":" + std::to_string(line_no) + ": timestamps not strictly increasing");
    traj.poses.push_back({v[0], RigidTransform(r, Vec3(v[1], v[2], v[3]))});
  }
  return traj;
}

inline Trajectory load_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trajectory: " + path);
  return parse_trajectory(in, path);
}

inline void write_trajectory_line(std::ostream& out, double t, const RigidTransform& pose) {
  Eigen::Quaterniond q(pose.rotation());
  q.normalize();
  if (q.w() < 0) q.coeffs() *= -1.0;
  const Vec3& p = pose.translation();
  out << std::fixed << std::setprecision(6) << t << std::setprecision(9) << ' ' << p.x() << ' ' << p.y() << ' '
      << p.z() << ' ' << q.x() << ' ' << q.y() << ' ' << q.z() << ' ' << q.w() << '\n';
}

inline void save_trajectory(const std::string& path, const Trajectory& traj) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trajectory: " + path);
  out << "# timestamp tx ty tz qx qy qz qw\n";
  for (const auto& sp : traj.poses) write_trajectory_line(out, sp.timestamp, sp.pose);
}

/// Chains pairs so each starts where the previous one ended: from frame i,
/// pick the first later frame j with t_j - t_i >= interval.
inline std::vector<std::pair<std::size_t, std::size_t>> select_pairs(const std::vector<double>& timestamps,
                                                                     double interval) {
  if (timestamps.size() < 2) throw std::invalid_argument("select_pairs: need at least 2 frames");
  if (interval < 0.0) throw std::invalid_argument("select_pairs: interval must be non-negative");
  for (std::size_t k = 1; k < timestamps.size(); ++k)
    if (timestamps[k] < timestamps[k - 1]) throw std::invalid_argument("select_pairs: frames not time-ordered");
  // Absorbs rounding in differences of large epoch timestamps.
  constexpr double kSlack = 1e-9;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::size_t i = 0;
  while (i + 1 < timestamps.size()) {
    std::size_t j = i + 1;
    while (j < timestamps.size() && timestamps[j] - timestamps[i] < interval - kSlack) ++j;
    if (j >= timestamps.size()) break;
    pairs.emplace_back(i, j);
    i = j;
  }
  return pairs;
}

struct DepthListEntry {
  double timestamp = 0.0;
  std::string path;  // relative to the dataset root
};

/// Parses a TUM "depth.txt" listing.
inline std::vector<DepthListEntry> load_depth_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open depth list: " + path);
  std::vector<DepthListEntry> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::is_blank_or_comment(line)) continue;
    std::istringstream ss(line);
    DepthListEntry e;
    if (!(ss >> e.timestamp >> e.path)) throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed line");
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace rendermap
