// rendermap command-line tool: align-pair, run, synth, render-debug.
//
// Options may also come from an INI-style key=value file given with
// --config, one [section] per subcommand; command-line flags win.

#include "rendermap/depth_io.hpp"
#include "rendermap/meshify.hpp"
#include "rendermap/optimize.hpp"
#include "rendermap/pipeline.hpp"
#include "rendermap/png_io.hpp"
#include "rendermap/raster.hpp"
#include "rendermap/render_icp.hpp"
#include "rendermap/scene.hpp"
#include "rendermap/zcost.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace rendermap;

namespace {

struct CameraFlags {
  std::optional<int> width, height;
  std::optional<double> fx, fy, cx, cy;

  bool any() const { return width || height || fx || fy || cx || cy; }
  CameraModel apply(CameraModel cam) const {
    if (width) cam.width = *width;
    if (height) cam.height = *height;
    if (fx) cam.fx = *fx;
    if (fy) cam.fy = *fy;
    if (cx) cam.cx = *cx;
    if (cy) cam.cy = *cy;
    cam.validate();
    return cam;
  }
};

struct RunConfig {
  std::string dataset;
  std::string scene;
  std::string method = "rendermap";
  CameraFlags camera;
  double depth_scale = kTumDepthScale;
  double interval = 1.0;
  double max_seconds = 0.0;
  bool warm_start = false;
  int threads = 1;
  std::string out = "out";
  PipelineOptions pipe;
  std::optional<std::uint64_t> seed;
};

void add_camera(CLI::App* app, CameraFlags& c) {
  app->add_option("--width", c.width, "image width (px)")->group("Camera");
  app->add_option("--height", c.height, "image height (px)")->group("Camera");
  app->add_option("--fx", c.fx, "focal length x (px)")->group("Camera");
  app->add_option("--fy", c.fy, "focal length y (px)")->group("Camera");
  app->add_option("--cx", c.cx, "principal point x (px)")->group("Camera");
  app->add_option("--cy", c.cy, "principal point y (px)")->group("Camera");
}

void add_matching(CLI::App* app, RunConfig& c) {
  auto& a = c.pipe.align;
  auto& o = a.optimizer;
  auto& icp = c.pipe.icp;
  auto pos = CLI::PositiveNumber;
  app->add_option("--method", c.method, "rendermap, icp-p2plane or icp-p2point")
      ->check(CLI::IsMember({"rendermap", "icp-p2plane", "icp-p2point"}))
      ->capture_default_str();
  app->add_option("--depth-scale", c.depth_scale, "depth PNG units per metre")->check(pos)->capture_default_str();
  app->add_option("--eps", a.eps, "depth agreement tolerance (m)")->check(pos)->capture_default_str();
  app->add_option("--max-range", a.meshify.max_range, "sensor range (m)")->check(pos)->capture_default_str();
  app->add_option("--discontinuity", a.meshify.discontinuity, "mesh discontinuity threshold (m)")
      ->check(pos)
      ->capture_default_str();
  app->add_option("--blur-sigma", a.blur_sigma, "depth pre-blur before meshing (px, 0 = off)")->capture_default_str();
  app->add_option("--render-width", c.pipe.render_width, "render width (px)")->check(pos)->capture_default_str();
  app->add_option("--render-height", c.pipe.render_height, "render height (px)")->check(pos)->capture_default_str();

  const char* opt = "Optimizer";
  app->add_option("--eval-budget", o.eval_budget, "cost evaluations per alignment")->group(opt)->capture_default_str();
  app->add_option("--gd-evals", o.gd_evals, "gradient-descent share")->group(opt)->capture_default_str();
  app->add_option("--nm-evals", o.nm_evals, "Nelder-Mead share")->group(opt)->capture_default_str();
  app->add_option("--cd-evals", o.cd_evals, "coordinate-descent share")->group(opt)->capture_default_str();
  app->add_option("--rotation-scale", o.rotation_scale, "rotation scaling inside the optimizer")
      ->group(opt)
      ->check(pos)
      ->capture_default_str();
  app->add_option("--convergence-tol", o.convergence_tol, "cost change treated as no change")
      ->group(opt)
      ->capture_default_str();

  const char* ig = "ICP";
  app->add_option("--icp-iterations", icp.max_iterations, "ICP iteration cap")->group(ig)->check(pos)->capture_default_str();
  app->add_option("--z-tolerance", icp.z_tolerance, "projective association gate (m)")
      ->group(ig)
      ->check(pos)
      ->capture_default_str();
  app->add_option("--rejection-threshold", icp.rejection_threshold, "point-to-point pair rejection (m)")
      ->group(ig)
      ->check(pos)
      ->capture_default_str();
  app->add_option("--icp-downsample", icp.downsample_factor, "ICP image downsampling factor")
      ->group(ig)
      ->check(pos)
      ->capture_default_str();
  app->add_flag("--render-correspondences", icp.render_correspondences,
                "find point-to-plane pairs through a normal-coded render")
      ->group(ig);
}

void finalize(RunConfig& c) {
  c.pipe.method = parse_method(c.method);
  c.pipe.align.optimizer.validate();
  c.pipe.icp.max_range = c.pipe.align.meshify.max_range;
  c.pipe.interval = c.interval;
  c.pipe.warm_start = c.warm_start;
  c.pipe.threads = c.threads;
}

// Dataset camera: camera.txt next to the data if present, else TUM fr3.
CameraModel dataset_camera(const std::string& dir, const CameraFlags& flags) {
  CameraModel cam = CameraModel::tum_fr3();
  fs::path p = fs::path(dir) / "camera.txt";
  if (fs::exists(p)) {
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ss(line);
      if (!(ss >> cam.width >> cam.height >> cam.fx >> cam.fy >> cam.cx >> cam.cy))
        throw std::runtime_error(p.string() + ": expected 'W H fx fy cx cy'");
      break;
    }
  }
  return flags.apply(cam);
}

Sequence load_source(const RunConfig& c) {
  if (!c.scene.empty()) {
    SceneSpec spec = load_scene(c.scene);
    spec.camera = c.camera.apply(spec.camera);
    if (c.seed) spec.seed = *c.seed;
    return sequence_from_scene(spec);
  }
  return load_tum_sequence(c.dataset, dataset_camera(c.dataset, c.camera), c.max_seconds, 0.02, c.depth_scale);
}

void write_config(const fs::path& dir, const CLI::App* sub) {
  std::ofstream f(dir / "config_resolved");
  f << "# effective parameters; rerun with: rendermap --config <this file> " << sub->get_name() << '\n';
  f << '[' << sub->get_name() << "]\n";
  std::istringstream body(sub->config_to_str(true, false));
  for (std::string line; std::getline(body, line);)
    if (line.rfind("config=", 0) != 0) f << line << '\n';
}

void print_pose(std::ostream& out, const Pose6D& p) {
  out << std::fixed << std::setprecision(6) << p.x << ' ' << p.y << ' ' << p.z << ' ' << rad2deg(p.theta_x) << ' '
      << rad2deg(p.theta_y) << ' ' << rad2deg(p.theta_z);
}

// Loads the two frames of a pair: scene frame indices or depth PNG paths.
struct PairInput {
  CameraModel cam;
  DepthImage a, b;
  std::optional<RigidTransform> truth;
};

PairInput load_pair(const RunConfig& c, const std::string& first, const std::string& second) {
  PairInput in;
  if (!c.scene.empty()) {
    SceneSpec spec = load_scene(c.scene);
    spec.camera = c.camera.apply(spec.camera);
    if (c.seed) spec.seed = *c.seed;
    spec.validate();
    auto index = [&](const std::string& s) {
      std::size_t pos = 0;
      unsigned long k = std::stoul(s, &pos);
      if (pos != s.size() || k >= spec.trajectory.size())
        throw std::runtime_error("frame '" + s + "' is not an index into the scene's " +
                                 std::to_string(spec.trajectory.size()) + " frames");
      return static_cast<std::size_t>(k);
    };
    std::size_t i = index(first), j = index(second);
    in.cam = spec.camera;
    in.a = synth_render(spec, i);
    in.b = synth_render(spec, j);
    in.truth = pose_to_transform(spec.trajectory[i].pose).inverse() * pose_to_transform(spec.trajectory[j].pose);
    return in;
  }
  in.a = load_depth(first, c.depth_scale);
  in.b = load_depth(second, c.depth_scale);
  in.cam = dataset_camera(fs::path(first).parent_path().parent_path().string(), c.camera);
  if (in.a.width() != in.cam.width || in.a.height() != in.cam.height || in.b.width() != in.cam.width ||
      in.b.height() != in.cam.height)
    throw std::runtime_error("depth images do not match the " + std::to_string(in.cam.width) + "x" +
                             std::to_string(in.cam.height) + " camera; set --width/--height and intrinsics");
  return in;
}

int cmd_align_pair(const RunConfig& c, const std::string& first, const std::string& second, const CLI::App* sub) {
  PairInput in = load_pair(c, first, second);
  fs::path out(c.out);
  fs::create_directories(out);
  write_config(out, sub);

  const int f = [&] {
    const CameraModel& k = in.cam;
    if (k.width % c.pipe.render_width || k.height % c.pipe.render_height ||
        k.width / c.pipe.render_width != k.height / c.pipe.render_height)
      throw std::runtime_error("render size must be an integer reduction of the image size");
    return k.width / c.pipe.render_width;
  }();
  const CameraModel rcam = in.cam.downsampled(f);
  const DepthImage da = downsample(in.a, f), db = downsample(in.b, f);
  const LabeledMesh map = map_mesh_from_scan(da, rcam, c.pipe.align);
  const LabeledRender z_s = scan_render(db, rcam, c.pipe.align);

  Pose6D est;
  std::string status;
  std::ofstream trace(out / "trace.csv");
  trace << "evaluation,phase,x,y,z,rx_deg,ry_deg,rz_deg,cost,overlap,rejected\n";
  if (c.pipe.method == Method::RenderMap) {
    AlignOptions opts = c.pipe.align;
    opts.trace = [&](const TraceEntry& t) {
      trace << t.index << ',' << to_string(t.phase) << std::setprecision(9) << ',' << t.pose.x << ',' << t.pose.y
            << ',' << t.pose.z << ',' << rad2deg(t.pose.theta_x) << ',' << rad2deg(t.pose.theta_y) << ','
            << rad2deg(t.pose.theta_z) << ',' << t.cost << ',' << t.overlap << ',' << (t.rejected ? 1 : 0) << '\n';
    };
    AlignmentResult r = align_rendered(map, z_s, rcam, Pose6D{}, opts);
    est = r.pose;
    status = r.rejected_low_overlap ? "rejected" : r.converged ? "converged" : "budget";
    std::cout << "evaluations " << r.evaluations << '\n';
  } else {
    IcpResult r = c.pipe.method == Method::IcpPointToPlane
                      ? icp_point_to_plane(in.a, in.b, in.cam, RigidTransform::identity(), c.pipe.icp)
                      : icp_point_to_point(in.a, in.b, in.cam, RigidTransform::identity(), c.pipe.icp);
    est = transform_to_pose(r.pose);
    status = r.diverged ? "diverged" : r.converged ? "converged" : "iteration-limit";
    for (std::size_t k = 0; k < r.rms_history.size(); ++k) trace << k + 1 << ",icp,,,,,,," << r.rms_history[k] << ",,\n";
    std::cout << "iterations " << r.iterations << '\n';
    if (!r.message.empty()) std::cout << "message " << r.message << '\n';
  }

  LabeledRender z_r = render(map, rcam, pose_to_transform(est));
  CostReport rep = cost(z_r, z_s, c.pipe.align.eps, c.pipe.align.weights);
  write_png_rgb((out / "classification.png").string(), classification_image(z_r, z_s, c.pipe.align.eps));
  write_png_rgb((out / "map_render.png").string(), false_color(z_r, c.pipe.align.meshify.max_range));
  write_png_rgb((out / "scan_render.png").string(), false_color(z_s, c.pipe.align.meshify.max_range));

  std::ofstream pose(out / "pose.txt");
  pose << "# second frame in the first frame's camera: x y z (m) rx ry rz (deg, Z-Y-X)\n";
  print_pose(pose, est);
  pose << '\n';
  std::cout << "status " << status << "\npose ";
  print_pose(std::cout, est);
  std::cout << "\ncost " << rep.total << '\n';
  if (in.truth) {
    auto [te, re] = relative_pose_error(*in.truth, pose_to_transform(est));
    std::cout << "truth ";
    print_pose(std::cout, transform_to_pose(*in.truth));
    std::cout << "\ntranslation_error " << te << "\nrotation_error_deg " << rad2deg(re) << '\n';
  }
  return 0;
}

int cmd_run(const RunConfig& c, const CLI::App* sub) {
  Sequence seq = load_source(c);
  if (seq.frames.size() < 2)
    throw std::runtime_error("source has " + std::to_string(seq.frames.size()) + " usable frame(s); need at least 2");
  fs::path out(c.out);
  fs::create_directories(out);
  write_config(out, sub);
  auto records = run_sequence(seq, c.pipe);
  DriftSummary s = write_outputs(out.string(), records, c.pipe.method);
  write_summary(std::cout, s, c.pipe.method);
  return 0;
}

int cmd_synth(const std::string& scene_path, const std::string& out_dir, std::optional<std::uint64_t> seed) {
  SceneSpec spec = load_scene(scene_path);
  if (seed) spec.seed = *seed;
  spec.validate();
  fs::path out(out_dir);
  fs::create_directories(out / "depth");
  std::ofstream list(out / "depth.txt");
  list << "# timestamp filename\n";
  for (std::size_t k = 0; k < spec.trajectory.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "depth/%06zu.png", k);
    save_depth((out / name).string(), synth_render(spec, k));
    list << std::fixed << std::setprecision(6) << spec.trajectory[k].timestamp << ' ' << name << '\n';
  }
  save_trajectory((out / "groundtruth.txt").string(), scene_trajectory(spec));
  std::ofstream cam(out / "camera.txt");
  const CameraModel& k = spec.camera;
  cam << "# width height fx fy cx cy\n"
      << k.width << ' ' << k.height << ' ' << std::setprecision(17) << k.fx << ' ' << k.fy << ' ' << k.cx << ' ' << k.cy
      << '\n';
  std::cout << "wrote " << spec.trajectory.size() << " frames to " << out.string() << '\n';
  return 0;
}

int cmd_render_debug(const RunConfig& c, const std::string& first, const std::string& second,
                     const std::vector<double>& pose_args, const CLI::App* sub) {
  PairInput in = load_pair(c, first, second);
  fs::path out(c.out);
  fs::create_directories(out);
  write_config(out, sub);
  if (in.cam.width % c.pipe.render_width || in.cam.width / c.pipe.render_width != in.cam.height / c.pipe.render_height)
    throw std::runtime_error("render size must be an integer reduction of the image size");
  const int f = in.cam.width / c.pipe.render_width;
  const CameraModel rcam = in.cam.downsampled(f);
  const DepthImage da = downsample(in.a, f), db = downsample(in.b, f);

  Pose6D x;
  if (!pose_args.empty()) {
    x = {pose_args[0], pose_args[1], pose_args[2], deg2rad(pose_args[3]), deg2rad(pose_args[4]), deg2rad(pose_args[5])};
  } else if (in.truth) {
    x = transform_to_pose(*in.truth);
  }
  const LabeledMesh map = map_mesh_from_scan(da, rcam, c.pipe.align);
  const LabeledRender z_s = scan_render(db, rcam, c.pipe.align);
  const LabeledRender z_r = render(map, rcam, pose_to_transform(x));
  write_ply((out / "map_mesh.ply").string(), map);
  write_png_rgb((out / "map_render.png").string(), false_color(z_r, c.pipe.align.meshify.max_range));
  write_png_rgb((out / "scan_render.png").string(), false_color(z_s, c.pipe.align.meshify.max_range));
  write_png_rgb((out / "classification.png").string(), classification_image(z_r, z_s, c.pipe.align.eps));
  write_png_rgb((out / "normals.png").string(), normals_image(estimate_normals(da, rcam)));

  CostReport rep = cost(z_r, z_s, c.pipe.align.eps, c.pipe.align.weights);
  static const char* names[] = {"occupied_occupied", "occupied_unknown", "unknown_occupied", "unknown_unknown",
                                "map_background", "scan_background", "hidden_surface"};
  std::ofstream txt(out / "cost.txt");
  for (std::ostream* s : {static_cast<std::ostream*>(&txt), &std::cout}) {
    *s << "pose ";
    print_pose(*s, x);
    *s << "\ncost " << rep.total << "\nrewarded " << rep.rewarded << "\npenalized " << rep.penalized << "\nignored "
       << rep.ignored << '\n';
    for (std::size_t k = 0; k < kCostCellCount; ++k) *s << names[k] << ' ' << rep.cells[k] << '\n';
  }
  return 0;
}

// Lets --config appear after the subcommand name too.
std::vector<std::string> hoist_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc), front, rest;
  for (std::size_t k = 0; k < args.size(); ++k) {
    if (args[k] == "--config" && k + 1 < args.size()) {
      front = {args[k], args[k + 1]};
      ++k;
    } else if (args[k].rfind("--config=", 0) == 0) {
      front = {args[k]};
    } else {
      rest.push_back(args[k]);
    }
  }
  front.insert(front.end(), rest.begin(), rest.end());
  std::reverse(front.begin(), front.end());  // CLI11 consumes a reversed vector
  return front;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Depth scan alignment by rendering and comparing labelled meshes"};
  app.set_config("--config", "", "key=value file with one [section] per subcommand");
  app.require_subcommand(1);

  RunConfig cfg;

  auto* run = app.add_subcommand("run", "match successive frames of a dataset or scene and report drift");
  run->add_option("--dataset", cfg.dataset, "TUM-layout directory (depth.txt, groundtruth.txt)");
  run->add_option("--scene", cfg.scene, "scene description file");
  run->add_option("--interval", cfg.interval, "seconds between matched frames")->check(CLI::NonNegativeNumber)->capture_default_str();
  run->add_option("--max-seconds", cfg.max_seconds, "use only this much of the dataset (0 = all)")->capture_default_str();
  run->add_flag("--warm-start", cfg.warm_start, "start each pair from the previous estimate");
  run->add_option("--threads", cfg.threads, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  run->add_option("--out", cfg.out, "output directory")->capture_default_str();
  run->add_option("--seed", cfg.seed, "override the scene's noise seed");
  add_camera(run, cfg.camera);
  add_matching(run, cfg);

  std::string first, second;
  auto* pair = app.add_subcommand("align-pair", "align two frames and write diagnostics");
  pair->add_option("first", first, "map frame: depth PNG, or frame index with --scene")->required();
  pair->add_option("second", second, "scan frame: depth PNG, or frame index with --scene")->required();
  pair->add_option("--scene", cfg.scene, "take frames from this scene");
  pair->add_option("--out", cfg.out, "output directory")->capture_default_str();
  pair->add_option("--seed", cfg.seed, "override the scene's noise seed");
  add_camera(pair, cfg.camera);
  add_matching(pair, cfg);

  std::string scene_path;
  auto* synth = app.add_subcommand("synth", "render a scene into a TUM-layout dataset");
  synth->add_option("scene", scene_path, "scene description file")->required();
  synth->add_option("--out", cfg.out, "output directory")->capture_default_str();
  synth->add_option("--seed", cfg.seed, "override the scene's noise seed");

  std::vector<double> pose_args;
  auto* debug = app.add_subcommand("render-debug", "dump mesh, renders and classification for one pair");
  debug->add_option("first", first, "map frame: depth PNG, or frame index with --scene")->required();
  debug->add_option("second", second, "scan frame: depth PNG, or frame index with --scene")->required();
  debug->add_option("--scene", cfg.scene, "take frames from this scene");
  debug->add_option("--pose", pose_args, "x y z rx ry rz (m, deg); default ground truth or identity")->expected(6);
  debug->add_option("--out", cfg.out, "output directory")->capture_default_str();
  debug->add_option("--seed", cfg.seed, "override the scene's noise seed");
  add_camera(debug, cfg.camera);
  add_matching(debug, cfg);

  try {
    app.parse(hoist_config(argc, argv));
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*run) {
      if (cfg.dataset.empty() == cfg.scene.empty()) {
        std::cerr << "error: give exactly one of --dataset and --scene\n";
        return 2;
      }
      finalize(cfg);
      return cmd_run(cfg, run);
    }
    if (*pair) {
      finalize(cfg);
      return cmd_align_pair(cfg, first, second, pair);
    }
    if (*synth) return cmd_synth(scene_path, cfg.out, cfg.seed);
    if (*debug) {
      finalize(cfg);
      return cmd_render_debug(cfg, first, second, pose_args, debug);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
