// geo4d command-line tool: synthesize, perturb, align, evaluate, export.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "geo4d/bundle.hpp"
#include "geo4d/export.hpp"
#include "geo4d/metrics.hpp"
#include "geo4d/oracle.hpp"
#include "geo4d/pipeline.hpp"

namespace {

using namespace geo4d;

enum class LogLevel { kQuiet, kInfo, kDebug };

LogLevel log_level() {
  const char* env = std::getenv("GEO4D_LOG");
  const std::string v = env ? env : "info";
  if (v == "quiet") return LogLevel::kQuiet;
  if (v == "debug") return LogLevel::kDebug;
  return LogLevel::kInfo;
}

void log(LogLevel level, const std::string& msg) {
  if (level <= log_level()) std::cerr << "[geo4d] " << msg << '\n';
}

// Flag problems found after parsing; reported like parse errors (exit 1).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

nlohmann::json scene_spec_json(const SceneSpec& s) {
  return {{"source", "oracle"},
          {"frames", s.frames},
          {"height", s.height},
          {"width", s.width},
          {"trajectory", to_string(s.trajectory)},
          {"static_spheres", s.static_spheres},
          {"moving_spheres", s.moving_spheres},
          {"focal_min", s.focal_min},
          {"focal_max", s.focal_max},
          {"max_dynamic_fraction", s.max_dynamic_fraction},
          {"seed", s.seed}};
}

nlohmann::json similarity_json(const Similarity& s) {
  nlohmann::json r = nlohmann::json::array();
  for (int i = 0; i < 9; ++i) r.push_back(s.rotation(i / 3, i % 3));
  return {{"scale", s.scale}, {"rotation", r}, {"shift", {s.shift(0), s.shift(1), s.shift(2)}}};
}

std::vector<Grid<uint8_t>> valid_masks(const Scene& s) {
  std::vector<Grid<uint8_t>> masks;
  for (const auto& d : s.disparity) {
    Grid<uint8_t> m(d.height(), d.width(), 0);
    for (size_t p = 0; p < d.size(); ++p) m[p] = d[p] > 0.0;
    masks.push_back(std::move(m));
  }
  return masks;
}

void write_report(const std::string& text, const std::string& path) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geo4d: multi-modal 4D alignment from windowed point, disparity and ray-map predictions"};
  app.require_subcommand(1);

  // synth
  SceneSpec scene_spec;
  std::string synth_out, trajectory = "orbit";
  auto* synth = app.add_subcommand("synth", "generate a synthetic ground-truth scene bundle");
  synth->add_option("--out", synth_out, "output bundle directory")->required();
  synth->add_option("--frames", scene_spec.frames, "number of frames")->capture_default_str();
  synth->add_option("--height", scene_spec.height)->capture_default_str();
  synth->add_option("--width", scene_spec.width)->capture_default_str();
  synth->add_option("--trajectory", trajectory, "orbit | dolly | sinusoid | static")->capture_default_str();
  synth->add_option("--static-spheres", scene_spec.static_spheres)->capture_default_str();
  synth->add_option("--moving-spheres", scene_spec.moving_spheres)->capture_default_str();
  synth->add_option("--focal-min", scene_spec.focal_min)->capture_default_str();
  synth->add_option("--focal-max", scene_spec.focal_max)->capture_default_str();
  synth->add_option("--max-dynamic", scene_spec.max_dynamic_fraction)->capture_default_str();
  synth->add_option("--seed", scene_spec.seed)->capture_default_str();

  // perturb
  PerturbSpec perturb;
  std::string perturb_in, perturb_out;
  int perturb_window = 16, perturb_stride = 4;
  double noise = 0.0;
  bool no_rays = false;
  auto* perturb_cmd = app.add_subcommand("perturb", "simulate windowed predictions from a ground-truth bundle");
  perturb_cmd->add_option("--in", perturb_in, "ground-truth bundle")->required();
  perturb_cmd->add_option("--out", perturb_out, "prediction bundle")->required();
  perturb_cmd->add_option("--window", perturb_window)->capture_default_str();
  perturb_cmd->add_option("--stride", perturb_stride)->capture_default_str();
  perturb_cmd->add_option("--rotation-deg", perturb.max_rotation_deg, "max group rotation")->capture_default_str();
  perturb_cmd->add_option("--scale-min", perturb.scale_min)->capture_default_str();
  perturb_cmd->add_option("--scale-max", perturb.scale_max)->capture_default_str();
  perturb_cmd->add_option("--translation", perturb.max_translation)->capture_default_str();
  perturb_cmd->add_option("--disp-scale-min", perturb.disp_scale_min)->capture_default_str();
  perturb_cmd->add_option("--disp-scale-max", perturb.disp_scale_max)->capture_default_str();
  perturb_cmd->add_option("--disp-shift", perturb.disp_shift_max)->capture_default_str();
  perturb_cmd->add_option("--noise", noise, "relative noise and jitter on every modality")->capture_default_str();
  perturb_cmd->add_flag("--no-rays", no_rays, "omit ray maps");
  perturb_cmd->add_option("--seed", perturb.seed)->capture_default_str();

  // align
  PipelineOptions pipeline;
  std::string align_in, align_out, trace_path;
  int window = 16, stride = 4;
  uint64_t align_seed = 0;
  auto* align = app.add_subcommand("align", "fuse a prediction bundle into one reconstruction");
  align->add_option("--in", align_in, "prediction bundle")->required();
  align->add_option("--out", align_out, "result bundle")->required();
  align->add_option("--window", window, "frames per window")->capture_default_str();
  align->add_option("--stride", stride, "window stride")->capture_default_str();
  align->add_option("--iters", pipeline.align.iters_total)->capture_default_str();
  align->add_option("--align-start", pipeline.align.align_start_iter)->capture_default_str();
  align->add_option("--alpha1", pipeline.align.alpha[0], "point-map weight")->capture_default_str();
  align->add_option("--alpha2", pipeline.align.alpha[1], "disparity weight")->capture_default_str();
  align->add_option("--alpha3", pipeline.align.alpha[2], "camera weight")->capture_default_str();
  align->add_option("--alpha4", pipeline.align.alpha[3], "smoothness weight")->capture_default_str();
  align->add_option("--lr-pose", pipeline.align.lr_pose)->capture_default_str();
  align->add_option("--lr-disparity", pipeline.align.lr_disparity)->capture_default_str();
  align->add_option("--seed", align_seed, "RANSAC seed")->capture_default_str();
  align->add_option("--trace", trace_path, "write per-iteration losses here");

  // eval
  std::string eval_pred, eval_gt, eval_out;
  int rpe_delta = 1;
  auto* eval_depth = app.add_subcommand("eval-depth", "Abs Rel and delta<1.25 after one global scale/shift");
  eval_depth->add_option("--pred", eval_pred, "result bundle")->required();
  eval_depth->add_option("--gt", eval_gt, "ground-truth bundle")->required();
  eval_depth->add_option("--out", eval_out, "report file (default stdout)");
  auto* eval_pose = app.add_subcommand("eval-pose", "ATE / RPE after Sim(3) alignment");
  eval_pose->add_option("--pred", eval_pred, "result bundle")->required();
  eval_pose->add_option("--gt", eval_gt, "ground-truth bundle")->required();
  eval_pose->add_option("--rpe-delta", rpe_delta)->capture_default_str();
  eval_pose->add_option("--out", eval_out, "report file (default stdout)");

  // export
  std::string export_in, export_out;
  int ply_stride = 1;
  auto* export_ply_cmd = app.add_subcommand("export-ply", "fused point cloud as binary PLY");
  export_ply_cmd->add_option("--in", export_in, "result bundle")->required();
  export_ply_cmd->add_option("--out", export_out, "PLY file")->required();
  export_ply_cmd->add_option("--stride", ply_stride, "pixel subsampling")->capture_default_str();
  auto* export_traj = app.add_subcommand("export-traj", "camera trajectory in TUM format");
  export_traj->add_option("--in", export_in, "result bundle")->required();
  export_traj->add_option("--out", export_out, "trajectory file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*synth) {
      try {
        scene_spec.trajectory = trajectory_from_string(trajectory);
      } catch (const Error& e) {
        throw UsageError(e.what());
      }
      const GroundTruth gt = generate_scene(scene_spec);
      Bundle b;
      b.kind = "scene";
      b.num_frames = gt.num_frames();
      b.height = gt.height;
      b.width = gt.width;
      b.scene = gt;
      b.provenance = scene_spec_json(scene_spec);
      write_bundle(b, synth_out);
      log(LogLevel::kInfo, "wrote " + std::to_string(b.num_frames) + " frames to " + synth_out);
    } else if (*perturb_cmd) {
      if (perturb_stride <= 0 || perturb_window < 1) throw UsageError("window and stride must be positive");
      if (noise > 0.0) perturb.with_noise(noise);
      perturb.include_rays = !no_rays;
      const Bundle gt = read_bundle(perturb_in);
      if (gt.scene.poses.empty() || gt.scene.points.empty() || gt.scene.disparity.empty()) {
        throw Error(ErrorCode::kIo, perturb_in + " is not a ground-truth scene bundle");
      }
      const WindowIndex index = build_window_index(gt.num_frames, perturb_window, perturb_stride);
      const Predictions pred = make_predictions(gt.scene, index, perturb);
      Bundle b;
      b.kind = "predictions";
      b.num_frames = gt.num_frames;
      b.height = gt.height;
      b.width = gt.width;
      b.window = perturb_window;
      b.stride = perturb_stride;
      b.groups = pred.groups;
      b.provenance = {{"source", "oracle"}, {"scene", gt.provenance}, {"seed", perturb.seed}};
      for (const auto& t : pred.truth) {
        b.provenance["groups"].push_back({{"points_from_world", similarity_json(t.points_from_world)},
                                          {"rays_from_world", similarity_json(t.rays_from_world)},
                                          {"disparity_scale", t.disparity_scale},
                                          {"disparity_shift", t.disparity_shift}});
      }
      write_bundle(b, perturb_out);
      log(LogLevel::kInfo, "wrote " + std::to_string(b.groups.size()) + " groups to " + perturb_out);
    } else if (*align) {
      if (stride <= 0 || window < 1) throw UsageError("window and stride must be positive");
      try {
        pipeline.align.validate();
      } catch (const Error& e) {
        throw UsageError(e.what());
      }
      pipeline.init.pnp.seed = align_seed;
      const Bundle in = read_bundle(align_in);
      const WindowIndex index = build_window_index(in.num_frames, window, stride);
      std::string starts;
      for (int s : index.starts) starts += (starts.empty() ? "" : ",") + std::to_string(s);
      log(LogLevel::kInfo, "windows [" + starts + "]");
      const auto groups = select_groups(in.groups, index);
      std::ofstream trace;
      if (!trace_path.empty()) {
        trace.open(trace_path, std::ios::trunc);
        if (!trace) throw Error(ErrorCode::kIo, "cannot write " + trace_path);
        trace.precision(17);
        trace << "iter point depth cam smooth total grad_norm\n";
      }
      const PipelineResult result = run_alignment(groups, pipeline, trace_path.empty() ? nullptr : &trace);
      if (result.aligned.ray_failures > 0) {
        log(LogLevel::kInfo, std::to_string(result.aligned.ray_failures) + " ray maps could not be solved");
      }
      if (!result.aligned.trace.empty()) {
        const TraceRow& last = result.aligned.trace.back();
        log(LogLevel::kDebug, "final losses point=" + std::to_string(last.point) + " depth=" +
                                  std::to_string(last.depth) + " cam=" + std::to_string(last.cam) +
                                  " smooth=" + std::to_string(last.smooth));
      }
      Bundle out;
      out.kind = "result";
      out.num_frames = in.num_frames;
      out.height = in.height;
      out.width = in.width;
      out.window = window;
      out.stride = stride;
      out.scene = result_scene(result.aligned.state);
      out.provenance = {{"source", "align"},
                        {"input", in.provenance},
                        {"iters", pipeline.align.iters_total},
                        {"align_start", pipeline.align.align_start_iter},
                        {"alpha", pipeline.align.alpha},
                        {"seed", align_seed},
                        {"camera_loss_used", result.aligned.camera_loss_used}};
      write_bundle(out, align_out);
      log(LogLevel::kInfo, "wrote result to " + align_out);
    } else if (*eval_depth) {
      const Bundle pred = read_bundle(eval_pred);
      const Bundle gt = read_bundle(eval_gt);
      const auto masks = valid_masks(pred.scene);
      write_report(format_report(evaluate_depth(pred.scene.disparity, gt.scene.disparity, masks)), eval_out);
    } else if (*eval_pose) {
      if (rpe_delta < 1) throw UsageError("--rpe-delta must be >= 1");
      const Bundle pred = read_bundle(eval_pred);
      const Bundle gt = read_bundle(eval_gt);
      write_report(format_report(traj_metrics(pred.scene.poses, gt.scene.poses, rpe_delta)), eval_out);
    } else if (*export_ply_cmd) {
      if (ply_stride < 1) throw UsageError("--stride must be >= 1");
      const Bundle in = read_bundle(export_in);
      export_ply(export_out, in.scene.points, valid_masks(in.scene), ply_stride);
    } else if (*export_traj) {
      const Bundle in = read_bundle(export_in);
      export_trajectory(export_out, in.scene.poses);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
