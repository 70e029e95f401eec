// Command-line front end: scene synthesis, dataset generation, calibration,
// reconstruction, model fitting, and the end-to-end accuracy summary.
//
// Exit codes: 0 success, 1 eval threshold failure, 2 configuration error,
// 3 render error, 4 solver degeneracy, 5 I/O error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "spicalib/calibration.hpp"
#include "spicalib/dataset.hpp"
#include "spicalib/eval.hpp"
#include "spicalib/io.hpp"
#include "spicalib/measurement.hpp"
#include "spicalib/phase.hpp"
#include "spicalib/serial.hpp"
#include "spicalib/twin.hpp"

namespace fs = std::filesystem;
using namespace spicalib;

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::IoError, dir + ": " + ec.message());
}

int run_synth(const std::string& config_path, const std::string& out_dir, int shifts) {
  twin::SceneConfig scene = serial::scene_from_json(serial::load_json_file(config_path));
  ensure_dir(out_dir);
  fs::path out(out_dir);

  twin::FrameSet frames;
  if (shifts > 0) {
    if (shifts < 3)
      throw Error(ErrorKind::ConfigError, "--shifts needs at least 3 frames");
    if (shifts > 999) throw Error(ErrorKind::ConfigError, "--shifts limited to 999");
    frames = twin::render_phase_shifted(scene, shifts);
    for (size_t i = 0; i < frames.frames.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "fringe_%03zu.pfm", i);
      write_pfm((out / name).string(), frames.frames[i]);
    }
  } else {
    frames = twin::render_frames(scene, {0.0});
    write_pfm((out / "fringe.pfm").string(), frames.base.fringe_image);
  }

  const twin::RenderOutput& base = frames.base;
  twin::Pointmap pm = twin::generate_pointmap(base, scene);
  write_pfm((out / "depth.pfm").string(), base.depth_map);
  write_pfm((out / "phase.pfm").string(), base.phase_true);
  write_pfm_color((out / "pointmap.pfm").string(), pm.coords);
  write_pgm((out / "mask.pgm").string(), base.mask);

  std::printf("synth: %zu frame(s), %zu masked pixels, %d faces -> %s\n",
              frames.frames.size(), count_valid(base.mask), base.faces_visible,
              out_dir.c_str());
  return 0;
}

int run_dataset(const std::string& ranges_path, int count, uint64_t seed,
                const std::string& out_dir) {
  twin::SceneRanges ranges;
  if (!ranges_path.empty())
    ranges = serial::ranges_from_json(serial::load_json_file(ranges_path));
  dataset::DatasetManifest manifest =
      dataset::generate_dataset(ranges, count, seed, out_dir);
  std::printf("dataset: %d item(s), %d resample(s) -> %s\n", manifest.count,
              manifest.resampled_total, out_dir.c_str());
  return 0;
}

std::vector<GridF> load_fringe_dir(const std::string& dir) {
  std::vector<std::string> paths;
  std::error_code ec;
  for (fs::directory_iterator it(dir, ec), end; it != end && !ec; it.increment(ec)) {
    const fs::path& p = it->path();
    std::string name = p.filename().string();
    if (name.rfind("fringe", 0) == 0 && p.extension() == ".pfm")
      paths.push_back(p.string());
  }
  if (ec) throw Error(ErrorKind::IoError, dir + ": " + ec.message());
  std::sort(paths.begin(), paths.end());
  std::vector<GridF> frames;
  frames.reserve(paths.size());
  for (const auto& p : paths) frames.push_back(read_pfm(p));
  if (frames.size() < 3)
    throw Error(ErrorKind::InsufficientFrames,
                dir + ": found " + std::to_string(frames.size()) +
                    " fringe_*.pfm frames, need at least 3");
  return frames;
}

int run_calibrate(const std::string& scene_path, const std::string& pointmap_path,
                  const std::string& mask_path, const std::string& fringes_dir,
                  double cube_side, double period, const std::string& out_path) {
  bool oracle = !scene_path.empty();
  bool files = !pointmap_path.empty() || !mask_path.empty() || !fringes_dir.empty();
  if (oracle == files)
    throw Error(ErrorKind::ConfigError,
                "use either --scene or the --pointmap/--mask/--fringes trio");

  calib::CalibrationResult result;
  if (oracle) {
    twin::SceneConfig scene = serial::scene_from_json(serial::load_json_file(scene_path));
    result = calib::calibrate(scene);
  } else {
    if (pointmap_path.empty() || mask_path.empty() || fringes_dir.empty())
      throw Error(ErrorKind::ConfigError,
                  "file mode needs --pointmap, --mask and --fringes together");
    if (period <= 0.0)
      throw Error(ErrorKind::ConfigError, "file mode needs --period > 0");
    calib::FringeCalibrationInput in;
    in.pointmap.coords = read_pfm_color(pointmap_path);
    in.pointmap.mask = read_pgm(mask_path);
    in.pointmap.side = cube_side;
    in.cube_side_mm = cube_side;
    in.period_T = period;
    in.frames = load_fringe_dir(fringes_dir);
    result = calib::calibrate(in);
  }

  serial::save_json_file(out_path, serial::calibration_to_json(result));
  std::printf(
      "calibrate: reprojection RMSE %.6g px, device residual RMS %.6g, "
      "%d points, %d frame(s) -> %s\n",
      result.reprojection_rmse_px, result.spdg_residual_rms, result.num_points,
      result.frames_used, out_path.c_str());
  return 0;
}

int run_measure(const std::string& calib_path, const std::string& phase_path,
                const std::string& mask_path, const std::string& out_path) {
  calib::CalibrationResult calib_result =
      serial::calibration_from_json(serial::load_json_file(calib_path));
  GridF phase = read_pfm(phase_path);
  Mask mask = read_pgm(mask_path);
  measure::PointCloud cloud = measure::reconstruct(calib_result, phase, mask);
  write_ply(out_path, cloud.points);
  std::printf("measure: %zu point(s), %zu dropped -> %s\n", cloud.points.size(),
              cloud.dropped_degenerate, out_path.c_str());
  return 0;
}

int run_fit(const std::string& cloud_path, const std::string& model, double side,
            double diameter) {
  std::vector<Vec3> points = read_ply(cloud_path);
  measure::FitReport report;
  serial::json extra;
  if (model == "plane") {
    if (side > 0.0 || diameter > 0.0)
      throw Error(ErrorKind::ConfigError, "--side/--diameter do not apply to plane");
    report = measure::fit_plane(points);
  } else if (model == "sphere") {
    if (side > 0.0)
      throw Error(ErrorKind::ConfigError, "--side does not apply to sphere");
    report = measure::fit_sphere(points);
    if (diameter > 0.0) {
      extra["ref_diameter_mm"] = diameter;
      extra["diameter_error_mm"] = std::abs(2.0 * report.sphere.radius - diameter);
    }
  } else if (model == "cube") {
    if (diameter > 0.0)
      throw Error(ErrorKind::ConfigError, "--diameter does not apply to cube");
    report = measure::fit_cube(points, side > 0.0 ? side : 50.0);
  } else {
    throw Error(ErrorKind::ConfigError, "--model must be plane, sphere or cube");
  }
  serial::json j = serial::fit_to_json(report);
  for (auto& [key, value] : extra.items()) j[key] = value;
  std::printf("%s\n", j.dump(2).c_str());
  return 0;
}

int run_eval_cmd(uint64_t seed) {
  eval::EvalSummary summary = eval::run_eval(seed);
  std::fputs(eval::format_summary(summary).c_str(), stdout);
  return summary.all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fringe-projection calibration and reconstruction toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_path, ranges_path, scene_path, pointmap_path;
  std::string mask_path, fringes_dir, calib_path, phase_path, cloud_path, model;
  int shifts = 0, count = 0;
  uint64_t seed = eval::kDefaultSeed;
  double cube_side = 50.0, period = 0.0, side = 0.0, diameter = 0.0;

  CLI::App* synth = app.add_subcommand("synth", "render one scene to images");
  synth->add_option("--config", config_path, "scene JSON")->required();
  synth->add_option("--out", out_path, "output directory")->required();
  synth->add_option("--shifts", shifts, "render N phase-shifted frames");

  CLI::App* dataset_cmd = app.add_subcommand("dataset", "render a randomized dataset");
  dataset_cmd->add_option("--ranges", ranges_path, "parameter ranges JSON");
  dataset_cmd->add_option("--count", count, "number of items")->required();
  dataset_cmd->add_option("--seed", seed, "master seed");
  dataset_cmd->add_option("--out", out_path, "output directory")->required();

  CLI::App* calibrate = app.add_subcommand("calibrate", "solve device matrices");
  calibrate->add_option("--scene", scene_path, "scene JSON (oracle mode)");
  calibrate->add_option("--pointmap", pointmap_path, "pointmap PFM (file mode)");
  calibrate->add_option("--mask", mask_path, "pointmap mask PGM (file mode)");
  calibrate->add_option("--fringes", fringes_dir, "directory of fringe_*.pfm frames");
  calibrate->add_option("--cube-side", cube_side, "cube side in mm (file mode)");
  calibrate->add_option("--period", period, "fringe period in device units (file mode)");
  calibrate->add_option("--out", out_path, "calibration JSON")->required();

  CLI::App* measure_cmd = app.add_subcommand("measure", "reconstruct a point cloud");
  measure_cmd->add_option("--calib", calib_path, "calibration JSON")->required();
  measure_cmd->add_option("--phase", phase_path, "absolute phase PFM")->required();
  measure_cmd->add_option("--mask", mask_path, "modulation mask PGM")->required();
  measure_cmd->add_option("--out", out_path, "output PLY")->required();

  CLI::App* fit = app.add_subcommand("fit", "fit a standard model to a cloud");
  fit->add_option("--cloud", cloud_path, "input PLY")->required();
  fit->add_option("--model", model, "plane|sphere|cube")->required();
  fit->add_option("--side", side, "cube side in mm");
  fit->add_option("--diameter", diameter, "reference sphere diameter in mm");

  CLI::App* eval_cmd = app.add_subcommand("eval", "end-to-end accuracy summary");
  eval_cmd->add_option("--seed", seed, "evaluation seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) return run_synth(config_path, out_path, shifts);
    if (*dataset_cmd) return run_dataset(ranges_path, count, seed, out_path);
    if (*calibrate)
      return run_calibrate(scene_path, pointmap_path, mask_path, fringes_dir, cube_side,
                           period, out_path);
    if (*measure_cmd) return run_measure(calib_path, phase_path, mask_path, out_path);
    if (*fit) return run_fit(cloud_path, model, side, diameter);
    if (*eval_cmd) return run_eval_cmd(seed);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", e.name(), e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
