#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "spicalib/calibration.hpp"
#include "spicalib/measurement.hpp"
#include "spicalib/phase.hpp"
#include "spicalib/twin.hpp"

namespace spicalib::eval {

constexpr uint64_t kDefaultSeed = 1;
constexpr int kFrames = 4;
constexpr double kSphereDiameterMm = 50.14;

struct EvalRow {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  std::string unit;
  bool pass = false;
  std::string note;  // set when a stage failed outright
};

struct EvalSummary {
  uint64_t seed = 0;
  double lambda = 0.0;
  std::vector<EvalRow> rows;
  bool all_pass = false;
};

namespace detail {

struct StageResult {
  calib::CalibrationResult calib;
  measure::FitReport cube_fit;
  bool ok = false;
  std::string error;
};

// Full pipeline on a cube scene: shifted frames -> phase -> calibration ->
// reconstruction -> cube fit.
inline StageResult run_cube_stage(const twin::SceneConfig& scene) {
  StageResult st;
  try {
    twin::FrameSet frames = twin::render_phase_shifted(scene, kFrames);
    twin::Pointmap pm = twin::generate_pointmap(frames.base, scene);
    calib::FringeCalibrationInput in;
    in.pointmap = pm;
    in.frames = frames.frames;
    in.cube_side_mm = scene.cube.side;
    in.period_T = scene.fringe.period_T;
    st.calib = calib::calibrate(in);

    phase::PhasePipeline phases = phase::analyze_frames(frames.frames);
    measure::PointCloud cloud =
        measure::reconstruct(st.calib, phases.absolute, phases.maps.modulation_mask);
    st.cube_fit = measure::fit_cube(cloud.points, scene.cube.side);
    st.ok = true;
  } catch (const Error& e) {
    st.error = std::string(e.name()) + ": " + e.what();
  }
  return st;
}

struct SphereResult {
  measure::FitReport fit;
  bool ok = false;
  std::string error;
};

inline SphereResult run_sphere_stage(const twin::SceneConfig& scene,
                                     const calib::CalibrationResult& calib_result) {
  SphereResult st;
  try {
    twin::SphereModel sphere;
    sphere.center = Vec3(scene.cube.side / 2.0, scene.cube.side / 2.0,
                         scene.cube.side / 2.0);
    sphere.radius = kSphereDiameterMm / 2.0;
    twin::FrameSet frames =
        twin::render_phase_shifted(scene, kFrames, /*sphere=*/true, sphere);
    phase::PhasePipeline phases = phase::analyze_frames(frames.frames);
    measure::PointCloud cloud = measure::reconstruct(calib_result, phases.absolute,
                                                     phases.maps.modulation_mask);
    st.fit = measure::fit_sphere(cloud.points);
    st.ok = true;
  } catch (const Error& e) {
    st.error = std::string(e.name()) + ": " + e.what();
  }
  return st;
}

}  // namespace detail

// End-to-end accuracy summary over a noiseless and a noisy cube pipeline plus
// a sphere measured in the noisy system. Deterministic for a given seed.
inline EvalSummary run_eval(uint64_t seed = kDefaultSeed, double lambda_noisy = 0.3) {
  EvalSummary summary;
  summary.seed = seed;
  summary.lambda = lambda_noisy;

  auto add_row = [&summary](const std::string& name, double value, double threshold,
                            const std::string& unit, const std::string& note = "") {
    EvalRow row{name, value, threshold, unit, false, note};
    row.pass = note.empty() && std::isfinite(value) && value < threshold;
    summary.rows.push_back(row);
  };

  twin::SceneParams mid;  // mid-range factors, lambda zero
  twin::SceneConfig clean = twin::build_scene(mid, 128, 128, 50.0, seed);

  twin::SceneParams noisy_params = mid;
  noisy_params.lambda = lambda_noisy;
  twin::SceneConfig noisy = twin::build_scene(noisy_params, 128, 128, 50.0, seed);

  detail::StageResult clean_stage = detail::run_cube_stage(clean);
  double nan = std::numeric_limits<double>::quiet_NaN();
  add_row("calibration_reprojection_noiseless",
          clean_stage.ok ? clean_stage.calib.reprojection_rmse_px : nan, 0.01, "px",
          clean_stage.ok ? "" : clean_stage.error);
  add_row("cube_rmse_noiseless", clean_stage.ok ? clean_stage.cube_fit.rmse_mm : nan, 0.1,
          "mm", clean_stage.ok ? "" : clean_stage.error);

  detail::StageResult noisy_stage = detail::run_cube_stage(noisy);
  add_row("cube_rmse_noisy", noisy_stage.ok ? noisy_stage.cube_fit.rmse_mm : nan, 1.0,
          "mm", noisy_stage.ok ? "" : noisy_stage.error);

  if (noisy_stage.ok) {
    detail::SphereResult sphere = detail::run_sphere_stage(noisy, noisy_stage.calib);
    add_row("sphere_rmse_noisy", sphere.ok ? sphere.fit.rmse_mm : nan, 1.0, "mm",
            sphere.ok ? "" : sphere.error);
    double diam_err = sphere.ok ? std::abs(2.0 * sphere.fit.sphere.radius -
                                           kSphereDiameterMm) /
                                      kSphereDiameterMm
                                : nan;
    add_row("sphere_diameter_relative_error", diam_err, 0.005, "",
            sphere.ok ? "" : sphere.error);
  } else {
    add_row("sphere_rmse_noisy", nan, 1.0, "mm", noisy_stage.error);
    add_row("sphere_diameter_relative_error", nan, 0.005, "", noisy_stage.error);
  }

  summary.all_pass = true;
  for (const auto& r : summary.rows) summary.all_pass = summary.all_pass && r.pass;
  return summary;
}

inline std::string format_summary(const EvalSummary& s) {
  std::string out;
  char line[192];
  std::snprintf(line, sizeof(line), "eval seed=%llu lambda=%.3g\n",
                static_cast<unsigned long long>(s.seed), s.lambda);
  out += line;
  std::snprintf(line, sizeof(line), "%-38s %12s %12s %-4s %s\n", "metric", "value",
                "threshold", "unit", "status");
  out += line;
  for (const auto& r : s.rows) {
    std::snprintf(line, sizeof(line), "%-38s %12.6g %12.6g %-4s %s%s%s\n",
                  r.name.c_str(), r.value, r.threshold, r.unit.c_str(),
                  r.pass ? "pass" : "FAIL", r.note.empty() ? "" : "  ",
                  r.note.c_str());
    out += line;
  }
  out += s.all_pass ? "overall: pass\n" : "overall: FAIL\n";
  return out;
}

}  // namespace spicalib::eval
