#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "spicalib/calibration.hpp"
#include "spicalib/error.hpp"
#include "spicalib/geometry.hpp"
#include "spicalib/measurement.hpp"
#include "spicalib/twin.hpp"

namespace spicalib::serial {

using nlohmann::json;

namespace detail {

inline json mat3_to_json(const Mat3& m) {
  json a = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a.push_back(m(r, c));
  return a;
}

inline json mat34_to_json(const Mat34& m) {
  json a = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) a.push_back(m(r, c));
  return a;
}

inline json vec3_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline json vec7_to_json(const Vec7& v) {
  json a = json::array();
  for (int i = 0; i < 7; ++i) a.push_back(v(i));
  return a;
}

template <class Fn>
inline auto field(const json& j, const char* key, Fn fn) {
  try {
    return fn(j.at(key));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ConfigError,
                std::string("field '") + key + "': " + e.what());
  }
}

inline double number(const json& j, const char* key) {
  return field(j, key, [](const json& v) { return v.get<double>(); });
}

inline std::vector<double> numbers(const json& j, const char* key, size_t n) {
  auto vals =
      field(j, key, [](const json& v) { return v.get<std::vector<double>>(); });
  if (vals.size() != n)
    throw Error(ErrorKind::ConfigError, std::string("field '") + key + "': expected " +
                                            std::to_string(n) + " numbers, got " +
                                            std::to_string(vals.size()));
  return vals;
}

inline Mat3 mat3_from(const json& j, const char* key) {
  auto v = numbers(j, key, 9);
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = v[static_cast<size_t>(r) * 3 + c];
  return m;
}

inline Mat34 mat34_from(const json& j, const char* key) {
  auto v = numbers(j, key, 12);
  Mat34 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = v[static_cast<size_t>(r) * 4 + c];
  return m;
}

inline Vec3 vec3_from(const json& j, const char* key) {
  auto v = numbers(j, key, 3);
  return Vec3(v[0], v[1], v[2]);
}

inline Vec7 vec7_from(const json& j, const char* key) {
  auto v = numbers(j, key, 7);
  Vec7 out;
  for (int i = 0; i < 7; ++i) out(i) = v[static_cast<size_t>(i)];
  return out;
}

}  // namespace detail

inline json scene_to_json(const twin::SceneConfig& s) {
  json j;
  j["width"] = s.width;
  j["height"] = s.height;
  j["rng_seed"] = s.rng_seed;
  j["enable_shading"] = s.enable_shading;
  j["cube"] = {{"side", s.cube.side},
               {"R", detail::mat3_to_json(s.cube.pose.R)},
               {"t", detail::vec3_to_json(s.cube.pose.t)}};
  j["camera"] = {{"fu", s.cam_intr.fu},       {"fv", s.cam_intr.fv},
                 {"gamma", s.cam_intr.gamma}, {"u0", s.cam_intr.u0},
                 {"v0", s.cam_intr.v0},       {"R", detail::mat3_to_json(s.cam_pose.R)},
                 {"t", detail::vec3_to_json(s.cam_pose.t)}};
  j["spdg_full_matrix"] = detail::mat34_to_json(s.spdg_full_matrix.m);
  j["fringe"] = {{"period_T", s.fringe.period_T},
                 {"alpha", s.fringe.alpha},
                 {"beta", s.fringe.beta},
                 {"lambda_noise", s.fringe.lambda_noise},
                 {"direction", s.fringe.direction},
                 {"marker_enabled", s.fringe.marker_enabled},
                 {"marker_order", s.fringe.marker_order}};
  j["params"] = {{"f_mm", s.params.f_mm},
                 {"theta_x_deg", s.params.theta_x_deg},
                 {"theta_y_deg", s.params.theta_y_deg},
                 {"theta_z_deg", s.params.theta_z_deg},
                 {"dx_cm", s.params.dx_cm},
                 {"dy_cm", s.params.dy_cm},
                 {"alpha", s.params.alpha},
                 {"beta", s.params.beta},
                 {"lambda", s.params.lambda}};
  return j;
}

inline twin::SceneConfig scene_from_json(const json& j) {
  twin::SceneConfig s;
  s.width = static_cast<int>(detail::number(j, "width"));
  s.height = static_cast<int>(detail::number(j, "height"));
  s.rng_seed = detail::field(
      j, "rng_seed", [](const json& v) { return v.get<uint64_t>(); });
  if (j.contains("enable_shading")) s.enable_shading = j.at("enable_shading").get<bool>();

  const json& cube = detail::field(j, "cube", [](const json& v) -> const json& {
    return v;
  });
  s.cube.side = detail::number(cube, "side");
  try {
    s.cube.pose = make_pose(detail::mat3_from(cube, "R"), detail::vec3_from(cube, "t"));
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::InvalidRotation) throw;
    throw Error(ErrorKind::ConfigError, std::string("field 'cube.R': ") + e.what());
  }

  const json& cam = detail::field(j, "camera", [](const json& v) -> const json& {
    return v;
  });
  s.cam_intr = CameraIntrinsics{detail::number(cam, "fu"), detail::number(cam, "fv"),
                                detail::number(cam, "gamma"), detail::number(cam, "u0"),
                                detail::number(cam, "v0")};
  try {
    s.cam_pose = make_pose(detail::mat3_from(cam, "R"), detail::vec3_from(cam, "t"));
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::InvalidRotation) throw;
    throw Error(ErrorKind::ConfigError, std::string("field 'camera.R': ") + e.what());
  }

  s.spdg_full_matrix = ProjectionMatrix{detail::mat34_from(j, "spdg_full_matrix")};

  const json& fr = detail::field(j, "fringe", [](const json& v) -> const json& {
    return v;
  });
  s.fringe.period_T = detail::number(fr, "period_T");
  s.fringe.alpha = fr.value("alpha", 0.0);
  s.fringe.beta = detail::number(fr, "beta");
  s.fringe.lambda_noise = fr.value("lambda_noise", 0.0);
  s.fringe.direction = fr.value("direction", 0);
  s.fringe.marker_enabled = fr.value("marker_enabled", true);
  s.fringe.marker_order = fr.value("marker_order", 0);

  if (j.contains("params")) {
    const json& p = j.at("params");
    s.params.f_mm = p.value("f_mm", s.params.f_mm);
    s.params.theta_x_deg = p.value("theta_x_deg", s.params.theta_x_deg);
    s.params.theta_y_deg = p.value("theta_y_deg", s.params.theta_y_deg);
    s.params.theta_z_deg = p.value("theta_z_deg", s.params.theta_z_deg);
    s.params.dx_cm = p.value("dx_cm", s.params.dx_cm);
    s.params.dy_cm = p.value("dy_cm", s.params.dy_cm);
    s.params.alpha = p.value("alpha", s.params.alpha);
    s.params.beta = p.value("beta", s.params.beta);
    s.params.lambda = p.value("lambda", s.params.lambda);
  }
  return s;
}

inline json ranges_to_json(const twin::SceneRanges& r) {
  auto iv = [](const twin::Interval& i) { return json::array({i.lo, i.hi}); };
  json j;
  j["f_mm"] = iv(r.f_mm);
  j["theta_x_deg"] = iv(r.theta_x_deg);
  j["theta_y_deg"] = iv(r.theta_y_deg);
  j["theta_z_deg"] = iv(r.theta_z_deg);
  j["dx_cm"] = iv(r.dx_cm);
  j["dy_cm"] = iv(r.dy_cm);
  j["alpha"] = iv(r.alpha);
  j["beta"] = iv(r.beta);
  j["lambda"] = iv(r.lambda);
  j["width"] = r.width;
  j["height"] = r.height;
  j["cube_side"] = r.cube_side;
  return j;
}

// Missing keys keep their defaults, so a ranges file may override only some.
inline twin::SceneRanges ranges_from_json(const json& j) {
  twin::SceneRanges r;
  auto iv = [&](const char* key, twin::Interval& out) {
    if (!j.contains(key)) return;
    auto v = detail::numbers(j, key, 2);
    out = {v[0], v[1]};
  };
  iv("f_mm", r.f_mm);
  iv("theta_x_deg", r.theta_x_deg);
  iv("theta_y_deg", r.theta_y_deg);
  iv("theta_z_deg", r.theta_z_deg);
  iv("dx_cm", r.dx_cm);
  iv("dy_cm", r.dy_cm);
  iv("alpha", r.alpha);
  iv("beta", r.beta);
  iv("lambda", r.lambda);
  if (j.contains("width")) r.width = j.at("width").get<int>();
  if (j.contains("height")) r.height = j.at("height").get<int>();
  if (j.contains("cube_side")) r.cube_side = j.at("cube_side").get<double>();
  return r;
}

inline json calibration_to_json(const calib::CalibrationResult& c) {
  json j;
  j["Mp"] = detail::mat34_to_json(c.mp.m);
  j["ms"] = detail::vec7_to_json(c.ms.v);
  j["reprojection_rmse_px"] = c.reprojection_rmse_px;
  j["spdg_residual_rms"] = c.spdg_residual_rms;
  j["num_points"] = c.num_points;
  j["cube_side_mm"] = c.cube_side_mm;
  j["period_T"] = c.period_T;
  j["frames_used"] = c.frames_used;
  return j;
}

inline calib::CalibrationResult calibration_from_json(const json& j) {
  calib::CalibrationResult c;
  c.mp = ProjectionMatrix{detail::mat34_from(j, "Mp")};
  c.ms = ReducedSpdgVector{detail::vec7_from(j, "ms")};
  c.reprojection_rmse_px = detail::number(j, "reprojection_rmse_px");
  c.spdg_residual_rms = detail::number(j, "spdg_residual_rms");
  c.num_points = static_cast<int>(detail::number(j, "num_points"));
  c.cube_side_mm = detail::number(j, "cube_side_mm");
  c.period_T = detail::number(j, "period_T");
  c.frames_used = static_cast<int>(j.value("frames_used", 0));
  return c;
}

inline json fit_to_json(const measure::FitReport& r) {
  json j;
  j["model"] = r.model;
  j["rmse_mm"] = r.rmse_mm;
  j["inlier_count"] = r.inlier_count;
  if (r.model == "plane") {
    j["plane"] = {{"normal", detail::vec3_to_json(r.plane.normal)},
                  {"offset", r.plane.offset}};
  } else if (r.model == "sphere") {
    j["sphere"] = {{"center", detail::vec3_to_json(r.sphere.center)},
                   {"radius", r.sphere.radius},
                   {"diameter", 2.0 * r.sphere.radius}};
  } else if (r.model == "cube") {
    j["cube"] = {{"R", detail::mat3_to_json(r.cube.rotation)},
                 {"t", detail::vec3_to_json(r.cube.translation)},
                 {"side", r.cube.side},
                 {"dihedral_deg", r.cube.dihedral_deg},
                 {"faces", r.cube.faces}};
  }
  return j;
}

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ConfigError, path + ": " + e.what());
  }
}

inline void save_json_file(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw Error(ErrorKind::IoError, "failed writing " + path);
}

}  // namespace spicalib::serial
