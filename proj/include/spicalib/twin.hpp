#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <set>
#include <vector>

#include "spicalib/geometry.hpp"
#include "spicalib/image.hpp"
#include "spicalib/parallel.hpp"
#include "spicalib/random.hpp"

namespace spicalib::twin {

// Virtual stage layout (millimeters). The world frame is the cube frame with
// the cube spanning [0, side]^3; camera and fringe device poses are expressed
// relative to it, so "moving the cube" moves the devices instead.
constexpr double kWorkingDistance = 400.0;  // camera to stage center
constexpr double kBaseline = 80.0;          // device sits this far above the camera
constexpr double kPixelPitch = 0.1;         // sensor mm per pixel
constexpr double kDeviceFocalPx = 375.0;    // fringe device focal, device px
constexpr double kPeriodBase = 9.4;         // period at alpha = 1, device row units

struct CubeModel {
  double side = 50.0;
  Pose pose;  // stage placement the device extrinsics were derived from
};

struct SphereModel {
  Vec3 center = Vec3(25.0, 25.0, 25.0);  // world frame
  double radius = 25.07;
};

struct FringeSpec {
  double period_T = kPeriodBase / 0.8;  // device row units per fringe
  double alpha = 0.8;                   // period control factor; period_T = base/alpha
  double beta = 0.4;                    // valley intensity; pattern spans [beta, 1]
  double lambda_noise = 0.0;            // peak of additive uniform noise
  int direction = 0;                    // 0: horizontal fringes (phase varies down rows)
  bool marker_enabled = true;
  int marker_order = 0;  // fringe order bridged by the marker
};

// Marker: peak-intensity rectangle spanning the marked fringe order top to
// bottom, horizontally centered, this fraction of the image width wide.
constexpr double kMarkerWidthFrac = 0.06;

// Table-style sampled knobs kept for provenance.
struct SceneParams {
  double f_mm = 37.5;
  double theta_x_deg = 0.0;
  double theta_y_deg = 0.0;
  double theta_z_deg = 47.5;
  double dx_cm = 0.0;
  double dy_cm = 0.0;
  double alpha = 0.8;
  double beta = 0.4;
  double lambda = 0.0;
};

struct SceneConfig {
  CubeModel cube;
  CameraIntrinsics cam_intr;
  Pose cam_pose;                      // world -> camera
  ProjectionMatrix spdg_full_matrix;  // world -> fringe device, ground truth
  FringeSpec fringe;
  int width = 128;
  int height = 128;
  uint64_t rng_seed = 1;
  bool enable_shading = true;
  SceneParams params;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct SceneRanges {
  Interval f_mm{25.0, 50.0};
  Interval theta_x_deg{-5.0, 5.0};
  Interval theta_y_deg{-5.0, 5.0};
  Interval theta_z_deg{35.0, 60.0};
  Interval dx_cm{-3.0, 3.0};
  Interval dy_cm{-3.0, 3.0};
  Interval alpha{0.6, 1.0};
  Interval beta{0.2, 0.6};
  Interval lambda{0.0, 0.3};
  int width = 128;
  int height = 128;
  double cube_side = 50.0;
};

struct RenderOutput {
  GridF fringe_image;  // intensities in [0, 1]; background 0
  GridF depth_map;     // camera-frame z in mm; 0 at misses
  GridF phase_true;    // absolute fringe phase; 0 at misses
  Mask mask;           // 255 where a surface was hit
  GridI face_id;       // cube face index 0..5, -1 elsewhere
  int faces_visible = 0;
};

// World coordinates normalized by the cube side; unmasked pixels are (0,0,0).
struct Pointmap {
  Vec3Grid coords;
  Mask mask;
  double side = 50.0;
};

// Count of fringe images produced by the process; lets callers audit how many
// captures a pipeline consumed.
inline std::atomic<uint64_t>& fringe_image_events() {
  static std::atomic<uint64_t> count{0};
  return count;
}

namespace detail {

inline void check_interval(const Interval& iv, const char* name) {
  if (!(iv.lo <= iv.hi) || !std::isfinite(iv.lo) || !std::isfinite(iv.hi))
    throw Error(ErrorKind::InvalidRange, std::string(name) + ": empty or non-finite interval");
}

struct Ray {
  Vec3 origin;
  Vec3 dir;  // scaled so the parameter equals camera-frame z-depth
};

struct RaySetup {
  Mat3 rt;       // camera rotation transposed
  Mat3 ainv;     // intrinsic inverse
  Vec3 center;   // camera center, world frame
};

inline RaySetup ray_setup(const SceneConfig& scene) {
  Inverse3 ai = invert_adjugate(scene.cam_intr.matrix());
  if (std::abs(ai.det) < kNormalizerEps)
    throw Error(ErrorKind::SingularIntrinsics, "scene camera intrinsics not invertible");
  RaySetup s;
  s.rt = scene.cam_pose.R.transpose();
  s.ainv = ai.inv;
  s.center = -(s.rt * scene.cam_pose.t);
  return s;
}

inline Ray pixel_ray(const RaySetup& s, double u, double v) {
  return Ray{s.center, s.rt * (s.ainv * Vec3(u, v, 1.0))};
}

struct Hit {
  bool ok = false;
  double depth = 0.0;
  int face = -1;
};

// Slab test against the axis-aligned box [0, side]^3.
inline Hit intersect_box(const Ray& ray, double side) {
  double enter = -std::numeric_limits<double>::infinity();
  double exit = std::numeric_limits<double>::infinity();
  int enter_face = -1;
  for (int axis = 0; axis < 3; ++axis) {
    double o = ray.origin(axis), d = ray.dir(axis);
    if (std::abs(d) < 1e-15) {
      if (o < 0.0 || o > side) return {};
      continue;
    }
    double t0 = (0.0 - o) / d;
    double t1 = (side - o) / d;
    int face0 = axis * 2, face1 = axis * 2 + 1;  // low, high plane of this axis
    if (t0 > t1) {
      std::swap(t0, t1);
      std::swap(face0, face1);
    }
    if (t0 > enter) {
      enter = t0;
      enter_face = face0;
    }
    exit = std::min(exit, t1);
    if (enter > exit) return {};
  }
  if (exit <= 0.0) return {};
  if (enter <= 0.0) return {};  // origin inside the box: not a valid exterior view
  return Hit{true, enter, enter_face};
}

inline Hit intersect_sphere(const Ray& ray, const SphereModel& sphere) {
  Vec3 oc = ray.origin - sphere.center;
  double a = ray.dir.squaredNorm();
  double b = 2.0 * ray.dir.dot(oc);
  double c = oc.squaredNorm() - sphere.radius * sphere.radius;
  double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return {};
  double root = std::sqrt(disc);
  double s = (-b - root) / (2.0 * a);
  if (s <= 0.0) s = (-b + root) / (2.0 * a);
  if (s <= 0.0) return {};
  return Hit{true, s, -1};
}

enum class Shape { Box, Sphere };

inline RenderOutput render_geometry(const SceneConfig& scene, Shape shape,
                                    const SphereModel& sphere) {
  if (scene.width < 16 || scene.height < 16)
    throw Error(ErrorKind::InvalidRange, "image dimensions must be at least 16");
  if (scene.fringe.period_T <= 0.0)
    throw Error(ErrorKind::InvalidRange, "fringe period must be positive");
  if (scene.fringe.beta < 0.0 || scene.fringe.beta >= 1.0)
    throw Error(ErrorKind::InvalidRange, "valley intensity must lie in [0,1)");
  if (scene.fringe.lambda_noise < 0.0 || scene.fringe.lambda_noise > 1.0)
    throw Error(ErrorKind::InvalidRange, "noise amplitude must lie in [0,1]");
  if (scene.fringe.direction != 0)
    throw Error(ErrorKind::InvalidRange, "only horizontal fringes are supported");

  RenderOutput out;
  out.depth_map = GridF(scene.width, scene.height, 0.0);
  out.phase_true = GridF(scene.width, scene.height, 0.0);
  out.mask = Mask(scene.width, scene.height, 0);
  out.face_id = GridI(scene.width, scene.height, -1);

  RaySetup setup = ray_setup(scene);
  const double two_pi = 2.0 * M_PI;

  parallel_for_rows(scene.height, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < scene.width; ++x) {
        Ray ray = pixel_ray(setup, x, y);
        Hit hit = shape == Shape::Box ? intersect_box(ray, scene.cube.side)
                                      : intersect_sphere(ray, sphere);
        if (!hit.ok) continue;
        WorldPoint p = ray.origin + hit.depth * ray.dir;
        double vs = spdg_vs(scene.spdg_full_matrix, p);
        out.depth_map.at(x, y) = hit.depth;
        out.phase_true.at(x, y) = two_pi * vs / scene.fringe.period_T;
        out.mask.at(x, y) = 255;
        out.face_id.at(x, y) = hit.face;
      }
  });

  size_t hits = count_valid(out.mask);
  if (hits == 0)
    throw Error(ErrorKind::CubeNotVisible, shape == Shape::Box
                                               ? "no camera ray hits the cube"
                                               : "no camera ray hits the sphere");
  if (shape == Shape::Box) {
    std::set<int> faces;
    for (size_t i = 0; i < out.face_id.size(); ++i)
      if (out.face_id.data[i] >= 0) faces.insert(out.face_id.data[i]);
    out.faces_visible = static_cast<int>(faces.size());
    if (out.faces_visible < 2)
      throw Error(ErrorKind::InsufficientFaces, "fewer than two cube faces visible");
  }
  return out;
}

}  // namespace detail

// One geometry pass shared by any number of phase-shifted exposures.
struct FrameSet {
  RenderOutput base;            // geometry, true phase, mask; fringe_image is shift 0
  std::vector<GridF> frames;    // one image per phase shift
  std::vector<double> shifts;   // phase offsets, radians
};

inline FrameSet render_frames(const SceneConfig& scene, const std::vector<double>& shifts,
                              detail::Shape shape = detail::Shape::Box,
                              const SphereModel& sphere = SphereModel{}) {
  FrameSet set;
  set.base = detail::render_geometry(scene, shape, sphere);
  set.shifts = shifts;

  // Shading reference: nearest surface depth over the whole scene.
  double z_near = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < set.base.mask.size(); ++i)
    if (set.base.mask.data[i]) z_near = std::min(z_near, set.base.depth_map.data[i]);

  const FringeSpec& fr = scene.fringe;
  const double two_pi = 2.0 * M_PI;
  const double marker_center = two_pi * fr.marker_order;
  const double marker_half = 0.5 * kMarkerWidthFrac * scene.width;
  const double u_mid = 0.5 * (scene.width - 1);

  set.frames.assign(shifts.size(), GridF(scene.width, scene.height, 0.0));
  for (size_t f = 0; f < shifts.size(); ++f) {
    GridF& img = set.frames[f];
    double shift = shifts[f];
    parallel_for_rows(scene.height, [&](int y0, int y1) {
      for (int y = y0; y < y1; ++y)
        for (int x = 0; x < scene.width; ++x) {
          size_t idx = static_cast<size_t>(y) * scene.width + x;
          if (!set.base.mask.data[idx]) continue;  // background stays black
          double phi = set.base.phase_true.data[idx];
          double shade = 1.0;
          if (scene.enable_shading) {
            double q = z_near / set.base.depth_map.data[idx];
            shade = std::clamp(q * q, 0.0, 1.0);
          }
          double value;
          bool on_marker = fr.marker_enabled && std::abs(x - u_mid) <= marker_half &&
                           std::abs(phi - marker_center) <= M_PI;
          if (on_marker) {
            value = shade;  // bright bridge across the two dark fringes
          } else {
            double fringe =
                0.5 * (1.0 + fr.beta) + 0.5 * (1.0 - fr.beta) * std::cos(phi - shift);
            value = fringe * shade;
          }
          if (fr.lambda_noise > 0.0)
            value += pixel_noise(scene.rng_seed, f, idx, fr.lambda_noise);
          img.data[idx] = std::clamp(value, 0.0, 1.0);
        }
    });
  }
  fringe_image_events() += shifts.size();
  set.base.fringe_image = set.frames.empty() ? GridF(scene.width, scene.height, 0.0)
                                             : set.frames.front();
  return set;
}

// Single-exposure render of the cube scene.
inline RenderOutput render(const SceneConfig& scene) {
  FrameSet set = render_frames(scene, {0.0});
  return std::move(set.base);
}

inline RenderOutput render_sphere(const SceneConfig& scene, const SphereModel& sphere) {
  FrameSet set = render_frames(scene, {0.0}, detail::Shape::Sphere, sphere);
  return std::move(set.base);
}

inline FrameSet render_phase_shifted(const SceneConfig& scene, int n_frames,
                                     bool sphere = false,
                                     const SphereModel& model = SphereModel{}) {
  if (n_frames < 3)
    throw Error(ErrorKind::InsufficientFrames, "phase shifting needs at least 3 frames");
  std::vector<double> shifts(n_frames);
  for (int n = 0; n < n_frames; ++n) shifts[n] = 2.0 * M_PI * n / n_frames;
  return render_frames(scene, shifts, sphere ? detail::Shape::Sphere : detail::Shape::Box,
                       model);
}

inline SceneConfig build_scene(const SceneParams& p, int width, int height, double cube_side,
                               uint64_t seed);

// Uniform draw over the given ranges; identical seeds give identical scenes.
inline SceneConfig sample_scene(const SceneRanges& ranges, uint64_t seed) {
  detail::check_interval(ranges.f_mm, "f_mm");
  detail::check_interval(ranges.theta_x_deg, "theta_x_deg");
  detail::check_interval(ranges.theta_y_deg, "theta_y_deg");
  detail::check_interval(ranges.theta_z_deg, "theta_z_deg");
  detail::check_interval(ranges.dx_cm, "dx_cm");
  detail::check_interval(ranges.dy_cm, "dy_cm");
  detail::check_interval(ranges.alpha, "alpha");
  detail::check_interval(ranges.beta, "beta");
  detail::check_interval(ranges.lambda, "lambda");
  if (ranges.alpha.lo <= 0.0)
    throw Error(ErrorKind::InvalidRange, "alpha must stay positive");
  if (ranges.f_mm.lo <= 0.0)
    throw Error(ErrorKind::InvalidRange, "f_mm must stay positive");
  if (ranges.beta.lo < 0.0 || ranges.beta.hi >= 1.0)
    throw Error(ErrorKind::InvalidRange, "beta must lie in [0,1)");
  if (ranges.lambda.lo < 0.0 || ranges.lambda.hi > 1.0)
    throw Error(ErrorKind::InvalidRange, "lambda must lie in [0,1]");
  if (ranges.width < 16 || ranges.height < 16)
    throw Error(ErrorKind::InvalidRange, "image dimensions must be at least 16");
  if (ranges.cube_side <= 0.0)
    throw Error(ErrorKind::InvalidRange, "cube side must be positive");

  Sampler s(seed);
  SceneParams p;
  p.f_mm = s.uniform(ranges.f_mm.lo, ranges.f_mm.hi);
  p.theta_x_deg = s.uniform(ranges.theta_x_deg.lo, ranges.theta_x_deg.hi);
  p.theta_y_deg = s.uniform(ranges.theta_y_deg.lo, ranges.theta_y_deg.hi);
  p.theta_z_deg = s.uniform(ranges.theta_z_deg.lo, ranges.theta_z_deg.hi);
  p.dx_cm = s.uniform(ranges.dx_cm.lo, ranges.dx_cm.hi);
  p.dy_cm = s.uniform(ranges.dy_cm.lo, ranges.dy_cm.hi);
  p.alpha = s.uniform(ranges.alpha.lo, ranges.alpha.hi);
  p.beta = s.uniform(ranges.beta.lo, ranges.beta.hi);
  p.lambda = s.uniform(ranges.lambda.lo, ranges.lambda.hi);
  SceneConfig scene = build_scene(p, ranges.width, ranges.height, ranges.cube_side, seed);
  return scene;
}

// Deterministic construction of the virtual rig from sampled knobs.
// Stage frame: x right, y down (image convention), z from camera into the
// scene; the vertical axis is -y. theta_z spins the cube about the vertical
// axis (this is what exposes two side faces), theta_x and theta_y are the
// small tilts about the two horizontal axes.
inline SceneConfig build_scene(const SceneParams& p, int width = 128, int height = 128,
                               double cube_side = 50.0, uint64_t seed = 1) {
  SceneConfig scene;
  scene.params = p;
  scene.width = width;
  scene.height = height;
  scene.rng_seed = seed;

  scene.cube.side = cube_side;
  Mat3 rc = rot_y(-deg2rad(p.theta_z_deg)) * rot_z(deg2rad(p.theta_y_deg)) *
            rot_x(deg2rad(p.theta_x_deg));
  Vec3 shift(10.0 * p.dx_cm, 10.0 * p.dy_cm, 0.0);  // cm -> mm, transverse plane
  scene.cube.pose = Pose{rc, shift};

  scene.cam_intr.fu = p.f_mm / kPixelPitch;
  scene.cam_intr.fv = p.f_mm / kPixelPitch;
  scene.cam_intr.gamma = 0.0;
  scene.cam_intr.u0 = (width - 1) / 2.0;
  scene.cam_intr.v0 = (height - 1) / 2.0;

  Vec3 half_diag(cube_side / 2.0, cube_side / 2.0, cube_side / 2.0);
  Vec3 to_stage = shift - rc * half_diag;  // world -> stage translation
  scene.cam_pose = Pose{rc, to_stage + Vec3(0.0, 0.0, kWorkingDistance)};

  // Fringe device: above the camera, tilted to aim at the stage center.
  double n = std::hypot(kBaseline, kWorkingDistance);
  Mat3 r_dev;
  r_dev << 1, 0, 0,                                          //
      0, kWorkingDistance / n, -kBaseline / n,               //
      0, kBaseline / n, kWorkingDistance / n;
  CameraIntrinsics dev_intr{kDeviceFocalPx, kDeviceFocalPx, 0.0, 0.0, 0.0};
  Pose dev_pose{r_dev * rc, r_dev * (to_stage + Vec3(0.0, kBaseline, kWorkingDistance))};
  scene.spdg_full_matrix = compose_projection(dev_intr, dev_pose);

  scene.fringe.period_T = kPeriodBase / p.alpha;
  scene.fringe.alpha = p.alpha;
  scene.fringe.beta = p.beta;
  scene.fringe.lambda_noise = p.lambda;
  scene.fringe.direction = 0;
  scene.fringe.marker_enabled = true;
  scene.fringe.marker_order = 0;
  return scene;
}

// Analytic pointmap: back-projected metric coordinates over the cube side.
inline Pointmap generate_pointmap(const RenderOutput& rendered, const SceneConfig& scene) {
  Pointmap pm;
  pm.side = scene.cube.side;
  pm.mask = rendered.mask;
  pm.coords = Vec3Grid(rendered.mask.width, rendered.mask.height, Vec3::Zero());
  parallel_for_rows(rendered.mask.height, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < rendered.mask.width; ++x) {
        if (!mask_at(rendered.mask, x, y)) continue;
        WorldPoint p =
            back_project(scene.cam_intr, scene.cam_pose, x, y, rendered.depth_map.at(x, y));
        pm.coords.at(x, y) = p / scene.cube.side;
      }
  });
  return pm;
}

}  // namespace spicalib::twin
