#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "spicalib/geometry.hpp"
#include "spicalib/image.hpp"
#include "spicalib/phase.hpp"
#include "spicalib/twin.hpp"

namespace spicalib::calib {

constexpr double kPointmapTolMm = 0.01;
constexpr double kDegenerateGap = 1e3;     // smallest-singular-value ratio guard
constexpr size_t kSubsampleAbove = 50000;  // correspondence count triggering
constexpr size_t kSubsampleTo = 20000;     // ... a uniform cut to this many

struct Correspondence {
  double up = 0.0, vp = 0.0;  // camera pixel
  Vec3 world = Vec3::Zero();  // mm
  int face = -1;              // nearest cube face 0..5 (x-,x+,y-,y+,z-,z+)
};

struct CorrespondenceSet {
  std::vector<Correspondence> pairs;
  int faces_present = 0;
};

struct SpdgPair {
  Vec3 world = Vec3::Zero();  // mm
  double vs = 0.0;            // device coordinate
};

struct SpdgCorrespondenceSet {
  std::vector<SpdgPair> pairs;
  size_t dropped_missing_phase = 0;
};

// De-normalizes pointmap entries and keeps those lying on an ideal cube face.
inline CorrespondenceSet filter_pointmap(const twin::Pointmap& pm,
                                         const twin::CubeModel& cube,
                                         double tol_mm = kPointmapTolMm) {
  double side = cube.side;
  CorrespondenceSet set;
  bool face_seen[6] = {false, false, false, false, false, false};
  for (int y = 0; y < pm.coords.height; ++y)
    for (int x = 0; x < pm.coords.width; ++x) {
      if (!mask_at(pm.mask, x, y)) continue;
      Vec3 p = pm.coords.at(x, y) * side;
      int face = -1;
      double best = std::numeric_limits<double>::infinity();
      for (int a = 0; a < 3; ++a) {
        double d_lo = std::abs(p(a));
        double d_hi = std::abs(p(a) - side);
        if (d_lo < best) {
          best = d_lo;
          face = 2 * a;
        }
        if (d_hi < best) {
          best = d_hi;
          face = 2 * a + 1;
        }
      }
      if (!(best < tol_mm)) continue;
      set.pairs.push_back({double(x), double(y), p, face});
      face_seen[face] = true;
    }
  for (bool seen : face_seen) set.faces_present += seen ? 1 : 0;
  if (set.pairs.size() < 6)
    throw Error(ErrorKind::TooFewPoints,
                "only " + std::to_string(set.pairs.size()) + " usable correspondences");
  if (set.faces_present < 2)
    throw Error(ErrorKind::SinglePlaneOnly,
                "correspondences span a single cube face; coplanar data cannot "
                "determine the projection");
  return set;
}

// Pairs each correspondence with the device coordinate read from the phase
// map; pixels without a modulated phase are dropped and counted.
inline SpdgCorrespondenceSet match_vs(const CorrespondenceSet& corrs,
                                      const GridF& absolute_phase, const Mask& phase_mask,
                                      double period_T) {
  require_same_size(absolute_phase, phase_mask, "match_vs");
  if (period_T <= 0.0) throw Error(ErrorKind::InvalidRange, "period must be positive");
  SpdgCorrespondenceSet out;
  out.pairs.reserve(corrs.pairs.size());
  for (const auto& c : corrs.pairs) {
    int u = static_cast<int>(std::lround(c.up));
    int v = static_cast<int>(std::lround(c.vp));
    if (!absolute_phase.in_bounds(u, v) || !mask_at(phase_mask, u, v)) {
      ++out.dropped_missing_phase;
      continue;
    }
    out.pairs.push_back({c.world, phase::phase_to_vs(absolute_phase.at(u, v), period_T)});
  }
  return out;
}

namespace detail {

struct Normalizer2d {
  double su = 1.0, sv = 1.0, cu = 0.0, cv = 0.0;
};

struct Normalizer3d {
  double s = 1.0;
  Vec3 c = Vec3::Zero();
};

template <class GetU, class GetV>
inline Normalizer2d normalize_2d(size_t n, GetU get_u, GetV get_v) {
  Normalizer2d nm;
  for (size_t i = 0; i < n; ++i) {
    nm.cu += get_u(i);
    nm.cv += get_v(i);
  }
  nm.cu /= double(n);
  nm.cv /= double(n);
  double dist = 0.0;
  for (size_t i = 0; i < n; ++i)
    dist += std::hypot(get_u(i) - nm.cu, get_v(i) - nm.cv);
  dist /= double(n);
  if (dist < kNormalizerEps)
    throw Error(ErrorKind::DegenerateConfiguration, "pixel coordinates are all identical");
  nm.su = nm.sv = std::sqrt(2.0) / dist;
  return nm;
}

template <class GetP>
inline Normalizer3d normalize_3d(size_t n, GetP get_p) {
  Normalizer3d nm;
  for (size_t i = 0; i < n; ++i) nm.c += get_p(i);
  nm.c /= double(n);
  double dist = 0.0;
  for (size_t i = 0; i < n; ++i) dist += (get_p(i) - nm.c).norm();
  dist /= double(n);
  if (dist < kNormalizerEps)
    throw Error(ErrorKind::DegenerateConfiguration, "world points are all identical");
  nm.s = std::sqrt(3.0) / dist;
  return nm;
}

template <class T>
inline std::vector<T> subsample(const std::vector<T>& in) {
  if (in.size() <= kSubsampleAbove) return in;
  std::vector<T> out;
  out.reserve(kSubsampleTo);
  double step = static_cast<double>(in.size()) / static_cast<double>(kSubsampleTo);
  for (size_t i = 0; i < kSubsampleTo; ++i)
    out.push_back(in[static_cast<size_t>(i * step)]);
  return out;
}

}  // namespace detail

struct MpSolution {
  ProjectionMatrix mp;
  double reprojection_rmse_px = 0.0;
};

// Direct linear solve of the 3x4 projection from pixel/world pairs, with
// centroid-shift + isotropic-scaling conditioning on both point sets.
inline MpSolution solve_mp(const CorrespondenceSet& corrs) {
  const auto pairs = detail::subsample(corrs.pairs);
  size_t n = pairs.size();
  if (n < 6)
    throw Error(ErrorKind::TooFewPoints, "projection solve needs at least 6 pairs");

  auto n2 = detail::normalize_2d(
      n, [&](size_t i) { return pairs[i].up; }, [&](size_t i) { return pairs[i].vp; });
  auto n3 = detail::normalize_3d(n, [&](size_t i) { return pairs[i].world; });

  Eigen::MatrixXd a(2 * n, 12);
  for (size_t i = 0; i < n; ++i) {
    Vec3 pw = n3.s * (pairs[i].world - n3.c);
    double u = n2.su * (pairs[i].up - n2.cu);
    double v = n2.sv * (pairs[i].vp - n2.cv);
    Eigen::RowVector4d xh(pw.x(), pw.y(), pw.z(), 1.0);
    a.row(2 * i) << xh, Eigen::RowVector4d::Zero(), -u * xh;
    a.row(2 * i + 1) << Eigen::RowVector4d::Zero(), xh, -v * xh;
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  double smallest = sv(11), second = sv(10);
  if (!(second > kDegenerateGap * smallest))
    throw Error(ErrorKind::DegenerateConfiguration,
                "correspondences do not constrain the projection (coplanar or "
                "otherwise rank-deficient input)");

  Eigen::Matrix<double, 12, 1> m = svd.matrixV().col(11);
  Mat34 mn;
  mn << m(0), m(1), m(2), m(3), m(4), m(5), m(6), m(7), m(8), m(9), m(10), m(11);

  // Undo the conditioning: M = T2d^-1 * Mn * T3d.
  Mat3 t2i = Mat3::Identity();
  t2i(0, 0) = 1.0 / n2.su;
  t2i(1, 1) = 1.0 / n2.sv;
  t2i(0, 2) = n2.cu;
  t2i(1, 2) = n2.cv;
  Eigen::Matrix4d t3 = Eigen::Matrix4d::Identity();
  t3.block<3, 3>(0, 0) *= n3.s;
  t3.block<3, 1>(0, 3) = -n3.s * n3.c;
  ProjectionMatrix mp{scale_normalized(Mat34(t2i * mn * t3))};

  double sse = 0.0;
  for (size_t i = 0; i < n; ++i) {
    PixelProjection proj = project(mp, pairs[i].world);
    double du = proj.u - pairs[i].up, dv = proj.v - pairs[i].vp;
    sse += du * du + dv * dv;
  }
  return {mp, std::sqrt(sse / double(n))};
}

struct MsSolution {
  ReducedSpdgVector ms;
  double residual_rms = 0.0;
};

// Least-squares solve of the reduced device vector from b-row constraints.
inline MsSolution solve_ms(const SpdgCorrespondenceSet& corrs) {
  const auto pairs = detail::subsample(corrs.pairs);
  size_t n = pairs.size();
  if (n < 7)
    throw Error(ErrorKind::TooFewPoints, "device solve needs at least 7 pairs");

  Eigen::MatrixXd b(n, 7);
  for (size_t i = 0; i < n; ++i) b.row(i) = spdg_row(pairs[i].world, pairs[i].vs);

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(b);
  qr.setThreshold(1e-10);
  if (qr.rank() < 7)
    throw Error(ErrorKind::RankDeficient,
                "design matrix rank " + std::to_string(qr.rank()) +
                    " < 7: points do not span the device geometry");
  Eigen::VectorXd rhs = Eigen::VectorXd::Ones(n);
  Vec7 m = qr.solve(rhs);

  double sse = (b * m - rhs).squaredNorm();
  return {ReducedSpdgVector{m}, std::sqrt(sse / double(n))};
}

struct CalibrationResult {
  ProjectionMatrix mp;
  ReducedSpdgVector ms;
  double reprojection_rmse_px = 0.0;
  double spdg_residual_rms = 0.0;
  int num_points = 0;
  double cube_side_mm = 0.0;
  double period_T = 0.0;
  int frames_used = 0;          // fringe images behind this calibration
  size_t dropped_missing_phase = 0;
};

namespace detail {

inline CalibrationResult calibrate_common(const CorrespondenceSet& corrs,
                                          const GridF& absolute_phase,
                                          const Mask& phase_mask, double side,
                                          double period_T, int frames_used) {
  SpdgCorrespondenceSet matched = match_vs(corrs, absolute_phase, phase_mask, period_T);
  MpSolution mp = solve_mp(corrs);
  MsSolution ms = solve_ms(matched);
  CalibrationResult result;
  result.mp = mp.mp;
  result.ms = ms.ms;
  result.reprojection_rmse_px = mp.reprojection_rmse_px;
  result.spdg_residual_rms = ms.residual_rms;
  result.num_points = static_cast<int>(matched.pairs.size());
  result.cube_side_mm = side;
  result.period_T = period_T;
  result.frames_used = frames_used;
  result.dropped_missing_phase = matched.dropped_missing_phase;
  return result;
}

}  // namespace detail

// Oracle calibration: a single rendered view supplies both the pointmap and
// the exact phase, standing in for learned pointmap/phase predictors.
inline CalibrationResult calibrate(const twin::SceneConfig& scene) {
  twin::RenderOutput rendered = twin::render(scene);
  twin::Pointmap pm = twin::generate_pointmap(rendered, scene);
  CorrespondenceSet corrs = filter_pointmap(pm, scene.cube);
  return detail::calibrate_common(corrs, rendered.phase_true, rendered.mask,
                                  scene.cube.side, scene.fringe.period_T,
                                  /*frames_used=*/1);
}

// Measured calibration: phase comes from phase-shifted fringe frames.
struct FringeCalibrationInput {
  twin::Pointmap pointmap;
  std::vector<GridF> frames;
  double cube_side_mm = 50.0;
  double period_T = 0.0;
};

inline CalibrationResult calibrate(const FringeCalibrationInput& in) {
  twin::CubeModel cube;
  cube.side = in.cube_side_mm;
  CorrespondenceSet corrs = filter_pointmap(in.pointmap, cube);
  phase::PhasePipeline phases = phase::analyze_frames(in.frames);
  return detail::calibrate_common(corrs, phases.absolute, phases.maps.modulation_mask,
                                  in.cube_side_mm, in.period_T,
                                  static_cast<int>(in.frames.size()));
}

}  // namespace spicalib::calib
