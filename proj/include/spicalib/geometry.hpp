#pragma once

#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "spicalib/error.hpp"

namespace spicalib {

using Vec3 = Eigen::Vector3d;
using Vec7 = Eigen::Matrix<double, 7, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat34 = Eigen::Matrix<double, 3, 4>;

// Cartesian point (xw, yw, zw) in millimeters.
using WorldPoint = Vec3;

constexpr double kDepthEps = 1e-12;
constexpr double kNormalizerEps = 1e-12;
constexpr double kConditionLimit = 1e12;
constexpr double kRotationTol = 1e-9;

inline double deg2rad(double d) { return d * (M_PI / 180.0); }

struct CameraIntrinsics {
  double fu = 1.0;
  double fv = 1.0;
  double gamma = 0.0;  // skew, zero for all synthetic devices here
  double u0 = 0.0;
  double v0 = 0.0;

  Mat3 matrix() const {
    Mat3 a;
    a << fu, gamma, u0, 0.0, fv, v0, 0.0, 0.0, 1.0;
    return a;
  }
};

inline bool is_rotation(const Mat3& r, double tol = kRotationTol) {
  return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
         r.determinant() > 0.0;
}

// Rigid transform X_cam = R * X_world + t.
struct Pose {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
};

inline Pose make_pose(const Mat3& r, const Vec3& t) {
  if (!is_rotation(r))
    throw Error(ErrorKind::InvalidRotation, "matrix is not a proper rotation");
  return Pose{r, t};
}

inline Mat3 rot_x(double rad) {
  double c = std::cos(rad), s = std::sin(rad);
  Mat3 r;
  r << 1, 0, 0, 0, c, -s, 0, s, c;
  return r;
}

inline Mat3 rot_y(double rad) {
  double c = std::cos(rad), s = std::sin(rad);
  Mat3 r;
  r << c, 0, s, 0, 1, 0, -s, 0, c;
  return r;
}

inline Mat3 rot_z(double rad) {
  double c = std::cos(rad), s = std::sin(rad);
  Mat3 r;
  r << c, -s, 0, s, c, 0, 0, 0, 1;
  return r;
}

// 3x4 projective device matrix, meaningful up to scale.
struct ProjectionMatrix {
  Mat34 m = Mat34::Zero();
};

// Reduced pinhole description of the fringe device, normalized by m24:
// entries (m31, m32, m33, m34, m21, m22, m23) / m24 in that order.
struct ReducedSpdgVector {
  Vec7 v = Vec7::Zero();
};

// Linear system C * X = d whose solution is the metric surface point.
struct TriangulationSystem {
  Mat3 C = Mat3::Zero();
  Vec3 d = Vec3::Zero();
};

struct PixelProjection {
  double u = 0.0;
  double v = 0.0;
  double s = 0.0;  // projective depth; camera-frame z for A[R t] matrices
};

// Adjugate-based inverse with a cheap conditioning estimate
// (Frobenius norm product, an upper bound within a small factor of cond_2).
struct Inverse3 {
  Mat3 inv = Mat3::Zero();
  double det = 0.0;
  double cond = std::numeric_limits<double>::infinity();
};

inline Inverse3 invert_adjugate(const Mat3& a) {
  Inverse3 out;
  Mat3 adj;
  adj(0, 0) = a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1);
  adj(0, 1) = a(0, 2) * a(2, 1) - a(0, 1) * a(2, 2);
  adj(0, 2) = a(0, 1) * a(1, 2) - a(0, 2) * a(1, 1);
  adj(1, 0) = a(1, 2) * a(2, 0) - a(1, 0) * a(2, 2);
  adj(1, 1) = a(0, 0) * a(2, 2) - a(0, 2) * a(2, 0);
  adj(1, 2) = a(0, 2) * a(1, 0) - a(0, 0) * a(1, 2);
  adj(2, 0) = a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0);
  adj(2, 1) = a(0, 1) * a(2, 0) - a(0, 0) * a(2, 1);
  adj(2, 2) = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
  out.det = a(0, 0) * adj(0, 0) + a(0, 1) * adj(1, 0) + a(0, 2) * adj(2, 0);
  if (out.det != 0.0 && std::isfinite(out.det)) {
    out.inv = adj / out.det;
    out.cond = a.norm() * out.inv.norm();
  }
  return out;
}

// M = A [R t]  (world -> pixel, up to the projective depth).
inline ProjectionMatrix compose_projection(const CameraIntrinsics& intr, const Pose& pose) {
  Mat34 rt;
  rt.block<3, 3>(0, 0) = pose.R;
  rt.col(3) = pose.t;
  return ProjectionMatrix{intr.matrix() * rt};
}

inline PixelProjection project(const ProjectionMatrix& p, const WorldPoint& x) {
  Eigen::Vector4d xh(x.x(), x.y(), x.z(), 1.0);
  Vec3 h = p.m * xh;
  if (std::abs(h.z()) < kDepthEps)
    throw Error(ErrorKind::DepthAtInfinity, "projective depth vanished");
  return PixelProjection{h.x() / h.z(), h.y() / h.z(), h.z()};
}

// X = R^-1 (s A^-1 [u v 1]^T - t); s is the camera-frame z-depth.
inline WorldPoint back_project(const CameraIntrinsics& intr, const Pose& pose, double u, double v,
                               double s) {
  Inverse3 ai = invert_adjugate(intr.matrix());
  if (std::abs(ai.det) < kNormalizerEps)
    throw Error(ErrorKind::SingularIntrinsics, "intrinsic matrix not invertible");
  Inverse3 ri = invert_adjugate(pose.R);
  Vec3 ray = ai.inv * Vec3(u, v, 1.0);
  return ri.inv * (s * ray - pose.t);
}

inline ReducedSpdgVector reduce_spdg(const ProjectionMatrix& full) {
  double m24 = full.m(1, 3);
  if (std::abs(m24) < kNormalizerEps)
    throw Error(ErrorKind::DegenerateNormalizer, "normalizer entry m24 vanished");
  ReducedSpdgVector r;
  r.v << full.m(2, 0), full.m(2, 1), full.m(2, 2), full.m(2, 3), full.m(1, 0), full.m(1, 1),
      full.m(1, 2);
  r.v /= m24;
  return r;
}

// Device row coordinate predicted by the full matrix (second/third row ratio).
inline double spdg_vs(const ProjectionMatrix& full, const WorldPoint& x) {
  Eigen::Vector4d xh(x.x(), x.y(), x.z(), 1.0);
  double den = (full.m.row(2) * xh).value();
  if (std::abs(den) < kDepthEps)
    throw Error(ErrorKind::DepthAtInfinity, "projective depth vanished");
  return (full.m.row(1) * xh).value() / den;
}

// Same prediction from the reduced vector.
inline double spdg_vs(const ReducedSpdgVector& ms, const WorldPoint& x) {
  const Vec7& r = ms.v;
  double den = r(0) * x.x() + r(1) * x.y() + r(2) * x.z() + r(3);
  if (std::abs(den) < kDepthEps)
    throw Error(ErrorKind::DepthAtInfinity, "projective depth vanished");
  return (1.0 + r(4) * x.x() + r(5) * x.y() + r(6) * x.z()) / den;
}

// Design row b with b . ms = 1 for a consistent (point, vs) pair.
inline Eigen::Matrix<double, 1, 7> spdg_row(const WorldPoint& x, double vs) {
  Eigen::Matrix<double, 1, 7> b;
  b << vs * x.x(), vs * x.y(), vs * x.z(), vs, -x.x(), -x.y(), -x.z();
  return b;
}

// Canonical scale: divide by the largest-magnitude entry. Ratios of entries
// are scale-free as reals, so rescaled matrices that were scaled exactly in
// floating point canonicalize to identical bits.
inline Mat34 canonical_scale(const Mat34& m) {
  Eigen::Index r = 0, c = 0;
  double peak = m.cwiseAbs().maxCoeff(&r, &c);
  if (peak == 0.0 || !std::isfinite(peak))
    throw Error(ErrorKind::DegenerateRays, "projector matrix has no finite scale");
  return m / m(r, c);
}

inline TriangulationSystem triangulation_system(const ProjectionMatrix& mp,
                                                const ReducedSpdgVector& ms, double up, double vp,
                                                double vs) {
  Mat34 p = canonical_scale(mp.m);
  const Vec7& r = ms.v;
  TriangulationSystem sys;
  for (int j = 0; j < 3; ++j) {
    sys.C(0, j) = p(0, j) - up * p(2, j);
    sys.C(1, j) = p(1, j) - vp * p(2, j);
    sys.C(2, j) = r(4 + j) - vs * r(j);
  }
  sys.d << up * p(2, 3) - p(0, 3), vp * p(2, 3) - p(1, 3), vs * r(3) - 1.0;
  return sys;
}

// Metric surface point from one camera pixel and its fringe coordinate.
inline WorldPoint triangulate(const ProjectionMatrix& mp, const ReducedSpdgVector& ms, double up,
                              double vp, double vs) {
  TriangulationSystem sys = triangulation_system(mp, ms, up, vp, vs);
  Inverse3 ci = invert_adjugate(sys.C);
  if (ci.det == 0.0 || !std::isfinite(ci.det) || ci.cond > kConditionLimit)
    throw Error(ErrorKind::DegenerateRays, "triangulation system ill-conditioned");
  return ci.inv * sys.d;
}

// Unit Frobenius norm with the largest-magnitude entry positive; the
// canonical representative used for up-to-scale comparisons.
inline Mat34 scale_normalized(const Mat34& m) {
  double n = m.norm();
  if (n == 0.0) return m;
  Mat34 out = m / n;
  Eigen::Index r = 0, c = 0;
  out.cwiseAbs().maxCoeff(&r, &c);
  if (out(r, c) < 0.0) out = -out;
  return out;
}

}  // namespace spicalib
