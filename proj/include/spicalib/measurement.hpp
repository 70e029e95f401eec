#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "spicalib/calibration.hpp"
#include "spicalib/geometry.hpp"
#include "spicalib/image.hpp"
#include "spicalib/parallel.hpp"
#include "spicalib/phase.hpp"

namespace spicalib::measure {

struct PointCloud {
  std::vector<Vec3> points;                 // mm
  std::vector<std::array<int, 2>> pixels;   // source pixel per point
  size_t dropped_degenerate = 0;            // rays the triangulation rejected
};

// Triangulates every modulated pixel of an absolute-phase map.
inline PointCloud reconstruct(const calib::CalibrationResult& calib,
                              const GridF& absolute_phase, const Mask& modulation_mask) {
  require_same_size(absolute_phase, modulation_mask, "reconstruct");
  int w = absolute_phase.width, h = absolute_phase.height;
  Grid<uint8_t> ok(w, h, 0);
  Vec3Grid pts(w, h, Vec3::Zero());
  std::atomic<size_t> dropped{0};

  parallel_for_rows(h, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < w; ++x) {
        if (!mask_at(modulation_mask, x, y)) continue;
        double vs = phase::phase_to_vs(absolute_phase.at(x, y), calib.period_T);
        try {
          pts.at(x, y) = triangulate(calib.mp, calib.ms, double(x), double(y), vs);
          ok.at(x, y) = 1;
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::DegenerateRays) throw;
          dropped.fetch_add(1, std::memory_order_relaxed);
        }
      }
  });

  PointCloud cloud;
  cloud.dropped_degenerate = dropped.load();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (ok.at(x, y)) {
        cloud.points.push_back(pts.at(x, y));
        cloud.pixels.push_back({x, y});
      }
  return cloud;
}

struct PlaneParams {
  Vec3 normal = Vec3::UnitZ();  // unit length
  double offset = 0.0;          // normal . x = offset
};

struct SphereParams {
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
};

struct CubeParams {
  Mat3 rotation = Mat3::Identity();  // columns are the cube's axes
  Vec3 translation = Vec3::Zero();   // cube corner: cube spans t + R*[0,side]^3
  double side = 0.0;
  double dihedral_deg = 0.0;  // between the two largest faces, unconstrained fits
  int faces = 0;
};

struct FitReport {
  std::string model;  // "plane" | "sphere" | "cube"
  PlaneParams plane;
  SphereParams sphere;
  CubeParams cube;
  double rmse_mm = 0.0;
  size_t inlier_count = 0;
};

namespace detail {

struct Scatter {
  Vec3 centroid = Vec3::Zero();
  Mat3 cov = Mat3::Zero();  // unnormalized
};

inline Scatter scatter_of(const std::vector<Vec3>& pts) {
  Scatter s;
  for (const auto& p : pts) s.centroid += p;
  s.centroid /= double(pts.size());
  for (const auto& p : pts) {
    Vec3 d = p - s.centroid;
    s.cov += d * d.transpose();
  }
  return s;
}

}  // namespace detail

// Total-least-squares plane: smallest principal direction of the scatter.
inline FitReport fit_plane(const std::vector<Vec3>& pts) {
  if (pts.size() < 3)
    throw Error(ErrorKind::DegenerateInput, "plane fit needs at least 3 points");
  detail::Scatter s = detail::scatter_of(pts);
  Eigen::SelfAdjointEigenSolver<Mat3> eig(s.cov);
  const Vec3& evals = eig.eigenvalues();  // ascending
  if (!(evals(1) > 1e-12 * std::max(evals(2), 1.0)))
    throw Error(ErrorKind::DegenerateInput, "points are collinear; plane is ambiguous");

  FitReport rep;
  rep.model = "plane";
  Vec3 n = eig.eigenvectors().col(0);
  double offset = n.dot(s.centroid);
  if (offset < 0.0 || (offset == 0.0 && n.sum() < 0.0)) {
    n = -n;
    offset = -offset;
  }
  rep.plane = {n, offset};
  rep.rmse_mm = std::sqrt(std::max(evals(0), 0.0) / double(pts.size()));
  rep.inlier_count = pts.size();
  return rep;
}

// Algebraic sphere (linearized radius equation) refined by one Gauss-Newton
// pass on geometric distance, with step-halving if the pass diverges.
inline FitReport fit_sphere(const std::vector<Vec3>& pts) {
  size_t n = pts.size();
  if (n < 4)
    throw Error(ErrorKind::DegenerateInput, "sphere fit needs at least 4 points");

  Eigen::MatrixXd a(n, 4);
  Eigen::VectorXd rhs(n);
  for (size_t i = 0; i < n; ++i) {
    a.row(i) << 2.0 * pts[i].x(), 2.0 * pts[i].y(), 2.0 * pts[i].z(), 1.0;
    rhs(i) = pts[i].squaredNorm();
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(1e-10);
  if (qr.rank() < 4)
    throw Error(ErrorKind::DegenerateInput, "points are coplanar; sphere is ambiguous");
  Eigen::Vector4d p = qr.solve(rhs);
  Vec3 center = p.head<3>();
  double r2 = p(3) + center.squaredNorm();
  if (!(r2 > 0.0))
    throw Error(ErrorKind::DegenerateInput, "algebraic sphere has no real radius");
  double radius = std::sqrt(r2);

  auto sse_of = [&](const Vec3& c, double r) {
    double sse = 0.0;
    for (const auto& q : pts) {
      double d = (q - c).norm() - r;
      sse += d * d;
    }
    return sse;
  };

  // One Gauss-Newton pass on f_i = |x_i - c| - r.
  Eigen::Matrix4d jtj = Eigen::Matrix4d::Zero();
  Eigen::Vector4d jtf = Eigen::Vector4d::Zero();
  for (const auto& q : pts) {
    Vec3 diff = q - center;
    double dist = diff.norm();
    if (dist < 1e-12) continue;
    Eigen::Vector4d row;
    row << -diff / dist, -1.0;
    jtj.noalias() += row * row.transpose();
    jtf += row * (dist - radius);
  }
  double sse = sse_of(center, radius);
  Eigen::Vector4d delta = jtj.ldlt().solve(-jtf);
  for (int half = 0; half < 8; ++half) {
    Vec3 c_try = center + delta.head<3>();
    double r_try = radius + delta(3);
    if (r_try > 0.0) {
      double sse_try = sse_of(c_try, r_try);
      if (sse_try <= sse) {
        center = c_try;
        radius = r_try;
        sse = sse_try;
        break;
      }
    }
    delta *= 0.5;
  }

  FitReport rep;
  rep.model = "sphere";
  rep.sphere = {center, radius};
  rep.rmse_mm = std::sqrt(sse / double(n));
  rep.inlier_count = n;
  return rep;
}

namespace detail {

struct NeighborGrid {
  double cell;
  std::unordered_map<int64_t, std::vector<int>> cells;

  static int64_t key(int ix, int iy, int iz) {
    return (int64_t(ix) & 0x1FFFFF) | ((int64_t(iy) & 0x1FFFFF) << 21) |
           ((int64_t(iz) & 0x1FFFFF) << 42);
  }

  NeighborGrid(const std::vector<Vec3>& pts, double cell_size) : cell(cell_size) {
    for (size_t i = 0; i < pts.size(); ++i) {
      const Vec3& p = pts[i];
      cells[key(int(std::floor(p.x() / cell)), int(std::floor(p.y() / cell)),
                int(std::floor(p.z() / cell)))]
          .push_back(int(i));
    }
  }

  template <class Fn>
  void visit_near(const Vec3& p, Fn fn) const {
    int ix = int(std::floor(p.x() / cell));
    int iy = int(std::floor(p.y() / cell));
    int iz = int(std::floor(p.z() / cell));
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          auto it = cells.find(key(ix + dx, iy + dy, iz + dz));
          if (it == cells.end()) continue;
          for (int j : it->second) fn(j);
        }
  }
};

}  // namespace detail

// Segments the cloud into planar clusters by region growing on local normals,
// then fits a rigidly posed cube of the given side: mutually orthogonal face
// planes with free offsets, orthogonality enforced through a shared rotation.
inline FitReport fit_cube(const std::vector<Vec3>& pts, double side) {
  size_t n = pts.size();
  if (n < 30 || side <= 0.0)
    throw Error(ErrorKind::DegenerateInput, "cube fit needs a populated cloud");

  double cell = std::max(side / 16.0, 0.5);
  detail::NeighborGrid grid(pts, cell);

  // Local normals from neighborhood scatter.
  std::vector<Vec3> normals(n, Vec3::Zero());
  std::vector<uint8_t> has_normal(n, 0);
  std::vector<std::vector<int>> neighbors(n);
  double rad2 = (2.0 * cell) * (2.0 * cell);
  for (size_t i = 0; i < n; ++i) {
    auto& nb = neighbors[i];
    grid.visit_near(pts[i], [&](int j) {
      if (size_t(j) != i && (pts[j] - pts[i]).squaredNorm() <= rad2) nb.push_back(j);
    });
    if (nb.size() < 8) continue;
    Vec3 c = pts[i];
    for (int j : nb) c += pts[j];
    c /= double(nb.size() + 1);
    Mat3 cov = (pts[i] - c) * (pts[i] - c).transpose();
    for (int j : nb) {
      Vec3 d = pts[j] - c;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    if (eig.eigenvalues()(1) < 1e-12) continue;  // degenerate neighborhood
    normals[i] = eig.eigenvectors().col(0);
    has_normal[i] = 1;
  }

  // Region growing: breadth-first over the neighbor graph, admitting points
  // whose normal agrees with the region's running mean.
  const double kCosGate = std::cos(deg2rad(18.0));
  std::vector<int> region_of(n, -1);
  std::vector<std::vector<int>> regions;
  for (size_t seed = 0; seed < n; ++seed) {
    if (!has_normal[seed] || region_of[seed] >= 0) continue;
    int id = int(regions.size());
    std::vector<int> members{int(seed)};
    region_of[seed] = id;
    Vec3 mean = normals[seed];
    std::deque<int> work{int(seed)};
    while (!work.empty()) {
      int cur = work.front();
      work.pop_front();
      for (int j : neighbors[cur]) {
        if (!has_normal[j] || region_of[j] >= 0) continue;
        double d = normals[j].dot(mean);
        if (std::abs(d) < kCosGate) continue;
        region_of[j] = id;
        members.push_back(j);
        mean = (mean + (d < 0.0 ? -1.0 : 1.0) * normals[j]).normalized();
        work.push_back(j);
      }
    }
    regions.push_back(std::move(members));
  }

  size_t min_face = std::max<size_t>(20, n / 50);
  std::vector<std::vector<int>> faces;
  for (auto& r : regions)
    if (r.size() >= min_face) faces.push_back(std::move(r));
  std::sort(faces.begin(), faces.end(),
            [](const auto& a, const auto& b) { return a.size() > b.size(); });
  if (faces.size() < 2)
    throw Error(ErrorKind::SegmentationFailed,
                "fewer than two stable planar clusters in the cloud");
  if (faces.size() > 3) faces.resize(3);
  for (auto& f : faces) std::sort(f.begin(), f.end());

  // Free (unconstrained) plane through a cluster.
  auto free_plane = [&](const std::vector<int>& f) {
    std::vector<Vec3> sub;
    sub.reserve(f.size());
    for (int i : f) sub.push_back(pts[i]);
    detail::Scatter s = detail::scatter_of(sub);
    Eigen::SelfAdjointEigenSolver<Mat3> eig(s.cov);
    return std::make_pair(Vec3(eig.eigenvectors().col(0)), s.centroid);
  };

  std::vector<Vec3> face_normals;
  for (const auto& f : faces) face_normals.push_back(free_plane(f).first);

  // Shared rotation: seed from the two largest faces, orthonormalized.
  Vec3 u0 = face_normals[0];
  Vec3 u1 = (face_normals[1] - face_normals[1].dot(u0) * u0).normalized();
  Mat3 rot;
  rot.col(0) = u0;
  rot.col(1) = u1;
  rot.col(2) = u0.cross(u1);

  std::vector<int> axis_of(faces.size());
  auto assign_axes = [&]() {
    for (size_t f = 0; f < faces.size(); ++f) {
      double best = -1.0;
      for (int a = 0; a < 3; ++a) {
        double d = std::abs(face_normals[f].dot(rot.col(a)));
        if (d > best) {
          best = d;
          axis_of[f] = a;
        }
      }
    }
  };
  assign_axes();

  // Per-face mean-centered squared residual along the assigned axis.
  auto sse_of = [&](const Mat3& r) {
    double sse = 0.0;
    for (size_t f = 0; f < faces.size(); ++f) {
      Vec3 u = r.col(axis_of[f]);
      double mean = 0.0;
      for (int i : faces[f]) mean += u.dot(pts[i]);
      mean /= double(faces[f].size());
      for (int i : faces[f]) {
        double d = u.dot(pts[i]) - mean;
        sse += d * d;
      }
    }
    return sse;
  };

  // Gauss-Newton on the rotation: residual per point is its deviation from
  // the face's mean offset along the assigned axis.
  auto refine_rotation = [&]() {
    double sse = sse_of(rot);
    for (int iter = 0; iter < 15; ++iter) {
      Mat3 jtj = Mat3::Zero();
      Vec3 jtf = Vec3::Zero();
      for (size_t f = 0; f < faces.size(); ++f) {
        Vec3 u = rot.col(axis_of[f]);
        Vec3 cen = Vec3::Zero();
        for (int i : faces[f]) cen += pts[i];
        cen /= double(faces[f].size());
        for (int i : faces[f]) {
          Vec3 d = pts[i] - cen;
          Vec3 jrow = u.cross(d);  // residual (exp([w]x)u).d varies as w.(u x d)
          double res = u.dot(d);
          jtj.noalias() += jrow * jrow.transpose();
          jtf += jrow * res;
        }
      }
      Vec3 delta = jtj.ldlt().solve(-jtf);
      if (!delta.allFinite() || delta.norm() < 1e-14) break;
      bool accepted = false;
      for (int half = 0; half < 8; ++half) {
        Mat3 r_try =
            Eigen::AngleAxisd(delta.norm(), delta.normalized()).toRotationMatrix() * rot;
        double sse_try = sse_of(r_try);
        if (sse_try <= sse) {
          rot = r_try;
          sse = sse_try;
          accepted = true;
          break;
        }
        delta *= 0.5;
      }
      if (!accepted) break;
    }
  };

  // Ideal-cube plane offsets per face: a lone face takes its own mean; two
  // parallel faces on the same axis are tied exactly `side` apart.
  auto face_offsets = [&]() {
    std::vector<double> d(faces.size(), 0.0);
    for (int a = 0; a < 3; ++a) {
      std::vector<size_t> fs;
      for (size_t f = 0; f < faces.size(); ++f)
        if (axis_of[f] == a) fs.push_back(f);
      if (fs.empty()) continue;
      Vec3 u = rot.col(a);
      std::vector<double> sum(fs.size(), 0.0);
      for (size_t k = 0; k < fs.size(); ++k)
        for (int i : faces[fs[k]]) sum[k] += u.dot(pts[i]);
      if (fs.size() == 2) {
        size_t n0 = faces[fs[0]].size(), n1 = faces[fs[1]].size();
        if (sum[0] / double(n0) > sum[1] / double(n1)) {
          std::swap(fs[0], fs[1]);
          std::swap(sum[0], sum[1]);
          std::swap(n0, n1);
        }
        double lo = (sum[0] + sum[1] - double(n1) * side) / double(n0 + n1);
        d[fs[0]] = lo;
        d[fs[1]] = lo + side;
      } else {
        for (size_t k = 0; k < fs.size(); ++k)
          d[fs[k]] = sum[k] / double(faces[fs[k]].size());
      }
    }
    return d;
  };

  // Robust residual scale (worst face) for the reassignment gate.
  auto residual_sigma = [&](const std::vector<double>& d) {
    double worst = 0.0;
    for (size_t f = 0; f < faces.size(); ++f) {
      Vec3 u = rot.col(axis_of[f]);
      std::vector<double> res;
      res.reserve(faces[f].size());
      for (int i : faces[f]) res.push_back(std::abs(u.dot(pts[i]) - d[f]));
      std::nth_element(res.begin(), res.begin() + res.size() / 2, res.end());
      worst = std::max(worst, 1.4826 * res[res.size() / 2]);
    }
    return worst;
  };

  // Alternate the rotation fit with reassignment of every point to its
  // nearest fitted face plane. Region growing only initializes the clusters:
  // points near cube edges have blended local normals and often start in the
  // wrong cluster, which would bias the planes if left in place.
  for (int round = 0; round < 4; ++round) {
    refine_rotation();
    std::vector<double> d = face_offsets();
    double gate = std::max(5.0 * residual_sigma(d), 1e-3 * side);
    std::vector<std::vector<int>> next(faces.size());
    for (size_t i = 0; i < n; ++i) {
      double best = gate;
      int bf = -1;
      for (size_t f = 0; f < faces.size(); ++f) {
        double dist = std::abs(rot.col(axis_of[f]).dot(pts[i]) - d[f]);
        if (dist < best) {
          best = dist;
          bf = int(f);
        }
      }
      if (bf >= 0) next[size_t(bf)].push_back(int(i));
    }
    next.erase(std::remove_if(next.begin(), next.end(),
                              [](const auto& f) { return f.size() < 3; }),
               next.end());
    if (next.size() < 2)
      throw Error(ErrorKind::SegmentationFailed,
                  "face clusters collapsed during refinement");
    bool stable = next == faces;
    faces = std::move(next);
    face_normals.clear();
    for (const auto& f : faces) face_normals.push_back(free_plane(f).first);
    axis_of.assign(faces.size(), 0);
    assign_axes();
    if (stable) break;
  }

  // Final pooled residuals against the ideal cube.
  std::vector<double> d = face_offsets();
  double sse = 0.0;
  size_t assigned = 0;
  for (size_t f = 0; f < faces.size(); ++f) {
    Vec3 u = rot.col(axis_of[f]);
    for (int i : faces[f]) {
      double r = u.dot(pts[i]) - d[f];
      sse += r * r;
      ++assigned;
    }
  }

  // Dihedral between the two largest faces, from unconstrained plane fits.
  std::vector<size_t> order(faces.size());
  for (size_t f = 0; f < faces.size(); ++f) order[f] = f;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return faces[a].size() > faces[b].size(); });
  double dihedral = std::acos(std::clamp(
                        std::abs(face_normals[order[0]].dot(face_normals[order[1]])),
                        0.0, 1.0)) *
                    180.0 / M_PI;

  // Cube corner from the fitted planes: observed axes take their face plane,
  // free axes center the cloud.
  detail::Scatter all;
  {
    std::vector<Vec3> sub;
    sub.reserve(assigned);
    for (const auto& f : faces)
      for (int i : f) sub.push_back(pts[i]);
    all = detail::scatter_of(sub);
  }
  Vec3 t_axis;
  for (int a = 0; a < 3; ++a) {
    double lo = 0.0;
    int observed = 0;
    for (size_t f = 0; f < faces.size(); ++f)
      if (axis_of[f] == a) {
        lo = observed ? std::min(lo, d[f]) : d[f];
        ++observed;
      }
    Vec3 u = rot.col(a);
    if (observed >= 2) {
      t_axis(a) = lo;
    } else if (observed == 1) {
      t_axis(a) = u.dot(all.centroid) > lo ? lo : lo - side;
    } else {
      t_axis(a) = u.dot(all.centroid) - 0.5 * side;
    }
  }

  FitReport rep;
  rep.model = "cube";
  rep.cube.rotation = rot;
  rep.cube.translation = rot * t_axis;
  rep.cube.side = side;
  rep.cube.dihedral_deg = dihedral;
  rep.cube.faces = int(faces.size());
  rep.rmse_mm = std::sqrt(sse / double(assigned));
  rep.inlier_count = assigned;
  return rep;
}

}  // namespace spicalib::measure
