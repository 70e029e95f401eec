#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include "helpers.hpp"
#include "spicalib/geometry.hpp"

using namespace spicalib;
using testutil::make_rig;
using testutil::random_box_point;
using testutil::random_rotation;

namespace {

// Plain-loop multiplication oracle, independent of Eigen expression code.
Mat34 mul_oracle(const Mat3& a, const Mat3& r, const Vec3& t) {
  double rt[3][4];
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) rt[i][j] = r(i, j);
    rt[i][3] = t(i);
  }
  Mat34 m;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += a(i, k) * rt[k][j];
      m(i, j) = acc;
    }
  return m;
}

}  // namespace

TEST_CASE("compose_projection identity gives [I | 0]") {
  ProjectionMatrix m = compose_projection(CameraIntrinsics{1, 1, 0, 0, 0}, Pose{});
  Mat34 expect;
  expect << 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0;
  REQUIRE((m.m - expect).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("compose_projection matches a plain multiplication oracle") {
  Sampler s(2024);
  for (int i = 0; i < 100; ++i) {
    CameraIntrinsics intr{s.uniform(100, 900), s.uniform(100, 900), s.uniform(-5, 5),
                          s.uniform(-100, 100), s.uniform(-100, 100)};
    Pose pose{random_rotation(s), Vec3(s.uniform(-500, 500), s.uniform(-500, 500),
                                       s.uniform(-500, 500))};
    Mat34 expect = mul_oracle(intr.matrix(), pose.R, pose.t);
    ProjectionMatrix got = compose_projection(intr, pose);
    REQUIRE((got.m - expect).cwiseAbs().maxCoeff() <= 1e-12 * expect.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("composed projection matrices have rank 3") {
  Sampler s(7);
  for (int i = 0; i < 50; ++i) {
    auto rig = make_rig(s);
    Eigen::JacobiSVD<Mat34> svd(rig.mp.m);
    REQUIRE(svd.singularValues()(2) > 1e-6 * svd.singularValues()(0));
  }
}

TEST_CASE("project basics") {
  Mat34 ident;
  ident << 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0;
  ProjectionMatrix p{ident};

  PixelProjection px = project(p, WorldPoint(0, 0, 5));
  CHECK(px.u == 0.0);
  CHECK(px.v == 0.0);
  CHECK(px.s == 5.0);

  px = project(p, WorldPoint(2, -3, 4));
  CHECK(px.u == Catch::Approx(0.5));
  CHECK(px.v == Catch::Approx(-0.75));
  CHECK(px.s == 4.0);

  REQUIRE_THROWS_MATCHES(project(p, WorldPoint(1, 1, 0)), Error,
                         Catch::Matchers::Predicate<Error>([](const Error& e) {
                           return e.kind() == ErrorKind::DepthAtInfinity;
                         }));
}

TEST_CASE("back_project basics") {
  SECTION("identity intrinsics and pose") {
    WorldPoint x = back_project(CameraIntrinsics{1, 1, 0, 0, 0}, Pose{}, 2.0, -1.0, 3.0);
    REQUIRE((x - WorldPoint(6, -3, 3)).norm() < 1e-12);
  }
  SECTION("zero depth lands on the camera center") {
    Sampler s(11);
    for (int i = 0; i < 20; ++i) {
      auto rig = make_rig(s);
      WorldPoint c = back_project(rig.cam_intr, rig.cam_pose, s.uniform(0, 128),
                                  s.uniform(0, 128), 0.0);
      WorldPoint expect = -(rig.cam_pose.R.transpose() * rig.cam_pose.t);
      REQUIRE((c - expect).norm() < 1e-9 * (1.0 + expect.norm()));
    }
  }
  SECTION("singular intrinsics rejected") {
    REQUIRE_THROWS_MATCHES(back_project(CameraIntrinsics{0, 1, 0, 0, 0}, Pose{}, 0, 0, 1), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                             return e.kind() == ErrorKind::SingularIntrinsics;
                           }));
  }
}

TEST_CASE("project and back_project round-trip") {
  Sampler s(31337);
  for (int i = 0; i < 1000; ++i) {
    auto rig = make_rig(s);
    WorldPoint x = random_box_point(s);
    PixelProjection px = project(rig.mp, x);
    WorldPoint back = back_project(rig.cam_intr, rig.cam_pose, px.u, px.v, px.s);
    REQUIRE((back - x).norm() <= 1e-9 * (1.0 + x.norm()));
  }
}

TEST_CASE("pose construction validates rotations") {
  Sampler s(5);
  Mat3 r = random_rotation(s);
  REQUIRE_NOTHROW(make_pose(r, Vec3(1, 2, 3)));

  Mat3 reflect = r;
  reflect.col(0) = -reflect.col(0);
  REQUIRE_THROWS_MATCHES(make_pose(reflect, Vec3::Zero()), Error,
                         Catch::Matchers::Predicate<Error>([](const Error& e) {
                           return e.kind() == ErrorKind::InvalidRotation;
                         }));

  Mat3 skewed = r;
  skewed(0, 1) += 1e-6;
  REQUIRE_THROWS_AS(make_pose(skewed, Vec3::Zero()), Error);

  Mat3 nearly = r;
  nearly(0, 1) += 1e-11;
  REQUIRE_NOTHROW(make_pose(nearly, Vec3::Zero()));
}

TEST_CASE("reduce_spdg ordering and gauge") {
  SECTION("named entries land in the documented order") {
    Mat34 full;
    full << 9, 9, 9, 9, 1.5, 2.5, 3.5, 1.0, 4.5, 5.5, 6.5, 7.5;
    Vec7 r = reduce_spdg(ProjectionMatrix{full}).v;
    Vec7 expect;
    expect << 4.5, 5.5, 6.5, 7.5, 1.5, 2.5, 3.5;
    REQUIRE((r - expect).cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("global rescale cancels") {
    Sampler s(17);
    auto rig = make_rig(s);
    Vec7 base = reduce_spdg(rig.ms_full).v;

    ProjectionMatrix doubled{rig.ms_full.m * 2.0};  // exact in binary floating point
    REQUIRE((reduce_spdg(doubled).v - base).cwiseAbs().maxCoeff() == 0.0);

    ProjectionMatrix scaled{rig.ms_full.m * 3.7};
    REQUIRE((reduce_spdg(scaled).v - base).cwiseAbs().maxCoeff() <=
            1e-13 * base.cwiseAbs().maxCoeff());
  }
  SECTION("vanishing normalizer rejected") {
    Mat34 full = Mat34::Ones();
    full(1, 3) = 0.0;
    REQUIRE_THROWS_MATCHES(reduce_spdg(ProjectionMatrix{full}), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                             return e.kind() == ErrorKind::DegenerateNormalizer;
                           }));
  }
}

TEST_CASE("published reduced vector survives the reduction unchanged") {
  // Reference solution shape: reduced entries of a device matrix whose
  // normalizer is one.
  Vec7 published;
  published << 0.58, 0.40, -0.12, 0.34, -4.22, -4.24, -200.90;
  Mat34 full = Mat34::Zero();
  full.row(0) << 1, 0, 0, 0;
  full(1, 0) = published(4);
  full(1, 1) = published(5);
  full(1, 2) = published(6);
  full(1, 3) = 1.0;
  full(2, 0) = published(0);
  full(2, 1) = published(1);
  full(2, 2) = published(2);
  full(2, 3) = published(3);
  REQUIRE((reduce_spdg(ProjectionMatrix{full}).v - published).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward model satisfies the reduced linear constraint") {
  Sampler s(99);
  for (int i = 0; i < 500; ++i) {
    auto rig = make_rig(s);
    ReducedSpdgVector ms = reduce_spdg(rig.ms_full);
    WorldPoint x = random_box_point(s);
    double vs = spdg_vs(rig.ms_full, x);
    double residual = (spdg_row(x, vs) * ms.v).value() - 1.0;
    REQUIRE(std::abs(residual) < 1e-9);
    REQUIRE(std::abs(spdg_vs(ms, x) - vs) < 1e-9 * (1.0 + std::abs(vs)));
  }
}

TEST_CASE("triangulation system matches a hand-built layout") {
  Mat34 p;  // largest-magnitude entry is already 1, canonical scale is a no-op
  p << 1, 0.25, 0, 0.5, 0, 0.75, -0.5, 0.25, 0.125, 0, 0.25, 0.5;
  Vec7 r;
  r << 0.5, 0.25, -0.5, 2.0, 1.0, -1.0, 0.75;
  double up = 2.0, vp = -1.0, vs = 4.0;

  TriangulationSystem sys =
      triangulation_system(ProjectionMatrix{p}, ReducedSpdgVector{r}, up, vp, vs);

  Mat3 expect_c;
  expect_c << 1 - 2.0 * 0.125, 0.25 - 2.0 * 0.0, 0 - 2.0 * 0.25,   //
      0 + 1.0 * 0.125, 0.75 + 1.0 * 0.0, -0.5 + 1.0 * 0.25,        //
      1.0 - 4.0 * 0.5, -1.0 - 4.0 * 0.25, 0.75 - 4.0 * (-0.5);
  Vec3 expect_d(2.0 * 0.5 - 0.5, -1.0 * 0.5 - 0.25, 4.0 * 2.0 - 1.0);

  REQUIRE((sys.C - expect_c).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((sys.d - expect_d).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("triangulate inverts the forward model") {
  Sampler s(424242);
  for (int i = 0; i < 1000; ++i) {
    auto rig = make_rig(s);
    ReducedSpdgVector ms = reduce_spdg(rig.ms_full);
    WorldPoint x = random_box_point(s);
    PixelProjection px = project(rig.mp, x);
    double vs = spdg_vs(rig.ms_full, x);
    WorldPoint got = triangulate(rig.mp, ms, px.u, px.v, vs);
    REQUIRE((got - x).norm() <= 1e-9 * (1.0 + x.norm()));
  }
}

TEST_CASE("triangulate is invariant to projector matrix scale") {
  SECTION("relative error on realistic matrices") {
    Sampler s(606);
    for (int i = 0; i < 100; ++i) {
      auto rig = make_rig(s);
      ReducedSpdgVector ms = reduce_spdg(rig.ms_full);
      WorldPoint x = random_box_point(s);
      PixelProjection px = project(rig.mp, x);
      double vs = spdg_vs(rig.ms_full, x);
      WorldPoint a = triangulate(rig.mp, ms, px.u, px.v, vs);
      WorldPoint b = triangulate(ProjectionMatrix{rig.mp.m * 7.3}, ms, px.u, px.v, vs);
      REQUIRE((a - b).norm() <= 1e-9 * (1.0 + a.norm()));
    }
  }
  SECTION("bit-for-bit when the rescale is exact") {
    // Power-of-two entries make every product with c exact, so the canonical
    // scale inside triangulate reproduces identical bits.
    Mat34 p;
    p << 1, -0.5, 0.25, 2, 0.125, 1, -2, 0.5, 0.25, -0.125, 0.5, 1;
    Vec7 r;
    r << 0.31, 0.17, -0.23, 1.9, 0.41, -0.77, 0.59;
    double up = 37.25, vp = 61.5, vs = 4.125;
    WorldPoint a = triangulate(ProjectionMatrix{p}, ReducedSpdgVector{r}, up, vp, vs);
    WorldPoint b = triangulate(ProjectionMatrix{p * 7.3}, ReducedSpdgVector{r}, up, vp, vs);
    REQUIRE(a.x() == b.x());
    REQUIRE(a.y() == b.y());
    REQUIRE(a.z() == b.z());
  }
}

TEST_CASE("triangulate rejects ill-conditioned systems") {
  Mat34 ident;
  ident << 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0;
  Vec7 r;
  r << 0, 0, 0, 1, 1, 0, 0;  // row three collapses onto row one at vs = 1
  REQUIRE_THROWS_MATCHES(
      triangulate(ProjectionMatrix{ident}, ReducedSpdgVector{r}, 0.0, 0.0, 1.0), Error,
      Catch::Matchers::Predicate<Error>([](const Error& e) {
        return e.kind() == ErrorKind::DegenerateRays;
      }));
}

TEST_CASE("adjugate inverse agrees with a reference inverse") {
  Sampler s(808);
  for (int i = 0; i < 200; ++i) {
    Mat3 a;
    for (int k = 0; k < 9; ++k) a(k / 3, k % 3) = s.uniform(-10, 10);
    Inverse3 inv = invert_adjugate(a);
    if (std::abs(inv.det) < 1e-6) continue;
    REQUIRE((inv.inv - a.inverse()).cwiseAbs().maxCoeff() <=
            1e-9 * inv.inv.cwiseAbs().maxCoeff());
    REQUIRE(inv.cond >= 1.0);
  }
  Mat3 singular = Mat3::Ones();
  REQUIRE(invert_adjugate(singular).det == 0.0);
}

TEST_CASE("scale normalization fixes norm and sign") {
  Sampler s(121);
  auto rig = make_rig(s);
  Mat34 n = scale_normalized(rig.mp.m);
  REQUIRE(n.norm() == Catch::Approx(1.0).epsilon(1e-12));
  Eigen::Index rr = 0, cc = 0;
  n.cwiseAbs().maxCoeff(&rr, &cc);
  REQUIRE(n(rr, cc) > 0.0);
  REQUIRE(testutil::up_to_scale_diff(rig.mp.m, -3.25 * rig.mp.m) < 1e-12);
}
