#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "support.hpp"
#include "voltrack/geometry.hpp"
#include "voltrack/scenesim.hpp"

using namespace voltrack;

namespace {

Point3 random_point(Rng& rng, double radius) {
  Eigen::Vector3d v(rng.normal(), rng.normal(), rng.normal());
  return v.normalized() * radius * std::cbrt(rng.uniform());
}

}  // namespace

TEST_SUITE_BEGIN("geometry");

TEST_CASE("projection matches the closed form") {
  CameraParams cam;
  cam.intrinsics << 500, 0, 320, 0, 500, 240, 0, 0, 1;
  cam.translation = Eigen::Vector3d(0, 0, 5);
  cam.validate();
  const Projection p = project(Point3(0.2, -0.1, 1.0), cam);
  // pc = (0.2, -0.1, 6); pixel = (320 + 100/6, 240 - 50/6)
  CHECK(p.pixel.x() == doctest::Approx(320.0 + 100.0 / 6.0).epsilon(1e-12));
  CHECK(p.pixel.y() == doctest::Approx(240.0 - 50.0 / 6.0).epsilon(1e-12));
  CHECK(p.depth == doctest::Approx(6.0));
}

TEST_CASE("points behind the camera throw") {
  CameraParams cam;
  cam.translation = Eigen::Vector3d(0, 0, 5);
  CHECK_THROWS_AS(project(Point3(0, 0, -6), cam), DegenerateProjection);
  CHECK_THROWS_AS(project(Point3(0, 0, -5), cam), DegenerateProjection);
}

TEST_CASE("back-projected rays reproject to the source pixel") {
  const auto cams = ring_rig(3, 4.0, 0.5, 640, 480);
  Rng rng(11);
  for (const auto& cam : cams) {
    for (int i = 0; i < 10; ++i) {
      const Point2 pixel(rng.uniform(100, 540), rng.uniform(100, 380));
      const Eigen::Vector3d dir =
          cam.rotation.transpose() * (cam.intrinsics.inverse() * pixel.homogeneous());
      const Eigen::Vector3d origin = cam.center();
      for (double lambda : {0.5, 2.0, 7.0}) {
        const Projection p = project(origin + lambda * dir, cam);
        CHECK((p.pixel - pixel).norm() < 1e-8);
      }
    }
  }
}

TEST_CASE("camera validation rejects malformed parameters") {
  CameraParams cam;
  SUBCASE("reflection") {
    cam.rotation(0, 0) = -1.0;
    CHECK_THROWS_AS(cam.validate(), ConfigInvalid);
  }
  SUBCASE("non-orthonormal") {
    cam.rotation(0, 1) = 0.5;
    CHECK_THROWS_AS(cam.validate(), ConfigInvalid);
  }
  SUBCASE("negative focal") {
    cam.intrinsics(0, 0) = -2.0;
    CHECK_THROWS_AS(cam.validate(), ConfigInvalid);
  }
  SUBCASE("lower-triangular junk in K") {
    cam.intrinsics(2, 0) = 0.1;
    CHECK_THROWS_AS(cam.validate(), ConfigInvalid);
  }
}

TEST_CASE("pure x-translation gives the classic fundamental matrix") {
  CameraParams a, b;
  b.translation = Eigen::Vector3d(1, 0, 0);
  const FundamentalMatrix f = fundamental_matrix(a, b);
  CHECK_FALSE(f.degenerate);
  Eigen::Matrix3d expected = skew(Eigen::Vector3d(1, 0, 0));
  expected /= expected.norm();
  if (f.m(2, 1) * expected(2, 1) < 0) expected = -expected;
  CHECK((f.m - expected).norm() < 1e-12);
}

TEST_CASE("epipolar constraint holds for noiseless projections") {
  const auto cams = ring_rig(4, 4.0, 0.5, 640, 480);
  Rng rng(5);
  for (size_t ia = 0; ia < cams.size(); ++ia)
    for (size_t ib = 0; ib < cams.size(); ++ib) {
      if (ia == ib) continue;
      const FundamentalMatrix f = fundamental_matrix(cams[ia], cams[ib]);
      CHECK_FALSE(f.degenerate);
      CHECK(f.m.norm() == doctest::Approx(1.0).epsilon(1e-12));
      for (int i = 0; i < 20; ++i) {
        const Point3 x = random_point(rng, 0.75);
        const Point2 xa = project(x, cams[ia]).pixel;
        const Point2 xb = project(x, cams[ib]).pixel;
        const double residual = xb.homogeneous().dot(f.m * xa.homogeneous());
        CHECK(std::abs(residual) < 1e-8);
        CHECK(epipolar_distance(xb, epipolar_line(f, xa)) < 1e-6);
      }
    }
}

TEST_CASE("coincident centers are flagged degenerate") {
  CameraParams a, b;
  b.rotation = Eigen::AngleAxisd(0.3, Eigen::Vector3d::UnitY()).toRotationMatrix();
  // same center (origin) after rotation: t = -R * C = 0
  const FundamentalMatrix f = fundamental_matrix(a, b);
  CHECK(f.degenerate);
  CHECK(f.m.norm() == 0.0);
  CHECK_THROWS_AS(epipolar_line(f, Point2(1, 2)), DegenerateLine);
}

TEST_CASE("point-line distance known answers") {
  CHECK(epipolar_distance(Point2(1, 1), Eigen::Vector3d(3, 4, 5)) == doctest::Approx(2.4));
  CHECK(epipolar_distance(Point2(7, 5.5), Eigen::Vector3d(0, 2, -4)) == doctest::Approx(3.5));
  CHECK_THROWS_AS(epipolar_distance(Point2(0, 0), Eigen::Vector3d(0, 0, 1)), DegenerateLine);
}

TEST_CASE("noiseless triangulation recovers points to 1e-9") {
  const auto cams = ring_rig(4, 4.0, 0.5, 640, 480);
  Rng rng(21);
  for (int i = 0; i < 50; ++i) {
    const Point3 x = random_point(rng, 0.75);
    std::vector<Observation> obs;
    for (const auto& cam : cams) obs.push_back({cam, project(x, cam).pixel});
    CHECK((dlt_triangulate(obs) - x).norm() < 1e-9);
  }
}

TEST_CASE("two-view triangulation also recovers points") {
  const auto cams = ring_rig(2, 4.0, 0.5, 640, 480);
  Rng rng(22);
  for (int i = 0; i < 20; ++i) {
    const Point3 x = random_point(rng, 0.7);
    std::vector<Observation> obs = {{cams[0], project(x, cams[0]).pixel},
                                    {cams[1], project(x, cams[1]).pixel}};
    CHECK((dlt_triangulate(obs) - x).norm() < 1e-9);
  }
}

TEST_CASE("triangulation under 0.5 px noise stays within 5 cm at p95") {
  const auto cams = ring_rig(4, 4.0, 0.5, 640, 480);
  Rng rng(33);
  std::vector<double> errors;
  for (int i = 0; i < 200; ++i) {
    const Point3 x = random_point(rng, 0.75);
    std::vector<Observation> obs;
    for (const auto& cam : cams) {
      Point2 px = project(x, cam).pixel;
      px += Point2(rng.normal(0.0, 0.5), rng.normal(0.0, 0.5));
      obs.push_back({cam, px});
    }
    errors.push_back((dlt_triangulate(obs) - x).norm());
  }
  std::sort(errors.begin(), errors.end());
  CHECK(errors[static_cast<size_t>(0.95 * errors.size())] < 0.05);
}

TEST_CASE("degenerate triangulation inputs throw") {
  const auto cams = ring_rig(3, 4.0, 0.5, 640, 480);
  const Point3 x(0.1, -0.2, 0.3);
  const Point2 px = project(x, cams[0]).pixel;
  CHECK_THROWS_AS(dlt_triangulate({{cams[0], px}}), InsufficientViews);
  CHECK_THROWS_AS(dlt_triangulate({{cams[0], px}, {cams[0], px}}), IllConditioned);
}

TEST_CASE("calibration files round-trip") {
  const auto dir = testsupport::temp_dir("calib");
  const auto cams = ring_rig(3, 4.0, 0.5, 640, 480);
  const auto path = dir / "rig.json";
  save_calibration(cams, path);
  const auto loaded = load_calibration(path);
  REQUIRE(loaded.size() == cams.size());
  for (size_t i = 0; i < cams.size(); ++i) {
    CHECK(loaded[i].view_id == cams[i].view_id);
    CHECK((loaded[i].intrinsics - cams[i].intrinsics).norm() < 1e-12);
    CHECK((loaded[i].rotation - cams[i].rotation).norm() < 1e-12);
    CHECK((loaded[i].translation - cams[i].translation).norm() < 1e-12);
  }
}

TEST_CASE("calibration loading rejects bad input") {
  const auto dir = testsupport::temp_dir("calib-bad");
  CHECK_THROWS_AS((void)load_calibration(dir / "missing.json"), IoError);

  auto cams = ring_rig(2, 4.0, 0.5, 640, 480);
  cams[1].view_id = cams[0].view_id;
  const auto dup = dir / "dup.json";
  save_calibration(cams, dup);
  CHECK_THROWS_AS((void)load_calibration(dup), ConfigInvalid);

  auto j = nlohmann::json::array();
  j.push_back({{"view_id", 0}, {"K", {1, 0, 0, 0, 1, 0, 0, 0, 1}}, {"R", {2, 0, 0, 0, 1, 0, 0, 0, 1}}, {"t", {0, 0, 0}}});
  const auto bad_r = dir / "badr.json";
  std::ofstream(bad_r) << j.dump();
  CHECK_THROWS_AS((void)load_calibration(bad_r), ConfigInvalid);
}

TEST_SUITE_END();
