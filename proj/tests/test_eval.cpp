#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <random>

#include "hsdf/eval.hpp"
#include "hsdf/io.hpp"

using namespace hsdf;

namespace {

Scene sphere_scene(double r) {
  Scene s;
  s.primitives.push_back(Sphere{Vec3::Zero(), r});
  s.fit_bounds();
  s.lower -= Vec3::Constant(0.5);
  s.upper += Vec3::Constant(0.5);
  return s;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("hsdf_eval_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("sdf_mae") {
  const Scene s = sphere_scene(1.0);
  const Field exact = [&](const Vec3& x) { return scene_sdf(s, x); };
  const Field shifted = [&](const Vec3& x) { return scene_sdf(s, x) + 0.05; };
  auto a = sdf_mae(exact, s, 500, 0.3, 1);
  CHECK(a.mae == 0.0);
  CHECK(a.samples == 500);
  CHECK(a.skipped == 0);
  CHECK(sdf_mae(shifted, s, 500, 0.3, 1).mae == doctest::Approx(0.05).epsilon(1e-12));
  // half the space is uncovered
  const Field half = [&](const Vec3& x) {
    if (x.x() < 0) throw Error(ErrorCode::Uncovered, "left half");
    return scene_sdf(s, x);
  };
  const auto h = sdf_mae(half, s, 400, 0.3, 2);
  CHECK(h.samples == 400);
  CHECK(h.skipped > 100);
  CHECK(h.skipped < 300);
  CHECK(sdf_mae(shifted, s, 100, 0.3, 7).skipped == sdf_mae(shifted, s, 100, 0.3, 7).skipped);
  CHECK_THROWS_AS(sdf_mae(exact, s, 10, 0.0, 1), Error);
}

TEST_CASE("pose_rmse") {
  std::vector<Posed> gt;
  for (int i = 0; i < 4; ++i) gt.emplace_back(so3_exp(Vec3(0.1 * i, 0.0, 0.2)), Vec3(i, 0.5 * i, 0));
  CHECK(pose_rmse(gt, gt).rot_deg == 0.0);
  CHECK(pose_rmse(gt, gt).tran_m == 0.0);

  // constant 2 degree rotation about each pose's own axis
  std::vector<Posed> est;
  for (const Posed& p : gt) est.push_back(p * Posed(so3_exp(Vec3(0, 0, rad(2.0))), Vec3::Zero()));
  CHECK(pose_rmse(est, gt, Gauge::None).rot_deg == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(pose_rmse(est, gt, Gauge::None).tran_m == doctest::Approx(0.0).epsilon(1e-12));

  // three poses with hand-picked errors
  std::vector<Posed> g3{Posed::Identity(), Posed::Identity(), Posed::Identity()};
  std::vector<Posed> e3{Posed(so3_exp(Vec3(rad(3.0), 0, 0)), Vec3(0.3, 0, 0)),
                        Posed(Mat3::Identity(), Vec3(0, 0.4, 0)), Posed(so3_exp(Vec3(0, rad(4.0), 0)), Vec3::Zero())};
  const auto r = pose_rmse(e3, g3, Gauge::None);
  CHECK(r.rot_deg == doctest::Approx(std::sqrt((9.0 + 16.0) / 3.0)).epsilon(1e-9));
  CHECK(r.tran_m == doctest::Approx(std::sqrt((0.09 + 0.16) / 3.0)).epsilon(1e-12));

  // a global rigid offset disappears under the first-pose gauge
  const Posed off(so3_exp(Vec3(0.3, -0.2, 0.1)), Vec3(1, 2, 3));
  std::vector<Posed> moved;
  for (const Posed& p : gt) moved.push_back(off * p);
  CHECK(pose_rmse(moved, gt).rot_deg < 1e-6);
  CHECK(pose_rmse(moved, gt).tran_m < 1e-12);
  CHECK(pose_rmse(moved, gt, Gauge::None).tran_m > 1.0);

  try {
    pose_rmse(gt, g3);
    FAIL("expected LengthMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::LengthMismatch);
  }
}

TEST_CASE("f_score and chamfer") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Vec3> a;
  for (int i = 0; i < 50; ++i) a.emplace_back(u(rng), u(rng), u(rng));
  CHECK(f_score(a, a, 0.05).fscore == 100.0);
  CHECK(chamfer_l1(a, a) == 0.0);
  std::vector<Vec3> far;
  for (const Vec3& p : a) far.push_back(p + Vec3(0.1, 0, 0));
  std::vector<Vec3> spread{Vec3(0, 0, 0), Vec3(1, 0, 0)};
  std::vector<Vec3> spread_far{Vec3(0.1, 0, 0), Vec3(1.1, 0, 0)};
  CHECK(f_score(spread_far, spread, 0.05).fscore == 0.0);

  // est {0, 0.03}, gt {0, 1} on a line, threshold 0.05
  std::vector<Vec3> est{Vec3(0, 0, 0), Vec3(0.03, 0, 0)}, gt{Vec3(0, 0, 0), Vec3(1, 0, 0)};
  const FScore f = f_score(est, gt, 0.05);
  CHECK(f.precision == 100.0);
  CHECK(f.recall == 50.0);
  CHECK(f.fscore == doctest::Approx(2.0 * 100 * 50 / 150.0));
  // est->gt: (0 + 0.03) / 2; gt->est: (0 + 0.97) / 2
  CHECK(chamfer_l1(est, gt) == doctest::Approx(0.5 * (0.015 + 0.485)).epsilon(1e-12));
  CHECK(chamfer_l1(est, gt) == chamfer_l1(gt, est));
  CHECK(f_score(a, far, 0.2).fscore >= f_score(a, far, 0.05).fscore);
  try {
    chamfer_l1({}, gt);
    FAIL("expected EmptySet");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptySet);
  }
  CHECK_THROWS_AS(f_score(est, {}, 0.05), Error);
}

TEST_CASE("surface projection") {
  const double r = 0.8;
  const Field sphere = [&](const Vec3& x) { return x.norm() - r; };
  const auto s = surface_points_from_field(sphere, Vec3::Constant(-1.5), Vec3::Constant(1.5), 200, 0.3, 4);
  CHECK(s.points.size() + s.discarded == 200);
  CHECK(s.points.size() > 190);
  for (const Vec3& p : s.points) CHECK(std::abs(p.norm() - r) < 1e-3);
  const auto again = surface_points_from_field(sphere, Vec3::Constant(-1.5), Vec3::Constant(1.5), 200, 0.3, 4);
  CHECK(again.discarded == s.discarded);
  CHECK(again.points == s.points);
  Vec3 on(r, 0, 0);
  const Vec3 before = on;
  CHECK(project_to_surface(sphere, on));
  CHECK((on - before).norm() < 1e-6);
  // a flat field never reaches the surface
  const Field flat = [](const Vec3&) { return 0.2; };
  Vec3 x(0, 0, 0);
  CHECK_FALSE(project_to_surface(flat, x));
}

TEST_CASE("export_slice") {
  const auto dir = temp_dir("slice");
  const Field constant = [](const Vec3&) { return 0.25; };
  const Tensor c = export_slice(constant, 2, 0.0, Vec3::Constant(-1), Vec3::Constant(1), 7, dir / "c.csv", dir / "c.pgm");
  CHECK(c.rows() == 7);
  CHECK(c.cols() == 7);
  CHECK((c.array() == 0.25).all());
  const std::string csv = read_text(dir / "c.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
  CHECK(read_text(dir / "c.pgm").rfind("P5\n7 7\n255\n", 0) == 0);
  CHECK(read_text(dir / "c.pgm").size() == std::string("P5\n7 7\n255\n").size() + 49);

  // zero contour of a sphere slice through the centre at radius r
  const double r = 0.6;
  const int res = 41;
  const Field sphere = [&](const Vec3& x) { return x.norm() - r; };
  const Tensor m = export_slice(sphere, 2, 0.0, Vec3::Constant(-1), Vec3::Constant(1), res, dir / "s.csv");
  const double cell = 2.0 / (res - 1);
  for (int i = 0; i < res; ++i)
    for (int j = 0; j + 1 < res; ++j)
      if ((m(i, j) < 0) != (m(i, j + 1) < 0)) {
        const Vec3 p(-1 + cell * (j + 0.5), -1 + cell * i, 0);
        CHECK(std::abs(p.norm() - r) < cell);
      }
  CHECK_THROWS_AS(export_slice(sphere, 2, 3.0, Vec3::Constant(-1), Vec3::Constant(1), 5, dir / "x.csv"), Error);
  try {
    export_slice(constant, 0, 0.0, Vec3::Constant(-1), Vec3::Constant(1), 3, "/proc/hsdf/none.csv");
    FAIL("expected IoError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::IoError);
  }
}
