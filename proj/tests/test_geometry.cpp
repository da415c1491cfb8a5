#include "doctest.h"

#include <random>

#include "hsdf/geometry.hpp"

using namespace hsdf;

namespace {

Twistd random_twist(std::mt19937_64& rng, double max_angle) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec3 axis(u(rng), u(rng), u(rng));
  axis.normalize();
  std::uniform_real_distribution<double> ang(0.0, max_angle);
  Twistd e;
  e << axis * ang(rng), Vec3(u(rng), u(rng), u(rng)) * 2.0;
  return e;
}

Posed random_pose(std::mt19937_64& rng) { return se3_exp(random_twist(rng, 3.0)); }

double pose_diff(const Posed& a, const Posed& b) {
  return std::max((a.rotation - b.rotation).cwiseAbs().maxCoeff(), (a.translation - b.translation).cwiseAbs().maxCoeff());
}

}  // namespace

TEST_CASE("se3_exp closed cases") {
  const Posed I = se3_exp(Twistd::Zero().eval());
  CHECK(pose_diff(I, Posed::Identity()) == 0.0);

  Twistd t;
  t << 0, 0, 0, 1, 0, 0;
  const Posed T = se3_exp(t);
  CHECK(pose_diff(T, Posed(Mat3::Identity(), Vec3(1, 0, 0))) == 0.0);
}

TEST_CASE("se3_log closed cases") {
  CHECK(se3_log(Posed::Identity()).norm() == 0.0);
  Mat3 rz;
  rz << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  const Twistd e = se3_log(Posed(rz, Vec3::Zero()));
  Twistd expected;
  expected << 0, 0, std::numbers::pi / 2, 0, 0, 0;
  CHECK((e - expected).norm() < 1e-12);
}

TEST_CASE("exp/log round trips") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 500; ++i) {
    // rotation angle strictly below pi
    const Twistd e = random_twist(rng, std::numbers::pi - 1e-3);
    const Twistd back = se3_log(se3_exp(e));
    CHECK((back - e).norm() < 1e-9);

    const Posed T = random_pose(rng);
    CHECK(pose_diff(se3_exp(se3_log(T)), T) < 1e-9);
  }
  // tiny rotations exercise the series branches
  for (double a : {0.0, 1e-12, 1e-9, 1e-7, 1e-5, 1e-3, 0.05}) {
    Twistd e;
    e << a, -a, 0.5 * a, 0.3, -0.2, 0.1;
    CHECK((se3_log(se3_exp(e)) - e).norm() < 1e-9);
  }
}

TEST_CASE("se3_log rejects angles near pi") {
  Mat3 r = so3_exp(Vec3(0, 0, std::numbers::pi - 1e-7));
  CHECK_THROWS_AS(se3_log(Posed(r, Vec3::Zero())), Error);
  try {
    se3_log(Posed(r, Vec3::Zero()));
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::AngleNearPi);
  }
}

TEST_CASE("transform and group axioms") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  const Vec3 x(u(rng), u(rng), u(rng));
  CHECK((transform_point(Posed::Identity(), x) - x).norm() == 0.0);
  const Vec3 t(1, 2, 3);
  CHECK((transform_point(Posed(Mat3::Identity(), t), Vec3::Zero().eval()) - t).norm() == 0.0);

  for (int i = 0; i < 200; ++i) {
    const Posed a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
    const Vec3 p(u(rng), u(rng), u(rng));
    CHECK((transform_point(inverse(a), transform_point(a, p)) - p).norm() < 1e-12);
    CHECK(pose_diff(compose(a, inverse(a)), Posed::Identity()) < 1e-12);
    CHECK(pose_diff(compose(Posed::Identity(), a), a) == 0.0);
    CHECK(pose_diff(inverse(inverse(a)), a) < 1e-12);
    CHECK(pose_diff(compose(compose(a, b), c), compose(a, compose(b, c))) < 1e-12);
  }
}

TEST_CASE("perturb_pose magnitudes are exact") {
  std::mt19937_64 rng(11);
  const Posed T = random_pose(rng);
  {
    std::mt19937_64 r(1);
    CHECK(pose_diff(perturb_pose(T, 0.0, 0.0, r), T) == 0.0);
  }
  for (int i = 0; i < 50; ++i) {
    const Posed P = perturb_pose(T, 3.0, 0.05, rng);
    const Posed d = T.inverse() * P;
    CHECK(std::abs(deg(rotation_angle(d.rotation)) - 3.0) < 1e-6);
    CHECK(std::abs((P.translation - T.translation).norm() - 0.05) < 1e-12);
  }
  std::mt19937_64 r1(99), r2(99);
  CHECK(pose_diff(perturb_pose(T, 2.0, 0.1, r1), perturb_pose(T, 2.0, 0.1, r2)) == 0.0);
}

TEST_CASE("exp_point_jacobian matches central differences") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double scale : {0.0, 1e-6, 0.05, 0.5, 2.5}) {
    for (int trial = 0; trial < 20; ++trial) {
      Twistd e;
      for (int i = 0; i < 6; ++i) e(i) = u(rng);
      e.head<3>() *= scale / std::max(1e-300, e.head<3>().norm());
      const Vec3 x(u(rng) * 3, u(rng) * 3, u(rng) * 3);
      const auto J = exp_point_jacobian(e, x);
      const double h = 1e-6;
      for (int k = 0; k < 6; ++k) {
        Twistd ep = e, em = e;
        ep(k) += h;
        em(k) -= h;
        const Vec3 fd = (se3_exp(ep) * x - se3_exp(em) * x) / (2 * h);
        CHECK((fd - J.col(k)).norm() < 1e-7);
      }
    }
  }
}

TEST_CASE("orthonormalized restores a drifted rotation") {
  std::mt19937_64 rng(2);
  Posed T = random_pose(rng);
  T.rotation(0, 1) += 1e-6;
  const Posed O = T.orthonormalized();
  CHECK((O.rotation.transpose() * O.rotation - Mat3::Identity()).norm() < 1e-12);
  CHECK(std::abs(O.rotation.determinant() - 1.0) < 1e-12);
}
