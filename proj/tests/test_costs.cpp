#include "doctest.h"

#include <random>

#include "gradcheck.hpp"
#include "hsdf/costs.hpp"

using namespace hsdf;

TEST_CASE("sdf_cost") {
  CHECK(sdf_cost(0.3, 0.3, 5.4) == 0.0);
  CHECK(sdf_cost(0.1, 0.0, 5.4) == doctest::Approx(0.54).epsilon(1e-12));
  CHECK(sdf_cost(0.2, -0.1, 2.0) == sdf_cost(-0.1, 0.2, 2.0));
}

TEST_CASE("bound_cost branches and monotonicity") {
  CHECK(bound_cost(0.5, 0.0, 1.0, 5.0) == 0.0);
  CHECK(bound_cost(0.0, 0.0, 1.0, 5.0) == 0.0);
  CHECK(bound_cost(1.0, 0.0, 1.0, 5.0) == 0.0);
  CHECK(bound_cost(1.2, 0.0, 1.0, 5.0) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(std::abs(bound_cost(-0.1, 0.0, 1.0, 5.0) - (std::exp(0.5) - 1.0)) < 1e-12);
  CHECK(std::abs(bound_cost(-0.1, 0.0, 1.0, 5.0) - 0.6487212707) < 1e-6);
  double prev = bound_cost(-1.0, 0.0, 1.0, 5.0);
  for (double h = -1.0; h <= 0.0; h += 0.01) {
    const double c = bound_cost(h, 0.0, 1.0, 5.0);
    CHECK(c <= prev);
    prev = c;
  }
  prev = 0.0;
  for (double h = 1.0; h <= 2.0; h += 0.01) {
    const double c = bound_cost(h, 0.0, 1.0, 5.0);
    CHECK(c >= prev);
    prev = c;
  }
}

TEST_CASE("trust_region hinge") {
  const Posed T = se3_exp(Twistd((Twistd() << 0.1, -0.2, 0.3, 1, 2, 3).finished()));
  CHECK(trust_region(T, T, 1e3, 0.1) == 0.0);
  Twistd e;
  e << 0, 0, 0, 0.1, 0, 0;
  CHECK(trust_region(T, T * se3_exp(e), 1e3, 0.1) == 0.0);
  e << 0, 0, 0, 0.11, 0, 0;
  CHECK(trust_region(T, T * se3_exp(e), 1e3, 0.1) == doctest::Approx(10.0).epsilon(1e-9));
}

TEST_CASE("gm_kernel") {
  CHECK(gm_kernel(0.0, 0.1) == 0.0);
  CHECK(gm_kernel(0.1, 0.1) == doctest::Approx(0.005).epsilon(1e-12));
  CHECK(gm_kernel(1e6, 0.1) == doctest::Approx(0.01).epsilon(1e-9));
  CHECK(gm_kernel(1e6, 0.1) < 0.01);
  CHECK(gm_kernel(-0.3, 0.1) == gm_kernel(0.3, 0.1));
  CHECK(gm_kernel(0.3, 0.1) > gm_kernel(0.2, 0.1));
}

TEST_CASE("tape data cost equals the scalar costs and differentiates") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.6, 1.4);
  std::vector<LabeledPoint> pts;
  for (int i = 0; i < 12; ++i) {
    if (i % 2) pts.push_back(LabeledPoint::near(Vec3::Zero(), u(rng) * 0.2, 0.5 + 0.1 * i));
    else pts.push_back(LabeledPoint::free(Vec3::Zero(), 0.0, 0.5 + 0.05 * i));
  }
  Param h(Tensor(12, 1));
  for (int i = 0; i < 12; ++i) h.value(i, 0) = u(rng);
  CostConfig cfg;
  for (SdfLoss loss : {SdfLoss::Abs, SdfLoss::Squared}) {
    cfg.sdf_loss = loss;
    h.zero_grad();
    Tape t;
    Var c = data_cost(t.param(h), pts, cfg);
    double expected = 0.0;
    for (int i = 0; i < 12; ++i) expected += point_cost(pts[std::size_t(i)], h.value(i, 0), cfg);
    CHECK(std::abs(c.scalar() - expected) < 1e-12);
    t.backward(c);
    auto rep = testing::check_gradients({&h}, [&] {
      Tape tt;
      return data_cost(tt.param(h), pts, cfg).scalar();
    });
    CHECK(rep.ok());
  }
}

TEST_CASE("tape trust region") {
  CostConfig cfg;
  cfg.tau = 0.1;
  Param e(Tensor::Zero(1, 6));
  e.value(0, 3) = 0.11;
  Tape t;
  Var r = trust_region(t.param(e), cfg);
  CHECK(r.scalar() == doctest::Approx(10.0).epsilon(1e-9));
  t.backward(r);
  CHECK(e.grad(0, 3) == doctest::Approx(1e3));
  Param z(Tensor::Zero(1, 6));
  Tape t2;
  Var r2 = trust_region(t2.param(z), cfg);
  t2.backward(r2);
  CHECK(r2.scalar() == 0.0);
  CHECK(z.grad.cwiseAbs().maxCoeff() == 0.0);
}
