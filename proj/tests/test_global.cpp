#include "doctest.h"

#include <random>

#include "gradcheck.hpp"
#include "hsdf/global.hpp"
#include "toy.hpp"

using namespace hsdf;
using namespace hsdf::testing;

namespace {

Submap box_submap(const Vec3& lo, const Vec3& hi, double cell = 0.25, int d = 2) {
  Submap s;
  s.grid = MultiresGrid(lo, hi, {2 * cell, cell}, d);
  s.box_lower = s.grid.lower();
  s.box_upper = s.grid.upper();
  return s;
}

/// Fills every level with a smooth pattern so features vary in space.
void fill_smooth(Submap& s, double phase) {
  for (GridLevel& lv : s.grid.levels())
    for (Index v = 0; v < lv.geometry.vertex_count(); ++v) {
      const Vec3 x = lv.geometry.vertex(v);
      for (int c = 0; c < lv.feature_dim(); ++c)
        lv.features.value(v, c) = std::sin(1.7 * x.x() + c + phase) * std::cos(1.3 * x.y() - 0.5 * c) + 0.4 * x.z();
    }
}

Decoder unit_decoder(int width) {
  Tensor w = Tensor::Zero(1, width);
  for (int i = 0; i < width; ++i) w(0, i) = 1.0 / (1 + i);
  return Decoder::linear(w, 0.1);
}

Posed small_motion(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Twistd e;
  for (int i = 0; i < 6; ++i) e(i) = u(rng);
  return se3_exp(e);
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("edges follow world box overlap") {
  std::vector<Submap> subs{box_submap(Vec3::Zero(), Vec3::Ones()), box_submap(Vec3::Zero(), Vec3::Ones()),
                           box_submap(Vec3::Zero(), Vec3::Ones())};
  const Posed I = Posed::Identity();
  auto at = [](double x) { return Posed(Mat3::Identity(), Vec3(x, 0, 0)); };
  CHECK(build_edges({subs[0], subs[1]}, {I, at(5)}).empty());
  CHECK(build_edges({subs[0], subs[1]}, {I, I}) == std::vector<Edge>{{0, 1}});
  // chain with 0.2 m overlaps: ends do not meet
  CHECK(build_edges(subs, {I, at(0.8), at(1.6)}) == std::vector<Edge>{{0, 1}, {1, 2}});
  // 0.4 m steps: ends overlap as well
  CHECK(build_edges(subs, {I, at(0.4), at(0.8)}) == std::vector<Edge>{{0, 1}, {0, 2}, {1, 2}});
  // touching faces have zero volume
  CHECK(build_edges({subs[0], subs[1]}, {I, at(1.0)}).empty());
  // rotation inflates the axis-aligned world box
  const Posed rot(so3_exp(Vec3(0, 0, std::numbers::pi / 4)), Vec3(1.6, 0, 0));
  CHECK(build_edges({subs[0], subs[1]}, {I, rot}).size() == 1);
  CHECK(is_connected(3, {{0, 1}, {1, 2}}));
  CHECK_FALSE(is_connected(3, {{0, 1}}));
}

TEST_CASE("overlap vertices") {
  const Submap u = box_submap(Vec3::Zero(), Vec3::Ones());
  const Submap v = box_submap(Vec3::Zero(), Vec3::Ones());
  const Posed I = Posed::Identity();
  CHECK(overlap_vertices(u, v, 1, I, I).size() == 125);
  CHECK(overlap_vertices(u, v, 0, I, I).size() == 27);
  CHECK(overlap_vertices(u, v, 1, I, Posed(Mat3::Identity(), Vec3(2, 0, 0))).empty());
  // v covers x in [0.5, 1.5]: lattice columns x = 0.5, 0.75, 1.0
  CHECK(overlap_vertices(u, v, 1, I, Posed(Mat3::Identity(), Vec3(0.5, 0, 0))).size() == 3 * 25);
  // and x in [0.6, 1.6]: columns 0.75, 1.0
  CHECK(overlap_vertices(u, v, 1, I, Posed(Mat3::Identity(), Vec3(0.6, 0, 0))).size() == 2 * 25);
}

TEST_CASE("feature alignment cost values") {
  Submap u = box_submap(Vec3::Zero(), Vec3::Ones());
  fill_smooth(u, 0.0);
  Tape tape;
  const PoseVar I{Posed::Identity(), Var()};
  for (int l = 0; l < 2; ++l)
    for (FeatureDistance d : {FeatureDistance::L2Squared, FeatureDistance::L1}) {
      CHECK(feature_align_cost(tape, u, u, l, I, I, d).cost.scalar() == 0.0);
      const PoseVar moved{Posed(so3_exp(Vec3(0.01, -0.02, 0.03)), Vec3(0.1, 0.05, 0)), Var()};
      CHECK(feature_align_cost(tape, u, u, l, moved, moved, d).cost.scalar() == 0.0);
    }

  // constant features are invariant to the offset
  Submap c = box_submap(Vec3::Zero(), Vec3::Ones());
  for (GridLevel& lv : c.grid.levels()) lv.features.value.setConstant(0.7);
  const PoseVar off{Posed(Mat3::Identity(), Vec3(0.13, -0.07, 0.21)), Var()};
  CHECK(feature_align_cost(tape, c, c, 1, I, off).cost.scalar() == doctest::Approx(0.0).epsilon(1e-12));

  // one coarse vertex of u at the origin lands mid-way between v's vertices
  Submap a = box_submap(Vec3::Zero(), Vec3::Ones(), 0.5, 1);
  Submap b = box_submap(Vec3::Zero(), Vec3::Ones(), 0.5, 1);
  a.grid = MultiresGrid(Vec3::Zero(), Vec3::Ones(), {1.0}, 1);
  b.grid = MultiresGrid(Vec3::Zero(), Vec3::Ones(), {1.0}, 1);
  a.grid.level(0).features.value.setZero();
  a.grid.level(0).features.value(a.grid.level(0).geometry.flat(1, 1, 1), 0) = 2.0;
  for (Index i = 0; i < 8; ++i) b.grid.level(0).features.value(i, 0) = double(i);
  // u shifted by (0.5, 0, 0): only u vertices with x = 0 overlap v; they map
  // to x = 0.5 where v interpolates its x-neighbours
  const PoseVar shifted{Posed(Mat3::Identity(), Vec3(0.5, 0, 0)), Var()};
  const LatticeGeometry& gb = b.grid.level(0).geometry;
  double expected = 0.0;
  for (int k = 0; k < 2; ++k)
    for (int j = 0; j < 2; ++j) {
      const double fv = 0.5 * (double(gb.flat(0, j, k)) + double(gb.flat(1, j, k)));
      expected += fv * fv;  // u features at x = 0 are all zero
    }
  CHECK(feature_align_cost(tape, a, b, 0, shifted, I).cost.scalar() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("SDF alignment cost values") {
  std::mt19937_64 rng(3);
  ToySpec spec;
  spec.points_per_frame = 60;
  Submap u = make_toy_submap(spec, wavy_sdf, rng);
  fill_smooth(u, 0.3);
  const Decoder d = unit_decoder(4);
  const PoseVar I{Posed::Identity(), Var()};
  const auto pts = sdf_align_points(u, u, Posed::Identity(), Posed::Identity(), 0.1);
  REQUIRE(!pts.empty());
  Tape tape;
  CHECK(sdf_align_cost(tape, u, u, d, pts, I, I).cost.scalar() == 0.0);
  const PoseVar off{Posed(so3_exp(Vec3(0, 0, 0.02)), Vec3(0.01, 0, 0)), Var()};
  CHECK(sdf_align_cost(tape, u, u, d, pts, off, I).cost.scalar() > 0.0);
}

TEST_CASE("alignment costs have correct gradients") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 4; ++trial) {
    ToySpec spec;
    spec.points_per_frame = 15;
    Submap u = make_toy_submap(spec, wavy_sdf, rng);
    Submap v = make_toy_submap(spec, wavy_sdf, rng);
    fill_smooth(u, 0.1 * trial);
    fill_smooth(v, 0.1 * trial + 0.05);
    std::mt19937_64 r2(trial);
    Decoder mlp = Decoder::mlp(4, 8, r2);
    std::vector<Param> tw(2, Param(Tensor::Zero(1, 6)));
    std::normal_distribution<double> n(0.0, 0.03);
    for (auto& p : tw)
      for (int i = 0; i < 6; ++i) p.value(0, i) = n(rng);
    const Posed bu = small_motion(rng, 0.05), bv = small_motion(rng, 0.05);
    CostConfig rho;
    rho.tau = 0.01;
    const auto pts = sdf_align_points(u, v, bu, bv, 0.1);

    auto objective = [&](Tape& t, int which) {
      const PoseVar pu{bu, t.param(tw[0])}, pv{bv, t.param(tw[1])};
      Var reg = trust_region(pu.eps, rho) + trust_region(pv.eps, rho);
      switch (which) {
        case 0:
          return feature_align_cost(t, u, v, 1, pu, pv, FeatureDistance::L2Squared).cost + reg;
        case 1:
          return feature_align_cost(t, u, v, 0, pu, pv, FeatureDistance::L1).cost + reg;
        case 2:
          return feature_align_cost(t, u, v, 1, pu, pv, FeatureDistance::NegCosine).cost + reg;
        default:
          return sdf_align_cost(t, u, v, mlp, pts, pu, pv).cost + reg;
      }
    };
    for (int which = 0; which < 4; ++which) {
      std::vector<Param*> ps{&tw[0], &tw[1]};
      for (Param* p : ps) p->zero_grad();
      Tape tape;
      tape.backward(objective(tape, which));
      const auto rep = check_gradients(ps, [&] {
        Tape t;
        return objective(t, which).scalar();
      });
      CHECK(rep.ok());
      CHECK(rep.checked >= 8);
    }
  }
}

TEST_CASE("align_submaps contracts") {
  Submap u = box_submap(Vec3::Zero(), Vec3(1.5, 1.5, 1.5));
  fill_smooth(u, 0.2);
  const Decoder d = unit_decoder(4);
  SubmapGraph g;
  g.submaps = {u, u};
  CHECK(code_of([&] {
    SubmapGraph empty;
    align_submaps(empty, d, AlignSchedule{});
  }) == ErrorCode::EmptyGraph);

  SUBCASE("zero iterations return the input") {
    std::mt19937_64 rng(1);
    g.submaps[1].base_pose = small_motion(rng, 0.1);
    AlignSchedule sch;
    sch.k_f = {0, 0};
    sch.k_s = 0;
    const auto res = align_submaps(g, d, sch);
    CHECK(res.poses[1].rotation == g.submaps[1].base_pose.rotation);
    CHECK(res.poses[1].translation == g.submaps[1].base_pose.translation);
    CHECK(res.trace.empty());
  }

  SUBCASE("aligned copies stay put and the gauge is untouched") {
    std::mt19937_64 rng(2);
    const Posed common = small_motion(rng, 0.2);
    for (Submap& s : g.submaps) s.base_pose = common;
    AlignSchedule sch;
    sch.k_f = {5, 5};
    sch.k_s = 0;
    const auto res = align_submaps(g, d, sch);
    CHECK(res.poses[0].rotation == common.rotation);
    CHECK(res.poses[0].translation == common.translation);
    const Twistd delta = se3_log(common.inverse() * res.poses[1]);
    CHECK(delta.head<3>().norm() < 1e-4);
    CHECK(delta.tail<3>().norm() < 1e-4);
    CHECK(align_report_csv(res.trace).rfind("stage,iteration,objective,submap,rot_err_deg,tran_err_m\n", 0) == 0);
  }

  SUBCASE("feature alignment recovers a small offset between copies") {
    g.submaps[1].base_pose = Posed(so3_exp(Vec3(0, 0, rad(2.0))), Vec3(0.05, -0.04, 0.03));
    AlignSchedule sch;
    sch.k_f = {60, 60};
    sch.k_s = 0;
    const Posed gauge = g.submaps[0].base_pose;
    align_submaps(g, d, sch);
    const auto [rot, tran] = base_pose_errors(g);
    CHECK(g.submaps[0].base_pose.rotation == gauge.rotation);
    CHECK(g.submaps[0].base_pose.translation == gauge.translation);
    MESSAGE("residual error " << rot[1] << " deg, " << tran[1] << " m");
    CHECK(rot[1] < 0.5);
    CHECK(tran[1] < 0.01);
  }
}

TEST_CASE("alignment with a fine cell that does not divide the coarse one") {
  Submap u;
  u.grid = MultiresGrid(Vec3::Zero(), Vec3(1.5, 1.5, 1.5), {0.5, 0.2}, 2);
  u.box_lower = u.grid.lower();
  u.box_upper = u.grid.upper();
  fill_smooth(u, 0.3);
  const Decoder d = unit_decoder(4);
  SubmapGraph g;
  g.submaps = {u, u};
  g.submaps[1].base_pose = Posed(so3_exp(Vec3(0, rad(1.0), 0)), Vec3(0.04, 0.03, -0.02));
  AlignSchedule sch;
  sch.k_f = {30, 30};
  sch.k_s = 5;
  for (int level = 0; level < 2; ++level) {
    const auto rows = overlap_vertices(g.submaps[0], g.submaps[1], level, g.submaps[0].base_pose,
                                       g.submaps[1].base_pose);
    CHECK(!rows.empty());
    const Tensor f = vertex_features(g.submaps[0], level);
    CHECK(f.rows() == g.submaps[0].grid.level(level).geometry.vertex_count());
  }
  const auto before = base_pose_errors(g);
  CHECK_NOTHROW(align_submaps(g, d, sch));
  const auto after = base_pose_errors(g);
  CHECK(after.second[1] < before.second[1]);
}

TEST_CASE("fusion identities") {
  Submap a = box_submap(Vec3::Zero(), Vec3::Ones());
  Submap b = box_submap(Vec3::Zero(), Vec3::Ones());
  fill_smooth(a, 0.0);
  fill_smooth(b, 1.0);
  std::mt19937_64 rng(8);
  Decoder mlp = Decoder::mlp(4, 16, rng);
  a.base_pose = Posed(so3_exp(Vec3(0.1, 0.0, 0.2)), Vec3(0.0, 0.0, 0.0));
  b.base_pose = Posed(Mat3::Identity(), Vec3(0.7, 0.0, 0.0));
  SubmapGraph g;
  g.submaps = {a, b};
  std::uniform_real_distribution<double> u(-0.5, 2.0);
  int single = 0;
  for (int i = 0; i < 400; ++i) {
    const Vec3 x(u(rng), u(rng) * 0.6, u(rng) * 0.6);
    const int c = coverage(g, x);
    if (c == 0) {
      CHECK(code_of([&] { fuse_query(g, mlp, x); }) == ErrorCode::Uncovered);
    } else if (c == 1) {
      ++single;
      const Submap& s = a.grid.contains(a.base_pose.inverse() * x) ? a : b;
      CHECK(fuse_query(g, mlp, x) == eval_field(s.grid, mlp, s.base_pose.inverse() * x));
    }
  }
  CHECK(single > 20);
  SubmapGraph dup;
  dup.submaps = {a, a};
  for (int i = 0; i < 100; ++i) {
    const Vec3 x = a.base_pose * Vec3(0.01 * i, 0.5, 0.3);
    CHECK(fuse_query(dup, mlp, x) == eval_field(a.grid, mlp, a.base_pose.inverse() * x));
  }
}

TEST_CASE("global objective") {
  std::mt19937_64 rng(11);
  ToySpec spec;
  spec.points_per_frame = 12;
  Submap u = make_toy_submap(spec, wavy_sdf, rng);
  Submap v = make_toy_submap(spec, wavy_sdf, rng);
  fill_smooth(u, 0.0);
  fill_smooth(v, 0.5);
  v.base_pose = Posed(Mat3::Identity(), Vec3(10, 0, 0));
  Decoder mlp = Decoder::mlp(4, 8, rng);
  SubmapGraph g;
  g.submaps = {u, v};
  CostConfig cfg;

  SUBCASE("disjoint submaps decompose into local objectives") {
    std::vector<Param> base(2, Param(Tensor::Zero(1, 6)));
    std::vector<std::vector<Param>> frames{std::vector<Param>(2, Param(Tensor::Zero(1, 6))),
                                           std::vector<Param>(2, Param(Tensor::Zero(1, 6)))};
    Tape tape;
    const double global = global_objective(tape, g, mlp, base, frames, cfg).data.scalar();
    double local = 0.0;
    for (Submap& s : g.submaps) {
      std::vector<Param> tw(2, Param(Tensor::Zero(1, 6)));
      Tape t;
      local += local_objective(t, s, mlp, tw, cfg).data.scalar();
    }
    CHECK(global == doctest::Approx(local).epsilon(1e-12));
  }

  SUBCASE("gradients") {
    v.base_pose = Posed(so3_exp(Vec3(0.02, 0.01, 0)), Vec3(0.3, 0.1, 0));
    g.submaps = {u, v};
    std::vector<Param> base(2, Param(Tensor::Zero(1, 6)));
    std::vector<std::vector<Param>> frames{std::vector<Param>(2, Param(Tensor::Zero(1, 6))),
                                           std::vector<Param>(2, Param(Tensor::Zero(1, 6)))};
    std::normal_distribution<double> n(0.0, 0.02);
    for (int i = 0; i < 6; ++i) {
      base[1].value(0, i) = n(rng);
      frames[0][1].value(0, i) = n(rng);
      frames[1][1].value(0, i) = n(rng);
    }
    cfg.tau = 0.01;
    std::vector<Param*> ps{&base[1], &frames[0][1], &frames[1][1], &g.submaps[0].grid.level(0).features,
                           &g.submaps[1].grid.level(1).features};
    for (Param* p : ps) p->zero_grad();
    Tape tape;
    tape.backward(global_objective(tape, g, mlp, base, frames, cfg).total);
    const auto rep = check_gradients(ps, [&] {
      Tape t;
      return global_objective(t, g, mlp, base, frames, cfg).total.scalar();
    });
    CHECK(rep.ok());
    CHECK(rep.checked > 50);
  }

  SUBCASE("bundle adjustment") {
    CHECK(code_of([&] {
      SubmapGraph empty;
      global_ba(empty, mlp, GlobalBaConfig{});
    }) == ErrorCode::EmptyGraph);
    GlobalBaConfig bc;
    bc.iters = 30;
    bc.lr = 1e-2;
    const Posed gauge = g.submaps[0].base_pose;
    const auto res = global_ba(g, mlp, bc);
    CHECK(res.loss.back() < res.loss.front());
    CHECK(g.submaps[0].base_pose.translation == gauge.translation);
  }
}
