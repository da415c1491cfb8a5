#include "doctest.h"

#include <random>

#include "hsdf/submap.hpp"

using namespace hsdf;

TEST_CASE("primitive SDFs") {
  Scene s;
  s.primitives.push_back(Sphere{Vec3::Zero(), 1.0});
  CHECK(scene_sdf(s, Vec3(2, 0, 0)) == 1.0);
  Scene b;
  b.primitives.push_back(Box{Vec3::Zero(), Vec3::Ones()});
  CHECK(scene_sdf(b, Vec3::Zero()) == -1.0);
  CHECK(scene_sdf(b, Vec3(2, 0, 0)) == 1.0);
  CHECK(std::abs(scene_sdf(b, Vec3(2, 2, 1)) - std::sqrt(2.0)) < 1e-15);

  HollowRoom room{Vec3::Zero(), Vec3(3, 2, 1), 0.2};
  CHECK(std::abs(primitive_sdf(room, Vec3::Zero()) - 1.0) < 1e-15);
  CHECK(std::abs(primitive_sdf(room, Vec3(2.5, 0, 0)) - 0.5) < 1e-15);
  CHECK(primitive_sdf(room, Vec3(3.1, 0, 0)) < 0.0);
  CHECK(std::abs(primitive_sdf(room, Vec3(3.5, 0, 0)) - 0.3) < 1e-15);
}

TEST_CASE("min-union of disjoint spheres") {
  Scene s;
  const Sphere a{Vec3(-2, 0, 0), 0.7}, b{Vec3(1.5, 1, 0), 0.4};
  s.primitives = {a, b};
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-4, 4);
  for (int i = 0; i < 100; ++i) {
    const Vec3 x(u(rng), u(rng), u(rng));
    CHECK(scene_sdf(s, x) == std::min((x - a.center).norm() - a.radius, (x - b.center).norm() - b.radius));
  }
}

TEST_CASE("render_depth against a wall") {
  Scene s;
  s.primitives.push_back(Box{Vec3(0, 0, 3), Vec3(5, 5, 1)});  // face at z = 2
  s.fit_bounds();
  SensorModel cam;
  cam.width = 3;
  cam.height = 3;
  cam.cx = 1.5;
  cam.cy = 1.5;
  std::mt19937_64 rng(0);
  const DepthFrame f = render_depth(s, Posed::Identity(), cam, rng);
  REQUIRE(f.hit[4]);
  CHECK(std::abs(f.depth[4] - 2.0) < 1e-3);
  for (std::size_t i = 0; i < f.hit.size(); ++i) {
    REQUIRE(f.hit[i]);
    CHECK(std::abs(scene_sdf(s, f.depth[i] * f.directions[i])) < 1e-3);
  }
  // looking away from the wall
  const Posed back(so3_exp(Vec3(std::numbers::pi, 0, 0)), Vec3::Zero());
  const DepthFrame g = render_depth(s, back, cam, rng);
  for (char h : g.hit) CHECK(!h);

  Scene inside;
  inside.primitives.push_back(Sphere{Vec3::Zero(), 1.0});
  CHECK_THROWS_AS(render_depth(inside, Posed::Identity(), cam, rng), Error);
}

TEST_CASE("labels and their validity") {
  Scene s;
  s.primitives.push_back(Box{Vec3(0, 0, 3), Vec3(5, 5, 1)});
  s.fit_bounds();
  s.lower -= Vec3::Constant(1.0);
  SensorModel cam;
  cam.width = 1;
  cam.height = 1;
  cam.cx = 0.5;
  cam.cy = 0.5;
  std::mt19937_64 rng(0);
  const DepthFrame f = render_depth(s, Posed::Identity(), cam, rng);
  LabelConfig cfg;
  cfg.n_near = 50;
  cfg.n_free = 50;
  const auto pts = label_points(s, Posed::Identity(), f, cfg, rng);
  REQUIRE(!pts.empty());
  CHECK(pts[0].on_surface);
  CHECK(pts[0].y() == 0.0);
  for (const LabeledPoint& p : pts) {
    const double sdf = scene_sdf(s, p.x);
    if (p.is_near()) {
      // frontal ray on a flat wall: the ray approximation is the true SDF
      CHECK(std::abs(p.y() - sdf) < 2e-4);
      CHECK(std::abs(p.y()) <= cfg.band);
    } else {
      CHECK(p.b_lo() == 0.0);
      CHECK(sdf >= p.b_lo());
      CHECK(sdf <= p.b_hi() + 1e-3);
    }
  }
}

TEST_CASE("room scene labels in oracle mode and bound validity for a convex scene") {
  const Scene room = default_room_scene();
  SensorModel cam;
  LabelConfig cfg;
  cfg.mode = LabelMode::Oracle;
  const auto frames = simulate_trajectory(room, orbit_waypoints(Vec3(3, 2.5, 1.5), 1.8, 1.4, 1.6, 3), cam, 2, cfg, 3);
  CHECK(frames.size() == 4);
  for (const SimFrame& fr : frames) {
    CHECK((fr.gt_pose.rotation.transpose() * fr.gt_pose.rotation - Mat3::Identity()).norm() < 1e-9);
    for (const LabeledPoint& p : fr.points)
      if (p.is_near()) CHECK(std::abs(p.y() - scene_sdf(room, fr.gt_pose * p.x)) < 1e-3);
  }

  Scene ball;
  ball.primitives.push_back(Sphere{Vec3(0, 0, 3), 1.0});
  ball.fit_bounds();
  ball.lower -= Vec3::Constant(4);
  ball.upper += Vec3::Constant(1);
  std::mt19937_64 rng(2);
  const DepthFrame f = render_depth(ball, Posed::Identity(), cam, rng);
  for (const LabeledPoint& p : label_points(ball, Posed::Identity(), f, LabelConfig{}, rng))
    if (!p.is_near()) {
      const double sdf = scene_sdf(ball, p.x);
      CHECK(sdf >= p.b_lo());
      CHECK(sdf <= p.b_hi() + 1e-3);
    }
}

TEST_CASE("trajectory interpolation") {
  const Posed w = look_at(Vec3(1, 1, 1), Vec3(3, 2, 1));
  const auto same = interpolate_waypoints({w, w}, 5);
  CHECK(same.size() == 5);
  for (const Posed& p : same) {
    CHECK((p.rotation - w.rotation).norm() < 1e-15);
    CHECK((p.translation - w.translation).norm() == 0.0);
  }
  const auto wps = orbit_waypoints(Vec3(3, 2.5, 1.5), 1.5, 1, 1.5, 4);
  const auto poses = interpolate_waypoints(wps, 7);
  CHECK(poses.size() == 21);
  for (const Posed& p : poses) {
    CHECK((p.rotation.transpose() * p.rotation - Mat3::Identity()).norm() < 1e-9);
    CHECK(std::abs(p.rotation.determinant() - 1.0) < 1e-9);
  }
}

TEST_CASE("simulation is reproducible") {
  const Scene room = default_room_scene();
  SensorModel cam;
  const auto wps = orbit_waypoints(Vec3(3, 2.5, 1.5), 1.8, 1.4, 1.6, 2);
  const auto a = simulate_trajectory(room, wps, cam, 2, LabelConfig{}, 11);
  const auto b = simulate_trajectory(room, wps, cam, 2, LabelConfig{}, 11, 3);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].points.size() == b[i].points.size());
    for (std::size_t j = 0; j < a[i].points.size(); ++j) {
      CHECK(a[i].points[j].x == b[i].points[j].x);
      CHECK(a[i].points[j].v0 == b[i].points[j].v0);
      CHECK(a[i].points[j].v1 == b[i].points[j].v1);
    }
  }
}

TEST_CASE("submap splitting") {
  const Scene room = default_room_scene();
  SensorModel cam;
  cam.width = 8;
  cam.height = 6;
  cam.fx = cam.fy = 6;
  cam.cx = 4;
  cam.cy = 3;
  const auto frames = simulate_trajectory(room, orbit_waypoints(Vec3(3, 2.5, 1.5), 1.8, 1.4, 1.6, 3), cam, 3,
                                          LabelConfig{}, 5);
  GridConfig gc;
  CHECK(split_submaps(frames, 100, gc).size() == 1);
  const auto subs = split_submaps(frames, 4, gc);
  CHECK(subs.size() == 2);
  CHECK(subs[1].frames.size() == 2);
  for (const Submap& s : subs) {
    CHECK((s.frames[0].pose.rotation - Mat3::Identity()).norm() == 0.0);
    CHECK(s.frames[0].pose.translation.norm() == 0.0);
    for (const Frame& f : s.frames) {
      const Posed& world = frames[std::size_t(f.index)].gt_pose;
      for (std::size_t j = 0; j < f.points.size(); j += 7) {
        const Vec3 a = s.base_pose * (f.pose * f.points[j].x);
        const Vec3 b = world * f.points[j].x;
        CHECK((a - b).norm() < 1e-9);
        CHECK(s.grid.contains(f.pose * f.points[j].x));
      }
    }
  }
}

TEST_CASE("the standard orbit of the default room stays in free space") {
  const Scene room = default_room_scene();
  for (const Posed& p : interpolate_waypoints(room_orbit(room, 9), 8)) CHECK(scene_sdf(room, p.translation) > 0.3);
}
