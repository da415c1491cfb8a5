#include "hsdf/sim.hpp"

#include <cmath>
#include <numbers>
#include <thread>

namespace hsdf {

namespace {

double box_sdf(const Vec3& center, const Vec3& half, const Vec3& x) {
  const Vec3 q = (x - center).cwiseAbs() - half;
  return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
}

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

}  // namespace

double primitive_sdf(const Primitive& p, const Vec3& x) {
  return std::visit(overloaded{
                        [&](const Sphere& s) { return (x - s.center).norm() - s.radius; },
                        [&](const Box& b) { return box_sdf(b.center, b.half_extents, x); },
                        [&](const HollowRoom& r) {
                          const double outer = box_sdf(r.center, r.half_extents + Vec3::Constant(r.thickness), x);
                          const double inner = box_sdf(r.center, r.half_extents, x);
                          return std::max(outer, -inner);
                        },
                    },
                    p);
}

std::pair<Vec3, Vec3> primitive_bounds(const Primitive& p) {
  return std::visit(overloaded{
                        [](const Sphere& s) {
                          return std::pair{Vec3(s.center - Vec3::Constant(s.radius)),
                                           Vec3(s.center + Vec3::Constant(s.radius))};
                        },
                        [](const Box& b) {
                          return std::pair{Vec3(b.center - b.half_extents), Vec3(b.center + b.half_extents)};
                        },
                        [](const HollowRoom& r) {
                          const Vec3 h = r.half_extents + Vec3::Constant(r.thickness);
                          return std::pair{Vec3(r.center - h), Vec3(r.center + h)};
                        },
                    },
                    p);
}

void Scene::fit_bounds() {
  if (primitives.empty()) throw Error(ErrorCode::BadConfig, "scene has no primitives");
  lower = Vec3::Constant(std::numeric_limits<double>::infinity());
  upper = -lower;
  for (const Primitive& p : primitives) {
    const auto [lo, hi] = primitive_bounds(p);
    lower = lower.cwiseMin(lo);
    upper = upper.cwiseMax(hi);
  }
}

bool Scene::in_bounds(const Vec3& x) const {
  return (x.array() >= lower.array()).all() && (x.array() <= upper.array()).all();
}

double scene_sdf(const Scene& scene, const Vec3& x) {
  double d = std::numeric_limits<double>::infinity();
  for (const Primitive& p : scene.primitives) d = std::min(d, primitive_sdf(p, x));
  return d;
}

Scene default_room_scene() {
  Scene s;
  s.primitives.push_back(HollowRoom{Vec3(3.0, 2.5, 1.5), Vec3(3.0, 2.5, 1.5), 0.2});
  s.primitives.push_back(Sphere{Vec3(1.8, 1.6, 0.6), 0.6});
  s.primitives.push_back(Box{Vec3(4.3, 3.4, 0.5), Vec3(0.6, 0.5, 0.5)});
  s.primitives.push_back(Sphere{Vec3(4.8, 0.8, 2.3), 0.4});
  s.fit_bounds();
  return s;
}

// --- sensor ------------------------------------------------------------------

std::vector<Vec3> SensorModel::ray_directions() const {
  std::vector<Vec3> dirs;
  if (type == Type::Pinhole) {
    if (!(fx > 0 && fy > 0 && width > 0 && height > 0)) throw Error(ErrorCode::BadConfig, "invalid pinhole model");
    for (int v = 0; v < height; ++v)
      for (int u = 0; u < width; ++u) dirs.push_back(Vec3((u + 0.5 - cx) / fx, (v + 0.5 - cy) / fy, 1.0).normalized());
  } else {
    if (azimuth_count <= 0 || elevation_count <= 0) throw Error(ErrorCode::BadConfig, "invalid spherical model");
    for (int e = 0; e < elevation_count; ++e) {
      const double el = elevation_count == 1 ? 0.5 * (el_min + el_max)
                                             : el_min + (el_max - el_min) * e / double(elevation_count - 1);
      for (int a = 0; a < azimuth_count; ++a) {
        const double az = 2.0 * std::numbers::pi * a / azimuth_count;
        // forward is +z, the scan sweeps the x-z plane and tilts toward -y
        dirs.push_back(Vec3(std::cos(el) * std::sin(az), -std::sin(el), std::cos(el) * std::cos(az)));
      }
    }
  }
  return dirs;
}

DepthFrame render_depth(const Scene& scene, const Posed& pose, const SensorModel& sensor, std::mt19937_64& rng,
                        int threads) {
  if (scene_sdf(scene, pose.translation) < 0.0)
    throw Error(ErrorCode::SensorInsideSurface, "sensor origin lies inside scene geometry");
  DepthFrame f;
  f.directions = sensor.ray_directions();
  const std::size_t n = f.directions.size();
  f.depth.assign(n, 0.0);
  f.hit.assign(n, 0);
  auto trace = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Vec3 d = pose.rotation * f.directions[i];
      double t = 0.0;
      for (int it = 0; it < 512 && t <= sensor.max_range; ++it) {
        const double s = scene_sdf(scene, pose.translation + t * d);
        if (std::abs(s) < 1e-4) {
          f.depth[i] = t;
          f.hit[i] = 1;
          break;
        }
        t += s;
      }
    }
  };
  threads = std::max(1, threads);
  if (threads == 1) {
    trace(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + std::size_t(threads) - 1) / std::size_t(threads);
    for (int k = 0; k < threads; ++k) {
      const std::size_t b = std::min(n, k * chunk), e = std::min(n, b + chunk);
      pool.emplace_back(trace, b, e);
    }
    for (auto& th : pool) th.join();
  }
  if (sensor.depth_noise > 0) {
    std::normal_distribution<double> noise(0.0, sensor.depth_noise);
    for (std::size_t i = 0; i < n; ++i)
      if (f.hit[i]) f.depth[i] = std::max(1e-3, f.depth[i] + noise(rng));
  }
  return f;
}

std::vector<LabeledPoint> label_points(const Scene& scene, const Posed& pose, const DepthFrame& frame,
                                       const LabelConfig& cfg, std::mt19937_64& rng) {
  std::vector<LabeledPoint> out;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < frame.directions.size(); ++i) {
    if (!frame.hit[i]) continue;
    const Vec3& d = frame.directions[i];
    const double D = frame.depth[i];
    const Vec3 hit = D * d;
    out.push_back(LabeledPoint::near(hit, cfg.mode == LabelMode::Oracle ? scene_sdf(scene, pose * hit) : 0.0, 1.0, true));
    for (int k = 0; k < cfg.n_near; ++k) {
      const double delta = (2.0 * unit(rng) - 1.0) * cfg.band;
      const double t = D + delta;
      if (t <= 0.0) continue;
      const Vec3 x = t * d;
      const Vec3 xw = pose * x;
      if (!scene.in_bounds(xw)) continue;
      const double y = cfg.mode == LabelMode::Oracle ? scene_sdf(scene, xw) : -delta;
      out.push_back(LabeledPoint::near(x, y));
    }
    const double t_lo = 0.2 * D, t_hi = D - cfg.band;
    for (int k = 0; k < cfg.n_free && t_hi > t_lo; ++k) {
      const double t = t_lo + unit(rng) * (t_hi - t_lo);
      out.push_back(LabeledPoint::free(t * d, 0.0, D - t));
    }
  }
  return out;
}

// --- trajectories --------------------------------------------------------------

Posed look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(up);
  if (x.norm() < 1e-9) x = z.cross(Vec3::UnitX());
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 R;
  R.col(0) = x;
  R.col(1) = y;
  R.col(2) = z;
  return Posed(R, eye);
}

std::vector<Posed> interpolate_waypoints(const std::vector<Posed>& waypoints, int frames_per_leg) {
  std::vector<Posed> out;
  for (std::size_t i = 0; i + 1 < waypoints.size(); ++i) {
    const Posed& a = waypoints[i];
    const Posed& b = waypoints[i + 1];
    const Vec3 w = so3_log(Mat3(a.rotation.transpose() * b.rotation));
    for (int j = 0; j < frames_per_leg; ++j) {
      const double s = double(j) / frames_per_leg;
      out.emplace_back(a.rotation * so3_exp(Vec3(s * w)), (1.0 - s) * a.translation + s * b.translation);
    }
  }
  return out;
}

std::vector<SimFrame> simulate_trajectory(const Scene& scene, const std::vector<Posed>& waypoints,
                                          const SensorModel& sensor, int frames_per_leg, const LabelConfig& labels,
                                          std::uint64_t seed, int threads) {
  std::mt19937_64 rng(seed);
  std::vector<SimFrame> frames;
  for (const Posed& T : interpolate_waypoints(waypoints, frames_per_leg)) {
    const DepthFrame depth = render_depth(scene, T, sensor, rng, threads);
    frames.push_back({T, label_points(scene, T, depth, labels, rng)});
  }
  return frames;
}

std::vector<Posed> orbit_waypoints(const Vec3& center, double radius_x, double radius_y, double height, int count,
                                   double phase) {
  std::vector<Posed> out;
  for (int i = 0; i < count; ++i) {
    const double a = phase + 2.0 * std::numbers::pi * i / std::max(1, count - 1);
    const Vec3 eye(center.x() + radius_x * std::cos(a), center.y() + radius_y * std::sin(a), height);
    const Vec3 target(center.x() - 0.5 * radius_x * std::cos(a), center.y() - 0.5 * radius_y * std::sin(a), 0.8);
    out.push_back(look_at(eye, target));
  }
  return out;
}

std::vector<Posed> room_orbit(const Scene& scene, int count, double phase) {
  const Vec3 center = 0.5 * (scene.lower + scene.upper);
  const Vec3 half = 0.5 * (scene.upper - scene.lower);
  const double height = std::min(1.6, scene.lower.z() + 0.55 * (scene.upper.z() - scene.lower.z()));
  return orbit_waypoints(center, 0.6 * half.x(), 0.6 * half.y(), height, count, phase);
}

Scene random_room_scene(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto in = [&](double a, double b) { return a + (b - a) * u(rng); };
  Scene s;
  const Vec3 half(in(2.0, 3.5), in(1.5, 3.0), in(1.25, 1.75));
  s.primitives.push_back(HollowRoom{half, half, 0.2});
  s.fit_bounds();
  // the orbit ring and the chords cut between its waypoints
  std::vector<Vec3> ring;
  for (const double f : {0.65, 0.8, 1.0})
    for (const Posed& p : room_orbit(s, 65)) {
      const Vec3 c = 0.5 * (s.lower + s.upper);
      ring.emplace_back(c.x() + f * (p.translation.x() - c.x()), c.y() + f * (p.translation.y() - c.y()),
                        p.translation.z());
    }
  const int want = 2 + int(u(rng) * 3.0);
  for (int attempt = 0; attempt < 200 && int(s.primitives.size()) < want + 1; ++attempt) {
    Primitive prim;
    const Vec3 c(in(0.6, 2 * half.x() - 0.6), in(0.6, 2 * half.y() - 0.6), in(0.3, 2 * half.z() - 0.6));
    if (u(rng) < 0.5) {
      prim = Sphere{c, in(0.3, 0.7)};
    } else {
      prim = Box{c, Vec3(in(0.25, 0.6), in(0.25, 0.6), in(0.25, 0.6))};
    }
    bool clear = true;
    for (const Vec3& x : ring) clear = clear && primitive_sdf(prim, x) > 0.4;
    if (clear) s.primitives.push_back(prim);
  }
  s.fit_bounds();
  return s;
}

std::vector<SimFrame> capture_orbit(const Scene& scene, const CaptureConfig& cfg, std::uint64_t seed, int threads) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Posed> wps = room_orbit(scene, cfg.waypoints, cfg.phase);
  for (Posed& p : wps)
    for (int a = 0; a < 3; ++a) p.translation(a) += cfg.jitter * u(rng);
  return simulate_trajectory(scene, wps, cfg.sensor, cfg.frames_per_leg, cfg.labels, rng(), threads);
}

}  // namespace hsdf
