#pragma once

#include <random>
#include <variant>
#include <vector>

#include "hsdf/costs.hpp"
#include "hsdf/geometry.hpp"

namespace hsdf {

struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
};

struct Box {
  Vec3 center = Vec3::Zero();
  Vec3 half_extents = Vec3::Ones();
};

/// Closed box shell: the free interior is `half_extents` wide and the walls
/// are `thickness` thick.
struct HollowRoom {
  Vec3 center = Vec3::Zero();
  Vec3 half_extents = Vec3::Ones();
  double thickness = 0.2;
};

using Primitive = std::variant<Sphere, Box, HollowRoom>;

double primitive_sdf(const Primitive& p, const Vec3& x);
/// Axis-aligned bounds of a primitive.
std::pair<Vec3, Vec3> primitive_bounds(const Primitive& p);

/// Min-union of primitives. Exact outside all primitives; inside overlaps it
/// is an upper bound of the true distance.
struct Scene {
  std::vector<Primitive> primitives;
  Vec3 lower = Vec3::Zero();
  Vec3 upper = Vec3::Zero();

  /// Sets the bounds to the union of primitive bounds.
  void fit_bounds();
  bool in_bounds(const Vec3& x) const;
};

double scene_sdf(const Scene& scene, const Vec3& x);

/// 6 x 5 x 3 m room with a few interior objects.
Scene default_room_scene();

/// Room of random size holding 2 to 4 random spheres and boxes that keep
/// clear of the standard orbit (see room_orbit).
Scene random_room_scene(std::mt19937_64& rng);

struct SensorModel {
  enum class Type { Pinhole, Spherical };
  Type type = Type::Pinhole;
  // pinhole
  double fx = 24.0, fy = 24.0, cx = 16.0, cy = 12.0;
  int width = 32, height = 24;
  // spherical: azimuth over 360 deg, elevation in [el_min, el_max] rad
  int azimuth_count = 64, elevation_count = 16;
  double el_min = -0.4, el_max = 0.4;

  double max_range = 10.0;
  double depth_noise = 0.0;

  /// Unit ray directions in the sensor frame (camera looks along +z).
  std::vector<Vec3> ray_directions() const;
};

struct DepthFrame {
  std::vector<Vec3> directions;  // sensor frame
  std::vector<double> depth;     // range along the ray; valid when hit
  std::vector<char> hit;
};

/// Sphere tracing of every sensor ray until |sdf| < 1e-4 or max range.
/// Throws SensorInsideSurface when the sensor origin is inside geometry.
DepthFrame render_depth(const Scene& scene, const Posed& pose, const SensorModel& sensor, std::mt19937_64& rng,
                        int threads = 1);

enum class LabelMode { RayApprox, Oracle };

struct LabelConfig {
  int n_near = 2;
  int n_free = 3;
  double band = 0.3;
  LabelMode mode = LabelMode::RayApprox;
};

/// Per-hit sampling of one surface point, n_near near-surface samples and
/// n_free free-space samples, all expressed in the sensor frame.
std::vector<LabeledPoint> label_points(const Scene& scene, const Posed& pose, const DepthFrame& frame,
                                       const LabelConfig& cfg, std::mt19937_64& rng);

struct SimFrame {
  Posed gt_pose;
  std::vector<LabeledPoint> points;
};

/// Camera pose at `eye` looking at `target` (+z forward, +y down in image).
Posed look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitZ());

/// Poses interpolated along consecutive waypoints, frames_per_leg per leg.
std::vector<Posed> interpolate_waypoints(const std::vector<Posed>& waypoints, int frames_per_leg);

std::vector<SimFrame> simulate_trajectory(const Scene& scene, const std::vector<Posed>& waypoints,
                                          const SensorModel& sensor, int frames_per_leg, const LabelConfig& labels,
                                          std::uint64_t seed, int threads = 1);

/// Waypoints circling the room interior at mid height, looking inward.
std::vector<Posed> orbit_waypoints(const Vec3& center, double radius_x, double radius_y, double height, int count,
                                   double phase = 0.0);

/// Orbit around the centre of the scene bounds at 60% of the half extents,
/// 1.6 m high or lower in short rooms.
std::vector<Posed> room_orbit(const Scene& scene, int count, double phase = 0.0);

struct CaptureConfig {
  SensorModel sensor;
  LabelConfig labels;
  int waypoints = 5;
  int frames_per_leg = 4;
  /// Uniform jitter of each waypoint position, metres.
  double jitter = 0.1;
  double phase = 0.0;
};

/// Orbit trajectory with jittered waypoints, rendered and labelled.
std::vector<SimFrame> capture_orbit(const Scene& scene, const CaptureConfig& cfg, std::uint64_t seed,
                                    int threads = 1);

}  // namespace hsdf
