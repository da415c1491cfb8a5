#pragma once

// Small synthetic submaps for unit and acceptance tests.

#include <functional>
#include <random>

#include "hsdf/submap.hpp"

namespace hsdf::testing {

struct ToySpec {
  Vec3 lower = Vec3::Zero();
  Vec3 upper = Vec3::Ones();
  std::vector<double> cell_sizes{0.5, 0.25};
  int feature_dim = 2;
  int frames = 2;
  int points_per_frame = 10;
  double free_fraction = 0.3;
  /// Frame poses are small random motions of this magnitude (rad, m).
  double pose_spread = 0.05;
};

/// Points uniformly inside the inner 80% of the box, labelled from `sdf`.
inline Submap make_toy_submap(const ToySpec& spec, const std::function<double(const Vec3&)>& sdf,
                              std::mt19937_64& rng) {
  Submap s;
  s.grid = MultiresGrid(spec.lower, spec.upper, spec.cell_sizes, spec.feature_dim);
  std::uniform_real_distribution<double> u(0.1, 0.9), sym(-1.0, 1.0), coin(0.0, 1.0);
  const Vec3 ext = s.grid.upper() - s.grid.lower();
  for (int k = 0; k < spec.frames; ++k) {
    Frame f;
    f.index = k;
    if (k > 0) {
      Twistd e;
      for (int i = 0; i < 6; ++i) e(i) = spec.pose_spread * sym(rng);
      f.pose = se3_exp(e);
    }
    f.gt_pose = f.pose;
    const Posed inv = f.pose.inverse();
    for (int j = 0; j < spec.points_per_frame; ++j) {
      Vec3 x;
      for (int a = 0; a < 3; ++a) x(a) = s.grid.lower()(a) + u(rng) * ext(a);
      const double y = sdf(x);
      if (coin(rng) < spec.free_fraction) {
        const double lo = y - 0.2 * coin(rng), hi = y + 0.3 * coin(rng);
        f.points.push_back(LabeledPoint::free(inv * x, lo, hi));
      } else {
        f.points.push_back(LabeledPoint::near(inv * x, y, 0.5 + coin(rng)));
      }
    }
    s.frames.push_back(std::move(f));
  }
  s.box_lower = s.grid.lower();
  s.box_upper = s.grid.upper();
  return s;
}

inline double plane_sdf(const Vec3& x) { return 0.3 * x.x() - 0.5 * x.y() + 0.2 * x.z() - 0.1; }

inline double wavy_sdf(const Vec3& x) {
  return 0.4 * std::sin(3.0 * x.x()) + 0.3 * std::cos(2.0 * x.y() + x.z()) - 0.2 * x.z();
}

}  // namespace hsdf::testing
