#pragma once

#include <filesystem>
#include <functional>
#include <unordered_map>
#include <vector>

#include "hsdf/sim.hpp"

namespace hsdf {

/// Scalar field over world points. May throw Error (Uncovered, OutOfBounds)
/// where it is undefined; metrics skip and count those points.
using Field = std::function<double(const Vec3&)>;

struct MaeReport {
  double mae = 0.0;
  std::size_t samples = 0;
  std::size_t skipped = 0;
};

/// Sampling restriction; empty means everywhere.
using Region = std::function<bool(const Vec3&)>;

/// Mean |field - scene_sdf| over n points drawn uniformly in `lower..upper`
/// and kept when |scene_sdf| <= band and the point lies in `region`.
MaeReport sdf_mae(const Field& field, const Scene& scene, const Vec3& lower, const Vec3& upper, std::size_t n,
                  double band, std::uint64_t seed, const Region& region = {});
MaeReport sdf_mae(const Field& field, const Scene& scene, std::size_t n, double band, std::uint64_t seed);

/// Points within `radius` of a reference set (hashed at cell = radius).
class ProximityMask {
 public:
  ProximityMask(const std::vector<Vec3>& points, double radius);
  bool operator()(const Vec3& x) const;

 private:
  double radius_;
  std::unordered_map<std::int64_t, std::vector<Vec3>> cells_;
  std::int64_t key(int i, int j, int k) const;
};

enum class Gauge { FirstPose, None };

struct PoseRmse {
  double rot_deg = 0.0;
  double tran_m = 0.0;
};

/// RMSE of geodesic rotation angles and position errors. With FirstPose the
/// estimate is first moved so that its first pose matches the ground truth.
PoseRmse pose_rmse(const std::vector<Posed>& est, const std::vector<Posed>& gt, Gauge gauge = Gauge::FirstPose);

struct FScore {
  double precision = 0.0;  // percent
  double recall = 0.0;
  double fscore = 0.0;
};

FScore f_score(const std::vector<Vec3>& est, const std::vector<Vec3>& gt, double threshold);
double chamfer_l1(const std::vector<Vec3>& est, const std::vector<Vec3>& gt);

/// Newton projection x <- x - f grad f / |grad f|^2 with central-difference
/// gradients until |f| < tol, at most max_steps. Returns false when it fails.
bool project_to_surface(const Field& field, Vec3& x, double tol = 1e-3, int max_steps = 10);

struct SurfaceSample {
  std::vector<Vec3> points;
  std::size_t discarded = 0;
};

/// n band points (|field| <= band) drawn uniformly in the box, projected.
SurfaceSample surface_points_from_field(const Field& field, const Vec3& lower, const Vec3& upper, std::size_t n,
                                        double band, std::uint64_t seed);

/// Points on the analytic surface of a scene, for reference sets.
std::vector<Vec3> scene_surface_points(const Scene& scene, std::size_t n, std::uint64_t seed);

/// resolution x resolution samples of the field on the plane axis = coord
/// across the box (rows follow the second free axis). Writes a CSV matrix
/// and, when `pgm` is non-empty, a grey preview with zero at mid grey.
/// Undefined samples are NaN.
Tensor export_slice(const Field& field, int axis, double coord, const Vec3& lower, const Vec3& upper, int resolution,
                    const std::filesystem::path& csv, const std::filesystem::path& pgm = {});

}  // namespace hsdf
