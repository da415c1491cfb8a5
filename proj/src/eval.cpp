#include "hsdf/eval.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "hsdf/io.hpp"

namespace hsdf {

namespace {

bool try_eval(const Field& field, const Vec3& x, double& out) {
  try {
    out = field(x);
    return std::isfinite(out);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Uncovered || e.code() == ErrorCode::OutOfBounds) return false;
    throw;
  }
}

Vec3 uniform_in(const Vec3& lo, const Vec3& hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec3 x;
  for (int a = 0; a < 3; ++a) x(a) = lo(a) + u(rng) * (hi(a) - lo(a));
  return x;
}

double nearest(const Vec3& x, const std::vector<Vec3>& set) {
  double best = std::numeric_limits<double>::infinity();
  for (const Vec3& y : set) best = std::min(best, (x - y).squaredNorm());
  return std::sqrt(best);
}

constexpr std::size_t kMaxDraws = 1000;  // draws per accepted sample before giving up

}  // namespace

MaeReport sdf_mae(const Field& field, const Scene& scene, const Vec3& lower, const Vec3& upper, std::size_t n,
                  double band, std::uint64_t seed, const Region& region) {
  if (!(band > 0)) throw Error(ErrorCode::InvalidArgument, "band must be positive");
  std::mt19937_64 rng(seed);
  MaeReport rep;
  double total = 0.0;
  std::size_t used = 0, draws = 0;
  while (rep.samples < n) {
    if (++draws > kMaxDraws * std::max<std::size_t>(n, 1))
      throw Error(ErrorCode::InvalidArgument, "no band points in the sampling box");
    const Vec3 x = uniform_in(lower, upper, rng);
    const double truth = scene_sdf(scene, x);
    if (std::abs(truth) > band || (region && !region(x))) continue;
    ++rep.samples;
    double h;
    if (!try_eval(field, x, h)) {
      ++rep.skipped;
      continue;
    }
    total += std::abs(h - truth);
    ++used;
  }
  rep.mae = used ? total / double(used) : 0.0;
  return rep;
}

MaeReport sdf_mae(const Field& field, const Scene& scene, std::size_t n, double band, std::uint64_t seed) {
  return sdf_mae(field, scene, scene.lower, scene.upper, n, band, seed);
}

ProximityMask::ProximityMask(const std::vector<Vec3>& points, double radius) : radius_(radius) {
  if (!(radius > 0)) throw Error(ErrorCode::InvalidArgument, "radius must be positive");
  for (const Vec3& p : points) {
    const Eigen::Vector3i c = (p / radius_).array().floor().cast<int>();
    cells_[key(c.x(), c.y(), c.z())].push_back(p);
  }
}

std::int64_t ProximityMask::key(int i, int j, int k) const {
  return (std::int64_t(i) * 73856093) ^ (std::int64_t(j) * 19349663) ^ (std::int64_t(k) * 83492791);
}

bool ProximityMask::operator()(const Vec3& x) const {
  const Eigen::Vector3i c = (x / radius_).array().floor().cast<int>();
  const double r2 = radius_ * radius_;
  for (int i = -1; i <= 1; ++i)
    for (int j = -1; j <= 1; ++j)
      for (int k = -1; k <= 1; ++k) {
        const auto it = cells_.find(key(c.x() + i, c.y() + j, c.z() + k));
        if (it == cells_.end()) continue;
        for (const Vec3& p : it->second)
          if ((p - x).squaredNorm() <= r2) return true;
      }
  return false;
}

PoseRmse pose_rmse(const std::vector<Posed>& est, const std::vector<Posed>& gt, Gauge gauge) {
  if (est.size() != gt.size()) throw Error(ErrorCode::LengthMismatch, "pose lists differ in length");
  if (est.empty()) throw Error(ErrorCode::EmptySet, "no poses");
  const Posed g = gauge == Gauge::FirstPose ? gt.front() * est.front().inverse() : Posed::Identity();
  double r2 = 0.0, t2 = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const Posed e = gauge == Gauge::FirstPose && i == 0 ? gt.front() : g * est[i];
    const double a = deg(rotation_angle(Mat3(e.rotation.transpose() * gt[i].rotation)));
    r2 += a * a;
    t2 += (e.translation - gt[i].translation).squaredNorm();
  }
  return {std::sqrt(r2 / double(est.size())), std::sqrt(t2 / double(est.size()))};
}

FScore f_score(const std::vector<Vec3>& est, const std::vector<Vec3>& gt, double threshold) {
  if (est.empty() || gt.empty()) throw Error(ErrorCode::EmptySet, "f_score needs non-empty point sets");
  std::size_t p = 0, r = 0;
  for (const Vec3& x : est) p += nearest(x, gt) <= threshold ? 1 : 0;
  for (const Vec3& y : gt) r += nearest(y, est) <= threshold ? 1 : 0;
  FScore out;
  out.precision = 100.0 * double(p) / double(est.size());
  out.recall = 100.0 * double(r) / double(gt.size());
  const double s = out.precision + out.recall;
  out.fscore = s > 0 ? 2.0 * out.precision * out.recall / s : 0.0;
  return out;
}

double chamfer_l1(const std::vector<Vec3>& est, const std::vector<Vec3>& gt) {
  if (est.empty() || gt.empty()) throw Error(ErrorCode::EmptySet, "chamfer needs non-empty point sets");
  double a = 0.0, b = 0.0;
  for (const Vec3& x : est) a += nearest(x, gt);
  for (const Vec3& y : gt) b += nearest(y, est);
  return 0.5 * (a / double(est.size()) + b / double(gt.size()));
}

bool project_to_surface(const Field& field, Vec3& x, double tol, int max_steps) {
  constexpr double h = 1e-4;
  Vec3 y = x;
  for (int step = 0;; ++step) {
    double f;
    if (!try_eval(field, y, f)) return false;
    if (std::abs(f) < tol) {
      x = y;
      return true;
    }
    if (step == max_steps) return false;
    Vec3 grad;
    for (int a = 0; a < 3; ++a) {
      Vec3 p = y, m = y;
      p(a) += h;
      m(a) -= h;
      double fp, fm;
      if (!try_eval(field, p, fp) || !try_eval(field, m, fm)) return false;
      grad(a) = (fp - fm) / (2 * h);
    }
    const double g2 = grad.squaredNorm();
    if (!(g2 > 1e-12)) return false;
    y -= f * grad / g2;
  }
}

SurfaceSample surface_points_from_field(const Field& field, const Vec3& lower, const Vec3& upper, std::size_t n,
                                        double band, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SurfaceSample out;
  std::size_t accepted = 0, draws = 0;
  while (accepted < n) {
    if (++draws > kMaxDraws * std::max<std::size_t>(n, 1)) break;
    Vec3 x = uniform_in(lower, upper, rng);
    double f;
    if (!try_eval(field, x, f) || std::abs(f) > band) continue;
    ++accepted;
    if (project_to_surface(field, x)) {
      out.points.push_back(x);
    } else {
      ++out.discarded;
    }
  }
  return out;
}

std::vector<Vec3> scene_surface_points(const Scene& scene, std::size_t n, std::uint64_t seed) {
  const Field f = [&](const Vec3& x) { return scene_sdf(scene, x); };
  return surface_points_from_field(f, scene.lower, scene.upper, n, 0.3, seed).points;
}

Tensor export_slice(const Field& field, int axis, double coord, const Vec3& lower, const Vec3& upper, int resolution,
                    const std::filesystem::path& csv, const std::filesystem::path& pgm) {
  if (axis < 0 || axis > 2) throw Error(ErrorCode::InvalidArgument, "axis must be 0, 1 or 2");
  if (resolution < 1) throw Error(ErrorCode::InvalidArgument, "resolution must be positive");
  if (coord < lower(axis) || coord > upper(axis)) throw Error(ErrorCode::OutOfBounds, "slice outside the bounds");
  const int a = (axis + 1) % 3, b = (axis + 2) % 3;
  const int col_axis = std::min(a, b), row_axis = std::max(a, b);
  auto at = [&](int i, int axis_id) {
    return resolution == 1 ? 0.5 * (lower(axis_id) + upper(axis_id))
                           : lower(axis_id) + (upper(axis_id) - lower(axis_id)) * i / (resolution - 1);
  };
  Tensor out(resolution, resolution);
  for (int r = 0; r < resolution; ++r)
    for (int c = 0; c < resolution; ++c) {
      Vec3 x;
      x(axis) = coord;
      x(col_axis) = at(c, col_axis);
      x(row_axis) = at(r, row_axis);
      double f;
      out(r, c) = try_eval(field, x, f) ? f : std::numeric_limits<double>::quiet_NaN();
    }

  std::ostringstream os;
  for (int r = 0; r < resolution; ++r)
    for (int c = 0; c < resolution; ++c) os << format_double(out(r, c)) << (c + 1 < resolution ? ',' : '\n');
  write_text(csv, os.str());
  if (!pgm.empty()) {
    double scale = 0.0;
    for (Index i = 0; i < out.size(); ++i)
      if (std::isfinite(out.data()[i])) scale = std::max(scale, std::abs(out.data()[i]));
    std::ostringstream img;
    img << "P5\n" << resolution << ' ' << resolution << "\n255\n";
    for (int r = 0; r < resolution; ++r)
      for (int c = 0; c < resolution; ++c) {
        const double v = out(r, c);
        int g = 0;
        if (std::isfinite(v)) g = scale > 0 ? int(std::lround(127.5 + 127.5 * v / scale)) : 128;
        img.put(char(std::clamp(g, 0, 255)));
      }
    write_text(pgm, img.str());
  }
  return out;
}

}  // namespace hsdf
