#include "hsdf/submap.hpp"

#include <limits>

namespace hsdf {

std::size_t Submap::point_count() const {
  std::size_t n = 0;
  for (const Frame& f : frames) n += f.points.size();
  return n;
}

std::pair<Vec3, Vec3> observed_bounds(const std::vector<Frame>& frames) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const Frame& f : frames)
    for (const LabeledPoint& p : f.points) {
      const Vec3 x = f.pose * p.x;
      lo = lo.cwiseMin(x);
      hi = hi.cwiseMax(x);
    }
  if (!(lo.array() <= hi.array()).all()) throw Error(ErrorCode::EmptyObservations, "no observed points");
  return {lo, hi};
}

MultiresGrid grid_for_frames(const std::vector<Frame>& frames, const GridConfig& cfg) {
  const auto [lo, hi] = observed_bounds(frames);
  const double pad = cfg.padding < 0 ? cfg.cell_sizes.front() : cfg.padding;
  return make_grid(lo, hi, cfg.cell_sizes, cfg.feature_dim, pad);
}

std::vector<Submap> split_submaps(const std::vector<SimFrame>& frames, int every_n, const GridConfig& grid_cfg,
                                  const std::vector<Posed>* estimated_world_poses) {
  if (every_n < 1) throw Error(ErrorCode::InvalidArgument, "every_n must be >= 1");
  if (estimated_world_poses && estimated_world_poses->size() != frames.size())
    throw Error(ErrorCode::LengthMismatch, "estimated poses do not match frames");
  std::vector<Submap> out;
  for (std::size_t start = 0; start < frames.size(); start += std::size_t(every_n)) {
    const std::size_t end = std::min(frames.size(), start + std::size_t(every_n));
    Submap s;
    s.id = int(out.size());
    auto world_estimate = [&](std::size_t k) {
      return estimated_world_poses ? (*estimated_world_poses)[k] : frames[k].gt_pose;
    };
    s.base_pose = world_estimate(start);
    s.gt_base_pose = frames[start].gt_pose;
    const Posed base_inv = s.base_pose.inverse(), gt_base_inv = s.gt_base_pose.inverse();
    for (std::size_t k = start; k < end; ++k) {
      Frame f;
      f.index = int(k);
      f.pose = k == start ? Posed::Identity() : base_inv * world_estimate(k);
      f.gt_pose = k == start ? Posed::Identity() : gt_base_inv * frames[k].gt_pose;
      f.points = frames[k].points;
      s.frames.push_back(std::move(f));
    }
    std::tie(s.box_lower, s.box_upper) = observed_bounds(s.frames);
    s.grid = grid_for_frames(s.frames, grid_cfg);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace hsdf
