#pragma once

#include <vector>

#include "hsdf/costs.hpp"
#include "hsdf/grid.hpp"
#include "hsdf/sim.hpp"

namespace hsdf {

struct Frame {
  int index = 0;
  /// Pose estimate in the submap frame.
  Posed pose;
  /// Ground truth in the submap frame, when known.
  Posed gt_pose;
  std::vector<LabeledPoint> points;
};

struct Submap {
  int id = 0;
  MultiresGrid grid;
  /// Submap-to-world transform.
  Posed base_pose;
  Posed gt_base_pose;
  std::vector<Frame> frames;
  /// Axis-aligned bounds of the observed points in the submap frame.
  Vec3 box_lower = Vec3::Zero();
  Vec3 box_upper = Vec3::Zero();

  std::size_t point_count() const;
};

struct GridConfig {
  std::vector<double> cell_sizes{0.5, 0.1};
  int feature_dim = 4;
  /// Extra margin around the observed points; negative means one coarse cell.
  double padding = -1.0;
};

/// Bounds of all frame points under the frames' current pose estimates.
std::pair<Vec3, Vec3> observed_bounds(const std::vector<Frame>& frames);

/// Builds a zero-feature grid covering the observed bounds plus padding.
MultiresGrid grid_for_frames(const std::vector<Frame>& frames, const GridConfig& cfg);

/// Splits a trajectory into blocks of `every_n` frames. Each submap's base
/// pose is its first frame's world pose (`base_source`, defaulting to ground
/// truth); frame poses are re-expressed relative to it.
std::vector<Submap> split_submaps(const std::vector<SimFrame>& frames, int every_n, const GridConfig& grid_cfg,
                                  const std::vector<Posed>* estimated_world_poses = nullptr);

}  // namespace hsdf
