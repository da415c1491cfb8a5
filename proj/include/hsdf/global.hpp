#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hsdf/local.hpp"

namespace hsdf {

using Edge = std::pair<int, int>;

/// Submaps with their base poses (Submap::base_pose) and overlap edges u < v.
struct SubmapGraph {
  std::vector<Submap> submaps;
  std::vector<Edge> edges;

  std::vector<Posed> base_poses() const;
  void set_base_poses(const std::vector<Posed>& poses);
};

/// World-axis-aligned box of a submap's grid domain under `pose`.
std::pair<Vec3, Vec3> world_box(const Submap& s, const Posed& pose);

/// Pairs whose world boxes intersect with positive volume.
std::vector<Edge> build_edges(const std::vector<Submap>& submaps, const std::vector<Posed>& poses);

/// Whether the edge set connects every submap.
bool is_connected(std::size_t submap_count, const std::vector<Edge>& edges);

/// Level vertices of u inside u's grid domain that land inside v's.
std::vector<Index> overlap_vertices(const Submap& u, const Submap& v, int level, const Posed& pose_u,
                                    const Posed& pose_v);

enum class FeatureDistance { L2Squared, L1, NegCosine };

/// Pose variables of one submap: T = T_hat Exp(eps). An invalid `eps` holds the
/// pose fixed.
struct PoseVar {
  Posed estimate;
  Var eps;
};

struct AlignTerm {
  Var cost;
  std::size_t used = 0;
  std::size_t skipped = 0;
};

/// Levels 0..level of u's features at each of its level vertices, concatenated.
/// Rows of vertices outside u's domain (finer levels may stop short) are zero.
Tensor vertex_features(const Submap& u, int level);

/// Sum over overlap vertices z of u of dist(f_u(z), f_v(T_v^-1 T_u z)) with
/// levels 0..level concatenated. Queries leaving v's domain are skipped.
/// `u_features`, when given, is vertex_features(u, level).
AlignTerm feature_align_cost(Tape& tape, const Submap& u, const Submap& v, int level, const PoseVar& pose_u,
                             const PoseVar& pose_v, FeatureDistance dist = FeatureDistance::L2Squared,
                             const Tensor* u_features = nullptr);

/// Near-surface points of u (submap frame, current frame poses) whose world
/// positions lie in both domains, voxel-downsampled at `voxel`.
std::vector<Vec3> sdf_align_points(const Submap& u, const Submap& v, const Posed& pose_u, const Posed& pose_v,
                                   double voxel);

/// Sum over points x of u of (h_u(x) - h_v(T_v^-1 T_u x))^2.
AlignTerm sdf_align_cost(Tape& tape, const Submap& u, const Submap& v, const Decoder& decoder,
                         const std::vector<Vec3>& points, const PoseVar& pose_u, const PoseVar& pose_v);

struct AlignSchedule {
  /// Feature-alignment iterations per level, coarse first.
  std::vector<int> k_f{45, 45};
  std::vector<bool> level_enabled{true, true};
  int k_s = 10;
  double lr = 5e-3;
  double tau = 0.5;
  double w_rho = 1e3;
  FeatureDistance distance = FeatureDistance::L2Squared;
};

struct AlignLog {
  std::string stage;
  int iteration = 0;
  double objective = 0.0;
  /// Per submap, relative to ground truth after gauge alignment on submap 0.
  std::vector<double> rot_err_deg, tran_err_m;
};

struct AlignResult {
  std::vector<Posed> poses;
  std::vector<AlignLog> trace;
};

/// Coarse-to-fine feature alignment then SDF alignment of the base poses.
/// Submap 0 stays fixed. Edges and point sets are rebuilt at the start of
/// each stage; Adam restarts and the twists are folded at its end.
AlignResult align_submaps(SubmapGraph& graph, const Decoder& decoder, const AlignSchedule& schedule);

std::string align_report_csv(const std::vector<AlignLog>& trace);

/// Rotation (deg) and translation (m) error of each base pose against ground
/// truth, with the gauge taken from submap 0.
std::pair<std::vector<double>, std::vector<double>> base_pose_errors(const SubmapGraph& graph);

/// Decoded coverage-weighted mean of submap features at a world point.
/// Throws Uncovered when no submap contains x.
double fuse_query(const SubmapGraph& graph, const Decoder& decoder, const Vec3& x_w);

/// Number of submaps whose domain contains the world point.
int coverage(const SubmapGraph& graph, const Vec3& x_w);

struct GlobalBaConfig {
  int iters = 100;
  double lr = 1e-3;
  double pose_lr = 1e-3;
  CostConfig costs;
};

struct GlobalBaResult {
  std::vector<double> loss;
  std::size_t skipped = 0;
};

/// Fused-field data cost of every observation at T_u T_k x, plus the trust
/// region on every free twist.
ObjectiveTerms global_objective(Tape& tape, SubmapGraph& graph, Decoder& decoder, std::vector<Param>& base_twists,
                                std::vector<std::vector<Param>>& frame_twists, const CostConfig& cfg,
                                bool train_features = true);

/// Adam over all features, base poses (submap 0 fixed) and frame poses
/// (frame 0 of each submap fixed). Updates the graph in place.
GlobalBaResult global_ba(SubmapGraph& graph, Decoder& decoder, const GlobalBaConfig& cfg);

}  // namespace hsdf
