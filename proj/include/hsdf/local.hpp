#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "hsdf/submap.hpp"

namespace hsdf {

/// T <- orthonormalized(T Exp(eps)); a zero twist leaves T bit-identical.
void fold_twist(Posed& pose, const Param& twist);

// --- objective ---------------------------------------------------------------------

struct ObjectiveOptions {
  /// Number of active levels, coarse first; -1 means all.
  int active_levels = -1;
  bool train_features = true;
  bool train_decoder = false;
  bool train_poses = true;
  bool regularize = true;
  /// Frames whose twist stays constant (gauge).
  std::vector<std::size_t> fixed_frames;
  /// Frames entering the sum; empty means all.
  std::vector<std::size_t> frame_subset;
  /// Optional per-frame point rows; empty inner vector means all points.
  const std::vector<std::vector<std::size_t>>* point_rows = nullptr;
};

struct ObjectiveTerms {
  Var total, data, reg;
  std::size_t used = 0;
  /// Observations that left the grid box under the current poses.
  std::size_t skipped = 0;
};

/// Sum of point costs at T_k = T_hat_k Exp(eps_k) plus the trust-region terms.
/// `twists` holds one 1 x 6 param per frame.
ObjectiveTerms local_objective(Tape& tape, Submap& submap, Decoder& decoder, std::vector<Param>& twists,
                               const CostConfig& cfg, const ObjectiveOptions& opt = {});

/// Plain evaluation of the data term at the current frame poses with the given
/// number of active levels.
double level_objective(const Submap& submap, const Decoder& decoder, int active_levels, const CostConfig& cfg,
                       std::size_t* skipped = nullptr);

/// In-box observations of a submap at its current pose estimates.
struct SubmapPoints {
  std::vector<Vec3> x;  // submap frame
  std::vector<LabeledPoint> labels;
  std::size_t skipped = 0;
};
SubmapPoints gather_points(const Submap& submap, bool near_only = false);

// --- initialisation ------------------------------------------------------------

struct ClosedFormStats {
  std::size_t points = 0;
  std::size_t unknowns = 0;
  bool dense = true;
};

/// Minimum-norm least-squares features of one level under a linear decoder and
/// the quadratic near-surface cost, with coarser levels fixed and finer levels
/// zero. Returns vertex_count x d.
Tensor closed_form_level(const Submap& submap, const Decoder& decoder, int level, ClosedFormStats* stats = nullptr);

/// Per-point (r1, r2, r3): near-surface error, upper-bound and lower-bound
/// violations of the field restricted to `prior_levels` levels.
Tensor residual_features(const std::vector<Vec3>& x, const std::vector<LabeledPoint>& labels,
                         const MultiresGrid& grid, const Decoder& decoder, int prior_levels);

/// Nearest lattice vertex of each point, -1 outside the lattice.
std::vector<Index> nearest_vertices(const LatticeGeometry& g, const std::vector<Vec3>& x);

/// Mean residual per nearest vertex; vertices without points are zero.
Tensor voxelize(const std::vector<Vec3>& x, const Tensor& residuals, const LatticeGeometry& g);

/// Per-level initialiser: two conv3d layers (3 -> 6 -> 12, ReLU) then a shared
/// per-vertex MLP (12 -> 16 -> d).
class Encoder {
 public:
  static Encoder random(int feature_dim, std::mt19937_64& rng, bool zero_last_layer = false);

  int feature_dim() const { return int(m2w.value.rows()); }
  std::vector<Param*> params();
  Var forward(Tape& tape, Var voxels, const Eigen::Vector3i& dims, bool trainable);
  Tensor apply(const Tensor& voxels, const Eigen::Vector3i& dims);

  Param c1w, c1b, c2w, c2b, m1w, m1b, m2w, m2b;
};

void save_encoders(const std::filesystem::path& path, const std::vector<Encoder>& encoders);
std::vector<Encoder> load_encoders(const std::filesystem::path& path);

/// Encoder features for one level from the residuals of the coarser levels.
Tensor encoder_init(const Submap& submap, const Decoder& decoder, std::vector<Encoder>& encoders, int level);

enum class InitMethod { Zero, ClosedForm, Encoder };

/// Fills levels coarse to fine; each level sees the coarser levels already set
/// and finer levels zero. Returns the objective with 0..L active levels.
std::vector<double> hierarchical_init(Submap& submap, const Decoder& decoder, InitMethod method,
                                      std::vector<Encoder>* encoders, const CostConfig& cfg);

// --- joint optimisation ----------------------------------------------------------

struct LocalSlamConfig {
  int epochs = 200;
  double lr = 1e-3;
  double pose_lr = 1e-3;
  bool freeze_poses = false;
  /// Keep frame 0 at its estimate (gauge).
  bool fix_first_pose = true;
  /// Frames sampled per epoch, 0 = all.
  int frames_per_epoch = 0;
  /// Uniform per-epoch point subsampling ratio in (0, 1].
  double point_fraction = 1.0;
  std::uint64_t seed = 0;
  CostConfig costs;
};

struct EpochLog {
  int epoch = 0;
  double data_cost = 0.0;
  double reg_cost = 0.0;
  std::size_t skipped = 0;
};

struct LocalSlamResult {
  std::vector<Posed> poses;
  std::vector<EpochLog> trace;
};

/// Adam over features and pose twists with the decoder frozen. Updates the
/// submap's features and frame pose estimates in place.
LocalSlamResult local_slam(Submap& submap, Decoder& decoder, const LocalSlamConfig& cfg);

std::string trace_csv(const std::vector<EpochLog>& trace);

// --- incremental mode ---------------------------------------------------------------

/// One point per occupied voxel: centroid position, first point's label.
std::vector<LabeledPoint> voxel_downsample(const std::vector<LabeledPoint>& points, double voxel);

struct TrackConfig {
  int iters = 200;
  double lr = 2e-3;
  double voxel = 0.6;
  double gm_sigma = 0.1;
  std::size_t min_points = 10;
};

/// Optimises only the frame pose against the fixed submap field with a
/// Geman-McClure kernel on downsampled surface points.
Posed track_frame(const Submap& submap, Decoder& decoder, const Frame& frame, const Posed& initial,
                  const TrackConfig& cfg);

struct MapUpdateConfig {
  int iters = 20;
  double lr = 1e-3;
  double voxel = 0.08;
  CostConfig costs;
};

/// Latest frame plus up to ten evenly spaced earlier frames.
std::vector<std::size_t> map_update_frames(std::size_t frame_count);

/// Adam over features only with all poses fixed. Returns the loss per iteration.
std::vector<double> map_update(Submap& submap, Decoder& decoder, const MapUpdateConfig& cfg);

struct IncrementalConfig {
  TrackConfig track;
  MapUpdateConfig map;
  /// Extrapolate the previous motion to initialise each frame.
  bool constant_velocity = true;
};

/// Replays the submap's frames in order: track each new frame then update the
/// map. Returns the estimated frame poses.
std::vector<Posed> incremental_slam(Submap& submap, Decoder& decoder, const IncrementalConfig& cfg);

}  // namespace hsdf
