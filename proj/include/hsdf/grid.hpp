#pragma once

#include <random>
#include <utility>
#include <vector>

#include "hsdf/diff.hpp"

namespace hsdf {

/// One lattice of learnable d-dimensional vertex features.
struct GridLevel {
  LatticeGeometry geometry;
  Param features;  // vertex_count x d

  GridLevel() = default;
  GridLevel(const LatticeGeometry& g, int feature_dim);

  int feature_dim() const { return int(features.value.cols()); }
  Vec3 lower() const { return geometry.origin; }
  Vec3 upper() const { return geometry.upper(); }
};

/// Coarse-to-fine stack of feature lattices sharing one feature dimension.
class MultiresGrid {
 public:
  MultiresGrid() = default;
  /// Levels with the given cell sizes (strictly decreasing) covering
  /// [lower, upper]. The coarse lattice snaps the box outward; finer lattices
  /// share its origin and stay inside it.
  MultiresGrid(const Vec3& lower, const Vec3& upper, const std::vector<double>& cell_sizes, int feature_dim);
  explicit MultiresGrid(std::vector<GridLevel> levels);

  int level_count() const { return int(levels_.size()); }
  int feature_dim() const { return levels_.empty() ? 0 : levels_.front().feature_dim(); }
  GridLevel& level(int l) { return levels_.at(std::size_t(l)); }
  const GridLevel& level(int l) const { return levels_.at(std::size_t(l)); }
  std::vector<GridLevel>& levels() { return levels_; }
  const std::vector<GridLevel>& levels() const { return levels_; }

  /// Query domain: the finest level's box, which every coarser box contains.
  Vec3 lower() const { return levels_.back().lower(); }
  Vec3 upper() const { return levels_.back().upper(); }
  bool contains(const Vec3& x) const;

  void fill_normal(double stddev, std::mt19937_64& rng);
  void zero_features();
  std::vector<Param*> feature_params();

 private:
  std::vector<GridLevel> levels_;
};

/// Pads an axis-aligned box and builds the default grid over it.
MultiresGrid make_grid(const Vec3& lower, const Vec3& upper, const std::vector<double>& cell_sizes, int feature_dim,
                       double padding);

/// Trilinear feature at x. Throws OutOfBounds.
Eigen::RowVectorXd interpolate(const GridLevel& level, const Vec3& x);

/// Nonzero entries (vertex, weight) of the interpolation row at x.
std::vector<std::pair<Index, double>> interpolation_row(const GridLevel& level, const Vec3& x);

/// Concatenated features of levels [0, active); higher levels are zeros.
Eigen::RowVectorXd grid_features(const MultiresGrid& grid, const Vec3& x, int active_levels);

/// Maps concatenated features (L*d) to an SDF value. Either a one-hidden-layer
/// ReLU MLP or a single affine map ("linear mode").
class Decoder {
 public:
  Decoder() = default;
  static Decoder mlp(int input_dim, int hidden, std::mt19937_64& rng);
  static Decoder linear(int input_dim, std::mt19937_64& rng);
  static Decoder linear(Tensor weight, double bias);

  bool is_linear() const { return linear_; }
  int input_dim() const { return int(w1.value.cols()); }
  int hidden_dim() const { return linear_ ? 0 : int(w1.value.rows()); }
  Index parameter_count() const;
  std::vector<Param*> params();

  /// For linear mode: the weight row (1 x input_dim) and bias.
  const Tensor& linear_weight() const { return w1.value; }
  double linear_bias() const { return b1.value(0, 0); }

  double evaluate(const Eigen::RowVectorXd& features) const;
  /// N x input_dim features -> N x 1 values.
  Var forward(Tape& tape, Var features, bool trainable);

  // Layers: linear mode uses (w1, b1) only, w1 is 1 x input_dim.
  Param w1, b1, w2, b2;

 private:
  bool linear_ = false;
  friend Decoder decoder_from_params(bool, Param, Param, Param, Param);
};

Decoder decoder_from_params(bool linear, Param w1, Param b1, Param w2, Param b2);

double eval_field(const MultiresGrid& grid, const Decoder& decoder, const Vec3& x, int active_levels);
double eval_field(const MultiresGrid& grid, const Decoder& decoder, const Vec3& x);

/// Concatenated features on the tape for N x 3 points. Level l >= active is a
/// zero constant. Features enter as trainable leaves when `trainable`.
Var field_features(Tape& tape, MultiresGrid& grid, Var points, int active_levels, bool trainable);

/// Same as field_features but with caller-provided feature leaves per level.
Var field_features(Tape& tape, const MultiresGrid& grid, std::span<const Var> level_features, Var points,
                   int active_levels);

}  // namespace hsdf
