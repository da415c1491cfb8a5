#include "hsdf/grid.hpp"

#include <cmath>
#include <sstream>

namespace hsdf {

namespace {

Tensor uniform_tensor(Index rows, Index cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t(rows, cols);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = u(rng);
  return t;
}

}  // namespace

GridLevel::GridLevel(const LatticeGeometry& g, int feature_dim)
    : geometry(g), features(Tensor::Zero(g.vertex_count(), feature_dim)) {}

MultiresGrid::MultiresGrid(const Vec3& lower, const Vec3& upper, const std::vector<double>& cell_sizes,
                           int feature_dim) {
  if (cell_sizes.empty() || feature_dim < 1) throw Error(ErrorCode::BadConfig, "grid needs >= 1 level and d >= 1");
  for (std::size_t l = 0; l < cell_sizes.size(); ++l) {
    if (!(cell_sizes[l] > 0)) throw Error(ErrorCode::BadConfig, "cell size must be positive");
    if (l > 0 && !(cell_sizes[l] < cell_sizes[l - 1]))
      throw Error(ErrorCode::BadConfig, "cell sizes must strictly decrease coarse to fine");
  }
  const Vec3 extent = (upper - lower).cwiseMax(0.0);
  Vec3 coarse_extent;
  for (std::size_t l = 0; l < cell_sizes.size(); ++l) {
    const double c = cell_sizes[l];
    LatticeGeometry g;
    g.origin = lower;
    g.cell_size = c;
    for (int a = 0; a < 3; ++a) {
      int cells;
      if (l == 0) {
        cells = std::max(1, int(std::ceil(extent(a) / c - 1e-9)));
        coarse_extent(a) = cells * c;
      } else {
        cells = std::max(1, int(std::floor(coarse_extent(a) / c + 1e-9)));
      }
      g.dims(a) = cells + 1;
    }
    levels_.emplace_back(g, feature_dim);
  }
}

MultiresGrid::MultiresGrid(std::vector<GridLevel> levels) : levels_(std::move(levels)) {
  if (levels_.empty()) throw Error(ErrorCode::BadConfig, "grid needs >= 1 level");
  for (std::size_t l = 1; l < levels_.size(); ++l) {
    if (levels_[l].feature_dim() != levels_[0].feature_dim())
      throw Error(ErrorCode::ShapeMismatch, "levels disagree on feature dimension");
    if (!(levels_[l].geometry.cell_size < levels_[l - 1].geometry.cell_size))
      throw Error(ErrorCode::BadConfig, "cell sizes must strictly decrease coarse to fine");
  }
}

bool MultiresGrid::contains(const Vec3& x) const {
  for (const GridLevel& lv : levels_)
    if (!lv.geometry.contains(x)) return false;
  return true;
}

void MultiresGrid::fill_normal(double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  for (GridLevel& lv : levels_)
    for (Index i = 0; i < lv.features.value.size(); ++i) lv.features.value.data()[i] = n(rng);
}

void MultiresGrid::zero_features() {
  for (GridLevel& lv : levels_) lv.features.value.setZero();
}

std::vector<Param*> MultiresGrid::feature_params() {
  std::vector<Param*> out;
  for (GridLevel& lv : levels_) out.push_back(&lv.features);
  return out;
}

MultiresGrid make_grid(const Vec3& lower, const Vec3& upper, const std::vector<double>& cell_sizes, int feature_dim,
                       double padding) {
  const Vec3 pad = Vec3::Constant(padding);
  return MultiresGrid(lower - pad, upper + pad, cell_sizes, feature_dim);
}

Eigen::RowVectorXd interpolate(const GridLevel& level, const Vec3& x) {
  const TrilinearStencil s = trilinear_stencil(level.geometry, x);
  Eigen::RowVectorXd f = Eigen::RowVectorXd::Zero(level.feature_dim());
  for (int c = 0; c < 8; ++c)
    if (s.weight[c] != 0.0) f += s.weight[c] * level.features.value.row(s.vertex[c]);
  return f;
}

std::vector<std::pair<Index, double>> interpolation_row(const GridLevel& level, const Vec3& x) {
  const TrilinearStencil s = trilinear_stencil(level.geometry, x);
  std::vector<std::pair<Index, double>> row;
  for (int c = 0; c < 8; ++c)
    if (s.weight[c] != 0.0) row.emplace_back(s.vertex[c], s.weight[c]);
  return row;
}

Eigen::RowVectorXd grid_features(const MultiresGrid& grid, const Vec3& x, int active_levels) {
  const int d = grid.feature_dim();
  Eigen::RowVectorXd f = Eigen::RowVectorXd::Zero(grid.level_count() * d);
  for (int l = 0; l < grid.level_count(); ++l) {
    if (l < active_levels) {
      f.segment(l * d, d) = interpolate(grid.level(l), x);
    } else if (!grid.level(l).geometry.contains(x)) {
      std::ostringstream os;
      os << "query (" << x.transpose() << ") outside grid";
      throw Error(ErrorCode::OutOfBounds, os.str());
    }
  }
  return f;
}

// --- decoder -----------------------------------------------------------------

Decoder Decoder::mlp(int input_dim, int hidden, std::mt19937_64& rng) {
  Decoder d;
  const double b_in = 1.0 / std::sqrt(double(input_dim)), b_h = 1.0 / std::sqrt(double(hidden));
  d.w1 = Param(uniform_tensor(hidden, input_dim, b_in, rng));
  d.b1 = Param(uniform_tensor(1, hidden, b_in, rng));
  d.w2 = Param(uniform_tensor(1, hidden, b_h, rng));
  d.b2 = Param(uniform_tensor(1, 1, b_h, rng));
  return d;
}

Decoder Decoder::linear(int input_dim, std::mt19937_64& rng) {
  return linear(uniform_tensor(1, input_dim, 1.0 / std::sqrt(double(input_dim)), rng), 0.0);
}

Decoder Decoder::linear(Tensor weight, double bias) {
  if (weight.rows() != 1) throw Error(ErrorCode::ShapeMismatch, "linear decoder weight must be 1 x input");
  Decoder d;
  d.linear_ = true;
  d.w1 = Param(std::move(weight));
  d.b1 = Param(Tensor::Constant(1, 1, bias));
  return d;
}

Decoder decoder_from_params(bool linear, Param w1, Param b1, Param w2, Param b2) {
  Decoder d;
  d.linear_ = linear;
  d.w1 = std::move(w1);
  d.b1 = std::move(b1);
  d.w2 = std::move(w2);
  d.b2 = std::move(b2);
  const Index h = d.w1.value.rows();
  bool ok = d.b1.value.rows() == 1 && d.b1.value.cols() == h;
  if (!linear) ok = ok && d.w2.value.rows() == 1 && d.w2.value.cols() == h && d.b2.value.size() == 1;
  else ok = ok && h == 1;
  if (!ok) throw Error(ErrorCode::ShapeMismatch, "inconsistent decoder layer shapes");
  return d;
}

Index Decoder::parameter_count() const { return w1.size() + b1.size() + w2.size() + b2.size(); }

std::vector<Param*> Decoder::params() {
  if (linear_) return {&w1, &b1};
  return {&w1, &b1, &w2, &b2};
}

double Decoder::evaluate(const Eigen::RowVectorXd& f) const {
  if (f.size() != input_dim()) throw Error(ErrorCode::ShapeMismatch, "decoder input size");
  if (linear_) return w1.value.row(0).dot(f) + b1.value(0, 0);
  const Eigen::RowVectorXd h = (f * w1.value.transpose() + b1.value.row(0)).cwiseMax(0.0);
  return h.dot(w2.value.row(0)) + b2.value(0, 0);
}

Var Decoder::forward(Tape& tape, Var features, bool trainable) {
  Var out = hsdf::linear(features, tape.param(w1, trainable), tape.param(b1, trainable));
  if (linear_) return out;
  return hsdf::linear(relu(out), tape.param(w2, trainable), tape.param(b2, trainable));
}

// --- field -------------------------------------------------------------------

double eval_field(const MultiresGrid& grid, const Decoder& decoder, const Vec3& x, int active_levels) {
  return decoder.evaluate(grid_features(grid, x, active_levels));
}

double eval_field(const MultiresGrid& grid, const Decoder& decoder, const Vec3& x) {
  return eval_field(grid, decoder, x, grid.level_count());
}

Var field_features(Tape& tape, const MultiresGrid& grid, std::span<const Var> level_features, Var points,
                   int active_levels) {
  const Index n = points.rows();
  std::vector<Var> parts;
  for (int l = 0; l < grid.level_count(); ++l) {
    if (l < active_levels) {
      parts.push_back(gather_trilinear(grid.level(l).geometry, level_features[std::size_t(l)], points));
    } else {
      parts.push_back(tape.constant(Tensor::Zero(n, grid.feature_dim())));
    }
  }
  return concat_cols(parts);
}

Var field_features(Tape& tape, MultiresGrid& grid, Var points, int active_levels, bool trainable) {
  std::vector<Var> leaves;
  for (int l = 0; l < grid.level_count(); ++l) {
    // inactive levels never reach the output, so they are not placed on the tape
    leaves.push_back(l < active_levels ? tape.param(grid.level(l).features, trainable) : Var());
  }
  // bounds are enforced on every level, active or not
  const Tensor& P = points.value();
  for (Index i = 0; i < P.rows(); ++i) {
    const Vec3 x = P.row(i).transpose();
    if (!grid.contains(x)) {
      std::ostringstream os;
      os << "query (" << x.transpose() << ") outside grid";
      throw Error(ErrorCode::OutOfBounds, os.str());
    }
  }
  return field_features(tape, grid, leaves, points, active_levels);
}

}  // namespace hsdf
