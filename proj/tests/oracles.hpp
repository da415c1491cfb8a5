#pragma once

// Independent reference computations used as test oracles.

#include <Eigen/SVD>

#include "hsdf/submap.hpp"

namespace hsdf::testing {

/// Dense trilinear weight row from the tensor-product hat-function formula.
inline Eigen::VectorXd hat_weights(const LatticeGeometry& g, const Vec3& x) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(g.vertex_count());
  const Vec3 u = (x - g.origin) / g.cell_size;
  for (int k = 0; k < g.dims.z(); ++k)
    for (int j = 0; j < g.dims.y(); ++j)
      for (int i = 0; i < g.dims.x(); ++i) {
        const double wx = std::max(0.0, 1.0 - std::abs(u.x() - i));
        const double wy = std::max(0.0, 1.0 - std::abs(u.y() - j));
        const double wz = std::max(0.0, 1.0 - std::abs(u.z() - k));
        w(g.flat(i, j, k)) = wx * wy * wz;
      }
  return w;
}

/// Linear-decoder field from dense weights: b + sum over levels < active.
inline double linear_field(const MultiresGrid& grid, const Tensor& theta, double bias, const Vec3& x, int active) {
  const int d = grid.feature_dim();
  double h = bias;
  for (int l = 0; l < active; ++l) {
    const Eigen::VectorXd w = hat_weights(grid.level(l).geometry, x);
    const Eigen::RowVectorXd f = w.transpose() * grid.level(l).features.value;
    h += f.dot(theta.row(0).segment(l * d, d));
  }
  return h;
}

/// Minimum-norm minimiser of sum_j (h(x_j) - y_j)^2 over one level's features,
/// from the explicitly assembled J^T J and J^T r with an SVD pseudoinverse
/// (cutoff 1e-10 sigma_max). Uses near-surface points at the current poses.
/// Runs in long double so the squared conditioning of J^T J stays below the
/// comparison tolerance.
inline Tensor dense_level_solution(const Submap& s, const Tensor& theta, double bias, int level) {
  using Ld = long double;
  using MatL = Eigen::Matrix<Ld, Eigen::Dynamic, Eigen::Dynamic>;
  using VecL = Eigen::Matrix<Ld, Eigen::Dynamic, 1>;
  const MultiresGrid& grid = s.grid;
  const LatticeGeometry& g = grid.level(level).geometry;
  const int d = grid.feature_dim();
  const Index V = g.vertex_count(), n = V * d;
  MatL JtJ = MatL::Zero(n, n);
  VecL Jtr = VecL::Zero(n);
  for (const Frame& f : s.frames)
    for (const LabeledPoint& p : f.points) {
      if (!p.is_near()) continue;
      const Vec3 x = f.pose * p.x;
      if (!grid.contains(x)) continue;
      const Ld r = Ld(linear_field(grid, theta, bias, x, level)) - Ld(p.y());
      const Eigen::VectorXd w = hat_weights(g, x);
      VecL row(n);
      for (Index v = 0; v < V; ++v)
        for (int c = 0; c < d; ++c) row(v * d + c) = Ld(w(v)) * Ld(theta(0, level * d + c));
      JtJ += row * row.transpose();
      Jtr += row * r;
    }
  Eigen::JacobiSVD<MatL> svd(JtJ, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const VecL& sv = svd.singularValues();
  VecL inv = VecL::Zero(n);
  for (Index i = 0; i < n; ++i)
    if (sv(i) > Ld(1e-10) * sv(0)) inv(i) = Ld(1) / sv(i);
  const VecL sol = -(svd.matrixV() * (inv.asDiagonal() * (svd.matrixU().transpose() * Jtr)));
  Tensor F(V, d);
  for (Index v = 0; v < V; ++v)
    for (int c = 0; c < d; ++c) F(v, c) = double(sol(v * d + c));
  return F;
}

}  // namespace hsdf::testing
