#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "hsdf/error.hpp"
#include "hsdf/geometry.hpp"

namespace hsdf {

/// Row-major dense block: rows are items (points, vertices), columns channels.
using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

/// A learnable array with its gradient accumulator.
struct Param {
  Tensor value;
  Tensor grad;

  Param() = default;
  explicit Param(Tensor v) : value(std::move(v)), grad(Tensor::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Index size() const { return value.size(); }
};

class Tape;

/// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Append-only record of eagerly evaluated primitive ops. Nodes are stored in
/// creation order, which is a topological order.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var scalar(double value);
  /// Leaf bound to `p`. When `trainable` is false the node is a constant copy.
  Var param(Param& p, bool trainable = true);

  /// Reverse sweep from a 1x1 output; accumulates into every reachable Param.
  void backward(Var output);

  const Tensor& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Op-implementation API.
  Var push(Tensor value, bool requires_grad, BackwardFn backward);
  /// Gradient buffer of node `id`, zero-initialised on first access.
  Tensor& grad(int id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Param* param = nullptr;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// --- elementwise and reductions ------------------------------------------
// Binary elementwise ops accept equal shapes or a 1x1 operand (broadcast).

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator-(Var a);
Var operator*(double s, Var a);
Var operator+(Var a, double c);
Var div(Var a, Var b);
/// a + c with a constant tensor of the same shape.
Var add(Var a, const Tensor& c);
/// a * c elementwise with a constant tensor of the same shape.
Var mul(Var a, const Tensor& c);

Var relu(Var a);
Var abs(Var a);
Var exp(Var a);
Var square(Var a);
Var sqrt(Var a);
/// max(a, c) elementwise; ties take a's gradient.
Var max(Var a, double c);
/// max(a, b) elementwise; ties take a's gradient.
Var max(Var a, Var b);
/// Geman-McClure rho(r) = r^2 / (1 + r^2 / sigma^2), elementwise.
Var geman_mcclure(Var a, double sigma);

Var sum(Var a);
Var mean(Var a);
/// Per-row sum, N x C -> N x 1.
Var row_sum(Var a);
/// Frobenius norm of the whole tensor; gradient 0 at the origin.
Var norm(Var a);

// --- structural -----------------------------------------------------------

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var gather_rows(Var a, std::span<const Index> rows);
/// Inverse of gather_rows: output has `n` rows, rows[i] receives a.row(i).
Var scatter_rows(Var a, std::span<const Index> rows, Index n);

/// x * W^T + b, with x N x in, W out x in, b 1 x out.
Var linear(Var x, Var weight, Var bias);

// --- domain primitives -----------------------------------------------------

/// Regular vertex lattice; vertex (i, j, k) sits at origin + cell * (i, j, k)
/// and has flat index i + nx * (j + ny * k).
struct LatticeGeometry {
  Vec3 origin = Vec3::Zero();
  double cell_size = 1.0;
  Eigen::Vector3i dims = Eigen::Vector3i::Constant(2);

  Index vertex_count() const { return Index(dims.x()) * dims.y() * dims.z(); }
  Vec3 upper() const { return origin + cell_size * (dims.cast<double>() - Vec3::Ones()); }
  Vec3 vertex(Index flat) const;
  Index flat(int i, int j, int k) const { return i + Index(dims.x()) * (j + Index(dims.y()) * k); }
  /// Inclusive box test with tolerance 1e-9 * cell_size.
  bool contains(const Vec3& x) const;
};

/// Cell corner indices and trilinear weights of a query (weights may be 0).
struct TrilinearStencil {
  std::array<Index, 8> vertex{};
  std::array<double, 8> weight{};
  /// d weight / d x for each corner.
  std::array<Vec3, 8> weight_grad{};
};

/// Throws OutOfBounds when x is outside the lattice box.
TrilinearStencil trilinear_stencil(const LatticeGeometry& g, const Vec3& x);

/// Trilinear gather of per-vertex features (V x d) at query points (N x 3).
/// Differentiable in both features and points.
Var gather_trilinear(const LatticeGeometry& g, Var features, Var points);

/// 3D convolution, kernel 3, stride 1, zero padding. input V x Cin on lattice
/// `dims`; weight Cout x (27 * Cin) laid out [offset][cin]; bias 1 x Cout.
Var conv3d(Var input, const Eigen::Vector3i& dims, Var weight, Var bias);

/// Scatter-mean of N x C rows into V x C; vertex_of_row[i] < 0 drops row i.
Var avg_pool_scatter(Var values, std::span<const Index> vertex_of_row, Index vertex_count);

/// y_i = left * Exp(sign * eps) * x_i for eps (1 x 6) and points (N x 3).
/// The Jacobian w.r.t. eps is assembled analytically per point.
Var rigid_transform(Var eps, const Posed& left, Var points, double sign = 1.0);

// --- optimiser -------------------------------------------------------------

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over a fixed list of parameters.
class Adam {
 public:
  Adam(std::vector<Param*> params, AdamOptions options = {});

  void zero_grad();
  void step();

  std::int64_t step_count() const { return step_; }
  const AdamOptions& options() const { return options_; }
  void set_lr(double lr) { options_.lr = lr; }

 private:
  std::vector<Param*> params_;
  std::vector<Tensor> m_, v_;
  AdamOptions options_;
  std::int64_t step_ = 0;
};

}  // namespace hsdf
