#pragma once

#include <span>
#include <vector>

#include "hsdf/diff.hpp"

namespace hsdf {

/// One observation in its sensor frame. Near-surface points carry an SDF
/// label y with weight w; free-space points carry bounds [b_lo, b_hi].
struct LabeledPoint {
  enum class Kind : std::uint8_t { NearSurface = 1, FreeSpace = 2 };

  Vec3 x = Vec3::Zero();
  Kind kind = Kind::NearSurface;
  double v0 = 0.0;  // y or b_lo
  double v1 = 1.0;  // w or b_hi
  /// True for the ray hit itself (y = 0 by construction).
  bool on_surface = false;

  static LabeledPoint near(const Vec3& x, double y, double w = 1.0, bool on_surface = false) {
    return {x, Kind::NearSurface, y, w, on_surface};
  }
  static LabeledPoint free(const Vec3& x, double b_lo, double b_hi) { return {x, Kind::FreeSpace, b_lo, b_hi, false}; }

  bool is_near() const { return kind == Kind::NearSurface; }
  double y() const { return v0; }
  double w() const { return v1; }
  double b_lo() const { return v0; }
  double b_hi() const { return v1; }
};

enum class SdfLoss { Abs, Squared };

struct CostConfig {
  double w_sdf = 5.4;
  double beta = 5.0;
  double near_surface_band = 0.3;
  double w_rho = 1e3;
  double tau = 0.1;
  double gm_sigma = 0.1;
  /// Abs is w|h - y|. Squared, (h - y)^2 unweighted, is the quadratic model
  /// the closed-form initialiser solves exactly.
  SdfLoss sdf_loss = SdfLoss::Abs;
  /// When false free-space points are ignored (quadratic toy problems).
  bool use_free_space = true;
};

/// Cap on the exponent of the lower-bound penalty, which keeps the cost
/// finite for far-off initial fields.
inline constexpr double kMaxExponent = 300.0;

double sdf_cost(double h, double y, double w);
double bound_cost(double h, double b_lo, double b_hi, double beta);
/// w_rho * max(|Log(T_hat^-1 T)| - tau, 0).
double trust_region(const Posed& T_hat, const Posed& T, double w_rho, double tau);
/// r^2 / (1 + r^2 / sigma^2).
double gm_kernel(double r, double sigma);

/// Cost of one labelled point given the field value h at its position.
double point_cost(const LabeledPoint& p, double h, const CostConfig& cfg);

/// Sum of point costs on the tape; h is N x 1 aligned with `points`.
Var data_cost(Var h, std::span<const LabeledPoint> points, const CostConfig& cfg);

/// Trust-region hinge on a twist leaf (1 x 6). Log(Exp(eps)) = eps, so the
/// regulariser reduces to the twist norm.
Var trust_region(Var eps, const CostConfig& cfg);

}  // namespace hsdf
