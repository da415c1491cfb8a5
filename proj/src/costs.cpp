#include "hsdf/costs.hpp"

#include <cmath>

namespace hsdf {

double sdf_cost(double h, double y, double w) { return w * std::abs(h - y); }

double bound_cost(double h, double b_lo, double b_hi, double beta) {
  const double lower = std::max(std::exp(std::min(beta * (b_lo - h), kMaxExponent)) - 1.0, 0.0);
  const double upper = std::max(h - b_hi, 0.0);
  return std::max(lower, upper);
}

double trust_region(const Posed& T_hat, const Posed& T, double w_rho, double tau) {
  return w_rho * std::max(se3_log(T_hat.inverse() * T).norm() - tau, 0.0);
}

double gm_kernel(double r, double sigma) { return r * r / (1.0 + r * r / (sigma * sigma)); }

double point_cost(const LabeledPoint& p, double h, const CostConfig& cfg) {
  if (p.is_near()) {
    if (cfg.sdf_loss == SdfLoss::Squared) return (h - p.y()) * (h - p.y());
    return sdf_cost(h, p.y(), cfg.w_sdf * p.w());
  }
  return cfg.use_free_space ? bound_cost(h, p.b_lo(), p.b_hi(), cfg.beta) : 0.0;
}

Var data_cost(Var h, std::span<const LabeledPoint> points, const CostConfig& cfg) {
  if (h.rows() != Index(points.size()) || h.cols() != 1)
    throw Error(ErrorCode::ShapeMismatch, "data_cost: field values do not match point count");
  Tape& tape = h.tape();
  std::vector<Index> near_rows, free_rows;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].is_near()) near_rows.push_back(Index(i));
    else if (cfg.use_free_space) free_rows.push_back(Index(i));
  }
  Var total = tape.scalar(0.0);
  if (!near_rows.empty()) {
    Tensor y(Index(near_rows.size()), 1), w(Index(near_rows.size()), 1);
    for (std::size_t k = 0; k < near_rows.size(); ++k) {
      const LabeledPoint& p = points[std::size_t(near_rows[k])];
      y(Index(k), 0) = -p.y();
      w(Index(k), 0) = cfg.w_sdf * p.w();
    }
    Var r = add(gather_rows(h, near_rows), y);
    total = total + (cfg.sdf_loss == SdfLoss::Squared ? sum(square(r)) : sum(mul(abs(r), w)));
  }
  if (!free_rows.empty()) {
    Tensor lo(Index(free_rows.size()), 1), neg_hi(Index(free_rows.size()), 1);
    for (std::size_t k = 0; k < free_rows.size(); ++k) {
      const LabeledPoint& p = points[std::size_t(free_rows[k])];
      lo(Index(k), 0) = cfg.beta * p.b_lo();
      neg_hi(Index(k), 0) = -p.b_hi();
    }
    Var hf = gather_rows(h, free_rows);
    // min(z, cap) as -max(-z, -cap)
    Var z = -max(-add(-cfg.beta * hf, lo), -kMaxExponent);
    Var lower = max(exp(z) + (-1.0), 0.0);
    Var upper = max(add(hf, neg_hi), 0.0);
    total = total + sum(max(lower, upper));
  }
  return total;
}

Var trust_region(Var eps, const CostConfig& cfg) { return cfg.w_rho * max(norm(eps) + (-cfg.tau), 0.0); }

}  // namespace hsdf
