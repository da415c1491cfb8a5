#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "hsdf/error.hpp"

namespace hsdf {

template <typename Scalar>
using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;

/// Tangent-space element of SE(3), ordered (rotation [rad], translation [m]).
template <typename Scalar>
using Twist = Eigen::Matrix<Scalar, 6, 1>;

/// Rigid transform x -> R x + t.
template <typename Scalar>
struct Pose {
  Matrix3<Scalar> rotation = Matrix3<Scalar>::Identity();
  Vector3<Scalar> translation = Vector3<Scalar>::Zero();

  Pose() = default;
  Pose(const Matrix3<Scalar>& r, const Vector3<Scalar>& t) : rotation(r), translation(t) {}

  static Pose Identity() { return Pose(); }

  Vector3<Scalar> operator*(const Vector3<Scalar>& x) const { return rotation * x + translation; }

  Pose operator*(const Pose& other) const {
    return Pose(rotation * other.rotation, rotation * other.translation + translation);
  }

  Pose inverse() const {
    Matrix3<Scalar> rt = rotation.transpose();
    return Pose(rt, -(rt * translation));
  }

  /// Nearest rotation in the Frobenius sense (polar decomposition).
  Pose orthonormalized() const {
    Eigen::JacobiSVD<Matrix3<Scalar>> svd(rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Matrix3<Scalar> r = svd.matrixU() * svd.matrixV().transpose();
    if (r.determinant() < Scalar(0)) {
      Matrix3<Scalar> u = svd.matrixU();
      u.col(2) *= Scalar(-1);
      r = u * svd.matrixV().transpose();
    }
    return Pose(r, translation);
  }

  /// R row-major followed by t.
  std::array<Scalar, 12> to_array() const {
    std::array<Scalar, 12> out{};
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out[3 * r + c] = rotation(r, c);
    for (int i = 0; i < 3; ++i) out[9 + i] = translation(i);
    return out;
  }

  static Pose from_array(const std::array<Scalar, 12>& a) {
    Pose p;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) p.rotation(r, c) = a[3 * r + c];
    for (int i = 0; i < 3; ++i) p.translation(i) = a[9 + i];
    return p;
  }
};

using Posed = Pose<double>;
using Twistd = Twist<double>;
using Vec3 = Vector3<double>;
using Mat3 = Matrix3<double>;

template <typename Scalar>
Matrix3<Scalar> hat(const Vector3<Scalar>& w) {
  Matrix3<Scalar> m;
  m << Scalar(0), -w.z(), w.y(), w.z(), Scalar(0), -w.x(), -w.y(), w.x(), Scalar(0);
  return m;
}

template <typename Scalar>
Vector3<Scalar> vee(const Matrix3<Scalar>& m) {
  return Vector3<Scalar>(m(2, 1), m(0, 2), m(1, 0));
}

namespace detail {

// Coefficients of the SO(3)/SE(3) series:
//   a = sin t / t, b = (1 - cos t) / t^2, c = (t - sin t) / t^3.
template <typename Scalar>
struct ExpCoefficients {
  Scalar a, b, c;
};

template <typename Scalar>
ExpCoefficients<Scalar> exp_coefficients(Scalar theta) {
  using std::cos;
  using std::sin;
  const Scalar t2 = theta * theta;
  if (theta < Scalar(1e-8)) {
    return {Scalar(1) - t2 / Scalar(6), Scalar(0.5) - t2 / Scalar(24), Scalar(1) / Scalar(6) - t2 / Scalar(120)};
  }
  const Scalar s = sin(theta);
  const Scalar half = sin(theta / Scalar(2));
  const Scalar one_minus_cos = Scalar(2) * half * half;
  Scalar c;
  if (theta < Scalar(1e-2)) {
    // theta - sin(theta) cancels catastrophically here
    c = Scalar(1) / Scalar(6) - t2 / Scalar(120) + t2 * t2 / Scalar(5040) - t2 * t2 * t2 / Scalar(362880);
  } else {
    c = (theta - s) / (t2 * theta);
  }
  return {s / theta, one_minus_cos / t2, c};
}

}  // namespace detail

template <typename Scalar>
Matrix3<Scalar> so3_exp(const Vector3<Scalar>& w) {
  const Scalar theta = w.norm();
  const auto k = detail::exp_coefficients(theta);
  const Matrix3<Scalar> W = hat(w);
  return Matrix3<Scalar>::Identity() + k.a * W + k.b * W * W;
}

/// Rotation angle in [0, pi], computed with atan2 for accuracy near 0 and pi.
template <typename Scalar>
Scalar rotation_angle(const Matrix3<Scalar>& r) {
  using std::atan2;
  const Scalar s = vee<Scalar>(r - r.transpose()).norm() / Scalar(2);
  const Scalar c = (r.trace() - Scalar(1)) / Scalar(2);
  return atan2(s, c);
}

/// Principal logarithm of a rotation with angle < pi.
template <typename Scalar>
Vector3<Scalar> so3_log(const Matrix3<Scalar>& r) {
  using std::sin;
  using std::sqrt;
  const Scalar theta = rotation_angle(r);
  const Vector3<Scalar> v = vee<Scalar>(r - r.transpose());
  if (theta < Scalar(1e-6)) {
    return (Scalar(0.5) + theta * theta / Scalar(12)) * v;
  }
  if (theta < Scalar(3.0)) {
    return theta / (Scalar(2) * sin(theta)) * v;
  }
  // Near pi the antisymmetric part vanishes; recover the axis from the
  // symmetric part and take its sign from the antisymmetric one.
  const Scalar c = std::cos(theta);
  Matrix3<Scalar> aat = (r + r.transpose() - Scalar(2) * c * Matrix3<Scalar>::Identity()) / (Scalar(2) * (Scalar(1) - c));
  int k = 0;
  aat.diagonal().maxCoeff(&k);
  Vector3<Scalar> axis = aat.col(k) / sqrt(aat(k, k));
  if (axis.dot(v) < Scalar(0)) axis = -axis;
  return theta * axis;
}

/// Right Jacobian of SO(3): R(w + d) ~= R(w) Exp(Jr(w) d).
template <typename Scalar>
Matrix3<Scalar> so3_right_jacobian(const Vector3<Scalar>& w) {
  const auto k = detail::exp_coefficients(w.norm());
  const Matrix3<Scalar> W = hat(w);
  return Matrix3<Scalar>::Identity() - k.b * W + k.c * W * W;
}

template <typename Scalar>
Pose<Scalar> se3_exp(const Twist<Scalar>& eps) {
  const Vector3<Scalar> w = eps.template head<3>();
  const Vector3<Scalar> v = eps.template tail<3>();
  const auto k = detail::exp_coefficients(w.norm());
  const Matrix3<Scalar> W = hat(w);
  const Matrix3<Scalar> W2 = W * W;
  const Matrix3<Scalar> I = Matrix3<Scalar>::Identity();
  return Pose<Scalar>(I + k.a * W + k.b * W2, (I + k.b * W + k.c * W2) * v);
}

/// Inverse of se3_exp on its principal branch. Throws AngleNearPi when the
/// rotation angle is within 1e-6 of pi.
template <typename Scalar>
Twist<Scalar> se3_log(const Pose<Scalar>& T) {
  using std::sin;
  const Scalar theta = rotation_angle(T.rotation);
  if (theta >= Scalar(std::numbers::pi - 1e-6)) {
    throw Error(ErrorCode::AngleNearPi, "rotation angle " + std::to_string(double(theta)) + " rad");
  }
  const Vector3<Scalar> w = so3_log(T.rotation);
  const Matrix3<Scalar> W = hat(w);
  Scalar coeff;
  if (theta < Scalar(1e-4)) {
    coeff = Scalar(1) / Scalar(12) + theta * theta / Scalar(720);
  } else {
    const Scalar half = sin(theta / Scalar(2));
    const Scalar one_minus_cos = Scalar(2) * half * half;
    coeff = (Scalar(1) - theta * sin(theta) / (Scalar(2) * one_minus_cos)) / (theta * theta);
  }
  const Matrix3<Scalar> v_inv = Matrix3<Scalar>::Identity() - Scalar(0.5) * W + coeff * W * W;
  Twist<Scalar> out;
  out << w, v_inv * T.translation;
  return out;
}

template <typename Scalar>
Vector3<Scalar> transform_point(const Pose<Scalar>& T, const Vector3<Scalar>& x) {
  return T * x;
}

template <typename Scalar>
Pose<Scalar> compose(const Pose<Scalar>& a, const Pose<Scalar>& b) {
  return a * b;
}

template <typename Scalar>
Pose<Scalar> inverse(const Pose<Scalar>& T) {
  return T.inverse();
}

/// Point-independent pieces of d(Exp(eps) x) / d(eps):
///   rotational block = -R [x]_x Jr + Dv,  translational block = V.
template <typename Scalar>
struct ExpJacobianParts {
  Matrix3<Scalar> R, Jr, Dv, V;
};

template <typename Scalar>
ExpJacobianParts<Scalar> exp_jacobian_parts(const Twist<Scalar>& eps) {
  using std::sin;
  const Vector3<Scalar> w = eps.template head<3>();
  const Vector3<Scalar> v = eps.template tail<3>();
  const Scalar theta = w.norm();
  const Scalar t2 = theta * theta;
  const auto k = detail::exp_coefficients(theta);
  const Matrix3<Scalar> W = hat(w);
  const Matrix3<Scalar> W2 = W * W;
  const Matrix3<Scalar> I = Matrix3<Scalar>::Identity();

  // (db/dt) / t and (dc/dt) / t
  Scalar db, dc;
  if (theta < Scalar(0.1)) {
    const Scalar t4 = t2 * t2;
    const Scalar t6 = t4 * t2;
    db = Scalar(-1) / Scalar(12) + t2 / Scalar(180) - t4 / Scalar(6720) + t6 / Scalar(453600);
    dc = Scalar(-1) / Scalar(60) + t2 / Scalar(1260) - t4 / Scalar(60480) + t6 / Scalar(4989600);
  } else {
    const Scalar s = sin(theta);
    const Scalar half = sin(theta / Scalar(2));
    const Scalar omc = Scalar(2) * half * half;
    db = s / (t2 * theta) - Scalar(2) * omc / (t2 * t2);
    dc = omc / (t2 * t2) - Scalar(3) * (theta - s) / (t2 * t2 * theta);
  }

  const Vector3<Scalar> wxv = w.cross(v);
  const Vector3<Scalar> wxwxv = w.cross(wxv);
  ExpJacobianParts<Scalar> parts;
  parts.R = I + k.a * W + k.b * W2;
  parts.Jr = I - k.b * W + k.c * W2;
  parts.Dv = -k.b * hat(v) + db * wxv * w.transpose() +
             k.c * (w.dot(v) * I + w * v.transpose() - Scalar(2) * v * w.transpose()) + dc * wxwxv * w.transpose();
  parts.V = I + k.b * W + k.c * W2;
  return parts;
}

/// d(Exp(eps) x) / d(eps), evaluated at arbitrary eps (not only at zero).
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 6> exp_point_jacobian(const Twist<Scalar>& eps, const Vector3<Scalar>& x) {
  const auto p = exp_jacobian_parts(eps);
  Eigen::Matrix<Scalar, 3, 6> J;
  J.template leftCols<3>() = -p.R * hat(x) * p.Jr + p.Dv;
  J.template rightCols<3>() = p.V;
  return J;
}

/// Right-multiplies T by a perturbation whose rotation angle is exactly
/// rot_err_deg about a uniform random axis and whose translation has norm
/// exactly tran_err_m in a uniform random direction.
template <typename Scalar, typename Rng>
Pose<Scalar> perturb_pose(const Pose<Scalar>& T, Scalar rot_err_deg, Scalar tran_err_m, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  auto random_unit = [&]() {
    Vector3<Scalar> d;
    do {
      d = Vector3<Scalar>(Scalar(normal(rng)), Scalar(normal(rng)), Scalar(normal(rng)));
    } while (d.norm() < Scalar(1e-6));
    return Vector3<Scalar>(d / d.norm());
  };
  const Vector3<Scalar> axis = random_unit();
  const Vector3<Scalar> dir = random_unit();
  const Scalar angle = rot_err_deg * Scalar(std::numbers::pi / 180.0);
  const Pose<Scalar> delta(so3_exp<Scalar>(axis * angle), dir * tran_err_m);
  return T * delta;
}

template <typename Scalar>
Scalar deg(Scalar rad) {
  return rad * Scalar(180.0 / std::numbers::pi);
}

template <typename Scalar>
Scalar rad(Scalar degrees) {
  return degrees * Scalar(std::numbers::pi / 180.0);
}

}  // namespace hsdf
