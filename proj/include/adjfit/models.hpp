#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include <Eigen/Dense>

#include "adjfit/errors.hpp"

namespace adjfit {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Point of the search space: initial time, initial state and parameters.
/// The flat layout is [t0, x0..., theta...].
struct ParamTriple {
  double t0 = 0.0;
  Vector x0;
  Vector theta;

  [[nodiscard]] Eigen::Index size() const { return 1 + x0.size() + theta.size(); }

  [[nodiscard]] Vector flatten() const {
    Vector flat(size());
    flat[0] = t0;
    flat.segment(1, x0.size()) = x0;
    flat.tail(theta.size()) = theta;
    return flat;
  }

  static ParamTriple unflatten(const Vector& flat, Eigen::Index dim_state,
                               Eigen::Index dim_param) {
    if (flat.size() != 1 + dim_state + dim_param) {
      throw InputError("flat triple has length " + std::to_string(flat.size()) +
                       ", expected " + std::to_string(1 + dim_state + dim_param));
    }
    return {flat[0], flat.segment(1, dim_state), flat.tail(dim_param)};
  }

  friend bool operator==(const ParamTriple& a, const ParamTriple& b) {
    return a.t0 == b.t0 && a.x0 == b.x0 && a.theta == b.theta;
  }
};

/// Parameterized vector field f(t, x, theta) together with its full Jacobian.
///
/// The Jacobian has d rows and 1+d+k columns laid out as [df/dt | df/dx | df/dtheta].
/// Instances are immutable once built and may be shared between threads.
class VectorField {
 public:
  using FieldFn = std::function<Vector(double, const Vector&, const Vector&)>;
  using JacobianFn = std::function<Matrix(double, const Vector&, const Vector&)>;

  VectorField(std::string name, Eigen::Index dim_state, Eigen::Index dim_param,
              FieldFn field, JacobianFn jacobian,
              std::optional<ParamTriple> reference = std::nullopt)
      : name_(std::move(name)),
        dim_state_(dim_state),
        dim_param_(dim_param),
        field_(std::move(field)),
        jacobian_(std::move(jacobian)),
        reference_(std::move(reference)) {
    if (dim_state_ < 1 || dim_param_ < 1) {
      throw InputError("vector field dimensions must be positive");
    }
  }

  [[nodiscard]] const std::string& name() const { return name_; }
  [[nodiscard]] Eigen::Index dim_state() const { return dim_state_; }
  [[nodiscard]] Eigen::Index dim_param() const { return dim_param_; }
  /// Length of the flat triple, 1 + d + k.
  [[nodiscard]] Eigen::Index dim_triple() const { return 1 + dim_state_ + dim_param_; }

  /// Ground-truth triple used to synthesize data for the built-in models.
  [[nodiscard]] const std::optional<ParamTriple>& reference() const { return reference_; }

  [[nodiscard]] Vector eval(double t, const Vector& x, const Vector& theta) const {
    check_dims(x, theta);
    return field_(t, x, theta);
  }

  [[nodiscard]] Matrix jacobian(double t, const Vector& x, const Vector& theta) const {
    check_dims(x, theta);
    return jacobian_(t, x, theta);
  }

  void check_triple(const ParamTriple& triple) const { check_dims(triple.x0, triple.theta); }

 private:
  void check_dims(const Vector& x, const Vector& theta) const {
    if (x.size() != dim_state_ || theta.size() != dim_param_) {
      throw InputError("model '" + name_ + "' expects state of length " +
                       std::to_string(dim_state_) + " and parameters of length " +
                       std::to_string(dim_param_) + ", got " + std::to_string(x.size()) +
                       " and " + std::to_string(theta.size()));
    }
  }

  std::string name_;
  Eigen::Index dim_state_;
  Eigen::Index dim_param_;
  FieldFn field_;
  JacobianFn jacobian_;
  std::optional<ParamTriple> reference_;
};

inline Vector eval_field(const VectorField& model, double t, const Vector& x,
                         const Vector& theta) {
  return model.eval(t, x, theta);
}

inline Matrix eval_jacobian(const VectorField& model, double t, const Vector& x,
                            const Vector& theta) {
  return model.jacobian(t, x, theta);
}

namespace models {

/// f(t, p, theta) = p * theta.
inline VectorField exponential() {
  auto field = [](double, const Vector& x, const Vector& theta) -> Vector {
    return x * theta[0];
  };
  auto jac = [](double, const Vector& x, const Vector& theta) -> Matrix {
    Matrix j(1, 3);
    j << 0.0, theta[0], x[0];
    return j;
  };
  ParamTriple ref{0.0, Vector::Constant(1, 1.0), Vector::Constant(1, 1.0)};
  return {"exponential", 1, 1, field, jac, ref};
}

/// SI model with a fixed population of 10; state (S, I), parameters (beta, gamma).
inline VectorField si() {
  auto field = [](double, const Vector& x, const Vector& theta) -> Vector {
    const double s = x[0], i = x[1], beta = theta[0], gamma = theta[1];
    const double infection = beta * i * s / 10.0;
    Vector out(2);
    out << -infection, infection - gamma * i;
    return out;
  };
  auto jac = [](double, const Vector& x, const Vector& theta) -> Matrix {
    const double s = x[0], i = x[1], beta = theta[0], gamma = theta[1];
    Matrix j = Matrix::Zero(2, 5);
    // columns: t | S I | beta gamma
    j(0, 1) = -beta * i / 10.0;
    j(0, 2) = -beta * s / 10.0;
    j(0, 3) = -i * s / 10.0;
    j(1, 1) = beta * i / 10.0;
    j(1, 2) = beta * s / 10.0 - gamma;
    j(1, 3) = i * s / 10.0;
    j(1, 4) = -i;
    return j;
  };
  Vector x0(2), theta(2);
  x0 << 9.0, 0.5;
  theta << 10.0, 3.0;
  return {"si", 2, 2, field, jac, ParamTriple{0.0, x0, theta}};
}

/// Lotka-Volterra: u' = (a - b v) u, v' = (d u - c) v with theta = (a, b, c, d).
inline VectorField lotka_volterra() {
  auto field = [](double, const Vector& x, const Vector& theta) -> Vector {
    const double u = x[0], v = x[1];
    const double a = theta[0], b = theta[1], c = theta[2], d = theta[3];
    Vector out(2);
    out << (a - b * v) * u, (d * u - c) * v;
    return out;
  };
  auto jac = [](double, const Vector& x, const Vector& theta) -> Matrix {
    const double u = x[0], v = x[1];
    const double a = theta[0], b = theta[1], c = theta[2], d = theta[3];
    Matrix j = Matrix::Zero(2, 7);
    // columns: t | u v | a b c d
    j(0, 1) = a - b * v;
    j(0, 2) = -b * u;
    j(0, 3) = u;
    j(0, 4) = -v * u;
    j(1, 1) = d * v;
    j(1, 2) = d * u - c;
    j(1, 5) = -v;
    j(1, 6) = u * v;
    return j;
  };
  Vector x0(2), theta(4);
  x0 << 0.5, 0.5;
  theta << 10.0, 10.0, 10.0, 10.0;
  return {"lotka_volterra", 2, 4, field, jac, ParamTriple{0.0, x0, theta}};
}

}  // namespace models

/// Looks up one of the built-in models: "si", "lotka_volterra" or "exponential".
inline VectorField builtin_model(std::string_view name) {
  if (name == "si") return models::si();
  if (name == "lotka_volterra") return models::lotka_volterra();
  if (name == "exponential") return models::exponential();
  throw InputError("unknown model '" + std::string(name) +
                   "' (expected si, lotka_volterra or exponential)");
}

}  // namespace adjfit
