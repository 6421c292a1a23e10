#pragma once

#include <functional>
#include <utility>

#include "aipw/common.hpp"
#include "aipw/dataset.hpp"

namespace aipw {

// Parametric outcome model g(d, x; beta).  The built-in linear form is
// g = beta_0 * d + x . beta_1..; arbitrary parametric forms are accepted via
// an evaluate/gradient pair.  Without a user gradient, central differences
// with step 1e-6 * max(1, |beta_k|) are substituted.
struct ModelSpec {
  using EvalFn = std::function<double(double d, const RowVectorXd& x, const VectorXd& beta)>;
  using GradFn = std::function<VectorXd(double d, const RowVectorXd& x, const VectorXd& beta)>;

  int beta_dim = 0;
  bool linear_in_d = false;
  bool linear_in_beta = false;  // enables the closed-form GMM solve
  EvalFn evaluate;
  GradFn gradient;

  static ModelSpec linear(int d_x) {
    ModelSpec m;
    m.beta_dim = 1 + d_x;
    m.linear_in_d = true;
    m.linear_in_beta = true;
    m.evaluate = [](double d, const RowVectorXd& x, const VectorXd& beta) {
      double g = beta[0] * d;
      for (int k = 0; k < x.size(); ++k) g += x[k] * beta[k + 1];
      return g;
    };
    m.gradient = [](double d, const RowVectorXd& x, const VectorXd&) {
      VectorXd grad(1 + x.size());
      grad[0] = d;
      grad.tail(x.size()) = x.transpose();
      return grad;
    };
    return m;
  }

  static ModelSpec custom(int beta_dim, EvalFn evaluate, GradFn gradient = nullptr,
                          bool linear_in_d = false) {
    ModelSpec m;
    m.beta_dim = beta_dim;
    m.linear_in_d = linear_in_d;
    m.evaluate = std::move(evaluate);
    if (gradient) {
      m.gradient = std::move(gradient);
    } else {
      EvalFn eval_copy = m.evaluate;
      m.gradient = [eval_copy, beta_dim](double d, const RowVectorXd& x, const VectorXd& beta) {
        VectorXd grad(beta_dim);
        VectorXd b = beta;
        for (int k = 0; k < beta_dim; ++k) {
          const double h = 1e-6 * std::max(1.0, std::abs(beta[k]));
          b[k] = beta[k] + h;
          const double up = eval_copy(d, x, b);
          b[k] = beta[k] - h;
          const double dn = eval_copy(d, x, b);
          b[k] = beta[k];
          grad[k] = (up - dn) / (2.0 * h);
        }
        return grad;
      };
    }
    return m;
  }
};

// Full-data moment contribution z * (y - g(d, x; beta)); defined only on M1.
inline VectorXd full_moment(const Dataset& data, int i, const ModelSpec& model,
                            const VectorXd& beta) {
  if (data.pattern(i) != MissingPattern::M1)
    throw MissingValueError("full_moment requires a fully observed row, got pattern " +
                            std::string(pattern_name(data.pattern(i))));
  const double resid = data.y(i) - model.evaluate(data.d(i), data.x().row(i), beta);
  return data.z().row(i).transpose() * resid;
}

}  // namespace aipw
