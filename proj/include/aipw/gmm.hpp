#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "aipw/common.hpp"
#include "aipw/moments.hpp"

namespace aipw {

enum class WeightMode { Identity, ZzInverse, OptimalTwoStep };

struct GmmConfig {
  MomentKind kind = MomentKind::AIPW;
  WeightMode weight_mode = WeightMode::OptimalTwoStep;
  int max_iterations = 100;
  double tolerance = 1e-10;
  std::optional<VectorXd> beta_init;  // default: OLS on the complete cases
};

struct GmmResult {
  VectorXd beta_hat;
  MatrixXd weight;
  MatrixXd jacobian_G;
  MatrixXd moment_variance_V;
  MatrixXd covariance;
  VectorXd std_errors;
  int n_used = 0;
  bool converged = false;
};

inline VectorXd mean_moment(const MomentContext& ctx, const VectorXd& beta, MomentKind kind) {
  const int n = ctx.data->n();
  const VectorXd zero = VectorXd::Zero(ctx.data->dz());
  VectorXd sum = pairwise_sum<VectorXd>(
      0, static_cast<std::size_t>(n),
      [&](std::size_t i) { return moment(ctx, static_cast<int>(i), beta, kind); }, zero);
  return sum / n;
}

// Jacobian of the mean moment in beta.  Differentiation passes through the
// structural function and its conditional expectation while the propensities
// and outcome imputations stay fixed.
inline MatrixXd estimate_G(const MomentContext& ctx, const VectorXd& beta, MomentKind kind) {
  const Dataset& d = *ctx.data;
  const int n = d.n();
  const MatrixXd zero = MatrixXd::Zero(d.dz(), ctx.model->beta_dim);

  auto grad_expected_g = [&](int i) -> VectorXd {
    if (ctx.d_probs.cols() > 0) {
      VectorXd g = VectorXd::Zero(ctx.model->beta_dim);
      for (int v = 0; v < ctx.d_probs.cols(); ++v)
        g += ctx.d_probs(i, v) * ctx.model->gradient(ctx.d_support[static_cast<std::size_t>(v)],
                                                     d.x().row(i), beta);
      return g;
    }
    return ctx.model->gradient(ctx.e_d_zx[i], d.x().row(i), beta);
  };

  MatrixXd sum = pairwise_sum<MatrixXd>(
      0, static_cast<std::size_t>(n),
      [&](std::size_t idx) -> MatrixXd {
        const int i = static_cast<int>(idx);
        const VectorXd z = d.z().row(i).transpose();
        if (kind == MomentKind::CC || kind == MomentKind::IPW) {
          if (d.r_d(i) == 1 && d.r_y(i) == 1) {
            const double w = kind == MomentKind::CC ? 1.0 : 1.0 / ctx.p11(i);
            return -w * z * ctx.model->gradient(d.d(i), d.x().row(i), beta).transpose();
          }
          return MatrixXd::Zero(d.dz(), ctx.model->beta_dim);
        }
        const auto w = detail::phi_weights(ctx, i);
        const VectorXd geg = grad_expected_g(i);
        MatrixXd gi = -(w.w3) * z * geg.transpose();
        if (w.w11 != 0.0)
          gi -= w.w11 * z * ctx.model->gradient(d.d(i), d.x().row(i), beta).transpose();
        if (w.w2 != 0.0)
          gi -= w.w2 * z *
                (ctx.model->gradient(d.d(i), d.x().row(i), beta) - geg).transpose();
        return gi;
      },
      zero);
  return sum / n;
}

// Empirical covariance of the per-observation influence contributions.  The
// contribution is the moment itself under MAR; under SMAR the AIPW moments
// additionally carry the first-stage correction term.
inline MatrixXd estimate_V(const MomentContext& ctx, const VectorXd& beta, MomentKind kind) {
  const int n = ctx.data->n();
  const int dz = ctx.data->dz();
  const bool corrected = ctx.assumption == Assumption::SMAR &&
                         (kind == MomentKind::AIPW || kind == MomentKind::AIPW_GENERAL);
  auto psi = [&](int i) -> VectorXd {
    VectorXd m = moment(ctx, i, beta, kind);
    if (corrected) m += smar_correction(ctx, i, beta);
    return m;
  };
  const VectorXd mean = pairwise_sum<VectorXd>(
                            0, static_cast<std::size_t>(n),
                            [&](std::size_t i) { return psi(static_cast<int>(i)); },
                            VectorXd::Zero(dz)) /
                        n;
  MatrixXd second = pairwise_sum<MatrixXd>(
                        0, static_cast<std::size_t>(n),
                        [&](std::size_t i) -> MatrixXd {
                          const VectorXd p = psi(static_cast<int>(i));
                          return p * p.transpose();
                        },
                        MatrixXd::Zero(dz, dz)) /
                    n;
  MatrixXd v = second - mean * mean.transpose();
  return 0.5 * (v + v.transpose());
}

namespace detail {

inline MatrixXd ridge_inverse(MatrixXd m, double ridge_scale) {
  const int k = static_cast<int>(m.rows());
  double ridge = ridge_scale * m.trace() / k;
  if (!(ridge > 0.0)) ridge = ridge_scale;
  m.diagonal().array() += ridge;
  const MatrixXd inv = m.ldlt().solve(MatrixXd::Identity(k, k));
  return 0.5 * (inv + inv.transpose());
}

inline MatrixXd zz_weight(const Dataset& data) {
  const MatrixXd zz = data.z().transpose() * data.z() / data.n();
  Eigen::ColPivHouseholderQR<MatrixXd> qr(zz);
  qr.setThreshold(1e-12);
  if (qr.rank() < zz.rows())
    throw IdentificationError("instrument matrix is rank deficient (duplicated or collinear "
                              "instrument columns)");
  const MatrixXd inv = qr.inverse();
  return 0.5 * (inv + inv.transpose());
}

inline VectorXd ols_complete_cases(const MomentContext& ctx) {
  const Dataset& d = *ctx.data;
  const int p = ctx.model->beta_dim;
  if (p != 1 + d.dx()) return VectorXd::Zero(p);
  std::vector<int> rows;
  for (int i = 0; i < d.n(); ++i)
    if (d.pattern(i) == MissingPattern::M1) rows.push_back(i);
  if (static_cast<int>(rows.size()) < p) return VectorXd::Zero(p);
  MatrixXd reg(static_cast<Eigen::Index>(rows.size()), p);
  VectorXd y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    reg(static_cast<Eigen::Index>(i), 0) = d.d(rows[i]);
    reg.row(static_cast<Eigen::Index>(i)).tail(d.dx()) = d.x().row(rows[i]);
    y[static_cast<Eigen::Index>(i)] = d.y(rows[i]);
  }
  return (reg.transpose() * reg)
      .ldlt()
      .solve(reg.transpose() * y);
}

}  // namespace detail

// Optimal second-step weight: the ridge-guarded inverse of the estimated
// moment variance.
inline MatrixXd two_step_weight(const MomentContext& ctx, const VectorXd& beta_first,
                                MomentKind kind) {
  return detail::ridge_inverse(estimate_V(ctx, beta_first, kind), 1e-10);
}

inline GmmResult solve(const MomentContext& ctx, const GmmConfig& config) {
  const Dataset& data = *ctx.data;
  const int p = ctx.model->beta_dim;
  if (config.tolerance <= 0.0 || config.max_iterations < 1)
    throw ConfigError("GmmConfig: tolerance must be positive and max_iterations >= 1");
  if (config.kind == MomentKind::CC || config.kind == MomentKind::IPW) {
    if (data.count_pattern(MissingPattern::M1) == 0)
      throw PatternSupportError("no complete cases to estimate from");
  }

  auto solve_linear = [&](const MatrixXd& w) -> VectorXd {
    const VectorXd c = mean_moment(ctx, VectorXd::Zero(p), config.kind);
    const MatrixXd g = estimate_G(ctx, VectorXd::Zero(p), config.kind);
    const MatrixXd gwg = g.transpose() * w * g;
    Eigen::ColPivHouseholderQR<MatrixXd> qr(gwg);
    qr.setThreshold(1e-12);
    if (qr.rank() < p)
      throw IdentificationError("G'WG is singular; the model is not identified by these "
                                "instruments");
    return qr.solve(-g.transpose() * w * c);
  };

  auto solve_gauss_newton = [&](const MatrixXd& w, VectorXd beta, bool* converged) -> VectorXd {
    *converged = false;
    VectorXd m = mean_moment(ctx, beta, config.kind);
    double obj = m.dot(w * m);
    for (int it = 0; it < config.max_iterations; ++it) {
      const MatrixXd g = estimate_G(ctx, beta, config.kind);
      const VectorXd grad = g.transpose() * w * m;
      if (grad.lpNorm<Eigen::Infinity>() <= config.tolerance) {
        *converged = true;
        return beta;
      }
      const MatrixXd gwg = g.transpose() * w * g;
      Eigen::ColPivHouseholderQR<MatrixXd> qr(gwg);
      qr.setThreshold(1e-12);
      if (qr.rank() < p)
        throw IdentificationError("G'WG is singular during the Gauss-Newton solve");
      VectorXd step = qr.solve(grad);
      double scale = 1.0;
      bool improved = false;
      for (int h = 0; h < 30; ++h) {
        const VectorXd cand = beta - scale * step;
        const VectorXd mc = mean_moment(ctx, cand, config.kind);
        const double oc = mc.dot(w * mc);
        if (oc < obj) {
          beta = cand;
          m = mc;
          obj = oc;
          improved = true;
          break;
        }
        scale *= 0.5;
      }
      if (!improved) return beta;
    }
    return beta;
  };

  const bool closed_form = ctx.model->linear_in_beta;  // moment affine in beta

  MatrixXd w_first;
  switch (config.weight_mode) {
    case WeightMode::Identity: w_first = MatrixXd::Identity(data.dz(), data.dz()); break;
    default: w_first = detail::zz_weight(data); break;
  }

  GmmResult result;
  bool converged = true;
  VectorXd beta;
  if (closed_form) {
    beta = solve_linear(w_first);
  } else {
    VectorXd init = config.beta_init ? *config.beta_init : detail::ols_complete_cases(ctx);
    beta = solve_gauss_newton(w_first, init, &converged);
  }

  MatrixXd w = w_first;
  if (config.weight_mode == WeightMode::OptimalTwoStep) {
    w = two_step_weight(ctx, beta, config.kind);
    if (closed_form) {
      beta = solve_linear(w);
    } else {
      beta = solve_gauss_newton(w, beta, &converged);
    }
  }

  result.beta_hat = beta;
  result.weight = w;
  result.converged = converged;
  result.jacobian_G = estimate_G(ctx, beta, config.kind);
  result.moment_variance_V = estimate_V(ctx, beta, config.kind);

  const MatrixXd gwg = result.jacobian_G.transpose() * w * result.jacobian_G;
  Eigen::ColPivHouseholderQR<MatrixXd> qr(gwg);
  qr.setThreshold(1e-12);
  if (qr.rank() < p)
    throw IdentificationError("G'WG is singular; standard errors are not identified");
  const MatrixXd bread = qr.inverse();
  MatrixXd cov = bread * result.jacobian_G.transpose() * w * result.moment_variance_V * w *
                 result.jacobian_G * bread / data.n();
  result.covariance = 0.5 * (cov + cov.transpose());
  result.std_errors.resize(p);
  for (int k = 0; k < p; ++k)
    result.std_errors[k] = std::sqrt(std::max(result.covariance(k, k), 0.0));
  result.n_used = (config.kind == MomentKind::CC || config.kind == MomentKind::IPW)
                      ? data.count_pattern(MissingPattern::M1)
                      : data.n();
  return result;
}

}  // namespace aipw
