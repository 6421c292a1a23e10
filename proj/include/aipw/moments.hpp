#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "aipw/common.hpp"
#include "aipw/dataset.hpp"
#include "aipw/model.hpp"
#include "aipw/nuisance.hpp"

namespace aipw {

enum class MomentKind { CC, IPW, AIPW, AIPW_GENERAL };

inline const char* moment_kind_name(MomentKind k) {
  switch (k) {
    case MomentKind::CC: return "cc";
    case MomentKind::IPW: return "ipw";
    case MomentKind::AIPW: return "aipw";
    default: return "aipw-general";
  }
}

// Everything the per-observation moment evaluations need, with the nuisance
// quantities spread into plain arrays.  Indicator weights short-circuit
// before any missing field or undefined propensity is touched, so entries at
// rows where a quantity is not identified stay NaN and are never read.
struct MomentContext {
  const Dataset* data = nullptr;
  const ModelSpec* model = nullptr;
  Assumption assumption = Assumption::SMAR;

  VectorXd p_d, p_y1, p_y0;
  VectorXd e_y_zx;       // E[Y | z, x]
  VectorXd e_y_dzx;      // E[Y | d, z, x] at the observed treatment; NaN when r_d = 0
  VectorXd e_y_dzx_avg;  // E[Y | d, z, x] averaged over the fitted treatment distribution
  VectorXd e_d_zx;       // E[D | z, x], consistent with d_probs when discrete
  MatrixXd d_probs;      // n x support-size when the treatment is discrete, else 0 columns
  std::vector<double> d_support;

  double p_y1_at(int i) const {
    const double v = p_y1[i];
    if (std::isnan(v))
      throw MissingValueError("p_y1 read at row " + std::to_string(i) + " where r_d = 0");
    return v;
  }
  double p11(int i) const { return p_d[i] * p_y1_at(i); }
  double p01(int i) const { return (1.0 - p_d[i]) * p_y0[i]; }

  double e_y_dzx_at(int i) const {
    const double v = e_y_dzx[i];
    if (std::isnan(v))
      throw MissingValueError("E[Y|d,z,x] read at row " + std::to_string(i) + " where r_d = 0");
    return v;
  }

  double expected_g_at(int i, const VectorXd& beta) const {
    if (d_probs.cols() > 0) {
      double g = 0.0;
      for (int v = 0; v < d_probs.cols(); ++v)
        g += d_probs(i, v) *
             model->evaluate(d_support[static_cast<std::size_t>(v)], data->x().row(i), beta);
      return g;
    }
    if (!model->linear_in_d)
      throw ConfigError(
          "expected_g: continuous treatment with a model nonlinear in the treatment is "
          "unsupported; provide a discrete support");
    return model->evaluate(e_d_zx[i], data->x().row(i), beta);
  }
};

inline MomentContext make_context(const Dataset& data, const MissingMechanism& mechanism,
                                  const NuisanceFit& nuisance, const ModelSpec& model) {
  const int n = data.n();
  MomentContext ctx;
  ctx.data = &data;
  ctx.model = &model;
  ctx.assumption = mechanism.assumption;
  ctx.p_d = mechanism.p_d;
  ctx.p_y1 = mechanism.p_y1;
  ctx.p_y0 = mechanism.p_y0;

  const auto zx = detail::pooled_zx(data);
  ctx.e_y_zx = nuisance.e_y_given_zx.predict(zx.values);
  ctx.e_d_zx = nuisance.expected_d(zx.values);
  if (nuisance.discrete) {
    ctx.d_probs = nuisance.d_prob_table(zx.values);
    ctx.d_support = nuisance.d_support;
  }

  ctx.e_y_dzx = VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
  MatrixXd in(n, zx.values.cols() + 1);
  in.leftCols(zx.values.cols()) = zx.values;
  for (int i = 0; i < n; ++i)
    if (data.r_d(i) == 1) {
      in(i, zx.values.cols()) = data.d(i);
      MatrixXd one = in.row(i);
      ctx.e_y_dzx[i] = nuisance.e_y_given_dzx.predict(one)[0];
    }

  if (nuisance.discrete) {
    ctx.e_y_dzx_avg = VectorXd::Zero(n);
    for (int v = 0; v < static_cast<int>(nuisance.d_support.size()); ++v) {
      in.col(zx.values.cols()).setConstant(nuisance.d_support[static_cast<std::size_t>(v)]);
      ctx.e_y_dzx_avg += ctx.d_probs.col(v).cwiseProduct(nuisance.e_y_given_dzx.predict(in));
    }
  } else {
    in.col(zx.values.cols()) = ctx.e_d_zx;
    ctx.e_y_dzx_avg = nuisance.e_y_given_dzx.predict(in);
  }
  return ctx;
}

namespace detail {

// Weights of the three augmentation components; zero-indicator entries are
// returned as exact zeros without evaluating the corresponding propensity.
struct PhiWeights {
  double w1, w2, w3, w11;
};

inline PhiWeights phi_weights(const MomentContext& c, int i) {
  const int rd = c.data->r_d(i), ry = c.data->r_y(i);
  PhiWeights w{0.0, 0.0, 0.0, 0.0};
  if (rd == 1 && ry == 1) w.w11 = 1.0 / c.p11(i);
  if (ry == 1) w.w1 = (rd == 1 ? 1.0 / c.p_y1_at(i) : 1.0 / c.p_y0[i]) - w.w11;
  if (rd == 1) w.w2 = 1.0 / c.p_d[i] - w.w11;
  w.w3 = 1.0 - w.w11;
  return w;
}

}  // namespace detail

// Augmentation term: the mean-zero correction added to the inverse-weighted
// complete-case moment so that partially observed rows contribute.
inline VectorXd augmentation_phi(const MomentContext& c, int i, const VectorXd& beta) {
  const Dataset& d = *c.data;
  const auto w = detail::phi_weights(c, i);
  const VectorXd z = d.z().row(i).transpose();
  const double ey = c.e_y_zx[i];
  const double eg = c.expected_g_at(i, beta);

  VectorXd out = VectorXd::Zero(z.size());
  if (w.w1 != 0.0) out += w.w1 * (d.y(i) - ey) * z;
  if (w.w2 != 0.0) {
    const double g = c.model->evaluate(d.d(i), d.x().row(i), beta);
    out += w.w2 * ((c.e_y_dzx_at(i) - g) - (ey - eg)) * z;
  }
  out += w.w3 * (ey - eg) * z;
  return out;
}

// Algebraically equivalent arrangement of the first component, kept so the
// two displayed forms can be asserted equal on random inputs.
inline VectorXd augmentation_phi_expanded(const MomentContext& c, int i, const VectorXd& beta) {
  const Dataset& d = *c.data;
  const auto w = detail::phi_weights(c, i);
  const VectorXd z = d.z().row(i).transpose();
  const double ey = c.e_y_zx[i];
  const double eg = c.expected_g_at(i, beta);

  VectorXd out = VectorXd::Zero(z.size());
  if (w.w1 != 0.0) out += w.w1 * ((d.y(i) - eg) - (ey - eg)) * z;
  if (w.w2 != 0.0) {
    const double g = c.model->evaluate(d.d(i), d.x().row(i), beta);
    out += w.w2 * ((c.e_y_dzx_at(i) - g) - (ey - eg)) * z;
  }
  out += w.w3 * (ey - eg) * z;
  return out;
}

inline VectorXd cc_moment(const MomentContext& c, int i, const VectorXd& beta) {
  const Dataset& d = *c.data;
  if (d.r_d(i) == 1 && d.r_y(i) == 1) return full_moment(d, i, *c.model, beta);
  return VectorXd::Zero(d.dz());
}

inline VectorXd ipw_moment(const MomentContext& c, int i, const VectorXd& beta) {
  const Dataset& d = *c.data;
  if (d.r_d(i) == 1 && d.r_y(i) == 1)
    return full_moment(d, i, *c.model, beta) / c.p11(i);
  return VectorXd::Zero(d.dz());
}

inline VectorXd aipw_moment(const MomentContext& c, int i, const VectorXd& beta) {
  return ipw_moment(c, i, beta) + augmentation_phi(c, i, beta);
}

// General-pattern variant: the first augmentation component is scaled by
// p_01, so datasets with no treatment-missing/outcome-observed support stay
// well defined (only p_11 needs to be bounded away from zero).  At r_d = 0
// the ratio p_01 / p_y0 reduces to 1 - p_d, which is used directly so that
// p_y0 = 0 never divides.
inline VectorXd general_aipw_moment(const MomentContext& c, int i, const VectorXd& beta) {
  const Dataset& d = *c.data;
  const int rd = d.r_d(i), ry = d.r_y(i);
  const VectorXd z = d.z().row(i).transpose();
  const double ey = c.e_y_zx[i];
  const double eg = c.expected_g_at(i, beta);

  VectorXd out = VectorXd::Zero(z.size());
  double w11 = 0.0;
  if (rd == 1 && ry == 1) {
    w11 = 1.0 / c.p11(i);
    out += w11 * (d.y(i) - c.model->evaluate(d.d(i), d.x().row(i), beta)) * z;
  }
  if (ry == 1) {
    const double scaled_w1 =
        rd == 1 ? c.p01(i) * (1.0 / c.p_y1_at(i) - w11) : (1.0 - c.p_d[i]);
    out += scaled_w1 * (d.y(i) - ey) * z;
  }
  if (rd == 1) {
    const double g = c.model->evaluate(d.d(i), d.x().row(i), beta);
    out += (1.0 / c.p_d[i] - w11) * ((c.e_y_dzx_at(i) - g) - (ey - eg)) * z;
  }
  out += (1.0 - w11) * (ey - eg) * z;
  return out;
}

// Two-step imputation residual: the outcome is imputed first, then the
// unobserved functions of the treatment.  z times this residual reproduces
// the AIPW moment exactly.
inline double two_step_residual(const MomentContext& c, int i, const VectorXd& beta) {
  const Dataset& d = *c.data;
  const int rd = d.r_d(i), ry = d.r_y(i);
  const double ey = c.e_y_zx[i];
  const double eg = c.expected_g_at(i, beta);

  const double wd = rd == 1 ? 1.0 / c.p_d[i] : 0.0;
  const double wy = ry == 1 ? (rd == 1 ? 1.0 / c.p_y1_at(i) : 1.0 / c.p_y0[i]) : 0.0;

  double eps = 0.0;
  if (ry == 1) {
    double g_imputed = (1.0 - wd) * eg;
    if (rd == 1) g_imputed += wd * c.model->evaluate(d.d(i), d.x().row(i), beta);
    eps += wy * (d.y(i) - g_imputed);
  }
  double second = (1.0 - wd) * (ey - eg);
  if (rd == 1)
    second += wd * (c.e_y_dzx_at(i) - c.model->evaluate(d.d(i), d.x().row(i), beta));
  eps += (1.0 - wy) * second;
  return eps;
}

// First-stage correction entering the moment variance under SMAR.  At rows
// with unobserved treatment, E[Y|d,z,x] is replaced by its average over the
// fitted treatment distribution, the only evaluation consistent with the
// information set there.
inline VectorXd smar_correction(const MomentContext& c, int i, const VectorXd& beta) {
  (void)beta;
  if (c.assumption != Assumption::SMAR)
    throw ConfigError("smar_correction requires the SMAR assumption");
  const Dataset& d = *c.data;
  const int rd = d.r_d(i), ry = d.r_y(i);
  const double w11 = (rd == 1 && ry == 1) ? 1.0 / c.p11(i) : 0.0;
  const double eyd = rd == 1 ? c.e_y_dzx_at(i) : c.e_y_dzx_avg[i];
  return (1.0 - c.p_d[i]) * (w11 - 1.0) * (eyd - c.e_y_zx[i]) * d.z().row(i).transpose();
}

inline VectorXd moment(const MomentContext& c, int i, const VectorXd& beta, MomentKind kind) {
  switch (kind) {
    case MomentKind::CC: return cc_moment(c, i, beta);
    case MomentKind::IPW: return ipw_moment(c, i, beta);
    case MomentKind::AIPW: return aipw_moment(c, i, beta);
    default: return general_aipw_moment(c, i, beta);
  }
}

}  // namespace aipw
