#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "aipw/common.hpp"
#include "aipw/dataset.hpp"
#include "aipw/model.hpp"
#include "aipw/sieve.hpp"

namespace aipw {

// Conditioning set for outcome-missingness ignorability: (z, x) under MAR,
// (z, x, observed treatment) under SMAR.
enum class Assumption { MAR, SMAR };

inline const char* assumption_name(Assumption a) { return a == Assumption::MAR ? "MAR" : "SMAR"; }

namespace detail {

// Pooled (z, x) regressor matrix with exact-duplicate columns dropped, since
// the instrument block typically already contains the exogenous covariates.
struct PooledInputs {
  MatrixXd values;
  std::vector<std::string> names;
};

inline PooledInputs pooled_zx(const Dataset& data) {
  const int n = data.n();
  std::vector<int> keep_z, keep_x;
  auto duplicate = [&](const VectorXd& col) {
    for (int j : keep_z)
      if (col == data.z().col(j)) return true;
    for (int j : keep_x)
      if (col == data.x().col(j)) return true;
    return false;
  };
  for (int j = 0; j < data.dz(); ++j)
    if (!duplicate(data.z().col(j))) keep_z.push_back(j);
  for (int j = 0; j < data.dx(); ++j)
    if (!duplicate(data.x().col(j))) keep_x.push_back(j);

  PooledInputs out;
  out.values.resize(n, static_cast<Eigen::Index>(keep_z.size() + keep_x.size()));
  int c = 0;
  for (int j : keep_z) {
    out.values.col(c++) = data.z().col(j);
    out.names.push_back("z" + std::to_string(j));
  }
  for (int j : keep_x) {
    out.values.col(c++) = data.x().col(j);
    out.names.push_back("x" + std::to_string(j));
  }
  return out;
}

inline MatrixXd select_rows(const MatrixXd& m, const std::vector<int>& rows) {
  MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

}  // namespace detail

struct MechanismOptions {
  double kappa_lo = 0.01;
  double kappa_hi = 1.0;
  // Strict non-monotone mode requires support in every pattern M1..M4; the
  // general-pattern mode only requires complete cases.
  bool require_all_patterns = true;
};

// Fitted missing mechanism.  p_y1 is the outcome-observation propensity on
// the treatment-observed stratum; under SMAR it conditions on the treatment
// value and is therefore undefined (NaN) at rows with r_d = 0.  Moments only
// ever consume it multiplied by r_d, which the guarded accessor enforces.
struct MissingMechanism {
  Assumption assumption = Assumption::SMAR;
  VectorXd p_d, p_y1, p_y0;
  double kappa_lo = 0.01, kappa_hi = 1.0;
  SievePredictor fit_p_d, fit_p_y1, fit_p_y0;
  bool p_y0_degenerate = false;  // no r_d = 0 rows existed; p_y0 pinned to 0
  WarningLog warnings;

  double p_y1_at(int i) const {
    const double v = p_y1[i];
    if (std::isnan(v))
      throw MissingValueError("p_y1 read at row " + std::to_string(i) +
                              " where r_d = 0 under SMAR");
    return v;
  }
  double p11(int i) const { return p_d[i] * p_y1_at(i); }
  double p10(int i) const { return p_d[i] * (1.0 - p_y1_at(i)); }
  double p01(int i) const { return (1.0 - p_d[i]) * p_y0[i]; }
  double p00(int i) const { return (1.0 - p_d[i]) * (1.0 - p_y0[i]); }
};

namespace detail {

inline VectorXd clamp_propensity(VectorXd v, double lo, double hi, const std::string& name,
                                 WarningLog* log) {
  int clamped = 0;
  for (int i = 0; i < v.size(); ++i) {
    if (v[i] < lo || v[i] > hi) ++clamped;
    v[i] = std::clamp(v[i], lo, hi);
  }
  if (v.size() > 0 && clamped > 0.10 * static_cast<double>(v.size()))
    warn(log, "overlap warning: " + name + " clamped to [" + std::to_string(lo) + ", " +
                  std::to_string(hi) + "] for " + std::to_string(clamped) + " of " +
                  std::to_string(v.size()) + " observations");
  return v;
}

}  // namespace detail

inline MissingMechanism fit_mechanism(const Dataset& data, Assumption assumption,
                                      const SieveSpec& spec,
                                      const MechanismOptions& opts = MechanismOptions{},
                                      WarningLog* warnings = nullptr) {
  const int n = data.n();
  if (opts.require_all_patterns) {
    for (auto m : {MissingPattern::M1, MissingPattern::M2, MissingPattern::M3, MissingPattern::M4})
      if (data.count_pattern(m) == 0)
        throw PatternSupportError(std::string("pattern ") + pattern_name(m) +
                                  " has no observations; strict non-monotone mode requires all "
                                  "four patterns (consider the general pattern mode)");
  }
  if (data.count_pattern(MissingPattern::M1) == 0)
    throw PatternSupportError("no complete cases (pattern M1) to identify the mechanism");

  const auto zx = detail::pooled_zx(data);
  MissingMechanism mech;
  mech.assumption = assumption;
  mech.kappa_lo = opts.kappa_lo;
  mech.kappa_hi = opts.kappa_hi;

  VectorXd rd(n), ry(n);
  std::vector<int> rows1, rows0;
  for (int i = 0; i < n; ++i) {
    rd[i] = data.r_d(i);
    ry[i] = data.r_y(i);
    (data.r_d(i) == 1 ? rows1 : rows0).push_back(i);
  }

  mech.fit_p_d = fit_least_squares(rd, zx.values, spec, &mech.warnings);
  mech.fit_p_d.input_columns = zx.names;
  mech.fit_p_d.fit_rows.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) mech.fit_p_d.fit_rows[static_cast<std::size_t>(i)] = i;
  mech.p_d = detail::clamp_propensity(mech.fit_p_d.predict(zx.values), opts.kappa_lo, opts.kappa_hi,
                                      "p_d", &mech.warnings);

  // Outcome propensity on the treatment-observed stratum.
  {
    VectorXd target(static_cast<Eigen::Index>(rows1.size()));
    for (std::size_t i = 0; i < rows1.size(); ++i)
      target[static_cast<Eigen::Index>(i)] = ry[rows1[i]];
    if (assumption == Assumption::SMAR) {
      MatrixXd in(static_cast<Eigen::Index>(rows1.size()), zx.values.cols() + 1);
      for (std::size_t i = 0; i < rows1.size(); ++i) {
        in.row(static_cast<Eigen::Index>(i)).head(zx.values.cols()) = zx.values.row(rows1[i]);
        in(static_cast<Eigen::Index>(i), zx.values.cols()) = data.d(rows1[i]);
      }
      mech.fit_p_y1 = fit_least_squares(target, in, spec, &mech.warnings);
      mech.fit_p_y1.input_columns = zx.names;
      mech.fit_p_y1.input_columns.push_back("d");
      mech.fit_p_y1.fit_rows = rows1;
      mech.p_y1 = VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
      VectorXd raw = mech.fit_p_y1.predict(in);
      raw = detail::clamp_propensity(raw, opts.kappa_lo, opts.kappa_hi, "p_y1", &mech.warnings);
      for (std::size_t i = 0; i < rows1.size(); ++i)
        mech.p_y1[rows1[i]] = raw[static_cast<Eigen::Index>(i)];
    } else {
      const MatrixXd in = detail::select_rows(zx.values, rows1);
      mech.fit_p_y1 = fit_least_squares(target, in, spec, &mech.warnings);
      mech.fit_p_y1.input_columns = zx.names;
      mech.fit_p_y1.fit_rows = rows1;
      mech.p_y1 = detail::clamp_propensity(mech.fit_p_y1.predict(zx.values), opts.kappa_lo,
                                           opts.kappa_hi, "p_y1", &mech.warnings);
    }
  }

  // Outcome propensity on the treatment-missing stratum, a function of (z, x).
  if (!rows0.empty()) {
    VectorXd target(static_cast<Eigen::Index>(rows0.size()));
    for (std::size_t i = 0; i < rows0.size(); ++i)
      target[static_cast<Eigen::Index>(i)] = ry[rows0[i]];
    const MatrixXd in = detail::select_rows(zx.values, rows0);
    mech.fit_p_y0 = fit_least_squares(target, in, spec, &mech.warnings);
    mech.fit_p_y0.input_columns = zx.names;
    mech.fit_p_y0.fit_rows = rows0;
    const double lo = opts.require_all_patterns ? opts.kappa_lo : 0.0;
    mech.p_y0 = detail::clamp_propensity(mech.fit_p_y0.predict(zx.values), lo, opts.kappa_hi,
                                         "p_y0", &mech.warnings);
  } else {
    mech.p_y0 = VectorXd::Zero(n);
    mech.p_y0_degenerate = true;
  }

  if (warnings != nullptr)
    warnings->insert(warnings->end(), mech.warnings.begin(), mech.warnings.end());
  return mech;
}

// Which subsample identifies E[Y|z,x]; the treatment-missing outcome-observed
// stratum is valid under both assumptions and is the default.  The complete
// case and outcome-observed alternatives are valid under MAR only.
enum class EySource { TreatmentMissing, CompleteCase, OutcomeObserved };

struct ImputationOptions {
  std::vector<double> d_support;  // empty: treat the treatment as continuous
  EySource ey_source = EySource::TreatmentMissing;
};

// First-stage imputation regressions, each fit on its identification
// subsample and carrying that subsample in the predictor metadata.
struct NuisanceFit {
  SievePredictor e_y_given_zx;
  SievePredictor e_y_given_dzx;  // inputs (z, x, d)
  bool discrete = false;
  std::vector<double> d_support;
  std::vector<SievePredictor> d_value_fits;  // indicator fits, one per support value except last
  SievePredictor e_d_given_zx;               // continuous-treatment path
  std::vector<std::string> zx_names;
  WarningLog warnings;

  // Per-value probability table, clamped nonnegative and renormalized per row.
  MatrixXd d_prob_table(const MatrixXd& zx) const {
    const int n = static_cast<int>(zx.rows());
    const int s = static_cast<int>(d_support.size());
    MatrixXd table(n, s);
    for (int v = 0; v + 1 < s; ++v) table.col(v) = d_value_fits[static_cast<std::size_t>(v)].predict(zx);
    table.col(s - 1) = VectorXd::Ones(n) - table.leftCols(s - 1).rowwise().sum();
    for (int i = 0; i < n; ++i) {
      double total = 0.0;
      for (int v = 0; v < s; ++v) {
        table(i, v) = std::max(table(i, v), 0.0);
        total += table(i, v);
      }
      if (total <= 0.0)
        table.row(i).setConstant(1.0 / s);
      else
        table.row(i) /= total;
    }
    return table;
  }

  VectorXd expected_d(const MatrixXd& zx) const {
    if (discrete) {
      const MatrixXd table = d_prob_table(zx);
      VectorXd out = VectorXd::Zero(table.rows());
      for (int v = 0; v < static_cast<int>(d_support.size()); ++v)
        out += table.col(v) * d_support[static_cast<std::size_t>(v)];
      return out;
    }
    return e_d_given_zx.predict(zx);
  }
};

inline NuisanceFit fit_imputations(const Dataset& data, Assumption assumption,
                                   const SieveSpec& spec,
                                   const ImputationOptions& opts = ImputationOptions{},
                                   WarningLog* warnings = nullptr) {
  const auto zx = detail::pooled_zx(data);
  NuisanceFit fit;
  fit.zx_names = zx.names;

  std::vector<int> rows1, rows_m1, rows_ey;
  for (int i = 0; i < data.n(); ++i) {
    if (data.r_d(i) == 1) rows1.push_back(i);
    if (data.pattern(i) == MissingPattern::M1) rows_m1.push_back(i);
    switch (opts.ey_source) {
      case EySource::TreatmentMissing:
        if (data.pattern(i) == MissingPattern::M3) rows_ey.push_back(i);
        break;
      case EySource::CompleteCase:
        if (data.pattern(i) == MissingPattern::M1) rows_ey.push_back(i);
        break;
      case EySource::OutcomeObserved:
        if (data.r_y(i) == 1) rows_ey.push_back(i);
        break;
    }
  }
  if (opts.ey_source != EySource::TreatmentMissing && assumption != Assumption::MAR)
    throw ConfigError("alternative E[Y|z,x] subsamples are only valid under MAR");
  if (rows_ey.empty())
    throw PatternSupportError("no rows to identify E[Y|z,x] (pattern M3 empty)");
  if (rows_m1.empty()) throw PatternSupportError("no complete cases (pattern M1)");
  if (rows1.empty()) throw PatternSupportError("no rows with observed treatment");

  {
    VectorXd target(static_cast<Eigen::Index>(rows_ey.size()));
    for (std::size_t i = 0; i < rows_ey.size(); ++i)
      target[static_cast<Eigen::Index>(i)] = data.y(rows_ey[i]);
    fit.e_y_given_zx =
        fit_least_squares(target, detail::select_rows(zx.values, rows_ey), spec, &fit.warnings);
    fit.e_y_given_zx.input_columns = zx.names;
    fit.e_y_given_zx.fit_rows = rows_ey;
  }
  {
    MatrixXd in(static_cast<Eigen::Index>(rows_m1.size()), zx.values.cols() + 1);
    VectorXd target(static_cast<Eigen::Index>(rows_m1.size()));
    for (std::size_t i = 0; i < rows_m1.size(); ++i) {
      in.row(static_cast<Eigen::Index>(i)).head(zx.values.cols()) = zx.values.row(rows_m1[i]);
      in(static_cast<Eigen::Index>(i), zx.values.cols()) = data.d(rows_m1[i]);
      target[static_cast<Eigen::Index>(i)] = data.y(rows_m1[i]);
    }
    fit.e_y_given_dzx = fit_least_squares(target, in, spec, &fit.warnings);
    fit.e_y_given_dzx.input_columns = zx.names;
    fit.e_y_given_dzx.input_columns.push_back("d");
    fit.e_y_given_dzx.fit_rows = rows_m1;
  }

  const MatrixXd in1 = detail::select_rows(zx.values, rows1);
  if (!opts.d_support.empty()) {
    fit.discrete = true;
    fit.d_support = opts.d_support;
    for (std::size_t v = 0; v + 1 < opts.d_support.size(); ++v) {
      VectorXd indicator(static_cast<Eigen::Index>(rows1.size()));
      for (std::size_t i = 0; i < rows1.size(); ++i)
        indicator[static_cast<Eigen::Index>(i)] =
            data.d(rows1[i]) == opts.d_support[v] ? 1.0 : 0.0;
      SievePredictor p = fit_least_squares(indicator, in1, spec, &fit.warnings);
      p.input_columns = zx.names;
      p.fit_rows = rows1;
      fit.d_value_fits.push_back(std::move(p));
    }
  } else {
    VectorXd target(static_cast<Eigen::Index>(rows1.size()));
    for (std::size_t i = 0; i < rows1.size(); ++i)
      target[static_cast<Eigen::Index>(i)] = data.d(rows1[i]);
    fit.e_d_given_zx = fit_least_squares(target, in1, spec, &fit.warnings);
    fit.e_d_given_zx.input_columns = zx.names;
    fit.e_d_given_zx.fit_rows = rows1;
  }

  if (warnings != nullptr)
    warnings->insert(warnings->end(), fit.warnings.begin(), fit.warnings.end());
  return fit;
}

// E[g(D, x; beta) | z, x]: exact enumeration over the treatment support when
// it is discrete, otherwise the plug-in g(E[D|z,x], x; beta), which is exact
// only for models linear in the treatment.
inline double expected_g(const NuisanceFit& fit, const ModelSpec& model, const VectorXd& beta,
                         const Dataset& data, int i) {
  const auto zx = detail::pooled_zx(data);  // small datasets only; hot paths use MomentContext
  const MatrixXd row = zx.values.row(i);
  if (fit.discrete) {
    const MatrixXd table = fit.d_prob_table(row);
    double g = 0.0;
    for (int v = 0; v < static_cast<int>(fit.d_support.size()); ++v)
      g += table(0, v) * model.evaluate(fit.d_support[static_cast<std::size_t>(v)],
                                        data.x().row(i), beta);
    return g;
  }
  if (!model.linear_in_d)
    throw ConfigError(
        "expected_g: continuous treatment with a model nonlinear in the treatment is "
        "unsupported; provide a discrete support");
  return model.evaluate(fit.expected_d(row)[0], data.x().row(i), beta);
}

}  // namespace aipw
