#pragma once

#include <array>
#include <string>
#include <vector>

#include "aipw/common.hpp"
#include "aipw/dataset.hpp"
#include "aipw/nuisance.hpp"

namespace aipw {

struct PatternTable {
  int n = 0;
  std::array<int, 4> counts{0, 0, 0, 0};      // M1, M2, M3, M4
  std::array<double, 4> shares{0, 0, 0, 0};
  bool monotone_flag = false;
};

inline PatternTable tabulate_patterns(const Dataset& data) {
  PatternTable t;
  t.n = data.n();
  for (int i = 0; i < data.n(); ++i)
    ++t.counts[static_cast<std::size_t>(static_cast<int>(data.pattern(i)))];
  for (std::size_t m = 0; m < 4; ++m)
    t.shares[m] = t.n > 0 ? static_cast<double>(t.counts[m]) / t.n : 0.0;
  t.monotone_flag = is_monotone(data);
  return t;
}

// Ordinary least squares with rank-revealing collinearity handling: exactly
// collinear regressors are dropped (reported by name) rather than failing the
// whole regression.
struct OlsFit {
  std::vector<std::string> names;
  VectorXd coefficients;
  VectorXd std_errors;
  VectorXd t_stats;
  std::vector<std::string> dropped;
  int n_used = 0;
};

inline OlsFit ols_regression(const VectorXd& y, const MatrixXd& regressors,
                             std::vector<std::string> names, bool robust_se = true) {
  const int n = static_cast<int>(regressors.rows());
  Eigen::ColPivHouseholderQR<MatrixXd> probe(regressors);
  probe.setThreshold(1e-9);
  const int rank = static_cast<int>(probe.rank());

  OlsFit fit;
  fit.n_used = n;
  std::vector<int> keep;
  if (rank < regressors.cols()) {
    // Keep the pivoted leading columns; drop the rest as collinear.
    const auto& perm = probe.colsPermutation().indices();
    std::vector<bool> kept(static_cast<std::size_t>(regressors.cols()), false);
    for (int j = 0; j < rank; ++j) kept[static_cast<std::size_t>(perm[j])] = true;
    for (int j = 0; j < regressors.cols(); ++j) {
      if (kept[static_cast<std::size_t>(j)])
        keep.push_back(j);
      else
        fit.dropped.push_back(names[static_cast<std::size_t>(j)]);
    }
  } else {
    for (int j = 0; j < regressors.cols(); ++j) keep.push_back(j);
  }

  MatrixXd xm(n, static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) {
    xm.col(static_cast<Eigen::Index>(j)) = regressors.col(keep[j]);
    fit.names.push_back(names[static_cast<std::size_t>(keep[j])]);
  }
  const int k = static_cast<int>(xm.cols());
  if (n <= k) throw PatternSupportError("regression subsample too small for the regressors");

  const MatrixXd xtx_inv =
      (xm.transpose() * xm).ldlt().solve(MatrixXd::Identity(k, k));
  fit.coefficients = xtx_inv * (xm.transpose() * y);
  const VectorXd resid = y - xm * fit.coefficients;

  MatrixXd cov;
  if (robust_se) {
    // HC1: sandwich with squared residuals and an n/(n-k) small-sample factor.
    MatrixXd meat = MatrixXd::Zero(k, k);
    for (int i = 0; i < n; ++i)
      meat += resid[i] * resid[i] * xm.row(i).transpose() * xm.row(i);
    cov = xtx_inv * meat * xtx_inv * (static_cast<double>(n) / (n - k));
  } else {
    const double s2 = resid.squaredNorm() / (n - k);
    cov = s2 * xtx_inv;
  }
  fit.std_errors.resize(k);
  fit.t_stats.resize(k);
  for (int j = 0; j < k; ++j) {
    fit.std_errors[j] = std::sqrt(std::max(cov(j, j), 0.0));
    fit.t_stats[j] =
        fit.std_errors[j] > 0.0 ? fit.coefficients[j] / fit.std_errors[j] : 0.0;
  }
  return fit;
}

struct DependenceReport {
  std::string target;
  OlsFit fit;
  std::string key_regressor;
  bool key_dropped = false;
  double key_coef = 0.0, key_se = 0.0, key_t = 0.0;
  bool rejects = false;  // |t| > 1.96 on the key regressor
};

namespace detail {

inline DependenceReport dependence_regression(const Dataset& data, bool regress_ry_on_d,
                                              bool robust_se) {
  std::vector<int> rows;
  for (int i = 0; i < data.n(); ++i) {
    if (regress_ry_on_d ? data.r_d(i) == 1 : data.r_y(i) == 1) rows.push_back(i);
  }
  if (rows.empty())
    throw PatternSupportError(regress_ry_on_d ? "empty treatment-observed subsample"
                                              : "empty outcome-observed subsample");
  const auto zx = pooled_zx(data);
  const auto nrows = static_cast<Eigen::Index>(rows.size());
  MatrixXd reg(nrows, 2 + zx.values.cols());
  VectorXd target(nrows);
  std::vector<std::string> names{"intercept", regress_ry_on_d ? "d" : "y"};
  for (const auto& nm : zx.names) names.push_back(nm);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int r = rows[i];
    const auto ii = static_cast<Eigen::Index>(i);
    reg(ii, 0) = 1.0;
    reg(ii, 1) = regress_ry_on_d ? data.d(r) : data.y(r);
    reg.row(ii).tail(zx.values.cols()) = zx.values.row(r);
    target[ii] = regress_ry_on_d ? data.r_y(r) : data.r_d(r);
  }

  DependenceReport report;
  report.target = regress_ry_on_d ? "R^Y on D given R^D = 1" : "R^D on Y given R^Y = 1";
  report.key_regressor = regress_ry_on_d ? "d" : "y";
  report.fit = ols_regression(target, reg, names, robust_se);
  report.key_dropped = true;
  for (std::size_t j = 0; j < report.fit.names.size(); ++j) {
    if (report.fit.names[j] == report.key_regressor) {
      report.key_dropped = false;
      report.key_coef = report.fit.coefficients[static_cast<Eigen::Index>(j)];
      report.key_se = report.fit.std_errors[static_cast<Eigen::Index>(j)];
      report.key_t = report.fit.t_stats[static_cast<Eigen::Index>(j)];
      report.rejects = std::abs(report.key_t) > 1.96;
    }
  }
  return report;
}

}  // namespace detail

// Does outcome missingness depend on the treatment among rows where the
// treatment is observed?  A significant coefficient is evidence against
// ignorability given (z, x) alone.
inline DependenceReport test_ry_on_d(const Dataset& data, bool robust_se = true) {
  return detail::dependence_regression(data, true, robust_se);
}

// Does treatment missingness depend on the outcome among rows where the
// outcome is observed?  A significant coefficient is evidence against both
// dependence assumptions.
inline DependenceReport test_rd_on_y(const Dataset& data, bool robust_se = true) {
  return detail::dependence_regression(data, false, robust_se);
}

struct AssumptionAdvice {
  std::string verdict;  // "MAR plausible" / "SMAR recommended" / "neither" / "no missingness"
  std::string note;
};

inline AssumptionAdvice recommend_assumption(const DependenceReport& ry_on_d,
                                             const DependenceReport& rd_on_y) {
  AssumptionAdvice advice;
  if (rd_on_y.rejects) {
    advice.verdict = "neither";
    advice.note =
        "treatment missingness depends on the outcome (|t| > 1.96); both dependence "
        "assumptions are questionable";
  } else if (ry_on_d.rejects) {
    advice.verdict = "SMAR recommended";
    advice.note = "outcome missingness depends on the observed treatment (|t| > 1.96)";
  } else {
    advice.verdict = "MAR plausible";
    advice.note = "neither dependence regression rejects; MAR would also be valid";
  }
  return advice;
}

}  // namespace aipw
