#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "aipw/common.hpp"

namespace aipw {

enum class SieveBasis { Power, BSpline };

// Basis description for least-squares sieve regression.  Knots are interior
// knot locations for the B-spline basis, in the same units as the inputs the
// spec is applied to (the fit pipeline standardizes inputs to [0,1] first, so
// specs used there carry knots inside (0,1)).
struct SieveSpec {
  SieveBasis basis = SieveBasis::Power;
  int degree = 1;
  std::vector<double> knots;
  bool include_interactions = false;

  // Rate constant from the convergence theory: 1 for power series, 1/2 for
  // splines.
  double eta() const { return basis == SieveBasis::Power ? 1.0 : 0.5; }

  int terms_per_column() const {
    if (basis == SieveBasis::Power) return degree;
    // Full B-spline block has knots+degree+1 functions; the first is dropped
    // against the constant column.
    return static_cast<int>(knots.size()) + degree;
  }

  int column_count(int n_inputs) const {
    int k = 1 + n_inputs * terms_per_column();
    if (include_interactions && n_inputs > 1) k += n_inputs * (n_inputs - 1) / 2;
    return k;
  }

  std::string describe() const {
    std::string s = basis == SieveBasis::Power ? "power" : "bspline";
    s += " degree=" + std::to_string(degree);
    if (basis == SieveBasis::BSpline) s += " knots=" + std::to_string(knots.size());
    if (include_interactions) s += " +interactions";
    return s;
  }
};

// All B-spline basis functions of the given degree at u, for a clamped knot
// vector on [lo, hi] with the given interior knots (Cox-de Boor recursion).
// The returned values form a partition of unity on [lo, hi].
inline VectorXd bspline_row(double u, int degree, const std::vector<double>& interior, double lo,
                            double hi) {
  const int n_basis = static_cast<int>(interior.size()) + degree + 1;
  std::vector<double> t;
  t.reserve(static_cast<std::size_t>(n_basis + degree + 1));
  for (int k = 0; k <= degree; ++k) t.push_back(lo);
  for (double v : interior) t.push_back(v);
  for (int k = 0; k <= degree; ++k) t.push_back(hi);

  u = std::clamp(u, lo, hi);
  VectorXd b = VectorXd::Zero(n_basis + degree);
  // Degree-0 seed: indicator of the knot span containing u.
  for (int j = 0; j < n_basis + degree; ++j) {
    const bool last_span = t[j] < t[j + 1] && u == hi && t[j + 1] == hi;
    if ((u >= t[j] && u < t[j + 1]) || last_span) b[j] = 1.0;
  }
  for (int p = 1; p <= degree; ++p) {
    for (int j = 0; j + p < n_basis + degree; ++j) {
      double left = 0.0, right = 0.0;
      if (t[j + p] > t[j]) left = (u - t[j]) / (t[j + p] - t[j]) * b[j];
      if (t[j + p + 1] > t[j + 1]) right = (t[j + p + 1] - u) / (t[j + p + 1] - t[j + 1]) * b[j + 1];
      b[j] = left + right;
    }
  }
  return b.head(n_basis);
}

namespace detail {

// Design matrix with the spline domain pinned per column.  The public
// build_basis anchors the domain to the data range of the given matrix; the
// fit/predict pipeline pins it to the standardized training range [0,1].
inline MatrixXd build_basis_on(const MatrixXd& inputs, const SieveSpec& spec, const VectorXd& lo,
                               const VectorXd& hi) {
  const int n = static_cast<int>(inputs.rows());
  const int m = static_cast<int>(inputs.cols());
  const int K = spec.column_count(m);
  MatrixXd design(n, K);
  design.col(0).setOnes();
  int col = 1;
  for (int c = 0; c < m; ++c) {
    if (spec.basis == SieveBasis::Power) {
      for (int p = 1; p <= spec.degree; ++p)
        design.col(col++) = inputs.col(c).array().pow(static_cast<double>(p));
    } else {
      const int per = spec.terms_per_column();
      for (int i = 0; i < n; ++i) {
        const VectorXd row = bspline_row(inputs(i, c), spec.degree, spec.knots, lo[c], hi[c]);
        // Drop the first spline function; with the constant column the block
        // would otherwise be exactly collinear through partition of unity.
        for (int j = 0; j < per; ++j) design(i, col + j) = row[j + 1];
      }
      col += per;
    }
  }
  if (spec.include_interactions && m > 1) {
    for (int a = 0; a < m; ++a)
      for (int b = a + 1; b < m; ++b)
        design.col(col++) = inputs.col(a).array() * inputs.col(b).array();
  }
  return design;
}

inline void validate_spec(const SieveSpec& spec) {
  if (spec.degree < 1) throw ConfigError("sieve: degree must be >= 1");
  for (std::size_t j = 1; j < spec.knots.size(); ++j)
    if (!(spec.knots[j] > spec.knots[j - 1]))
      throw ConfigError("sieve: knots must be strictly increasing");
}

}  // namespace detail

// n x K design matrix: constant column, then per-input basis terms, then
// optional pairwise interaction terms.  For the B-spline basis the domain is
// the data range of each column and knots must lie strictly inside it.
inline MatrixXd build_basis(const MatrixXd& inputs, const SieveSpec& spec) {
  if (!inputs.allFinite()) throw ConfigError("build_basis: inputs must be finite");
  detail::validate_spec(spec);
  const int m = static_cast<int>(inputs.cols());
  VectorXd lo(m), hi(m);
  for (int c = 0; c < m; ++c) {
    lo[c] = inputs.col(c).minCoeff();
    hi[c] = inputs.col(c).maxCoeff();
    if (spec.basis == SieveBasis::BSpline) {
      for (double v : spec.knots)
        if (v <= lo[c] || v >= hi[c])
          throw ConfigError("build_basis: knot " + std::to_string(v) +
                            " outside the data range of input column " + std::to_string(c));
    }
  }
  return detail::build_basis_on(inputs, spec, lo, hi);
}

// Fitted sieve regression.  Inputs are standardized per column by the
// training min/range before basis expansion, so predictions are invariant to
// affine rescaling of the raw inputs.
struct SievePredictor {
  SieveSpec spec;
  VectorXd coefficients;
  VectorXd col_min, col_range;
  std::vector<std::string> input_columns;
  std::optional<std::pair<double, double>> clamp;
  std::vector<int> fit_rows;  // identification-subsample metadata
  bool ridge_used = false;

  MatrixXd standardize(const MatrixXd& raw) const {
    MatrixXd u = raw;
    for (int c = 0; c < u.cols(); ++c) {
      u.col(c).array() -= col_min[c];
      u.col(c).array() /= col_range[c];
    }
    return u;
  }

  VectorXd predict(const MatrixXd& raw_inputs) const {
    const MatrixXd u = standardize(raw_inputs);
    const VectorXd lo = VectorXd::Zero(u.cols());
    const VectorXd hi = VectorXd::Ones(u.cols());
    VectorXd out = detail::build_basis_on(u, spec, lo, hi) * coefficients;
    if (clamp) {
      for (int i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], clamp->first, clamp->second);
    }
    return out;
  }

  double predict_row(const RowVectorXd& raw) const {
    MatrixXd one(1, raw.size());
    one.row(0) = raw;
    return predict(one)[0];
  }
};

inline SievePredictor fit_least_squares(const VectorXd& targets, const MatrixXd& inputs,
                                        const SieveSpec& spec, WarningLog* warnings = nullptr) {
  const int n = static_cast<int>(inputs.rows());
  if (targets.size() != n) throw ConfigError("fit_least_squares: target length mismatch");
  if (!inputs.allFinite() || !targets.allFinite())
    throw ConfigError("fit_least_squares: inputs must be finite");
  detail::validate_spec(spec);
  if (spec.basis == SieveBasis::BSpline) {
    for (double v : spec.knots)
      if (v <= 0.0 || v >= 1.0)
        throw ConfigError("fit_least_squares: knots must lie inside (0,1) after standardization");
  }

  SievePredictor fit;
  fit.spec = spec;
  fit.col_min.resize(inputs.cols());
  fit.col_range.resize(inputs.cols());
  for (int c = 0; c < inputs.cols(); ++c) {
    const double lo = inputs.col(c).minCoeff();
    const double hi = inputs.col(c).maxCoeff();
    fit.col_min[c] = lo;
    fit.col_range[c] = hi > lo ? hi - lo : 1.0;
  }

  const VectorXd lo01 = VectorXd::Zero(inputs.cols());
  const VectorXd hi01 = VectorXd::Ones(inputs.cols());
  const MatrixXd design = detail::build_basis_on(fit.standardize(inputs), spec, lo01, hi01);
  const int K = static_cast<int>(design.cols());
  if (n < K)
    throw ConfigError("fit_least_squares: " + std::to_string(n) + " rows for " + std::to_string(K) +
                      " basis terms");

  Eigen::ColPivHouseholderQR<MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < K) {
    MatrixXd gram = design.transpose() * design;
    const double ridge = 1e-8 * gram.trace() / K;
    gram.diagonal().array() += ridge;
    fit.coefficients = gram.ldlt().solve(design.transpose() * targets);
    fit.ridge_used = true;
    warn(warnings, "sieve design rank-deficient (rank " + std::to_string(qr.rank()) + " of " +
                       std::to_string(K) + "); ridge perturbation applied");
  } else {
    fit.coefficients = qr.solve(targets);
  }
  return fit;
}

// Mean out-of-fold squared error, deterministic fold assignment (row index
// modulo folds).  Candidates whose training folds cannot support the basis
// are skipped with a warning; ties break toward fewer terms.
inline SieveSpec cross_validate(const VectorXd& targets, const MatrixXd& inputs,
                                const std::vector<SieveSpec>& candidates, int folds,
                                WarningLog* warnings = nullptr) {
  if (candidates.empty()) throw ConfigError("cross_validate: no candidates");
  if (folds < 2) throw ConfigError("cross_validate: folds must be >= 2");
  const int n = static_cast<int>(inputs.rows());
  if (candidates.size() == 1) return candidates.front();

  double best_err = 0.0;
  int best_k = 0, best = -1;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const SieveSpec& cand = candidates[c];
    const int K = cand.column_count(static_cast<int>(inputs.cols()));
    bool skipped = false;
    double sse = 0.0;
    int held = 0;
    for (int f = 0; f < folds && !skipped; ++f) {
      std::vector<int> train, test;
      for (int i = 0; i < n; ++i) (i % folds == f ? test : train).push_back(i);
      if (static_cast<int>(train.size()) < K) {
        warn(warnings, "cross_validate: candidate '" + cand.describe() +
                           "' skipped, fold has fewer rows than basis terms");
        skipped = true;
        break;
      }
      MatrixXd xin(train.size(), inputs.cols());
      VectorXd yin(train.size());
      for (std::size_t i = 0; i < train.size(); ++i) {
        xin.row(static_cast<Eigen::Index>(i)) = inputs.row(train[i]);
        yin[static_cast<Eigen::Index>(i)] = targets[train[i]];
      }
      SievePredictor fit;
      try {
        fit = fit_least_squares(yin, xin, cand, warnings);
      } catch (const ConfigError&) {
        skipped = true;
        break;
      }
      MatrixXd xout(test.size(), inputs.cols());
      for (std::size_t i = 0; i < test.size(); ++i)
        xout.row(static_cast<Eigen::Index>(i)) = inputs.row(test[i]);
      const VectorXd pred = fit.predict(xout);
      for (std::size_t i = 0; i < test.size(); ++i) {
        const double e = targets[test[i]] - pred[static_cast<Eigen::Index>(i)];
        sse += e * e;
        ++held;
      }
    }
    if (skipped || held == 0) continue;
    const double err = sse / held;
    if (best < 0 || err < best_err - 1e-15 ||
        (std::abs(err - best_err) <= 1e-15 && K < best_k)) {
      best = static_cast<int>(c);
      best_err = err;
      best_k = K;
    }
  }
  if (best < 0) throw ConfigError("cross_validate: every candidate was skipped");
  return candidates[static_cast<std::size_t>(best)];
}

// Interior knots at evenly spaced quantiles of the values; falls back to an
// equal grid when the quantiles collide (e.g. few distinct values).
inline std::vector<double> quantile_knots(VectorXd values, int count) {
  std::vector<double> knots;
  if (count <= 0) return knots;
  std::sort(values.data(), values.data() + values.size());
  const double lo = values[0];
  const double hi = values[values.size() - 1];
  for (int k = 1; k <= count; ++k) {
    const double q = static_cast<double>(k) / (count + 1);
    const double idx = q * (static_cast<double>(values.size()) - 1.0);
    const auto i0 = static_cast<Eigen::Index>(idx);
    const double frac = idx - static_cast<double>(i0);
    const double v = i0 + 1 < values.size() ? values[i0] * (1.0 - frac) + values[i0 + 1] * frac
                                            : values[i0];
    knots.push_back(v);
  }
  bool ok = lo < knots.front() && knots.back() < hi;
  for (std::size_t j = 1; ok && j < knots.size(); ++j) ok = knots[j] > knots[j - 1];
  if (!ok) {
    knots.clear();
    for (int k = 1; k <= count; ++k)
      knots.push_back(lo + (hi - lo) * static_cast<double>(k) / (count + 1));
  }
  return knots;
}

// Advisory check of the series rate condition 4*eta + 2 < 1/nu < 4*s/d - 6*eta
// with nu = log K / log n and the smoothness convention s = d + 3.
inline std::optional<std::string> rate_guard_message(int K, int n, int d_inputs, double eta) {
  if (K <= 1 || n <= K || d_inputs < 1) return std::nullopt;
  const double nu = std::log(static_cast<double>(K)) / std::log(static_cast<double>(n));
  const double inv_nu = 1.0 / nu;
  const double lower = 4.0 * eta + 2.0;
  const double s_assumed = static_cast<double>(d_inputs) + 3.0;
  const double upper = 4.0 * s_assumed / d_inputs - 6.0 * eta;
  if (inv_nu <= lower)
    return "sieve rate guard: K = " + std::to_string(K) + " grows too fast for n = " +
           std::to_string(n) + " (1/nu = " + std::to_string(inv_nu) + " <= " +
           std::to_string(lower) + "); advisory only";
  if (inv_nu >= upper)
    return "sieve rate guard: K = " + std::to_string(K) + " grows too slowly for n = " +
           std::to_string(n) + " under the assumed smoothness s = d + 3 (1/nu = " +
           std::to_string(inv_nu) + " >= " + std::to_string(upper) + "); advisory only";
  return std::nullopt;
}

}  // namespace aipw
