#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "aipw/common.hpp"

namespace aipw {

// Four observability patterns for (treatment, outcome).
enum class MissingPattern { M1, M2, M3, M4 };

inline MissingPattern classify_pattern(int r_d, int r_y) {
  if (r_d == 1 && r_y == 1) return MissingPattern::M1;
  if (r_d == 1 && r_y == 0) return MissingPattern::M2;
  if (r_d == 0 && r_y == 1) return MissingPattern::M3;
  return MissingPattern::M4;
}

inline const char* pattern_name(MissingPattern m) {
  switch (m) {
    case MissingPattern::M1: return "M1";
    case MissingPattern::M2: return "M2";
    case MissingPattern::M3: return "M3";
    default: return "M4";
  }
}

// Columnar sample with fully observed instruments z and covariates x, and a
// partially observed scalar treatment d and outcome y.  Missing entries are
// explicit optionals; the observability indicators are derived, never stored
// by the caller.  Immutable after construction.
class Dataset {
 public:
  Dataset(MatrixXd z, MatrixXd x, std::vector<std::optional<double>> d,
          std::vector<std::optional<double>> y)
      : z_(std::move(z)), x_(std::move(x)), d_(std::move(d)), y_(std::move(y)) {
    const auto n = static_cast<std::size_t>(z_.rows());
    if (static_cast<std::size_t>(x_.rows()) != n || d_.size() != n || y_.size() != n)
      throw ConfigError("Dataset: column lengths disagree");
    if (z_.cols() < 1 + x_.cols())
      throw ConfigError("Dataset: order condition failed, need at least " +
                        std::to_string(1 + x_.cols()) + " instrument columns, got " +
                        std::to_string(z_.cols()));
    if (!z_.allFinite() || !x_.allFinite())
      throw ConfigError("Dataset: instruments and covariates must be fully observed and finite");
    r_d_.resize(static_cast<Eigen::Index>(n));
    r_y_.resize(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      if (d_[i] && !std::isfinite(*d_[i])) throw ConfigError("Dataset: non-finite treatment value");
      if (y_[i] && !std::isfinite(*y_[i])) throw ConfigError("Dataset: non-finite outcome value");
      r_d_[static_cast<Eigen::Index>(i)] = d_[i].has_value() ? 1 : 0;
      r_y_[static_cast<Eigen::Index>(i)] = y_[i].has_value() ? 1 : 0;
    }
  }

  int n() const { return static_cast<int>(z_.rows()); }
  int dz() const { return static_cast<int>(z_.cols()); }
  int dx() const { return static_cast<int>(x_.cols()); }

  const MatrixXd& z() const { return z_; }
  const MatrixXd& x() const { return x_; }

  int r_d(int i) const { return r_d_[i]; }
  int r_y(int i) const { return r_y_[i]; }
  bool d_present(int i) const { return r_d_[i] == 1; }
  bool y_present(int i) const { return r_y_[i] == 1; }

  // Guarded accessors: reading a missing value is a programming error in any
  // moment evaluation, so it throws rather than returning a sentinel.
  double d(int i) const {
    if (!d_[static_cast<std::size_t>(i)])
      throw MissingValueError("treatment read at row " + std::to_string(i) + " where r_d = 0");
    return *d_[static_cast<std::size_t>(i)];
  }
  double y(int i) const {
    if (!y_[static_cast<std::size_t>(i)])
      throw MissingValueError("outcome read at row " + std::to_string(i) + " where r_y = 0");
    return *y_[static_cast<std::size_t>(i)];
  }

  std::optional<double> d_opt(int i) const { return d_[static_cast<std::size_t>(i)]; }
  std::optional<double> y_opt(int i) const { return y_[static_cast<std::size_t>(i)]; }

  MissingPattern pattern(int i) const { return classify_pattern(r_d_[i], r_y_[i]); }

  int count_pattern(MissingPattern m) const {
    int c = 0;
    for (int i = 0; i < n(); ++i)
      if (pattern(i) == m) ++c;
    return c;
  }

 private:
  MatrixXd z_, x_;
  std::vector<std::optional<double>> d_, y_;
  Eigen::ArrayXi r_d_, r_y_;
};

// Monotone means the outcome is never observed while the treatment is
// missing: (1 - r_d) * r_y = 0 for every row.
inline bool is_monotone(const Dataset& data) {
  for (int i = 0; i < data.n(); ++i)
    if (data.r_d(i) == 0 && data.r_y(i) == 1) return false;
  return true;
}

}  // namespace aipw
