#pragma once

#include <optional>
#include <vector>

#include "aipw/dataset.hpp"

namespace testutil {

// Small dataset builder: rows of (z..., x..., d?, y?).
struct RowSpec {
  std::vector<double> z;
  std::vector<double> x;
  std::optional<double> d;
  std::optional<double> y;
};

inline aipw::Dataset make_dataset(const std::vector<RowSpec>& rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto dz = static_cast<Eigen::Index>(rows.front().z.size());
  const auto dx = static_cast<Eigen::Index>(rows.front().x.size());
  Eigen::MatrixXd z(n, dz), x(n, dx);
  std::vector<std::optional<double>> d, y;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < dz; ++j) z(i, j) = rows[static_cast<std::size_t>(i)].z[static_cast<std::size_t>(j)];
    for (Eigen::Index j = 0; j < dx; ++j) x(i, j) = rows[static_cast<std::size_t>(i)].x[static_cast<std::size_t>(j)];
    d.push_back(rows[static_cast<std::size_t>(i)].d);
    y.push_back(rows[static_cast<std::size_t>(i)].y);
  }
  return aipw::Dataset(std::move(z), std::move(x), std::move(d), std::move(y));
}

}  // namespace testutil
