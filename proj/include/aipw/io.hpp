#pragma once

#include <charconv>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "aipw/common.hpp"
#include "aipw/dataset.hpp"

namespace aipw {

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// RFC 4180: comma separated, optional double-quoted fields with "" escapes,
// CRLF or LF line ends, embedded newlines allowed inside quotes.
inline Csv parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  auto end_field = [&]() {
    record.push_back(field);
    field.clear();
    field_started = false;
  };
  auto end_record = [&]() {
    end_field();
    records.push_back(record);
    record.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field_started && field.empty()) {
          in_quotes = true;
          field_started = true;
        } else {
          field.push_back(c);
        }
        break;
      case ',': end_field(); field_started = false; break;
      case '\r':
        if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
        end_record();
        break;
      case '\n': end_record(); break;
      default: field.push_back(c); field_started = true; break;
    }
  }
  if (in_quotes) throw ConfigError("CSV parse error: unterminated quoted field");
  if (field_started || !field.empty() || !record.empty()) end_record();

  Csv csv;
  if (records.empty()) throw ConfigError("CSV parse error: no header row");
  csv.header = records.front();
  csv.rows.assign(records.begin() + 1, records.end());
  for (std::size_t r = 0; r < csv.rows.size(); ++r)
    if (csv.rows[r].size() != csv.header.size())
      throw ConfigError("CSV parse error: row " + std::to_string(r + 2) + " has " +
                        std::to_string(csv.rows[r].size()) + " fields, header has " +
                        std::to_string(csv.header.size()));
  return csv;
}

inline Csv read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open CSV file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str());
}

enum class TreatmentType { Binary, Discrete, Continuous };

struct RoleConfig {
  std::string outcome;
  std::string treatment;
  std::vector<std::string> instruments;
  std::vector<std::string> covariates;
  std::vector<std::string> missing_tokens{"", "NA", "."};
  TreatmentType treatment_type = TreatmentType::Binary;
  std::vector<double> treatment_support;  // for the discrete type

  std::vector<double> support() const {
    if (treatment_type == TreatmentType::Binary) return {0.0, 1.0};
    if (treatment_type == TreatmentType::Discrete) return treatment_support;
    return {};
  }
};

namespace detail {

inline double parse_numeric(const std::string& cell, std::size_t row, const std::string& col) {
  double v = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  const auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end)
    throw ConfigError("unparseable numeric cell at data row " + std::to_string(row + 1) +
                      ", column '" + col + "': '" + cell + "'");
  return v;
}

inline bool is_missing_token(const std::string& cell, const std::vector<std::string>& tokens) {
  for (const auto& t : tokens)
    if (cell == t) return true;
  return false;
}

}  // namespace detail

// Builds the estimation dataset from a parsed CSV.  The instrument block of
// the dataset is [instruments..., covariates...]; exogenous covariates
// instrument themselves.  Missing tokens are only legal in the treatment and
// outcome columns.
inline Dataset ingest(const Csv& csv, const RoleConfig& roles) {
  std::unordered_map<std::string, int> col_index;
  for (std::size_t j = 0; j < csv.header.size(); ++j)
    col_index[csv.header[j]] = static_cast<int>(j);

  std::vector<std::string> all_roles{roles.outcome, roles.treatment};
  all_roles.insert(all_roles.end(), roles.instruments.begin(), roles.instruments.end());
  all_roles.insert(all_roles.end(), roles.covariates.begin(), roles.covariates.end());
  for (std::size_t a = 0; a < all_roles.size(); ++a) {
    if (col_index.find(all_roles[a]) == col_index.end())
      throw ConfigError("column '" + all_roles[a] + "' not found in the CSV header");
    for (std::size_t b = a + 1; b < all_roles.size(); ++b)
      if (all_roles[a] == all_roles[b])
        throw ConfigError("column '" + all_roles[a] + "' assigned to more than one role");
  }
  if (roles.instruments.empty()) throw ConfigError("at least one instrument column is required");
  if (roles.treatment_type == TreatmentType::Discrete && roles.treatment_support.size() < 2)
    throw ConfigError("discrete treatment requires a support of at least two values");

  const auto n = csv.rows.size();
  const auto n_z = roles.instruments.size() + roles.covariates.size();
  MatrixXd z(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n_z));
  MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(roles.covariates.size()));
  std::vector<std::optional<double>> d(n), y(n);

  for (std::size_t i = 0; i < n; ++i) {
    const auto& row = csv.rows[i];
    auto fully_observed_cell = [&](const std::string& col) {
      const std::string& cell = row[static_cast<std::size_t>(col_index[col])];
      if (detail::is_missing_token(cell, roles.missing_tokens))
        throw ConfigError("missing value in fully observed column '" + col + "' at data row " +
                          std::to_string(i + 1) +
                          "; instruments and covariates must be fully observed");
      return detail::parse_numeric(cell, i, col);
    };
    std::size_t c = 0;
    for (const auto& col : roles.instruments)
      z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c++)) = fully_observed_cell(col);
    std::size_t xc = 0;
    for (const auto& col : roles.covariates) {
      const double v = fully_observed_cell(col);
      z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c++)) = v;
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(xc++)) = v;
    }
    {
      const std::string& cell = row[static_cast<std::size_t>(col_index[roles.treatment])];
      if (!detail::is_missing_token(cell, roles.missing_tokens)) {
        const double v = detail::parse_numeric(cell, i, roles.treatment);
        if (roles.treatment_type == TreatmentType::Binary && v != 0.0 && v != 1.0)
          throw ConfigError("binary treatment value " + cell + " at data row " +
                            std::to_string(i + 1) + " is not 0 or 1");
        if (roles.treatment_type == TreatmentType::Discrete) {
          bool found = false;
          for (double s : roles.treatment_support) found = found || v == s;
          if (!found)
            throw ConfigError("treatment value " + cell + " at data row " + std::to_string(i + 1) +
                              " is outside the declared support");
        }
        d[i] = v;
      }
    }
    {
      const std::string& cell = row[static_cast<std::size_t>(col_index[roles.outcome])];
      if (!detail::is_missing_token(cell, roles.missing_tokens))
        y[i] = detail::parse_numeric(cell, i, roles.outcome);
    }
  }
  return Dataset(std::move(z), std::move(x), std::move(d), std::move(y));
}

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

// Writes a dataset back to CSV with shortest round-trip numeric formatting.
// Instrument columns that duplicate a covariate column are not repeated, so
// ingesting the written text reproduces the dataset exactly.
inline std::string export_csv(const Dataset& data) {
  std::vector<int> z_cols;
  for (int j = 0; j < data.dz(); ++j) {
    bool is_covariate = false;
    for (int k = 0; k < data.dx(); ++k)
      if (data.z().col(j) == data.x().col(k)) is_covariate = true;
    if (!is_covariate) z_cols.push_back(j);
  }
  std::ostringstream os;
  for (std::size_t j = 0; j < z_cols.size(); ++j) os << "z" << z_cols[j] << ",";
  for (int k = 0; k < data.dx(); ++k) os << "x" << k << ",";
  os << "d,y\n";
  for (int i = 0; i < data.n(); ++i) {
    for (int j : z_cols) os << detail::format_double(data.z()(i, j)) << ",";
    for (int k = 0; k < data.dx(); ++k) os << detail::format_double(data.x()(i, k)) << ",";
    if (data.d_present(i)) os << detail::format_double(data.d(i));
    os << ",";
    if (data.y_present(i)) os << detail::format_double(data.y(i));
    os << "\n";
  }
  return os.str();
}

inline RoleConfig export_roles(const Dataset& data) {
  RoleConfig roles;
  roles.outcome = "y";
  roles.treatment = "d";
  std::vector<int> z_cols;
  for (int j = 0; j < data.dz(); ++j) {
    bool is_covariate = false;
    for (int k = 0; k < data.dx(); ++k)
      if (data.z().col(j) == data.x().col(k)) is_covariate = true;
    if (!is_covariate) roles.instruments.push_back("z" + std::to_string(j));
  }
  for (int k = 0; k < data.dx(); ++k) roles.covariates.push_back("x" + std::to_string(k));
  return roles;
}

}  // namespace aipw
