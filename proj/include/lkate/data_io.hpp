#pragma once

// CSV ingestion of linked files, tabulated mismatch components, and report
// serialization.

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lkate/core.hpp"
#include "lkate/mixture.hpp"

namespace lkate::io {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t k = 0; k < header.size(); ++k)
      if (header[k] == name) return static_cast<int>(k);
    return -1;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\"");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\"");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline bool is_missing(const std::string& s) { return s.empty() || s == "NA" || s == "NaN" || s == "nan"; }

inline double to_double(const std::string& s, std::size_t row, const std::string& col) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end == s.c_str() || *end != '\0') {
    throw Error(ErrorKind::parse_error,
                "row " + std::to_string(row + 2) + ", column '" + col + "': cannot parse '" + s + "'");
  }
  return v;
}

}  // namespace detail

inline CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  while (std::getline(in, line)) {
    if (!detail::trim(line).empty()) break;
  }
  if (detail::trim(line).empty()) throw Error(ErrorKind::parse_error, "empty CSV input");
  t.header = detail::split(line);
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split(line);
    if (cells.size() != t.header.size()) {
      throw Error(ErrorKind::parse_error, "row " + std::to_string(t.rows.size() + 2) + " has " +
                                              std::to_string(cells.size()) + " fields, header has " +
                                              std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  return t;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::parse_error, "cannot open '" + path + "'");
  return f;
}

/// Columns y, e, optional m, x1..xp, z1..zq. Intercepts are prepended to x
/// and z. A non-missing m marks the record as audited.
inline LinkedDataset parse_linked(const CsvTable& t, Scenario s) {
  for (const char* req : {"y", "e"}) {
    if (t.column(req) < 0) throw Error(ErrorKind::parse_error, std::string("missing required column '") + req + "'");
  }
  auto numbered = [&](char prefix) {
    std::vector<int> cols;
    for (int k = 1;; ++k) {
      const int c = t.column(std::string(1, prefix) + std::to_string(k));
      if (c < 0) break;
      cols.push_back(c);
    }
    for (const auto& h : t.header) {
      if (h.size() > 1 && h[0] == prefix && std::isdigit(static_cast<unsigned char>(h[1]))) {
        const int k = std::atoi(h.c_str() + 1);
        if (k < 1 || k > static_cast<int>(cols.size())) {
          throw Error(ErrorKind::parse_error, "column '" + h + "' without '" + std::string(1, prefix) +
                                                  std::to_string(cols.size() + 1) + "'");
        }
      }
    }
    return cols;
  };
  const std::vector<int> xc = numbered('x');
  const std::vector<int> zc = numbered('z');
  const int yc = t.column("y"), ec = t.column("e"), mc = t.column("m");
  const Index n = static_cast<Index>(t.rows.size());
  LinkedDataset d;
  d.scenario = s;
  d.x.resize(n, static_cast<Index>(xc.size()) + 1);
  d.z.resize(n, static_cast<Index>(zc.size()) + 1);
  d.y.resize(n);
  d.e.resize(n);
  d.m = Vector::Constant(n, std::nan(""));
  d.in_audit.assign(static_cast<std::size_t>(n), 0);
  for (Index i = 0; i < n; ++i) {
    const auto& r = t.rows[static_cast<std::size_t>(i)];
    const auto row = static_cast<std::size_t>(i);
    d.y[i] = detail::to_double(r[static_cast<std::size_t>(yc)], row, "y");
    d.e[i] = detail::to_double(r[static_cast<std::size_t>(ec)], row, "e");
    d.x(i, 0) = 1.0;
    d.z(i, 0) = 1.0;
    for (std::size_t k = 0; k < xc.size(); ++k)
      d.x(i, static_cast<Index>(k) + 1) = detail::to_double(r[static_cast<std::size_t>(xc[k])], row, t.header[static_cast<std::size_t>(xc[k])]);
    for (std::size_t k = 0; k < zc.size(); ++k)
      d.z(i, static_cast<Index>(k) + 1) = detail::to_double(r[static_cast<std::size_t>(zc[k])], row, t.header[static_cast<std::size_t>(zc[k])]);
    if (mc >= 0 && !detail::is_missing(r[static_cast<std::size_t>(mc)])) {
      d.m[i] = detail::to_double(r[static_cast<std::size_t>(mc)], row, "m");
      d.in_audit[row] = 1;
    }
  }
  const auto problems = validate(d);
  if (!problems.empty()) {
    throw Error(ErrorKind::parse_error, "record " + std::to_string(problems.front().record) + ": " +
                                            problems.front().rule);
  }
  return d;
}

inline LinkedDataset read_linked_csv(const std::string& path, Scenario s) {
  auto f = open_input(path);
  return parse_linked(read_csv(f), s);
}

/// Inverse of parse_linked; m is written only for audited records.
inline void write_linked_csv(std::ostream& os, const LinkedDataset& d) {
  os << "y,e,m";
  for (Index k = 1; k < d.p_x(); ++k) os << ",x" << k;
  for (Index k = 1; k < d.p_z(); ++k) os << ",z" << k;
  os << "\n";
  os.precision(17);
  for (Index i = 0; i < d.n(); ++i) {
    os << d.y[i] << "," << d.e[i] << ",";
    if (d.audited(i)) os << d.m[i];
    for (Index k = 1; k < d.p_x(); ++k) os << "," << d.x(i, k);
    for (Index k = 1; k < d.p_z(); ++k) os << "," << d.z(i, k);
    os << "\n";
  }
}

/// Tabulated mismatch component: column y (strictly increasing grid) and any
/// of f (pooled), f_e0 and f_e1 (per exposure); optional constant columns
/// mass_e0 and mass_e1 give P(E = e | M = 1).
inline OracleDensity parse_oracle(const CsvTable& t) {
  const int yc = t.column("y");
  if (yc < 0) throw Error(ErrorKind::parse_error, "oracle table: missing column 'y'");
  if (t.rows.size() < 2) throw Error(ErrorKind::parse_error, "oracle table needs at least two grid points");
  auto col = [&](int c, const std::string& name) {
    std::vector<double> v;
    for (std::size_t r = 0; r < t.rows.size(); ++r) v.push_back(detail::to_double(t.rows[r][static_cast<std::size_t>(c)], r, name));
    return v;
  };
  const std::vector<double> grid = col(yc, "y");
  OracleDensity o;
  if (const int c = t.column("f"); c >= 0) o.y_pooled = DensityTable(grid, col(c, "f"));
  if (const int c = t.column("f_e0"); c >= 0) o.y_by_e[0] = DensityTable(grid, col(c, "f_e0"));
  if (const int c = t.column("f_e1"); c >= 0) o.y_by_e[1] = DensityTable(grid, col(c, "f_e1"));
  const int m0 = t.column("mass_e0"), m1 = t.column("mass_e1");
  if ((m0 >= 0) != (m1 >= 0)) throw Error(ErrorKind::parse_error, "oracle table: mass_e0 and mass_e1 go together");
  if (m0 >= 0) {
    o.e_mass = std::array<double, 2>{detail::to_double(t.rows[0][static_cast<std::size_t>(m0)], 0, "mass_e0"),
                                     detail::to_double(t.rows[0][static_cast<std::size_t>(m1)], 0, "mass_e1")};
  }
  if (!o.y_pooled && !o.y_by_e[0] && !o.y_by_e[1]) {
    throw Error(ErrorKind::parse_error, "oracle table: need one of the columns f, f_e0, f_e1");
  }
  return o;
}

inline OracleDensity read_oracle_csv(const std::string& path) {
  auto f = open_input(path);
  return parse_oracle(read_csv(f));
}

// ---------------------------------------------------------------------------
// Reports

inline nlohmann::json to_json(const EstimateReport& r) {
  nlohmann::json j;
  j["estimator_id"] = r.estimator_id;
  j["tau_hat"] = std::isfinite(r.tau_hat) ? nlohmann::json(r.tau_hat) : nlohmann::json(nullptr);
  j["se"] = r.se ? nlohmann::json(*r.se) : nlohmann::json(nullptr);
  j["ci"] = (r.ci_low && r.ci_high) ? nlohmann::json::array({*r.ci_low, *r.ci_high}) : nlohmann::json(nullptr);
  j["diagnostics"] = {{"n_used", r.n_used},
                      {"converged", r.converged},
                      {"iterations", r.iterations},
                      {"clipped", r.clipped},
                      {"note", r.note}};
  return j;
}

inline const char* report_csv_header() {
  return "estimator,tau_hat,se,ci_low,ci_high,n_used,converged,iterations,clipped,note";
}

inline void write_report_row(std::ostream& os, const EstimateReport& r) {
  auto opt = [&](const std::optional<double>& v) {
    if (v) os << *v;
  };
  std::string note = r.note;
  for (char& c : note)
    if (c == ',' || c == '\n') c = ';';
  os << r.estimator_id << "," << r.tau_hat << ",";
  opt(r.se);
  os << ",";
  opt(r.ci_low);
  os << ",";
  opt(r.ci_high);
  os << "," << r.n_used << "," << (r.converged ? 1 : 0) << "," << r.iterations << "," << r.clipped << "," << note
     << "\n";
}

inline void write_reports_csv(std::ostream& os, const std::vector<EstimateReport>& rs) {
  os.precision(10);
  os << report_csv_header() << "\n";
  for (const auto& r : rs) write_report_row(os, r);
}

}  // namespace lkate::io
