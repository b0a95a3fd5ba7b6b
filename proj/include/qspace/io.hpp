#pragma once

#include <qspace/types.hpp>

#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace qspace::io {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace detail {

inline std::string strip_comment(const std::string& line) {
  const auto pos = line.find('#');
  return pos == std::string::npos ? line : line.substr(0, pos);
}

inline std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

inline double parse_real(const std::string& tok, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    throw std::runtime_error(where + ": expected a number, got '" + tok + "'");
  }
  if (used != tok.size())
    throw std::runtime_error(where + ": trailing characters in number '" + tok + "'");
  return v;
}

inline long parse_int(const std::string& tok, const std::string& where) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(tok, &used);
  } catch (const std::exception&) {
    throw std::runtime_error(where + ": expected an integer, got '" + tok + "'");
  }
  if (used != tok.size())
    throw std::runtime_error(where + ": trailing characters in integer '" + tok + "'");
  return v;
}

}  // namespace detail

// Scheme file format (UTF-8 text, '#' comments):
//   t_d <seconds>
//   shells <b1> <b2> ...          (s/mm^2, optional when only zero-points follow)
//   <shell_id> <dx> <dy> <dz>     sample as unit direction; q = sqrt(b/t_d)*dir
//   q <qx> <qy> <qz> [shell_id]   sample as explicit q-vector (1/mm); the shell
//                                 is matched by b = t_d*q^2 when not given
inline AcquisitionScheme parse_scheme(std::istream& in, const std::string& name = "<scheme>") {
  AcquisitionScheme scheme;
  bool have_td = false;
  bool saw_sample = false;
  std::string line;
  int lineno = 0;

  auto match_shell = [&](double b) -> int {
    for (std::size_t s = 0; s < scheme.b_values.size(); ++s) {
      const double bs = scheme.b_values[s];
      if (std::abs(bs - b) <= 1e-6 * std::max(std::abs(bs), std::abs(b)) + 1e-12)
        return static_cast<int>(s);
    }
    scheme.b_values.push_back(b);
    return static_cast<int>(scheme.b_values.size()) - 1;
  };

  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = name + ":" + std::to_string(lineno);
    const auto toks = detail::tokenize(detail::strip_comment(line));
    if (toks.empty()) continue;

    if (toks[0] == "t_d") {
      if (saw_sample) throw std::runtime_error(where + ": t_d must precede sample lines");
      if (toks.size() != 2) throw std::runtime_error(where + ": expected 't_d <seconds>'");
      scheme.t_d = detail::parse_real(toks[1], where);
      have_td = true;
      continue;
    }
    if (toks[0] == "shells") {
      if (saw_sample) throw std::runtime_error(where + ": shells must precede sample lines");
      if (toks.size() < 2) throw std::runtime_error(where + ": expected 'shells <b1> <b2> ...'");
      for (std::size_t i = 1; i < toks.size(); ++i)
        scheme.b_values.push_back(detail::parse_real(toks[i], where));
      continue;
    }
    if (!have_td) throw std::runtime_error(where + ": sample line before t_d header");
    saw_sample = true;

    if (toks[0] == "q") {
      if (toks.size() != 4 && toks.size() != 5)
        throw std::runtime_error(where + ": expected 'q <qx> <qy> <qz> [shell]'");
      QPoint p{detail::parse_real(toks[1], where), detail::parse_real(toks[2], where),
               detail::parse_real(toks[3], where)};
      int shell;
      if (toks.size() == 5) {
        shell = static_cast<int>(detail::parse_int(toks[4], where));
        if (shell < 0 || shell >= scheme.shell_count())
          throw std::runtime_error(where + ": shell " + toks[4] + " not declared");
      } else {
        shell = match_shell(scheme.t_d * p.squared_magnitude());
      }
      scheme.points.push_back(p);
      scheme.shell_ids.push_back(shell);
      continue;
    }

    // direction line: <shell_id> <dx> <dy> <dz>
    if (toks.size() != 4)
      throw std::runtime_error(where + ": expected '<shell> <dx> <dy> <dz>' or 'q <qx> <qy> <qz>'");
    const int shell = static_cast<int>(detail::parse_int(toks[0], where));
    if (shell < 0) throw std::runtime_error(where + ": negative shell id");
    QPoint dir{detail::parse_real(toks[1], where), detail::parse_real(toks[2], where),
               detail::parse_real(toks[3], where)};
    const double len = dir.magnitude();
    if (len == 0.0) {
      // origin sample; the shell must carry b = 0
      while (scheme.shell_count() <= shell) scheme.b_values.push_back(0.0);
      if (scheme.b_values[static_cast<std::size_t>(shell)] != 0.0)
        throw std::runtime_error(where + ": zero direction on shell with b != 0");
      scheme.points.push_back(QPoint{0.0, 0.0, 0.0});
    } else {
      if (shell >= scheme.shell_count())
        throw std::runtime_error(where + ": shell " + toks[0] + " not declared");
      const double b = scheme.b_values[static_cast<std::size_t>(shell)];
      const double qmag = std::sqrt(b / scheme.t_d);
      scheme.points.push_back((qmag / len) * dir);
    }
    scheme.shell_ids.push_back(shell);
  }

  try {
    scheme.validate();
  } catch (const std::exception& e) {
    throw std::runtime_error(name + ": " + e.what());
  }
  return scheme;
}

inline AcquisitionScheme read_scheme(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scheme file '" + path + "'");
  return parse_scheme(in, path);
}

inline void write_scheme(std::ostream& out, const AcquisitionScheme& scheme) {
  out << "t_d " << format_double(scheme.t_d) << "\n";
  out << "shells";
  for (double b : scheme.b_values) out << " " << format_double(b);
  out << "\n";
  for (std::size_t i = 0; i < scheme.points.size(); ++i) {
    const QPoint& p = scheme.points[i];
    out << "q " << format_double(p.x) << " " << format_double(p.y) << " " << format_double(p.z)
        << " " << scheme.shell_ids[i] << "\n";
  }
}

inline void write_scheme(const std::string& path, const AcquisitionScheme& scheme) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write scheme file '" + path + "'");
  write_scheme(out, scheme);
}

// Signal files are plain CSV, one voxel per row, no header.
inline Eigen::MatrixXd parse_signal_rows(std::istream& in, std::size_t expected_cols,
                                         const std::string& name = "<signals>") {
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = detail::strip_comment(line);
    bool blank = true;
    for (char c : stripped)
      if (!std::isspace(static_cast<unsigned char>(c)) && c != ',') blank = false;
    if (blank) continue;

    std::vector<double> row;
    std::stringstream ss(stripped);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      const std::string where =
          name + ": row " + std::to_string(rows.size()) + ", column " + std::to_string(row.size());
      const auto toks = detail::tokenize(cell);
      if (toks.size() != 1) throw std::runtime_error(where + ": malformed cell '" + cell + "'");
      const double v = detail::parse_real(toks[0], where);
      if (!std::isfinite(v)) throw std::runtime_error(where + ": non-finite value");
      if (v < 0.0) throw std::runtime_error(where + ": negative value");
      row.push_back(v);
    }
    if (row.size() != expected_cols)
      throw std::runtime_error(name + ": row " + std::to_string(rows.size()) + " has " +
                               std::to_string(row.size()) + " values, expected " +
                               std::to_string(expected_cols));
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(expected_cols));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < expected_cols; ++c)
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return out;
}

inline SignalTable read_signals(const std::string& path,
                                std::shared_ptr<const AcquisitionScheme> scheme) {
  if (!scheme) throw std::invalid_argument("read_signals: missing scheme");
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open signal file '" + path + "'");
  SignalTable table;
  table.scheme = std::move(scheme);
  table.values = parse_signal_rows(in, table.scheme->size(), path);
  table.validate();
  return table;
}

inline void write_signals(std::ostream& out, const Eigen::MatrixXd& values) {
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      if (c) out << ",";
      out << format_double(values(r, c));
    }
    out << "\n";
  }
}

inline void write_signals(const std::string& path, const Eigen::MatrixXd& values) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write signal file '" + path + "'");
  write_signals(out, values);
}

// Hyperparameter files are 'key = value' lines for a0,a2,a4,a6,sigma_r,sigma_n2,xi.
inline Hyperparameters parse_hyperparameters(std::istream& in, const std::string& name = "<hyper>") {
  std::map<std::string, double> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = name + ":" + std::to_string(lineno);
    const auto toks = detail::tokenize(detail::strip_comment(line));
    if (toks.empty()) continue;
    if (toks.size() != 3 || toks[1] != "=")
      throw std::runtime_error(where + ": expected '<key> = <value>'");
    if (kv.count(toks[0])) throw std::runtime_error(where + ": duplicate key '" + toks[0] + "'");
    kv[toks[0]] = detail::parse_real(toks[2], where);
  }
  Hyperparameters h;
  auto take = [&](const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw std::runtime_error(name + ": missing key '" + key + "'");
    const double v = it->second;
    kv.erase(it);
    return v;
  };
  h.a0 = take("a0");
  h.a2 = take("a2");
  h.a4 = take("a4");
  h.a6 = take("a6");
  h.sigma_r = take("sigma_r");
  h.sigma_n2 = take("sigma_n2");
  h.xi = take("xi");
  if (!kv.empty()) throw std::runtime_error(name + ": unknown key '" + kv.begin()->first + "'");
  h.validate();
  return h;
}

inline Hyperparameters read_hyperparameters(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open hyperparameter file '" + path + "'");
  return parse_hyperparameters(in, path);
}

inline void write_hyperparameters(std::ostream& out, const Hyperparameters& h) {
  out << "a0 = " << format_double(h.a0) << "\n";
  out << "a2 = " << format_double(h.a2) << "\n";
  out << "a4 = " << format_double(h.a4) << "\n";
  out << "a6 = " << format_double(h.a6) << "\n";
  out << "sigma_r = " << format_double(h.sigma_r) << "\n";
  out << "sigma_n2 = " << format_double(h.sigma_n2) << "\n";
  out << "xi = " << format_double(h.xi) << "\n";
}

inline void write_hyperparameters(const std::string& path, const Hyperparameters& h) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write hyperparameter file '" + path + "'");
  write_hyperparameters(out, h);
}

}  // namespace qspace::io
