#pragma once

#include "dp2erm/core.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dp2erm::io {

class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dataset read from the `x1,...,xp,a,y[,f_opt][,pi]` format. `pi` is
/// P(A = +1 | x).
struct LoadedData {
  Dataset data;
  std::optional<Vector> f_opt;
  std::optional<Vector> p_treated;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(
        start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

inline double parse_double(const std::string& cell, std::size_t row,
                           const std::string& column) {
  double value = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (cell.empty() || ec != std::errc() || ptr != end)
    throw CsvError("row " + std::to_string(row) + ", column '" + column +
                   "': cannot parse '" + cell + "' as a number");
  return value;
}

}  // namespace detail

/// Parses CSV text. Blank lines and lines starting with '#' are skipped. Rows
/// are numbered from 1 for the header line.
inline LoadedData read_dataset_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    header = detail::split(t);
    break;
  }
  if (header.empty()) throw CsvError("CSV has no header row");

  std::map<std::string, std::size_t> index;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!index.emplace(header[c], c).second)
      throw CsvError("duplicate column '" + header[c] + "'");
  }
  for (const char* required : {"a", "y"})
    if (!index.count(required))
      throw CsvError(std::string("missing required column '") + required + "'");
  std::vector<std::size_t> x_cols;
  for (std::size_t k = 1;; ++k) {
    const auto it = index.find("x" + std::to_string(k));
    if (it == index.end()) break;
    x_cols.push_back(it->second);
  }
  if (x_cols.empty()) throw CsvError("missing required column 'x1'");
  for (const auto& [name, c] : index) {
    const bool known = name == "a" || name == "y" || name == "f_opt" || name == "pi";
    const bool is_x = name.size() > 1 && name[0] == 'x' &&
                      name.find_first_not_of("0123456789", 1) == std::string::npos;
    if (!known && !is_x) throw CsvError("unknown column '" + name + "'");
    if (is_x && std::stoul(name.substr(1)) > x_cols.size())
      throw CsvError("covariate columns are not contiguous from x1: found '" +
                     name + "'");
  }
  const std::optional<std::size_t> f_col =
      index.count("f_opt") ? std::optional<std::size_t>(index["f_opt"]) : std::nullopt;
  const std::optional<std::size_t> pi_col =
      index.count("pi") ? std::optional<std::size_t>(index["pi"]) : std::nullopt;

  std::vector<std::vector<double>> xs;
  std::vector<int> as;
  std::vector<double> ys, fs, pis;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto cells = detail::split(t);
    if (cells.size() != header.size())
      throw CsvError("row " + std::to_string(line_no) + ": expected " +
                     std::to_string(header.size()) + " columns, found " +
                     std::to_string(cells.size()));
    std::vector<double> x(x_cols.size());
    for (std::size_t k = 0; k < x_cols.size(); ++k)
      x[k] = detail::parse_double(cells[x_cols[k]], line_no, header[x_cols[k]]);
    const double a = detail::parse_double(cells[index["a"]], line_no, "a");
    if (a != 1.0 && a != -1.0)
      throw CsvError("row " + std::to_string(line_no) +
                     ", column 'a': treatment must be -1 or 1, got '" +
                     cells[index["a"]] + "'");
    xs.push_back(std::move(x));
    as.push_back(static_cast<int>(a));
    ys.push_back(detail::parse_double(cells[index["y"]], line_no, "y"));
    if (f_col) fs.push_back(detail::parse_double(cells[*f_col], line_no, "f_opt"));
    if (pi_col) {
      const double pi = detail::parse_double(cells[*pi_col], line_no, "pi");
      if (!(pi > 0.0 && pi < 1.0))
        throw CsvError("row " + std::to_string(line_no) +
                       ", column 'pi': propensity must lie in (0, 1)");
      pis.push_back(pi);
    }
  }
  const Index n = static_cast<Index>(xs.size());
  const Index p = static_cast<Index>(x_cols.size());
  Matrix x(n, p);
  Eigen::VectorXi a(n);
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < p; ++j) x(i, j) = xs[i][j];
    a[i] = as[i];
    y[i] = ys[i];
  }
  LoadedData out{Dataset(std::move(x), std::move(a), std::move(y)), {}, {}};
  if (f_col) out.f_opt = Eigen::Map<Vector>(fs.data(), n);
  if (pi_col) out.p_treated = Eigen::Map<Vector>(pis.data(), n);
  return out;
}

inline LoadedData read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CsvError("cannot open '" + path + "'");
  return read_dataset_csv(in);
}

/// Shortest round-trip decimal representation.
inline std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline void write_dataset_csv(std::ostream& out, const Dataset& data,
                              const Vector* f_opt = nullptr,
                              const Vector* p_treated = nullptr) {
  for (Index j = 0; j < data.dim(); ++j) out << 'x' << (j + 1) << ',';
  out << "a,y";
  if (f_opt) out << ",f_opt";
  if (p_treated) out << ",pi";
  out << '\n';
  for (Index i = 0; i < data.size(); ++i) {
    for (Index j = 0; j < data.dim(); ++j) out << format_double(data.x(i)[j]) << ',';
    out << data.a(i) << ',' << format_double(data.y(i));
    if (f_opt) out << ',' << format_double((*f_opt)[i]);
    if (p_treated) out << ',' << format_double((*p_treated)[i]);
    out << '\n';
  }
}

}  // namespace dp2erm::io
