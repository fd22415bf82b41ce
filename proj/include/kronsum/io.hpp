#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "kronsum/errors.hpp"
#include "kronsum/linalg.hpp"

namespace kronsum::io {

using json = nlohmann::json;

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r'))
    text.remove_suffix(1);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    throw ValidationError("cannot parse number '" + std::string(text) + "'");
  }
  return value;
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

// -- dense CSV: one row per line, no header --

inline void write_matrix_csv(std::ostream& os, const Matrix& m) {
  if (!m.allFinite()) throw ValidationError("refusing to write non-finite matrix");
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) os << ',';
      os << format_double(m(i, j));
    }
    os << '\n';
  }
}

inline Matrix read_matrix_csv(std::istream& is) {
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    for (auto field : split(line, ',')) row.push_back(parse_double(field));
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ValidationError("ragged CSV matrix: row " + std::to_string(rows.size() + 1) + " has " +
                            std::to_string(row.size()) + " fields, expected " +
                            std::to_string(rows.front().size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ValidationError("empty CSV matrix");
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  if (!m.allFinite()) throw ValidationError("CSV matrix has non-finite entries");
  return m;
}

inline void save_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot open " + path.string() + " for writing");
  write_matrix_csv(os, m);
}

inline Matrix load_matrix_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open " + path.string());
  return read_matrix_csv(is);
}

// -- JSON envelope {rows, cols, data: [...] row-major} --

inline json matrix_to_json(const Matrix& m) {
  if (!m.allFinite()) throw ValidationError("refusing to serialize non-finite matrix");
  json data = json::array();
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline json matrix_to_json(const SymmetricMatrix& m) { return matrix_to_json(m.matrix()); }

inline Matrix matrix_from_json(const json& j) {
  if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("data")) {
    throw ValidationError("matrix envelope needs rows, cols and data");
  }
  const auto rows = j.at("rows").get<Index>();
  const auto cols = j.at("cols").get<Index>();
  const auto& data = j.at("data");
  if (rows <= 0 || cols <= 0) throw ValidationError("matrix envelope has non-positive shape");
  if (!data.is_array() || static_cast<Index>(data.size()) != rows * cols) {
    throw ValidationError("matrix envelope data length does not match rows*cols");
  }
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index k = 0; k < cols; ++k) m(i, k) = data[static_cast<std::size_t>(i * cols + k)].get<double>();
  return m;
}

inline SymmetricMatrix symmetric_from_json(const json& j) { return SymmetricMatrix(matrix_from_json(j)); }

inline void save_json(const std::filesystem::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot open " + path.string() + " for writing");
  os << j.dump(2) << '\n';
}

inline json load_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ValidationError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace kronsum::io
