#pragma once

// Time-gridded paths and their CSV / binary export.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fastslow/error.hpp"
#include "fastslow/linalg.hpp"

namespace fastslow {

// Values on an increasing grid starting at 0, extended piecewise constantly:
// p(t) = values[k] for grid[k] <= t < grid[k+1].
struct Path {
  std::vector<double> grid;
  std::vector<Vec> values;

  std::size_t size() const { return grid.size(); }
  int dimension() const { return values.empty() ? 0 : static_cast<int>(values.front().size()); }

  void push(double t, const Vec& v) {
    grid.push_back(t);
    values.push_back(v);
  }

  const Vec& back() const { return values.back(); }

  // Index k with grid[k] <= t < grid[k+1].
  std::size_t locate(double t) const {
    detail::require(!grid.empty(), "empty path");
    const auto it = std::upper_bound(grid.begin(), grid.end(), t);
    detail::require(it != grid.begin(), "time precedes the path grid");
    return static_cast<std::size_t>(it - grid.begin()) - 1;
  }

  const Vec& at(double t) const { return values[locate(t)]; }

  void validate() const {
    detail::require(!grid.empty() && grid.front() == 0.0, "path grid must start at 0");
    for (std::size_t k = 1; k < grid.size(); ++k) {
      detail::require(grid[k] > grid[k - 1], "path grid must be increasing");
    }
    for (const Vec& v : values) detail::require(v.allFinite(), "path values must be finite");
  }
};

// Uniform grid k / N for k = 0..steps.
inline Path uniform_path(std::int64_t steps, double n_per_unit, int d) {
  Path p;
  p.grid.resize(static_cast<std::size_t>(steps) + 1);
  p.values.assign(static_cast<std::size_t>(steps) + 1, Vec::Zero(d));
  for (std::int64_t k = 0; k <= steps; ++k) p.grid[static_cast<std::size_t>(k)] = static_cast<double>(k) / n_per_unit;
  return p;
}

// sup over the union of both grids of |a(t) - b(t)| (Euclidean).
inline double sup_distance(const Path& a, const Path& b) {
  detail::require(!a.grid.empty() && !b.grid.empty(), "sup_distance: empty path");
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, (a.values[k] - b.at(a.grid[k])).norm());
  for (std::size_t k = 0; k < b.size(); ++k) {
    if (b.grid[k] >= a.grid.front()) worst = std::max(worst, (a.at(b.grid[k]) - b.values[k]).norm());
  }
  return worst;
}

// ---- export --------------------------------------------------------------

// CSV with columns n, xi_1..xi_d (one row per time index).
inline void write_csv(std::ostream& out, const Eigen::MatrixXd& rows) {
  out << "n";
  for (Eigen::Index j = 0; j < rows.cols(); ++j) out << ",xi_" << (j + 1);
  out << '\n';
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    out << i;
    for (Eigen::Index j = 0; j < rows.cols(); ++j) out << ',' << rows(i, j);
    out << '\n';
  }
}

inline Eigen::MatrixXd path_matrix(const Path& p) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(p.size()), p.dimension());
  for (std::size_t k = 0; k < p.size(); ++k) m.row(static_cast<Eigen::Index>(k)) = p.values[k].transpose();
  return m;
}

inline constexpr char kBlockMagic[4] = {'A', 'V', 'L', 'B'};
inline constexpr std::uint32_t kBlockVersion = 1;

namespace detail {

template <class T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  detail::require(static_cast<bool>(in), "binary block truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace detail

// Binary block: "AVLB", u32 version, u32 d, u64 n, then n*d little-endian
// float64 values in row-major order.
inline void write_block(std::ostream& out, const Eigen::MatrixXd& rows) {
  out.write(kBlockMagic, 4);
  detail::put_le<std::uint32_t>(out, kBlockVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(rows.cols()));
  detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(rows.rows()));
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    for (Eigen::Index j = 0; j < rows.cols(); ++j) detail::put_le<double>(out, rows(i, j));
  }
}

inline Eigen::MatrixXd read_block(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  detail::require(static_cast<bool>(in) && std::memcmp(magic, kBlockMagic, 4) == 0, "not an AVLB block");
  const auto version = detail::get_le<std::uint32_t>(in);
  detail::require(version == kBlockVersion, "unsupported AVLB version " + std::to_string(version));
  const auto d = detail::get_le<std::uint32_t>(in);
  const auto n = detail::get_le<std::uint64_t>(in);
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    for (Eigen::Index j = 0; j < rows.cols(); ++j) rows(i, j) = detail::get_le<double>(in);
  }
  return rows;
}

inline void write_block_file(const std::string& file, const Eigen::MatrixXd& rows) {
  std::ofstream out(file, std::ios::binary);
  detail::require(static_cast<bool>(out), "cannot open " + file);
  write_block(out, rows);
}

inline void write_csv_file(const std::string& file, const Eigen::MatrixXd& rows) {
  std::ofstream out(file);
  detail::require(static_cast<bool>(out), "cannot open " + file);
  write_csv(out, rows);
}

}  // namespace fastslow
