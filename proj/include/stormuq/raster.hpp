#ifndef STORMUQ_RASTER_HPP
#define STORMUQ_RASTER_HPP

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "stormuq/common.hpp"

namespace stormuq {

/// Rectangular gridded field in ESRI-style ASCII-grid layout: row-major
/// values with the north row first, georeferenced by the lower-left corner
/// and cell size (planar km). Values are precipitation in mm or sqrt-mm.
struct RasterField {
  int ncols = 0;
  int nrows = 0;
  double x0 = 0.0; // x of lower-left corner (km)
  double y0 = 0.0; // y of lower-left corner (km)
  double dx = 0.0; // cell width (km)
  double dy = 0.0; // cell height (km)
  double nodata = -9999.0;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }

  double at(int row, int col) const { return values[std::size_t(row) * ncols + col]; }
  double& at(int row, int col) { return values[std::size_t(row) * ncols + col]; }

  bool is_nodata(double v) const { return v == nodata; }
  bool is_nodata_at(std::size_t idx) const { return values[idx] == nodata; }

  // Center coordinates of a flat cell index. Row 0 is the north row.
  double cell_x(std::size_t idx) const {
    const std::size_t col = idx % std::size_t(ncols);
    return x0 + (double(col) + 0.5) * dx;
  }
  double cell_y(std::size_t idx) const {
    const std::size_t row = idx / std::size_t(ncols);
    return y0 + (double(nrows - 1 - int(row)) + 0.5) * dy;
  }

  bool same_geometry(const RasterField& o) const {
    return ncols == o.ncols && nrows == o.nrows && x0 == o.x0 && y0 == o.y0 &&
           dx == o.dx && dy == o.dy;
  }
};

namespace detail {

inline bool iequals(const std::string& a, const std::string& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::tolower(static_cast<unsigned char>(a[i])) !=
        std::tolower(static_cast<unsigned char>(b[i])))
      return false;
  return true;
}

inline double parse_real(const std::string& tok, const std::string& path, int line) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0')
    throw data_error(path + ":" + std::to_string(line) + ": non-numeric token '" + tok + "'");
  return v;
}

} // namespace detail

/// Parses the six-line ASCII-grid header (ncols, nrows, xllcorner,
/// yllcorner, cellsize, NODATA_value) followed by nrows rows of ncols
/// whitespace-separated reals, north row first. Errors carry line numbers.
inline RasterField load_raster(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open raster file: " + path);

  RasterField f;
  const char* keys[6] = {"ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "NODATA_value"};
  std::string line;
  int lineno = 0;
  for (int k = 0; k < 6; ++k) {
    if (!std::getline(in, line))
      throw data_error(path + ": truncated header, expected '" + std::string(keys[k]) + "'");
    ++lineno;
    std::istringstream ls(line);
    std::string key, val, extra;
    if (!(ls >> key >> val) || (ls >> extra))
      throw data_error(path + ":" + std::to_string(lineno) + ": malformed header line '" + line + "'");
    if (!detail::iequals(key, keys[k]))
      throw data_error(path + ":" + std::to_string(lineno) + ": expected header key '" +
                       keys[k] + "', got '" + key + "'");
    const double v = detail::parse_real(val, path, lineno);
    switch (k) {
      case 0:
        if (v <= 0 || v != std::floor(v))
          throw data_error(path + ":" + std::to_string(lineno) + ": ncols must be a positive integer");
        f.ncols = int(v);
        break;
      case 1:
        if (v <= 0 || v != std::floor(v))
          throw data_error(path + ":" + std::to_string(lineno) + ": nrows must be a positive integer");
        f.nrows = int(v);
        break;
      case 2: f.x0 = v; break;
      case 3: f.y0 = v; break;
      case 4:
        if (v <= 0)
          throw data_error(path + ":" + std::to_string(lineno) + ": cellsize must be > 0");
        f.dx = f.dy = v;
        break;
      case 5: f.nodata = v; break;
    }
  }

  f.values.reserve(std::size_t(f.ncols) * f.nrows);
  for (int r = 0; r < f.nrows; ++r) {
    if (!std::getline(in, line))
      throw data_error(path + ": truncated data, expected " + std::to_string(f.nrows) +
                       " rows, got " + std::to_string(r));
    ++lineno;
    std::istringstream ls(line);
    std::string tok;
    int count = 0;
    while (ls >> tok) {
      f.values.push_back(detail::parse_real(tok, path, lineno));
      ++count;
    }
    if (count != f.ncols)
      throw data_error(path + ":" + std::to_string(lineno) + ": row has " + std::to_string(count) +
                       " values, header declares ncols " + std::to_string(f.ncols));
  }
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tok;
    if (ls >> tok)
      throw data_error(path + ":" + std::to_string(lineno) + ": trailing data after " +
                       std::to_string(f.nrows) + " rows");
  }
  return f;
}

/// Writes in the exact format load_raster parses. Reals use 17 significant
/// digits so a save/load/save round trip is byte-identical.
inline void save_raster(const RasterField& f, const std::string& path) {
  if (f.values.size() != std::size_t(f.ncols) * f.nrows)
    throw data_error("raster value count does not match ncols*nrows");
  if (f.dx != f.dy)
    throw data_error("ASCII grid requires square cells (dx == dy)");
  std::ofstream out(path);
  if (!out) throw data_error("cannot open for writing: " + path);
  char buf[40];
  auto fmt = [&buf](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out << "ncols " << f.ncols << "\n";
  out << "nrows " << f.nrows << "\n";
  out << "xllcorner " << fmt(f.x0) << "\n";
  out << "yllcorner " << fmt(f.y0) << "\n";
  out << "cellsize " << fmt(f.dx) << "\n";
  out << "NODATA_value " << fmt(f.nodata) << "\n";
  for (int r = 0; r < f.nrows; ++r) {
    for (int c = 0; c < f.ncols; ++c) {
      if (c) out << ' ';
      out << fmt(f.at(r, c));
    }
    out << "\n";
  }
  if (!out) throw data_error("write failed: " + path);
}

/// Elementwise square root of the non-nodata values (mm -> sqrt-mm).
inline RasterField sqrt_transform(const RasterField& f) {
  RasterField out = f;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    if (out.is_nodata_at(i)) continue;
    if (out.values[i] < 0.0)
      throw data_error("sqrt_transform: negative value " + std::to_string(out.values[i]) +
                       " at cell index " + std::to_string(i));
    out.values[i] = std::sqrt(out.values[i]);
  }
  return out;
}

} // namespace stormuq

#endif
