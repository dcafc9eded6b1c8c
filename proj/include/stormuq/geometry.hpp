#ifndef STORMUQ_GEOMETRY_HPP
#define STORMUQ_GEOMETRY_HPP

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "stormuq/common.hpp"
#include "stormuq/raster.hpp"

namespace stormuq {

using Coords = Eigen::Matrix<double, Eigen::Dynamic, 2>;

/// Landfall-region covariate label.
enum class Region { Atlantic, Florida, Gulf };

inline Region region_from_string(const std::string& s) {
  if (s == "Atlantic") return Region::Atlantic;
  if (s == "Florida") return Region::Florida;
  if (s == "Gulf") return Region::Gulf;
  throw data_error("unknown region label '" + s + "' (expected Atlantic, Florida or Gulf)");
}

inline std::string to_string(Region r) {
  switch (r) {
    case Region::Atlantic: return "Atlantic";
    case Region::Florida: return "Florida";
    default: return "Gulf";
  }
}

/// Union of two radius-limited discs intersected with land, stored as
/// strictly increasing flat grid indices.
struct BufferRegion {
  Eigen::Vector2d center1{0, 0};
  Eigen::Vector2d center2{0, 0};
  double radius_km = 0.0;
  std::vector<std::size_t> member_indices;

  std::size_t n_points() const { return member_indices.size(); }
};

/// Buffer-spec JSON: {center1:[x,y], center2:[x,y], radius_km, region}.
struct BufferSpec {
  Eigen::Vector2d center1{0, 0};
  Eigen::Vector2d center2{0, 0};
  double radius_km = 0.0;
  Region region = Region::Atlantic;
};

inline BufferSpec buffer_spec_from_json(const nlohmann::json& j) {
  BufferSpec s;
  try {
    s.center1 << j.at("center1").at(0).get<double>(), j.at("center1").at(1).get<double>();
    s.center2 << j.at("center2").at(0).get<double>(), j.at("center2").at(1).get<double>();
    s.radius_km = j.at("radius_km").get<double>();
    s.region = region_from_string(j.at("region").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("malformed buffer spec: ") + e.what());
  }
  return s;
}

inline BufferSpec read_buffer_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open buffer spec: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw data_error(path + ": invalid JSON: " + e.what());
  }
  return buffer_spec_from_json(j);
}

/// Cells of `grid` whose center lies within `radius_km` (inclusive) of either
/// center and that are land in `land_mask` (nonzero, non-nodata).
inline BufferRegion build_buffer(const RasterField& grid, const RasterField& land_mask,
                                 const Eigen::Vector2d& c1, const Eigen::Vector2d& c2,
                                 double radius_km) {
  if (!(radius_km > 0.0)) throw data_error("build_buffer: radius must be > 0");
  if (!c1.allFinite() || !c2.allFinite()) throw data_error("build_buffer: non-finite center");
  if (!grid.same_geometry(land_mask))
    throw data_error("build_buffer: land mask geometry does not match grid");

  BufferRegion b;
  b.center1 = c1;
  b.center2 = c2;
  b.radius_km = radius_km;
  const double r2 = radius_km * radius_km;
  const std::size_t n = grid.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double m = land_mask.values[i];
    if (land_mask.is_nodata(m) || m == 0.0) continue;
    const double x = grid.cell_x(i), y = grid.cell_y(i);
    const double d1 = (x - c1.x()) * (x - c1.x()) + (y - c1.y()) * (y - c1.y());
    const double d2 = (x - c2.x()) * (x - c2.x()) + (y - c2.y()) * (y - c2.y());
    if (d1 <= r2 || d2 <= r2) b.member_indices.push_back(i);
  }
  if (b.member_indices.empty())
    throw data_error("build_buffer: degenerate buffer, no land cells within radius");
  return b;
}

/// Observed-minus-forecast values on a buffer, with planar cell-center
/// coordinates (km). Both rasters are expected on the sqrt scale.
struct ErrorField {
  std::string storm_id;
  Region region = Region::Atlantic;
  Eigen::VectorXd y;
  Coords locations;
  BufferRegion buffer;

  std::size_t n_points() const { return std::size_t(y.size()); }
};

inline ErrorField make_error_field(const RasterField& obs, const RasterField& fcst,
                                   const BufferRegion& buffer, Region region,
                                   const std::string& storm_id = "") {
  if (!obs.same_geometry(fcst))
    throw data_error("make_error_field: observation and forecast grids differ");
  const std::size_t n = buffer.n_points();
  ErrorField ef;
  ef.storm_id = storm_id;
  ef.region = region;
  ef.buffer = buffer;
  ef.y.resize(n);
  ef.locations.resize(n, 2);
  std::vector<std::size_t> bad;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t idx = buffer.member_indices[k];
    if (idx >= obs.size()) throw data_error("make_error_field: buffer index out of grid range");
    if (obs.is_nodata_at(idx) || fcst.is_nodata_at(idx)) {
      if (bad.size() < 8) bad.push_back(idx);
      continue;
    }
    ef.y[k] = obs.values[idx] - fcst.values[idx];
    ef.locations(k, 0) = obs.cell_x(idx);
    ef.locations(k, 1) = obs.cell_y(idx);
  }
  if (!bad.empty()) {
    std::string msg = "make_error_field: nodata inside buffer at cell indices";
    for (std::size_t idx : bad) msg += " " + std::to_string(idx);
    throw data_error(msg);
  }
  return ef;
}

/// Symmetric Euclidean distance matrix over planar coordinates. Duplicate
/// locations are rejected: with a zero nugget they make the covariance
/// singular.
inline Eigen::MatrixXd pairwise_distances(const Coords& locations) {
  const Eigen::Index n = locations.rows();
  if (n < 2) throw data_error("pairwise_distances: need at least 2 locations");
  Eigen::MatrixXd D(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    D(j, j) = 0.0;
    for (Eigen::Index k = j + 1; k < n; ++k) {
      const double ddx = locations(j, 0) - locations(k, 0);
      const double ddy = locations(j, 1) - locations(k, 1);
      const double d = std::sqrt(ddx * ddx + ddy * ddy);
      if (d == 0.0)
        throw data_error("pairwise_distances: duplicate locations at rows " + std::to_string(j) +
                         " and " + std::to_string(k));
      D(j, k) = D(k, j) = d;
    }
  }
  return D;
}

/// Common domain: ordered union of the buffers' grid cells.
struct Domain {
  std::vector<std::size_t> cells; // sorted flat grid indices
  std::unordered_map<std::size_t, std::size_t> index_of;

  std::size_t size() const { return cells.size(); }
};

inline Domain make_domain(const std::vector<const BufferRegion*>& buffers) {
  Domain d;
  for (const BufferRegion* b : buffers)
    d.cells.insert(d.cells.end(), b->member_indices.begin(), b->member_indices.end());
  std::sort(d.cells.begin(), d.cells.end());
  d.cells.erase(std::unique(d.cells.begin(), d.cells.end()), d.cells.end());
  d.index_of.reserve(d.cells.size());
  for (std::size_t i = 0; i < d.cells.size(); ++i) d.index_of.emplace(d.cells[i], i);
  return d;
}

inline Domain make_domain(const std::vector<ErrorField>& fields) {
  std::vector<const BufferRegion*> bs;
  bs.reserve(fields.size());
  for (const auto& f : fields) bs.push_back(&f.buffer);
  return make_domain(bs);
}

/// Row k selects the domain entry of the k-th buffer member (each row has a
/// single unit entry).
struct IncidenceMap {
  std::size_t domain_size = 0;
  std::vector<std::size_t> rows;

  Eigen::VectorXd apply(const Eigen::VectorXd& domain_vec) const {
    if (std::size_t(domain_vec.size()) != domain_size)
      throw data_error("IncidenceMap: domain vector length mismatch");
    Eigen::VectorXd out(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) out[k] = domain_vec[rows[k]];
    return out;
  }
};

inline IncidenceMap make_incidence(const BufferRegion& buffer, const Domain& domain) {
  IncidenceMap m;
  m.domain_size = domain.size();
  m.rows.reserve(buffer.n_points());
  for (std::size_t idx : buffer.member_indices) {
    auto it = domain.index_of.find(idx);
    if (it == domain.index_of.end())
      throw data_error("make_incidence: buffer cell not present in domain");
    m.rows.push_back(it->second);
  }
  return m;
}

// --- error-field JSON persistence (pipeline hand-off between CLI stages) ---

inline void write_error_field(const ErrorField& ef, const std::string& path) {
  nlohmann::json j;
  j["storm_id"] = ef.storm_id;
  j["region"] = to_string(ef.region);
  j["buffer"]["center1"] = {ef.buffer.center1.x(), ef.buffer.center1.y()};
  j["buffer"]["center2"] = {ef.buffer.center2.x(), ef.buffer.center2.y()};
  j["buffer"]["radius_km"] = ef.buffer.radius_km;
  j["buffer"]["member_indices"] = ef.buffer.member_indices;
  j["y"] = std::vector<double>(ef.y.data(), ef.y.data() + ef.y.size());
  std::vector<std::array<double, 2>> locs(ef.n_points());
  for (std::size_t k = 0; k < ef.n_points(); ++k)
    locs[k] = {ef.locations(k, 0), ef.locations(k, 1)};
  j["locations"] = locs;
  std::ofstream out(path);
  if (!out) throw data_error("cannot open for writing: " + path);
  out << j.dump(2) << "\n";
}

inline ErrorField read_error_field(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open error field: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw data_error(path + ": invalid JSON: " + e.what());
  }
  ErrorField ef;
  try {
    ef.storm_id = j.at("storm_id").get<std::string>();
    ef.region = region_from_string(j.at("region").get<std::string>());
    const auto& b = j.at("buffer");
    ef.buffer.center1 << b.at("center1").at(0).get<double>(), b.at("center1").at(1).get<double>();
    ef.buffer.center2 << b.at("center2").at(0).get<double>(), b.at("center2").at(1).get<double>();
    ef.buffer.radius_km = b.at("radius_km").get<double>();
    ef.buffer.member_indices = b.at("member_indices").get<std::vector<std::size_t>>();
    const auto y = j.at("y").get<std::vector<double>>();
    const auto locs = j.at("locations").get<std::vector<std::array<double, 2>>>();
    if (y.size() != locs.size() || y.size() != ef.buffer.member_indices.size())
      throw data_error(path + ": inconsistent y/locations/buffer lengths");
    ef.y = Eigen::Map<const Eigen::VectorXd>(y.data(), Eigen::Index(y.size()));
    ef.locations.resize(Eigen::Index(locs.size()), 2);
    for (std::size_t k = 0; k < locs.size(); ++k) {
      ef.locations(Eigen::Index(k), 0) = locs[k][0];
      ef.locations(Eigen::Index(k), 1) = locs[k][1];
    }
  } catch (const nlohmann::json::exception& e) {
    throw data_error(path + ": malformed error field: " + e.what());
  }
  return ef;
}

/// Scatter per-buffer values back onto the grid; all other cells nodata.
inline RasterField rasterize(const RasterField& grid_template, const BufferRegion& buffer,
                             const Eigen::VectorXd& values) {
  if (std::size_t(values.size()) != buffer.n_points())
    throw data_error("rasterize: value count does not match buffer size");
  RasterField out = grid_template;
  std::fill(out.values.begin(), out.values.end(), out.nodata);
  for (std::size_t k = 0; k < buffer.n_points(); ++k)
    out.values[buffer.member_indices[k]] = values[Eigen::Index(k)];
  return out;
}

} // namespace stormuq

#endif
