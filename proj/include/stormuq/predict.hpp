#ifndef STORMUQ_PREDICT_HPP
#define STORMUQ_PREDICT_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "stormuq/covariance.hpp"
#include "stormuq/geometry.hpp"
#include "stormuq/hier.hpp"
#include "stormuq/simulate.hpp"

namespace stormuq {

constexpr double kMmPerInch = 25.4;

/// Simulated error fields for an incoming storm: one row per simulation,
/// one column per buffer cell (sqrt-mm), alongside the theta draws used and
/// the forecast on the buffer.
struct PredictiveEnsemble {
  Eigen::MatrixXd sims; // G x n
  std::vector<Eigen::VectorXd> thetas;
  BufferRegion buffer;
  Coords locations;
  Eigen::VectorXd forecast; // sqrt-mm on the buffer

  int n_sims() const { return int(sims.rows()); }
  Eigen::Index n_cells() const { return sims.cols(); }
};

/// Hydrologic subregion: cells given as indices into the buffer. At least
/// 30 member cells qualify a watershed for scoring.
struct WatershedMask {
  std::string name;
  std::vector<std::size_t> member;
  double cell_area_km2 = 144.0;
};

inline void validate_mask(const WatershedMask& m, std::size_t n_buffer) {
  if (m.member.size() < 30)
    throw data_error("watershed '" + m.name + "' has " + std::to_string(m.member.size()) +
                     " cells, needs at least 30");
  for (std::size_t idx : m.member)
    if (idx >= n_buffer)
      throw data_error("watershed '" + m.name + "' indexes outside the buffer");
}

inline std::vector<WatershedMask> read_watersheds(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open watershed file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw data_error(path + ": invalid JSON: " + e.what());
  }
  std::vector<WatershedMask> out;
  try {
    for (const auto& w : j.at("watersheds")) {
      WatershedMask m;
      m.name = w.at("name").get<std::string>();
      m.member = w.at("buffer_indices").get<std::vector<std::size_t>>();
      m.cell_area_km2 = w.at("cell_area_km2").get<double>();
      out.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw data_error(path + ": malformed watershed spec: " + e.what());
  }
  return out;
}

/// Draws of theta_{N+1} by conditional sampling: cycle the retained
/// (B, Sigma_theta) draws, set the mean to B x_new and add N(0, Sigma_theta)
/// noise. Chains with Sigma_theta = 0 (Model 3) give B x_new exactly.
inline std::vector<Eigen::VectorXd> sample_theta_new(const PosteriorChain& chain,
                                                     const Eigen::VectorXd& x_new, Rng& rng,
                                                     int count) {
  if (chain.length() == 0) throw data_error("sample_theta_new: empty chain");
  if (x_new.size() != chain.q())
    throw data_error("sample_theta_new: x_new has dimension " + std::to_string(x_new.size()) +
                     ", chain design expects " + std::to_string(chain.q()));
  std::vector<Eigen::VectorXd> out;
  out.reserve(std::size_t(count));
  const int G = chain.length();
  for (int k = 0; k < count; ++k) {
    const std::size_t g = std::size_t(k % G);
    Eigen::VectorXd t = chain.B[g] * x_new;
    const Eigen::MatrixXd& S = chain.Sigma[g];
    if (S.cwiseAbs().maxCoeff() > 0.0) {
      Eigen::LLT<Eigen::MatrixXd> llt(S);
      if (llt.info() != Eigen::Success)
        throw numeric_error("sample_theta_new: Sigma_theta draw " + std::to_string(g) +
                            " not positive definite");
      t += llt.matrixL() * standard_normal_vector(t.size(), rng);
    }
    out.push_back(std::move(t));
  }
  return out;
}

/// Scalar reduction for the nonspatial variant (Model 5): y ~ N(0, sigma2 I)
/// gives the MLE log(sum y^2 / n) with information n/2 on the log scale.
inline SummaryVec nonspatial_summary(const std::string& id, Region region,
                                     const Eigen::VectorXd& y) {
  if (y.size() < 2) throw data_error("nonspatial_summary: need at least 2 values");
  const double n = double(y.size());
  const double s2 = y.squaredNorm() / n;
  if (!(s2 > 0.0)) throw data_error("nonspatial_summary: y is identically zero");
  SummaryVec s;
  s.storm_id = id;
  s.region = region;
  s.n_points = int(y.size());
  s.theta_hat = Eigen::VectorXd::Constant(1, std::log(s2));
  s.H = Eigen::MatrixXd::Constant(1, 1, 0.5 * n);
  return s;
}

/// Nonparametric alternative (Model 4): a uniform bootstrap of the stored
/// MLEs; every draw equals some theta_hat_i.
inline std::vector<Eigen::VectorXd> bootstrap_theta(const std::vector<SummaryVec>& summaries,
                                                    Rng& rng, int count) {
  if (summaries.empty()) throw data_error("bootstrap_theta: no summaries");
  std::vector<Eigen::VectorXd> out;
  out.reserve(std::size_t(count));
  for (int k = 0; k < count; ++k)
    out.push_back(summaries[std::size_t(rng.next_u64() % summaries.size())].theta_hat);
  return out;
}

/// One exact zero-mean error-field draw on the buffer geometry.
inline Eigen::VectorXd simulate_error_field(const Theta& t, const Eigen::MatrixXd& D, Rng& rng,
                                            double jitter = 0.0) {
  return simulate_gp(D, t, rng, jitter);
}

namespace detail {

inline constexpr std::uint64_t kStreamSim = 0x73696dULL;

inline Theta as_theta2(const Eigen::VectorXd& v) {
  if (v.size() != 2) throw data_error("expected a 2-component theta draw");
  return Theta{v[0], v[1]};
}

} // namespace detail

/// Simulates one error field per theta draw. Each simulation g uses the
/// substream (seed, sim, g) and rows are filled in index order, so results
/// do not depend on the worker count.
inline PredictiveEnsemble simulate_ensemble(const std::vector<Eigen::VectorXd>& thetas,
                                            const BufferRegion& buffer, const Coords& locations,
                                            const Eigen::VectorXd& forecast, std::uint64_t seed,
                                            int jobs = 1, double jitter = 0.0) {
  const int G = int(thetas.size());
  if (G < 2) throw data_error("simulate_ensemble: need at least 2 simulations");
  const Eigen::Index n = locations.rows();
  if (forecast.size() != n) throw data_error("simulate_ensemble: forecast length mismatch");

  PredictiveEnsemble ens;
  ens.thetas = thetas;
  ens.buffer = buffer;
  ens.locations = locations;
  ens.forecast = forecast;
  ens.sims.resize(G, n);

  const Eigen::MatrixXd D = pairwise_distances(locations);
  auto worker = [&](int g0, int g1) {
    for (int g = g0; g < g1; ++g) {
      Rng rng(seed, {detail::kStreamSim, std::uint64_t(g)});
      ens.sims.row(g) =
          simulate_error_field(detail::as_theta2(thetas[std::size_t(g)]), D, rng, jitter)
              .transpose();
    }
  };
  if (jobs <= 1) {
    worker(0, G);
  } else {
    std::vector<std::thread> pool;
    const int chunk = (G + jobs - 1) / jobs;
    for (int j = 0; j < jobs && j * chunk < G; ++j)
      pool.emplace_back(worker, j * chunk, std::min(G, (j + 1) * chunk));
    for (auto& th : pool) th.join();
  }
  return ens;
}

/// Nonspatial variant (Model 5): Sigma = sigma2 I, theta draws are scalars
/// log(sigma2).
inline PredictiveEnsemble simulate_ensemble_nonspatial(const std::vector<Eigen::VectorXd>& thetas,
                                                       const BufferRegion& buffer,
                                                       const Coords& locations,
                                                       const Eigen::VectorXd& forecast,
                                                       std::uint64_t seed) {
  const int G = int(thetas.size());
  if (G < 2) throw data_error("simulate_ensemble: need at least 2 simulations");
  const Eigen::Index n = locations.rows();
  PredictiveEnsemble ens;
  ens.thetas = thetas;
  ens.buffer = buffer;
  ens.locations = locations;
  ens.forecast = forecast;
  ens.sims.resize(G, n);
  for (int g = 0; g < G; ++g) {
    if (thetas[std::size_t(g)].size() != 1)
      throw data_error("simulate_ensemble_nonspatial: expected scalar theta draws");
    const double sd = std::exp(0.5 * thetas[std::size_t(g)][0]);
    Rng rng(seed, {detail::kStreamSim, std::uint64_t(g)});
    ens.sims.row(g) = (sd * standard_normal_vector(n, rng)).transpose();
  }
  return ens;
}

/// Nearest-rank empirical quantile of a copy of the values.
inline double nearest_rank_quantile(std::vector<double> v, double p) {
  if (v.empty()) throw data_error("quantile of empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t k = std::size_t(std::max(
      0.0, std::min(double(v.size()) - 1.0, std::ceil(p * double(v.size())) - 1.0)));
  return v[k];
}

/// Pointwise forecast-plus-error quantile (sqrt-mm), floored at 0 since a
/// negative sqrt-precipitation total is nonphysical.
inline Eigen::VectorXd prediction_values(const PredictiveEnsemble& ens, double level) {
  if (!(level > 0.0 && level < 1.0)) throw data_error("prediction level must be in (0,1)");
  const Eigen::Index n = ens.n_cells();
  Eigen::VectorXd out(n);
  std::vector<double> col(std::size_t(ens.n_sims()));
  for (Eigen::Index j = 0; j < n; ++j) {
    for (int g = 0; g < ens.n_sims(); ++g) col[std::size_t(g)] = ens.sims(g, j);
    out[j] = std::max(0.0, ens.forecast[j] + nearest_rank_quantile(col, level));
  }
  return out;
}

inline RasterField prediction_map(const PredictiveEnsemble& ens, double level,
                                  const RasterField& grid_template) {
  return rasterize(grid_template, ens.buffer, prediction_values(ens, level));
}

/// Fraction of buffer cells where the observation does not exceed the map.
inline double coverage(const RasterField& map, const Eigen::VectorXd& obs,
                       const BufferRegion& buffer) {
  if (std::size_t(obs.size()) != buffer.n_points())
    throw data_error("coverage: observation length does not match buffer");
  std::size_t hit = 0;
  for (std::size_t k = 0; k < buffer.n_points(); ++k) {
    const double m = map.values[buffer.member_indices[k]];
    if (map.is_nodata(m)) throw data_error("coverage: map has nodata inside the buffer");
    if (obs[Eigen::Index(k)] <= m) ++hit;
  }
  return double(hit) / double(buffer.n_points());
}

/// Per-cell probability that precipitation (mm scale) reaches the
/// threshold: fraction of sims with (max(forecast + sim, 0))^2 >= threshold.
inline Eigen::VectorXd threshold_probabilities(const PredictiveEnsemble& ens,
                                               double threshold_mm) {
  if (threshold_mm < 0.0) throw data_error("threshold must be >= 0 mm");
  const Eigen::Index n = ens.n_cells();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  for (int g = 0; g < ens.n_sims(); ++g)
    for (Eigen::Index j = 0; j < n; ++j) {
      const double tot = std::max(0.0, ens.forecast[j] + ens.sims(g, j));
      if (tot * tot >= threshold_mm) out[j] += 1.0;
    }
  return out / double(ens.n_sims());
}

inline RasterField threshold_prob_map(const PredictiveEnsemble& ens, double threshold_mm,
                                      const RasterField& grid_template) {
  return rasterize(grid_template, ens.buffer, threshold_probabilities(ens, threshold_mm));
}

/// Half the central 95% interval of per-cell precipitation (mm scale),
/// converted to inches.
inline Eigen::VectorXd margins_of_error(const PredictiveEnsemble& ens) {
  if (ens.n_sims() < 2) throw data_error("margins_of_error: need at least 2 sims");
  const Eigen::Index n = ens.n_cells();
  Eigen::VectorXd out(n);
  std::vector<double> mm(std::size_t(ens.n_sims()));
  for (Eigen::Index j = 0; j < n; ++j) {
    for (int g = 0; g < ens.n_sims(); ++g) {
      const double tot = std::max(0.0, ens.forecast[j] + ens.sims(g, j));
      mm[std::size_t(g)] = tot * tot;
    }
    const double lo = nearest_rank_quantile(mm, 0.025);
    const double hi = nearest_rank_quantile(mm, 0.975);
    out[j] = 0.5 * (hi - lo) / kMmPerInch;
  }
  return out;
}

/// Predictive distribution of the mask's accumulated precipitation:
/// per-sim totals in mm, a Gaussian kernel density over them, and
/// nearest-rank quantiles. Bandwidth is the Silverman-style rule
/// 0.9 min(sd, IQR/1.34) G^(-1/5), with a tiny floor when sims collapse.
struct WatershedDensity {
  std::vector<double> totals_mm;
  double bandwidth = 0.0;
  double cell_area_km2 = 0.0;
  double q025 = 0.0, q500 = 0.0, q975 = 0.0;

  double operator()(double x) const {
    double s = 0.0;
    for (double t : totals_mm) {
      const double z = (x - t) / bandwidth;
      s += std::exp(-0.5 * z * z);
    }
    return s / (double(totals_mm.size()) * bandwidth * std::sqrt(2.0 * M_PI));
  }

  // volume in km^2 * mm corresponding to a totals value
  double volume_of(double total_mm) const { return total_mm * cell_area_km2; }
};

inline WatershedDensity watershed_density(const PredictiveEnsemble& ens,
                                          const WatershedMask& mask) {
  validate_mask(mask, ens.buffer.n_points());
  WatershedDensity wd;
  wd.cell_area_km2 = mask.cell_area_km2;
  wd.totals_mm.resize(std::size_t(ens.n_sims()));
  for (int g = 0; g < ens.n_sims(); ++g) {
    double tot = 0.0;
    for (std::size_t idx : mask.member) {
      const double v = std::max(0.0, ens.forecast[Eigen::Index(idx)] + ens.sims(g, Eigen::Index(idx)));
      tot += v * v;
    }
    wd.totals_mm[std::size_t(g)] = tot;
  }
  std::vector<double> sorted = wd.totals_mm;
  std::sort(sorted.begin(), sorted.end());
  const double G = double(sorted.size());
  double mean = 0.0;
  for (double t : sorted) mean += t;
  mean /= G;
  double var = 0.0;
  for (double t : sorted) var += (t - mean) * (t - mean);
  const double sd = std::sqrt(var / std::max(1.0, G - 1.0));
  const double iqr = nearest_rank_quantile(sorted, 0.75) - nearest_rank_quantile(sorted, 0.25);
  double spread = sd;
  if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
  wd.bandwidth = 0.9 * spread * std::pow(G, -0.2);
  if (!(wd.bandwidth > 0.0)) wd.bandwidth = std::max(1e-12, 1e-9 * std::abs(mean));
  wd.q025 = nearest_rank_quantile(sorted, 0.025);
  wd.q500 = nearest_rank_quantile(sorted, 0.5);
  wd.q975 = nearest_rank_quantile(sorted, 0.975);
  return wd;
}

/// Logarithmic score: log of the Gaussian-mixture predictive density of the
/// observed error vector on the mask cells, one component per theta draw,
/// combined with log-sum-exp. Draws whose covariance fails Cholesky are
/// skipped and counted; the mixture renormalizes over the survivors.
inline double log_score(const std::vector<Eigen::VectorXd>& thetas,
                        const Eigen::VectorXd& y_obs_mask, const Eigen::MatrixXd& D_mask,
                        const Eigen::VectorXd* bias_mean = nullptr, int* n_skipped = nullptr) {
  if (y_obs_mask.size() < 2) throw data_error("log_score: need at least 2 mask cells");
  if (thetas.empty()) throw data_error("log_score: no theta draws");
  if (bias_mean && bias_mean->size() != y_obs_mask.size())
    throw data_error("log_score: bias mean length mismatch");

  std::vector<double> logdens;
  logdens.reserve(thetas.size());
  int skipped = 0;
  for (const auto& tv : thetas) {
    try {
      if (tv.size() == 2) {
        const auto llt = cholesky(exp_cov(D_mask, detail::as_theta2(tv)));
        logdens.push_back(gaussian_loglik_chol(y_obs_mask, llt, bias_mean));
      } else if (tv.size() == 1) {
        // nonspatial component: sigma2 I
        const double s2 = std::exp(tv[0]);
        const Eigen::VectorXd r = bias_mean ? (y_obs_mask - *bias_mean).eval() : y_obs_mask;
        const double n = double(r.size());
        logdens.push_back(-0.5 * (n * std::log(2.0 * M_PI) + n * tv[0] + r.squaredNorm() / s2));
      } else {
        throw data_error("log_score: unsupported theta dimension");
      }
    } catch (const numeric_error&) {
      ++skipped;
    }
  }
  if (n_skipped) *n_skipped = skipped;
  if (logdens.empty()) throw numeric_error("log_score: every theta draw failed Cholesky");

  const double m = *std::max_element(logdens.begin(), logdens.end());
  double s = 0.0;
  for (double l : logdens) s += std::exp(l - m);
  return m + std::log(s / double(logdens.size()));
}

} // namespace stormuq

#endif
