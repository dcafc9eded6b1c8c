#ifndef STORMUQ_BIAS_HPP
#define STORMUQ_BIAS_HPP

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stormuq/covariance.hpp"
#include "stormuq/geometry.hpp"
#include "stormuq/mle.hpp"

namespace stormuq {

/// Systematic-bias field over the common domain: posterior mean m_mu,
/// pointwise posterior standard deviations, and per-point storm counts.
struct MeanField {
  Domain domain;
  Eigen::VectorXd m_mu;
  Eigen::VectorXd sd_mu; // NaN where no storm contributes information
  std::vector<int> n_contrib;
  bool converged = true;
  int iterations = 0;

  std::size_t size() const { return domain.size(); }
};

/// Pointwise empirical average of the error fields over the storms whose
/// buffer covers each point. Points covered by no storm do not occur in a
/// domain built from the same fields; they stay nodata on rasterization.
inline MeanField empirical_mu(const std::vector<ErrorField>& fields) {
  if (fields.empty()) throw data_error("empirical_mu: no error fields");
  MeanField mf;
  mf.domain = make_domain(fields);
  const std::size_t nd = mf.domain.size();
  mf.m_mu = Eigen::VectorXd::Zero(Eigen::Index(nd));
  mf.sd_mu = Eigen::VectorXd::Constant(Eigen::Index(nd), std::numeric_limits<double>::quiet_NaN());
  mf.n_contrib.assign(nd, 0);
  for (const auto& f : fields) {
    const IncidenceMap A = make_incidence(f.buffer, mf.domain);
    for (std::size_t k = 0; k < A.rows.size(); ++k) {
      mf.m_mu[Eigen::Index(A.rows[k])] += f.y[Eigen::Index(k)];
      ++mf.n_contrib[A.rows[k]];
    }
  }
  for (std::size_t i = 0; i < nd; ++i)
    if (mf.n_contrib[i] > 0) mf.m_mu[Eigen::Index(i)] /= double(mf.n_contrib[i]);
  return mf;
}

namespace detail {

inline void check_field_summary_pairing(const std::vector<ErrorField>& fields,
                                        const std::vector<StormSummary>& summaries) {
  if (fields.size() != summaries.size())
    throw data_error("bias: field/summary count mismatch");
  for (std::size_t i = 0; i < fields.size(); ++i)
    if (!fields[i].storm_id.empty() && !summaries[i].storm_id.empty() &&
        fields[i].storm_id != summaries[i].storm_id)
      throw data_error("bias: field/summary storm ids disagree at position " + std::to_string(i));
}

} // namespace detail

/// Posterior for the mean process mu given per-storm covariances at the
/// current MLEs. The posterior precision is C^-1 + sum_i A_i^T Sigma_i^-1 A_i
/// and yields the pointwise sd map. With an informative prior precision the
/// posterior mean is the full generalized-least-squares solve; with the flat
/// prior (C^-1 = 0) it reduces to the pointwise empirical average, which is
/// also what makes single-coverage points carry exactly their storm's value.
inline MeanField posterior_mu(const std::vector<ErrorField>& fields,
                              const std::vector<StormSummary>& summaries,
                              const Eigen::MatrixXd* prior_precision = nullptr) {
  if (fields.empty()) throw data_error("posterior_mu: no error fields");
  detail::check_field_summary_pairing(fields, summaries);

  MeanField mf = empirical_mu(fields);
  const Eigen::Index nd = Eigen::Index(mf.domain.size());
  if (prior_precision && (prior_precision->rows() != nd || prior_precision->cols() != nd))
    throw data_error("posterior_mu: prior precision must be n_D x n_D");

  Eigen::MatrixXd P = prior_precision ? *prior_precision : Eigen::MatrixXd::Zero(nd, nd);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(nd);
  for (std::size_t i = 0; i < fields.size(); ++i) {
    const auto& f = fields[i];
    const Eigen::MatrixXd Di = pairwise_distances(f.locations);
    const auto llt = cholesky(exp_cov(Di, summaries[i].theta_hat));
    const Eigen::MatrixXd Prec =
        llt.solve(Eigen::MatrixXd::Identity(Di.rows(), Di.cols()));
    const Eigen::VectorXd Py = Prec * f.y;
    const IncidenceMap A = make_incidence(f.buffer, mf.domain);
    for (std::size_t r = 0; r < A.rows.size(); ++r) {
      b[Eigen::Index(A.rows[r])] += Py[Eigen::Index(r)];
      for (std::size_t c = 0; c < A.rows.size(); ++c)
        P(Eigen::Index(A.rows[r]), Eigen::Index(A.rows[c])) += Prec(Eigen::Index(r), Eigen::Index(c));
    }
  }

  Eigen::LLT<Eigen::MatrixXd> pllt(0.5 * (P + P.transpose()));
  if (pllt.info() != Eigen::Success)
    throw numeric_error("posterior_mu: total precision not positive definite");
  const Eigen::MatrixXd Sigma_mu = pllt.solve(Eigen::MatrixXd::Identity(nd, nd));
  for (Eigen::Index i = 0; i < nd; ++i) mf.sd_mu[i] = std::sqrt(Sigma_mu(i, i));
  if (prior_precision) mf.m_mu = pllt.solve(b);
  return mf;
}

struct EmOptions {
  int max_iters = 20;
  double tol = 1e-10; // max-norm change in m_mu
  const Eigen::MatrixXd* prior_precision = nullptr;
  ProfileOptions profile;
};

struct EmResult {
  MeanField mean_field;
  std::vector<StormSummary> summaries;
};

/// EM-style alternation: re-estimate each storm's theta_hat on the
/// bias-adjusted field y_i - A_i m, then recompute m from the posterior,
/// until m stops moving. Storm fields that become degenerate (identically
/// zero after adjustment) keep their previous estimate and are flagged by
/// an identity H.
inline EmResult em_bias_loop(const std::vector<ErrorField>& fields, const EmOptions& opts = {}) {
  if (fields.empty()) throw data_error("em_bias_loop: no error fields");
  MeanField mf = empirical_mu(fields);
  std::vector<IncidenceMap> inc;
  inc.reserve(fields.size());
  for (const auto& f : fields) inc.push_back(make_incidence(f.buffer, mf.domain));

  std::vector<StormSummary> summaries(fields.size());
  for (std::size_t i = 0; i < fields.size(); ++i) {
    summaries[i].storm_id = fields[i].storm_id;
    summaries[i].region = fields[i].region;
    summaries[i].n_points = int(fields[i].n_points());
  }

  Eigen::VectorXd m = mf.m_mu;
  mf.converged = false;
  for (int it = 0; it < opts.max_iters; ++it) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      const Eigen::VectorXd adj = fields[i].y - inc[i].apply(m);
      const Eigen::MatrixXd Di = pairwise_distances(fields[i].locations);
      try {
        summaries[i].theta_hat = profile_mle(adj, Di, opts.profile);
        summaries[i].H = fisher_information(Di, summaries[i].theta_hat, opts.profile.jitter);
      } catch (const data_error&) {
        summaries[i].theta_hat = Theta{0.0, 0.0};
        summaries[i].H = Eigen::Matrix2d::Identity();
      }
    }
    const MeanField updated = posterior_mu(fields, summaries, opts.prior_precision);
    const double delta = (updated.m_mu - m).cwiseAbs().maxCoeff();
    m = updated.m_mu;
    mf.m_mu = updated.m_mu;
    mf.sd_mu = updated.sd_mu;
    mf.iterations = it + 1;
    if (delta < opts.tol) {
      mf.converged = true;
      break;
    }
  }
  return EmResult{std::move(mf), std::move(summaries)};
}

/// Pointwise m_mu / sd_mu on the template grid; nodata where undefined.
inline RasterField standardized_error_map(const MeanField& mf, const RasterField& grid_template) {
  RasterField out = grid_template;
  std::fill(out.values.begin(), out.values.end(), out.nodata);
  for (std::size_t i = 0; i < mf.size(); ++i) {
    if (mf.n_contrib[i] == 0) continue;
    const double sd = mf.sd_mu[Eigen::Index(i)];
    if (!(sd > 0.0))
      throw numeric_error("standardized_error_map: zero sd at covered domain point " +
                          std::to_string(i));
    out.values[mf.domain.cells[i]] = mf.m_mu[Eigen::Index(i)] / sd;
  }
  return out;
}

/// Serializes the field as three ASCII grids (mean, sd, count) sharing the
/// template's header.
inline void write_mean_field(const MeanField& mf, const RasterField& grid_template,
                             const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  RasterField mean = grid_template, sd = grid_template, count = grid_template;
  for (auto* r : {&mean, &sd, &count}) std::fill(r->values.begin(), r->values.end(), r->nodata);
  for (std::size_t i = 0; i < mf.size(); ++i) {
    const std::size_t cell = mf.domain.cells[i];
    count.values[cell] = double(mf.n_contrib[i]);
    if (mf.n_contrib[i] == 0) continue;
    mean.values[cell] = mf.m_mu[Eigen::Index(i)];
    if (std::isfinite(mf.sd_mu[Eigen::Index(i)])) sd.values[cell] = mf.sd_mu[Eigen::Index(i)];
  }
  save_raster(mean, (fs::path(dir) / "mean.asc").string());
  save_raster(sd, (fs::path(dir) / "sd.asc").string());
  save_raster(count, (fs::path(dir) / "count.asc").string());
}

} // namespace stormuq

#endif
