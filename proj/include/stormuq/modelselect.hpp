#ifndef STORMUQ_MODELSELECT_HPP
#define STORMUQ_MODELSELECT_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "stormuq/hier.hpp"

namespace stormuq {

/// Integrated-likelihood estimate for one model regime.
struct ModelEvidence {
  int model_id = 0;
  int P = 0; // free coordinates in the stacked parameter vector
  double log_evidence = 0.0;
  Eigen::VectorXd center;    // componentwise posterior median used
  double log_det_cov = 0.0;  // log |posterior covariance|
};

namespace detail {

inline double log_multigamma(double a, int p) {
  double s = 0.25 * double(p) * double(p - 1) * std::log(M_PI);
  for (int j = 1; j <= p; ++j) s += std::lgamma(a + 0.5 * (1.0 - j));
  return s;
}

inline double log_iw_pdf(const Eigen::MatrixXd& Sigma, double nu, const Eigen::MatrixXd& S) {
  const int p = int(S.rows());
  const Eigen::LLT<Eigen::MatrixXd> lS(S), lSig(Sigma);
  if (lS.info() != Eigen::Success || lSig.info() != Eigen::Success)
    throw numeric_error("log_iw_pdf: matrices must be positive definite");
  const double logdetS = log_det_from_llt(lS);
  const double logdetSig = log_det_from_llt(lSig);
  const double tr = lSig.solve(S).trace();
  return 0.5 * nu * logdetS - 0.5 * nu * p * std::log(2.0) - log_multigamma(0.5 * nu, p) -
         0.5 * (nu + p + 1.0) * logdetSig - 0.5 * tr;
}

inline double log_mvn_pdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                          const Eigen::LLT<Eigen::MatrixXd>& cov_llt) {
  return gaussian_loglik_chol((x - mean).eval(), cov_llt);
}

// log-Cholesky coordinates of an SPD matrix: per column j, log L_jj then the
// below-diagonal entries L_ij.
inline Eigen::VectorXd log_chol_coords(const Eigen::MatrixXd& S) {
  const Eigen::Index p = S.rows();
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success)
    throw numeric_error("log_chol_coords: matrix not positive definite");
  const Eigen::MatrixXd L = llt.matrixL();
  Eigen::VectorXd c(p * (p + 1) / 2);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < p; ++j) {
    c[k++] = std::log(L(j, j));
    for (Eigen::Index i = j + 1; i < p; ++i) c[k++] = L(i, j);
  }
  return c;
}

inline Eigen::MatrixXd from_log_chol(const Eigen::VectorXd& c, Eigen::Index p) {
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(p, p);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < p; ++j) {
    L(j, j) = std::exp(c[k++]);
    for (Eigen::Index i = j + 1; i < p; ++i) L(i, j) = c[k++];
  }
  return L * L.transpose();
}

// log |d vech(Sigma) / d coords| for the log-Cholesky parameterization.
inline double log_chol_jacobian(const Eigen::VectorXd& c, Eigen::Index p) {
  double s = double(p) * std::log(2.0);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < p; ++j) {
    s += double(p - j + 1) * c[k]; // c[k] = log L_jj
    k += p - j;
  }
  return s;
}

} // namespace detail

/// Laplace-Metropolis estimate of the integrated likelihood from posterior
/// draws: log m = (P/2) log 2pi + (1/2) log |Cov| + log joint at the
/// componentwise posterior median.
inline ModelEvidence laplace_metropolis(const Eigen::MatrixXd& draws,
                                        const std::function<double(const Eigen::VectorXd&)>&
                                            log_joint_at) {
  const Eigen::Index G = draws.rows();
  const Eigen::Index P = draws.cols();
  if (G < 10 * P)
    throw data_error("laplace_metropolis: chain length " + std::to_string(G) +
                     " below 10 x P = " + std::to_string(10 * P));

  ModelEvidence ev;
  ev.P = int(P);
  ev.center.resize(P);
  std::vector<double> col(static_cast<std::size_t>(G));
  for (Eigen::Index j = 0; j < P; ++j) {
    for (Eigen::Index g = 0; g < G; ++g) col[std::size_t(g)] = draws(g, j);
    std::nth_element(col.begin(), col.begin() + G / 2, col.end());
    double med = col[std::size_t(G / 2)];
    if (G % 2 == 0) {
      std::nth_element(col.begin(), col.begin() + (G / 2 - 1), col.end());
      med = 0.5 * (med + col[std::size_t(G / 2 - 1)]);
    }
    ev.center[j] = med;
  }

  const Eigen::RowVectorXd mean = draws.colwise().mean();
  const Eigen::MatrixXd centered = draws.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / double(G - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw numeric_error("laplace_metropolis: eigensolver failed");
  const double min_eig = es.eigenvalues().minCoeff();
  const double max_eig = es.eigenvalues().maxCoeff();
  if (!(min_eig > 1e-12 * std::max(1.0, max_eig)))
    throw numeric_error("laplace_metropolis: posterior covariance rank deficient, eigenvalue " +
                        std::to_string(min_eig));
  ev.log_det_cov = es.eigenvalues().array().log().sum();

  ev.log_evidence = 0.5 * double(P) * std::log(2.0 * M_PI) + 0.5 * ev.log_det_cov +
                    log_joint_at(ev.center);
  return ev;
}

namespace detail {

// Stacked coordinates for Models 1-2: vec(B) row-major, log-Cholesky of
// Sigma_theta, then theta_i in chain column order. Model 3 stacks mu only.
inline Eigen::MatrixXd stack_chain(const PosteriorChain& chain) {
  const Eigen::Index G = chain.length();
  const Eigen::Index p = chain.p(), q = chain.q();
  const Eigen::Index N = Eigen::Index(chain.storm_ids.size());
  if (chain.model_id == 3) {
    Eigen::MatrixXd out(G, p);
    for (Eigen::Index g = 0; g < G; ++g) out.row(g) = chain.B[std::size_t(g)].col(0).transpose();
    return out;
  }
  const Eigen::Index P = p * q + p * (p + 1) / 2 + p * N;
  Eigen::MatrixXd out(G, P);
  for (Eigen::Index g = 0; g < G; ++g) {
    Eigen::Index k = 0;
    for (Eigen::Index r = 0; r < p; ++r)
      for (Eigen::Index c = 0; c < q; ++c) out(g, k++) = chain.B[std::size_t(g)](r, c);
    const Eigen::VectorXd sc = log_chol_coords(chain.Sigma[std::size_t(g)]);
    for (Eigen::Index j = 0; j < sc.size(); ++j) out(g, k++) = sc[j];
    for (Eigen::Index i = 0; i < N; ++i)
      for (Eigen::Index r = 0; r < p; ++r) out(g, k++) = chain.thetas[std::size_t(g)](r, i);
  }
  return out;
}

} // namespace detail

/// Evidence for one fitted model regime: the reduced likelihood
/// prod_i N(theta_hat_i; theta_i, H_i^-1) with the hierarchy's priors,
/// evaluated through the Laplace-Metropolis estimator on the chain.
inline ModelEvidence model_evidence(const PosteriorChain& chain,
                                    const std::vector<SummaryVec>& summaries,
                                    const DesignSpec& design, const HyperPrior& prior) {
  const Eigen::Index p = chain.p();
  const Eigen::Index N = Eigen::Index(chain.storm_ids.size());
  if (design.model_id != chain.model_id)
    throw data_error("model_evidence: chain and design disagree on model_id");

  // summaries in chain column order
  std::vector<const SummaryVec*> by_col;
  for (const auto& id : chain.storm_ids) {
    const SummaryVec* found = nullptr;
    for (const auto& s : summaries)
      if (s.storm_id == id) found = &s;
    if (!found) throw data_error("model_evidence: chain storm '" + id + "' missing from summaries");
    by_col.push_back(found);
  }

  // per-storm Gaussian pieces of the reduced likelihood
  std::vector<Eigen::LLT<Eigen::MatrixXd>> Hinv_llt;
  for (std::size_t i = 0; i < by_col.size(); ++i) {
    Eigen::LLT<Eigen::MatrixXd> hllt(by_col[i]->H);
    if (hllt.info() != Eigen::Success)
      throw numeric_error("model_evidence: storm information not positive definite");
    Hinv_llt.push_back(Eigen::LLT<Eigen::MatrixXd>(
        hllt.solve(Eigen::MatrixXd::Identity(p, p))));
  }

  const int q = design.q();
  Eigen::MatrixXd X(q, N);
  for (Eigen::Index i = 0; i < N; ++i) X.col(i) = design.x_for(by_col[std::size_t(i)]->region);

  auto log_joint = [&](const Eigen::VectorXd& psi) {
    double ll = 0.0;
    if (chain.model_id == 3) {
      for (std::size_t i = 0; i < by_col.size(); ++i)
        ll += detail::log_mvn_pdf(by_col[i]->theta_hat, psi, Hinv_llt[i]);
      return ll; // flat prior on mu
    }
    Eigen::Index k = 0;
    Eigen::MatrixXd B(p, q);
    for (Eigen::Index r = 0; r < p; ++r)
      for (Eigen::Index c = 0; c < q; ++c) B(r, c) = psi[k++];
    const Eigen::VectorXd sc = psi.segment(k, p * (p + 1) / 2);
    k += p * (p + 1) / 2;
    const Eigen::MatrixXd Sigma = detail::from_log_chol(sc, p);
    Eigen::LLT<Eigen::MatrixXd> sllt(Sigma);
    if (sllt.info() != Eigen::Success) return -1e300;
    double lp = detail::log_iw_pdf(Sigma, prior.nu0, prior.S0) + detail::log_chol_jacobian(sc, p);
    for (Eigen::Index i = 0; i < N; ++i) {
      const Eigen::VectorXd theta = psi.segment(k, p);
      k += p;
      ll += detail::log_mvn_pdf(by_col[std::size_t(i)]->theta_hat, theta, Hinv_llt[std::size_t(i)]);
      lp += detail::log_mvn_pdf(theta, B * X.col(i), sllt);
    }
    return ll + lp;
  };

  ModelEvidence ev = laplace_metropolis(detail::stack_chain(chain), log_joint);
  ev.model_id = chain.model_id;
  return ev;
}

/// Evidence table CSV: model_id, P, log_evidence.
inline void write_evidence_csv(const std::vector<ModelEvidence>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot open for writing: " + path);
  out << "model_id,P,log_evidence\n";
  char buf[40];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.log_evidence);
    out << r.model_id << ',' << r.P << ',' << buf << "\n";
  }
}

} // namespace stormuq

#endif
