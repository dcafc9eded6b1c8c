#ifndef STORMUQ_COVARIANCE_HPP
#define STORMUQ_COVARIANCE_HPP

#include <cmath>
#include <optional>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "stormuq/common.hpp"

namespace stormuq {

/// Covariance parameters on the natural scale: marginal variance sigma2
/// (sqrt-mm^2) and range scale phi (grid distance units).
struct Lambda {
  double sigma2 = 1.0;
  double phi = 1.0;
};

/// Reparameterized covariance parameters t1 = log(sigma2/phi),
/// t2 = log(sigma2). On this scale the MLE sampling distribution is close
/// to Gaussian and its components are nearly uncorrelated.
struct Theta {
  double t1 = 0.0;
  double t2 = 0.0;
};

inline Theta theta_from_lambda(const Lambda& l) {
  if (!(l.sigma2 > 0.0) || !std::isfinite(l.sigma2))
    throw data_error("theta_from_lambda: sigma2 must be positive and finite");
  if (!(l.phi > 0.0) || !std::isfinite(l.phi))
    throw data_error("theta_from_lambda: phi must be positive and finite");
  return Theta{std::log(l.sigma2 / l.phi), std::log(l.sigma2)};
}

inline Lambda lambda_from_theta(const Theta& t) {
  if (!std::isfinite(t.t1) || !std::isfinite(t.t2))
    throw data_error("lambda_from_theta: non-finite theta");
  return Lambda{std::exp(t.t2), std::exp(t.t2 - t.t1)};
}

/// Correlation matrix exp(-D/phi).
inline Eigen::MatrixXd exp_corr(const Eigen::MatrixXd& D, double phi) {
  if (!(phi > 0.0)) throw data_error("exp_corr: phi must be > 0");
  return (-D / phi).array().exp();
}

/// Exponential covariance sigma2 * exp(-D/phi); diagonal equals sigma2.
inline Eigen::MatrixXd exp_cov(const Eigen::MatrixXd& D, const Theta& t) {
  const Lambda l = lambda_from_theta(t);
  return l.sigma2 * exp_corr(D, l.phi);
}

namespace detail {

// 1-based index of the first non-positive-definite leading minor, found by
// an unblocked Cholesky sweep. Only runs on the error path.
inline int first_failing_minor(const Eigen::MatrixXd& S) {
  const Eigen::Index n = S.rows();
  Eigen::MatrixXd L = S;
  for (Eigen::Index k = 0; k < n; ++k) {
    double d = L(k, k);
    for (Eigen::Index j = 0; j < k; ++j) d -= L(k, j) * L(k, j);
    if (!(d > 0.0) || !std::isfinite(d)) return int(k) + 1;
    const double lkk = std::sqrt(d);
    L(k, k) = lkk;
    for (Eigen::Index i = k + 1; i < n; ++i) {
      double s = L(i, k);
      for (Eigen::Index j = 0; j < k; ++j) s -= L(i, j) * L(k, j);
      L(i, k) = s / lkk;
    }
  }
  return 0;
}

} // namespace detail

/// Cholesky factorization with optional diagonal jitter (default 0, the
/// model has no nugget). Failure reports the first bad leading minor.
inline Eigen::LLT<Eigen::MatrixXd> cholesky(const Eigen::MatrixXd& S, double jitter = 0.0) {
  Eigen::MatrixXd A = S;
  if (jitter != 0.0) A.diagonal().array() += jitter;
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success) {
    const int k = detail::first_failing_minor(A);
    throw numeric_error("cholesky: matrix not positive definite (leading minor " +
                        std::to_string(k) + " of " + std::to_string(S.rows()) + ")");
  }
  return llt;
}

inline double log_det_from_llt(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

/// Gaussian log density of y under N(mean, Sigma) given the Cholesky factor
/// of Sigma; the log-determinant comes from the factor diagonal and the
/// quadratic form from a triangular solve.
inline double gaussian_loglik_chol(const Eigen::VectorXd& y,
                                   const Eigen::LLT<Eigen::MatrixXd>& llt,
                                   const Eigen::VectorXd* mean = nullptr) {
  const Eigen::Index n = y.size();
  Eigen::VectorXd r = mean ? (y - *mean).eval() : y;
  Eigen::VectorXd z = llt.matrixL().solve(r);
  return -0.5 * (double(n) * std::log(2.0 * M_PI) + log_det_from_llt(llt) + z.squaredNorm());
}

/// Log likelihood of a Gaussian process with exponential covariance at t,
/// computed via Cholesky (never through an explicit inverse).
inline double gp_loglik(const Eigen::VectorXd& y, const Eigen::MatrixXd& D, const Theta& t,
                        const Eigen::VectorXd* mean = nullptr, double jitter = 0.0) {
  if (y.size() != D.rows() || D.rows() != D.cols())
    throw data_error("gp_loglik: dimension mismatch between y and D");
  if (mean && mean->size() != y.size())
    throw data_error("gp_loglik: mean vector length mismatch");
  const auto llt = cholesky(exp_cov(D, t), jitter);
  return gaussian_loglik_chol(y, llt, mean);
}

} // namespace stormuq

#endif
