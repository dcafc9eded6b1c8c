#ifndef STORMUQ_MLE_HPP
#define STORMUQ_MLE_HPP

#include <cmath>
#include <fstream>
#include <string>

#include <Eigen/Dense>

#include "json.hpp"

#include "stormuq/covariance.hpp"
#include "stormuq/geometry.hpp"

namespace stormuq {

/// Sufficient reduction of one storm: the MLE theta_hat and the 2x2
/// information matrix H (negative expected Hessian in theta coordinates).
/// Together they stand in for the storm's full field likelihood.
struct StormSummary {
  std::string storm_id;
  Region region = Region::Atlantic;
  int n_points = 0;
  Theta theta_hat;
  Eigen::Matrix2d H = Eigen::Matrix2d::Identity();
};

struct ProfileOptions {
  double tol_log_phi = 1e-8; // absolute tolerance of the 1-D search
  double lower_factor = 0.01; // lower bracket: lower_factor * mean distance
  double upper_factor = 10.0; // upper bracket: upper_factor * max distance
  int max_iter = 200;
  double jitter = 0.0;
};

struct ProfileFit {
  Theta theta_hat;
  double log_phi = 0.0;
  double sigma2_hat = 0.0;
  double loglik = 0.0;
};

namespace detail {

// Profile log likelihood of the zero-mean model at fixed phi: sigma2 is
// maximized analytically as y'R^-1 y / n.
inline double profile_loglik(const Eigen::VectorXd& y, const Eigen::MatrixXd& D, double log_phi,
                             double jitter, double* sigma2_out = nullptr) {
  const Eigen::Index n = y.size();
  const auto llt = cholesky(exp_corr(D, std::exp(log_phi)), jitter);
  const Eigen::VectorXd z = llt.matrixL().solve(y);
  const double s2 = z.squaredNorm() / double(n);
  if (!(s2 > 0.0) || !std::isfinite(s2))
    throw numeric_error("profile_loglik: degenerate variance estimate");
  if (sigma2_out) *sigma2_out = s2;
  return -0.5 * double(n) * std::log(2.0 * M_PI) - 0.5 * double(n) * std::log(s2) -
         0.5 * log_det_from_llt(llt) - 0.5 * double(n);
}

struct BrentResult {
  double x = 0.0;
  double fx = 0.0;
};

// Brent's method (golden section with parabolic steps) maximizing f on
// [a, b] to an absolute tolerance in x.
template <class F>
BrentResult brent_maximize(F&& f, double a, double b, double tol, int max_iter) {
  constexpr double cgold = 0.3819660112501051;
  double x = a + cgold * (b - a);
  double w = x, v = x;
  double fx = -f(x), fw = fx, fv = fx;
  double d = 0.0, e = 0.0;
  for (int iter = 0; iter < max_iter; ++iter) {
    const double xm = 0.5 * (a + b);
    const double tol1 = std::max(tol, 1e-12 * std::abs(x));
    const double tol2 = 2.0 * tol1;
    if (std::abs(x - xm) <= tol2 - 0.5 * (b - a)) break;
    bool golden = true;
    if (std::abs(e) > tol1) {
      const double r = (x - w) * (fx - fv);
      double q = (x - v) * (fx - fw);
      double p = (x - v) * q - (x - w) * r;
      q = 2.0 * (q - r);
      if (q > 0.0) p = -p;
      q = std::abs(q);
      const double etemp = e;
      e = d;
      if (std::abs(p) < std::abs(0.5 * q * etemp) && p > q * (a - x) && p < q * (b - x)) {
        d = p / q;
        const double u = x + d;
        if (u - a < tol2 || b - u < tol2) d = (xm - x >= 0 ? tol1 : -tol1);
        golden = false;
      }
    }
    if (golden) {
      e = (x >= xm ? a - x : b - x);
      d = cgold * e;
    }
    const double u = (std::abs(d) >= tol1) ? x + d : x + (d >= 0 ? tol1 : -tol1);
    const double fu = -f(u);
    if (fu <= fx) {
      if (u >= x) a = x; else b = x;
      v = w; fv = fw;
      w = x; fw = fx;
      x = u; fx = fu;
    } else {
      if (u < x) a = u; else b = u;
      if (fu <= fw || w == x) {
        v = w; fv = fw;
        w = u; fw = fu;
      } else if (fu <= fv || v == x || v == w) {
        v = u; fv = fu;
      }
    }
  }
  return BrentResult{x, -fx};
}

} // namespace detail

/// Maximum likelihood for the zero-mean exponential-covariance model via the
/// profile likelihood: a 1-D Brent search over log phi with sigma2 profiled
/// out analytically at each step.
inline ProfileFit profile_mle_fit(const Eigen::VectorXd& y, const Eigen::MatrixXd& D,
                                  const ProfileOptions& opts = {}) {
  const Eigen::Index n = y.size();
  if (n < 2 || D.rows() != n || D.cols() != n)
    throw data_error("profile_mle: need n >= 2 and a matching distance matrix");
  if (y.cwiseAbs().maxCoeff() == 0.0)
    throw data_error("profile_mle: y is identically zero, sigma2 MLE undefined");

  double d_sum = 0.0, d_max = 0.0;
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index k = j + 1; k < n; ++k) {
      d_sum += D(j, k);
      d_max = std::max(d_max, D(j, k));
    }
  const double d_mean = d_sum / (0.5 * double(n) * double(n - 1));
  const double lo = std::log(opts.lower_factor * d_mean);
  const double hi = std::log(opts.upper_factor * d_max);

  auto objective = [&](double log_phi) {
    try {
      return detail::profile_loglik(y, D, log_phi, opts.jitter);
    } catch (const numeric_error&) {
      return -1e300; // inadmissible phi (correlation matrix numerically singular)
    }
  };
  const auto best = detail::brent_maximize(objective, lo, hi, opts.tol_log_phi, opts.max_iter);

  const double margin = std::max(10.0 * opts.tol_log_phi, 1e-6 * (hi - lo));
  if (best.x - lo < margin || hi - best.x < margin)
    throw numeric_error("profile_mle: optimum at search boundary, bracket [" + std::to_string(lo) +
                        ", " + std::to_string(hi) + "], log_phi = " + std::to_string(best.x));

  ProfileFit fit;
  fit.log_phi = best.x;
  fit.loglik = detail::profile_loglik(y, D, best.x, opts.jitter, &fit.sigma2_hat);
  fit.theta_hat = theta_from_lambda(Lambda{fit.sigma2_hat, std::exp(best.x)});
  return fit;
}

inline Theta profile_mle(const Eigen::VectorXd& y, const Eigen::MatrixXd& D,
                         const ProfileOptions& opts = {}) {
  return profile_mle_fit(y, D, opts).theta_hat;
}

inline Theta profile_mle(const ErrorField& ef, const ProfileOptions& opts = {}) {
  return profile_mle(ef.y, pairwise_distances(ef.locations), opts);
}

/// Expected (Fisher) information for lambda = (sigma2, phi):
///   [ n/(2 sigma2^2),          tr(R^-1 R')/(2 sigma2) ]
///   [ tr(R^-1 R')/(2 sigma2),  tr((R^-1 R')^2)/2      ]
/// with R = exp(-D/phi) and R' = R .* D/phi^2.
inline Eigen::Matrix2d fisher_information_lambda(const Eigen::MatrixXd& D, const Lambda& l,
                                                 double jitter = 0.0) {
  const Eigen::Index n = D.rows();
  const Eigen::MatrixXd R = exp_corr(D, l.phi);
  const Eigen::MatrixXd Rp = R.cwiseProduct(D) / (l.phi * l.phi);
  const auto llt = cholesky(R, jitter);
  const Eigen::MatrixXd X = llt.solve(Rp); // R^-1 R'
  const double t1 = X.trace();
  const double t2 = X.cwiseProduct(X.transpose()).sum(); // tr(X^2)
  Eigen::Matrix2d H;
  H(0, 0) = double(n) / (2.0 * l.sigma2 * l.sigma2);
  H(0, 1) = H(1, 0) = t1 / (2.0 * l.sigma2);
  H(1, 1) = 0.5 * t2;
  return H;
}

namespace detail {

// dlambda/dtheta for lambda = (sigma2, phi) = (exp(t2), exp(t2 - t1)).
inline Eigen::Matrix2d lambda_jacobian(const Lambda& l) {
  Eigen::Matrix2d K;
  K << 0.0, l.sigma2,
      -l.phi, l.phi;
  return K;
}

} // namespace detail

/// Fisher information in theta coordinates, mapped from lambda by the delta
/// method: H_theta = K^T H_lambda K with K = dlambda/dtheta.
inline Eigen::Matrix2d fisher_information(const Eigen::MatrixXd& D, const Theta& t,
                                          double jitter = 0.0) {
  const Lambda l = lambda_from_theta(t);
  const Eigen::Matrix2d K = detail::lambda_jacobian(l);
  const Eigen::Matrix2d H = K.transpose() * fisher_information_lambda(D, l, jitter) * K;
  return 0.5 * (H + H.transpose());
}

/// Exact negative observed Hessian of gp_loglik in theta coordinates,
/// assembled from the closed-form lambda derivatives of the exponential
/// model (R' = R .* D/phi^2, R'' = R' .* D/phi^2 - 2 R .* D/phi^3) and the
/// chain rule, including the gradient terms that matter away from the MLE.
/// At theta_hat it agrees with hessian_numeric to finite-difference error.
inline Eigen::Matrix2d hessian_analytic(const Eigen::VectorXd& y, const Eigen::MatrixXd& D,
                                        const Theta& t, double jitter = 0.0) {
  const Eigen::Index n = y.size();
  if (D.rows() != n || D.cols() != n) throw data_error("hessian_analytic: dimension mismatch");
  const Lambda l = lambda_from_theta(t);
  const double s2 = l.sigma2, phi = l.phi;

  const Eigen::MatrixXd R = exp_corr(D, phi);
  const Eigen::MatrixXd Dp = D / (phi * phi);
  const Eigen::MatrixXd Rp = R.cwiseProduct(Dp);
  const Eigen::MatrixXd Rpp = Rp.cwiseProduct(Dp) - 2.0 * R.cwiseProduct(D) / (phi * phi * phi);

  const auto llt = cholesky(R, jitter);
  const Eigen::VectorXd alpha = llt.solve(y); // R^-1 y
  const Eigen::MatrixXd X = llt.solve(Rp);    // R^-1 R'

  const double q0 = y.dot(alpha);
  const Eigen::VectorXd rpa = Rp * alpha;
  const double q1 = alpha.dot(rpa);
  const double q2 = alpha.dot(Rpp * alpha);
  const double q3 = rpa.dot(llt.solve(rpa));
  const double t1 = X.trace();
  const double t2 = X.cwiseProduct(X.transpose()).sum();
  const double t3 = llt.solve(Rpp).trace();

  const double l_s = -double(n) / (2.0 * s2) + q0 / (2.0 * s2 * s2);
  const double l_p = -0.5 * t1 + q1 / (2.0 * s2);
  Eigen::Matrix2d Hll;
  Hll(0, 0) = double(n) / (2.0 * s2 * s2) - q0 / (s2 * s2 * s2);
  Hll(0, 1) = Hll(1, 0) = -q1 / (2.0 * s2 * s2);
  Hll(1, 1) = -0.5 * (t3 - t2) + (q2 - 2.0 * q3) / (2.0 * s2);

  const Eigen::Matrix2d K = detail::lambda_jacobian(l);
  Eigen::Matrix2d H = K.transpose() * Hll * K;
  // second-derivative terms of the reparameterization
  H(1, 1) += l_s * s2;
  H += l_p * phi * (Eigen::Matrix2d() << 1.0, -1.0, -1.0, 1.0).finished();
  H = -H;
  return 0.5 * (H + H.transpose());
}

inline Eigen::Matrix2d hessian_analytic(const ErrorField& ef, const Theta& t) {
  return hessian_analytic(ef.y, pairwise_distances(ef.locations), t);
}

namespace detail {

// Central-difference negative Hessian of a scalar function of (t1, t2),
// symmetrized. Steps h_k = h_scale * max(1, |t_k|); exact for quadratics
// up to round-off.
template <class F>
Eigen::Matrix2d fd_neg_hessian2(F&& f, const Theta& t, double h_scale) {
  const double h1 = h_scale * std::max(1.0, std::abs(t.t1));
  const double h2 = h_scale * std::max(1.0, std::abs(t.t2));
  if (!(h1 > 0.0) || !(h2 > 0.0) || !std::isfinite(h1) || !std::isfinite(h2))
    throw numeric_error("fd_neg_hessian2: step underflow/overflow");
  auto eval = [&](double a, double b) {
    const double v = f(a, b);
    if (!std::isfinite(v))
      throw numeric_error("fd_neg_hessian2: non-finite value at stencil point");
    return v;
  };
  const double f0 = eval(t.t1, t.t2);
  Eigen::Matrix2d H;
  H(0, 0) = (eval(t.t1 + h1, t.t2) - 2.0 * f0 + eval(t.t1 - h1, t.t2)) / (h1 * h1);
  H(1, 1) = (eval(t.t1, t.t2 + h2) - 2.0 * f0 + eval(t.t1, t.t2 - h2)) / (h2 * h2);
  H(0, 1) = H(1, 0) = (eval(t.t1 + h1, t.t2 + h2) - eval(t.t1 + h1, t.t2 - h2) -
                       eval(t.t1 - h1, t.t2 + h2) + eval(t.t1 - h1, t.t2 - h2)) /
                      (4.0 * h1 * h2);
  H = -H;
  return 0.5 * (H + H.transpose());
}

} // namespace detail

/// Central finite-difference negative Hessian of gp_loglik in theta.
inline Eigen::Matrix2d hessian_numeric(const Eigen::VectorXd& y, const Eigen::MatrixXd& D,
                                       const Theta& t, double h_scale = 1e-4,
                                       double jitter = 0.0) {
  return detail::fd_neg_hessian2(
      [&](double a, double b) { return gp_loglik(y, D, Theta{a, b}, nullptr, jitter); }, t,
      h_scale);
}

inline Eigen::Matrix2d hessian_numeric(const ErrorField& ef, const Theta& t) {
  return hessian_numeric(ef.y, pairwise_distances(ef.locations), t);
}

/// Full per-storm reduction: profile MLE plus the Fisher information at the
/// optimum (the expected Hessian is what downstream pooling consumes).
inline StormSummary summarize_storm(const ErrorField& ef, const ProfileOptions& opts = {}) {
  const Eigen::MatrixXd D = pairwise_distances(ef.locations);
  StormSummary s;
  s.storm_id = ef.storm_id;
  s.region = ef.region;
  s.n_points = int(ef.n_points());
  s.theta_hat = profile_mle(ef.y, D, opts);
  s.H = fisher_information(D, s.theta_hat, opts.jitter);
  return s;
}

// --- summary JSON: {storm_id, region, n_points, theta_hat, H} ---

inline void write_summary(const StormSummary& s, const std::string& path) {
  nlohmann::json j;
  j["storm_id"] = s.storm_id;
  j["region"] = to_string(s.region);
  j["n_points"] = s.n_points;
  j["theta_hat"] = {s.theta_hat.t1, s.theta_hat.t2};
  j["H"] = {{s.H(0, 0), s.H(0, 1)}, {s.H(1, 0), s.H(1, 1)}};
  std::ofstream out(path);
  if (!out) throw data_error("cannot open for writing: " + path);
  out << j.dump(2) << "\n";
}

inline StormSummary read_summary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open summary: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw data_error(path + ": invalid JSON: " + e.what());
  }
  StormSummary s;
  try {
    s.storm_id = j.at("storm_id").get<std::string>();
    s.region = region_from_string(j.at("region").get<std::string>());
    s.n_points = j.at("n_points").get<int>();
    s.theta_hat = Theta{j.at("theta_hat").at(0).get<double>(), j.at("theta_hat").at(1).get<double>()};
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 2; ++c) s.H(r, c) = j.at("H").at(r).at(c).get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw data_error(path + ": malformed summary: " + e.what());
  }
  return s;
}

} // namespace stormuq

#endif
