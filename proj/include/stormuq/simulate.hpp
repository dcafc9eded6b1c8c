#ifndef STORMUQ_SIMULATE_HPP
#define STORMUQ_SIMULATE_HPP

#include <Eigen/Dense>

#include "stormuq/covariance.hpp"
#include "stormuq/geometry.hpp"
#include "stormuq/rng.hpp"

namespace stormuq {

inline Eigen::VectorXd standard_normal_vector(Eigen::Index n, Rng& rng) {
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = rng.normal();
  return z;
}

/// Exact zero-mean Gaussian draw with covariance factor L (lower).
inline Eigen::VectorXd simulate_gp(const Eigen::LLT<Eigen::MatrixXd>& llt, Rng& rng) {
  const Eigen::Index n = llt.matrixLLT().rows();
  return llt.matrixL() * standard_normal_vector(n, rng);
}

/// Exact zero-mean exponential-covariance draw on the given distances.
inline Eigen::VectorXd simulate_gp(const Eigen::MatrixXd& D, const Theta& t, Rng& rng,
                                   double jitter = 0.0) {
  return simulate_gp(cholesky(exp_cov(D, t), jitter), rng);
}

/// n uniform points in a [0, scale]^2 square (toy geometries).
inline Coords random_scatter(int n, Rng& rng, double scale = 10.0) {
  Coords locs(n, 2);
  for (int i = 0; i < n; ++i) {
    locs(i, 0) = scale * rng.uniform();
    locs(i, 1) = scale * rng.uniform();
  }
  return locs;
}

} // namespace stormuq

#endif
