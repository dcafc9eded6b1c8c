#ifndef STORMUQ_HIER_HPP
#define STORMUQ_HIER_HPP

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "stormuq/covariance.hpp"
#include "stormuq/mle.hpp"
#include "stormuq/rng.hpp"
#include "stormuq/simulate.hpp"

namespace stormuq {

/// Dimension-generic storm reduction consumed by the Gibbs sampler
/// (p = 2 for the spatial models, p = 1 for the nonspatial variant).
struct SummaryVec {
  std::string storm_id;
  Region region = Region::Atlantic;
  int n_points = 0;
  Eigen::VectorXd theta_hat;
  Eigen::MatrixXd H;
};

inline SummaryVec to_summary_vec(const StormSummary& s) {
  SummaryVec v;
  v.storm_id = s.storm_id;
  v.region = s.region;
  v.n_points = s.n_points;
  v.theta_hat = Eigen::Vector2d(s.theta_hat.t1, s.theta_hat.t2);
  v.H = s.H;
  return v;
}

inline std::vector<SummaryVec> to_summary_vecs(const std::vector<StormSummary>& in) {
  std::vector<SummaryVec> out;
  out.reserve(in.size());
  for (const auto& s : in) out.push_back(to_summary_vec(s));
  return out;
}

/// Inverse-Wishart hyperprior IW(nu0, S0) for Sigma_theta.
struct HyperPrior {
  double nu0 = 3.0;
  Eigen::MatrixXd S0;
};

/// Empirical-Bayes scale: S0 = nu0 * sample covariance of the MLE rows
/// (divisor N-1).
inline HyperPrior empirical_bayes_s0(const std::vector<SummaryVec>& summaries, double nu0) {
  const int N = int(summaries.size());
  if (N < 3) throw data_error("empirical_bayes_s0: need at least 3 storms");
  const Eigen::Index p = summaries.front().theta_hat.size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(p);
  for (const auto& s : summaries) mean += s.theta_hat;
  mean /= double(N);
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(p, p);
  for (const auto& s : summaries) {
    const Eigen::VectorXd d = s.theta_hat - mean;
    C += d * d.transpose();
  }
  C /= double(N - 1);
  if (C.llt().info() != Eigen::Success)
    throw data_error("empirical_bayes_s0: sample covariance of the MLEs is singular "
                     "(all theta_hat identical?)");
  return HyperPrior{nu0, nu0 * C};
}

inline HyperPrior empirical_bayes_s0(const std::vector<StormSummary>& summaries, double nu0) {
  return empirical_bayes_s0(to_summary_vecs(summaries), nu0);
}

/// Mean-structure regimes for theta_i.
///   Model 1: x_i = (1, 1{Florida}, 1{Gulf}), q = 3
///   Model 2: x_i = 1, q = 1 (common mean mu_theta)
///   Model 3: theta_i = mu_theta exactly, no Sigma_theta hierarchy
struct DesignSpec {
  int model_id = 2;

  int q() const { return model_id == 1 ? 3 : 1; }

  Eigen::VectorXd x_for(Region r) const {
    if (model_id == 1) {
      Eigen::Vector3d x(1.0, 0.0, 0.0);
      if (r == Region::Florida) x[1] = 1.0;
      if (r == Region::Gulf) x[2] = 1.0;
      return x;
    }
    return Eigen::VectorXd::Ones(1);
  }
};

inline DesignSpec design_for_model(int model_id) {
  if (model_id < 1 || model_id > 3) throw data_error("model_id must be 1, 2 or 3");
  return DesignSpec{model_id};
}

/// Retained draws of (B, Sigma_theta, theta_1..N). For Model 3 the
/// Sigma_theta draws are identically zero and every theta_i equals mu_theta.
struct PosteriorChain {
  int model_id = 2;
  std::uint64_t seed = 0;
  int burn_in = 0;
  std::vector<std::string> storm_ids;
  std::vector<Eigen::MatrixXd> B;      // p x q
  std::vector<Eigen::MatrixXd> Sigma;  // p x p
  std::vector<Eigen::MatrixXd> thetas; // p x N

  int length() const { return int(B.size()); }
  Eigen::Index p() const { return B.empty() ? 0 : B.front().rows(); }
  Eigen::Index q() const { return B.empty() ? 0 : B.front().cols(); }
};

namespace detail {

// Substream tags for the Gibbs scan.
inline constexpr std::uint64_t kStreamTheta = 0x7468657461ULL;
inline constexpr std::uint64_t kStreamSigma = 0x7369676d61ULL;
inline constexpr std::uint64_t kStreamB = 0x42ULL;

inline Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& S, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success)
    throw numeric_error(std::string(what) + ": matrix not positive definite");
  return llt.solve(Eigen::MatrixXd::Identity(S.rows(), S.cols()));
}

} // namespace detail

/// One draw from the theta_i full conditional
///   N((H_i + Sigma^-1)^-1 (H_i theta_hat_i + Sigma^-1 B x_i), (H_i + Sigma^-1)^-1).
inline Eigen::VectorXd sample_theta_i(const Eigen::VectorXd& theta_hat, const Eigen::MatrixXd& H,
                                      const Eigen::MatrixXd& B, const Eigen::VectorXd& x,
                                      const Eigen::MatrixXd& Sigma, Rng& rng) {
  const Eigen::MatrixXd Sinv = detail::spd_inverse(Sigma, "sample_theta_i: Sigma_theta");
  const Eigen::MatrixXd P = H + Sinv;
  Eigen::LLT<Eigen::MatrixXd> llt(P);
  if (llt.info() != Eigen::Success)
    throw numeric_error("sample_theta_i: precision sum not positive definite");
  const Eigen::VectorXd mean = llt.solve(H * theta_hat + Sinv * (B * x));
  // x = mean + L^-T z has covariance P^-1
  const Eigen::VectorXd z = standard_normal_vector(theta_hat.size(), rng);
  return mean + llt.matrixL().transpose().solve(z);
}

/// One inverse-Wishart draw from the Sigma_theta full conditional
///   IW(N + nu0, sum_i (theta_i - B x_i)(theta_i - B x_i)^T + S0),
/// via the Bartlett construction on the inverted scale.
inline Eigen::MatrixXd sample_sigma_theta(const Eigen::MatrixXd& thetas, const Eigen::MatrixXd& B,
                                          const Eigen::MatrixXd& X, const HyperPrior& prior,
                                          Rng& rng) {
  const Eigen::Index p = thetas.rows();
  const Eigen::Index N = thetas.cols();
  Eigen::MatrixXd S = prior.S0;
  for (Eigen::Index i = 0; i < N; ++i) {
    const Eigen::VectorXd r = thetas.col(i) - B * X.col(i);
    S += r * r.transpose();
  }
  const double df = double(N) + prior.nu0;

  const Eigen::MatrixXd Sinv = detail::spd_inverse(S, "sample_sigma_theta: scale");
  Eigen::LLT<Eigen::MatrixXd> llt(Sinv);
  if (llt.info() != Eigen::Success)
    throw numeric_error("sample_sigma_theta: inverted scale not positive definite");
  const Eigen::MatrixXd C = llt.matrixL();

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    A(j, j) = std::sqrt(rng.chi_square(df - double(j)));
    for (Eigen::Index i = j + 1; i < p; ++i) A(i, j) = rng.normal();
  }
  const Eigen::MatrixXd W = (C * A) * (C * A).transpose(); // Wishart(df, S^-1)
  const Eigen::MatrixXd draw = detail::spd_inverse(W, "sample_sigma_theta: Wishart draw");
  return 0.5 * (draw + draw.transpose());
}

/// One matrix-normal draw from the B full conditional
///   MN((sum theta_i x_i^T)(sum x_i x_i^T)^-1, Sigma_theta, (sum x_i x_i^T)^-1),
/// constructed as M + L Z K^T with L L^T = Sigma_theta, K K^T = (sum x x^T)^-1.
inline Eigen::MatrixXd sample_B(const Eigen::MatrixXd& thetas, const Eigen::MatrixXd& X,
                                const Eigen::MatrixXd& Sigma, Rng& rng) {
  const Eigen::Index p = thetas.rows();
  const Eigen::Index q = X.rows();
  const Eigen::MatrixXd XXt = X * X.transpose();
  Eigen::LLT<Eigen::MatrixXd> xllt(XXt);
  if (xllt.info() != Eigen::Success)
    throw data_error("sample_B: design deficiency, sum x_i x_i^T is singular "
                     "(a regression column has no storms)");
  const Eigen::MatrixXd V = xllt.solve(Eigen::MatrixXd::Identity(q, q));
  const Eigen::MatrixXd M = (thetas * X.transpose()) * V;

  Eigen::LLT<Eigen::MatrixXd> sllt(Sigma);
  if (sllt.info() != Eigen::Success) throw numeric_error("sample_B: Sigma_theta not positive definite");
  Eigen::LLT<Eigen::MatrixXd> vllt(V);
  if (vllt.info() != Eigen::Success) throw numeric_error("sample_B: column covariance not positive definite");

  Eigen::MatrixXd Z(p, q);
  for (Eigen::Index r = 0; r < p; ++r)
    for (Eigen::Index c = 0; c < q; ++c) Z(r, c) = rng.normal();
  return M + Eigen::MatrixXd(sllt.matrixL()) * Z * Eigen::MatrixXd(vllt.matrixL()).transpose();
}

/// Gibbs sampler over (theta_1..N, Sigma_theta, B) with the reduced
/// likelihoods N(theta_hat_i; theta_i, H_i^-1). Scan order per iteration:
/// every theta_i, then Sigma_theta, then B. Each update draws from its own
/// substream keyed by (seed, stage, iteration, storm id hash), and storms
/// are processed in storm-id order, so chains are bit-reproducible and
/// independent of input ordering. Chain columns follow storm-id order.
inline PosteriorChain gibbs_run(std::vector<SummaryVec> summaries, const DesignSpec& design,
                                const HyperPrior& prior, int iters, int burn_in,
                                std::uint64_t seed) {
  std::sort(summaries.begin(), summaries.end(),
            [](const SummaryVec& a, const SummaryVec& b) { return a.storm_id < b.storm_id; });
  const int N = int(summaries.size());
  if (N < 1) throw data_error("gibbs_run: no summaries");
  if (design.model_id != 3 && N < 2)
    throw data_error("gibbs_run: models 1 and 2 need at least 2 storms");
  if (iters <= 0 || burn_in < 0) throw data_error("gibbs_run: invalid iteration counts");
  const Eigen::Index p = summaries.front().theta_hat.size();

  PosteriorChain chain;
  chain.model_id = design.model_id;
  chain.seed = seed;
  chain.burn_in = burn_in;
  chain.B.reserve(iters);
  chain.Sigma.reserve(iters);
  chain.thetas.reserve(iters);
  for (const auto& s : summaries) chain.storm_ids.push_back(s.storm_id);

  if (design.model_id == 3) {
    // theta_i = mu_theta exactly: the posterior for mu_theta is Gaussian with
    // precision sum(H_i); draws are independent across iterations.
    Eigen::MatrixXd Hsum = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
    for (const auto& s : summaries) {
      Hsum += s.H;
      b += s.H * s.theta_hat;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(Hsum);
    if (llt.info() != Eigen::Success)
      throw numeric_error("gibbs_run: sum of storm informations not positive definite");
    const Eigen::VectorXd mean = llt.solve(b);
    for (int g = 0; g < burn_in + iters; ++g) {
      if (g < burn_in) continue;
      Rng rng(seed, {detail::kStreamTheta, std::uint64_t(g)});
      const Eigen::VectorXd z = standard_normal_vector(p, rng);
      const Eigen::VectorXd mu = mean + llt.matrixL().transpose().solve(z);
      chain.B.push_back(mu);
      chain.Sigma.push_back(Eigen::MatrixXd::Zero(p, p));
      Eigen::MatrixXd th(p, N);
      th.colwise() = mu;
      chain.thetas.push_back(th);
    }
    return chain;
  }

  const int q = design.q();
  Eigen::MatrixXd X(q, N);
  for (int i = 0; i < N; ++i) X.col(i) = design.x_for(summaries[std::size_t(i)].region);

  // Initialization: theta_i at the MLEs, B at the least-squares fit of the
  // MLEs on X, Sigma_theta at the MLE sample covariance.
  Eigen::MatrixXd thetas(p, N);
  for (int i = 0; i < N; ++i) thetas.col(i) = summaries[std::size_t(i)].theta_hat;
  Eigen::MatrixXd XXt = X * X.transpose();
  Eigen::LLT<Eigen::MatrixXd> xllt(XXt);
  if (xllt.info() != Eigen::Success)
    throw data_error("gibbs_run: design deficiency, a regression column has no storms");
  Eigen::MatrixXd B = (thetas * X.transpose()) * xllt.solve(Eigen::MatrixXd::Identity(q, q));
  Eigen::MatrixXd Sigma = empirical_bayes_s0(summaries, 1.0).S0; // plain Cov(theta_hat)

  for (int g = 0; g < burn_in + iters; ++g) {
    try {
      for (int i = 0; i < N; ++i) {
        const auto& s = summaries[std::size_t(i)];
        Rng rng(seed, {detail::kStreamTheta, std::uint64_t(g), fnv1a64(s.storm_id)});
        thetas.col(i) = sample_theta_i(s.theta_hat, s.H, B, X.col(i), Sigma, rng);
      }
      {
        Rng rng(seed, {detail::kStreamSigma, std::uint64_t(g)});
        Sigma = sample_sigma_theta(thetas, B, X, prior, rng);
      }
      {
        Rng rng(seed, {detail::kStreamB, std::uint64_t(g)});
        B = sample_B(thetas, X, Sigma, rng);
      }
    } catch (const numeric_error& e) {
      throw numeric_error("gibbs_run: iteration " + std::to_string(g) + ": " + e.what());
    }
    if (g >= burn_in) {
      chain.B.push_back(B);
      chain.Sigma.push_back(Sigma);
      chain.thetas.push_back(thetas);
    }
  }
  return chain;
}

inline PosteriorChain gibbs_run(const std::vector<StormSummary>& summaries,
                                const DesignSpec& design, const HyperPrior& prior, int iters,
                                int burn_in, std::uint64_t seed) {
  return gibbs_run(to_summary_vecs(summaries), design, prior, iters, burn_in, seed);
}

// --- chain persistence -----------------------------------------------------
//
// CSV, one row per retained draw. First line is a schema/seed stamp, second
// the column header: iter, B row-major, Sigma upper triangle, then per-storm
// theta components. Reals carry 17 significant digits (bit-exact reload).

inline void write_chain_csv(const PosteriorChain& chain, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot open for writing: " + path);
  const Eigen::Index p = chain.p(), q = chain.q();
  out << "# stormuq-chain v1 model=" << chain.model_id << " seed=" << chain.seed
      << " burnin=" << chain.burn_in << "\n";
  out << "iter";
  for (Eigen::Index r = 0; r < p; ++r)
    for (Eigen::Index c = 0; c < q; ++c) out << ",B[" << r << "][" << c << "]";
  for (Eigen::Index r = 0; r < p; ++r)
    for (Eigen::Index c = r; c < p; ++c) out << ",SigmaTheta[" << r << "][" << c << "]";
  for (const auto& id : chain.storm_ids)
    for (Eigen::Index r = 0; r < p; ++r) out << ",theta[" << id << "][" << r << "]";
  out << "\n";
  char buf[40];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << ',' << buf;
  };
  for (int g = 0; g < chain.length(); ++g) {
    out << g;
    for (Eigen::Index r = 0; r < p; ++r)
      for (Eigen::Index c = 0; c < q; ++c) fmt(chain.B[std::size_t(g)](r, c));
    for (Eigen::Index r = 0; r < p; ++r)
      for (Eigen::Index c = r; c < p; ++c) fmt(chain.Sigma[std::size_t(g)](r, c));
    for (std::size_t i = 0; i < chain.storm_ids.size(); ++i)
      for (Eigen::Index r = 0; r < p; ++r) fmt(chain.thetas[std::size_t(g)](r, Eigen::Index(i)));
    out << "\n";
  }
  if (!out) throw data_error("write failed: " + path);
}

inline PosteriorChain read_chain_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open chain: " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("# stormuq-chain v1", 0) != 0)
    throw data_error(path + ": missing chain schema stamp");
  PosteriorChain chain;
  {
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) {
      if (tok.rfind("model=", 0) == 0) chain.model_id = std::stoi(tok.substr(6));
      if (tok.rfind("seed=", 0) == 0) chain.seed = std::stoull(tok.substr(5));
      if (tok.rfind("burnin=", 0) == 0) chain.burn_in = std::stoi(tok.substr(7));
    }
  }
  if (!std::getline(in, line)) throw data_error(path + ": missing column header");
  std::vector<std::string> cols;
  {
    std::istringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) cols.push_back(tok);
  }
  Eigen::Index p = 0, q = 0;
  for (const auto& c : cols) {
    if (c.rfind("B[", 0) == 0) {
      const Eigen::Index r = std::stol(c.substr(2));
      const Eigen::Index cc = std::stol(c.substr(c.find("][") + 2));
      p = std::max(p, r + 1);
      q = std::max(q, cc + 1);
    } else if (c.rfind("theta[", 0) == 0) {
      const std::string id = c.substr(6, c.rfind("][") - 6);
      if (chain.storm_ids.empty() || chain.storm_ids.back() != id) chain.storm_ids.push_back(id);
    }
  }
  if (p == 0) throw data_error(path + ": no B columns in header");
  const std::size_t N = chain.storm_ids.size();
  const std::size_t expected = 1 + std::size_t(p * q) + std::size_t(p * (p + 1) / 2) + N * std::size_t(p);
  int lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string tok;
    std::vector<double> vals;
    while (std::getline(ss, tok, ',')) vals.push_back(detail::parse_real(tok, path, lineno));
    if (vals.size() != expected)
      throw data_error(path + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(expected) + " columns, got " + std::to_string(vals.size()));
    std::size_t k = 1;
    Eigen::MatrixXd B(p, q);
    for (Eigen::Index r = 0; r < p; ++r)
      for (Eigen::Index c = 0; c < q; ++c) B(r, c) = vals[k++];
    Eigen::MatrixXd S(p, p);
    for (Eigen::Index r = 0; r < p; ++r)
      for (Eigen::Index c = r; c < p; ++c) S(r, c) = S(c, r) = vals[k++];
    Eigen::MatrixXd th(p, Eigen::Index(N));
    for (std::size_t i = 0; i < N; ++i)
      for (Eigen::Index r = 0; r < p; ++r) th(r, Eigen::Index(i)) = vals[k++];
    chain.B.push_back(std::move(B));
    chain.Sigma.push_back(std::move(S));
    chain.thetas.push_back(std::move(th));
  }
  if (chain.B.empty()) throw data_error(path + ": chain has no draws");
  return chain;
}

/// Config echo written alongside each chain.
inline void write_chain_config(const PosteriorChain& chain, const HyperPrior& prior, int iters,
                               const std::string& path) {
  nlohmann::json j;
  j["schema"] = "stormuq-chain-config-v1";
  j["model_id"] = chain.model_id;
  j["seed"] = chain.seed;
  j["burn_in"] = chain.burn_in;
  j["iters"] = iters;
  j["nu0"] = prior.nu0;
  std::vector<std::vector<double>> s0(std::size_t(prior.S0.rows()));
  for (Eigen::Index r = 0; r < prior.S0.rows(); ++r)
    for (Eigen::Index c = 0; c < prior.S0.cols(); ++c) s0[std::size_t(r)].push_back(prior.S0(r, c));
  j["S0"] = s0;
  j["storm_ids"] = chain.storm_ids;
  std::ofstream out(path);
  if (!out) throw data_error("cannot open for writing: " + path);
  out << j.dump(2) << "\n";
}

} // namespace stormuq

#endif
