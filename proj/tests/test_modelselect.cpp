#include <catch2/catch.hpp>

#include "stormuq/modelselect.hpp"

using namespace stormuq;

namespace {

// Synthetic summaries drawn from a known hierarchy: theta_i ~ N(B x_i,
// Sigma_true), theta_hat_i ~ N(theta_i, H_i^-1). No field-level MLE needed.
std::vector<SummaryVec> hierarchy_summaries(const Eigen::MatrixXd& B_true,
                                            const Eigen::Matrix2d& Sigma_true, int N,
                                            std::uint64_t seed) {
  std::vector<SummaryVec> out;
  Rng rng(seed);
  const Eigen::LLT<Eigen::MatrixXd> sllt(Sigma_true);
  const Region regions[3] = {Region::Atlantic, Region::Florida, Region::Gulf};
  DesignSpec d1 = design_for_model(1);
  for (int i = 0; i < N; ++i) {
    SummaryVec s;
    s.storm_id = "synth" + std::string(i < 10 ? "0" : "") + std::to_string(i);
    s.region = regions[i % 3];
    s.n_points = 200;
    const Eigen::VectorXd x3 = d1.x_for(s.region);
    const Eigen::VectorXd mean = B_true * x3;
    Eigen::VectorXd theta = mean + Eigen::MatrixXd(sllt.matrixL()) * standard_normal_vector(2, rng);
    s.H.resize(2, 2);
    s.H << 120.0 + 30.0 * rng.uniform(), 5.0, 5.0, 90.0 + 20.0 * rng.uniform();
    const Eigen::LLT<Eigen::MatrixXd> hllt(s.H);
    // theta_hat = theta + H^{-1/2} z
    s.theta_hat =
        theta + hllt.matrixL().transpose().solve(standard_normal_vector(2, rng));
    out.push_back(std::move(s));
  }
  return out;
}

} // namespace

TEST_CASE("laplace_metropolis recovers a conjugate normal-mean marginal") {
  // y_i ~ N(mu, s2) with known s2, prior mu ~ N(0, tau2); the marginal
  // likelihood is the dense Gaussian N(y; 0, s2 I + tau2 11').
  const int m = 12;
  const double s2 = 1.5, tau2 = 0.8;
  Rng data_rng(401);
  Eigen::VectorXd y(m);
  const double mu_true = 0.6;
  for (int i = 0; i < m; ++i) y[i] = mu_true + std::sqrt(s2) * data_rng.normal();

  const Eigen::MatrixXd M =
      s2 * Eigen::MatrixXd::Identity(m, m) + tau2 * Eigen::MatrixXd::Ones(m, m);
  const double closed_form =
      -0.5 * (m * std::log(2.0 * M_PI) + std::log(M.determinant()) + y.dot(M.inverse() * y));

  const double vn = 1.0 / (m / s2 + 1.0 / tau2);
  const double mn = vn * y.sum() / s2;
  const int G = 100000;
  Eigen::MatrixXd draws(G, 1);
  Rng rng(403);
  for (int g = 0; g < G; ++g) draws(g, 0) = mn + std::sqrt(vn) * rng.normal();

  auto log_joint = [&](const Eigen::VectorXd& psi) {
    const double mu = psi[0];
    double ll = -0.5 * m * std::log(2.0 * M_PI * s2) - 0.5 * (y.array() - mu).square().sum() / s2;
    ll += -0.5 * std::log(2.0 * M_PI * tau2) - 0.5 * mu * mu / tau2;
    return ll;
  };

  const ModelEvidence ev = laplace_metropolis(draws, log_joint);
  REQUIRE(ev.P == 1);
  REQUIRE(ev.log_evidence == Approx(closed_form).margin(0.05));

  SECTION("thinning the chain moves the estimate by less than 0.1 log units") {
    for (int k : {5, 10}) {
      Eigen::MatrixXd thin(G / k, 1);
      for (int g = 0; g < G / k; ++g) thin(g, 0) = draws(g * k, 0);
      const ModelEvidence evt = laplace_metropolis(thin, log_joint);
      REQUIRE(std::abs(evt.log_evidence - ev.log_evidence) < 0.1);
    }
  }

  SECTION("a rank-deficient chain is rejected with the offending eigenvalue") {
    Eigen::MatrixXd bad(G, 2);
    bad.col(0) = draws.col(0);
    bad.col(1).setConstant(3.14);
    auto two = [&](const Eigen::VectorXd& psi) { return log_joint(psi.head(1)); };
    REQUIRE_THROWS_WITH(laplace_metropolis(bad, two), Catch::Contains("rank deficient"));
  }

  SECTION("short chains are rejected") {
    Eigen::MatrixXd tiny = draws.topRows(5);
    REQUIRE_THROWS_AS(laplace_metropolis(tiny, log_joint), data_error);
  }
}

TEST_CASE("model evidence separates the hierarchy from the collapsed model") {
  // truth: common mean (Model 2 structure), nontrivial Sigma_theta
  Eigen::MatrixXd B_true(2, 3);
  B_true << 1.0, 0.0, 0.0, 1.1, 0.0, 0.0;
  Eigen::Matrix2d Sigma_true;
  Sigma_true << 0.25, 0.05, 0.05, 0.2;
  const int N = 24;
  const auto summaries = hierarchy_summaries(B_true, Sigma_true, N, 413);
  const HyperPrior prior = empirical_bayes_s0(summaries, 3.0);

  const int iters = 4000, burn = 500;
  const PosteriorChain c1 = gibbs_run(summaries, design_for_model(1), prior, iters, burn, 11);
  const PosteriorChain c2 = gibbs_run(summaries, design_for_model(2), prior, iters, burn, 12);
  const PosteriorChain c3 = gibbs_run(summaries, design_for_model(3), prior, iters, burn, 13);

  const ModelEvidence e1 = model_evidence(c1, summaries, design_for_model(1), prior);
  const ModelEvidence e2 = model_evidence(c2, summaries, design_for_model(2), prior);
  const ModelEvidence e3 = model_evidence(c3, summaries, design_for_model(3), prior);
  REQUIRE(e1.P == 2 * 3 + 3 + 2 * N);
  REQUIRE(e2.P == 2 * 1 + 3 + 2 * N);
  REQUIRE(e3.P == 2);

  // the hierarchical models dominate the collapsed one by a wide margin
  REQUIRE(e2.log_evidence > e3.log_evidence + 100.0);
  REQUIRE(e1.log_evidence > e3.log_evidence + 100.0);
  // common-mean truth: the extra region parameters of Model 1 cost evidence
  REQUIRE(e2.log_evidence > e1.log_evidence);
}
