#include <catch2/catch.hpp>

#include <filesystem>

#include "stormuq/hier.hpp"

using namespace stormuq;

namespace {

SummaryVec make_summary(const std::string& id, Region r, double t1, double t2, double h11,
                        double h22, double h12 = 0.0) {
  SummaryVec s;
  s.storm_id = id;
  s.region = r;
  s.n_points = 100;
  s.theta_hat = Eigen::Vector2d(t1, t2);
  s.H.resize(2, 2);
  s.H << h11, h12, h12, h22;
  return s;
}

std::vector<SummaryVec> toy_summaries() {
  std::vector<SummaryVec> v;
  Rng rng(101);
  const Region regions[3] = {Region::Atlantic, Region::Florida, Region::Gulf};
  for (int i = 0; i < 9; ++i)
    v.push_back(make_summary("storm" + std::to_string(i), regions[i % 3],
                             1.0 + 0.5 * rng.normal(), 1.2 + 0.5 * rng.normal(),
                             40.0 + 10.0 * rng.uniform(), 30.0 + 10.0 * rng.uniform(),
                             2.0 * rng.uniform()));
  return v;
}

} // namespace

TEST_CASE("empirical_bayes_s0") {
  SECTION("hand-computed covariance times nu0") {
    std::vector<SummaryVec> v;
    v.push_back(make_summary("a", Region::Atlantic, 0, 0, 1, 1));
    v.push_back(make_summary("b", Region::Atlantic, 2, 0, 1, 1));
    v.push_back(make_summary("c", Region::Atlantic, 0, 2, 1, 1));
    v.push_back(make_summary("d", Region::Atlantic, 2, 2, 1, 1));
    const HyperPrior prior = empirical_bayes_s0(v, 3.0);
    REQUIRE(prior.nu0 == 3.0);
    REQUIRE(prior.S0(0, 0) == Approx(3.0 * 4.0 / 3.0));
    REQUIRE(prior.S0(1, 1) == Approx(3.0 * 4.0 / 3.0));
    REQUIRE(prior.S0(0, 1) == Approx(0.0).margin(1e-14));
  }

  SECTION("identical MLEs give a singular-scale error") {
    std::vector<SummaryVec> v;
    for (int i = 0; i < 4; ++i)
      v.push_back(make_summary("s" + std::to_string(i), Region::Gulf, 1.0, 2.0, 1, 1));
    REQUIRE_THROWS_AS(empirical_bayes_s0(v, 3.0), data_error);
  }

  SECTION("needs at least 3 storms") {
    std::vector<SummaryVec> v{make_summary("a", Region::Gulf, 0, 0, 1, 1),
                              make_summary("b", Region::Gulf, 1, 1, 1, 1)};
    REQUIRE_THROWS_AS(empirical_bayes_s0(v, 3.0), data_error);
  }
}

TEST_CASE("sample_theta_i matches its closed-form conditional") {
  Eigen::MatrixXd H(2, 2), Sigma(2, 2), B(2, 1);
  H << 5.0, 1.0, 1.0, 4.0;
  Sigma << 0.5, 0.1, 0.1, 0.3;
  B << 0.4, 1.2;
  const Eigen::VectorXd x = Eigen::VectorXd::Ones(1);
  const Eigen::VectorXd theta_hat = Eigen::Vector2d(0.9, 1.4);

  const Eigen::MatrixXd Sinv = Sigma.inverse();
  const Eigen::MatrixXd C = (H + Sinv).inverse();
  const Eigen::VectorXd m = C * (H * theta_hat + Sinv * (B * x));

  const int G = 100000;
  Rng rng(7, {1});
  Eigen::Vector2d sum = Eigen::Vector2d::Zero();
  Eigen::Matrix2d sum2 = Eigen::Matrix2d::Zero();
  for (int g = 0; g < G; ++g) {
    const Eigen::VectorXd d = sample_theta_i(theta_hat, H, B, x, Sigma, rng);
    sum += d;
    sum2 += d * d.transpose();
  }
  const Eigen::Vector2d mean = sum / G;
  const Eigen::Matrix2d cov = sum2 / G - mean * mean.transpose();
  for (int i = 0; i < 2; ++i)
    REQUIRE(mean[i] == Approx(m[i]).margin(3.0 * std::sqrt(C(i, i) / G)));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      const double se = std::sqrt((C(i, i) * C(j, j) + C(i, j) * C(i, j)) / G);
      REQUIRE(cov(i, j) == Approx(C(i, j)).margin(3.0 * se));
    }
}

TEST_CASE("sample_theta_i limiting regimes") {
  Eigen::MatrixXd H(2, 2), B(2, 1);
  H << 50.0, 0.0, 0.0, 40.0;
  B << -2.0, 3.0;
  const Eigen::VectorXd x = Eigen::VectorXd::Ones(1);
  const Eigen::VectorXd theta_hat = Eigen::Vector2d(1.0, -1.0);
  Rng rng(11);

  SECTION("huge Sigma_theta: likelihood dominates, mean near theta_hat") {
    const Eigen::MatrixXd Sigma = 1e10 * Eigen::MatrixXd::Identity(2, 2);
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    const int G = 20000;
    for (int g = 0; g < G; ++g) mean += sample_theta_i(theta_hat, H, B, x, Sigma, rng);
    mean /= G;
    REQUIRE(mean[0] == Approx(theta_hat[0]).margin(0.01));
    REQUIRE(mean[1] == Approx(theta_hat[1]).margin(0.01));
  }

  SECTION("vanishing H: prior dominates, mean near B x") {
    const Eigen::MatrixXd H0 = 1e-10 * Eigen::MatrixXd::Identity(2, 2);
    const Eigen::MatrixXd Sigma = 0.01 * Eigen::MatrixXd::Identity(2, 2);
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    const int G = 20000;
    for (int g = 0; g < G; ++g) mean += sample_theta_i(theta_hat, H0, B, x, Sigma, rng);
    mean /= G;
    REQUIRE(mean[0] == Approx(-2.0).margin(0.01));
    REQUIRE(mean[1] == Approx(3.0).margin(0.01));
  }
}

TEST_CASE("sample_sigma_theta") {
  SECTION("prior-only case has the known inverse-Wishart mean and stays SPD") {
    // N = 0 reduces to IW(nu0, S0); with nu0 = 10, S0 = I the mean is I/7.
    HyperPrior prior{10.0, Eigen::MatrixXd::Identity(2, 2)};
    const Eigen::MatrixXd thetas(2, 0);
    const Eigen::MatrixXd B = Eigen::MatrixXd::Zero(2, 1);
    const Eigen::MatrixXd X(1, 0);
    Rng rng(13);
    const int G = 100000;
    Eigen::Matrix2d sum = Eigen::Matrix2d::Zero(), sum2 = Eigen::Matrix2d::Zero();
    for (int g = 0; g < G; ++g) {
      const Eigen::MatrixXd S = sample_sigma_theta(thetas, B, X, prior, rng);
      REQUIRE(S.llt().info() == Eigen::Success);
      sum += S;
      sum2 += S.cwiseProduct(S);
    }
    const Eigen::Matrix2d mean = sum / G;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        const double var = sum2(i, j) / G - mean(i, j) * mean(i, j);
        const double se = std::sqrt(var / G);
        const double target = (i == j) ? 1.0 / 7.0 : 0.0;
        REQUIRE(mean(i, j) == Approx(target).margin(3.0 * se + 1e-12));
      }
  }

  SECTION("zero residuals leave only the prior scale") {
    // thetas exactly B x_i: conditional is IW(N + nu0, S0).
    HyperPrior prior{3.0, (Eigen::Matrix2d() << 2.0, 0.3, 0.3, 1.0).finished()};
    const int N = 40;
    Eigen::MatrixXd B(2, 1);
    B << 0.5, -0.5;
    Eigen::MatrixXd X = Eigen::MatrixXd::Ones(1, N);
    Eigen::MatrixXd thetas(2, N);
    thetas.colwise() = Eigen::Vector2d(0.5, -0.5);
    Rng rng(17);
    const int G = 50000;
    Eigen::Matrix2d sum = Eigen::Matrix2d::Zero();
    for (int g = 0; g < G; ++g) sum += sample_sigma_theta(thetas, B, X, prior, rng);
    const Eigen::Matrix2d mean = sum / G;
    const Eigen::Matrix2d target = prior.S0 / (double(N) + prior.nu0 - 3.0);
    REQUIRE((mean - target).cwiseAbs().maxCoeff() < 0.01);
  }
}

TEST_CASE("sample_B") {
  SECTION("q = 1 common mean: draws are N(mean theta, Sigma/N)") {
    const int N = 25;
    Rng init(19);
    Eigen::MatrixXd thetas(2, N);
    for (int i = 0; i < N; ++i) thetas.col(i) = Eigen::Vector2d(init.normal(), init.normal());
    const Eigen::MatrixXd X = Eigen::MatrixXd::Ones(1, N);
    Eigen::Matrix2d Sigma;
    Sigma << 0.4, 0.1, 0.1, 0.6;
    const Eigen::Vector2d target_mean = thetas.rowwise().mean();
    const Eigen::Matrix2d target_cov = Sigma / N;

    Rng rng(23);
    const int G = 100000;
    Eigen::Vector2d sum = Eigen::Vector2d::Zero();
    Eigen::Matrix2d sum2 = Eigen::Matrix2d::Zero();
    for (int g = 0; g < G; ++g) {
      const Eigen::MatrixXd Bd = sample_B(thetas, X, Sigma, rng);
      sum += Bd.col(0);
      sum2 += Bd.col(0) * Bd.col(0).transpose();
    }
    const Eigen::Vector2d mean = sum / G;
    const Eigen::Matrix2d cov = sum2 / G - mean * mean.transpose();
    for (int i = 0; i < 2; ++i)
      REQUIRE(mean[i] == Approx(target_mean[i]).margin(3.0 * std::sqrt(target_cov(i, i) / G)));
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        const double se = std::sqrt(
            (target_cov(i, i) * target_cov(j, j) + std::pow(target_cov(i, j), 2)) / G);
        REQUIRE(cov(i, j) == Approx(target_cov(i, j)).margin(3.0 * se));
      }
  }

  SECTION("Sigma -> 0 gives the least-squares fit deterministically") {
    const int N = 10;
    Rng init(29);
    Eigen::MatrixXd thetas(2, N);
    for (int i = 0; i < N; ++i) thetas.col(i) = Eigen::Vector2d(init.normal(), init.normal());
    const Eigen::MatrixXd X = Eigen::MatrixXd::Ones(1, N);
    Rng rng(31);
    const Eigen::MatrixXd Bd = sample_B(thetas, X, 1e-24 * Eigen::Matrix2d::Identity(), rng);
    REQUIRE((Bd.col(0) - thetas.rowwise().mean()).cwiseAbs().maxCoeff() < 1e-9);
  }

  SECTION("Model 1 with an empty region is a design deficiency") {
    std::vector<SummaryVec> v;
    v.push_back(make_summary("a", Region::Atlantic, 0.2, 0.1, 30, 30));
    v.push_back(make_summary("b", Region::Atlantic, 0.4, 0.2, 30, 30));
    v.push_back(make_summary("c", Region::Florida, 0.1, 0.5, 30, 30));
    v.push_back(make_summary("d", Region::Florida, 0.6, 0.8, 30, 30));
    const DesignSpec design = design_for_model(1);
    HyperPrior prior{3.0, 0.1 * Eigen::Matrix2d::Identity()};
    REQUIRE_THROWS_WITH(gibbs_run(v, design, prior, 10, 0, 1),
                        Catch::Contains("design deficiency"));
  }
}

TEST_CASE("gibbs_run determinism and draw validity") {
  const auto summaries = toy_summaries();
  const HyperPrior prior = empirical_bayes_s0(summaries, 3.0);
  const DesignSpec design = design_for_model(2);

  const PosteriorChain a = gibbs_run(summaries, design, prior, 200, 50, 42);
  const PosteriorChain b = gibbs_run(summaries, design, prior, 200, 50, 42);
  REQUIRE(a.length() == 200);
  for (int g = 0; g < a.length(); ++g) {
    REQUIRE(a.B[std::size_t(g)] == b.B[std::size_t(g)]);
    REQUIRE(a.Sigma[std::size_t(g)] == b.Sigma[std::size_t(g)]);
    REQUIRE(a.thetas[std::size_t(g)] == b.thetas[std::size_t(g)]);
  }

  SECTION("every retained Sigma draw passes Cholesky") {
    for (const auto& S : a.Sigma) REQUIRE(S.llt().info() == Eigen::Success);
  }

  SECTION("different seeds differ") {
    const PosteriorChain c = gibbs_run(summaries, design, prior, 10, 0, 43);
    REQUIRE(c.B[0] != a.B[0]);
  }
}

TEST_CASE("gibbs_run is invariant to permuting storm order") {
  auto summaries = toy_summaries();
  const HyperPrior prior = empirical_bayes_s0(summaries, 3.0);
  const DesignSpec design = design_for_model(2);
  const PosteriorChain a = gibbs_run(summaries, design, prior, 50, 10, 7);

  std::vector<SummaryVec> shuffled{summaries[4], summaries[7], summaries[0], summaries[2],
                                   summaries[8], summaries[1], summaries[5], summaries[3],
                                   summaries[6]};
  const PosteriorChain b = gibbs_run(shuffled, design, prior, 50, 10, 7);

  REQUIRE(a.B.back() == b.B.back());
  REQUIRE(a.Sigma.back() == b.Sigma.back());
  for (std::size_t i = 0; i < summaries.size(); ++i) {
    const auto it = std::find(b.storm_ids.begin(), b.storm_ids.end(), summaries[i].storm_id);
    REQUIRE(it != b.storm_ids.end());
    const Eigen::Index jb = it - b.storm_ids.begin();
    REQUIRE(a.thetas.back().col(Eigen::Index(i)) == b.thetas.back().col(jb));
  }
}

TEST_CASE("per-iteration shrinkage: conditional mean is the precision-weighted blend") {
  // Run a short chain and re-derive each theta_i draw: subtracting the
  // closed-form conditional mean must leave exactly the L^-T z noise the
  // keyed substream produces.
  const auto summaries = toy_summaries();
  const HyperPrior prior = empirical_bayes_s0(summaries, 3.0);
  const DesignSpec design = design_for_model(2);
  const int iters = 5;
  const PosteriorChain chain = gibbs_run(summaries, design, prior, iters, 0, 77);

  for (int g = 1; g < iters; ++g) {
    const Eigen::MatrixXd& Sigma_prev = chain.Sigma[std::size_t(g - 1)];
    const Eigen::MatrixXd& B_prev = chain.B[std::size_t(g - 1)];
    for (std::size_t i = 0; i < summaries.size(); ++i) {
      const auto& s = summaries[i];
      Rng rng(77, {detail::kStreamTheta, std::uint64_t(g), fnv1a64(s.storm_id)});
      const Eigen::VectorXd redraw =
          sample_theta_i(s.theta_hat, s.H, B_prev, design.x_for(s.region), Sigma_prev, rng);
      const auto it = std::find(chain.storm_ids.begin(), chain.storm_ids.end(), s.storm_id);
      REQUIRE(it != chain.storm_ids.end());
      const Eigen::Index col = it - chain.storm_ids.begin();
      REQUIRE(redraw == chain.thetas[std::size_t(g)].col(col));
      const Eigen::MatrixXd Sinv = Sigma_prev.inverse();
      const Eigen::VectorXd cond_mean =
          (s.H + Sinv).inverse() * (s.H * s.theta_hat + Sinv * (B_prev * design.x_for(s.region)));
      // the draw deviates from the conditional mean by bounded Gaussian noise
      const Eigen::MatrixXd C = (s.H + Sinv).inverse();
      const double sd_max = std::sqrt(C.diagonal().maxCoeff());
      REQUIRE((redraw - cond_mean).norm() < 8.0 * sd_max);
    }
  }
}

TEST_CASE("model 3 collapses theta to a common mean") {
  const auto summaries = toy_summaries();
  const HyperPrior prior = empirical_bayes_s0(summaries, 3.0);
  const PosteriorChain c = gibbs_run(summaries, design_for_model(3), prior, 500, 100, 3);

  Eigen::Matrix2d Hsum = Eigen::Matrix2d::Zero();
  Eigen::Vector2d b = Eigen::Vector2d::Zero();
  for (const auto& s : summaries) {
    Hsum += s.H;
    b += s.H * s.theta_hat;
  }
  const Eigen::Vector2d mu = Hsum.inverse() * b;

  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& Bd : c.B) mean += Bd.col(0);
  mean /= c.length();
  const Eigen::Matrix2d C = Hsum.inverse();
  REQUIRE(mean[0] == Approx(mu[0]).margin(4.0 * std::sqrt(C(0, 0) / c.length())));
  REQUIRE(mean[1] == Approx(mu[1]).margin(4.0 * std::sqrt(C(1, 1) / c.length())));
  for (const auto& S : c.Sigma) REQUIRE(S.cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(c.thetas.back().col(0) == c.thetas.back().col(5));
}

TEST_CASE("chain CSV round trip preserves draws bit-exactly") {
  const auto summaries = toy_summaries();
  const HyperPrior prior = empirical_bayes_s0(summaries, 3.0);
  const PosteriorChain a = gibbs_run(summaries, design_for_model(1), prior, 20, 5, 99);

  const auto path = std::filesystem::temp_directory_path() / "stormuq_chain_rt.csv";
  write_chain_csv(a, path.string());
  const PosteriorChain b = read_chain_csv(path.string());
  REQUIRE(b.model_id == 1);
  REQUIRE(b.seed == 99);
  REQUIRE(b.burn_in == 5);
  REQUIRE(b.storm_ids == a.storm_ids);
  REQUIRE(b.length() == a.length());
  for (int g = 0; g < a.length(); ++g) {
    REQUIRE(a.B[std::size_t(g)] == b.B[std::size_t(g)]);
    REQUIRE(a.Sigma[std::size_t(g)] == b.Sigma[std::size_t(g)]);
    REQUIRE(a.thetas[std::size_t(g)] == b.thetas[std::size_t(g)]);
  }
}
