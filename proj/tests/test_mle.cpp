#include <catch2/catch.hpp>

#include "stormuq/mle.hpp"
#include "stormuq/rng.hpp"
#include "stormuq/simulate.hpp"

using namespace stormuq;

namespace {

Coords grid_coords(int side, double spacing) {
  Coords locs(side * side, 2);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      locs(r * side + c, 0) = c * spacing;
      locs(r * side + c, 1) = r * spacing;
    }
  return locs;
}

} // namespace

TEST_CASE("profile_mle rejects degenerate input") {
  Coords locs = grid_coords(3, 1.0);
  const Eigen::MatrixXd D = pairwise_distances(locs);
  const Eigen::VectorXd y = Eigen::VectorXd::Zero(9);
  REQUIRE_THROWS_AS(profile_mle(y, D), data_error);
}

TEST_CASE("profile_mle matches a dense 2-D grid search oracle") {
  Rng rng(41);
  const Coords locs = grid_coords(6, 0.5); // n = 36
  const Eigen::MatrixXd D = pairwise_distances(locs);
  const Theta truth = theta_from_lambda({4.0, 1.5});
  const Eigen::VectorXd y = simulate_gp(D, truth, rng);

  const ProfileFit fit = profile_mle_fit(y, D);

  // independent oracle: exhaustive grid over (log sigma2, log phi)
  const double ls_hat = std::log(fit.sigma2_hat);
  const double lp_hat = fit.log_phi;
  double best = -1e308, best_ls = 0, best_lp = 0;
  const double step = 0.02;
  for (double ls = ls_hat - 1.0; ls <= ls_hat + 1.0; ls += step)
    for (double lp = lp_hat - 1.0; lp <= lp_hat + 1.0; lp += step) {
      const double ll = gp_loglik(y, D, Theta{ls - lp, ls});
      if (ll > best) {
        best = ll;
        best_ls = ls;
        best_lp = lp;
      }
    }
  REQUIRE(std::abs(best_ls - ls_hat) <= step);
  REQUIRE(std::abs(best_lp - lp_hat) <= step);
  REQUIRE(fit.loglik >= best - 1e-9);
}

TEST_CASE("gradient at the profile optimum is near zero") {
  Rng rng(43);
  const Coords locs = grid_coords(7, 0.4);
  const Eigen::MatrixXd D = pairwise_distances(locs);
  const Eigen::VectorXd y = simulate_gp(D, theta_from_lambda({2.0, 1.0}), rng);
  const Theta th = profile_mle(y, D);

  const double h = 1e-5;
  const double g1 = (gp_loglik(y, D, Theta{th.t1 + h, th.t2}) -
                     gp_loglik(y, D, Theta{th.t1 - h, th.t2})) /
                    (2 * h);
  const double g2 = (gp_loglik(y, D, Theta{th.t1, th.t2 + h}) -
                     gp_loglik(y, D, Theta{th.t1, th.t2 - h})) /
                    (2 * h);
  REQUIRE(std::hypot(g1, g2) < 1e-4);
}

TEST_CASE("fisher information lambda entries") {
  SECTION("(sigma2,sigma2) block is n/(2 sigma2^2)") {
    const Coords locs = grid_coords(4, 1.0); // n = 16
    const Eigen::MatrixXd D = pairwise_distances(locs);
    const Eigen::Matrix2d H = fisher_information_lambda(D, Lambda{1.0, 1.0});
    REQUIRE(H(0, 0) == Approx(16.0 / 2.0).epsilon(1e-12));
  }

  SECTION("2-point field matches the symbolic oracle to 1e-10") {
    Coords locs(2, 2);
    locs << 0, 0, 1.3, 0;
    const Eigen::MatrixXd D = pairwise_distances(locs);
    const double d = 1.3, s2 = 2.0, phi = 0.9;
    const double r = std::exp(-d / phi);
    const double s = r * d / (phi * phi); // off-diagonal of R'
    // closed forms: tr(R^-1 R') = -2 r s/(1-r^2); tr((R^-1 R')^2) = 2 s^2 (1+r^2)/(1-r^2)^2
    const double tr1 = -2.0 * r * s / (1.0 - r * r);
    const double tr2 = 2.0 * s * s * (1.0 + r * r) / std::pow(1.0 - r * r, 2);
    const Eigen::Matrix2d H = fisher_information_lambda(D, Lambda{s2, phi});
    REQUIRE(H(0, 0) == Approx(2.0 / (2.0 * s2 * s2)).margin(1e-10));
    REQUIRE(H(0, 1) == Approx(tr1 / (2.0 * s2)).margin(1e-10));
    REQUIRE(H(1, 1) == Approx(0.5 * tr2).margin(1e-10));
  }
}

TEST_CASE("finite-difference Hessian recovers a quadratic exactly") {
  Eigen::Matrix2d A;
  A << 3.0, 0.7, 0.7, 2.2;
  auto quad = [&](double a, double b) {
    Eigen::Vector2d v(a, b);
    return -0.5 * v.dot(A * v);
  };
  const Eigen::Matrix2d H = detail::fd_neg_hessian2(quad, Theta{0.3, -0.8}, 1e-4);
  REQUIRE((H - A).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("analytic and numeric Hessians agree at the MLE") {
  Rng rng(47);
  const Coords locs = grid_coords(4, 0.7); // 16 points, small field
  const Eigen::MatrixXd D = pairwise_distances(locs);
  const Eigen::VectorXd y = simulate_gp(D, theta_from_lambda({3.0, 1.2}), rng);
  const Theta th = profile_mle(y, D);

  const Eigen::Matrix2d Ha = hessian_analytic(y, D, th);
  const Eigen::Matrix2d Hn = hessian_numeric(y, D, th);
  REQUIRE((Ha - Hn).cwiseAbs().maxCoeff() < 1e-3);

  SECTION("also away from the MLE, where gradient terms matter") {
    const Theta off{th.t1 + 0.4, th.t2 - 0.3};
    const Eigen::Matrix2d Ha2 = hessian_analytic(y, D, off);
    const Eigen::Matrix2d Hn2 = hessian_numeric(y, D, off);
    REQUIRE((Ha2 - Hn2).cwiseAbs().maxCoeff() < 1e-3);
  }

  SECTION("halving the step changes numeric entries by < 1e-4") {
    Rng rng2(53);
    const Coords locs20 = random_scatter(20, rng2);
    const Eigen::MatrixXd D20 = pairwise_distances(locs20);
    const Eigen::VectorXd y20 = simulate_gp(D20, theta_from_lambda({2.0, 2.0}), rng2);
    const Theta t20 = profile_mle(y20, D20);
    const Eigen::Matrix2d H1 = hessian_numeric(y20, D20, t20, 1e-4);
    const Eigen::Matrix2d H2 = hessian_numeric(y20, D20, t20, 5e-5);
    REQUIRE((H1 - H2).cwiseAbs().maxCoeff() < 1e-4);
  }
}

TEST_CASE("information matrices are symmetric positive definite at the MLE") {
  Rng rng(59);
  const Coords locs = random_scatter(30, rng, 8.0);
  const Eigen::MatrixXd D = pairwise_distances(locs);
  const Eigen::VectorXd y = simulate_gp(D, theta_from_lambda({4.0, 1.5}), rng);
  const Theta th = profile_mle(y, D);
  for (const Eigen::Matrix2d& H : {fisher_information(D, th), hessian_analytic(y, D, th)}) {
    REQUIRE(std::abs(H(0, 1) - H(1, 0)) < 1e-10);
    REQUIRE(H(0, 0) > 0.0);
    REQUIRE(H.determinant() > 0.0);
  }
}

TEST_CASE("MLE and information are invariant under joint relabeling") {
  Rng rng(61);
  const int n = 25;
  const Coords locs = random_scatter(n, rng, 6.0);
  const Eigen::MatrixXd D = pairwise_distances(locs);
  const Eigen::VectorXd y = simulate_gp(D, theta_from_lambda({2.5, 1.8}), rng);

  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[std::size_t(rng.next_u64() % (i + 1))]);
  Coords locs_p(n, 2);
  Eigen::VectorXd y_p(n);
  for (int i = 0; i < n; ++i) {
    locs_p.row(i) = locs.row(perm[i]);
    y_p[i] = y[perm[i]];
  }
  const Eigen::MatrixXd Dp = pairwise_distances(locs_p);

  const Theta a = profile_mle(y, D), b = profile_mle(y_p, Dp);
  REQUIRE(a.t1 == Approx(b.t1).margin(1e-7));
  REQUIRE(a.t2 == Approx(b.t2).margin(1e-7));
  const Eigen::Matrix2d Ha = fisher_information(D, a), Hb = fisher_information(Dp, b);
  REQUIRE((Ha - Hb).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("Wald interval covers a known truth on a simulated field") {
  // Single-field sanity check of theta_hat +- 1.96 sqrt(diag(H^-1));
  // aggregate coverage rates live in the simulation-study suite.
  Rng rng(67);
  const Coords locs = grid_coords(12, 0.35);
  const Eigen::MatrixXd D = pairwise_distances(locs);
  const Theta truth = theta_from_lambda({4.0, 1.5});
  int covered1 = 0, covered2 = 0;
  const int reps = 8;
  for (int rep = 0; rep < reps; ++rep) {
    const Eigen::VectorXd y = simulate_gp(D, truth, rng);
    const Theta th = profile_mle(y, D);
    const Eigen::Matrix2d C = fisher_information(D, th).inverse();
    if (std::abs(th.t1 - truth.t1) <= 1.96 * std::sqrt(C(0, 0))) ++covered1;
    if (std::abs(th.t2 - truth.t2) <= 1.96 * std::sqrt(C(1, 1))) ++covered2;
  }
  REQUIRE(covered1 >= reps - 2);
  REQUIRE(covered2 >= reps - 2);
}

TEST_CASE("summary JSON round trip") {
  StormSummary s;
  s.storm_id = "test-storm";
  s.region = Region::Florida;
  s.n_points = 321;
  s.theta_hat = Theta{0.981, 1.386};
  s.H << 104.5, -3.25, -3.25, 88.125;
  const auto path = std::string("/tmp/stormuq_summary_rt.json");
  write_summary(s, path);
  const StormSummary back = read_summary(path);
  CHECK(back.storm_id == s.storm_id);
  CHECK(back.region == s.region);
  CHECK(back.n_points == s.n_points);
  CHECK(back.theta_hat.t1 == s.theta_hat.t1);
  CHECK(back.theta_hat.t2 == s.theta_hat.t2);
  CHECK((back.H - s.H).cwiseAbs().maxCoeff() == 0.0);
}
