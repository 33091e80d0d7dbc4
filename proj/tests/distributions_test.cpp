#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "npsa/distributions.hpp"
#include "oracles.hpp"

using namespace npsa;

TEST_CASE("weibull inverse-CDF sampling") {
    double eps_fixed = 1.0 - std::exp(-1.0);  // inner term equals 1 for any k
    for (double k : {0.5, 1.0, 2.0, 300.0})
        CHECK(weibull_sample(k, 3.0, eps_fixed) == Catch::Approx(3.0).epsilon(1e-9));

    CHECK(weibull_sample(1.0, 1.0, 0.5) == Catch::Approx(std::log(2.0)).epsilon(1e-12));

    CHECK_THROWS_AS(weibull_sample(1.0, 1.0, 0.0), std::domain_error);
    CHECK_THROWS_AS(weibull_sample(1.0, 1.0, 1.0), std::domain_error);
    CHECK_THROWS_AS(weibull_sample(-1.0, 1.0, 0.5), std::domain_error);
}

TEST_CASE("weibull rsample: gradient flows to lambda only") {
    Tape tape;
    Tensor lam = tape.leaf(1, 2, {0.7, 1.3}, true);
    std::vector<double> eps{0.3, 0.6};
    Tensor w = weibull_rsample(tape, lam, 2.0, eps);
    tape.backward(tape.sum_all(w));
    for (size_t j = 0; j < 2; ++j) {
        double factor = std::pow(-std::log1p(-eps[j]), 0.5);
        CHECK(w.data()[j] == Catch::Approx(lam.data()[j] * factor).epsilon(1e-12));
        CHECK(lam.grad()[j] == Catch::Approx(factor).epsilon(1e-12));
    }
}

TEST_CASE("weibull sample moments match analytic mean and variance") {
    const size_t n = 1000000;
    for (double k : {2.0}) {
        Rng rng(777);
        std::vector<double> xs(n);
        for (double& v : xs) v = weibull_sample(k, 1.0, rng.uniform());
        auto stats = oracles::sample_stats(xs);
        Moments want = weibull_moments(k, 1.0);
        CHECK(want.mean == Catch::Approx(std::sqrt(M_PI) / 2.0).epsilon(1e-12));
        CHECK(std::abs(stats.mean - want.mean) < 3.0 * stats.se_mean());
        CHECK(std::abs(stats.variance - want.variance) < 3.0 * stats.se_variance());
    }
}

TEST_CASE("weibull moments") {
    Moments m1 = weibull_moments(1.0, 1.0);
    CHECK(m1.mean == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(m1.variance == Catch::Approx(1.0).epsilon(1e-10));

    Moments m2 = weibull_moments(2.0, 1.0);
    CHECK(m2.mean == Catch::Approx(std::sqrt(M_PI) / 2.0).epsilon(1e-12));
    CHECK(m2.variance == Catch::Approx(1.0 - M_PI / 4.0).epsilon(1e-10));

    // variance collapses as k grows
    CHECK(weibull_moments(300.0, 1.0).variance < 1e-4);
    CHECK(weibull_moments(300.0, 5.0).variance < 1e-4 * 25.0);
}

TEST_CASE("empirical weibull CDF matches analytic CDF") {
    const size_t n = 200000;
    Rng rng(90210);
    std::vector<double> xs(n);
    for (double& v : xs) v = weibull_sample(2.0, 1.0, rng.uniform());
    double ks = oracles::ks_statistic(xs, [](double x) { return weibull_cdf(2.0, 1.0, x); });
    CHECK(ks < 0.004);  // ~1.3/sqrt(n) at this n; the full 1e6 bound runs in acceptance
}

TEST_CASE("kl weibull->gamma closed form") {
    CHECK(kl_weibull_gamma(1.0, 1.0, 1.0, 1.0) == Catch::Approx(0.0).margin(1e-12));

    // exponential pair: KL = beta*lambda - 1 - log(lambda*beta)
    CHECK(kl_weibull_gamma(1.0, 2.0, 1.0, 1.0) ==
          Catch::Approx(2.0 - 1.0 - std::log(2.0)).epsilon(1e-12));

    CHECK(kl_weibull_gamma(2.0, 1.0, 2.0, 1.0) ==
          Catch::Approx(oracles::kl_weibull_gamma_quadrature(2.0, 1.0, 2.0, 1.0)).margin(1e-6));

    CHECK_THROWS_AS(kl_weibull_gamma(1.0, -1.0, 1.0, 1.0), std::domain_error);
    CHECK_THROWS_AS(kl_weibull_gamma(1.0, 1.0, 0.0, 1.0), std::domain_error);
}

TEST_CASE("kl weibull->gamma across the parameter grid") {
    for (double k : {0.5, 1.0, 2.0, 10.0, 100.0, 300.0})
        for (double lambda : {0.1, 1.0, 10.0})
            for (double alpha : {0.5, 1.0, 2.0, 5.0}) {
                double kl = kl_weibull_gamma(k, lambda, alpha, 1.0);
                CHECK(kl >= -1e-9);  // non-negativity up to numerical slack
                double quad = oracles::kl_weibull_gamma_quadrature(k, lambda, alpha, 1.0);
                CHECK(kl == Catch::Approx(quad).margin(1e-6));
            }
}

TEST_CASE("kl weibull->gamma tape gradients") {
    std::vector<double> lam{0.4, 1.7}, alp{2.0, 0.8};
    Tape tape;
    Tensor lambda = tape.leaf(1, 2, lam, true);
    Tensor alpha = tape.leaf(1, 2, alp, true);
    tape.backward(tape.sum_all(kl_weibull_gamma(tape, 2.0, lambda, alpha, 1.0)));
    auto f_lam = [&](const std::vector<double>& v) {
        double s = 0.0;
        for (size_t i = 0; i < v.size(); ++i) s += kl_weibull_gamma(2.0, v[i], alp[i], 1.0);
        return s;
    };
    auto f_alp = [&](const std::vector<double>& v) {
        double s = 0.0;
        for (size_t i = 0; i < v.size(); ++i) s += kl_weibull_gamma(2.0, lam[i], v[i], 1.0);
        return s;
    };
    CHECK(oracles::gradcheck(f_lam, lam, lambda.grad()) < 1e-5);
    CHECK(oracles::gradcheck(f_alp, alp, alpha.grad()) < 1e-5);
}

TEST_CASE("generalized gamma KL") {
    GenGammaParams f{1.4, 2.2, 0.9};
    CHECK(kl_generalized_gamma(f, f) == Catch::Approx(0.0).margin(1e-12));
    CHECK(kl_generalized_gamma({1, 1, 1}, {1, 1, 1}) == Catch::Approx(0.0).margin(1e-12));

    // Weibull(k=3, lambda=2) vs Gamma(alpha=2, beta=1) through the
    // generalized-gamma parameterization
    double via_gg = kl_generalized_gamma({2.0, 3.0, 3.0}, {1.0, 2.0, 1.0});
    double direct = kl_weibull_gamma(3.0, 2.0, 2.0, 1.0);
    CHECK(via_gg == Catch::Approx(direct).margin(1e-10));
    CHECK(via_gg ==
          Catch::Approx(oracles::kl_weibull_gamma_quadrature(3.0, 2.0, 2.0, 1.0)).margin(1e-6));

    CHECK_THROWS_AS(kl_generalized_gamma({0.0, 1.0, 1.0}, {1.0, 1.0, 1.0}), std::domain_error);
}

TEST_CASE("weibull/gamma specialization identity holds on the grid") {
    for (double k : {0.5, 1.0, 2.0, 10.0, 100.0, 300.0})
        for (double lambda : {0.1, 1.0, 10.0})
            for (double alpha : {0.5, 1.0, 2.0, 5.0}) {
                double direct = kl_weibull_gamma(k, lambda, alpha, 1.0);
                double via_gg =
                    kl_generalized_gamma({lambda, k, k}, {1.0, alpha, 1.0});
                CHECK(std::abs(direct - via_gg) < 1e-10 * std::max(1.0, std::abs(direct)));
            }
}

TEST_CASE("gaussian rsample") {
    Tape tape;
    DiagGaussianParams p{tape.constant(1, 3, {1.0, -2.0, 0.5}),
                         tape.constant(1, 3, {0.1, 1.0, 2.0})};
    CHECK(gaussian_rsample(tape, p, {0, 0, 0}).data() == std::vector<double>{1.0, -2.0, 0.5});

    DiagGaussianParams unit{tape.constant(1, 1, {0.0}), tape.constant(1, 1, {1.0})};
    CHECK(gaussian_rsample(tape, unit, {1.5}).scalar() == 1.5);

    const size_t n = 200000;
    Rng rng(4242);
    std::vector<double> xs(n);
    for (double& v : xs) v = 2.0 * rng.normal();
    auto stats = oracles::sample_stats(xs);
    CHECK(std::abs(stats.variance - 4.0) < 3.0 * stats.se_variance());
}

TEST_CASE("kl between diagonal gaussians") {
    Tape tape;
    DiagGaussianParams q{tape.constant(1, 2, {0.3, -1.0}), tape.constant(1, 2, {0.7, 1.2})};
    CHECK(kl_diag_gaussian(tape, q, q).scalar() == Catch::Approx(0.0).margin(1e-12));

    DiagGaussianParams q1{tape.constant(1, 1, {1.0}), tape.constant(1, 1, {1.0})};
    DiagGaussianParams p1{tape.constant(1, 1, {0.0}), tape.constant(1, 1, {1.0})};
    CHECK(kl_diag_gaussian(tape, q1, p1).scalar() == Catch::Approx(0.5).epsilon(1e-12));

    // 8 random dimensions against per-dimension quadrature
    Rng rng(88);
    std::vector<double> mu_q(8), sg_q(8), mu_p(8), sg_p(8);
    for (size_t i = 0; i < 8; ++i) {
        mu_q[i] = rng.normal();
        sg_q[i] = 0.3 + rng.uniform();
        mu_p[i] = rng.normal();
        sg_p[i] = 0.3 + rng.uniform();
    }
    Tape t2;
    DiagGaussianParams q8{t2.constant(1, 8, mu_q), t2.constant(1, 8, sg_q)};
    DiagGaussianParams p8{t2.constant(1, 8, mu_p), t2.constant(1, 8, sg_p)};
    double quad = 0.0;
    for (size_t i = 0; i < 8; ++i)
        quad += oracles::kl_gaussian_quadrature(mu_q[i], sg_q[i], mu_p[i], sg_p[i]);
    CHECK(kl_diag_gaussian(t2, q8, p8).scalar() == Catch::Approx(quad).margin(1e-8));
}

TEST_CASE("gaussian log likelihood") {
    Tape tape;
    Tensor y = tape.constant(1, 1, {2.0});
    Tensor mu = tape.constant(1, 1, {2.0});
    Tensor sigma = tape.constant(1, 1, {1.0});
    CHECK(gaussian_log_likelihood(tape, y, mu, sigma).scalar() ==
          Catch::Approx(-0.918939).margin(1e-6));

    Tensor y2 = tape.constant(1, 1, {3.0});  // y = mu + sigma
    CHECK(gaussian_log_likelihood(tape, y2, mu, sigma).scalar() ==
          Catch::Approx(-1.418939).margin(1e-6));

    // density integrates to one over a wide trapezoid grid
    double mu_v = 0.7, sg_v = 1.3;
    size_t grid_n = 20000;
    double lo = mu_v - 12.0 * sg_v, hi = mu_v + 12.0 * sg_v;
    double h = (hi - lo) / static_cast<double>(grid_n);
    double integral = 0.0;
    for (size_t i = 0; i <= grid_n; ++i) {
        double yv = lo + h * static_cast<double>(i);
        double w = (i == 0 || i == grid_n) ? 0.5 : 1.0;
        integral += w * std::exp(gaussian_log_likelihood_scalar(yv, mu_v, sg_v));
    }
    integral *= h;
    CHECK(integral == Catch::Approx(1.0).margin(1e-4));

    // multi-dimensional rows sum over output dimensions
    Tensor ym = tape.constant(2, 2, {1.0, 2.0, 3.0, 4.0});
    Tensor mm = tape.constant(2, 2, {1.0, 2.0, 3.0, 4.0});
    Tensor sm = tape.constant(2, 2, {1.0, 1.0, 1.0, 1.0});
    auto ll = gaussian_log_likelihood(tape, ym, mm, sm);
    CHECK(ll.rows() == 2);
    CHECK(ll.cols() == 1);
    CHECK(ll.data()[0] == Catch::Approx(2.0 * -0.9189385332046727).epsilon(1e-12));
}
