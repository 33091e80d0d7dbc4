#pragma once

#include <cmath>
#include <vector>

#include "npsa/special_functions.hpp"
#include "npsa/tensor.hpp"

namespace npsa {

// ---------------------------------------------------------------------------
// Weibull(k, lambda): density (k/lambda)(x/lambda)^{k-1} exp(-(x/lambda)^k).
// k is a fixed shape hyperparameter; lambda is the differentiable scale.
// ---------------------------------------------------------------------------

inline void check_weibull(double k, double lambda) {
    if (!(k > 0.0)) throw std::domain_error("weibull: shape k must be positive");
    if (!(lambda > 0.0)) throw std::domain_error("weibull: scale lambda must be positive");
}

// inverse-CDF reparameterization: w = lambda * (-log(1-eps))^(1/k)
inline double weibull_sample(double k, double lambda, double eps) {
    check_weibull(k, lambda);
    if (!(eps > 0.0 && eps < 1.0))
        throw std::domain_error("weibull_sample: eps must lie strictly inside (0,1)");
    return lambda * std::pow(-std::log1p(-eps), 1.0 / k);
}

// Tape version: gradient flows to lambda only; eps enters as a constant.
inline Tensor weibull_rsample(Tape& tape, Tensor lambda, double k,
                              const std::vector<double>& eps) {
    if (!(k > 0.0)) throw std::domain_error("weibull_rsample: shape k must be positive");
    if (eps.size() != lambda.size())
        throw ShapeError("weibull_rsample: eps count must match lambda");
    std::vector<double> factor(eps.size());
    for (size_t i = 0; i < eps.size(); ++i) {
        if (!(eps[i] > 0.0 && eps[i] < 1.0))
            throw std::domain_error("weibull_rsample: eps must lie strictly inside (0,1)");
        factor[i] = std::pow(-std::log1p(-eps[i]), 1.0 / k);
    }
    Tensor c = tape.constant(lambda.rows(), lambda.cols(), std::move(factor));
    return tape.mul(lambda, c);
}

struct Moments {
    double mean;
    double variance;
};

inline Moments weibull_moments(double k, double lambda) {
    check_weibull(k, lambda);
    double g1 = gamma_pos(1.0 + 1.0 / k);
    double g2 = gamma_pos(1.0 + 2.0 / k);
    return {lambda * g1, lambda * lambda * (g2 - g1 * g1)};
}

inline double weibull_cdf(double k, double lambda, double x) {
    if (x <= 0.0) return 0.0;
    return -std::expm1(-std::pow(x / lambda, k));
}

// ---------------------------------------------------------------------------
// KL( Weibull(k, lambda) || Gamma(alpha, beta) ), closed form:
//   gamma*alpha/k - alpha*log(lambda) + log(k) + beta*lambda*Gamma(1+1/k)
//     - gamma - 1 - alpha*log(beta) + lgamma(alpha)
// Returned raw (can be a hair below zero numerically); callers clamp if they
// need to, so the value stays differentiable inside losses.
// ---------------------------------------------------------------------------

inline double kl_weibull_gamma(double k, double lambda, double alpha, double beta) {
    check_weibull(k, lambda);
    if (!(alpha > 0.0) || !(beta > 0.0))
        throw std::domain_error("kl_weibull_gamma: gamma parameters must be positive");
    const double g = kEulerMascheroni;
    return g * alpha / k - alpha * std::log(lambda) + std::log(k) +
           beta * lambda * gamma_pos(1.0 + 1.0 / k) - g - 1.0 - alpha * std::log(beta) +
           lgamma_pos(alpha);
}

// Elementwise tape version; lambda and alpha share a shape and the result is
// differentiable with respect to both.
inline Tensor kl_weibull_gamma(Tape& tape, double k, Tensor lambda, Tensor alpha, double beta) {
    if (!(k > 0.0) || !(beta > 0.0))
        throw std::domain_error("kl_weibull_gamma: k and beta must be positive");
    if (lambda.rows() != alpha.rows() || lambda.cols() != alpha.cols())
        throw ShapeError("kl_weibull_gamma: lambda/alpha shapes disagree");
    for (double v : lambda.data())
        if (!(v > 0.0)) throw std::domain_error("kl_weibull_gamma: lambda must be positive");
    for (double v : alpha.data())
        if (!(v > 0.0)) throw std::domain_error("kl_weibull_gamma: alpha must be positive");
    const double g = kEulerMascheroni;
    const double mean_coef = beta * gamma_pos(1.0 + 1.0 / k);
    Tensor term = tape.add(tape.scale(alpha, g / k - std::log(beta)),
                           tape.neg(tape.mul(alpha, tape.log(lambda))));
    term = tape.add(term, tape.scale(lambda, mean_coef));
    term = tape.add(term, tape.lgamma(alpha));
    return tape.add_scalar(term, std::log(k) - g - 1.0);
}

// ---------------------------------------------------------------------------
// Generalized gamma (Stacy): f(x|a,d,p) = p/(a^d) x^{d-1}/Gamma(d/p)
//   exp(-(x/a)^p). Weibull(k,lambda) = (a=lambda, d=p=k); Gamma(alpha,beta) =
//   (a=1/beta, d=alpha, p=1). The closed-form KL between two generalized
//   gammas specializes exactly to kl_weibull_gamma, which doubles as an
//   algebraic cross-check on both implementations.
// ---------------------------------------------------------------------------

struct GenGammaParams {
    double a;  // scale
    double d;  // shape
    double p;  // shape
};

inline double kl_generalized_gamma(const GenGammaParams& f1, const GenGammaParams& f2) {
    if (!(f1.a > 0.0 && f1.d > 0.0 && f1.p > 0.0 && f2.a > 0.0 && f2.d > 0.0 && f2.p > 0.0))
        throw std::domain_error("kl_generalized_gamma: all parameters must be positive");
    double r1 = f1.d / f1.p;
    double r2 = f2.d / f2.p;
    // the -d1*log(a1) and +log(a1)*(d1-d2) pieces are merged into
    // -d2*log(a1); writing it that way avoids catastrophic cancellation when
    // d1 is large (the Weibull specialization with big shape k)
    double value = std::log(f1.p / f2.p) + f2.d * std::log(f2.a / f1.a) + lgamma_pos(r2) -
                   lgamma_pos(r1);
    value += digamma(r1) * (f1.d - f2.d) / f1.p;
    value += std::exp(lgamma_pos((f1.d + f2.p) / f1.p) - lgamma_pos(r1)) *
             std::pow(f1.a / f2.a, f2.p);
    value -= r1;
    return value;
}

// ---------------------------------------------------------------------------
// Diagonal Gaussians.
// ---------------------------------------------------------------------------

struct DiagGaussianParams {
    Tensor mu;
    Tensor sigma;
};

inline Tensor gaussian_rsample(Tape& tape, const DiagGaussianParams& p,
                               const std::vector<double>& eps) {
    if (p.mu.rows() != p.sigma.rows() || p.mu.cols() != p.sigma.cols())
        throw ShapeError("gaussian_rsample: mu/sigma shapes disagree");
    if (eps.size() != p.mu.size()) throw ShapeError("gaussian_rsample: eps count mismatch");
    Tensor e = tape.constant(p.mu.rows(), p.mu.cols(), eps);
    return tape.add(p.mu, tape.mul(p.sigma, e));
}

// KL( N(mu_q, sigma_q^2) || N(mu_p, sigma_p^2) ), summed over dimensions.
inline Tensor kl_diag_gaussian(Tape& tape, const DiagGaussianParams& q,
                               const DiagGaussianParams& p) {
    if (q.mu.size() != p.mu.size()) throw ShapeError("kl_diag_gaussian: dimension mismatch");
    Tensor log_ratio = tape.sub(tape.log(p.sigma), tape.log(q.sigma));
    Tensor diff = tape.sub(q.mu, p.mu);
    Tensor var_q = tape.mul(q.sigma, q.sigma);
    Tensor var_p = tape.mul(p.sigma, p.sigma);
    Tensor quad = tape.mul(tape.add(var_q, tape.mul(diff, diff)), tape.reciprocal(var_p));
    Tensor per_dim = tape.add_scalar(tape.add(log_ratio, tape.scale(quad, 0.5)), -0.5);
    return tape.sum_all(per_dim);
}

inline double kl_diag_gaussian_scalar(double mu_q, double sigma_q, double mu_p, double sigma_p) {
    double d = mu_q - mu_p;
    return std::log(sigma_p / sigma_q) +
           (sigma_q * sigma_q + d * d) / (2.0 * sigma_p * sigma_p) - 0.5;
}

// Per-point log N(y | mu, sigma^2), summed over output dimensions:
// rows index points, columns index output dimensions. Result is [n x 1].
inline Tensor gaussian_log_likelihood(Tape& tape, Tensor y, Tensor mu, Tensor sigma) {
    if (y.rows() != mu.rows() || y.cols() != mu.cols() || y.rows() != sigma.rows() ||
        y.cols() != sigma.cols())
        throw ShapeError("gaussian_log_likelihood: shapes disagree");
    for (double s : sigma.data())
        if (!(s > 0.0)) throw std::domain_error("gaussian_log_likelihood: sigma must be positive");
    constexpr double kHalfLog2Pi = 0.91893853320467274178;
    Tensor diff = tape.sub(y, mu);
    Tensor z = tape.mul(diff, tape.reciprocal(sigma));
    Tensor per_dim = tape.add_scalar(
        tape.neg(tape.add(tape.log(sigma), tape.scale(tape.mul(z, z), 0.5))), -kHalfLog2Pi);
    return tape.sum_cols(per_dim);
}

inline double gaussian_log_likelihood_scalar(double y, double mu, double sigma) {
    double z = (y - mu) / sigma;
    return -0.91893853320467274178 - std::log(sigma) - 0.5 * z * z;
}

}  // namespace npsa
