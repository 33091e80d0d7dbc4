#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "npsa/distributions.hpp"
#include "npsa/nn.hpp"
#include "npsa/tensor.hpp"

namespace npsa {

enum class LambdaRule { kDivide, kMultiply };

// Multi-head cross attention: linear projections to d_h, heads of width
// d_h/heads, scaled dot-product per head, concatenation, output projection,
// LayerNorm. Queries are target features, keys are context features, values
// are per-context-point embeddings.
struct MhaConfig {
    size_t d_q = 1;
    size_t d_k = 1;
    size_t d_v = 0;  // value input width (embedding dim)
    size_t d_h = 0;
    size_t heads = 0;
};

inline void init_mha(ParamStore& store, const std::string& prefix, const MhaConfig& cfg,
                     Rng& rng) {
    if (cfg.d_h % cfg.heads != 0)
        throw ValidationError("mha: d_h must be divisible by the head count");
    init_linear(store, prefix + ".q", cfg.d_q, cfg.d_h, rng);
    init_linear(store, prefix + ".k", cfg.d_k, cfg.d_h, rng);
    init_linear(store, prefix + ".v", cfg.d_v, cfg.d_h, rng);
    init_linear(store, prefix + ".o", cfg.d_h, cfg.d_h, rng);
    init_layer_norm(store, prefix, cfg.d_h);
}

struct DetAttnOutput {
    Tensor local_rep;             // [n x d_h]
    std::vector<Tensor> weights;  // per head, [n x m] softmax rows
};

struct StochAttnOutput {
    Tensor local_rep;                 // [n x d_h]
    std::vector<Tensor> weights;      // per head, [n x m], renormalized simplex rows
    std::vector<Tensor> raw_weights;  // per head, pre-normalization Weibull samples
    std::vector<Tensor> lambda;       // per head, Weibull scales
    Tensor alpha;                     // [1 x m] prior shapes (shared across heads)
    Tensor kl_total;                  // scalar: sum_j KL, averaged over heads x rows
};

namespace detail {

struct HeadSplit {
    std::vector<Tensor> q, k, v;  // per head: [n x dh], [m x dh], [m x dh]
    size_t d_head = 0;
};

inline HeadSplit project_and_split(Tape& tape, ParamStore& store, const std::string& prefix,
                                   const MhaConfig& cfg, Tensor q_in, Tensor k_in, Tensor v_in) {
    if (k_in.rows() != v_in.rows())
        throw ShapeError("mha: key and value counts disagree");
    if (k_in.rows() == 0) throw ShapeError("mha: needs at least one key/value pair");
    Tensor q_proj = linear_forward(tape, store, prefix + ".q", q_in);
    Tensor k_proj = linear_forward(tape, store, prefix + ".k", k_in);
    Tensor v_proj = linear_forward(tape, store, prefix + ".v", v_in);
    HeadSplit hs;
    hs.d_head = cfg.d_h / cfg.heads;
    for (size_t h = 0; h < cfg.heads; ++h) {
        size_t c0 = h * hs.d_head, c1 = (h + 1) * hs.d_head;
        hs.q.push_back(tape.slice_cols(q_proj, c0, c1));
        hs.k.push_back(tape.slice_cols(k_proj, c0, c1));
        hs.v.push_back(tape.slice_cols(v_proj, c0, c1));
    }
    return hs;
}

inline Tensor scores(Tape& tape, Tensor q_h, Tensor k_h, size_t d_head) {
    Tensor s = tape.matmul(q_h, tape.transpose(k_h));
    for (double v : s.data())
        if (!std::isfinite(v)) throw NumericError("mha: non-finite attention logits");
    return tape.scale(s, 1.0 / std::sqrt(static_cast<double>(d_head)));
}

inline Tensor combine_heads(Tape& tape, ParamStore& store, const std::string& prefix,
                            const std::vector<Tensor>& heads) {
    Tensor cat = heads[0];
    for (size_t h = 1; h < heads.size(); ++h) cat = tape.concat_cols(cat, heads[h]);
    Tensor out = linear_forward(tape, store, prefix + ".o", cat);
    return layer_norm_forward(tape, store, prefix, out);
}

}  // namespace detail

inline DetAttnOutput mha_deterministic(Tape& tape, ParamStore& store, const std::string& prefix,
                                       const MhaConfig& cfg, Tensor q_in, Tensor k_in,
                                       Tensor v_in) {
    auto hs = detail::project_and_split(tape, store, prefix, cfg, q_in, k_in, v_in);
    DetAttnOutput out;
    std::vector<Tensor> per_head;
    for (size_t h = 0; h < cfg.heads; ++h) {
        Tensor w = tape.softmax_rows(detail::scores(tape, hs.q[h], hs.k[h], hs.d_head));
        out.weights.push_back(w);
        per_head.push_back(tape.matmul(w, hs.v[h], /*stable=*/true));
    }
    out.local_rep = detail::combine_heads(tape, store, prefix, per_head);
    return out;
}

// Stochastic attention (Bayesian attention module): per head the standard
// softmax weights become Weibull scales, unnormalized weights are drawn via
// the inverse CDF with per-cell uniform noise, rows are renormalized to the
// simplex, and the summed KL to the key-based Gamma prior is returned.
//
// lambda_rule kDivide sets lambda = w_standard / Gamma(1+1/k) so that
// E[w_raw] = w_standard (mean matching); kMultiply follows the other reading
// of the update rule, lambda = w_standard * Gamma(1+1/k).
inline StochAttnOutput mha_stochastic(Tape& tape, ParamStore& store, const std::string& prefix,
                                      const MhaConfig& cfg, Tensor q_in, Tensor k_in, Tensor v_in,
                                      double k_shape, double beta, LambdaRule lambda_rule,
                                      const MlpSpec& alpha_spec,
                                      const std::vector<double>& eps1) {
    if (!(k_shape > 0.0)) throw std::domain_error("mha_stochastic: k_shape must be positive");
    auto hs = detail::project_and_split(tape, store, prefix, cfg, q_in, k_in, v_in);
    size_t n = q_in.rows(), m = k_in.rows();
    if (eps1.size() != cfg.heads * n * m)
        throw ShapeError("mha_stochastic: noise count must be heads*n*m");

    // key-based contextual prior: alpha_j = softplus(MLP(x_j)) + 1e-4
    Tensor alpha_col = tape.add_scalar(
        tape.softplus(mlp_forward(tape, store, prefix + ".alpha", alpha_spec, k_in)), 1e-4);
    Tensor alpha_row = tape.transpose(alpha_col);
    Tensor alpha_bc = tape.broadcast_rows(alpha_row, n);

    double gamma_k = gamma_pos(1.0 + 1.0 / k_shape);
    double lam_scale = lambda_rule == LambdaRule::kDivide ? 1.0 / gamma_k : gamma_k;

    StochAttnOutput out;
    out.alpha = alpha_row;
    std::vector<Tensor> per_head;
    Tensor kl_sum = tape.scalar_const(0.0);
    for (size_t h = 0; h < cfg.heads; ++h) {
        Tensor w_std = tape.softmax_rows(detail::scores(tape, hs.q[h], hs.k[h], hs.d_head));
        Tensor lam = tape.scale(w_std, lam_scale);
        std::vector<double> eps_h(eps1.begin() + h * n * m, eps1.begin() + (h + 1) * n * m);
        Tensor w_raw = weibull_rsample(tape, lam, k_shape, eps_h);
        Tensor w = tape.div_colvec(w_raw, tape.sum_cols(w_raw));
        out.lambda.push_back(lam);
        out.raw_weights.push_back(w_raw);
        out.weights.push_back(w);
        per_head.push_back(tape.matmul(w, hs.v[h], /*stable=*/true));
        kl_sum = tape.add(kl_sum,
                          tape.sum_all(kl_weibull_gamma(tape, k_shape, lam, alpha_bc, beta)));
    }
    out.kl_total = tape.scale(kl_sum, 1.0 / (static_cast<double>(cfg.heads) *
                                             static_cast<double>(n)));
    out.local_rep = detail::combine_heads(tape, store, prefix, per_head);
    return out;
}

}  // namespace npsa
