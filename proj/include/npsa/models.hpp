#pragma once

#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "npsa/attention.hpp"
#include "npsa/distributions.hpp"
#include "npsa/nn.hpp"
#include "npsa/task.hpp"
#include "npsa/tensor.hpp"

namespace npsa {

enum class Family { kCnp, kNp, kAnp, kNpsa };

inline std::string family_name(Family f) {
    switch (f) {
        case Family::kCnp: return "CNP";
        case Family::kNp: return "NP";
        case Family::kAnp: return "ANP";
        case Family::kNpsa: return "NPSA";
    }
    throw ValidationError("unknown family");
}

inline Family family_from_name(const std::string& s) {
    if (s == "CNP") return Family::kCnp;
    if (s == "NP") return Family::kNp;
    if (s == "ANP") return Family::kAnp;
    if (s == "NPSA") return Family::kNpsa;
    throw ValidationError("unknown model family: " + s);
}

struct ModelConfig {
    Family family = Family::kNpsa;
    size_t d_x = 1, d_y = 1;
    size_t d_h = 64, heads = 8;
    size_t l_pre = 3, l_post = 1, l_dec = 3;
    double k_shape = 300.0;
    double beta = 1.0;
    double sigma_floor = 0.01;
    LambdaRule lambda_rule = LambdaRule::kDivide;
    bool use_attn_kl = true;
    double attn_kl_weight = 1.0;
    double weight_decay = 0.0;
    int iwae_samples = 1;

    bool has_latent() const { return family != Family::kCnp; }
    bool has_attention() const { return family == Family::kAnp || family == Family::kNpsa; }

    void validate() const {
        if (d_x == 0 || d_y == 0 || d_h == 0) throw ValidationError("ModelConfig: zero dimension");
        if (has_attention() && (heads == 0 || d_h % heads != 0))
            throw ValidationError("ModelConfig: d_h must be divisible by heads");
        if (!(k_shape > 0.0)) throw ValidationError("ModelConfig: K must be positive");
        if (!(beta > 0.0)) throw ValidationError("ModelConfig: beta must be positive");
        if (!(sigma_floor > 0.0)) throw ValidationError("ModelConfig: sigma_floor must be positive");
        if (iwae_samples < 1) throw ValidationError("ModelConfig: iwae_samples must be >= 1");
        if (l_pre < 1 || l_post < 1 || l_dec < 1)
            throw ValidationError("ModelConfig: layer counts must be >= 1");
    }

    MlpSpec det_pre_spec() const { return {l_pre, d_x + d_y, d_h, d_h}; }
    MlpSpec det_post_spec() const { return {l_post, d_h, d_h, d_h}; }
    MlpSpec lat_pre_spec() const { return {l_pre, d_x + d_y, d_h, d_h}; }
    MlpSpec lat_post_spec() const { return {l_post, d_h, d_h, 2 * d_h}; }
    MlpSpec val_pre_spec() const { return {l_pre, d_x + d_y, d_h, d_h}; }
    // shared nonlinear embedding for queries and keys; with raw scalar
    // inputs the dot-product score would be linear in x_j and could never
    // peak at x_j near x_i
    MlpSpec qk_spec() const { return {2, d_x, d_h, d_h}; }
    MlpSpec alpha_spec() const { return {2, d_h, d_h, 1}; }
    MlpSpec dec_spec() const {
        size_t d_in = d_x + d_h + (has_attention() ? d_h : 0);
        return {l_dec, d_in, d_h, 2 * d_y};
    }
    MhaConfig mha_config() const { return {d_h, d_h, d_h, d_h, heads}; }
};

struct Model {
    ModelConfig cfg;
    ParamStore params;

    Model(ModelConfig c, uint64_t init_seed) : cfg(c) {
        cfg.validate();
        Rng rng(derive_seed(init_seed, "init"));
        if (cfg.family == Family::kCnp) {
            init_mlp(params, "det_pre", cfg.det_pre_spec(), rng);
            init_mlp(params, "det_post", cfg.det_post_spec(), rng);
        }
        if (cfg.has_latent()) {
            init_mlp(params, "lat_pre", cfg.lat_pre_spec(), rng);
            init_mlp(params, "lat_post", cfg.lat_post_spec(), rng);
        }
        if (cfg.has_attention()) {
            init_mlp(params, "val_pre", cfg.val_pre_spec(), rng);
            init_mlp(params, "qk", cfg.qk_spec(), rng);
            init_mha(params, "attn", cfg.mha_config(), rng);
            if (cfg.family == Family::kNpsa) init_mlp(params, "attn.alpha", cfg.alpha_spec(), rng);
        }
        init_mlp(params, "dec", cfg.dec_spec(), rng);
    }
};

enum class Mode { kTrain, kEval };

// All model randomness for one forward pass, drawn in a fixed order.
struct NoiseDraws {
    std::vector<double> z_eps;     // d_h standard normals
    std::vector<double> attn_eps;  // heads*n*m uniforms in (0,1), [h][i][j]
};

inline NoiseDraws draw_noise(const ModelConfig& cfg, size_t n_target, size_t n_context,
                             Rng& rng) {
    NoiseDraws noise;
    if (cfg.has_latent()) {
        noise.z_eps.resize(cfg.d_h);
        for (double& v : noise.z_eps) v = rng.normal();
    }
    if (cfg.family == Family::kNpsa) {
        noise.attn_eps.resize(cfg.heads * n_target * n_context);
        for (double& v : noise.attn_eps) v = rng.uniform();
    }
    return noise;
}

struct LatentOutput {
    DiagGaussianParams q_target;   // from (X, Y); only populated in train mode
    DiagGaussianParams q_context;  // from (X_c, Y_c)
    Tensor z;                      // [1 x d_h] sample
    Tensor kl_z;                   // scalar (0 in eval mode)
};

struct ForwardTrace {
    Tensor mu;            // [n x d_y]
    Tensor sigma;         // [n x d_y]
    Tensor ll_per_point;  // [n x 1], summed over output dims
    std::optional<LatentOutput> latent;
    std::optional<StochAttnOutput> attn;
    std::optional<DetAttnOutput> det_attn;
};

namespace detail {

inline DiagGaussianParams latent_params(Tape& tape, Model& model, Tensor x, Tensor y) {
    const ModelConfig& cfg = model.cfg;
    Tensor h = tape.mean_rows(
        mlp_forward(tape, model.params, "lat_pre", cfg.lat_pre_spec(), tape.concat_cols(x, y)));
    Tensor raw = mlp_forward(tape, model.params, "lat_post", cfg.lat_post_spec(), h);
    Tensor mu = tape.slice_cols(raw, 0, cfg.d_h);
    Tensor sigma = tape.add_scalar(
        tape.scale(tape.sigmoid(tape.slice_cols(raw, cfg.d_h, 2 * cfg.d_h)), 0.9), 0.1);
    return {mu, sigma};
}

}  // namespace detail

// Mean-aggregated deterministic representation (Eq-style CNP path): [1 x d_h].
inline Tensor deterministic_encoder(Tape& tape, Model& model, Tensor xc, Tensor yc) {
    if (xc.rows() == 0) throw ShapeError("deterministic_encoder: empty context");
    Tensor h = tape.mean_rows(mlp_forward(tape, model.params, "det_pre",
                                          model.cfg.det_pre_spec(), tape.concat_cols(xc, yc)));
    return mlp_forward(tape, model.params, "det_post", model.cfg.det_post_spec(), h);
}

inline DiagGaussianParams latent_encoder(Tape& tape, Model& model, Tensor x, Tensor y) {
    if (x.rows() == 0) throw ShapeError("latent_encoder: empty set");
    return detail::latent_params(tape, model, x, y);
}

// Cross-attention inputs: queries and keys share one embedding of the raw
// inputs, values embed the full (x, y) context pairs.
struct AttnInputs {
    Tensor q;  // [n x d_h]
    Tensor k;  // [m x d_h]
    Tensor v;  // [m x d_h]
};

inline AttnInputs attention_inputs(Tape& tape, Model& model, Tensor xt, Tensor xc, Tensor yc) {
    const ModelConfig& cfg = model.cfg;
    AttnInputs in;
    in.q = mlp_forward(tape, model.params, "qk", cfg.qk_spec(), xt);
    in.k = mlp_forward(tape, model.params, "qk", cfg.qk_spec(), xc);
    in.v = mlp_forward(tape, model.params, "val_pre", cfg.val_pre_spec(),
                       tape.concat_cols(xc, yc));
    return in;
}

inline ForwardTrace forward(Tape& tape, Model& model, const Task& task, Mode mode,
                            const NoiseDraws& noise) {
    const ModelConfig& cfg = model.cfg;
    task.validate();
    if (task.d_x != cfg.d_x || task.d_y != cfg.d_y)
        throw ValidationError("forward: task dimensions do not match the model");
    size_t n = task.n_target, m = task.n_context;

    Tensor xc = tape.constant(m, cfg.d_x, task.x_context);
    Tensor yc = tape.constant(m, cfg.d_y, task.y_context);
    Tensor xt = tape.constant(n, cfg.d_x, task.x_target);
    Tensor yt = tape.constant(n, cfg.d_y, task.y_target);

    ForwardTrace trace;
    Tensor rep;  // [n x (d_h or 2 d_h)] conditioning columns for the decoder

    if (cfg.family == Family::kCnp) {
        rep = tape.broadcast_rows(deterministic_encoder(tape, model, xc, yc), n);
    } else {
        LatentOutput latent;
        latent.q_context = detail::latent_params(tape, model, xc, yc);
        if (mode == Mode::kTrain) {
            latent.q_target = detail::latent_params(tape, model, xt, yt);
            latent.z = gaussian_rsample(tape, latent.q_target, noise.z_eps);
            latent.kl_z = kl_diag_gaussian(tape, latent.q_target, latent.q_context);
        } else {
            latent.z = gaussian_rsample(tape, latent.q_context, noise.z_eps);
            latent.kl_z = tape.scalar_const(0.0);
        }
        Tensor z_bc = tape.broadcast_rows(latent.z, n);
        if (cfg.has_attention()) {
            AttnInputs in = attention_inputs(tape, model, xt, xc, yc);
            if (cfg.family == Family::kNpsa) {
                trace.attn = mha_stochastic(tape, model.params, "attn", cfg.mha_config(), in.q,
                                            in.k, in.v, cfg.k_shape, cfg.beta, cfg.lambda_rule,
                                            cfg.alpha_spec(), noise.attn_eps);
                rep = tape.concat_cols(z_bc, trace.attn->local_rep);
            } else {
                trace.det_attn = mha_deterministic(tape, model.params, "attn", cfg.mha_config(),
                                                   in.q, in.k, in.v);
                rep = tape.concat_cols(z_bc, trace.det_attn->local_rep);
            }
        } else {
            rep = z_bc;
        }
        trace.latent = std::move(latent);
    }

    Tensor dec_out = mlp_forward(tape, model.params, "dec", cfg.dec_spec(),
                                 tape.concat_cols(rep, xt));
    trace.mu = tape.slice_cols(dec_out, 0, cfg.d_y);
    Tensor raw_sigma = tape.slice_cols(dec_out, cfg.d_y, 2 * cfg.d_y);
    trace.sigma = tape.add_scalar(tape.scale(tape.softplus(raw_sigma), 1.0 - cfg.sigma_floor),
                                  cfg.sigma_floor);
    trace.ll_per_point = gaussian_log_likelihood(tape, yt, trace.mu, trace.sigma);
    return trace;
}

struct LossOutput {
    Tensor total;  // scalar on the tape
    // value breakdown; total == recon + kl_z_term + kl_w_term exactly
    double recon = 0.0, kl_z_term = 0.0, kl_w_term = 0.0;
    ForwardTrace trace;
};

namespace detail {

// Single-sample negative ELBO with its reconstruction/KL decomposition.
inline LossOutput single_sample_loss(Tape& tape, Model& model, const Task& task,
                                     const NoiseDraws& noise) {
    const ModelConfig& cfg = model.cfg;
    double inv_n = 1.0 / static_cast<double>(task.n_target);
    LossOutput out;
    out.trace = forward(tape, model, task, Mode::kTrain, noise);
    Tensor recon = tape.scale(tape.sum_all(out.trace.ll_per_point), -inv_n);
    Tensor total = recon;
    if (cfg.has_latent()) {
        Tensor kl_term = tape.scale(out.trace.latent->kl_z, inv_n);
        total = tape.add(total, kl_term);
        out.kl_z_term = kl_term.scalar();
    }
    if (cfg.family == Family::kNpsa && cfg.use_attn_kl) {
        Tensor w_term = tape.scale(out.trace.attn->kl_total, cfg.attn_kl_weight);
        total = tape.add(total, w_term);
        out.kl_w_term = w_term.scalar();
    }
    out.recon = recon.scalar();
    out.total = total;
    return out;
}

}  // namespace detail

// Per-task training objective. iwae_samples == 1 gives the plain negative
// ELBO (CNP: plain negative mean log-likelihood). iwae_samples == s > 1
// aggregates s joint samples of (z, attention noise) by -log-mean-exp of the
// per-sample ELBO estimates; the logged KL components are sample averages
// and recon is defined by the recomposition identity.
inline LossOutput task_loss(Tape& tape, Model& model, const Task& task,
                            const std::vector<NoiseDraws>& noises) {
    const ModelConfig& cfg = model.cfg;
    if (noises.empty()) throw ValidationError("task_loss: needs at least one noise draw");
    if (cfg.iwae_samples == 1 || cfg.family == Family::kCnp || noises.size() == 1)
        return detail::single_sample_loss(tape, model, task, noises[0]);

    std::vector<LossOutput> samples;
    samples.reserve(noises.size());
    for (const auto& noise : noises)
        samples.push_back(detail::single_sample_loss(tape, model, task, noise));

    // -log mean exp of the per-sample ELBOs (ELBO_s = -loss_s)
    double c = -samples[0].total.scalar();
    for (const auto& s : samples) c = std::max(c, -s.total.scalar());
    Tensor acc = tape.scalar_const(0.0);
    for (const auto& s : samples)
        acc = tape.add(acc, tape.exp(tape.add_scalar(tape.neg(s.total), -c)));
    Tensor total = tape.neg(
        tape.add_scalar(tape.log(tape.scale(acc, 1.0 / static_cast<double>(samples.size()))), c));

    LossOutput out;
    out.total = total;
    out.trace = samples[0].trace;
    for (const auto& s : samples) {
        out.kl_z_term += s.kl_z_term / static_cast<double>(samples.size());
        out.kl_w_term += s.kl_w_term / static_cast<double>(samples.size());
    }
    out.recon = total.scalar() - out.kl_z_term - out.kl_w_term;
    return out;
}

inline LossOutput task_loss(Tape& tape, Model& model, const Task& task, uint64_t noise_seed) {
    Rng rng(noise_seed);
    std::vector<NoiseDraws> noises;
    int s = (model.cfg.family == Family::kCnp) ? 1 : model.cfg.iwae_samples;
    for (int i = 0; i < s; ++i)
        noises.push_back(draw_noise(model.cfg, task.n_target, task.n_context, rng));
    return task_loss(tape, model, task, noises);
}

struct PredictOutput {
    size_t n = 0, d_y = 0;
    std::vector<double> mu;     // [n x d_y]
    std::vector<double> sigma;  // [n x d_y]
    std::vector<double> ll;     // [n], per-point log-likelihood of y_target
};

// One Monte-Carlo sample. Eval mode conditions the latent on the context set
// only and never reads target labels on the output path.
inline PredictOutput predict(Model& model, const Task& task, Mode mode, uint64_t seed) {
    Tape tape;
    Rng rng(seed);
    NoiseDraws noise = draw_noise(model.cfg, task.n_target, task.n_context, rng);
    ForwardTrace trace = forward(tape, model, task, mode, noise);
    PredictOutput out;
    out.n = task.n_target;
    out.d_y = task.d_y;
    out.mu = trace.mu.data();
    out.sigma = trace.sigma.data();
    out.ll = trace.ll_per_point.data();
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint: format-version tag + full config + every named parameter as a
// flat row-major array. JSON doubles round-trip exactly (shortest-repr), so
// reloads reproduce bit-identical predictions.
// ---------------------------------------------------------------------------

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    return nlohmann::json{{"family", family_name(cfg.family)},
                          {"d_x", cfg.d_x},
                          {"d_y", cfg.d_y},
                          {"d_h", cfg.d_h},
                          {"heads", cfg.heads},
                          {"l_pre", cfg.l_pre},
                          {"l_post", cfg.l_post},
                          {"l_dec", cfg.l_dec},
                          {"k_shape", cfg.k_shape},
                          {"beta", cfg.beta},
                          {"sigma_floor", cfg.sigma_floor},
                          {"lambda_rule", cfg.lambda_rule == LambdaRule::kDivide ? "divide" : "multiply"},
                          {"use_attn_kl", cfg.use_attn_kl},
                          {"attn_kl_weight", cfg.attn_kl_weight},
                          {"weight_decay", cfg.weight_decay},
                          {"iwae_samples", cfg.iwae_samples}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j);

constexpr int kCheckpointFormatVersion = 1;

inline nlohmann::json checkpoint_to_json(const Model& model) {
    nlohmann::json params = nlohmann::json::object();
    for (const Parameter* p : model.params.all())
        params[p->name] = {{"rows", p->rows}, {"cols", p->cols}, {"data", p->value}};
    return nlohmann::json{{"format_version", kCheckpointFormatVersion},
                          {"config", model_config_to_json(model.cfg)},
                          {"params", params}};
}

inline void save_checkpoint(const Model& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out << checkpoint_to_json(model).dump(1) << "\n";
    if (!out) throw IoError("failed writing checkpoint: " + path);
}

inline Model model_from_checkpoint_json(const nlohmann::json& j) {
    if (!j.contains("format_version") || j["format_version"].get<int>() != kCheckpointFormatVersion)
        throw ValidationError("checkpoint: unsupported or missing format_version");
    Model model(model_config_from_json(j.at("config")), /*init_seed=*/0);
    const auto& params = j.at("params");
    for (Parameter* p : model.params.all()) {
        if (!params.contains(p->name))
            throw ValidationError("checkpoint: missing parameter " + p->name);
        const auto& jp = params.at(p->name);
        if (jp.at("rows").get<size_t>() != p->rows || jp.at("cols").get<size_t>() != p->cols)
            throw ValidationError("checkpoint: shape mismatch for " + p->name);
        p->value = jp.at("data").get<std::vector<double>>();
    }
    return model;
}

inline Model load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint parse error: ") + e.what());
    }
    return model_from_checkpoint_json(j);
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.family = family_from_name(j.at("family").get<std::string>());
    cfg.d_x = j.at("d_x").get<size_t>();
    cfg.d_y = j.at("d_y").get<size_t>();
    cfg.d_h = j.at("d_h").get<size_t>();
    cfg.heads = j.at("heads").get<size_t>();
    cfg.l_pre = j.at("l_pre").get<size_t>();
    cfg.l_post = j.at("l_post").get<size_t>();
    cfg.l_dec = j.at("l_dec").get<size_t>();
    cfg.k_shape = j.at("k_shape").get<double>();
    cfg.beta = j.at("beta").get<double>();
    cfg.sigma_floor = j.at("sigma_floor").get<double>();
    std::string rule = j.at("lambda_rule").get<std::string>();
    if (rule == "divide")
        cfg.lambda_rule = LambdaRule::kDivide;
    else if (rule == "multiply")
        cfg.lambda_rule = LambdaRule::kMultiply;
    else
        throw ValidationError("checkpoint: unknown lambda_rule " + rule);
    cfg.use_attn_kl = j.at("use_attn_kl").get<bool>();
    cfg.attn_kl_weight = j.at("attn_kl_weight").get<double>();
    cfg.weight_decay = j.at("weight_decay").get<double>();
    cfg.iwae_samples = j.at("iwae_samples").get<int>();
    cfg.validate();
    return cfg;
}

}  // namespace npsa
