#pragma once

#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "npsa/datagen.hpp"
#include "npsa/models.hpp"
#include "npsa/training.hpp"

namespace npsa {

// Strict JSON run configuration: unknown keys are rejected, validation
// errors name the offending field path.

namespace cfgdetail {

using nlohmann::json;

inline void reject_unknown(const json& j, const std::string& path,
                           const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ValidationError(path + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ValidationError(path + "." + it.key() + ": unknown field");
}

template <typename T>
T require(const json& j, const std::string& path, const std::string& key) {
    if (!j.contains(key)) throw ValidationError(path + "." + key + ": required field is missing");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ValidationError(path + "." + key + ": wrong type");
    }
}

template <typename T>
T get_or(const json& j, const std::string& path, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ValidationError(path + "." + key + ": wrong type");
    }
}

inline KernelSpec kernel_from_json(const json& j, const std::string& path) {
    reject_unknown(j, path, {"family", "s", "l", "freq", "p"});
    KernelSpec k;
    k.family = kernel_from_name(require<std::string>(j, path, "family"));
    k.s = get_or(j, path, "s", 3.0);
    k.l = get_or(j, path, "l", 3.0);
    k.freq = get_or(j, path, "freq", 10.0);
    k.p = get_or(j, path, "p", 2.0 * M_PI);
    try {
        k.validate();
    } catch (const ValidationError& e) {
        throw ValidationError(path + ": " + e.what());
    }
    return k;
}

inline json kernel_to_json(const KernelSpec& k) {
    return json{{"family", kernel_name(k.family)}, {"s", k.s}, {"l", k.l}, {"freq", k.freq},
                {"p", k.p}};
}

}  // namespace cfgdetail

struct EvalConfig {
    std::vector<std::string> kernels{"rbf", "matern", "periodic"};
    bool noisy = false;
    size_t n_tasks = 200;
    uint64_t seed = 7;
};

struct RunConfig {
    std::string experiment;  // "regression1d" | "sim2real"
    ModelConfig model;
    TrainConfig train;
    RegressionTaskSpec regression;  // used when experiment == regression1d
    LVSimSpec lv;                   // used when experiment == sim2real
    EvalConfig eval;

    TaskSource make_train_source() const {
        if (experiment == "regression1d") {
            RegressionTaskSpec spec = regression;
            return [spec](uint64_t s) { return make_regression_task(spec, s); };
        }
        LVSimSpec spec = lv;
        return [spec](uint64_t s) { return make_lv_sim_task(spec, s); };
    }
};

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    using cfgdetail::get_or;
    using cfgdetail::reject_unknown;
    using cfgdetail::require;
    RunConfig cfg;
    reject_unknown(j, "config", {"experiment", "model", "train", "data", "eval"});
    cfg.experiment = require<std::string>(j, "config", "experiment");
    if (cfg.experiment != "regression1d" && cfg.experiment != "sim2real")
        throw ValidationError("config.experiment: must be 'regression1d' or 'sim2real'");

    // model
    if (!j.contains("model")) throw ValidationError("config.model: required field is missing");
    const auto& jm = j.at("model");
    reject_unknown(jm, "model",
                   {"family", "d_h", "heads", "l_pre", "l_post", "l_dec", "k_shape", "beta",
                    "sigma_floor", "lambda_rule", "use_attn_kl", "attn_kl_weight", "weight_decay",
                    "iwae_samples"});
    ModelConfig& m = cfg.model;
    m.family = family_from_name(require<std::string>(jm, "model", "family"));
    m.d_x = 1;
    m.d_y = cfg.experiment == "sim2real" ? 2 : 1;
    m.d_h = get_or<size_t>(jm, "model", "d_h", 64);
    m.heads = get_or<size_t>(jm, "model", "heads", 8);
    m.l_pre = get_or<size_t>(jm, "model", "l_pre", 3);
    m.l_post = get_or<size_t>(jm, "model", "l_post", 1);
    m.l_dec = get_or<size_t>(jm, "model", "l_dec", 3);
    m.k_shape = get_or(jm, "model", "k_shape", 300.0);
    m.beta = get_or(jm, "model", "beta", 1.0);
    m.sigma_floor = get_or(jm, "model", "sigma_floor", 0.01);
    std::string rule = get_or<std::string>(jm, "model", "lambda_rule", "divide");
    if (rule == "divide")
        m.lambda_rule = LambdaRule::kDivide;
    else if (rule == "multiply")
        m.lambda_rule = LambdaRule::kMultiply;
    else
        throw ValidationError("model.lambda_rule: must be 'divide' or 'multiply'");
    m.use_attn_kl = get_or(jm, "model", "use_attn_kl", true);
    m.attn_kl_weight = get_or(jm, "model", "attn_kl_weight", 1.0);
    m.weight_decay = get_or(jm, "model", "weight_decay", 0.0);
    m.iwae_samples = get_or(jm, "model", "iwae_samples", 1);
    try {
        m.validate();
    } catch (const ValidationError& e) {
        throw ValidationError(std::string("model: ") + e.what());
    }

    // train
    const auto jt = j.contains("train") ? j.at("train") : nlohmann::json::object();
    reject_unknown(jt, "train",
                   {"steps", "batch_size", "eval_every", "seed", "clip_norm", "lr"});
    cfg.train.steps = get_or<size_t>(jt, "train", "steps", 20000);
    cfg.train.batch_size = get_or<size_t>(jt, "train", "batch_size",
                                          cfg.experiment == "sim2real" ? 10 : 1);
    cfg.train.eval_every = get_or<size_t>(jt, "train", "eval_every", 0);
    cfg.train.seed = get_or<uint64_t>(jt, "train", "seed", 1);
    cfg.train.clip_norm = get_or(jt, "train", "clip_norm", 10.0);
    cfg.train.adam.lr = get_or(jt, "train", "lr", 1e-3);
    try {
        cfg.train.validate();
    } catch (const ValidationError& e) {
        throw ValidationError(std::string("train: ") + e.what());
    }

    // data
    const auto jd = j.contains("data") ? j.at("data") : nlohmann::json::object();
    if (cfg.experiment == "regression1d") {
        reject_unknown(jd, "data", {"train_kernel", "noise"});
        if (jd.contains("train_kernel"))
            cfg.regression.train_kernel =
                cfgdetail::kernel_from_json(jd.at("train_kernel"), "data.train_kernel");
        if (jd.contains("noise")) {
            const auto& jn = jd.at("noise");
            reject_unknown(jn, "data.noise", {"enabled", "family", "s", "l", "freq", "p"});
            if (get_or(jn, "data.noise", "enabled", true)) {
                KernelSpec k = RegressionTaskSpec::default_noise();
                k.family = kernel_from_name(
                    get_or<std::string>(jn, "data.noise", "family", "periodic"));
                k.s = get_or(jn, "data.noise", "s", 1.0);
                k.l = get_or(jn, "data.noise", "l", 1.0);
                k.freq = get_or(jn, "data.noise", "freq", 30.0);
                k.p = get_or(jn, "data.noise", "p", 2.0 * M_PI);
                k.validate();
                cfg.regression.noise_kernel = k;
            }
        }
    } else {
        reject_unknown(jd, "data",
                       {"theta", "t_max", "grid_points", "max_events", "init_min", "init_max",
                        "max_population"});
        if (jd.contains("theta")) {
            auto th = require<std::vector<double>>(jd, "data", "theta");
            if (th.size() != 4) throw ValidationError("data.theta: expected 4 values");
            cfg.lv.theta = {th[0], th[1], th[2], th[3]};
        }
        cfg.lv.t_max = get_or(jd, "data", "t_max", 30.0);
        cfg.lv.grid_points = get_or<size_t>(jd, "data", "grid_points", 100);
        cfg.lv.max_events = get_or<size_t>(jd, "data", "max_events", 100000);
        cfg.lv.init_min = get_or<int64_t>(jd, "data", "init_min", 50);
        cfg.lv.init_max = get_or<int64_t>(jd, "data", "init_max", 100);
        cfg.lv.max_population = get_or(jd, "data", "max_population", 600.0);
        try {
            cfg.lv.validate();
        } catch (const ValidationError& e) {
            throw ValidationError(std::string("data: ") + e.what());
        }
    }

    // eval
    const auto je = j.contains("eval") ? j.at("eval") : nlohmann::json::object();
    reject_unknown(je, "eval", {"kernels", "noisy", "n_tasks", "seed"});
    cfg.eval.kernels = get_or(je, "eval", "kernels",
                              std::vector<std::string>{"rbf", "matern", "periodic"});
    for (const auto& k : cfg.eval.kernels) kernel_from_name(k);  // validate names
    cfg.eval.noisy = get_or(je, "eval", "noisy", false);
    cfg.eval.n_tasks = get_or<size_t>(je, "eval", "n_tasks", 200);
    cfg.eval.seed = get_or<uint64_t>(je, "eval", "seed", 7);
    return cfg;
}

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["experiment"] = cfg.experiment;
    j["model"] = model_config_to_json(cfg.model);
    j["model"].erase("d_x");
    j["model"].erase("d_y");
    j["train"] = {{"steps", cfg.train.steps},
                  {"batch_size", cfg.train.batch_size},
                  {"eval_every", cfg.train.eval_every},
                  {"seed", cfg.train.seed},
                  {"clip_norm", cfg.train.clip_norm},
                  {"lr", cfg.train.adam.lr}};
    if (cfg.experiment == "regression1d") {
        j["data"]["train_kernel"] = cfgdetail::kernel_to_json(cfg.regression.train_kernel);
        nlohmann::json noise = {{"enabled", cfg.regression.noise_kernel.has_value()}};
        if (cfg.regression.noise_kernel) {
            const KernelSpec& k = *cfg.regression.noise_kernel;
            noise["family"] = kernel_name(k.family);
            noise["s"] = k.s;
            noise["l"] = k.l;
            noise["freq"] = k.freq;
            noise["p"] = k.p;
        }
        j["data"]["noise"] = noise;
    } else {
        j["data"] = {{"theta", std::vector<double>{cfg.lv.theta.theta1, cfg.lv.theta.theta2,
                                                   cfg.lv.theta.theta3, cfg.lv.theta.theta4}},
                     {"t_max", cfg.lv.t_max},
                     {"grid_points", cfg.lv.grid_points},
                     {"max_events", cfg.lv.max_events},
                     {"init_min", cfg.lv.init_min},
                     {"init_max", cfg.lv.init_max},
                     {"max_population", cfg.lv.max_population}};
    }
    j["eval"] = {{"kernels", cfg.eval.kernels},
                 {"noisy", cfg.eval.noisy},
                 {"n_tasks", cfg.eval.n_tasks},
                 {"seed", cfg.eval.seed}};
    return j;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("config parse error: ") + e.what());
    }
    return run_config_from_json(j);
}

}  // namespace npsa
