#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "npsa/models.hpp"
#include "npsa/task.hpp"

namespace npsa {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Standard Adam with bias correction; weight decay enters as an extra
// gradient term (lambda * theta), matching the Adam weight_decay convention.
// `step` is 1-based. Throws on non-finite gradients, naming the parameter.
inline void adam_step(ParamStore& store, const AdamConfig& cfg, size_t step,
                      double weight_decay = 0.0) {
    if (step == 0) throw ValidationError("adam_step: step must be >= 1");
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (Parameter* p : store.all()) {
        for (size_t i = 0; i < p->value.size(); ++i) {
            double g = p->grad[i];
            if (!std::isfinite(g))
                throw NumericError("adam_step: non-finite gradient in parameter " + p->name);
            g += weight_decay * p->value[i];
            p->m[i] = cfg.beta1 * p->m[i] + (1.0 - cfg.beta1) * g;
            p->v[i] = cfg.beta2 * p->v[i] + (1.0 - cfg.beta2) * g * g;
            double mhat = p->m[i] / bc1;
            double vhat = p->v[i] / bc2;
            p->value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

// scales all gradients so their global L2 norm is at most max_norm
inline double clip_global_norm(ParamStore& store, double max_norm) {
    double sq = 0.0;
    for (Parameter* p : store.all())
        for (double g : p->grad) sq += g * g;
    double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        double s = max_norm / norm;
        for (Parameter* p : store.all())
            for (double& g : p->grad) g *= s;
    }
    return norm;
}

struct TrainConfig {
    size_t steps = 20000;
    size_t batch_size = 1;
    size_t eval_every = 0;  // 0 disables periodic checkpoints
    uint64_t seed = 1;
    std::string out_dir;  // empty: keep everything in memory
    double clip_norm = 10.0;
    AdamConfig adam;

    void validate() const {
        if (steps < 1) throw ValidationError("TrainConfig: steps must be >= 1");
        if (batch_size < 1) throw ValidationError("TrainConfig: batch_size must be >= 1");
    }
};

struct LossLogRow {
    size_t step;
    double total, recon, kl_z, kl_w;
};

using TaskSource = std::function<Task(uint64_t task_seed)>;

inline void write_loss_log(const std::vector<LossLogRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open loss log for writing: " + path);
    out.precision(17);
    out << "step,total,recon,kl_z,kl_w\n";
    for (const auto& r : rows)
        out << r.step << "," << r.total << "," << r.recon << "," << r.kl_z << "," << r.kl_w
            << "\n";
    if (!out) throw IoError("failed writing loss log: " + path);
}

// Training checkpoints embed the optimizer state next to the model payload
// so an interrupted run can resume on the exact trajectory.
inline void save_train_checkpoint(const Model& model, size_t step, const std::string& path) {
    nlohmann::json j = checkpoint_to_json(model);
    nlohmann::json moments = nlohmann::json::object();
    for (const Parameter* p : model.params.all())
        moments[p->name] = {{"m", p->m}, {"v", p->v}};
    j["optimizer"] = {{"step", step}, {"moments", moments}};
    std::ofstream out(path);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out << j.dump(1) << "\n";
    if (!out) throw IoError("failed writing checkpoint: " + path);
}

struct ResumeState {
    Model model;
    size_t step = 0;
};

inline ResumeState load_train_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint parse error: ") + e.what());
    }
    ResumeState state{model_from_checkpoint_json(j), 0};
    if (j.contains("optimizer")) {
        const auto& opt = j.at("optimizer");
        state.step = opt.at("step").get<size_t>();
        const auto& moments = opt.at("moments");
        for (Parameter* p : state.model.params.all()) {
            const auto& jm = moments.at(p->name);
            p->m = jm.at("m").get<std::vector<double>>();
            p->v = jm.at("v").get<std::vector<double>>();
        }
    }
    return state;
}

struct TrainResult {
    std::vector<LossLogRow> log;
    double wall_seconds = 0.0;
    std::string checkpoint_path;
};

// Batched negative-ELBO descent. All randomness is a pure function of
// (seed, step, slot), so runs are reproducible and resumable: the task for
// slot b of step s and its model noise never depend on loop history.
inline TrainResult train(Model& model, const TaskSource& source, const TrainConfig& cfg,
                         size_t start_step = 0) {
    cfg.validate();
    auto t0 = std::chrono::steady_clock::now();
    TrainResult result;
    namespace fs = std::filesystem;
    if (!cfg.out_dir.empty()) fs::create_directories(cfg.out_dir);

    for (size_t step = start_step + 1; step <= cfg.steps; ++step) {
        model.params.zero_grad();
        LossLogRow row{step, 0.0, 0.0, 0.0, 0.0};
        double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
        for (size_t b = 0; b < cfg.batch_size; ++b) {
            uint64_t draw = (step - 1) * cfg.batch_size + b;
            Task task = source(derive_seed(cfg.seed, "task", draw));
            uint64_t noise_seed = derive_seed(cfg.seed, "noise", draw);
            Tape tape;
            LossOutput loss = task_loss(tape, model, task, noise_seed);
            double total = loss.total.scalar();
            if (!std::isfinite(total)) throw NumericError("train: non-finite loss at step " +
                                                          std::to_string(step));
            tape.backward(tape.scale(loss.total, inv_b));
            row.total += total * inv_b;
            row.recon += loss.recon * inv_b;
            row.kl_z += loss.kl_z_term * inv_b;
            row.kl_w += loss.kl_w_term * inv_b;
        }
        clip_global_norm(model.params, cfg.clip_norm);
        adam_step(model.params, cfg.adam, step, model.cfg.weight_decay);
        result.log.push_back(row);
        if (cfg.eval_every > 0 && step % cfg.eval_every == 0 && !cfg.out_dir.empty())
            save_train_checkpoint(model, step,
                                  cfg.out_dir + "/checkpoint_step" + std::to_string(step) + ".json");
    }

    if (!cfg.out_dir.empty()) {
        result.checkpoint_path = cfg.out_dir + "/checkpoint.json";
        save_train_checkpoint(model, cfg.steps, result.checkpoint_path);
        write_loss_log(result.log, cfg.out_dir + "/loss_log.csv");
    }
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation: one Monte-Carlo sample per held-out task, mean per-point
// log-likelihood over the full target set and over the context subset.
// ---------------------------------------------------------------------------

struct EvalReport {
    std::string kernel;
    double context_ll = 0.0;
    double target_ll = 0.0;
    double stderr_target = 0.0;
    double stderr_context = 0.0;
    size_t n_tasks = 0;
    double wall_seconds = 0.0;  // not serialized

    nlohmann::json to_json() const {
        return nlohmann::json{{"kernel", kernel},
                              {"context_ll", context_ll},
                              {"target_ll", target_ll},
                              {"stderr", stderr_target},
                              {"n_tasks", n_tasks}};
    }
};

// per-task predictor: (task, noise_seed) -> one-sample predictions
using Predictor = std::function<PredictOutput(const Task&, uint64_t)>;

inline EvalReport evaluate_with(const Predictor& predictor, const TaskSource& source,
                                size_t n_tasks, uint64_t seed, const std::string& label = "") {
    if (n_tasks == 0) throw ValidationError("evaluate: n_tasks must be >= 1");
    auto t0 = std::chrono::steady_clock::now();
    std::vector<double> target_lls(n_tasks), context_lls(n_tasks);
    for (size_t i = 0; i < n_tasks; ++i) {
        Task task = source(derive_seed(seed, "evaltask", i));
        PredictOutput pred = predictor(task, derive_seed(seed, "evalnoise", i));
        double tsum = 0.0, csum = 0.0;
        for (size_t r = 0; r < task.n_target; ++r) {
            tsum += pred.ll[r];
            if (r < task.n_context) csum += pred.ll[r];
        }
        target_lls[i] = tsum / static_cast<double>(task.n_target);
        context_lls[i] = csum / static_cast<double>(task.n_context);
        if (!std::isfinite(target_lls[i]))
            throw NumericError("evaluate: non-finite log-likelihood on task " + std::to_string(i));
    }
    auto mean_se = [](const std::vector<double>& xs) {
        double mean = 0.0;
        for (double x : xs) mean += x;
        mean /= static_cast<double>(xs.size());
        double var = 0.0;
        for (double x : xs) var += (x - mean) * (x - mean);
        var /= static_cast<double>(xs.size());
        return std::pair<double, double>(mean, std::sqrt(var / static_cast<double>(xs.size())));
    };
    EvalReport report;
    report.kernel = label;
    auto [tm, tse] = mean_se(target_lls);
    auto [cm, cse] = mean_se(context_lls);
    report.target_ll = tm;
    report.stderr_target = tse;
    report.context_ll = cm;
    report.stderr_context = cse;
    report.n_tasks = n_tasks;
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

inline EvalReport evaluate(Model& model, const TaskSource& source, size_t n_tasks, uint64_t seed,
                           const std::string& label = "") {
    if (n_tasks > 0) {
        Task probe = source(derive_seed(seed, "evaltask", 0));
        if (probe.d_x != model.cfg.d_x || probe.d_y != model.cfg.d_y)
            throw ValidationError("evaluate: checkpoint family does not match the task source");
    }
    Predictor predictor = [&model](const Task& task, uint64_t s) {
        return predict(model, task, Mode::kEval, s);
    };
    return evaluate_with(predictor, source, n_tasks, seed, label);
}

}  // namespace npsa
