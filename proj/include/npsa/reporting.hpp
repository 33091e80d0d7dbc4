#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "npsa/datagen.hpp"
#include "npsa/models.hpp"
#include "npsa/training.hpp"

namespace npsa {

// ---------------------------------------------------------------------------
// Attention heatmaps: head-averaged weights from one eval-mode forward pass,
// rows and columns sorted by feature value. Simplified mode keeps only the
// target rows that are context points (the context prefix), which yields a
// square matrix suitable for diagonal statistics.
// ---------------------------------------------------------------------------

enum class HeatmapMode { kFull, kSimplified };

struct HeatmapMatrix {
    std::vector<double> context_x;  // ascending, length m
    std::vector<double> target_x;   // ascending, length n
    std::vector<double> weights;    // [n x m] row-major, rows sum to 1
    HeatmapMode mode = HeatmapMode::kFull;

    size_t rows() const { return target_x.size(); }
    size_t cols() const { return context_x.size(); }
};

inline HeatmapMatrix export_heatmap(Model& model, const Task& task, HeatmapMode mode,
                                    uint64_t seed) {
    if (!model.cfg.has_attention())
        throw ValidationError("export_heatmap: family " + family_name(model.cfg.family) +
                              " has no attention weights");
    if (model.cfg.d_x != 1)
        throw ValidationError("export_heatmap: requires d_x = 1");
    Tape tape;
    Rng rng(seed);
    NoiseDraws noise = draw_noise(model.cfg, task.n_target, task.n_context, rng);
    ForwardTrace trace = forward(tape, model, task, Mode::kEval, noise);
    const std::vector<Tensor>& head_weights =
        model.cfg.family == Family::kNpsa ? trace.attn->weights : trace.det_attn->weights;

    size_t n = task.n_target, m = task.n_context;
    std::vector<double> avg(n * m, 0.0);
    for (const Tensor& w : head_weights)
        for (size_t i = 0; i < n * m; ++i) avg[i] += w.data()[i];
    for (double& v : avg) v /= static_cast<double>(head_weights.size());

    size_t n_rows = mode == HeatmapMode::kSimplified ? m : n;

    std::vector<size_t> row_order(n_rows), col_order(m);
    std::iota(row_order.begin(), row_order.end(), 0);
    std::iota(col_order.begin(), col_order.end(), 0);
    std::sort(row_order.begin(), row_order.end(),
              [&](size_t a, size_t b) { return task.x_target[a] < task.x_target[b]; });
    std::sort(col_order.begin(), col_order.end(),
              [&](size_t a, size_t b) { return task.x_context[a] < task.x_context[b]; });

    HeatmapMatrix h;
    h.mode = mode;
    h.target_x.resize(n_rows);
    h.context_x.resize(m);
    h.weights.resize(n_rows * m);
    for (size_t j = 0; j < m; ++j) h.context_x[j] = task.x_context[col_order[j]];
    for (size_t i = 0; i < n_rows; ++i) {
        h.target_x[i] = task.x_target[row_order[i]];
        for (size_t j = 0; j < m; ++j)
            h.weights[i * m + j] = avg[row_order[i] * m + col_order[j]];
    }
    return h;
}

inline void write_heatmap_csv(const HeatmapMatrix& h, std::ostream& out) {
    out.precision(17);
    out << "target_x";
    for (double x : h.context_x) out << "," << x;
    out << "\n";
    for (size_t i = 0; i < h.rows(); ++i) {
        out << h.target_x[i];
        for (size_t j = 0; j < h.cols(); ++j) out << "," << h.weights[i * h.cols() + j];
        out << "\n";
    }
}

inline HeatmapMatrix parse_heatmap_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError("line 1: empty heatmap file");
    auto header = detail::split_csv_line(line);
    if (header.size() < 2 || header[0] != "target_x")
        throw ParseError("line 1: expected 'target_x,<context values...>' header");
    HeatmapMatrix h;
    for (size_t j = 1; j < header.size(); ++j)
        h.context_x.push_back(detail::parse_number(header[j], 1, "context x"));
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != 1 + h.context_x.size())
            throw ParseError("line " + std::to_string(line_no) + ": wrong column count");
        h.target_x.push_back(detail::parse_number(fields[0], line_no, "target x"));
        for (size_t j = 0; j < h.context_x.size(); ++j)
            h.weights.push_back(detail::parse_number(fields[1 + j], line_no, "weight"));
    }
    return h;
}

struct DiagStats {
    double diag_mean = 0.0, diag_var = 0.0;
    double offdiag_mean = 0.0, offdiag_var = 0.0;
};

// population mean/variance over diagonal and off-diagonal cells
inline DiagStats diag_stats(const HeatmapMatrix& h) {
    size_t m = h.cols();
    if (h.mode != HeatmapMode::kSimplified || h.rows() != m)
        throw ValidationError("diag_stats: needs a square simplified heatmap");
    auto moments = [](const std::vector<double>& xs) {
        if (xs.empty()) return std::pair<double, double>(0.0, 0.0);
        double mean = 0.0;
        for (double x : xs) mean += x;
        mean /= static_cast<double>(xs.size());
        double var = 0.0;
        for (double x : xs) var += (x - mean) * (x - mean);
        var /= static_cast<double>(xs.size());
        return std::pair<double, double>(mean, var);
    };
    std::vector<double> diag, off;
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < m; ++j)
            (i == j ? diag : off).push_back(h.weights[i * m + j]);
    DiagStats s;
    std::tie(s.diag_mean, s.diag_var) = moments(diag);
    std::tie(s.offdiag_mean, s.offdiag_var) = moments(off);
    return s;
}

// ---------------------------------------------------------------------------
// Prediction curves for 1D plots: `x,mu,sigma,role` over a grid, with the
// task's context points echoed.
// ---------------------------------------------------------------------------

inline void export_predictions(Model& model, const Task& task, const std::vector<double>& grid,
                               uint64_t seed, std::ostream& out) {
    if (model.cfg.d_x != 1) throw ValidationError("export_predictions: requires d_x = 1");
    if (task.d_x != 1) throw ValidationError("export_predictions: task is not 1D");
    // queries = contexts (prefix, required) followed by the grid
    Task query = task;
    query.n_target = task.n_context + grid.size();
    query.x_target = task.x_context;
    query.x_target.insert(query.x_target.end(), grid.begin(), grid.end());
    query.y_target.assign(query.n_target * task.d_y, 0.0);  // unused in eval mode
    std::copy(task.y_context.begin(), task.y_context.end(), query.y_target.begin());
    PredictOutput pred = predict(model, query, Mode::kEval, seed);

    auto is_context_x = [&](double x) {
        for (size_t j = 0; j < task.n_context; ++j)
            if (task.x_context[j] == x) return true;
        return false;
    };
    out.precision(17);
    out << "x,mu,sigma,role\n";
    for (size_t g = 0; g < grid.size(); ++g) {
        size_t row = task.n_context + g;
        out << grid[g];
        for (size_t d = 0; d < task.d_y; ++d)
            out << "," << pred.mu[row * task.d_y + d] << "," << pred.sigma[row * task.d_y + d];
        out << "," << (is_context_x(grid[g]) ? "context" : "target") << "\n";
    }
    for (size_t j = 0; j < task.n_context; ++j) {
        if (std::find(grid.begin(), grid.end(), task.x_context[j]) != grid.end()) continue;
        out << task.x_context[j];
        for (size_t d = 0; d < task.d_y; ++d)
            out << "," << pred.mu[j * task.d_y + d] << "," << pred.sigma[j * task.d_y + d];
        out << ",context\n";
    }
}

// ---------------------------------------------------------------------------
// K-sweep: trains one NPSA arm per (K, regularizer) pair at desk scale and
// reports convergence, held-out likelihoods, and heatmap diagonal statistics.
// ---------------------------------------------------------------------------

struct SweepArm {
    double k_shape = 0.0;
    bool regularized = false;
    bool converged = false;
    double final_loss = 0.0;
    double context_ll = 0.0, target_ll = 0.0;
    DiagStats stats;
};

struct SweepConfig {
    ModelConfig base_model;        // family is forced to NPSA per arm
    TrainConfig train;             // out_dir ignored; arms train in memory
    RegressionTaskSpec data;       // training episode generator
    RegressionTaskSpec eval_data;  // held-out episode generator
    size_t eval_tasks = 100;
    uint64_t eval_seed = 7;
    uint64_t heatmap_seed = 11;
    size_t heatmap_contexts = 10;
    size_t heatmap_extras = 40;
};

// final window-average loss must undercut the initial one by at least half a
// nat; window is 1k steps (or half the run for short runs)
inline bool sweep_converged(const std::vector<LossLogRow>& log) {
    size_t w = std::min<size_t>(1000, std::max<size_t>(1, log.size() / 2));
    double head = 0.0, tail = 0.0;
    for (size_t i = 0; i < w; ++i) head += log[i].total;
    for (size_t i = log.size() - w; i < log.size(); ++i) tail += log[i].total;
    head /= static_cast<double>(w);
    tail /= static_cast<double>(w);
    return tail < head - 0.5;
}

inline SweepArm run_sweep_arm(const SweepConfig& cfg, double k_shape, bool regularized) {
    ModelConfig mc = cfg.base_model;
    mc.family = Family::kNpsa;
    mc.k_shape = k_shape;
    mc.use_attn_kl = regularized;
    Model model(mc, cfg.train.seed);
    TrainConfig tc = cfg.train;
    tc.out_dir.clear();
    TaskSource source = [&](uint64_t s) { return make_regression_task(cfg.data, s); };
    TrainResult tr = train(model, source, tc);

    SweepArm arm;
    arm.k_shape = k_shape;
    arm.regularized = regularized;
    arm.converged = sweep_converged(tr.log);
    size_t w = std::min<size_t>(1000, std::max<size_t>(1, tr.log.size() / 2));
    double tail = 0.0;
    for (size_t i = tr.log.size() - w; i < tr.log.size(); ++i) tail += tr.log[i].total;
    arm.final_loss = tail / static_cast<double>(w);

    TaskSource eval_source = [&](uint64_t s) { return make_regression_task(cfg.eval_data, s); };
    EvalReport report = evaluate(model, eval_source, cfg.eval_tasks, cfg.eval_seed);
    arm.context_ll = report.context_ll;
    arm.target_ll = report.target_ll;

    Task hm_task = make_regression_task_counts(cfg.eval_data, derive_seed(cfg.heatmap_seed, "hm"),
                                               cfg.heatmap_contexts, cfg.heatmap_extras);
    HeatmapMatrix h = export_heatmap(model, hm_task, HeatmapMode::kSimplified, cfg.heatmap_seed);
    arm.stats = diag_stats(h);
    return arm;
}

inline std::vector<SweepArm> sweep_k(const SweepConfig& cfg, const std::vector<double>& k_list) {
    std::vector<std::pair<double, bool>> arms;
    for (double k : k_list) {
        arms.emplace_back(k, true);
        arms.emplace_back(k, false);
    }
    std::vector<SweepArm> results(arms.size());
    int n_threads = std::min<int>(env_thread_cap(), static_cast<int>(arms.size()));
    if (n_threads <= 1) {
        for (size_t i = 0; i < arms.size(); ++i)
            results[i] = run_sweep_arm(cfg, arms[i].first, arms[i].second);
        return results;
    }
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (int t = 0; t < n_threads; ++t)
        pool.emplace_back([&]() {
            for (size_t i = next.fetch_add(1); i < arms.size(); i = next.fetch_add(1))
                results[i] = run_sweep_arm(cfg, arms[i].first, arms[i].second);
        });
    for (auto& th : pool) th.join();
    return results;
}

inline void write_sweep_csv(const std::vector<SweepArm>& arms, std::ostream& out) {
    out.precision(17);
    out << "K,regularized,converged,final_loss,context_ll,target_ll,diag_mean,diag_var,"
           "offdiag_mean,offdiag_var\n";
    for (const auto& a : arms)
        out << a.k_shape << "," << (a.regularized ? 1 : 0) << "," << (a.converged ? 1 : 0) << ","
            << a.final_loss << "," << a.context_ll << "," << a.target_ll << "," << a.stats.diag_mean
            << "," << a.stats.diag_var << "," << a.stats.offdiag_mean << "," << a.stats.offdiag_var
            << "\n";
}

}  // namespace npsa
