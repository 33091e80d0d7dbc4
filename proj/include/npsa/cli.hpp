#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "npsa/config.hpp"
#include "npsa/reporting.hpp"

namespace npsa {

// Exit codes: 0 success, 2 usage/validation, 3 numeric failure, 4 I/O.

namespace clidetail {

inline std::string iso_timestamp() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&t));
    return buf;
}

inline std::vector<double> parse_double_list(const std::string& s, const char* what) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            size_t pos = 0;
            out.push_back(std::stod(item, &pos));
            if (pos != item.size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw ValidationError(std::string(what) + ": cannot parse '" + item + "'");
        }
    }
    return out;
}

inline RegressionTaskSpec eval_kernel_spec(const std::string& kernel, bool noisy) {
    RegressionTaskSpec spec;
    spec.train_kernel.family = kernel_from_name(kernel);
    spec.train_kernel.s = 3.0;
    spec.train_kernel.l = 3.0;
    spec.train_kernel.freq = 10.0;  // test-kernel default frequency
    spec.train_kernel.p = 2.0 * M_PI;
    if (noisy) spec.noise_kernel = RegressionTaskSpec::default_noise();
    return spec;
}

inline void cmd_train(const std::string& config_path, const std::string& out_dir) {
    std::string started = iso_timestamp();
    RunConfig cfg = load_run_config(config_path);
    cfg.train.out_dir = out_dir;
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    {
        std::ofstream out(out_dir + "/config_resolved.json");
        if (!out) throw IoError("cannot write resolved config");
        out << run_config_to_json(cfg).dump(1) << "\n";
    }
    Model model(cfg.model, cfg.train.seed);
    TrainResult result = train(model, cfg.make_train_source(), cfg.train);
    // timestamps live in the sidecar only, so the run outputs stay idempotent
    nlohmann::json meta = {{"started_at", started},
                           {"finished_at", iso_timestamp()},
                           {"wall_seconds", result.wall_seconds},
                           {"steps", cfg.train.steps}};
    std::ofstream meta_out(out_dir + "/meta.json");
    if (!meta_out) throw IoError("cannot write meta sidecar");
    meta_out << meta.dump(1) << "\n";
}

inline void cmd_eval(const std::string& checkpoint, const std::string& kernel, bool noisy,
                     size_t n_tasks, uint64_t seed) {
    Model model = load_checkpoint(checkpoint);
    if (model.cfg.d_x != 1 || model.cfg.d_y != 1)
        throw ValidationError("eval: checkpoint family does not take 1D regression tasks");
    RegressionTaskSpec spec = eval_kernel_spec(kernel, noisy);
    TaskSource source = [&](uint64_t s) { return make_regression_task(spec, s); };
    EvalReport report = evaluate(model, source, n_tasks, seed, kernel_name(spec.train_kernel.family));
    std::cout << report.to_json().dump(1) << "\n";
}

inline void cmd_simulate_lv(const std::string& theta_str, const std::string& init_str,
                            double t_max, uint64_t seed, const std::string& out_path,
                            size_t grid_points, size_t max_events) {
    auto th = parse_double_list(theta_str, "--theta");
    if (th.size() != 4) throw ValidationError("--theta: expected 4 comma-separated values");
    LVTheta theta{th[0], th[1], th[2], th[3]};
    theta.validate();
    auto init_vals = parse_double_list(init_str, "--init");
    if (init_vals.size() != 2) throw ValidationError("--init: expected 2 comma-separated values");
    if (init_vals[0] < 0 || init_vals[1] < 0)
        throw ValidationError("--init: populations must be non-negative");
    LVState init;
    init.predators = static_cast<int64_t>(init_vals[0]);
    init.prey = static_cast<int64_t>(init_vals[1]);
    auto traj = lv_simulate(theta, init, t_max, max_events, seed);
    PopulationSeries series = lv_grid_series(traj, grid_points, t_max);
    std::ofstream out(out_path);
    if (!out) throw IoError("cannot open output: " + out_path);
    out.precision(17);
    out << "t,X,Y\n";
    for (size_t i = 0; i < series.size(); ++i)
        out << series.t[i] << "," << series.predators[i] << "," << series.prey[i] << "\n";
    if (!out) throw IoError("failed writing trajectory: " + out_path);
}

inline void cmd_heatmap(const std::string& checkpoint, uint64_t task_seed,
                        const std::string& mode_str, const std::string& out_path,
                        const std::string& kernel, bool noisy) {
    Model model = load_checkpoint(checkpoint);
    HeatmapMode mode;
    if (mode_str == "full")
        mode = HeatmapMode::kFull;
    else if (mode_str == "simplified")
        mode = HeatmapMode::kSimplified;
    else
        throw ValidationError("--mode: must be 'full' or 'simplified'");
    Task task;
    if (model.cfg.d_y == 1) {
        task = make_regression_task_counts(eval_kernel_spec(kernel, noisy), task_seed, 10, 90);
    } else {
        LVSimSpec spec;
        task = make_lv_task_counts(simulate_lv_series(spec, task_seed), task_seed, 10, 40);
    }
    HeatmapMatrix h = export_heatmap(model, task, mode, derive_seed(task_seed, "hmnoise"));
    std::ofstream out(out_path);
    if (!out) throw IoError("cannot open output: " + out_path);
    write_heatmap_csv(h, out);
    if (!out) throw IoError("failed writing heatmap: " + out_path);
}

inline void cmd_sweep_k(const std::string& config_path, const std::string& k_list_str,
                        const std::string& out_path) {
    RunConfig cfg = load_run_config(config_path);
    if (cfg.experiment != "regression1d")
        throw ValidationError("sweep-k: config experiment must be regression1d");
    auto k_list = parse_double_list(k_list_str, "--k-list");
    if (k_list.empty()) throw ValidationError("--k-list: needs at least one value");
    for (double k : k_list)
        if (!(k > 0.0)) throw ValidationError("--k-list: K values must be positive");
    SweepConfig sc;
    sc.base_model = cfg.model;
    sc.train = cfg.train;
    sc.train.out_dir.clear();
    sc.data = cfg.regression;
    sc.eval_data = clidetail::eval_kernel_spec(cfg.eval.kernels.empty() ? "rbf"
                                                                        : cfg.eval.kernels[0],
                                               cfg.eval.noisy);
    sc.eval_tasks = cfg.eval.n_tasks;
    sc.eval_seed = cfg.eval.seed;
    auto arms = sweep_k(sc, k_list);
    std::ofstream out(out_path);
    if (!out) throw IoError("cannot open output: " + out_path);
    write_sweep_csv(arms, out);
    if (!out) throw IoError("failed writing sweep summary: " + out_path);
}

}  // namespace clidetail

inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"neural-process meta-regression toolkit (CNP/NP/ANP + stochastic attention)"};
    app.require_subcommand(1);

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model from a JSON run config");
    std::string train_config, train_out;
    train_cmd->add_option("--config", train_config, "run config JSON")->required();
    train_cmd->add_option("--out", train_out, "output directory")->required();

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on GP test tasks");
    std::string eval_ckpt, eval_kernel = "rbf";
    bool eval_noisy = false;
    size_t eval_n_tasks = 200;
    uint64_t eval_seed = 7;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint JSON")->required();
    eval_cmd->add_option("--kernel", eval_kernel, "rbf|matern|periodic");
    eval_cmd->add_option("--noisy", eval_noisy, "add periodic noise to test tasks");
    eval_cmd->add_option("--n-tasks", eval_n_tasks, "number of held-out tasks");
    eval_cmd->add_option("--seed", eval_seed, "evaluation seed");

    // simulate-lv
    auto* sim_cmd = app.add_subcommand("simulate-lv", "Gillespie predator-prey trajectory");
    std::string sim_theta = "0.01,0.5,1,0.01", sim_init = "50,100", sim_out;
    double sim_t_max = 30.0;
    uint64_t sim_seed = 1;
    size_t sim_grid = 100, sim_max_events = 100000;
    sim_cmd->add_option("--theta", sim_theta, "theta1..theta4, comma separated");
    sim_cmd->add_option("--init", sim_init, "initial predators,prey");
    sim_cmd->add_option("--t-max", sim_t_max, "simulation horizon");
    sim_cmd->add_option("--seed", sim_seed, "simulation seed");
    sim_cmd->add_option("--out", sim_out, "output CSV path")->required();
    sim_cmd->add_option("--grid-points", sim_grid, "recording grid size");
    sim_cmd->add_option("--max-events", sim_max_events, "event cap");

    // heatmap
    auto* hm_cmd = app.add_subcommand("heatmap", "export attention weights for one task");
    std::string hm_ckpt, hm_mode = "simplified", hm_out, hm_kernel = "rbf";
    uint64_t hm_seed = 1;
    bool hm_noisy = false;
    hm_cmd->add_option("--checkpoint", hm_ckpt, "checkpoint JSON")->required();
    hm_cmd->add_option("--task-seed", hm_seed, "task seed");
    hm_cmd->add_option("--mode", hm_mode, "full|simplified");
    hm_cmd->add_option("--out", hm_out, "output CSV path")->required();
    hm_cmd->add_option("--kernel", hm_kernel, "task kernel (1D checkpoints)");
    hm_cmd->add_option("--noisy", hm_noisy, "add periodic noise to the task");

    // sweep-k
    auto* sweep_cmd = app.add_subcommand("sweep-k", "K ablation with/without attention KL");
    std::string sweep_config, sweep_k_list, sweep_out;
    sweep_cmd->add_option("--config", sweep_config, "run config JSON")->required();
    sweep_cmd->add_option("--k-list", sweep_k_list, "comma-separated K values")->required();
    sweep_cmd->add_option("--out", sweep_out, "output CSV path")->required();

    try {
        app.parse(argc, argv);
        if (*train_cmd) clidetail::cmd_train(train_config, train_out);
        if (*eval_cmd)
            clidetail::cmd_eval(eval_ckpt, eval_kernel, eval_noisy, eval_n_tasks, eval_seed);
        if (*sim_cmd)
            clidetail::cmd_simulate_lv(sim_theta, sim_init, sim_t_max, sim_seed, sim_out,
                                       sim_grid, sim_max_events);
        if (*hm_cmd)
            clidetail::cmd_heatmap(hm_ckpt, hm_seed, hm_mode, hm_out, hm_kernel, hm_noisy);
        if (*sweep_cmd) clidetail::cmd_sweep_k(sweep_config, sweep_k_list, sweep_out);
        return 0;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const npsa::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::domain_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

}  // namespace npsa
