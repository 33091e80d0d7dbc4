#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "npsa/cli.hpp"

using namespace npsa;
namespace fs = std::filesystem;

namespace {

int cli(std::initializer_list<const char*> args) {
    std::vector<const char*> argv{"npsa"};
    argv.insert(argv.end(), args.begin(), args.end());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

// capture stdout produced by a CLI invocation
std::string cli_stdout(std::initializer_list<const char*> args, int* code) {
    std::stringstream buffer;
    std::streambuf* keep = std::cout.rdbuf(buffer.rdbuf());
    *code = cli(args);
    std::cout.rdbuf(keep);
    return buffer.str();
}

fs::path scratch_dir() {
    fs::path dir = fs::temp_directory_path() / "npsa_cli_test";
    fs::create_directories(dir);
    return dir;
}

std::string write_tiny_config(const fs::path& dir, uint64_t seed = 3) {
    nlohmann::json cfg = {
        {"experiment", "regression1d"},
        {"model", {{"family", "NPSA"}, {"d_h", 8}, {"heads", 2}, {"k_shape", 50.0}}},
        {"train", {{"steps", 40}, {"batch_size", 1}, {"seed", seed}}},
        {"data", {{"noise", {{"enabled", true}}}}},
        {"eval", {{"n_tasks", 4}, {"seed", 9}}},
    };
    fs::path path = dir / "tiny_config.json";
    std::ofstream out(path);
    out << cfg.dump(1);
    return path.string();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("config validation failures exit with code 2 and name the field") {
    fs::path dir = scratch_dir();
    fs::path bad = dir / "bad_config.json";
    {
        std::ofstream out(bad);
        out << R"({"model": {"family": "NPSA"}})";  // missing experiment
    }
    CHECK(cli({"train", "--config", bad.string().c_str(), "--out",
               (dir / "out_bad").string().c_str()}) == 2);

    {
        std::ofstream out(bad);
        out << R"({"experiment": "regression1d", "model": {"family": "NPSA", "banana": 1}})";
    }
    CHECK(cli({"train", "--config", bad.string().c_str(), "--out",
               (dir / "out_bad").string().c_str()}) == 2);

    try {
        load_run_config(bad.string());
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("banana") != std::string::npos);
    }

    {
        std::ofstream out(bad);
        out << R"({"model": {"family": "NPSA"}})";
    }
    try {
        load_run_config(bad.string());
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("experiment") != std::string::npos);
    }

    CHECK(cli({"train", "--config", (dir / "does_not_exist.json").string().c_str(), "--out",
               (dir / "o").string().c_str()}) == 4);
    CHECK(cli({"definitely-not-a-command"}) == 2);
}

TEST_CASE("train smoke run writes idempotent outputs") {
    fs::path dir = scratch_dir();
    std::string config = write_tiny_config(dir);
    fs::path out1 = dir / "run1";
    fs::path out2 = dir / "run2";
    fs::remove_all(out1);
    fs::remove_all(out2);

    CHECK(cli({"train", "--config", config.c_str(), "--out", out1.string().c_str()}) == 0);
    CHECK(fs::exists(out1 / "checkpoint.json"));
    CHECK(fs::exists(out1 / "loss_log.csv"));
    CHECK(fs::exists(out1 / "config_resolved.json"));
    CHECK(fs::exists(out1 / "meta.json"));

    CHECK(cli({"train", "--config", config.c_str(), "--out", out2.string().c_str()}) == 0);
    CHECK(slurp(out1 / "loss_log.csv") == slurp(out2 / "loss_log.csv"));
    CHECK(slurp(out1 / "checkpoint.json") == slurp(out2 / "checkpoint.json"));
    CHECK(slurp(out1 / "config_resolved.json") == slurp(out2 / "config_resolved.json"));

    std::string header;
    std::ifstream log(out1 / "loss_log.csv");
    std::getline(log, header);
    CHECK(header == "step,total,recon,kl_z,kl_w");
}

TEST_CASE("eval command") {
    fs::path dir = scratch_dir();
    std::string config = write_tiny_config(dir);
    fs::path out = dir / "run_eval";
    fs::remove_all(out);
    REQUIRE(cli({"train", "--config", config.c_str(), "--out", out.string().c_str()}) == 0);
    std::string ckpt = (out / "checkpoint.json").string();

    int code = 0;
    std::string report1 = cli_stdout({"eval", "--checkpoint", ckpt.c_str(), "--kernel", "rbf",
                                      "--noisy", "false", "--n-tasks", "5", "--seed", "3"},
                                     &code);
    CHECK(code == 0);
    std::string report2 = cli_stdout({"eval", "--checkpoint", ckpt.c_str(), "--kernel", "rbf",
                                      "--noisy", "false", "--n-tasks", "5", "--seed", "3"},
                                     &code);
    CHECK(code == 0);
    CHECK(report1 == report2);  // identical seeds, identical JSON

    auto j = nlohmann::json::parse(report1);
    CHECK(j.at("kernel") == "RBF");
    CHECK(j.at("n_tasks") == 5);
    CHECK(j.contains("context_ll"));
    CHECK(j.contains("target_ll"));
    CHECK(j.contains("stderr"));

    // three-kernel sweep emits three reports
    for (const char* kernel : {"rbf", "matern", "periodic"}) {
        std::string rep = cli_stdout({"eval", "--checkpoint", ckpt.c_str(), "--kernel", kernel,
                                      "--n-tasks", "3", "--seed", "4"},
                                     &code);
        CHECK(code == 0);
        CHECK_FALSE(rep.empty());
    }

    CHECK(cli({"eval", "--checkpoint", ckpt.c_str(), "--n-tasks", "0"}) == 2);
    CHECK(cli({"eval", "--checkpoint", ckpt.c_str(), "--kernel", "cubic"}) == 2);
    CHECK(cli({"eval", "--checkpoint", "/nonexistent.json"}) == 4);
}

TEST_CASE("simulate-lv command") {
    fs::path dir = scratch_dir();
    fs::path out = dir / "traj.csv";

    CHECK(cli({"simulate-lv", "--init", "0,0", "--seed", "1", "--out",
               out.string().c_str()}) == 0);
    {
        std::ifstream in(out);
        std::string header, line;
        std::getline(in, header);
        CHECK(header == "t,X,Y");
        size_t rows = 0;
        double prev_t = -1.0;
        while (std::getline(in, line)) {
            auto fields = detail::split_csv_line(line);
            REQUIRE(fields.size() == 3);
            double t = std::stod(fields[0]);
            CHECK(t > prev_t);
            prev_t = t;
            CHECK(std::stod(fields[1]) == 0.0);
            CHECK(std::stod(fields[2]) == 0.0);
            ++rows;
        }
        CHECK(rows == 100);
    }

    for (uint64_t seed = 0; seed < 100; ++seed) {
        std::string s = std::to_string(seed);
        REQUIRE(cli({"simulate-lv", "--seed", s.c_str(), "--out", out.string().c_str()}) == 0);
        std::ifstream in(out);
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            auto fields = detail::split_csv_line(line);
            CHECK(std::stod(fields[1]) >= 0.0);
            CHECK(std::stod(fields[2]) >= 0.0);
        }
    }

    CHECK(cli({"simulate-lv", "--theta", "0.01,0.5,1", "--out", out.string().c_str()}) == 2);
    CHECK(cli({"simulate-lv", "--theta", "0.01,0.5,1,zebra", "--out",
               out.string().c_str()}) == 2);
    CHECK(cli({"simulate-lv", "--theta", "-0.01,0.5,1,0.01", "--out",
               out.string().c_str()}) == 2);
}

TEST_CASE("heatmap command") {
    fs::path dir = scratch_dir();
    std::string config = write_tiny_config(dir);
    fs::path out = dir / "run_hm";
    fs::remove_all(out);
    REQUIRE(cli({"train", "--config", config.c_str(), "--out", out.string().c_str()}) == 0);
    std::string ckpt = (out / "checkpoint.json").string();

    fs::path hm = dir / "hm.csv";
    CHECK(cli({"heatmap", "--checkpoint", ckpt.c_str(), "--task-seed", "5", "--mode",
               "simplified", "--out", hm.string().c_str()}) == 0);
    {
        std::ifstream in(hm);
        std::string line;
        size_t rows = 0;
        while (std::getline(in, line))
            if (!line.empty()) ++rows;
        CHECK(rows == 11);  // header + 10 context-point rows
    }
    CHECK(cli({"heatmap", "--checkpoint", ckpt.c_str(), "--task-seed", "5", "--mode", "full",
               "--out", hm.string().c_str()}) == 0);
    {
        std::ifstream in(hm);
        std::string line;
        size_t rows = 0;
        while (std::getline(in, line))
            if (!line.empty()) ++rows;
        CHECK(rows == 101);  // header + n_target rows
    }
    CHECK(cli({"heatmap", "--checkpoint", ckpt.c_str(), "--mode", "sideways", "--out",
               hm.string().c_str()}) == 2);
}

TEST_CASE("sweep-k command emits one row per arm") {
    fs::path dir = scratch_dir();
    nlohmann::json cfg = {
        {"experiment", "regression1d"},
        {"model", {{"family", "NPSA"}, {"d_h", 8}, {"heads", 2}}},
        {"train", {{"steps", 20}, {"seed", 5}}},
        {"eval", {{"n_tasks", 3}, {"seed", 9}}},
    };
    fs::path cfg_path = dir / "sweep_config.json";
    {
        std::ofstream out(cfg_path);
        out << cfg.dump(1);
    }
    fs::path out = dir / "sweep.csv";
    CHECK(cli({"sweep-k", "--config", cfg_path.string().c_str(), "--k-list", "1,300", "--out",
               out.string().c_str()}) == 0);
    std::ifstream in(out);
    std::string line;
    size_t rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 5);  // header + 2 K values x 2 regularizer arms

    CHECK(cli({"sweep-k", "--config", cfg_path.string().c_str(), "--k-list", "0", "--out",
               out.string().c_str()}) == 2);
}
