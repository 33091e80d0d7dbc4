#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "npsa/datagen.hpp"
#include "npsa/training.hpp"
#include "oracles.hpp"

using namespace npsa;

namespace {

ModelConfig tiny_model(Family family, size_t d_h = 16) {
    ModelConfig cfg;
    cfg.family = family;
    cfg.d_h = d_h;
    cfg.heads = 2;
    cfg.k_shape = 100.0;
    return cfg;
}

// small episodes keep smoke training fast
TaskSource small_regression_source(bool noisy) {
    RegressionTaskSpec spec;
    if (noisy) spec.noise_kernel = RegressionTaskSpec::default_noise();
    return [spec](uint64_t seed) {
        Rng rng(derive_seed(seed, "smallcounts"));
        size_t n_context = static_cast<size_t>(rng.uniform_int(3, 10));
        size_t n_extra = static_cast<size_t>(rng.uniform_int(3, 10));
        return make_regression_task_counts(spec, seed, n_context, n_extra);
    };
}

}  // namespace

TEST_CASE("adam first step identity") {
    ParamStore store;
    Parameter& p = store.create("w", 1, 1);
    p.value[0] = 0.5;
    p.grad[0] = 0.3;
    AdamConfig cfg;
    adam_step(store, cfg, 1);
    double want = 0.5 - cfg.lr * 0.3 / (std::abs(0.3) + cfg.eps);
    CHECK(p.value[0] == Catch::Approx(want).epsilon(1e-12));
}

TEST_CASE("adam with zero gradient leaves parameters unchanged") {
    ParamStore store;
    Parameter& p = store.create("w", 2, 2);
    p.value = {1.0, -2.0, 3.0, -4.0};
    adam_step(store, AdamConfig{}, 1);
    adam_step(store, AdamConfig{}, 2);
    CHECK(p.value == std::vector<double>{1.0, -2.0, 3.0, -4.0});
}

TEST_CASE("adam rejects non-finite gradients") {
    ParamStore store;
    Parameter& p = store.create("enc.w", 1, 1);
    p.grad[0] = std::nan("");
    try {
        adam_step(store, AdamConfig{}, 1);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("enc.w") != std::string::npos);
    }
}

TEST_CASE("gradient clipping bounds the global norm") {
    ParamStore store;
    Parameter& p = store.create("w", 1, 2);
    p.grad = {30.0, 40.0};  // norm 50
    double norm = clip_global_norm(store, 10.0);
    CHECK(norm == Catch::Approx(50.0));
    CHECK(p.grad[0] == Catch::Approx(6.0));
    CHECK(p.grad[1] == Catch::Approx(8.0));
}

TEST_CASE("training is deterministic") {
    TrainConfig cfg;
    cfg.steps = 100;
    cfg.seed = 5;
    auto run = [&] {
        Model model(tiny_model(Family::kNpsa, 8), cfg.seed);
        TrainResult r = train(model, small_regression_source(true), cfg);
        std::vector<double> out;
        for (const Parameter* p : model.params.all())
            out.insert(out.end(), p->value.begin(), p->value.end());
        for (const auto& row : r.log) out.push_back(row.total);
        return out;
    };
    CHECK(run() == run());
}

TEST_CASE("loss log recomposition holds at every step") {
    TrainConfig cfg;
    cfg.steps = 50;
    cfg.seed = 6;
    Model model(tiny_model(Family::kNpsa, 8), cfg.seed);
    TrainResult r = train(model, small_regression_source(true), cfg);
    REQUIRE(r.log.size() == 50);
    for (const auto& row : r.log)
        CHECK(row.total == Catch::Approx(row.recon + row.kl_z + row.kl_w).margin(1e-12));
}

TEST_CASE("500-step smoke training decreases the loss") {
    TrainConfig cfg;
    cfg.steps = 500;
    cfg.seed = 7;
    Model model(tiny_model(Family::kCnp), cfg.seed);
    TrainResult r = train(model, small_regression_source(true), cfg);
    double head = 0.0, tail = 0.0;
    for (size_t i = 0; i < 100; ++i) head += r.log[i].total;
    for (size_t i = 400; i < 500; ++i) tail += r.log[i].total;
    CHECK(tail / 100.0 < head / 100.0);
}

TEST_CASE("batch of identical tasks equals the single-task loss") {
    Model model(tiny_model(Family::kNp, 8), 31);
    Task task = make_regression_task_counts(RegressionTaskSpec{}, 99, 5, 6);
    Rng rng(17);
    NoiseDraws noise = draw_noise(model.cfg, task.n_target, task.n_context, rng);
    Tape t1;
    double single = task_loss(t1, model, task, std::vector<NoiseDraws>{noise}).total.scalar();
    // trainer averages per-task losses over the batch
    double batch = 0.0;
    for (int b = 0; b < 4; ++b) {
        Tape t;
        batch += task_loss(t, model, task, std::vector<NoiseDraws>{noise}).total.scalar() / 4.0;
    }
    CHECK(batch == Catch::Approx(single).epsilon(1e-12));
}

TEST_CASE("resume from checkpoint reproduces the uninterrupted trajectory") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "npsa_resume_test";
    fs::remove_all(dir);

    TrainConfig cfg;
    cfg.steps = 60;
    cfg.seed = 11;
    cfg.eval_every = 30;
    cfg.out_dir = dir.string();

    Model full(tiny_model(Family::kNpsa, 8), cfg.seed);
    train(full, small_regression_source(true), cfg);

    ResumeState st = load_train_checkpoint((dir / "checkpoint_step30.json").string());
    CHECK(st.step == 30);
    TrainConfig cont = cfg;
    cont.out_dir.clear();
    train(st.model, small_regression_source(true), cont, st.step);

    auto full_params = full.params.all();
    auto resumed_params = st.model.params.all();
    REQUIRE(full_params.size() == resumed_params.size());
    for (size_t i = 0; i < full_params.size(); ++i)
        CHECK(full_params[i]->value == resumed_params[i]->value);
    fs::remove_all(dir);
}

TEST_CASE("CNP memorizes a single frozen task") {
    RegressionTaskSpec spec;
    Task frozen = make_regression_task_counts(spec, 123, 8, 8);
    TaskSource source = [&](uint64_t) { return frozen; };
    TrainConfig cfg;
    cfg.steps = 2000;
    cfg.seed = 12;
    Model model(tiny_model(Family::kCnp, 32), cfg.seed);
    train(model, source, cfg);
    PredictOutput pred = predict(model, frozen, Mode::kEval, 0);
    double ll = 0.0;
    for (double v : pred.ll) ll += v;
    ll /= static_cast<double>(pred.n);
    CHECK(ll > 0.0);
}

TEST_CASE("weight decay shrinks the parameter norm") {
    TrainConfig cfg;
    cfg.steps = 5000;
    cfg.seed = 13;
    auto run = [&](double wd) {
        ModelConfig mc = tiny_model(Family::kCnp, 8);
        mc.weight_decay = wd;
        Model model(mc, cfg.seed);
        train(model, small_regression_source(false), cfg);
        double sq = 0.0;
        for (const Parameter* p : model.params.all())
            for (double v : p->value) sq += v * v;
        return std::sqrt(sq);
    };
    CHECK(run(0.001) < run(0.0));
}

TEST_CASE("evaluate aggregates the perfect-oracle stub exactly") {
    Predictor stub = [](const Task& task, uint64_t) {
        PredictOutput out;
        out.n = task.n_target;
        out.d_y = task.d_y;
        out.mu = task.y_target;
        out.sigma.assign(task.n_target * task.d_y, 1.0);
        out.ll.resize(task.n_target);
        for (size_t i = 0; i < task.n_target; ++i) {
            double ll = 0.0;
            for (size_t d = 0; d < task.d_y; ++d)
                ll += gaussian_log_likelihood_scalar(task.y_target[i * task.d_y + d],
                                                     task.y_target[i * task.d_y + d], 1.0);
            out.ll[i] = ll;
        }
        return out;
    };
    TaskSource source = [](uint64_t s) {
        return make_regression_task_counts(RegressionTaskSpec{}, s, 4, 5);
    };
    EvalReport report = evaluate_with(stub, source, 25, 99, "stub");
    CHECK(report.target_ll == Catch::Approx(-0.91893853320467274178).epsilon(1e-14));
    CHECK(report.context_ll == Catch::Approx(-0.91893853320467274178).epsilon(1e-14));
    CHECK(report.stderr_target == Catch::Approx(0.0).margin(1e-14));
    CHECK(report.n_tasks == 25);

    nlohmann::json j = report.to_json();
    CHECK(j.contains("kernel"));
    CHECK(j.contains("context_ll"));
    CHECK(j.contains("target_ll"));
    CHECK(j.contains("stderr"));
    CHECK(j.contains("n_tasks"));
}

TEST_CASE("evaluate validation") {
    Model model(tiny_model(Family::kNp, 8), 14);
    TaskSource source = [](uint64_t s) {
        return make_regression_task_counts(RegressionTaskSpec{}, s, 4, 5);
    };
    CHECK_THROWS_AS(evaluate(model, source, 0, 1), ValidationError);

    // family mismatch: 1D-regression model against predator-prey tasks
    LVSimSpec lv;
    TaskSource lv_source = [&](uint64_t s) { return make_lv_sim_task(lv, s); };
    CHECK_THROWS_AS(evaluate(model, lv_source, 3, 1), ValidationError);
}

TEST_CASE("identical evaluation seeds give identical reports") {
    Model model(tiny_model(Family::kNpsa, 8), 15);
    TaskSource source = [](uint64_t s) {
        return make_regression_task_counts(RegressionTaskSpec{}, s, 4, 6);
    };
    EvalReport a = evaluate(model, source, 10, 42);
    EvalReport b = evaluate(model, source, 10, 42);
    CHECK(a.target_ll == b.target_ll);
    CHECK(a.context_ll == b.context_ll);
    CHECK(a.to_json().dump() == b.to_json().dump());
}
