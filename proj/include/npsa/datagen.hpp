#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "npsa/common.hpp"
#include "npsa/task.hpp"

namespace npsa {

// ---------------------------------------------------------------------------
// GP kernels over scalar inputs.
// ---------------------------------------------------------------------------

enum class KernelFamily { kRbf, kMatern32, kPeriodic };

inline std::string kernel_name(KernelFamily f) {
    switch (f) {
        case KernelFamily::kRbf: return "RBF";
        case KernelFamily::kMatern32: return "Matern32";
        case KernelFamily::kPeriodic: return "Periodic";
    }
    throw ValidationError("unknown kernel family");
}

inline KernelFamily kernel_from_name(const std::string& s) {
    if (s == "RBF" || s == "rbf") return KernelFamily::kRbf;
    if (s == "Matern32" || s == "matern" || s == "matern32") return KernelFamily::kMatern32;
    if (s == "Periodic" || s == "periodic") return KernelFamily::kPeriodic;
    throw ValidationError("unknown kernel family: " + s);
}

struct KernelSpec {
    KernelFamily family = KernelFamily::kRbf;
    double s = 3.0;     // signal scale
    double l = 3.0;     // lengthscale
    double freq = 10.0; // periodic frequency
    double p = 2.0 * M_PI;

    void validate() const {
        if (!(s > 0.0) || !(l > 0.0)) throw ValidationError("KernelSpec: s and l must be positive");
        if (family == KernelFamily::kPeriodic && (!(freq >= 1.0) || !(p > 0.0)))
            throw ValidationError("KernelSpec: periodic needs freq >= 1 and p > 0");
    }
};

inline double kernel_eval(const KernelSpec& spec, double x, double xp) {
    double d = std::abs(x - xp);
    switch (spec.family) {
        case KernelFamily::kRbf:
            return spec.s * spec.s * std::exp(-d * d / (2.0 * spec.l * spec.l));
        case KernelFamily::kMatern32: {
            double r = std::sqrt(3.0) * d / spec.l;
            return spec.s * spec.s * (1.0 + r) * std::exp(-r);
        }
        case KernelFamily::kPeriodic: {
            double sn = std::sin(M_PI * spec.freq * d / spec.p);
            return spec.s * spec.s * std::exp(-2.0 * sn * sn / (spec.l * spec.l));
        }
    }
    throw ValidationError("kernel_eval: unknown family");
}

// ---------------------------------------------------------------------------
// GP function draws: y ~ N(0, K + jitter I) via Cholesky, escalating the
// jitter from 1e-6 to 1e-4 before giving up.
// ---------------------------------------------------------------------------

namespace detail {

// in-place lower Cholesky; returns false if a pivot fails
inline bool cholesky(std::vector<double>& a, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j <= i; ++j) {
            double sum = a[i * n + j];
            for (size_t k = 0; k < j; ++k) sum -= a[i * n + k] * a[j * n + k];
            if (i == j) {
                if (!(sum > 0.0)) return false;
                a[i * n + i] = std::sqrt(sum);
            } else {
                a[i * n + j] = sum / a[j * n + j];
            }
        }
        for (size_t j = i + 1; j < n; ++j) a[i * n + j] = 0.0;
    }
    return true;
}

}  // namespace detail

inline std::vector<double> gp_sample(const KernelSpec& spec, const std::vector<double>& xs,
                                     uint64_t seed) {
    spec.validate();
    size_t n = xs.size();
    if (n == 0) throw ShapeError("gp_sample: needs at least one input");
    std::vector<double> base(n * n);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) base[i * n + j] = kernel_eval(spec, xs[i], xs[j]);
    std::vector<double> chol;
    bool ok = false;
    for (double jitter : {1e-6, 1e-4}) {
        chol = base;
        for (size_t i = 0; i < n; ++i) chol[i * n + i] += jitter;
        if (detail::cholesky(chol, n)) {
            ok = true;
            break;
        }
    }
    if (!ok) throw NumericError("gp_sample: Cholesky failed after jitter escalation");
    Rng rng(seed);
    std::vector<double> z(n);
    for (double& v : z) v = rng.normal();
    std::vector<double> y(n, 0.0);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j <= i; ++j) y[i] += chol[i * n + j] * z[j];
    return y;
}

// ---------------------------------------------------------------------------
// 1D regression episodes: x ~ Unif(-2,2), y drawn from the training GP,
// optionally plus an independent draw from a high-frequency periodic noise
// GP. Contexts are a prefix of the (already random-ordered) target points.
// ---------------------------------------------------------------------------

struct RegressionTaskSpec {
    KernelSpec train_kernel{KernelFamily::kRbf, 3.0, 3.0};
    std::optional<KernelSpec> noise_kernel;  // Appendix-style: freq=30, p=2pi, s=1, l=1

    static KernelSpec default_noise() {
        KernelSpec k;
        k.family = KernelFamily::kPeriodic;
        k.s = 1.0;
        k.l = 1.0;
        k.freq = 30.0;
        k.p = 2.0 * M_PI;
        return k;
    }
};

inline Task make_regression_task_counts(const RegressionTaskSpec& spec, uint64_t seed,
                                        size_t n_context, size_t n_extra) {
    spec.train_kernel.validate();
    if (spec.noise_kernel) spec.noise_kernel->validate();
    size_t n = n_context + n_extra;

    Rng xrng(derive_seed(seed, "x"));
    std::vector<double> xs(n);
    for (double& v : xs) v = xrng.uniform(-2.0, 2.0);

    // sample on sorted inputs, then map back to the sampled order
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return xs[a] < xs[b]; });
    std::vector<double> xs_sorted(n);
    for (size_t i = 0; i < n; ++i) xs_sorted[i] = xs[order[i]];
    std::vector<double> ys_sorted = gp_sample(spec.train_kernel, xs_sorted, derive_seed(seed, "gp"));
    if (spec.noise_kernel) {
        std::vector<double> noise =
            gp_sample(*spec.noise_kernel, xs_sorted, derive_seed(seed, "gpnoise"));
        for (size_t i = 0; i < n; ++i) ys_sorted[i] += noise[i];
    }
    std::vector<double> ys(n);
    for (size_t i = 0; i < n; ++i) ys[order[i]] = ys_sorted[i];

    Task task;
    task.d_x = 1;
    task.d_y = 1;
    task.n_context = n_context;
    task.n_target = n;
    task.x_target = xs;
    task.y_target = ys;
    task.x_context.assign(xs.begin(), xs.begin() + n_context);
    task.y_context.assign(ys.begin(), ys.begin() + n_context);
    task.meta.kernel = kernel_name(spec.train_kernel.family);
    task.meta.noisy = spec.noise_kernel.has_value();
    task.meta.seed = seed;
    return task;
}

inline Task make_regression_task(const RegressionTaskSpec& spec, uint64_t seed) {
    Rng rng(derive_seed(seed, "counts"));
    size_t n_context = static_cast<size_t>(rng.uniform_int(3, 97));
    size_t n_extra = static_cast<size_t>(rng.uniform_int(3, 100 - static_cast<int64_t>(n_context)));
    return make_regression_task_counts(spec, seed, n_context, n_extra);
}

// ---------------------------------------------------------------------------
// Lotka-Volterra jump process (Gillespie). X = predators, Y = prey.
//   event 1: predator born,  rate theta1*X*Y, X += 1
//   event 2: predator dies,  rate theta2*X,   X -= 1
//   event 3: prey born,      rate theta3*Y,   Y += 1
//   event 4: prey eaten,     rate theta4*X*Y, Y -= 1
// ---------------------------------------------------------------------------

struct LVState {
    double t = 0.0;
    int64_t predators = 0;  // X
    int64_t prey = 0;       // Y
};

struct LVTheta {
    double theta1 = 0.01, theta2 = 0.5, theta3 = 1.0, theta4 = 0.01;

    void validate() const {
        if (!(theta1 > 0.0 && theta2 > 0.0 && theta3 > 0.0 && theta4 > 0.0))
            throw ValidationError("LVTheta: all rates must be positive");
    }
};

inline double lv_total_rate(const LVTheta& th, int64_t x, int64_t y) {
    double fx = static_cast<double>(x), fy = static_cast<double>(y);
    return th.theta1 * fx * fy + th.theta2 * fx + th.theta3 * fy + th.theta4 * fx * fy;
}

inline std::vector<LVState> lv_simulate(const LVTheta& theta, LVState init, double t_max,
                                        size_t max_events, uint64_t seed) {
    theta.validate();
    if (init.predators < 0 || init.prey < 0)
        throw ValidationError("lv_simulate: initial populations must be non-negative");
    Rng rng(seed);
    std::vector<LVState> traj;
    traj.push_back(init);
    LVState s = init;
    for (size_t ev = 0; ev < max_events; ++ev) {
        double fx = static_cast<double>(s.predators), fy = static_cast<double>(s.prey);
        double r1 = theta.theta1 * fx * fy;
        double r2 = theta.theta2 * fx;
        double r3 = theta.theta3 * fy;
        double r4 = theta.theta4 * fx * fy;
        double total = r1 + r2 + r3 + r4;
        if (total <= 0.0) break;  // absorbed
        double wait = rng.exponential(total);
        if (s.t + wait > t_max) break;
        s.t += wait;
        double u = rng.uniform() * total;
        if (u < r1)
            s.predators += 1;
        else if (u < r1 + r2)
            s.predators -= 1;
        else if (u < r1 + r2 + r3)
            s.prey += 1;
        else
            s.prey -= 1;
        traj.push_back(s);
    }
    return traj;
}

// A regular-grid population series; shared by the simulator and the
// hare-lynx ingestion path. Values are raw counts.
struct PopulationSeries {
    std::vector<double> t;
    std::vector<double> predators;
    std::vector<double> prey;

    size_t size() const { return t.size(); }
};

// sample the jump trajectory on a regular grid with last-value interpolation
inline PopulationSeries lv_grid_series(const std::vector<LVState>& traj, size_t n_points,
                                       double t_max) {
    if (traj.empty()) throw ShapeError("lv_grid_series: empty trajectory");
    if (n_points < 2) throw ShapeError("lv_grid_series: needs at least two grid points");
    PopulationSeries out;
    out.t.resize(n_points);
    out.predators.resize(n_points);
    out.prey.resize(n_points);
    size_t j = 0;
    for (size_t i = 0; i < n_points; ++i) {
        double t = t_max * static_cast<double>(i) / static_cast<double>(n_points - 1);
        while (j + 1 < traj.size() && traj[j + 1].t <= t) ++j;
        out.t[i] = t;
        out.predators[i] = static_cast<double>(traj[j].predators);
        out.prey[i] = static_cast<double>(traj[j].prey);
    }
    return out;
}

constexpr double kPopulationRescale = 0.01;  // counts / 100, keeps values O(1)

// Episode from a recorded series: d_x = 1 (time), d_y = 2 (predators, prey),
// populations rescaled by 1/100, contexts a prefix of the shuffled targets.
inline Task make_lv_task_counts(const PopulationSeries& series, uint64_t seed, size_t n_context,
                                size_t n_extra) {
    size_t n = series.size();
    if (n < 60) throw ValidationError("make_lv_task: series must have at least 60 points");
    size_t n_target = n_context + n_extra;
    if (n_target > n) throw ValidationError("make_lv_task: requested more points than the series has");

    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng shuffle_rng(derive_seed(seed, "lvshuffle"));
    for (size_t i = n; i > 1; --i)
        std::swap(idx[i - 1], idx[static_cast<size_t>(shuffle_rng.uniform_int(0, i - 1))]);

    Task task;
    task.d_x = 1;
    task.d_y = 2;
    task.n_context = n_context;
    task.n_target = n_target;
    task.x_target.resize(n_target);
    task.y_target.resize(n_target * 2);
    for (size_t i = 0; i < n_target; ++i) {
        size_t k = idx[i];
        task.x_target[i] = series.t[k];
        task.y_target[i * 2] = series.predators[k] * kPopulationRescale;
        task.y_target[i * 2 + 1] = series.prey[k] * kPopulationRescale;
    }
    task.x_context.assign(task.x_target.begin(), task.x_target.begin() + n_context);
    task.y_context.assign(task.y_target.begin(), task.y_target.begin() + n_context * 2);
    task.meta.kernel = "LV";
    task.meta.seed = seed;
    return task;
}

inline Task make_lv_task(const PopulationSeries& series, uint64_t seed) {
    size_t n = series.size();
    if (n < 60) throw ValidationError("make_lv_task: series must have at least 60 points");
    Rng rng(derive_seed(seed, "lvcounts"));
    size_t n_context = static_cast<size_t>(rng.uniform_int(15, static_cast<int64_t>(n / 2)));
    size_t n_extra =
        static_cast<size_t>(rng.uniform_int(15, static_cast<int64_t>(n - n_context)));
    return make_lv_task_counts(series, seed, n_context, n_extra);
}

// Episode generator for Sim2Real training. Random initial populations, and
// trajectories whose populations blow past max_population are re-drawn:
// once the predators die out the prey count grows exponentially, which is a
// property of the jump process, not a usable training function.
struct LVSimSpec {
    LVTheta theta;
    double t_max = 30.0;
    size_t grid_points = 100;
    size_t max_events = 100000;
    int64_t init_min = 50, init_max = 100;
    double max_population = 600.0;
    size_t max_attempts = 100;

    void validate() const {
        theta.validate();
        if (!(t_max > 0.0)) throw ValidationError("LVSimSpec: t_max must be positive");
        if (grid_points < 60) throw ValidationError("LVSimSpec: grid needs at least 60 points");
        if (init_min < 0 || init_max < init_min) throw ValidationError("LVSimSpec: bad init range");
    }
};

inline PopulationSeries simulate_lv_series(const LVSimSpec& spec, uint64_t seed) {
    spec.validate();
    for (size_t attempt = 0; attempt < spec.max_attempts; ++attempt) {
        uint64_t s = derive_seed(seed, "lvattempt", attempt);
        Rng rng(derive_seed(s, "lvinit"));
        LVState init;
        init.predators = rng.uniform_int(spec.init_min, spec.init_max);
        init.prey = rng.uniform_int(spec.init_min, spec.init_max);
        auto traj = lv_simulate(spec.theta, init, spec.t_max, spec.max_events, s);
        PopulationSeries series = lv_grid_series(traj, spec.grid_points, spec.t_max);
        double peak = 0.0;
        for (size_t i = 0; i < series.size(); ++i)
            peak = std::max({peak, series.predators[i], series.prey[i]});
        if (peak <= spec.max_population) return series;
    }
    throw NumericError("simulate_lv_series: no acceptable trajectory after max_attempts");
}

inline Task make_lv_sim_task(const LVSimSpec& spec, uint64_t seed) {
    return make_lv_task(simulate_lv_series(spec, seed), seed);
}

// ---------------------------------------------------------------------------
// Hare-lynx ingestion: strict CSV `year,hare,lynx`, one row per year.
// ---------------------------------------------------------------------------

struct HareLynxData {
    std::vector<double> year;
    std::vector<double> hare;
    std::vector<double> lynx;

    size_t size() const { return year.size(); }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

inline double parse_number(const std::string& s, size_t line_no, const char* what) {
    try {
        size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line_no) + ": cannot parse " + what + " '" +
                         s + "'");
    }
}

}  // namespace detail

inline HareLynxData load_hare_lynx(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open hare-lynx file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("line 1: empty file");
    auto header = detail::split_csv_line(line);
    if (header.size() != 3 || header[0] != "year" || header[1] != "hare" || header[2] != "lynx")
        throw ParseError("line 1: expected header 'year,hare,lynx'");
    HareLynxData data;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != 3)
            throw ParseError("line " + std::to_string(line_no) + ": expected 3 columns, got " +
                             std::to_string(fields.size()));
        data.year.push_back(detail::parse_number(fields[0], line_no, "year"));
        data.hare.push_back(detail::parse_number(fields[1], line_no, "hare"));
        data.lynx.push_back(detail::parse_number(fields[2], line_no, "lynx"));
    }
    if (data.size() < 2) throw ParseError("hare-lynx file has fewer than 2 data rows");
    return data;
}

// Map the annual series onto the simulator's time span so the model sees
// inputs in the range it was trained on. Predators = lynx, prey = hare.
inline PopulationSeries hare_lynx_series(const HareLynxData& data, double t_span = 30.0) {
    PopulationSeries s;
    size_t n = data.size();
    double y0 = data.year.front(), y1 = data.year.back();
    if (!(y1 > y0)) throw ValidationError("hare_lynx_series: years must increase");
    s.t.resize(n);
    for (size_t i = 0; i < n; ++i) s.t[i] = (data.year[i] - y0) / (y1 - y0) * t_span;
    s.predators = data.lynx;
    s.prey = data.hare;
    return s;
}

// ---------------------------------------------------------------------------
// Task dump format: `role,x0..,y0..` with contexts first.
// ---------------------------------------------------------------------------

inline void dump_task_csv(const Task& task, std::ostream& out) {
    out << "role";
    for (size_t j = 0; j < task.d_x; ++j) out << ",x" << j;
    for (size_t j = 0; j < task.d_y; ++j) out << ",y" << j;
    out << "\n";
    out.precision(17);
    for (size_t i = 0; i < task.n_target; ++i) {
        out << (i < task.n_context ? "context" : "extra");
        for (size_t j = 0; j < task.d_x; ++j) out << "," << task.x_target[i * task.d_x + j];
        for (size_t j = 0; j < task.d_y; ++j) out << "," << task.y_target[i * task.d_y + j];
        out << "\n";
    }
}

inline Task parse_task_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError("line 1: empty task file");
    auto header = detail::split_csv_line(line);
    if (header.size() < 3 || header[0] != "role")
        throw ParseError("line 1: expected 'role,x...,y...' header");
    size_t d_x = 0, d_y = 0;
    for (size_t i = 1; i < header.size(); ++i) {
        if (header[i].rfind('x', 0) == 0 && d_y == 0)
            ++d_x;
        else if (header[i].rfind('y', 0) == 0)
            ++d_y;
        else
            throw ParseError("line 1: unexpected column '" + header[i] + "'");
    }
    if (d_x == 0 || d_y == 0) throw ParseError("line 1: need both x and y columns");
    Task task;
    task.d_x = d_x;
    task.d_y = d_y;
    size_t line_no = 1;
    bool seen_extra = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != 1 + d_x + d_y)
            throw ParseError("line " + std::to_string(line_no) + ": wrong column count");
        bool is_context = fields[0] == "context";
        if (!is_context && fields[0] != "extra")
            throw ParseError("line " + std::to_string(line_no) + ": bad role '" + fields[0] + "'");
        if (is_context && seen_extra)
            throw ParseError("line " + std::to_string(line_no) + ": context row after extras");
        seen_extra = seen_extra || !is_context;
        for (size_t j = 0; j < d_x; ++j)
            task.x_target.push_back(detail::parse_number(fields[1 + j], line_no, "x"));
        for (size_t j = 0; j < d_y; ++j)
            task.y_target.push_back(detail::parse_number(fields[1 + d_x + j], line_no, "y"));
        task.n_target += 1;
        if (is_context) task.n_context += 1;
    }
    task.x_context.assign(task.x_target.begin(), task.x_target.begin() + task.n_context * d_x);
    task.y_context.assign(task.y_target.begin(), task.y_target.begin() + task.n_context * d_y);
    task.validate();
    return task;
}

}  // namespace npsa
