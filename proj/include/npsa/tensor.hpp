#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "npsa/common.hpp"
#include "npsa/special_functions.hpp"

namespace npsa {

// A named, persistent parameter array. Tapes bind leaves to these; the
// trainer owns the Adam moment buffers (m, v) alongside the values.
struct Parameter {
    std::string name;
    size_t rows = 0, cols = 0;
    std::vector<double> value;
    std::vector<double> grad;
    std::vector<double> m, v;  // Adam moments

    size_t size() const { return rows * cols; }
};

class ParamStore {
  public:
    Parameter& create(const std::string& name, size_t rows, size_t cols) {
        if (index_.count(name)) throw ValidationError("parameter already exists: " + name);
        auto p = std::make_unique<Parameter>();
        p->name = name;
        p->rows = rows;
        p->cols = cols;
        p->value.assign(rows * cols, 0.0);
        p->grad.assign(rows * cols, 0.0);
        p->m.assign(rows * cols, 0.0);
        p->v.assign(rows * cols, 0.0);
        params_.push_back(std::move(p));
        index_[name] = params_.size() - 1;
        return *params_.back();
    }

    Parameter& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ValidationError("unknown parameter: " + name);
        return *params_[it->second];
    }
    const Parameter& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ValidationError("unknown parameter: " + name);
        return *params_[it->second];
    }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    // creation order, which is the deterministic init / update order
    std::vector<Parameter*> all() {
        std::vector<Parameter*> out;
        out.reserve(params_.size());
        for (auto& p : params_) out.push_back(p.get());
        return out;
    }
    std::vector<const Parameter*> all() const {
        std::vector<const Parameter*> out;
        out.reserve(params_.size());
        for (auto& p : params_) out.push_back(p.get());
        return out;
    }

    void zero_grad() {
        for (auto& p : params_) std::fill(p->grad.begin(), p->grad.end(), 0.0);
    }

  private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::map<std::string, size_t> index_;
};

class Tape;

// Lightweight handle to a tape node. Values are immutable once created.
struct Tensor {
    Tape* tape = nullptr;
    size_t node = 0;

    size_t rows() const;
    size_t cols() const;
    size_t size() const { return rows() * cols(); }
    const std::vector<double>& data() const;
    const std::vector<double>& grad() const;
    double operator()(size_t i, size_t j) const;
    double scalar() const;
};

// Define-by-run reverse-mode tape over dense row-major 2-D arrays.
// Nodes are appended in creation order; backward replays adjoints in
// reverse creation order, which is a valid topological order.
class Tape {
  public:
    struct Node {
        size_t rows = 0, cols = 0;
        std::vector<double> data;
        std::vector<double> grad;
        bool requires_grad = false;
        std::function<void(Tape&)> backward;
    };

    Tape() { nodes_.reserve(256); }

    Node& node(size_t i) { return nodes_[i]; }
    const Node& node(size_t i) const { return nodes_[i]; }
    size_t num_nodes() const { return nodes_.size(); }

    Tensor constant(size_t rows, size_t cols, std::vector<double> data) {
        if (data.size() != rows * cols) throw ShapeError("constant: data length != rows*cols");
        return make(rows, cols, std::move(data), false);
    }
    Tensor constant_fill(size_t rows, size_t cols, double v) {
        return make(rows, cols, std::vector<double>(rows * cols, v), false);
    }
    Tensor scalar_const(double v) { return constant(1, 1, {v}); }

    Tensor leaf(size_t rows, size_t cols, std::vector<double> data, bool requires_grad) {
        if (data.size() != rows * cols) throw ShapeError("leaf: data length != rows*cols");
        return make(rows, cols, std::move(data), requires_grad);
    }

    // Bind a persistent parameter as a differentiable leaf; after backward()
    // the leaf's adjoint is accumulated into Parameter::grad.
    Tensor param(Parameter& p) {
        Tensor t = make(p.rows, p.cols, p.value, true);
        bindings_.emplace_back(t.node, &p);
        return t;
    }

    // ---- elementwise ----

    Tensor add(Tensor a, Tensor b) {
        check_same_shape(a, b, "add");
        Node& na = nodes_[a.node];
        Node& nb = nodes_[b.node];
        std::vector<double> out(na.data.size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = na.data[i] + nb.data[i];
        Tensor t = make(na.rows, na.cols, std::move(out), na.requires_grad || nb.requires_grad);
        if (nodes_[t.node].requires_grad) {
            size_t ia = a.node, ib = b.node, io = t.node;
            nodes_[io].backward = [ia, ib, io](Tape& tp) {
                auto& g = tp.nodes_[io].grad;
                tp.accumulate(ia, [&](size_t i) { return g[i]; });
                tp.accumulate(ib, [&](size_t i) { return g[i]; });
            };
        }
        return t;
    }

    Tensor mul(Tensor a, Tensor b) {
        check_same_shape(a, b, "mul");
        Node& na = nodes_[a.node];
        Node& nb = nodes_[b.node];
        std::vector<double> out(na.data.size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = na.data[i] * nb.data[i];
        Tensor t = make(na.rows, na.cols, std::move(out), na.requires_grad || nb.requires_grad);
        if (nodes_[t.node].requires_grad) {
            size_t ia = a.node, ib = b.node, io = t.node;
            nodes_[io].backward = [ia, ib, io](Tape& tp) {
                auto& g = tp.nodes_[io].grad;
                auto& da = tp.nodes_[ia].data;
                auto& db = tp.nodes_[ib].data;
                tp.accumulate(ia, [&](size_t i) { return g[i] * db[i]; });
                tp.accumulate(ib, [&](size_t i) { return g[i] * da[i]; });
            };
        }
        return t;
    }

    Tensor add_scalar(Tensor a, double c) {
        return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; },
                     "add_scalar");
    }

    Tensor scale(Tensor a, double c) {
        return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; },
                     "scale");
    }

    Tensor neg(Tensor a) { return scale(a, -1.0); }

    Tensor sub(Tensor a, Tensor b) { return add(a, neg(b)); }

    Tensor exp(Tensor a) {
        return unary(a, [](double x) { return std::exp(x); },
                     [](double, double y) { return y; }, "exp");
    }

    Tensor log(Tensor a) {
        const Node& na = nodes_[a.node];
        for (double x : na.data)
            if (!(x > 0.0)) throw std::domain_error("log: non-positive input");
        return unary(a, [](double x) { return std::log(x); },
                     [](double x, double) { return 1.0 / x; }, "log");
    }

    Tensor reciprocal(Tensor a) {
        const Node& na = nodes_[a.node];
        for (double x : na.data)
            if (x == 0.0) throw std::domain_error("reciprocal: zero input");
        return unary(a, [](double x) { return 1.0 / x; },
                     [](double x, double) { return -1.0 / (x * x); }, "reciprocal");
    }

    Tensor relu(Tensor a) {
        return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                     [](double x, double) { return x > 0.0 ? 1.0 : 0.0; }, "relu");
    }

    Tensor sigmoid(Tensor a) {
        return unary(a, [](double x) { return sigmoid_val(x); },
                     [](double, double y) { return y * (1.0 - y); }, "sigmoid");
    }

    Tensor softplus(Tensor a) {
        return unary(a, [](double x) { return softplus_val(x); },
                     [](double x, double) { return sigmoid_val(x); }, "softplus");
    }

    Tensor lgamma(Tensor a) {
        const Node& na = nodes_[a.node];
        for (double x : na.data)
            if (!(x > 0.0)) throw std::domain_error("lgamma: requires positive input");
        return unary(a, [](double x) { return lgamma_pos(x); },
                     [](double x, double) { return npsa::digamma(x); }, "lgamma");
    }

    Tensor digamma(Tensor a) {
        const Node& na = nodes_[a.node];
        for (double x : na.data)
            if (!(x > 0.0)) throw std::domain_error("digamma: requires positive input");
        return unary(a, [](double x) { return npsa::digamma(x); },
                     [](double x, double) { return npsa::trigamma(x); }, "digamma");
    }

    // ---- linear algebra ----

    // stable=true uses order-canonical summation over the inner dimension so
    // that permuting (rows of a's columns / b's rows) cannot change the
    // result bitwise. Only the forward pass needs this; adjoints are
    // replayed in a fixed order anyway.
    Tensor matmul(Tensor a, Tensor b, bool stable = false) {
        Node& na = nodes_[a.node];
        Node& nb = nodes_[b.node];
        if (na.cols != nb.rows)
            throw ShapeError("matmul: inner extents disagree (" + std::to_string(na.cols) +
                             " vs " + std::to_string(nb.rows) + ")");
        size_t n = na.rows, k = na.cols, m = nb.cols;
        std::vector<double> out(n * m, 0.0);
        if (!stable) {
            for (size_t i = 0; i < n; ++i) {
                const double* arow = na.data.data() + i * k;
                double* orow = out.data() + i * m;
                for (size_t p = 0; p < k; ++p) {
                    double av = arow[p];
                    const double* brow = nb.data.data() + p * m;
                    for (size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
                }
            }
        } else {
            std::vector<double> terms(k);
            for (size_t i = 0; i < n; ++i)
                for (size_t j = 0; j < m; ++j) {
                    for (size_t p = 0; p < k; ++p) terms[p] = na.data[i * k + p] * nb.data[p * m + j];
                    out[i * m + j] = stable_sum(terms);
                }
        }
        Tensor t = make(n, m, std::move(out), na.requires_grad || nb.requires_grad);
        if (nodes_[t.node].requires_grad) {
            size_t ia = a.node, ib = b.node, io = t.node;
            nodes_[io].backward = [ia, ib, io, n, k, m](Tape& tp) {
                auto& g = tp.nodes_[io].grad;
                auto& A = tp.nodes_[ia];
                auto& B = tp.nodes_[ib];
                if (A.requires_grad) {  // dA = g * B^T
                    for (size_t i = 0; i < n; ++i)
                        for (size_t p = 0; p < k; ++p) {
                            double s = 0.0;
                            for (size_t j = 0; j < m; ++j) s += g[i * m + j] * B.data[p * m + j];
                            A.grad[i * k + p] += s;
                        }
                }
                if (B.requires_grad) {  // dB = A^T * g
                    for (size_t p = 0; p < k; ++p)
                        for (size_t j = 0; j < m; ++j) {
                            double s = 0.0;
                            for (size_t i = 0; i < n; ++i) s += A.data[i * k + p] * g[i * m + j];
                            B.grad[p * m + j] += s;
                        }
                }
            };
        }
        return t;
    }

    Tensor transpose(Tensor a) {
        Node& na = nodes_[a.node];
        size_t n = na.rows, m = na.cols;
        std::vector<double> out(n * m);
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < m; ++j) out[j * n + i] = na.data[i * m + j];
        Tensor t = make(m, n, std::move(out), na.requires_grad);
        if (nodes_[t.node].requires_grad) {
            size_t ia = a.node, io = t.node;
            nodes_[io].backward = [ia, io, n, m](Tape& tp) {
                auto& g = tp.nodes_[io].grad;
                auto& ga = tp.nodes_[ia].grad;
                for (size_t i = 0; i < n; ++i)
                    for (size_t j = 0; j < m; ++j) ga[i * m + j] += g[j * n + i];
            };
        }
        return t;
    }

    // ---- row/column structure ----

    Tensor softmax_rows(Tensor a) {
        Node& na = nodes_[a.node];
        for (double x : na.data)
            if (std::isnan(x)) throw NumericError("softmax_rows: NaN input");
        size_t n = na.rows, m = na.cols;
        std::vector<double> out(n * m);
        std::vector<double> scratch(m);
        for (size_t i = 0; i < n; ++i) {
            double mx = na.data[i * m];
            for (size_t j = 1; j < m; ++j) mx = std::max(mx, na.data[i * m + j]);
            for (size_t j = 0; j < m; ++j) scratch[j] = std::exp(na.data[i * m + j] - mx);
            double denom = stable_sum(scratch);
            for (size_t j = 0; j < m; ++j) out[i * m + j] = scratch[j] / denom;
        }
        Tensor t = make(n, m, std::move(out), na.requires_grad);
        if (nodes_[t.node].requires_grad) {
            size_t ia = a.node, io = t.node;
            nodes_[io].backward = [ia, io, n, m](Tape& tp) {
                auto& g = tp.nodes_[io].grad;
                auto& y = tp.nodes_[io].data;
                auto& ga = tp.nodes_[ia].grad;
                for (size_t i = 0; i < n; ++i) {
                    double dot = 0.0;
                    for (size_t j = 0; j < m; ++j) dot += g[i * m + j] * y[i * m + j];
                    for (size_t j = 0; j < m; ++j)
                        ga[i * m + j] += y[i * m + j] * (g[i * m + j] - dot);
                }
            };
        }
        return t;
    }

    // Per-row normalization with learned affine; epsilon inside the sqrt.
    Tensor layer_norm_rows(Tensor x, Tensor gain, Tensor bias, double eps = 1e-5) {
        Node& nx = nodes_[x.node];
        size_t n = nx.rows, m = nx.cols;
        if (m < 2) throw ShapeError("layer_norm_rows: row length must be >= 2");
        const Node& ng = nodes_[gain.node];
        const Node& nb = nodes_[bias.node];
        if (ng.rows * ng.cols != m || nb.rows * nb.cols != m)
            throw ShapeError("layer_norm_rows: affine parameters must have row width");
        std::vector<double> out(n * m), xhat(n * m), inv_sigma(n);
        for (size_t i = 0; i < n; ++i) {
            double mean = 0.0;
            for (size_t j = 0; j < m; ++j) mean += nx.data[i * m + j];
            mean /= m;
            double var = 0.0;
            for (size_t j = 0; j < m; ++j) {
                double d = nx.data[i * m + j] - mean;
                var += d * d;
            }
            var /= m;
            double is = 1.0 / std::sqrt(var + eps);
            inv_sigma[i] = is;
            for (size_t j = 0; j < m; ++j) {
                double xh = (nx.data[i * m + j] - mean) * is;
                xhat[i * m + j] = xh;
                out[i * m + j] = ng.data[j] * xh + nb.data[j];
            }
        }
        bool rg = nx.requires_grad || ng.requires_grad || nb.requires_grad;
        Tensor t = make(n, m, std::move(out), rg);
        if (rg) {
            size_t ix = x.node, ig = gain.node, ib = bias.node, io = t.node;
            auto xh = std::make_shared<std::vector<double>>(std::move(xhat));
            auto is = std::make_shared<std::vector<double>>(std::move(inv_sigma));
            nodes_[io].backward = [ix, ig, ib, io, n, m, xh, is](Tape& tp) {
                auto& g = tp.nodes_[io].grad;
                auto& G = tp.nodes_[ig];
                auto& B = tp.nodes_[ib];
                auto& X = tp.nodes_[ix];
                for (size_t i = 0; i < n; ++i) {
                    double mean_gy = 0.0, mean_gyx = 0.0;
                    for (size_t j = 0; j < m; ++j) {
                        double gy = g[i * m + j] * G.data[j];
                        mean_gy += gy;
                        mean_gyx += gy * (*xh)[i * m + j];
                    }
                    mean_gy /= m;
                    mean_gyx /= m;
                    for (size_t j = 0; j < m; ++j) {
                        double gy = g[i * m + j] * G.data[j];
                        if (X.requires_grad)
                            X.grad[i * m + j] +=
                                (gy - mean_gy - (*xh)[i * m + j] * mean_gyx) * (*is)[i];
                        if (G.requires_grad) G.grad[j] += g[i * m + j] * (*xh)[i * m + j];
                        if (B.requires_grad) B.grad[j] += g[i * m + j];
                    }
                }
            };
        }
        return t;
    }

    // column means: [n x d] -> [1 x d]
    Tensor mean_rows(Tensor a) {
        Node& na = nodes_[a.node];
        size_t n = na.rows, m = na.cols;
        if (n == 0) throw ShapeError("mean_rows: empty input");
        std::vector<double> out(m);
        std::vector<double> col(n);
        for (size_t j = 0; j < m; ++j) {
            for (size_t i = 0; i < n; ++i) col[i] = na.data[i * m + j];
            out[j] = stable_sum(col) / static_cast<double>(n);
        }
        Tensor t = make(1, m, std::move(out), na.requires_grad);
        if (nodes_[t.node].requires_grad) {
            size_t ia = a.node, io = t.node;
            nodes_[io].backward = [ia, io, n, m](Tape& tp) {
                auto& g = tp.nodes_[io].grad;
                auto& ga = tp.nodes_[ia].grad;
                for (size_t i = 0; i < n; ++i)
                    for (size_t j = 0; j < m; ++j) ga[i * m + j] += g[j] / static_cast<double>(n);
            };
        }
        return t;
    }

    // row sums: [n x m] -> [n x 1]
    Tensor sum_cols(Tensor a) {
        Node& na = nodes_[a.node];
        size_t n = na.rows, m = na.cols;
        std::vector<double> out(n);
        for (size_t i = 0; i < n; ++i)
            out[i] = stable_sum(std::span<const double>(na.data.data() + i * m, m));
        Tensor t = make(n, 1, std::move(out), na.requires_grad);
        if (nodes_[t.node].requires_grad) {
            size_t ia = a.node, io = t.node;
            nodes_[io].backward = [ia, io, n, m](Tape& tp) {
                auto& g = tp.nodes_[io].grad;
                auto& ga = tp.nodes_[ia].grad;
                for (size_t i = 0; i < n; ++i)
                    for (size_t j = 0; j < m; ++j) ga[i * m + j] += g[i];
            };
        }
        return t;
    }

    Tensor sum_all(Tensor a) {
        Node& na = nodes_[a.node];
        double s = stable_sum(na.data);
        Tensor t = make(1, 1, {s}, na.requires_grad);
        if (nodes_[t.node].requires_grad) {
            size_t ia = a.node, io = t.node;
            nodes_[io].backward = [ia, io](Tape& tp) {
                double g = tp.nodes_[io].grad[0];
                auto& ga = tp.nodes_[ia].grad;
                for (double& v : ga) v += g;
            };
        }
        return t;
    }

    // [1 x m] stacked n times -> [n x m]
    Tensor broadcast_rows(Tensor v, size_t n) {
        Node& nv = nodes_[v.node];
        if (nv.rows != 1) throw ShapeError("broadcast_rows: expected a row vector");
        size_t m = nv.cols;
        std::vector<double> out(n * m);
        for (size_t i = 0; i < n; ++i)
            std::copy(nv.data.begin(), nv.data.end(), out.begin() + i * m);
        Tensor t = make(n, m, std::move(out), nv.requires_grad);
        if (nodes_[t.node].requires_grad) {
            size_t iv = v.node, io = t.node;
            nodes_[io].backward = [iv, io, n, m](Tape& tp) {
                auto& g = tp.nodes_[io].grad;
                auto& gv = tp.nodes_[iv].grad;
                for (size_t i = 0; i < n; ++i)
                    for (size_t j = 0; j < m; ++j) gv[j] += g[i * m + j];
            };
        }
        return t;
    }

    // matrix + row vector, applied to every row (bias add)
    Tensor add_rowvec(Tensor a, Tensor v) {
        Node& na = nodes_[a.node];
        Node& nv = nodes_[v.node];
        if (nv.rows != 1 || nv.cols != na.cols)
            throw ShapeError("add_rowvec: vector width must match matrix columns");
        size_t n = na.rows, m = na.cols;
        std::vector<double> out(n * m);
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < m; ++j) out[i * m + j] = na.data[i * m + j] + nv.data[j];
        Tensor t = make(n, m, std::move(out), na.requires_grad || nv.requires_grad);
        if (nodes_[t.node].requires_grad) {
            size_t ia = a.node, iv = v.node, io = t.node;
            nodes_[io].backward = [ia, iv, io, n, m](Tape& tp) {
                auto& g = tp.nodes_[io].grad;
                auto& A = tp.nodes_[ia];
                auto& V = tp.nodes_[iv];
                if (A.requires_grad)
                    for (size_t i = 0; i < n * m; ++i) A.grad[i] += g[i];
                if (V.requires_grad)
                    for (size_t i = 0; i < n; ++i)
                        for (size_t j = 0; j < m; ++j) V.grad[j] += g[i * m + j];
            };
        }
        return t;
    }

    // divide each row i of a by v[i] (simplex renormalization)
    Tensor div_colvec(Tensor a, Tensor v) {
        Node& na = nodes_[a.node];
        Node& nv = nodes_[v.node];
        if (nv.cols != 1 || nv.rows != na.rows)
            throw ShapeError("div_colvec: vector height must match matrix rows");
        size_t n = na.rows, m = na.cols;
        std::vector<double> out(n * m);
        // true division: a single-element row divided by its own sum must be
        // exactly one
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < m; ++j) out[i * m + j] = na.data[i * m + j] / nv.data[i];
        Tensor t = make(n, m, std::move(out), na.requires_grad || nv.requires_grad);
        if (nodes_[t.node].requires_grad) {
            size_t ia = a.node, iv = v.node, io = t.node;
            nodes_[io].backward = [ia, iv, io, n, m](Tape& tp) {
                auto& g = tp.nodes_[io].grad;
                auto& A = tp.nodes_[ia];
                auto& V = tp.nodes_[iv];
                for (size_t i = 0; i < n; ++i) {
                    double inv = 1.0 / V.data[i];
                    double acc = 0.0;
                    for (size_t j = 0; j < m; ++j) {
                        if (A.requires_grad) A.grad[i * m + j] += g[i * m + j] * inv;
                        acc += g[i * m + j] * A.data[i * m + j];
                    }
                    if (V.requires_grad) V.grad[i] -= acc * inv * inv;
                }
            };
        }
        return t;
    }

    Tensor concat_cols(Tensor a, Tensor b) {
        Node& na = nodes_[a.node];
        Node& nb = nodes_[b.node];
        if (na.rows != nb.rows) throw ShapeError("concat_cols: row counts disagree");
        size_t n = na.rows, ma = na.cols, mb = nb.cols;
        std::vector<double> out(n * (ma + mb));
        for (size_t i = 0; i < n; ++i) {
            std::copy(na.data.begin() + i * ma, na.data.begin() + (i + 1) * ma,
                      out.begin() + i * (ma + mb));
            std::copy(nb.data.begin() + i * mb, nb.data.begin() + (i + 1) * mb,
                      out.begin() + i * (ma + mb) + ma);
        }
        Tensor t = make(n, ma + mb, std::move(out), na.requires_grad || nb.requires_grad);
        if (nodes_[t.node].requires_grad) {
            size_t ia = a.node, ib = b.node, io = t.node;
            nodes_[io].backward = [ia, ib, io, n, ma, mb](Tape& tp) {
                auto& g = tp.nodes_[io].grad;
                auto& A = tp.nodes_[ia];
                auto& B = tp.nodes_[ib];
                for (size_t i = 0; i < n; ++i) {
                    if (A.requires_grad)
                        for (size_t j = 0; j < ma; ++j)
                            A.grad[i * ma + j] += g[i * (ma + mb) + j];
                    if (B.requires_grad)
                        for (size_t j = 0; j < mb; ++j)
                            B.grad[i * mb + j] += g[i * (ma + mb) + ma + j];
                }
            };
        }
        return t;
    }

    // columns [c0, c1)
    Tensor slice_cols(Tensor a, size_t c0, size_t c1) {
        Node& na = nodes_[a.node];
        if (c0 >= c1 || c1 > na.cols) throw ShapeError("slice_cols: bad column range");
        size_t n = na.rows, m = na.cols, w = c1 - c0;
        std::vector<double> out(n * w);
        for (size_t i = 0; i < n; ++i)
            std::copy(na.data.begin() + i * m + c0, na.data.begin() + i * m + c1,
                      out.begin() + i * w);
        Tensor t = make(n, w, std::move(out), na.requires_grad);
        if (nodes_[t.node].requires_grad) {
            size_t ia = a.node, io = t.node;
            nodes_[io].backward = [ia, io, n, m, c0, w](Tape& tp) {
                auto& g = tp.nodes_[io].grad;
                auto& ga = tp.nodes_[ia].grad;
                for (size_t i = 0; i < n; ++i)
                    for (size_t j = 0; j < w; ++j) ga[i * m + c0 + j] += g[i * w + j];
            };
        }
        return t;
    }

    // select a subset of rows (evaluation bookkeeping, e.g. context rows)
    Tensor gather_rows(Tensor a, const std::vector<size_t>& idx) {
        Node& na = nodes_[a.node];
        size_t m = na.cols;
        std::vector<double> out(idx.size() * m);
        for (size_t r = 0; r < idx.size(); ++r) {
            if (idx[r] >= na.rows) throw ShapeError("gather_rows: index out of range");
            std::copy(na.data.begin() + idx[r] * m, na.data.begin() + (idx[r] + 1) * m,
                      out.begin() + r * m);
        }
        Tensor t = make(idx.size(), m, std::move(out), na.requires_grad);
        if (nodes_[t.node].requires_grad) {
            size_t ia = a.node, io = t.node;
            auto ids = std::make_shared<std::vector<size_t>>(idx);
            nodes_[io].backward = [ia, io, m, ids](Tape& tp) {
                auto& g = tp.nodes_[io].grad;
                auto& ga = tp.nodes_[ia].grad;
                for (size_t r = 0; r < ids->size(); ++r)
                    for (size_t j = 0; j < m; ++j) ga[(*ids)[r] * m + j] += g[r * m + j];
            };
        }
        return t;
    }

    // Reverse sweep from a scalar output. Populates grads of every
    // requires_grad node reachable below it (zero elsewhere) and flushes
    // bound parameter leaves into their Parameter::grad.
    void backward(Tensor loss) {
        Node& nl = nodes_[loss.node];
        if (nl.rows != 1 || nl.cols != 1) throw ShapeError("backward: loss must be a scalar");
        for (auto& n : nodes_)
            if (n.requires_grad) n.grad.assign(n.data.size(), 0.0);
        if (!nl.requires_grad) return;
        nl.grad[0] = 1.0;
        for (size_t i = loss.node + 1; i-- > 0;) {
            if (nodes_[i].backward && nodes_[i].requires_grad) nodes_[i].backward(*this);
        }
        for (auto& [node_idx, param] : bindings_) {
            auto& g = nodes_[node_idx].grad;
            for (size_t i = 0; i < g.size(); ++i) param->grad[i] += g[i];
        }
    }

  private:
    static double sigmoid_val(double x) {
        if (x >= 0.0) {
            double e = std::exp(-x);
            return 1.0 / (1.0 + e);
        }
        double e = std::exp(x);
        return e / (1.0 + e);
    }
    static double softplus_val(double x) {
        if (x > 30.0) return x;
        if (x < -30.0) return std::exp(x);
        return std::log1p(std::exp(x));
    }

    Tensor make(size_t rows, size_t cols, std::vector<double> data, bool requires_grad) {
        Node n;
        n.rows = rows;
        n.cols = cols;
        n.data = std::move(data);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return Tensor{this, nodes_.size() - 1};
    }

    template <typename F, typename DF>
    Tensor unary(Tensor a, F f, DF df, const char*) {
        Node& na = nodes_[a.node];
        std::vector<double> out(na.data.size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = f(na.data[i]);
        Tensor t = make(na.rows, na.cols, std::move(out), na.requires_grad);
        if (nodes_[t.node].requires_grad) {
            size_t ia = a.node, io = t.node;
            nodes_[io].backward = [ia, io, df](Tape& tp) {
                auto& g = tp.nodes_[io].grad;
                auto& x = tp.nodes_[ia].data;
                auto& y = tp.nodes_[io].data;
                auto& ga = tp.nodes_[ia].grad;
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
            };
        }
        return t;
    }

    template <typename F>
    void accumulate(size_t node_idx, F contribution) {
        Node& n = nodes_[node_idx];
        if (!n.requires_grad) return;
        for (size_t i = 0; i < n.grad.size(); ++i) n.grad[i] += contribution(i);
    }

    void check_same_shape(Tensor a, Tensor b, const char* op) {
        Node& na = nodes_[a.node];
        Node& nb = nodes_[b.node];
        if (na.rows != nb.rows || na.cols != nb.cols)
            throw ShapeError(std::string(op) + ": shapes disagree");
    }

    std::vector<Node> nodes_;
    std::vector<std::pair<size_t, Parameter*>> bindings_;
};

inline size_t Tensor::rows() const { return tape->node(node).rows; }
inline size_t Tensor::cols() const { return tape->node(node).cols; }
inline const std::vector<double>& Tensor::data() const { return tape->node(node).data; }
inline const std::vector<double>& Tensor::grad() const { return tape->node(node).grad; }
inline double Tensor::operator()(size_t i, size_t j) const {
    return tape->node(node).data[i * cols() + j];
}
inline double Tensor::scalar() const {
    if (size() != 1) throw ShapeError("scalar(): tensor is not 1x1");
    return tape->node(node).data[0];
}

}  // namespace npsa
