#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "npsa/common.hpp"
#include "npsa/tensor.hpp"

namespace npsa {

// MLP(l, d_in, d_hidden, d_out): l linear layers; every layer except the
// last is followed by ReLU. l == 1 degenerates to a single linear map.
struct MlpSpec {
    size_t layers;
    size_t d_in;
    size_t d_hidden;
    size_t d_out;
};

inline std::vector<std::pair<size_t, size_t>> mlp_layer_dims(const MlpSpec& spec) {
    if (spec.layers < 1) throw ValidationError("MlpSpec: needs at least one layer");
    std::vector<std::pair<size_t, size_t>> dims;
    if (spec.layers == 1) {
        dims.emplace_back(spec.d_in, spec.d_out);
        return dims;
    }
    dims.emplace_back(spec.d_in, spec.d_hidden);
    for (size_t l = 0; l + 2 < spec.layers; ++l) dims.emplace_back(spec.d_hidden, spec.d_hidden);
    dims.emplace_back(spec.d_hidden, spec.d_out);
    return dims;
}

// Glorot-uniform weights, zero biases.
inline void init_linear(ParamStore& store, const std::string& name, size_t d_in, size_t d_out,
                        Rng& rng) {
    Parameter& w = store.create(name + ".w", d_in, d_out);
    double bound = std::sqrt(6.0 / static_cast<double>(d_in + d_out));
    for (double& v : w.value) v = rng.uniform(-bound, bound);
    store.create(name + ".b", 1, d_out);
}

inline void init_mlp(ParamStore& store, const std::string& prefix, const MlpSpec& spec,
                     Rng& rng) {
    auto dims = mlp_layer_dims(spec);
    for (size_t l = 0; l < dims.size(); ++l)
        init_linear(store, prefix + ".l" + std::to_string(l), dims[l].first, dims[l].second, rng);
}

inline Tensor linear_forward(Tape& tape, ParamStore& store, const std::string& name, Tensor x) {
    Tensor w = tape.param(store.at(name + ".w"));
    Tensor b = tape.param(store.at(name + ".b"));
    return tape.add_rowvec(tape.matmul(x, w), b);
}

inline Tensor mlp_forward(Tape& tape, ParamStore& store, const std::string& prefix,
                          const MlpSpec& spec, Tensor x) {
    if (x.cols() != spec.d_in) throw ShapeError("mlp_forward: input width != d_in");
    auto dims = mlp_layer_dims(spec);
    Tensor h = x;
    for (size_t l = 0; l < dims.size(); ++l) {
        h = linear_forward(tape, store, prefix + ".l" + std::to_string(l), h);
        if (l + 1 < dims.size()) h = tape.relu(h);
    }
    return h;
}

inline void init_layer_norm(ParamStore& store, const std::string& prefix, size_t width) {
    Parameter& gain = store.create(prefix + ".ln_gain", 1, width);
    std::fill(gain.value.begin(), gain.value.end(), 1.0);
    store.create(prefix + ".ln_bias", 1, width);
}

inline Tensor layer_norm_forward(Tape& tape, ParamStore& store, const std::string& prefix,
                                 Tensor x) {
    Tensor gain = tape.param(store.at(prefix + ".ln_gain"));
    Tensor bias = tape.param(store.at(prefix + ".ln_bias"));
    return tape.layer_norm_rows(x, gain, bias);
}

}  // namespace npsa
