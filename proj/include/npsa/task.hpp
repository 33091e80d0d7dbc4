#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "npsa/common.hpp"

namespace npsa {

// One meta-learning episode. Targets include the context points: context
// rows are the first n_context rows of the target arrays.
struct Task {
    size_t d_x = 1, d_y = 1;
    size_t n_context = 0, n_target = 0;
    std::vector<double> x_context, y_context;  // [n_context x d_x], [n_context x d_y]
    std::vector<double> x_target, y_target;    // [n_target x d_x], [n_target x d_y]

    struct Meta {
        std::string kernel;  // provenance: kernel family or data source
        bool noisy = false;
        uint64_t seed = 0;
    } meta;

    void validate() const {
        if (n_context == 0) throw ShapeError("Task: context set is empty");
        if (n_target < n_context) throw ShapeError("Task: targets must include contexts");
        if (x_context.size() != n_context * d_x || y_context.size() != n_context * d_y ||
            x_target.size() != n_target * d_x || y_target.size() != n_target * d_y)
            throw ShapeError("Task: array lengths disagree with counts");
        for (size_t i = 0; i < n_context * d_x; ++i)
            if (x_context[i] != x_target[i]) throw ShapeError("Task: contexts must be a target prefix");
    }
};

}  // namespace npsa
