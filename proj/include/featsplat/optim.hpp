// Copyright Contributors to the featsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace featsplat {

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;
};

/// Moments for one parameter tensor plus its step counter.
struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t step = 0;

    explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// Bias-corrected Adam update of `params` in place at (1-based) step `t`.
/// The moment spans must have the parameter's length.
void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> m, std::span<double> v,
                 std::int64_t t, const AdamHyper& hyper);

/// Advances `state.step` and applies one update to the whole tensor.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamHyper& hyper);

}  // namespace featsplat
