// Copyright Contributors to the featsplat project
// SPDX-License-Identifier: Apache-2.0

#include "featsplat/optim.hpp"

#include "featsplat/common.hpp"

#include <cmath>

namespace featsplat {

void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> m, std::span<double> v,
                 std::int64_t t, const AdamHyper& hyper) {
    if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size())
        throw InvalidInput("adam: parameter, gradient and moment sizes differ");
    if (t < 1) throw InvalidInput("adam: step counter must start at 1");
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * grads[i];
        v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * grads[i] * grads[i];
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        params[i] -= hyper.lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
    }
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamHyper& hyper) {
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw InvalidInput("adam: state shape does not match parameters");
    ++state.step;
    adam_update(params, grads, state.m, state.v, state.step, hyper);
}

}  // namespace featsplat
