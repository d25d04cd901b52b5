// SPDX-License-Identifier: Apache-2.0
#include "mcevae/optim.hpp"

#include <cmath>

namespace mcevae::optim {

void adam_step(graph::ParameterStore& store, AdamState& state) {
    if (!store.has_gradients()) {
        throw Error("adam_step: no gradients populated since the last step");
    }
    if (state.m.empty()) {
        for (const auto& p : store.all()) {
            if (!p.trainable) continue;
            state.m.emplace_back(p.value.shape());
            state.v.emplace_back(p.value.shape());
        }
    }
    if (state.m.size() != store.trainable_count()) {
        throw Error("adam_step: optimizer state does not match the parameter store");
    }
    const auto& c = state.config;
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    std::size_t k = 0;
    for (auto& p : store.all()) {
        if (!p.trainable) continue;
        auto& m = state.m[k].storage();
        auto& v = state.v[k].storage();
        if (m.size() != p.value.size()) throw Error("adam_step: moment shape mismatch for '" + p.name + "'");
        auto& w = p.value.storage();
        const auto& g = p.grad.storage();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            w[i] -= c.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c.eps);
        }
        ++k;
    }
    store.zero_grad();
}

}  // namespace mcevae::optim
