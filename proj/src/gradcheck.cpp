// SPDX-License-Identifier: Apache-2.0
#include "mcevae/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace mcevae::gradcheck {

namespace {

std::vector<std::size_t> pick_entries(std::size_t n, const Options& opts, std::uint64_t salt) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (opts.max_entries == 0 || n <= opts.max_entries) return idx;
    std::mt19937_64 rng(opts.seed ^ (salt * 0x9e3779b97f4a7c15ull));
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(opts.max_entries);
    std::sort(idx.begin(), idx.end());
    return idx;
}

void accumulate(Report& r, std::size_t index, double analytic, double numeric, const Options& opts) {
    const double abs_err = std::abs(analytic - numeric);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), opts.floor});
    const double rel = abs_err / denom;
    r.max_abs_error = std::max(r.max_abs_error, abs_err);
    if (rel > r.max_rel_error || r.checked == 0) {
        r.max_rel_error = std::max(r.max_rel_error, rel);
        r.worst_index = index;
    }
    ++r.checked;
    r.passed = r.max_rel_error < opts.tolerance;
}

}  // namespace

Report grad_check(const ScalarFn& f, const Tensor& point, const Options& opts) {
    Tensor analytic;
    {
        graph::Tape tape;
        auto x = tape.input(point);
        auto y = f(tape, x);
        tape.backward(y);
        analytic = tape.grad(x);
    }
    auto eval = [&](const Tensor& p) {
        graph::Tape tape;
        return f(tape, tape.input(p)).value().item();
    };
    Report r;
    Tensor probe = point;
    for (std::size_t i : pick_entries(point.size(), opts, 0)) {
        const double x0 = probe[i];
        probe[i] = x0 + opts.step;
        const double fp = eval(probe);
        probe[i] = x0 - opts.step;
        const double fm = eval(probe);
        probe[i] = x0;
        accumulate(r, i, analytic[i], (fp - fm) / (2.0 * opts.step), opts);
    }
    return r;
}

std::vector<ParameterReport> grad_check_parameters(graph::ParameterStore& store, const LossFn& loss,
                                                   const Options& opts) {
    store.zero_grad();
    {
        graph::Tape tape;
        tape.backward(loss(tape), &store);
    }
    std::vector<Tensor> analytic;
    for (const auto& p : store.all()) analytic.push_back(p.grad);
    store.zero_grad();

    auto eval = [&] {
        graph::Tape tape;
        return loss(tape).value().item();
    };
    std::vector<ParameterReport> out;
    std::size_t k = 0;
    for (auto& p : store.all()) {
        const std::size_t slot = k++;
        if (!p.trainable) continue;
        ParameterReport pr{p.name, {}};
        for (std::size_t i : pick_entries(p.value.size(), opts, slot + 1)) {
            const double x0 = p.value[i];
            p.value[i] = x0 + opts.step;
            const double fp = eval();
            p.value[i] = x0 - opts.step;
            const double fm = eval();
            p.value[i] = x0;
            accumulate(pr.report, i, analytic[slot][i], (fp - fm) / (2.0 * opts.step), opts);
        }
        out.push_back(std::move(pr));
    }
    return out;
}

}  // namespace mcevae::gradcheck
