// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <cmath>

#include "mcevae/stn.hpp"

namespace mcevae::testing {

Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> d(lo, hi);
    for (double& v : t.storage()) v = d(rng);
    return t;
}

std::filesystem::path mnist_dir() { return MCEVAE_MNIST_DIR; }

std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("mcevae-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

model::ModelConfig tiny_config(lie::GroupKind kind) {
    model::ModelConfig cfg;
    cfg.kind = kind;
    cfg.image_size = 8;
    cfg.n_zc = 4;
    cfg.n_z = 2;
    cfg.encoder_channels = {3, 4, 4, 5};
    cfg.cluster_hidden = 6;
    cfg.variational_hidden = 6;
    cfg.transform_hidden = 5;
    cfg.decoder_hidden = 7;
    return cfg;
}

graph::Var FullLossProblem::loss(graph::Tape& tape) {
    const auto& cfg = model.config();
    auto xv = tape.constant(x);
    auto out = model.forward(tape, xv, eps, {model::Phase::Train, false});
    auto d = objective::invariance_divergence(mode, out, &branch, &x_gt);
    return objective::total_loss(out, xv, cfg, d).total;
}

FullLossProblem make_full_loss_problem(objective::TrainingMode mode, std::uint64_t seed) {
    FullLossProblem p{model::MceVae(tiny_config(), seed), {}, {}, {}, {}, mode};
    const auto& cfg = p.model.config();
    std::mt19937_64 rng(seed + 1);
    p.x = uniform({4, 1, 8, 8}, 0.0, 1.0, rng);
    p.x_gt = uniform({4, 1, 8, 8}, 0.0, 1.0, rng);
    p.eps = p.model.draw_noise(4, rng);
    std::vector<lie::AlgebraCoefficients> taus;
    for (int i = 0; i < 4; ++i) taus.push_back(lie::sample_transform(cfg.support, cfg.kind, rng));
    graph::Tape tape;
    auto out = p.model.forward(tape, tape.constant(stn::transform_image(p.x, taus, cfg.kind)), p.eps,
                               {model::Phase::Train, false});
    p.branch = {out.latents.cluster.mu.value(), out.latents.variational.mu.value(), out.x_tilde.value()};
    return p;
}

MonteCarlo mixture_kl_monte_carlo(std::span<const double> mu, std::span<const double> sigma, std::size_t samples,
                                  std::mt19937_64& rng) {
    const std::size_t n = mu.size();
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<double> z(n), lq(n), lp(n);
    auto logsumexp = [](const std::vector<double>& v) {
        double m = v[0];
        for (double x : v) m = std::max(m, x);
        double s = 0;
        for (double x : v) s += std::exp(x - m);
        return m + std::log(s);
    };
    double sum = 0, sum_sq = 0;
    for (std::size_t s = 0; s < samples; ++s) {
        const std::size_t k = pick(rng);
        for (std::size_t j = 0; j < n; ++j) z[j] = n01(rng);
        z[k] = mu[k] + sigma[k] * z[k];
        // Both mixtures share the standard-normal factor of every coordinate;
        // component j only reweights coordinate j against N(0, 1).
        for (std::size_t j = 0; j < n; ++j) {
            const double r = (z[j] - mu[j]) / sigma[j];
            lq[j] = -0.5 * r * r - std::log(sigma[j]) + 0.5 * z[j] * z[j];
            lp[j] = z[j] - 0.5;
        }
        const double d = logsumexp(lq) - logsumexp(lp);
        sum += d;
        sum_sq += d * d;
    }
    const double m = sum / samples;
    return {m, std::sqrt(std::max(0.0, sum_sq / samples - m * m) / samples)};
}

lie::Mat3 series_exp(const lie::AlgebraCoefficients& t, int terms) {
    const lie::Mat3 m{0, -t.omega, t.u, t.omega, 0, t.v, 0, 0, 0};
    lie::Mat3 sum{}, term{1, 0, 0, 0, 1, 0, 0, 0, 1};
    for (int k = 0; k < terms; ++k) {
        for (int i = 0; i < 9; ++i) sum[i] += term[i];
        lie::Mat3 next{};
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                for (int j = 0; j < 3; ++j) next[r * 3 + c] += term[r * 3 + j] * m[j * 3 + c];
        for (double& v : next) v /= (k + 1);
        term = next;
    }
    return sum;
}

std::vector<double> shift_oracle(std::span<const double> in, int n, int dx, int dy) {
    std::vector<double> out(static_cast<std::size_t>(n * n), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const int si = i - dy, sj = j - dx;
            if (si >= 0 && si < n && sj >= 0 && sj < n) out[i * n + j] = in[si * n + sj];
        }
    return out;
}

std::vector<double> rot90_oracle(std::span<const double> in, int n, int quarter_turns) {
    std::vector<double> cur(in.begin(), in.end());
    for (int q = 0; q < ((quarter_turns % 4) + 4) % 4; ++q) {
        std::vector<double> next(cur.size());
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) next[i * n + j] = cur[(n - 1 - j) * n + i];
        cur = next;
    }
    return cur;
}

gradcheck::Options full_loss_gradcheck_options() {
    gradcheck::Options opts;
    opts.step = 1e-5;
    opts.tolerance = 1e-4;
    // Conv biases feeding batchnorm have an exactly zero gradient; the floor
    // turns their check into |analytic - numeric| < 1e-8.
    opts.floor = 1e-4;
    return opts;
}

}  // namespace mcevae::testing
