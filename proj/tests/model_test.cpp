// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "mcevae/data.hpp"
#include "mcevae/ops.hpp"
#include "mcevae/optim.hpp"
#include "mcevae/stn.hpp"
#include "support.hpp"

using namespace mcevae;
using graph::Tape;
using graph::Var;
using lie::GroupKind;
using model::ForwardOptions;
using model::MceVae;
using model::ModelConfig;
using model::Phase;
using mcevae::testing::tiny_config;
using mcevae::testing::uniform;

namespace {

const ForwardOptions kEval{Phase::Eval, false};

Tensor rows(const Tensor& t, std::size_t begin, std::size_t end) {
    std::vector<std::size_t> idx;
    for (std::size_t i = begin; i < end; ++i) idx.push_back(i);
    return data::gather(t, idx);
}

}  // namespace

TEST(ModelConfigTest, DefaultsAndDerivedSizes) {
    ModelConfig c;
    EXPECT_EQ(c.n_zc, 10u);
    EXPECT_EQ(c.n_z, 3u);
    EXPECT_EQ(c.tau_dim(), 3u);
    EXPECT_EQ(c.noise_dim(), 16u);
    EXPECT_EQ(c.zaug_dim(), 1024u);
    EXPECT_EQ(c.cluster_hidden, 512u);
    EXPECT_EQ(c.variational_hidden, 512u);
    EXPECT_EQ(c.transform_hidden, 32u);
    EXPECT_EQ(c.decoder_hidden, 300u);
    EXPECT_EQ(c.decoder_depth, 2u);
    EXPECT_EQ(c.alpha, 1.0);
    EXPECT_EQ(c.beta, 1.0);
    c.kind = GroupKind::SO2;
    EXPECT_EQ(c.tau_dim(), 1u);
    c.equivariance = false;
    EXPECT_EQ(c.tau_dim(), 0u);
}

TEST(ModelConfigTest, Validation) {
    ModelConfig c;
    c.n_zc = 0;
    EXPECT_THROW(c.validate(), Error);
    c = {};
    c.beta = 0;
    EXPECT_THROW(c.validate(), Error);
    c = {};
    c.encoder_channels = {};
    EXPECT_THROW(c.validate(), Error);
    c = {};
    c.alpha = -1;
    EXPECT_THROW(c.validate(), Error);
}

TEST(ModelConfigTest, KeyValueRoundTrip) {
    ModelConfig c = tiny_config(GroupKind::SO2);
    c.beta = 2.0;
    c.alpha = 0.1;
    c.clustering = model::ClusteringMode::Single;
    c.equivariance = false;
    const auto back = ModelConfig::from_key_values(c.to_key_values());
    EXPECT_EQ(back.to_key_values(), c.to_key_values());
    EXPECT_EQ(back.alpha, 0.1);
    auto kv = c.to_key_values();
    kv["model.n_zc"] = "ten";
    EXPECT_THROW(ModelConfig::from_key_values(kv), Error);
}

TEST(Forward, DefaultShapes) {
    MceVae m(ModelConfig{}, 1);
    std::mt19937_64 rng(1);
    Tape tape;
    auto out = m.forward(tape, tape.constant(uniform({3, 1, 28, 28}, 0, 1, rng)), m.draw_noise(3, rng), {});
    EXPECT_EQ(out.latents.cluster.mu.shape(), (Shape{3, 10}));
    EXPECT_EQ(out.latents.cluster.log_sigma.shape(), (Shape{3, 10}));
    EXPECT_EQ(out.latents.variational.mu.shape(), (Shape{3, 3}));
    ASSERT_TRUE(out.latents.transform);
    EXPECT_EQ(out.latents.transform->mu.shape(), (Shape{3, 3}));
    EXPECT_EQ(out.latents.z_c.shape(), (Shape{3, 10}));
    EXPECT_EQ(out.x_tilde.shape(), (Shape{3, 1, 28, 28}));
    EXPECT_EQ(out.x_hat.shape(), (Shape{3, 1, 28, 28}));
    for (double v : out.x_tilde.value().storage()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
    }
    EXPECT_EQ(m.augmented_encode(tape, tape.constant(Tensor({2, 1, 28, 28})), kEval).shape(), (Shape{2, 1024}));
}

TEST(Forward, So2TransformHeadIsOneDimensional) {
    MceVae m(tiny_config(GroupKind::SO2), 2);
    std::mt19937_64 rng(2);
    Tape tape;
    auto out = m.forward(tape, tape.constant(uniform({2, 1, 8, 8}, 0, 1, rng)), m.draw_noise(2, rng), {});
    EXPECT_EQ(out.latents.transform->mu.shape(), (Shape{2, 1}));
    EXPECT_EQ(out.latents.tau.shape(), (Shape{2, 1}));
}

TEST(Forward, SingleClusteringKeepsShapes) {
    auto cfg = tiny_config();
    cfg.clustering = model::ClusteringMode::Single;
    MceVae m(cfg, 3);
    std::mt19937_64 rng(3);
    Tape tape;
    auto out = m.forward(tape, tape.constant(uniform({2, 1, 8, 8}, 0, 1, rng)), m.draw_noise(2, rng), {});
    EXPECT_EQ(out.latents.cluster.mu.shape(), (Shape{2, 4}));
}

TEST(Forward, InputShapeErrors) {
    MceVae m(tiny_config(), 4);
    Tape tape;
    EXPECT_THROW(m.forward(tape, tape.constant(Tensor({2, 1, 9, 9})), Tensor({2, 9}), {}), ShapeError);
    EXPECT_THROW(m.forward(tape, tape.constant(Tensor({2, 1, 8, 8})), Tensor({3, 9}), {}), ShapeError);
    EXPECT_THROW(m.augmented_encode(tape, tape.constant(Tensor({2, 2, 8, 8})), {}), ShapeError);
}

TEST(Forward, EvalIsDeterministicAndBatchIndependent) {
    MceVae m(ModelConfig{}, 5);
    std::mt19937_64 rng(5);
    Tensor x = uniform({4, 1, 28, 28}, 0, 1, rng);
    // Rows 0 and 2 identical.
    std::copy_n(x.storage().begin(), 784, x.storage().begin() + 2 * 784);
    Tensor eps = m.draw_noise(4, rng);
    Tape t1, t2;
    auto a = m.forward(t1, t1.constant(x), eps, kEval);
    auto b = m.forward(t2, t2.constant(x), eps, kEval);
    EXPECT_EQ(a.x_hat.value(), b.x_hat.value());
    EXPECT_EQ(a.latents.cluster.mu.value(), b.latents.cluster.mu.value());

    Tape t3;
    auto za = m.augmented_encode(t3, t3.constant(x), kEval).value();
    for (std::size_t j = 0; j < 1024; ++j) EXPECT_EQ(za[j], za[2 * 1024 + j]);
    for (std::size_t i = 0; i < 4; ++i) {
        Tape t4;
        auto zi = m.augmented_encode(t4, t4.constant(rows(x, i, i + 1)), kEval).value();
        for (std::size_t j = 0; j < 1024; ++j) ASSERT_NEAR(zi[j], za[i * 1024 + j], 1e-12);
    }
}

TEST(Forward, ZeroInputIsFinite) {
    MceVae m(ModelConfig{}, 6);
    for (auto phase : {Phase::Train, Phase::Eval}) {
        Tape tape;
        auto z = m.augmented_encode(tape, tape.constant(Tensor({2, 1, 28, 28})), {phase, false}).value();
        for (double v : z.storage()) {
            EXPECT_TRUE(std::isfinite(v));
            EXPECT_GE(v, 0.0);
        }
    }
}

TEST(Extract, RepeatableForFixedInput) {
    MceVae m(tiny_config(), 7);
    std::mt19937_64 rng(7);
    Tensor z = uniform({3, m.config().zaug_dim()}, 0, 2, rng);
    Tape t1, t2;
    auto a = m.extract(t1, t1.constant(z));
    auto b = m.extract(t2, t2.constant(z));
    EXPECT_EQ(a.cluster.mu.value(), b.cluster.mu.value());
    EXPECT_EQ(a.variational.log_sigma.value(), b.variational.log_sigma.value());
    EXPECT_EQ(a.transform->mu.value(), b.transform->mu.value());
}

TEST(Extract, LogSigmaIsClamped) {
    MceVae m(tiny_config(), 8);
    std::mt19937_64 rng(8);
    Tape tape;
    auto e = m.extract(tape, tape.constant(uniform({64, m.config().zaug_dim()}, -1e4, 1e4, rng)));
    for (const auto* p : {&e.cluster, &e.variational, &*e.transform})
        for (double v : p->log_sigma.value().storage()) {
            EXPECT_GE(v, model::kLogSigmaMin);
            EXPECT_LE(v, model::kLogSigmaMax);
        }
}

TEST(Reparameterize, Cases) {
    Tape tape;
    auto mu = tape.constant(Tensor({1, 3}, {0.5, -1.0, 2.0}));
    auto ls = tape.constant(Tensor({1, 3}, {0.0, 0.3, -2.0}));
    const Tensor at_mean = model::reparameterize(mu, ls, tape.constant(Tensor({1, 3}))).value();
    EXPECT_EQ(at_mean, mu.value());
    const Tensor shifted =
        model::reparameterize(mu, tape.constant(Tensor({1, 3})), tape.constant(Tensor({1, 3}, {1, 1, 1}))).value();
    EXPECT_EQ(shifted.storage(), (std::vector<double>{1.5, 0.0, 3.0}));
}

TEST(Reparameterize, GradientReachesMuAndLogSigmaOnly) {
    Tape tape;
    auto mu = tape.input(Tensor({2}, {0.1, 0.2}));
    auto ls = tape.input(Tensor({2}, {0.3, -0.4}));
    auto eps = tape.constant(Tensor({2}, {0.7, -1.1}));
    tape.backward(ops::sum(model::reparameterize(mu, ls, eps)));
    EXPECT_EQ(tape.grad(mu).storage(), (std::vector<double>{1, 1}));
    EXPECT_NEAR(tape.grad(ls)[0], 0.7 * std::exp(0.3), 1e-15);
    EXPECT_NEAR(tape.grad(ls)[1], -1.1 * std::exp(-0.4), 1e-15);
}

TEST(Reparameterize, SampleMeanMatchesMu) {
    const std::size_t n = 100000;
    const double mu = 0.8, log_sigma = std::log(1.7);
    MceVae m(tiny_config(), 9);
    std::mt19937_64 rng(9);
    Tensor eps = m.draw_noise(n / m.config().noise_dim() + 1, rng);
    Tape tape;
    Tensor e({n}, std::vector<double>(eps.storage().begin(), eps.storage().begin() + n));
    auto s = model::reparameterize(tape.constant(Tensor({n}, std::vector<double>(n, mu))),
                                   tape.constant(Tensor({n}, std::vector<double>(n, log_sigma))), tape.constant(e));
    double mean = 0;
    for (double v : s.value().storage()) mean += v / n;
    EXPECT_LT(std::abs(mean - mu), 3 * 1.7 / std::sqrt(double(n)));
}

TEST(Decoder, CanonicalReconstructionIgnoresTau) {
    MceVae m(tiny_config(), 10);
    std::mt19937_64 rng(10);
    Tensor x = uniform({3, 1, 8, 8}, 0, 1, rng);
    Tensor e1 = m.draw_noise(3, rng), e2 = e1;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t k = 6; k < 9; ++k) e2[i * 9 + k] += 1.5;
    Tape t1, t2;
    auto a = m.forward(t1, t1.constant(x), e1, kEval);
    auto b = m.forward(t2, t2.constant(x), e2, kEval);
    EXPECT_EQ(a.x_tilde.value(), b.x_tilde.value());
    EXPECT_NE(a.x_hat.value(), b.x_hat.value());
}

TEST(Decoder, TauGradientOfCanonicalIsZero) {
    MceVae m(tiny_config(), 11);
    std::mt19937_64 rng(11);
    Tape tape;
    auto x = tape.input(uniform({2, 1, 8, 8}, 0, 1, rng));
    auto out = m.forward(tape, x, m.draw_noise(2, rng), {});
    tape.backward(ops::sum(out.x_tilde));
    const Tensor g_tau = tape.grad(out.latents.tau), g_mu = tape.grad(out.latents.transform->mu);
    for (double g : g_tau.storage()) EXPECT_EQ(g, 0.0);
    for (double g : g_mu.storage()) EXPECT_EQ(g, 0.0);
    for (const auto& p : m.params().all())
        if (p.name.starts_with("transform.")) {
            for (double g : p.grad.storage()) EXPECT_EQ(g, 0.0) << p.name;
        }
}

TEST(Decoder, BceGradientMatchesFiniteDifferences) {
    MceVae m(tiny_config(), 12);
    std::mt19937_64 rng(12);
    Tensor zc = uniform({3, 4}, -1, 1, rng), z = uniform({3, 2}, -1, 1, rng), target = uniform({3, 1, 8, 8}, 0, 1, rng);
    auto reports = gradcheck::grad_check_parameters(
        m.params(),
        [&](Tape& t) {
            return objective::bce_loglik(m.decode_canonical(t, t.constant(zc), t.constant(z)), t.constant(target));
        },
        mcevae::testing::full_loss_gradcheck_options());
    std::size_t decoder_params = 0;
    for (const auto& r : reports) {
        EXPECT_TRUE(r.report.passed) << r.name << " " << r.report.max_rel_error;
        decoder_params += r.name.starts_with("decoder.");
    }
    EXPECT_EQ(decoder_params, 10u);
}

TEST(Reconstructor, EquivarianceOffPassesCanonicalThrough) {
    auto cfg = tiny_config();
    cfg.equivariance = false;
    MceVae m(cfg, 13);
    std::mt19937_64 rng(13);
    Tape tape;
    auto out = m.forward(tape, tape.constant(uniform({2, 1, 8, 8}, 0, 1, rng)), m.draw_noise(2, rng), {});
    EXPECT_FALSE(out.latents.transform);
    EXPECT_EQ(out.x_hat.value(), out.x_tilde.value());
    EXPECT_FALSE(m.params().contains("transform.out.weight"));
}

TEST(Reconstructor, ComposesWithStnTransform) {
    for (auto kind : {GroupKind::SE2, GroupKind::SO2}) {
        MceVae m(tiny_config(kind), 14);
        const auto& cfg = m.config();
        std::mt19937_64 rng(14);
        Tensor img = uniform({3, 1, 8, 8}, 0, 1, rng);
        const std::size_t d = lie::coefficient_dim(kind);
        Tensor tau = uniform({3, d}, -1, 1, rng);
        std::vector<lie::AlgebraCoefficients> coeffs;
        for (std::size_t i = 0; i < 3; ++i) {
            lie::AlgebraCoefficients c{tau[i * d] * cfg.support.omega_max, 0, 0};
            if (d == 3) {
                c.u = tau[i * d + 1] * cfg.support.t_max;
                c.v = tau[i * d + 2] * cfg.support.t_max;
            }
            coeffs.push_back(c);
        }
        Tape tape;
        auto got = m.reconstruct(tape.constant(img), tape.constant(tau)).value();
        auto want = stn::transform_image(img, coeffs, kind);
        for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-14);
    }
}

TEST(Parameters, InitialisationPolicy) {
    MceVae m(ModelConfig{}, 15);
    const auto& w = m.params().at("cluster.hidden1.weight").value;
    const double bound = std::sqrt(6.0 / 1024.0);
    for (double v : w.storage()) EXPECT_LE(std::abs(v), bound);
    for (double v : m.params().at("decoder.out.bias").value.storage()) EXPECT_EQ(v, 0.0);
    MceVae again(ModelConfig{}, 15);
    EXPECT_EQ(again.params().at("encoder.2.conv.weight").value, m.params().at("encoder.2.conv.weight").value);
}

// Ten unsupervised steps on MNIST at the default architecture; every
// trainable tensor must have seen a nonzero gradient.
TEST(Parameters, NoDeadSubnetworksAfterTenSteps) {
    auto raw = data::take(data::load_idx(mcevae::testing::mnist_dir() / "images-idx3-ubyte",
                                         mcevae::testing::mnist_dir() / "labels-idx1-ubyte"),
                          320);
    auto aug = data::augment(raw, GroupKind::SE2, {}, 1);
    MceVae m(ModelConfig{}, 16);
    const auto& cfg = m.config();
    optim::AdamState adam;
    std::mt19937_64 rng(16);
    std::map<std::string, bool> touched;
    for (std::size_t step = 0; step < 10; ++step) {
        Tensor x = rows(aug.x, step * 32, step * 32 + 32);
        Tensor eps = m.draw_noise(32, rng);
        std::vector<lie::AlgebraCoefficients> taus;
        for (int i = 0; i < 32; ++i) taus.push_back(lie::sample_transform(cfg.support, cfg.kind, rng));
        objective::TransformedBranch branch;
        {
            Tape t;
            auto o = m.forward(t, t.constant(stn::transform_image(x, taus, cfg.kind)), eps, {Phase::Train, false});
            branch = {o.latents.cluster.mu.value(), o.latents.variational.mu.value(), o.x_tilde.value()};
        }
        Tape tape;
        auto xv = tape.constant(x);
        auto out = m.forward(tape, xv, eps, {});
        auto d = objective::invariance_divergence(objective::TrainingMode::Unsupervised, out, &branch, nullptr);
        tape.backward(objective::total_loss(out, xv, cfg, d).total, &m.params());
        for (const auto& p : m.params().all()) {
            if (!p.trainable) continue;
            bool nz = false;
            for (double g : p.grad.storage()) nz = nz || g != 0.0;
            touched[p.name] = touched[p.name] || nz;
        }
        optim::adam_step(m.params(), adam);
    }
    EXPECT_EQ(touched.size(), m.params().trainable_count());
    for (const auto& [name, nz] : touched) EXPECT_TRUE(nz) << name;
}
