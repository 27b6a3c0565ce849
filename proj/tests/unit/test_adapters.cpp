#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "../support/checks.hpp"
#include "latta/adapters.hpp"

using namespace latta;
using latta::testing::random_tensor;
using latta::testing::ToyModel;

namespace {

double sample_variance(const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) {
        mean += x;
    }
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) {
        ss += (x - mean) * (x - mean);
    }
    return ss / static_cast<double>(v.size() - 1);
}

struct SmallNet {
    ModelSpec spec = make_mnist_cnn(4, {1, 8, 8});
    ParameterVector<double> theta0;
    RunningStats<double> stats;

    explicit SmallNet(std::uint64_t seed) {
        Xoshiro256ss rng(seed);
        theta0 = build_model<double>(spec, rng);
        for (std::size_t i = 0; i < theta0.size(); ++i) {
            theta0[i] += 0.05 * rng.uniform(-1.0, 1.0);
        }
        stats = RunningStats<double>::initial(spec);
    }

    std::vector<Tensor<double>> batches(std::size_t count, std::size_t size, std::uint64_t seed) const {
        Xoshiro256ss rng(seed);
        std::vector<Tensor<double>> out;
        for (std::size_t i = 0; i < count; ++i) {
            out.push_back(random_tensor({size, 1, 8, 8}, rng, 0.0, 1.0));
        }
        return out;
    }
};

}  // namespace

TEST(Noise, ZeroVarianceGivesZerosWithoutDrawing) {
    Xoshiro256ss rng(1);
    const auto before = rng;
    const auto z = gaussian_noise_sample<double>(7, 0.0, rng);
    EXPECT_EQ(z, std::vector<double>(7, 0.0));
    EXPECT_EQ(rng, before);
}

TEST(Noise, NegativeVarianceRejected) {
    Xoshiro256ss rng(1);
    EXPECT_THROW(gaussian_noise_sample<double>(3, -1e-9, rng), std::invalid_argument);
}

TEST(Noise, VarianceMatchesTwoEtaLambda) {
    for (auto [eta, lambda] : {std::pair{1e-4, 1e-3}, std::pair{1e-3, 1e-2}, std::pair{1e-2, 1e-4}}) {
        LattaConfig cfg;
        cfg.eta = eta;
        cfg.lambda_temp = lambda;
        Xoshiro256ss rng(2);
        const auto z = gaussian_noise_sample<double>(100000, cfg.noise_variance(), rng);
        EXPECT_NEAR(sample_variance(z) / (2 * eta * lambda), 1.0, 0.03);
    }
}

TEST(Noise, DoublingEtaDoublesVariance) {
    LattaConfig a, b;
    b.eta = 2 * a.eta;
    EXPECT_DOUBLE_EQ(b.noise_variance(), 2 * a.noise_variance());
    Xoshiro256ss r1(3), r2(3);
    const auto za = gaussian_noise_sample<double>(100000, a.noise_variance(), r1);
    const auto zb = gaussian_noise_sample<double>(100000, b.noise_variance(), r2);
    EXPECT_NEAR(sample_variance(zb) / sample_variance(za), 2.0, 1e-9);
}

TEST(LattaConfig, Validation) {
    LattaConfig c;
    EXPECT_NO_THROW(c.validate());
    c.eta = 0.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.alpha = 1.5;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.beta = -0.1;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.lambda_temp = -1.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    EXPECT_EQ(adapter_kind_from_name("tent"), AdapterKind::Tent);
    EXPECT_THROW(adapter_kind_from_name("sar"), std::invalid_argument);
}

TEST(ToyModel, GradientOracleAgreesWithAutodiffEntropy) {
    ToyModel model;
    Xoshiro256ss rng(4);
    for (int t = 0; t < 20; ++t) {
        const auto theta = random_tensor({3}, rng, -2, 2).values();
        const auto x = random_tensor({5, 3}, rng);
        const auto mask = model.subset_mask(ParamSubset::All);
        const auto eval = model.entropy(model.params(theta), x, BnMode::Adapt, mask);
        const auto oracle = latta::testing::toy_gradient_oracle(theta, x.values());
        for (std::size_t c = 0; c < 3; ++c) {
            EXPECT_NEAR(eval.gradient[c], oracle[c], 1e-12);
        }
    }
}

TEST(LattaStep, MatchesScalarRecurrence) {
    Xoshiro256ss rng(5);
    for (int t = 0; t < 25; ++t) {
        EXPECT_LE(latta::testing::latta_recurrence_error(rng), 1e-9);
    }
}

TEST(LattaStep, EmaUpdatedBeforeBlend) {
    // One step from theta0 = 1 with a zero gradient (x = 0) and noise e:
    // star = 1 + e; ema = b + (1 - b)(1 + e); theta = (1 - a) star + a ema.
    ToyModel model;
    const auto theta0 = model.params({1.0, 1.0, 1.0});
    auto state = AdapterState<double>::initial(theta0, Xoshiro256ss(0));
    LattaConfig cfg;
    cfg.alpha = 0.5;
    cfg.beta = 0.5;
    const std::vector<double> noise{0.4, 0.0, -0.2};
    latta_step_with_noise<double>(state, model, theta0, Tensor<double>({2, 3}, 0.0), cfg, noise);
    for (std::size_t c = 0; c < 3; ++c) {
        const double star = 1.0 + noise[c];
        const double ema = 0.5 * 1.0 + 0.5 * star;
        EXPECT_DOUBLE_EQ(state.theta_ema[c], ema);
        EXPECT_DOUBLE_EQ(state.theta[c], 0.5 * star + 0.5 * ema);
    }
}

TEST(LattaStep, FullAnchorWithFrozenEmaNeverMoves) {
    ToyModel model;
    const auto theta0 = model.params({0.3, -0.2, 0.9});
    auto state = AdapterState<double>::initial(theta0, Xoshiro256ss(6));
    LattaConfig cfg;
    cfg.eta = 0.5;
    cfg.lambda_temp = 0.1;
    cfg.alpha = 1.0;
    cfg.beta = 1.0;
    Xoshiro256ss rng(7);
    for (int t = 0; t < 10; ++t) {
        const auto out = latta_step<double>(state, model, theta0, random_tensor({4, 3}, rng), cfg);
        EXPECT_EQ(state.theta, theta0);
        EXPECT_GT(out.noise_norm, 0.0);
    }
}

TEST(LattaStep, FullAnchorFollowsEma) {
    ToyModel model;
    const auto theta0 = model.params({0.3, -0.2, 0.9});
    auto state = AdapterState<double>::initial(theta0, Xoshiro256ss(8));
    LattaConfig cfg;
    cfg.eta = 0.1;
    cfg.alpha = 1.0;
    Xoshiro256ss rng(9);
    for (int t = 0; t < 5; ++t) {
        latta_step<double>(state, model, theta0, random_tensor({4, 3}, rng), cfg);
        EXPECT_EQ(state.theta, state.theta_ema);
    }
}

TEST(LattaStep, AnchorContractsDrift) {
    // With a fixed gradient direction the anchored iterate stays closer to theta0.
    ToyModel model;
    const auto theta0 = model.params({0.5, 0.5, 0.5});
    Xoshiro256ss data_rng(10);
    std::vector<Tensor<double>> batches;
    for (int t = 0; t < 30; ++t) {
        batches.push_back(random_tensor({8, 3}, data_rng, 0.5, 1.5));
    }
    auto drift_after = [&](double alpha) {
        auto state = AdapterState<double>::initial(theta0, Xoshiro256ss(11));
        LattaConfig cfg;
        cfg.eta = 0.5;
        cfg.lambda_temp = 0.0;
        cfg.alpha = alpha;
        double drift = 0.0;
        for (const auto& b : batches) {
            drift = latta_step<double>(state, model, theta0, b, cfg).drift;
        }
        return drift;
    };
    EXPECT_LT(drift_after(0.9), drift_after(0.0));
}

TEST(LattaStep, NoiseOnlyTouchesMaskedCoordinates) {
    SmallNet net(12);
    NetworkModel<double> model(net.spec, net.stats);
    auto state = AdapterState<double>::initial(net.theta0, Xoshiro256ss(13));
    LattaConfig cfg;
    cfg.lambda_temp = 1.0;
    cfg.subset = ParamSubset::BnAffineOnly;
    const auto mask = model.subset_mask(ParamSubset::BnAffineOnly);
    latta_step<double>(state, model, net.theta0, net.batches(1, 4, 14)[0], cfg);
    std::size_t moved = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] == 0) {
            ASSERT_EQ(state.theta[i], net.theta0[i]);
        } else {
            moved += state.theta[i] != net.theta0[i];
        }
    }
    EXPECT_GT(moved, 0u);
}

TEST(Reduction, LattaWithoutNoiseOrAnchorIsTent) {
    SmallNet net(15);
    NetworkModel<double> model(net.spec, net.stats);
    EXPECT_EQ(latta::testing::reduction_mismatches(model, net.theta0, net.batches(6, 5, 16), 0.1), 0u);
    NetworkModel<float> fmodel(net.spec, RunningStats<float>::initial(net.spec));
    std::vector<Tensor<float>> fb;
    for (const auto& b : net.batches(6, 5, 17)) {
        fb.push_back(b.cast<float>());
    }
    EXPECT_EQ(latta::testing::reduction_mismatches(fmodel, net.theta0.cast<float>(), fb, 0.1), 0u);
}

TEST(Tent, ZeroStepKeepsParameters) {
    SmallNet net(18);
    NetworkModel<double> model(net.spec, net.stats);
    auto state = AdapterState<double>::initial(net.theta0, Xoshiro256ss(0));
    TentConfig cfg;
    cfg.eta = 0.0;
    const auto out = tent_step<double>(state, model, net.theta0, net.batches(1, 4, 19)[0], cfg);
    EXPECT_EQ(state.theta, net.theta0);
    EXPECT_EQ(out.drift, 0.0);
}

TEST(Tent, OnlyBatchnormAffineMoves) {
    SmallNet net(20);
    NetworkModel<double> model(net.spec, net.stats);
    auto state = AdapterState<double>::initial(net.theta0, Xoshiro256ss(0));
    tent_step<double>(state, model, net.theta0, net.batches(1, 4, 21)[0], TentConfig{});
    const auto mask = model.subset_mask(ParamSubset::BnAffineOnly);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] == 0) {
            ASSERT_EQ(state.theta[i], net.theta0[i]);
        }
    }
    EXPECT_NE(state.theta, net.theta0);
}

TEST(Tent, ModelWithoutBatchnormIsUnchanged) {
    const auto spec = make_mlp({1, 4, 4}, {8}, 3);
    Xoshiro256ss rng(22);
    const auto theta0 = build_model<double>(spec, rng);
    NetworkModel<double> model(spec, RunningStats<double>::initial(spec));
    auto state = AdapterState<double>::initial(theta0, Xoshiro256ss(0));
    tent_step<double>(state, model, theta0, random_tensor({4, 1, 4, 4}, rng, 0, 1), TentConfig{});
    EXPECT_EQ(state.theta, theta0);
}

TEST(Source, DeterministicAndStateless) {
    SmallNet net(23);
    NetworkModel<double> model(net.spec, net.stats);
    AdapterConfig cfg;
    cfg.kind = AdapterKind::Source;
    OnlineAdapter<double> adapter(model, net.theta0, cfg, Xoshiro256ss(0));
    const auto batches = net.batches(3, 4, 24);
    const auto first = adapter.step(batches[0]);
    adapter.step(batches[1]);
    const auto again = adapter.step(batches[0]);
    EXPECT_EQ(first.predictions, again.predictions);
    EXPECT_EQ(first.probabilities, again.probabilities);
    EXPECT_EQ(again.drift, 0.0);
    EXPECT_EQ(adapter.state().theta, net.theta0);
}

TEST(Source, UniformLogitsPredictClassZero) {
    ToyModel model;
    const auto out = source_predict<double>(model, model.params({0.0, 0.0, 0.0}), Tensor<double>({4, 3}, 1.0));
    EXPECT_EQ(out.predictions, std::vector<std::size_t>(4, 0));
    EXPECT_NEAR(out.entropy, std::log(3.0), 1e-12);
}

TEST(NonFinite, UpdateSkippedAndFlagged) {
    ToyModel model;
    const auto theta0 = model.params({0.1, 0.2, 0.3});
    Tensor<double> bad({2, 3}, 1.0);
    bad[4] = std::numeric_limits<double>::quiet_NaN();
    auto s1 = AdapterState<double>::initial(theta0, Xoshiro256ss(25));
    const auto rng_before = s1.rng;
    const auto lo = latta_step<double>(s1, model, theta0, bad, LattaConfig{});
    EXPECT_TRUE(lo.skipped);
    EXPECT_EQ(s1.theta, theta0);
    EXPECT_EQ(s1.theta_ema, theta0);
    EXPECT_EQ(s1.rng, rng_before);
    EXPECT_EQ(s1.step, 1u);
    EXPECT_EQ(lo.predictions.size(), 2u);

    auto s2 = AdapterState<double>::initial(theta0, Xoshiro256ss(25));
    EXPECT_TRUE(tent_step<double>(s2, model, theta0, bad, TentConfig{}).skipped);
    EXPECT_EQ(s2.theta, theta0);

    // The stream carries on normally afterwards.
    EXPECT_FALSE(latta_step<double>(s1, model, theta0, Tensor<double>({2, 3}, 0.5), LattaConfig{}).skipped);
}

TEST(Replay, SameSeedSameTrajectory) {
    SmallNet net(26);
    NetworkModel<double> model(net.spec, net.stats);
    AdapterConfig cfg;
    cfg.latta.eta = 1e-2;
    OnlineAdapter<double> a(model, net.theta0, cfg, Xoshiro256ss(27));
    OnlineAdapter<double> b(model, net.theta0, cfg, Xoshiro256ss(27));
    OnlineAdapter<double> c(model, net.theta0, cfg, Xoshiro256ss(28));
    for (const auto& x : net.batches(4, 4, 29)) {
        const auto oa = a.step(x);
        const auto ob = b.step(x);
        c.step(x);
        EXPECT_EQ(oa.probabilities, ob.probabilities);
        EXPECT_EQ(oa.noise_norm, ob.noise_norm);
    }
    EXPECT_EQ(a.state().theta, b.state().theta);
    EXPECT_NE(a.state().theta, c.state().theta);
}

TEST(LattaStep, EmaUnrollsToWeightedSum) {
    // ema_T = beta^T theta0 + (1 - beta) sum_k beta^(T-k) star_k, with star_k rebuilt
    // from the closed-form toy gradient.
    ToyModel model;
    Xoshiro256ss rng(30);
    const std::vector<double> start{0.4, -0.7, 1.1};
    const auto theta0 = model.params(start);
    auto state = AdapterState<double>::initial(theta0, Xoshiro256ss(0));
    LattaConfig cfg;
    cfg.eta = 0.3;
    cfg.alpha = 0.6;
    cfg.beta = 0.8;
    std::vector<std::vector<double>> stars;
    const int steps = 12;
    for (int t = 0; t < steps; ++t) {
        const auto x = random_tensor({4, 3}, rng);
        const std::vector<double> eps{0.01 * rng.uniform(-1, 1), 0.01 * rng.uniform(-1, 1), 0.01 * rng.uniform(-1, 1)};
        const std::vector<double> before(state.theta.values().begin(), state.theta.values().end());
        const auto g = latta::testing::toy_gradient_oracle(before, x.values());
        std::vector<double> star(3);
        for (std::size_t c = 0; c < 3; ++c) {
            star[c] = before[c] - cfg.eta * g[c] + eps[c];
        }
        stars.push_back(star);
        latta_step_with_noise<double>(state, model, theta0, x, cfg, eps);
    }
    for (std::size_t c = 0; c < 3; ++c) {
        double unrolled = std::pow(cfg.beta, steps) * start[c];
        for (int k = 1; k <= steps; ++k) {
            unrolled += (1 - cfg.beta) * std::pow(cfg.beta, steps - k) * stars[k - 1][c];
        }
        EXPECT_NEAR(state.theta_ema[c], unrolled, 1e-9);
    }
}

TEST(LattaStep, BlendIsAffineContraction) {
    // ||theta_{t+1} - ema|| = (1 - alpha) ||star - ema|| with the new ema and no noise.
    ToyModel model;
    Xoshiro256ss rng(31);
    for (double alpha : {0.0, 0.3, 0.9}) {
        const auto theta0 = model.params({0.2, 0.5, -0.3});
        auto state = AdapterState<double>::initial(theta0, Xoshiro256ss(0));
        LattaConfig cfg;
        cfg.eta = 0.5;
        cfg.lambda_temp = 0.0;
        cfg.alpha = alpha;
        for (int t = 0; t < 5; ++t) {
            const auto x = random_tensor({4, 3}, rng);
            const std::vector<double> before(state.theta.values().begin(), state.theta.values().end());
            const auto g = latta::testing::toy_gradient_oracle(before, x.values());
            latta_step<double>(state, model, theta0, x, cfg);
            double lhs = 0.0, rhs = 0.0;
            for (std::size_t c = 0; c < 3; ++c) {
                const double star = before[c] - cfg.eta * g[c];
                lhs += std::pow(state.theta[c] - state.theta_ema[c], 2);
                rhs += std::pow(star - state.theta_ema[c], 2);
            }
            EXPECT_NEAR(std::sqrt(lhs), (1 - alpha) * std::sqrt(rhs), 1e-12);
        }
    }
}
