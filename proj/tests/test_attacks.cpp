#include <gtest/gtest.h>

#include <cmath>

#include "malimg/attacks.hpp"
#include "malimg/eval.hpp"
#include "malimg/rng.hpp"
#include "oracles.hpp"

using namespace malimg;

namespace {

PixelTensor random_box_tensor(std::uint64_t seed) {
    Rng rng(seed);
    PixelTensor t(64, 64);
    for (auto& v : t.values) v = rng.uniform01();
    return t;
}

// Two-block toy: raising block 0 / block 1 lowers the malware margin with
// weights 3 and 2; everything else is inert. Initial margin is +1.5, so the
// continuous optimum raises the two blocks proportionally to the weights.
struct TwoBlockToy {
    CnnModel model;
    PixelTensor x0;
    double w0 = 3.0, w1 = 2.0, margin0 = 1.5;
    double start = 0.25;

    TwoBlockToy() {
        std::array<std::vector<double>, 2> wts;
        wts[0].assign(256, 0.0);  // benign row
        wts[1].assign(256, 0.0);  // malware row
        wts[0][0] = w0;           // raising block 0 boosts benign
        wts[0][1] = w1;           // raising block 1 boosts benign
        // margin(x) = Z_m - Z_b = -w0*B0 - w1*B1 + bias
        const double bias = margin0 + (w0 + w1) * start;
        model = oracles::make_block_linear_cnn(wts, {0.0, bias});
        x0 = oracles::block_constant_tensor(std::vector<double>(256, start));
    }

    double margin(const PixelTensor& x) const {
        auto [logits, probs] = cnn_forward(model, DetectorInput{PipelineTag::raw, x});
        return logits[kind_index(Kind::malware)] - logits[kind_index(Kind::benign)];
    }
};

}  // namespace

TEST(ToyModel, BehavesLinearly) {
    TwoBlockToy toy;
    EXPECT_NEAR(toy.margin(toy.x0), toy.margin0, 1e-9);
    PixelTensor x = toy.x0;
    x.at(0, 0) = toy.start + 0.5;  // block 0's top-left pixel carries its max
    EXPECT_NEAR(toy.margin(x), toy.margin0 - toy.w0 * 0.5, 1e-9);
    x = toy.x0;
    x.at(0, 4) = toy.start + 0.25;  // block 1 lives at columns 4..7
    EXPECT_NEAR(toy.margin(x), toy.margin0 - toy.w1 * 0.25, 1e-9);
}

TEST(Fgsm, ZeroBudgetIdentity) {
    CnnModel m;
    cnn_init_params(m, 3);
    const PixelTensor x = random_box_tensor(1);
    FgsmConfig cfg;
    cfg.epsilon = 0.0;
    const AdvExample ae = craft_fgsm(m, x, Kind::benign, cfg);
    EXPECT_EQ(ae.x_adv.values, x.values);
    EXPECT_EQ(ae.norms.l0, 0u);
    EXPECT_DOUBLE_EQ(ae.norms.l2, 0.0);
    EXPECT_DOUBLE_EQ(ae.norms.linf, 0.0);
}

TEST(Fgsm, BudgetContractExactOverHundredCrafts) {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        CnnModel m;
        cnn_init_params(m, 100 + trial);
        const PixelTensor x = random_box_tensor(200 + trial);
        FgsmConfig cfg;
        cfg.epsilon = 0.05 + 0.9 * rng.uniform01();
        cfg.mode = trial % 4 == 3 ? FgsmConfig::Mode::iterative : FgsmConfig::Mode::single_step;
        cfg.max_iterations = 16;
        const AdvExample ae = craft_fgsm(m, x, Kind::benign, cfg);
        EXPECT_LE(ae.norms.linf, cfg.epsilon);
        for (double v : ae.x_adv.values) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(Fgsm, GradientSignMatchesClosedFormOracle) {
    // For the softmax head, grad_x CE(benign) = p_m * grad(Z_m - Z_b), so on
    // the linear toy its sign equals -sign(benign weight) wherever gradient
    // flows; the benign-targeted step then moves those pixels upward.
    TwoBlockToy toy;
    const DetectorInput in{PipelineTag::raw, toy.x0};
    const PixelTensor grad =
        cnn_input_gradient(toy.model, in, CrossEntropyLoss{Kind::benign});

    int carriers = 0;
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (grad.values[i] == 0.0) continue;
        ++carriers;
        const std::size_t col = i % 64;
        const double w = col < 4 ? toy.w0 : toy.w1;  // blocks 0 and 1
        EXPECT_LT(col, 8u);                          // only the two live blocks carry gradient
        EXPECT_LT(grad.values[i], 0.0) << "benign weight " << w << " must give negative grad";
    }
    EXPECT_EQ(carriers, 2);  // one argmax pixel per live block

    FgsmConfig cfg;
    cfg.epsilon = 0.3;
    const AdvExample ae = craft_fgsm(toy.model, toy.x0, Kind::benign, cfg);
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (grad.values[i] < 0.0)
            EXPECT_NEAR(ae.delta[i], 0.3, 1e-12);  // pushed toward the box max
        else
            EXPECT_DOUBLE_EQ(ae.delta[i], 0.0);
    }
}

TEST(Fgsm, IterativeSaturatesCoordinatesInGradientOrder) {
    TwoBlockToy toy;
    FgsmConfig cfg;
    cfg.mode = FgsmConfig::Mode::iterative;
    cfg.epsilon = 0.75;
    cfg.max_iterations = 64;
    const AdvExample ae = craft_fgsm(toy.model, toy.x0, Kind::benign, cfg);
    EXPECT_TRUE(ae.success);
    // weight-3 block alone covers the 1.5 margin: 0.75 * 3 = 2.25
    EXPECT_EQ(ae.norms.l0, 1u);
    EXPECT_NEAR(ae.delta[0], 0.75, 1e-12);  // block 0's argmax pixel is index 0
    EXPECT_GE(ae.loss_trace.front().second, ae.loss_trace.back().second);
}

TEST(Fgsm, IterativeReportsFailureWithoutHelpfulCoordinates) {
    // Flip the toy's weights so every upward move grows the malware margin.
    std::array<std::vector<double>, 2> wts;
    wts[0].assign(256, 0.0);
    wts[1].assign(256, 0.0);
    wts[1][0] = 3.0;  // raising pixels now boosts malware
    const CnnModel model = oracles::make_block_linear_cnn(wts, {0.0, 1.0});
    const PixelTensor x0 = oracles::block_constant_tensor(std::vector<double>(256, 0.25));

    FgsmConfig cfg;
    cfg.mode = FgsmConfig::Mode::iterative;
    cfg.epsilon = 0.5;
    const AdvExample ae = craft_fgsm(model, x0, Kind::benign, cfg);
    EXPECT_FALSE(ae.success);
    EXPECT_TRUE(ae.error.empty());  // failure is a result, not an error
}

TEST(Fgsm, RejectsBadConfigAndInputs) {
    CnnModel m;
    cnn_init_params(m, 3);
    const PixelTensor x = random_box_tensor(5);
    FgsmConfig bad;
    bad.epsilon = -0.1;
    EXPECT_THROW(craft_fgsm(m, x, Kind::benign, bad), ConfigError);
    bad.epsilon = 1.5;
    EXPECT_THROW(craft_fgsm(m, x, Kind::benign, bad), ConfigError);

    PixelTensor outside = x;
    outside.values[7] = 1.25;
    EXPECT_THROW(craft_fgsm(m, outside, Kind::benign, FgsmConfig{}), ConfigError);
}

TEST(Cw, AlreadyAdversarialInputNeedsNoPerturbation) {
    TwoBlockToy toy;
    // Start inside the benign region with margin comfortably below -kappa.
    PixelTensor x = toy.x0;
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 8; ++c) x.at(r, c) = 0.95;
    ASSERT_LT(toy.margin(x), -0.5);

    CwConfig cfg;
    cfg.iterations = 30;
    const AdvExample ae = craft_cw(toy.model, x, Kind::benign, cfg);
    EXPECT_TRUE(ae.success);
    EXPECT_LE(ae.norms.l2, 1e-3);
}

TEST(Cw, BoxContainmentOverHundredCrafts) {
    for (int trial = 0; trial < 100; ++trial) {
        CnnModel m;
        cnn_init_params(m, 500 + trial);
        const PixelTensor x = random_box_tensor(900 + trial);
        CwConfig cfg;
        cfg.iterations = 12;
        cfg.search_steps = 3;
        const AdvExample ae = craft_cw(m, x, Kind::benign, cfg);
        for (double v : ae.x_adv.values) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(Cw, L2WithinFivePercentOfGridOracle) {
    TwoBlockToy toy;

    // Brute-force oracle over block raises (d0, d1) at 1e-3 steps.
    double best = std::numeric_limits<double>::infinity();
    const double cap = 1.0 - toy.start;
    for (int i = 0; i <= 750; ++i) {
        const double d0 = i * 1e-3;
        if (d0 > cap) break;
        // smallest d1 satisfying w0*d0 + w1*d1 >= margin0
        const double need = (toy.margin0 - toy.w0 * d0) / toy.w1;
        if (need > cap) continue;
        const double d1 = std::max(0.0, std::ceil(need / 1e-3) * 1e-3);
        if (d1 > cap) continue;
        best = std::min(best, std::sqrt(d0 * d0 + d1 * d1));
    }
    ASSERT_TRUE(std::isfinite(best));

    CwConfig cfg;
    const AdvExample ae = craft_cw(toy.model, toy.x0, Kind::benign, cfg);
    ASSERT_TRUE(ae.success);
    EXPECT_LE(toy.margin(ae.x_adv), 1e-9);
    EXPECT_LE(ae.norms.l2, best * 1.05);
    EXPECT_GE(ae.norms.l2, best * 0.95);  // cannot beat the optimum by >5% either
}

TEST(Cw, LinfAndL0ModesSatisfyTheirNorms) {
    TwoBlockToy toy;
    CwConfig linf;
    linf.norm = CwConfig::Norm::linf;
    const AdvExample ae_inf = craft_cw(toy.model, toy.x0, Kind::benign, linf);
    ASSERT_TRUE(ae_inf.success);
    EXPECT_LE(toy.margin(ae_inf.x_adv), 1e-9);
    // Spreading over both live blocks beats the single-pixel L-inf cost.
    EXPECT_LT(ae_inf.norms.linf, 0.5);

    CwConfig l0;
    l0.norm = CwConfig::Norm::l0;
    const AdvExample ae_l0 = craft_cw(toy.model, toy.x0, Kind::benign, l0);
    ASSERT_TRUE(ae_l0.success);
    EXPECT_LE(toy.margin(ae_l0.x_adv), 1e-9);
    EXPECT_LE(ae_l0.norms.l0, 8u);  // two live blocks; the rest freezes to zero
}

TEST(Cw, HingeSatisfiedAtReportedKappa) {
    TwoBlockToy toy;
    CwConfig cfg;
    cfg.kappa = 0.75;
    const AdvExample ae = craft_cw(toy.model, toy.x0, Kind::benign, cfg);
    ASSERT_TRUE(ae.success);
    EXPECT_LE(toy.margin(ae.x_adv), -cfg.kappa + 1e-9);
}

TEST(Cw, SplitPenaltyHookSteersAwayFromSecondaryDetector) {
    TwoBlockToy toy;
    // Secondary detector penalizes raising block 0; with the hook active the
    // craft should lean harder on block 1.
    CwConfig plain;
    const AdvExample base = craft_cw(toy.model, toy.x0, Kind::benign, plain);

    CwConfig split = plain;
    split.d_weight = 4.0;
    split.r_weight = 1.0;
    split.tau = 0.0;
    split.detector_score = [&](const PixelTensor& x) {
        double m = 0.0;
        for (std::size_t r = 0; r < 4; ++r)
            for (std::size_t c = 0; c < 4; ++c) m = std::max(m, x.at(r, c));
        return m - 0.25;  // positive once block 0 rises
    };
    split.detector_score_grad = [&](const PixelTensor& x) {
        std::vector<double> g(x.size(), 0.0);
        double m = -1;
        std::size_t arg = 0;
        for (std::size_t r = 0; r < 4; ++r)
            for (std::size_t c = 0; c < 4; ++c)
                if (x.at(r, c) > m) { m = x.at(r, c); arg = r * 64 + c; }
        g[arg] = 1.0;
        return g;
    };
    const AdvExample steered = craft_cw(toy.model, toy.x0, Kind::benign, split);
    ASSERT_TRUE(steered.success);

    auto block_raise = [&](const AdvExample& ae, std::size_t col0) {
        double m = 0.0;
        for (std::size_t r = 0; r < 4; ++r)
            for (std::size_t c = col0; c < col0 + 4; ++c)
                m = std::max(m, ae.x_adv.at(r, c) - toy.start);
        return m;
    };
    EXPECT_LT(block_raise(steered, 0), block_raise(base, 0));
    EXPECT_GT(block_raise(steered, 4), block_raise(base, 4));
}

TEST(Cw, RejectsBadConfig) {
    TwoBlockToy toy;
    CwConfig bad;
    bad.kappa = -1.0;
    EXPECT_THROW(craft_cw(toy.model, toy.x0, Kind::benign, bad), ConfigError);
    bad = CwConfig{};
    bad.c_min = 0.0;
    EXPECT_THROW(craft_cw(toy.model, toy.x0, Kind::benign, bad), ConfigError);
    bad = CwConfig{};
    bad.search_steps = 0;
    EXPECT_THROW(craft_cw(toy.model, toy.x0, Kind::benign, bad), ConfigError);
}

TEST(Norms, BookkeepingMatchesIndependentRecompute) {
    TwoBlockToy toy;
    FgsmConfig cfg;
    cfg.epsilon = 0.2;
    const AdvExample ae = craft_fgsm(toy.model, toy.x0, Kind::benign, cfg);

    std::size_t l0 = 0;
    double ss = 0.0, linf = 0.0;
    for (std::size_t i = 0; i < ae.x_adv.size(); ++i) {
        const double d = ae.x_adv.values[i] - ae.x_orig.values[i];
        EXPECT_DOUBLE_EQ(d, ae.delta[i]);
        if (d != 0.0) ++l0;
        ss += d * d;
        linf = std::max(linf, std::abs(d));
    }
    EXPECT_EQ(ae.norms.l0, l0);
    EXPECT_NEAR(ae.norms.l2, std::sqrt(ss), 1e-9);
    EXPECT_NEAR(ae.norms.linf, linf, 1e-9);
}

TEST(BatchCraft, MapSemanticsAndErrorIsolation) {
    TwoBlockToy toy;
    std::vector<std::pair<std::string, PixelTensor>> samples;
    for (int i = 0; i < 10; ++i) samples.emplace_back("s" + std::to_string(i), toy.x0);

    FgsmConfig zero;
    zero.epsilon = 0.0;
    auto aes = batch_craft(toy.model, samples, Kind::benign, AttackMethod::fgsm(zero), 1);
    ASSERT_EQ(aes.size(), 10u);
    for (std::size_t i = 0; i < aes.size(); ++i) {
        EXPECT_EQ(aes[i].id, samples[i].first);  // order preserved
        EXPECT_EQ(aes[i].norms.l0, 0u);
    }

    // singleton batch equals a single craft bit-exactly
    FgsmConfig eps;
    eps.epsilon = 0.4;
    const auto single = craft_fgsm(toy.model, toy.x0, Kind::benign, eps);
    const auto batch1 = batch_craft(toy.model, {{"only", toy.x0}}, Kind::benign,
                                    AttackMethod::fgsm(eps), 9);
    EXPECT_EQ(batch1[0].x_adv.values, single.x_adv.values);
    EXPECT_EQ(batch1[0].success, single.success);

    // a bad sample is recorded in place without aborting the batch
    PixelTensor broken = toy.x0;
    broken.values[0] = 2.0;
    samples[3].second = broken;
    aes = batch_craft(toy.model, samples, Kind::benign, AttackMethod::fgsm(eps), 1);
    ASSERT_EQ(aes.size(), 10u);
    EXPECT_FALSE(aes[3].error.empty());
    EXPECT_FALSE(aes[3].success);
    EXPECT_TRUE(aes[2].error.empty());
    EXPECT_TRUE(aes[4].error.empty());

    EXPECT_THROW(batch_craft(toy.model, {}, Kind::benign, AttackMethod::fgsm(eps), 1),
                 EmptySet);
}

TEST(Attacks, UntargetedModeEscapesTrueLabel) {
    TwoBlockToy toy;  // classified malware at x0
    FgsmConfig cfg;
    cfg.epsilon = 0.6;
    cfg.targeted = false;
    const AdvExample ae = craft_fgsm(toy.model, toy.x0, Kind::malware, cfg);
    EXPECT_TRUE(ae.success);
    EXPECT_LT(toy.margin(ae.x_adv), 0.0);
}
