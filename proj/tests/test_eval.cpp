#include <gtest/gtest.h>

#include <cmath>

#include "malimg/eval.hpp"
#include "malimg/reports.hpp"
#include "malimg/rng.hpp"
#include "oracles.hpp"

using namespace malimg;

namespace {

// Constant-verdict detector: a one-leaf forest.
Detector constant_detector(double leaf_value) {
    RfModel m;
    m.n_features = 4096;
    RfTree t;
    t.nodes.push_back({-1, 0.0, -1, -1, leaf_value, 1});
    m.trees = {t};
    Detector det;
    det.algorithm = Algorithm::rf;
    det.tag = PipelineTag::raw;
    det.model = std::move(m);
    return det;
}

PixelTensor constant_tensor(double v) { return PixelTensor(64, 64, v); }

AdvExample make_ae(const std::string& id, double orig, double adv, bool success,
                   std::vector<std::pair<int, double>> trace = {}) {
    AdvExample ae;
    ae.id = id;
    ae.x_orig = constant_tensor(orig);
    ae.x_adv = constant_tensor(adv);
    ae.success = success;
    ae.loss_trace = std::move(trace);
    ae.iterations = static_cast<int>(ae.loss_trace.size());
    detail_attack::finalize(ae);
    return ae;
}

// Separable two-blob corpus directly in tensor space.
TensorCorpus blob_corpus(std::size_t malware, std::size_t benign) {
    TensorCorpus tc;
    Rng rng(12);
    for (std::size_t i = 0; i < malware; ++i) {
        PixelTensor t(64, 64);
        for (auto& v : t.values) v = 0.15 + 0.1 * rng.uniform01();
        tc.ids.push_back("m" + std::to_string(100 + i));
        tc.tensors.push_back(std::move(t));
        tc.labels.push_back(ClassLabel::malware(Family::R));
    }
    for (std::size_t i = 0; i < benign; ++i) {
        PixelTensor t(64, 64);
        for (auto& v : t.values) v = 0.75 + 0.1 * rng.uniform01();
        tc.ids.push_back("b" + std::to_string(100 + i));
        tc.tensors.push_back(std::move(t));
        tc.labels.push_back(ClassLabel::benign());
    }
    return tc;
}

TrainConfig fast_train() {
    TrainConfig cfg;
    cfg.cnn.epochs = 3;
    cfg.rf.trees = 10;
    return cfg;
}

}  // namespace

TEST(AttackSuccessRate, EndpointsAndCountingOracle) {
    std::vector<AdvExample> aes;
    for (int i = 0; i < 7; ++i) aes.push_back(make_ae("a" + std::to_string(i), 0.2, 0.4, true));

    EXPECT_DOUBLE_EQ(attack_success_rate(constant_detector(1.0), aes), 0.0);
    EXPECT_DOUBLE_EQ(attack_success_rate(constant_detector(0.0), aes), 100.0);

    // Counting oracle against a real trained detector.
    const TensorCorpus tc = blob_corpus(8, 8);
    std::vector<std::pair<PixelTensor, ClassLabel>> train;
    for (std::size_t i = 0; i < tc.size(); ++i) train.emplace_back(tc.tensors[i], tc.labels[i]);
    const Detector det = train_detector(Algorithm::rf, PipelineTag::raw, train, fast_train(), 5);

    Rng rng(3);
    std::vector<AdvExample> mixed;
    for (int i = 0; i < 20; ++i)
        mixed.push_back(make_ae("x" + std::to_string(i), 0.2, rng.uniform01(), true));
    std::size_t benign_count = 0;
    for (const auto& ae : mixed)
        if (det.predict(ae.x_adv) == Kind::benign) ++benign_count;
    EXPECT_DOUBLE_EQ(attack_success_rate(det, mixed), 100.0 * benign_count / mixed.size());

    EXPECT_THROW(attack_success_rate(det, {}), EmptySet);
}

TEST(CrossValidatedAttack, TwoFoldArithmetic) {
    const TensorCorpus tc = blob_corpus(2, 2);
    FgsmConfig fgsm;
    fgsm.epsilon = 0.3;
    const CvReport report = cross_validated_attack(tc, Algorithm::rf, PipelineTag::raw,
                                                   fast_train(), AttackMethod::fgsm(fgsm), 2, 9);
    EXPECT_EQ(report.k, 2);
    ASSERT_EQ(report.fold_clean_accuracy.size(), 2u);
    ASSERT_EQ(report.fold_attack_success.size(), 2u);
    EXPECT_DOUBLE_EQ(report.clean_mean,
                     (report.fold_clean_accuracy[0] + report.fold_clean_accuracy[1]) / 2.0);
    EXPECT_DOUBLE_EQ(report.attack_mean,
                     (report.fold_attack_success[0] + report.fold_attack_success[1]) / 2.0);
    for (double r : report.fold_clean_accuracy) {
        EXPECT_GE(r, 0.0);
        EXPECT_LE(r, 100.0);
    }
}

TEST(CrossValidatedAttack, DeterministicReports) {
    const TensorCorpus tc = blob_corpus(4, 4);
    FgsmConfig fgsm;
    const auto method = AttackMethod::fgsm(fgsm);
    const CvReport a =
        cross_validated_attack(tc, Algorithm::rf, PipelineTag::raw, fast_train(), method, 2, 4);
    const CvReport b =
        cross_validated_attack(tc, Algorithm::rf, PipelineTag::raw, fast_train(), method, 2, 4);
    const ReportMeta meta{"hash", 4};
    EXPECT_EQ(cv_report_json(a, meta).dump(), cv_report_json(b, meta).dump());
}

TEST(CrossValidatedAttack, FoldWithoutMalwareRejected) {
    const TensorCorpus tc = blob_corpus(1, 3);
    FgsmConfig fgsm;
    EXPECT_THROW(cross_validated_attack(tc, Algorithm::rf, PipelineTag::raw, fast_train(),
                                        AttackMethod::fgsm(fgsm), 2, 1),
                 FoldError);
}

TEST(MinimalEpsilon, DegenerateDetectorPicksFirstGridPoint) {
    CnnModel surrogate;
    cnn_init_params(surrogate, 8);
    std::vector<std::pair<std::string, PixelTensor>> samples{{"a", constant_tensor(0.3)},
                                                             {"b", constant_tensor(0.4)}};
    const std::vector<double> grid{0.0, 0.2, 0.4};

    const auto result =
        minimal_epsilon(constant_detector(0.0), surrogate, samples, 95.0, grid, 1);
    ASSERT_TRUE(result.epsilon.has_value());
    EXPECT_DOUBLE_EQ(*result.epsilon, 0.0);
    ASSERT_EQ(result.curve.size(), grid.size());  // full curve even after target met
    for (std::size_t i = 0; i < grid.size(); ++i) {
        EXPECT_DOUBLE_EQ(result.curve[i].first, grid[i]);
        EXPECT_DOUBLE_EQ(result.curve[i].second, 100.0);
    }

    const auto never =
        minimal_epsilon(constant_detector(1.0), surrogate, samples, 95.0, grid, 1);
    EXPECT_FALSE(never.epsilon.has_value());
    EXPECT_EQ(never.curve.size(), grid.size());

    EXPECT_THROW(minimal_epsilon(constant_detector(0.0), surrogate, samples, 95.0, {}, 1),
                 ConfigError);
    EXPECT_THROW(
        minimal_epsilon(constant_detector(0.0), surrogate, samples, 95.0, {0.4, 0.2}, 1),
        ConfigError);
}

TEST(TransferMatrix, SingleDetectorDiagonal) {
    const Detector det = constant_detector(0.0);  // labels everything benign
    std::vector<AdvExample> aes{make_ae("a", 0.2, 0.3, true)};
    const TransferMatrix tm = transferability_matrix({det}, {aes});
    ASSERT_EQ(tm.rate.size(), 1u);
    EXPECT_DOUBLE_EQ(tm.rate[0][0], 100.0);
}

TEST(TransferMatrix, IdenticalTargetColumnIs100) {
    const TensorCorpus tc = blob_corpus(6, 6);
    std::vector<std::pair<PixelTensor, ClassLabel>> train;
    for (std::size_t i = 0; i < tc.size(); ++i) train.emplace_back(tc.tensors[i], tc.labels[i]);
    const Detector det = train_detector(Algorithm::rf, PipelineTag::raw, train, fast_train(), 2);

    // Raw AEs: whatever this detector calls benign forms its filtered set.
    std::vector<AdvExample> raw;
    Rng rng(5);
    for (int i = 0; i < 12; ++i)
        raw.push_back(make_ae("t" + std::to_string(i), 0.2, 0.6 + 0.3 * rng.uniform01(), true));
    const auto filtered = filter_source_successful(det, raw);
    ASSERT_FALSE(filtered.empty());

    const TransferMatrix tm = transferability_matrix({det, det}, {filtered, filtered});
    EXPECT_DOUBLE_EQ(tm.rate[0][0], 100.0);
    EXPECT_DOUBLE_EQ(tm.rate[0][1], 100.0);
    EXPECT_DOUBLE_EQ(tm.rate[1][0], 100.0);
    EXPECT_DOUBLE_EQ(tm.rate[1][1], 100.0);
}

TEST(TransferMatrix, UnfilteredSourceSetRejected) {
    const Detector det = constant_detector(1.0);  // labels everything malware
    std::vector<AdvExample> aes{make_ae("a", 0.2, 0.3, true)};
    EXPECT_THROW(transferability_matrix({det}, {aes}), ProtocolError);

    EXPECT_THROW(transferability_matrix({det}, {{}}), EmptySet);
    EXPECT_THROW(transferability_matrix({det}, {aes, aes}), ProtocolError);
}

TEST(TransferMatrix, PaperShapedLayoutRendering) {
    // 6-detector layout with a 100% diagonal; the rendered report carries
    // the published reference cells alongside.
    std::vector<Detector> dets(6, constant_detector(0.0));
    std::vector<std::vector<AdvExample>> sets(6, {make_ae("a", 0.1, 0.2, true)});
    std::vector<std::string> names{"cnn", "svm", "rf", "wavelet-cnn", "wavelet-svm",
                                   "wavelet-rf"};
    TransferMatrix tm = transferability_matrix(dets, sets);
    tm.detectors = names;

    for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(tm.rate[i][i], 100.0);

    const ordered_json j = transfer_matrix_json(tm, ReportMeta{"h", 1});
    EXPECT_EQ(j["detectors"].size(), 6u);
    const std::string dump = j["reference"].dump();
    EXPECT_NE(dump.find("86.3"), std::string::npos);  // cnn -> rf reference cell
    EXPECT_NE(dump.find("45.6"), std::string::npos);  // rf -> svm reference cell

    const std::string text = transfer_matrix_text(tm);
    for (const auto& name : names) EXPECT_NE(text.find(name), std::string::npos);
}

TEST(DistortionStats, RatioIdentitiesAndHistograms) {
    std::vector<AdvExample> set_a, zeros;
    Rng rng(9);
    for (int i = 0; i < 10; ++i) {
        set_a.push_back(make_ae("a" + std::to_string(i), 0.2, 0.2 + 0.05 * (i + 1), true));
        zeros.push_back(make_ae("z" + std::to_string(i), 0.3, 0.3, true));
    }

    const DistortionStats same = distortion_stats(set_a, set_a);
    EXPECT_TRUE(same.ratio_finite);
    EXPECT_DOUBLE_EQ(same.ratio, 1.0);

    const DistortionStats inf = distortion_stats(set_a, zeros);
    EXPECT_FALSE(inf.ratio_finite);
    EXPECT_DOUBLE_EQ(inf.targeted_mean_l2, 0.0);

    std::size_t total = 0;
    for (std::size_t c : same.untargeted_l2.counts) total += c;
    EXPECT_EQ(total, set_a.size());
    EXPECT_EQ(same.untargeted_l2.counts.size(), 32u);

    EXPECT_THROW(distortion_stats({}, set_a), EmptySet);
    EXPECT_THROW(distortion_stats(set_a, {}), EmptySet);
}

TEST(LossTraceSummary, DecayArithmetic) {
    std::vector<AdvExample> aes;
    aes.push_back(make_ae("const", 0.1, 0.2, true, {{0, 2e-3}, {1, 2e-3}}));
    aes.push_back(make_ae("decay", 0.1, 0.2, true, {{0, 4e-3}, {1, 1e-3}, {2, 1e-5}}));

    const LossTraceSummary s = loss_trace_summary(aes);
    ASSERT_EQ(s.rows.size(), 2u);
    EXPECT_DOUBLE_EQ(s.rows[1].first, 4e-3);
    EXPECT_DOUBLE_EQ(s.rows[1].last, 1e-5);
    EXPECT_DOUBLE_EQ(s.fraction_first_is_max, 1.0);
    EXPECT_DOUBLE_EQ(s.median_decay, 0.5 * (1.0 + 400.0));

    std::vector<AdvExample> empty_traces{make_ae("none", 0.1, 0.2, true)};
    EXPECT_THROW(loss_trace_summary(empty_traces), EmptySet);
}

TEST(AdvSetIo, SaveLoadRoundTrip) {
    const auto dir = std::filesystem::temp_directory_path() / "malimg-advset";
    std::filesystem::remove_all(dir);

    std::vector<AdvExample> aes;
    aes.push_back(make_ae("one", 0.25, 0.75, true, {{0, 3.2}, {1, 0.1}}));
    aes.push_back(make_ae("two", 0.5, 0.5, false));
    aes[1].error = "ConfigError: demo";
    save_adv_set(aes, dir, ReportMeta{"cafe", 7});

    const auto back = load_adv_set(dir);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].id, "one");
    EXPECT_TRUE(back[0].success);
    ASSERT_EQ(back[0].loss_trace.size(), 2u);
    EXPECT_DOUBLE_EQ(back[0].loss_trace[0].second, 3.2);
    // tensors come back 8-bit quantized
    EXPECT_NEAR(back[0].x_orig.values[0], 0.25, 1.0 / 255.0);
    EXPECT_NEAR(back[0].x_adv.values[0], 0.75, 1.0 / 255.0);
    EXPECT_EQ(back[1].error, "ConfigError: demo");
    // norms are self-consistent with the quantized tensors
    double linf = 0.0;
    for (double d : back[0].delta) linf = std::max(linf, std::abs(d));
    EXPECT_DOUBLE_EQ(back[0].norms.linf, linf);
    std::filesystem::remove_all(dir);
}
