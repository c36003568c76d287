#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <tuple>
#include <string>
#include <utility>
#include <vector>

#include "malimg/attacks.hpp"
#include "malimg/byteplot.hpp"
#include "malimg/corpus.hpp"
#include "malimg/detectors/detector.hpp"
#include "malimg/errors.hpp"
#include "malimg/parallel.hpp"

namespace malimg {

// Fold-replacement cross-validation outcome for one detector x attack pair.
struct CvReport {
    std::string detector;  // e.g. "cnn", "wavelet-svm"
    std::string attack;    // e.g. "fgsm(epsilon=0.4)"
    int k = 0;
    std::vector<double> fold_clean_accuracy;  // percent, untouched held-out fold
    std::vector<double> fold_attack_success;  // percent, AE-replaced fold
    double clean_mean = 0.0, clean_std = 0.0;
    double attack_mean = 0.0, attack_std = 0.0;
    std::string distortion;
    std::uint64_t seed = 0;
};

struct TransferMatrix {
    std::vector<std::string> detectors;       // rows = source, columns = target
    std::vector<std::vector<double>> rate;    // percent
};

struct Histogram {
    double lo = 0.0, hi = 0.0;
    std::vector<std::size_t> counts;  // fixed 32 bins
};

struct DistortionStats {
    double untargeted_mean_l2 = 0.0;  // D_x*
    double targeted_mean_l2 = 0.0;    // D_x^t
    double ratio = 0.0;               // D_x* / D_x^t
    bool ratio_finite = true;
    Histogram untargeted_l0, untargeted_l2, untargeted_linf;
    Histogram targeted_l0, targeted_l2, targeted_linf;
};

struct LossTraceSummary {
    struct Row {
        std::string id;
        double first = 0.0, last = 0.0;
        int iterations = 0;
        bool success = false;
    };
    std::vector<Row> rows;            // one per non-empty trace
    double median_decay = 0.0;        // median first/last over successful crafts
    double fraction_first_is_max = 0.0;
};

inline double attack_success_rate(const Detector& detector,
                                  const std::vector<AdvExample>& adv_set) {
    if (adv_set.empty()) throw EmptySet("attack_success_rate: empty adversarial set");
    std::size_t fooled = 0;
    for (const auto& ae : adv_set)
        if (detector.predict(ae.x_adv) == Kind::benign) ++fooled;
    return 100.0 * static_cast<double>(fooled) / static_cast<double>(adv_set.size());
}

// Ready-to-train view of a corpus in attack space.
struct TensorCorpus {
    std::vector<std::string> ids;
    std::vector<PixelTensor> tensors;  // resized 64x64, [0,1]
    std::vector<ClassLabel> labels;

    std::size_t size() const { return ids.size(); }
};

inline TensorCorpus to_tensor_corpus(const Corpus& corpus, std::size_t side = 64) {
    TensorCorpus tc;
    tc.ids.reserve(corpus.size());
    tc.tensors.resize(corpus.size());
    tc.labels.reserve(corpus.size());
    for (const auto& s : corpus.samples) {
        tc.ids.push_back(s.id);
        tc.labels.push_back(s.label);
    }
    parallel_for(corpus.size(), [&](std::size_t i) {
        tc.tensors[i] = resize(bytes_to_image(corpus.samples[i].bytes), side, side);
    });
    return tc;
}

namespace detail_eval {

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    return {mean, sd};
}

inline std::string fgsm_descriptor(const FgsmConfig& cfg) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "fgsm(epsilon=%g,%s)", cfg.epsilon,
                  cfg.mode == FgsmConfig::Mode::single_step ? "single_step" : "iterative");
    return buf;
}

inline std::string cw_descriptor(const CwConfig& cfg) {
    const char* norm = cfg.norm == CwConfig::Norm::l0 ? "l0"
                       : cfg.norm == CwConfig::Norm::l2 ? "l2"
                                                        : "linf";
    char buf[96];
    std::snprintf(buf, sizeof(buf), "cw(%s,kappa=%g)", norm, cfg.kappa);
    return buf;
}

inline std::string attack_descriptor(const AttackMethod& method) {
    if (const auto* f = std::get_if<FgsmConfig>(&method.config)) return fgsm_descriptor(*f);
    return cw_descriptor(std::get<CwConfig>(method.config));
}

}  // namespace detail_eval

// The fold-replacement protocol: per fold, train on the other k-1 folds,
// measure clean accuracy on the untouched held-out fold, then replace the
// held-out fold's malware with AEs crafted via the shared CNN surrogate
// (trained on the same k-1 folds) and measure the attack success rate.
inline CvReport cross_validated_attack(const TensorCorpus& corpus, Algorithm algorithm,
                                       PipelineTag tag, const TrainConfig& train_cfg,
                                       const AttackMethod& method, int k, std::uint64_t seed,
                                       int wavelet_levels = 2,
                                       std::size_t attack_sample_cap = 0) {
    if (k < 2) throw FoldError("cross_validated_attack: k must be at least 2");

    Corpus shim;  // id/label view for fold splitting
    shim.samples.resize(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        shim.samples[i].id = corpus.ids[i];
        shim.samples[i].bytes.assign(64, 0);
        shim.samples[i].label = corpus.labels[i];
    }
    const FoldAssignment folds = split_folds(shim, k, derive_seed(seed, "folds"));

    // Every fold must hold malware to attack; reject up front so the error
    // is the protocol's, not a downstream trainer's.
    std::vector<std::size_t> fold_malware(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < corpus.size(); ++i)
        if (corpus.labels[i].kind == Kind::malware)
            ++fold_malware[static_cast<std::size_t>(folds.fold_of.at(corpus.ids[i]))];
    for (int f = 0; f < k; ++f)
        if (fold_malware[static_cast<std::size_t>(f)] == 0)
            throw FoldError("cross_validated_attack: fold " + std::to_string(f) +
                            " holds no malware to attack");

    CvReport report;
    report.detector = (tag == PipelineTag::wavelet ? std::string("wavelet-") : std::string()) +
                      algorithm_name(algorithm);
    report.attack = detail_eval::attack_descriptor(method);
    report.k = k;
    report.seed = seed;
    if (const auto* f = std::get_if<FgsmConfig>(&method.config)) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "epsilon=%g", f->epsilon);
        report.distortion = buf;
    } else {
        report.distortion = "per-sample L-norm minimization";
    }
    report.fold_clean_accuracy.resize(static_cast<std::size_t>(k));
    report.fold_attack_success.resize(static_cast<std::size_t>(k));

    parallel_for(static_cast<std::size_t>(k), [&](std::size_t fold) {
        std::vector<std::pair<PixelTensor, ClassLabel>> train_set, held_out;
        std::vector<std::pair<std::string, PixelTensor>> held_malware;
        std::set<std::string> train_ids, held_ids;
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            const int fi = folds.fold_of.at(corpus.ids[i]);
            if (fi == static_cast<int>(fold)) {
                held_out.emplace_back(corpus.tensors[i], corpus.labels[i]);
                held_ids.insert(corpus.ids[i]);
                if (corpus.labels[i].kind == Kind::malware)
                    held_malware.emplace_back(corpus.ids[i], corpus.tensors[i]);
            } else {
                train_set.emplace_back(corpus.tensors[i], corpus.labels[i]);
                train_ids.insert(corpus.ids[i]);
            }
        }
        for (const auto& id : held_ids)
            if (train_ids.count(id))
                throw ProtocolError("cross_validated_attack: held-out sample leaked into training");
        if (held_malware.empty())
            throw FoldError("cross_validated_attack: fold " + std::to_string(fold) +
                            " holds no malware to attack");

        const Detector detector =
            train_detector(algorithm, tag, train_set, train_cfg,
                           derive_seed(seed, "train", fold), wavelet_levels);

        CnnModel surrogate;
        if (algorithm == Algorithm::cnn && tag == PipelineTag::raw) {
            surrogate = detector.cnn();
        } else {
            std::vector<LabeledInput> raw_inputs;
            raw_inputs.reserve(train_set.size());
            for (const auto& [tensor, label] : train_set)
                raw_inputs.emplace_back(
                    detector_input_for(Algorithm::cnn, PipelineTag::raw, tensor), label);
            surrogate = train_cnn(raw_inputs, train_cfg.cnn, derive_seed(seed, "surrogate", fold));
        }

        if (attack_sample_cap > 0 && held_malware.size() > attack_sample_cap)
            held_malware.resize(attack_sample_cap);

        const auto aes = batch_craft(surrogate, held_malware, Kind::benign, method,
                                     derive_seed(seed, "craft", fold));

        report.fold_clean_accuracy[fold] = clean_accuracy(detector, held_out);
        report.fold_attack_success[fold] = attack_success_rate(detector, aes);
    });

    std::tie(report.clean_mean, report.clean_std) =
        detail_eval::mean_std(report.fold_clean_accuracy);
    std::tie(report.attack_mean, report.attack_std) =
        detail_eval::mean_std(report.fold_attack_success);
    return report;
}

struct MinimalEpsilonResult {
    std::optional<double> epsilon;  // empty when the grid is exhausted
    std::vector<std::pair<double, double>> curve;  // (epsilon, success rate %)
};

// Sweeps the epsilon grid with single-step FGSM against the surrogate and
// reports the first grid point whose success rate against the detector
// reaches the target. The whole curve is reported either way.
inline MinimalEpsilonResult minimal_epsilon(
    const Detector& detector, const CnnModel& surrogate,
    const std::vector<std::pair<std::string, PixelTensor>>& samples, double target_rate,
    const std::vector<double>& epsilon_grid, std::uint64_t seed = 0) {
    if (epsilon_grid.empty()) throw ConfigError("minimal_epsilon: empty epsilon grid");
    if (!std::is_sorted(epsilon_grid.begin(), epsilon_grid.end()))
        throw ConfigError("minimal_epsilon: epsilon grid must be sorted ascending");
    if (samples.empty()) throw EmptySet("minimal_epsilon: no samples");

    MinimalEpsilonResult result;
    for (double eps : epsilon_grid) {
        FgsmConfig cfg;
        cfg.epsilon = eps;
        const auto aes =
            batch_craft(surrogate, samples, Kind::benign, AttackMethod::fgsm(cfg), seed);
        const double rate = attack_success_rate(detector, aes);
        result.curve.emplace_back(eps, rate);
        if (!result.epsilon && rate >= target_rate) result.epsilon = eps;
    }
    return result;
}

// Keeps only the AEs the source detector itself mislabels as benign; this is
// the transfer-set construction that pins the matrix diagonal at 100%.
inline std::vector<AdvExample> filter_source_successful(const Detector& source,
                                                        const std::vector<AdvExample>& aes) {
    std::vector<AdvExample> kept;
    for (const auto& ae : aes)
        if (source.predict(ae.x_adv) == Kind::benign) kept.push_back(ae);
    return kept;
}

inline TransferMatrix transferability_matrix(
    const std::vector<Detector>& detectors,
    const std::vector<std::vector<AdvExample>>& source_sets) {
    if (detectors.empty()) throw EmptySet("transferability_matrix: no detectors");
    if (source_sets.size() != detectors.size())
        throw ProtocolError("transferability_matrix: one AE set per source detector required");
    for (std::size_t s = 0; s < detectors.size(); ++s) {
        if (source_sets[s].empty())
            throw EmptySet("transferability_matrix: empty AE set for source " +
                           detectors[s].name());
        for (const auto& ae : source_sets[s])
            if (detectors[s].predict(ae.x_adv) != Kind::benign)
                throw ProtocolError(
                    "transferability_matrix: AE set for source " + detectors[s].name() +
                    " contains source failures; filter before building the matrix");
    }

    TransferMatrix tm;
    for (const auto& d : detectors) tm.detectors.push_back(d.name());
    tm.rate.assign(detectors.size(), std::vector<double>(detectors.size(), 0.0));
    for (std::size_t s = 0; s < detectors.size(); ++s)
        for (std::size_t t = 0; t < detectors.size(); ++t)
            tm.rate[s][t] = attack_success_rate(detectors[t], source_sets[s]);
    return tm;
}

namespace detail_eval {

inline Histogram histogram(const std::vector<double>& values, double hi) {
    Histogram h;
    h.lo = 0.0;
    h.hi = hi;
    h.counts.assign(32, 0);
    if (hi <= 0.0) {
        h.counts[0] = values.size();
        return h;
    }
    for (double v : values) {
        auto bin = static_cast<std::size_t>(v / hi * 32.0);
        if (bin >= 32) bin = 31;
        ++h.counts[bin];
    }
    return h;
}

inline std::vector<double> norm_values(const std::vector<AdvExample>& aes, int which) {
    std::vector<double> out;
    out.reserve(aes.size());
    for (const auto& ae : aes)
        out.push_back(which == 0 ? static_cast<double>(ae.norms.l0)
                                 : which == 1 ? ae.norms.l2 : ae.norms.linf);
    return out;
}

}  // namespace detail_eval

inline DistortionStats distortion_stats(const std::vector<AdvExample>& untargeted_set,
                                        const std::vector<AdvExample>& targeted_set) {
    if (untargeted_set.empty() || targeted_set.empty())
        throw EmptySet("distortion_stats: both sets must be non-empty");

    auto mean_l2 = [](const std::vector<AdvExample>& aes) {
        double sum = 0.0;
        for (const auto& ae : aes) sum += ae.norms.l2;
        return sum / static_cast<double>(aes.size());
    };

    DistortionStats st;
    st.untargeted_mean_l2 = mean_l2(untargeted_set);
    st.targeted_mean_l2 = mean_l2(targeted_set);
    if (st.targeted_mean_l2 > 0.0) {
        st.ratio = st.untargeted_mean_l2 / st.targeted_mean_l2;
        st.ratio_finite = true;
    } else {
        st.ratio = 0.0;
        st.ratio_finite = false;
    }

    for (int which = 0; which < 3; ++which) {
        const auto uv = detail_eval::norm_values(untargeted_set, which);
        const auto tv = detail_eval::norm_values(targeted_set, which);
        double hi = 0.0;
        for (double v : uv) hi = std::max(hi, v);
        for (double v : tv) hi = std::max(hi, v);
        Histogram hu = detail_eval::histogram(uv, hi);
        Histogram ht = detail_eval::histogram(tv, hi);
        if (which == 0) { st.untargeted_l0 = hu; st.targeted_l0 = ht; }
        else if (which == 1) { st.untargeted_l2 = hu; st.targeted_l2 = ht; }
        else { st.untargeted_linf = hu; st.targeted_linf = ht; }
    }
    return st;
}

inline LossTraceSummary loss_trace_summary(const std::vector<AdvExample>& adv_set) {
    LossTraceSummary summary;
    std::vector<double> decays;
    std::size_t first_max = 0;
    for (const auto& ae : adv_set) {
        if (ae.loss_trace.empty()) continue;
        LossTraceSummary::Row row;
        row.id = ae.id;
        row.first = ae.loss_trace.front().second;
        row.last = ae.loss_trace.back().second;
        row.iterations = ae.iterations;
        row.success = ae.success;
        summary.rows.push_back(row);

        double max_l = 0.0;
        for (const auto& [t, l] : ae.loss_trace) max_l = std::max(max_l, l);
        if (row.first >= max_l) ++first_max;
        if (ae.success)
            decays.push_back(row.last > 0.0 ? row.first / row.last : 1e300);
    }
    if (summary.rows.empty()) throw EmptySet("loss_trace_summary: all traces empty");

    summary.fraction_first_is_max =
        static_cast<double>(first_max) / static_cast<double>(summary.rows.size());
    if (!decays.empty()) {
        std::sort(decays.begin(), decays.end());
        const std::size_t n = decays.size();
        summary.median_decay =
            n % 2 ? decays[n / 2] : 0.5 * (decays[n / 2 - 1] + decays[n / 2]);
    }
    return summary;
}

}  // namespace malimg
