#pragma once

#include <string>
#include <variant>
#include <vector>

#include "malimg/detectors/cnn.hpp"
#include "malimg/detectors/common.hpp"
#include "malimg/detectors/forest.hpp"
#include "malimg/detectors/svm.hpp"
#include "malimg/wavelet.hpp"

namespace malimg {

// One trained discriminator behind the shared prediction interface. All
// detectors consume the raw 64x64 byteplot tensor; wavelet variants derive
// their own features from it.
struct Detector {
    Algorithm algorithm = Algorithm::cnn;
    PipelineTag tag = PipelineTag::raw;
    int wavelet_levels = 2;
    std::variant<CnnModel, SvmModel, RfModel> model;

    std::string name() const {
        std::string base = algorithm_name(algorithm);
        return tag == PipelineTag::wavelet ? "wavelet-" + base : base;
    }

    const CnnModel& cnn() const { return std::get<CnnModel>(model); }
    const SvmModel& svm() const { return std::get<SvmModel>(model); }
    const RfModel& rf() const { return std::get<RfModel>(model); }

    double malware_probability(const PixelTensor& x) const {
        const DetectorInput input = detector_input_for(algorithm, tag, x, wavelet_levels);
        switch (algorithm) {
            case Algorithm::cnn:
                return cnn_forward(cnn(), input).second[kind_index(Kind::malware)];
            case Algorithm::svm:
                return svm_decision(svm(), input).second;
            case Algorithm::rf:
                return rf_predict(rf(), input).probability;
        }
        return 0.0;
    }

    // Native label rule per detector family; every tie reads benign.
    Kind predict(const PixelTensor& x) const {
        const DetectorInput input = detector_input_for(algorithm, tag, x, wavelet_levels);
        switch (algorithm) {
            case Algorithm::cnn: {
                const auto probs = cnn_forward(cnn(), input).second;
                return probs[1] > probs[0] ? Kind::malware : Kind::benign;
            }
            case Algorithm::svm:
                return svm_decision(svm(), input).first > 0.0 ? Kind::malware : Kind::benign;
            case Algorithm::rf:
                return rf_predict(rf(), input).label;
        }
        return Kind::benign;
    }
};

// Trains one (algorithm, pipeline) pair from attack-space tensors.
inline Detector train_detector(Algorithm algorithm, PipelineTag tag,
                               const std::vector<std::pair<PixelTensor, ClassLabel>>& samples,
                               const TrainConfig& cfg, std::uint64_t seed,
                               int wavelet_levels = 2) {
    validate_train_config(cfg);
    std::vector<LabeledInput> inputs;
    inputs.reserve(samples.size());
    for (const auto& [tensor, label] : samples)
        inputs.emplace_back(detector_input_for(algorithm, tag, tensor, wavelet_levels), label);

    Detector det;
    det.algorithm = algorithm;
    det.tag = tag;
    det.wavelet_levels = wavelet_levels;
    switch (algorithm) {
        case Algorithm::cnn:
            det.model = train_cnn(inputs, cfg.cnn, seed);
            break;
        case Algorithm::svm: {
            SvmModel m = train_svm(inputs, cfg.svm);
            m.layout_version = tag == PipelineTag::wavelet ? kWaveletLayoutVersion : "raw-v1";
            det.model = std::move(m);
            break;
        }
        case Algorithm::rf: {
            RfModel m = train_rf(inputs, cfg.rf, seed);
            m.layout_version = tag == PipelineTag::wavelet ? kWaveletLayoutVersion : "raw-v1";
            det.model = std::move(m);
            break;
        }
    }
    return det;
}

inline double clean_accuracy(const Detector& det,
                             const std::vector<std::pair<PixelTensor, ClassLabel>>& samples) {
    if (samples.empty()) throw EmptySet("clean_accuracy: no samples");
    std::size_t correct = 0;
    for (const auto& [tensor, label] : samples)
        if (det.predict(tensor) == label.kind) ++correct;
    return 100.0 * static_cast<double>(correct) / static_cast<double>(samples.size());
}

}  // namespace malimg
