#pragma once

#include <string>
#include <variant>
#include <vector>

#include "malimg/byteplot.hpp"
#include "malimg/corpus.hpp"
#include "malimg/errors.hpp"
#include "malimg/wavelet.hpp"

namespace malimg {

enum class PipelineTag { raw, wavelet };
enum class Algorithm { cnn, svm, rf };

inline const char* pipeline_name(PipelineTag t) {
    return t == PipelineTag::raw ? "raw" : "wavelet";
}

inline const char* algorithm_name(Algorithm a) {
    switch (a) {
        case Algorithm::cnn: return "cnn";
        case Algorithm::svm: return "svm";
        case Algorithm::rf: return "rf";
    }
    return "?";
}

// Class index convention used by every detector: 0 = benign, 1 = malware.
inline int kind_index(Kind k) { return k == Kind::benign ? 0 : 1; }

// Sample as a detector consumes it: either a 2-D tensor (CNN) or a flat
// feature vector (SVM, RF), plus the pipeline that produced it.
struct DetectorInput {
    PipelineTag tag = PipelineTag::raw;
    std::variant<PixelTensor, FeatureVector> payload;

    bool is_tensor() const { return std::holds_alternative<PixelTensor>(payload); }

    const PixelTensor& tensor() const {
        if (!is_tensor()) throw ShapeError("detector input holds features, not a tensor");
        return std::get<PixelTensor>(payload);
    }
    const FeatureVector& features() const {
        if (is_tensor()) throw ShapeError("detector input holds a tensor, not features");
        return std::get<FeatureVector>(payload);
    }
};

// Maps the attack-space tensor (raw 64x64 byteplot in [0,1]) onto each
// detector's input space. Wavelet detectors always recompute their features
// from the tensor they are given.
inline DetectorInput detector_input_for(Algorithm alg, PipelineTag tag, const PixelTensor& x,
                                        int wavelet_levels = 2) {
    DetectorInput in;
    in.tag = tag;
    if (alg == Algorithm::cnn) {
        if (tag == PipelineTag::raw) {
            in.payload = x;
        } else {
            in.payload = wavelet_plane(haar_dwt2(x, wavelet_levels));
        }
    } else {
        if (tag == PipelineTag::raw) {
            FeatureVector fv;
            fv.provenance = Provenance::raw_pixels;
            fv.values = x.values;
            in.payload = std::move(fv);
        } else {
            in.payload = wavelet_features(x, wavelet_levels);
        }
    }
    return in;
}

struct CnnConfig {
    double learning_rate = 0.05;
    int epochs = 12;
    int batch_size = 4;
    double dropout = 0.5;
};

enum class SvmKernel { linear, rbf };

struct SvmConfig {
    double c = 100.0;
    SvmKernel kernel = SvmKernel::rbf;
    double gamma = 0.1;
    double tolerance = 1e-3;
    long max_updates = 2000000;  // SMO update cap before ConvergenceError
};

struct RfConfig {
    int trees = 100;
    int max_depth = 16;
    int min_leaf = 1;
    int mtry = 0;  // features per split; 0 = floor(sqrt(d))
    int max_nodes = 1000;
};

struct TrainConfig {
    CnnConfig cnn;
    SvmConfig svm;
    RfConfig rf;
    std::uint64_t seed = 0;
};

inline void validate_train_config(const TrainConfig& cfg) {
    if (cfg.cnn.learning_rate <= 0 || cfg.cnn.epochs <= 0 || cfg.cnn.batch_size <= 0)
        throw ConfigError("cnn hyperparameters must be positive");
    if (!(cfg.cnn.dropout >= 0.0 && cfg.cnn.dropout < 1.0))
        throw ConfigError("dropout must lie in [0,1)");
    if (cfg.svm.c <= 0 || cfg.svm.gamma <= 0 || cfg.svm.tolerance <= 0)
        throw ConfigError("svm hyperparameters must be positive");
    if (cfg.rf.trees <= 0 || cfg.rf.max_depth <= 0 || cfg.rf.min_leaf <= 0 ||
        cfg.rf.mtry < 0 || cfg.rf.max_nodes < 3)
        throw ConfigError("rf hyperparameters out of range");
}

using LabeledInput = std::pair<DetectorInput, ClassLabel>;

inline void require_both_classes(const std::vector<LabeledInput>& train, const char* who) {
    bool has_malware = false, has_benign = false;
    for (const auto& [input, label] : train) {
        (label.kind == Kind::malware ? has_malware : has_benign) = true;
        if (has_malware && has_benign) return;
    }
    throw DegenerateData(std::string(who) + ": training data must contain both classes");
}

}  // namespace malimg
