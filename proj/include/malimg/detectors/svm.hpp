#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "malimg/detectors/common.hpp"
#include "malimg/errors.hpp"

namespace malimg {

// Soft-margin kernel SVM trained by SMO on the dual. Inputs are scaled by
// 1/sqrt(d) before kerneling so the rbf width is dimension independent; the
// scale is stored and applied identically at decision time.
struct SvmModel {
    SvmKernel kernel = SvmKernel::rbf;
    double gamma = 0.1;
    double c = 100.0;
    double rho = 0.0;           // decision: sum_i alpha_i y_i K(x, x_i) - rho
    double feature_scale = 1.0;
    std::size_t feature_dim = 0;
    std::vector<std::vector<double>> support_vectors;  // already scaled
    std::vector<double> alpha;    // alpha_i of each support vector, in (0, C]
    std::vector<double> alpha_y;  // alpha_i * y_i
    std::vector<std::int8_t> sv_label;  // +1 malware, -1 benign
    double max_kkt_violation = 0.0;     // on training data at convergence
    long smo_updates = 0;
    PipelineTag tag = PipelineTag::raw;
    std::string layout_version;
};

class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& msg, SvmModel best)
        : Error("ConvergenceError", msg), best_so_far(std::move(best)) {}

    SvmModel best_so_far;
};

namespace detail_svm {

inline double kernel_eval(SvmKernel kernel, double gamma, const std::vector<double>& a,
                          const std::vector<double>& b) {
    if (kernel == SvmKernel::linear) {
        double dot = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
        return dot;
    }
    double d2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        d2 += d * d;
    }
    return std::exp(-gamma * d2);
}

inline std::vector<double> scaled_features(const DetectorInput& input, double scale) {
    const std::vector<double>& raw =
        input.is_tensor() ? input.tensor().values : input.features().values;
    std::vector<double> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] * scale;
    return out;
}

}  // namespace detail_svm

inline std::pair<double, double> svm_decision(const SvmModel& model, const DetectorInput& x);

inline SvmModel train_svm(const std::vector<LabeledInput>& train, const SvmConfig& cfg) {
    if (train.empty()) throw DegenerateData("train_svm: empty training set");
    require_both_classes(train, "train_svm");
    if (cfg.c <= 0 || cfg.gamma <= 0 || cfg.tolerance <= 0)
        throw ConfigError("train_svm: hyperparameters must be positive");

    const std::size_t n = train.size();
    const std::size_t dim = (train.front().first.is_tensor()
                                 ? train.front().first.tensor().size()
                                 : train.front().first.features().dimension());
    if (dim == 0) throw ShapeError("train_svm: zero-dimensional features");

    SvmModel model;
    model.kernel = cfg.kernel;
    model.gamma = cfg.gamma;
    model.c = cfg.c;
    model.feature_dim = dim;
    model.feature_scale = 1.0 / std::sqrt(static_cast<double>(dim));
    model.tag = train.front().first.tag;

    std::vector<std::vector<double>> x(n);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& [input, label] = train[i];
        if (input.tag != model.tag) throw ShapeError("train_svm: mixed pipeline tags");
        x[i] = detail_svm::scaled_features(input, model.feature_scale);
        if (x[i].size() != dim) throw ShapeError("train_svm: inconsistent feature dimension");
        y[i] = label.kind == Kind::malware ? 1.0 : -1.0;
    }

    // Dense kernel matrix; training sets here are small enough to hold it.
    std::vector<double> K(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            const double v = detail_svm::kernel_eval(model.kernel, model.gamma, x[i], x[j]);
            K[i * n + j] = v;
            K[j * n + i] = v;
        }
    }

    std::vector<double> alpha(n, 0.0);
    std::vector<double> f(n, 0.0);  // f_i = sum_j alpha_j y_j K_ij + b
    double b = 0.0;
    const double C = cfg.c;
    const double tol = cfg.tolerance;
    const double step_eps = 1e-12;
    long updates = 0;
    bool capped = false;

    auto take_step = [&](std::size_t i1, std::size_t i2) -> bool {
        if (i1 == i2) return false;
        const double a1 = alpha[i1], a2 = alpha[i2];
        const double y1 = y[i1], y2 = y[i2];
        const double E1 = f[i1] - y1, E2 = f[i2] - y2;
        const double s = y1 * y2;
        double L, H;
        if (s < 0) {
            L = std::max(0.0, a2 - a1);
            H = std::min(C, C + a2 - a1);
        } else {
            L = std::max(0.0, a1 + a2 - C);
            H = std::min(C, a1 + a2);
        }
        if (L >= H) return false;
        const double k11 = K[i1 * n + i1], k22 = K[i2 * n + i2], k12 = K[i1 * n + i2];
        const double eta = k11 + k22 - 2.0 * k12;
        double a2_new;
        if (eta > 1e-15) {
            a2_new = a2 + y2 * (E1 - E2) / eta;
            a2_new = std::clamp(a2_new, L, H);
        } else {
            // Flat direction: evaluate the dual objective at both clip ends.
            const double f1 = y1 * (E1 + b) - a1 * k11 - s * a2 * k12;
            const double f2 = y2 * (E2 + b) - s * a1 * k12 - a2 * k22;
            const double L1 = a1 + s * (a2 - L);
            const double H1 = a1 + s * (a2 - H);
            const double objL = L1 * f1 + L * f2 + 0.5 * L1 * L1 * k11 + 0.5 * L * L * k22 +
                                s * L * L1 * k12;
            const double objH = H1 * f1 + H * f2 + 0.5 * H1 * H1 * k11 + 0.5 * H * H * k22 +
                                s * H * H1 * k12;
            if (objL < objH - 1e-12) a2_new = L;
            else if (objH < objL - 1e-12) a2_new = H;
            else return false;
        }
        if (std::abs(a2_new - a2) < step_eps * (a2_new + a2 + step_eps)) return false;
        const double a1_new = a1 + s * (a2 - a2_new);

        const double d1 = y1 * (a1_new - a1), d2 = y2 * (a2_new - a2);
        double b1 = b - E1 - d1 * k11 - d2 * k12;
        double b2 = b - E2 - d1 * k12 - d2 * k22;
        double b_new;
        if (a1_new > 0 && a1_new < C) b_new = b1;
        else if (a2_new > 0 && a2_new < C) b_new = b2;
        else b_new = 0.5 * (b1 + b2);

        for (std::size_t j = 0; j < n; ++j)
            f[j] += d1 * K[i1 * n + j] + d2 * K[i2 * n + j] + (b_new - b);
        alpha[i1] = a1_new;
        alpha[i2] = a2_new;
        b = b_new;
        ++updates;
        return true;
    };

    auto examine = [&](std::size_t i2) -> bool {
        const double y2 = y[i2], a2 = alpha[i2];
        const double E2 = f[i2] - y2;
        const double r2 = E2 * y2;
        if (!((r2 < -tol && a2 < C) || (r2 > tol && a2 > 0))) return false;

        // Best second choice: largest |E1 - E2| among non-bound points.
        std::size_t best = n;
        double best_gap = -1.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i2 || alpha[j] <= 0 || alpha[j] >= C) continue;
            const double gap = std::abs((f[j] - y[j]) - E2);
            if (gap > best_gap) {
                best_gap = gap;
                best = j;
            }
        }
        if (best < n && take_step(best, i2)) return true;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i2 || alpha[j] <= 0 || alpha[j] >= C) continue;
            if (take_step(j, i2)) return true;
        }
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i2) continue;
            if (take_step(j, i2)) return true;
        }
        return false;
    };

    bool examine_all = true;
    while (true) {
        std::size_t changed = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!examine_all && (alpha[i] <= 0 || alpha[i] >= C)) continue;
            if (examine(i)) ++changed;
            if (updates >= cfg.max_updates) {
                capped = true;
                break;
            }
        }
        if (capped) break;
        if (examine_all) {
            if (changed == 0) break;
            examine_all = false;
        } else if (changed == 0) {
            examine_all = true;
        }
    }

    // KKT violations on training data, for the convergence contract.
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double yf = y[i] * f[i];
        double v = 0.0;
        if (alpha[i] <= 0) v = std::max(0.0, 1.0 - yf);
        else if (alpha[i] >= C) v = std::max(0.0, yf - 1.0);
        else v = std::abs(yf - 1.0);
        worst = std::max(worst, v);
    }
    model.max_kkt_violation = worst;
    model.smo_updates = updates;
    model.rho = -b;
    for (std::size_t i = 0; i < n; ++i) {
        if (alpha[i] > 1e-12) {
            model.support_vectors.push_back(x[i]);
            model.alpha.push_back(alpha[i]);
            model.alpha_y.push_back(alpha[i] * y[i]);
            model.sv_label.push_back(y[i] > 0 ? 1 : -1);
        }
    }

    if (capped)
        throw ConvergenceError("train_svm: SMO update cap reached", std::move(model));
    return model;
}

// Decision score and its logistic squashing. Score > 0 reads malware.
inline std::pair<double, double> svm_decision(const SvmModel& model, const DetectorInput& x) {
    const std::vector<double> q = detail_svm::scaled_features(x, model.feature_scale);
    if (q.size() != model.feature_dim)
        throw ShapeError("svm_decision: feature dimension mismatch");
    double score = -model.rho;
    for (std::size_t i = 0; i < model.support_vectors.size(); ++i)
        score += model.alpha_y[i] *
                 detail_svm::kernel_eval(model.kernel, model.gamma, q, model.support_vectors[i]);
    const double probability = 1.0 / (1.0 + std::exp(-score));
    return {score, probability};
}

}  // namespace malimg
