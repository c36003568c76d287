#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <memory>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "malimg/detectors/common.hpp"
#include "malimg/errors.hpp"
#include "malimg/rng.hpp"

namespace malimg {

// Small byteplot CNN, also the surrogate the attacks differentiate through:
// conv 3x3x8 / ReLU / maxpool 2 / conv 3x3x16 / ReLU / maxpool 2 /
// dense 64 / ReLU / dropout / dense 2 / softmax.
struct CnnModel {
    static constexpr int kInput = 64;
    static constexpr int kC1 = 8;
    static constexpr int kC2 = 16;
    static constexpr int kHidden = 64;
    static constexpr int kClasses = 2;
    static constexpr int kFlat = kC2 * (kInput / 4) * (kInput / 4);  // 16*16*16

    PipelineTag tag = PipelineTag::raw;
    int input_h = kInput, input_w = kInput;
    double dropout = 0.5;
    std::uint64_t seed = 0;

    std::vector<double> w1, b1;  // conv1: [C1][1][3][3], [C1]
    std::vector<double> w2, b2;  // conv2: [C2][C1][3][3], [C2]
    std::vector<double> w3, b3;  // fc1:   [kHidden][kFlat], [kHidden]
    std::vector<double> w4, b4;  // fc2:   [kClasses][kHidden], [kClasses]

    std::vector<double> epoch_loss;  // full-set CE after each epoch, dropout off

    std::vector<std::string> layer_spec() const {
        return {"conv3x3x8", "relu", "maxpool2", "conv3x3x16", "relu",
                "maxpool2", "dense64", "relu", "dropout", "dense2", "softmax"};
    }
};

namespace detail_cnn {

inline void conv3x3_forward(const double* in, int cin, int h, int w, const double* wt,
                            const double* bias, int cout, double* out) {
    const int plane = h * w;
    for (int oc = 0; oc < cout; ++oc) {
        double* op = out + oc * plane;
        const double bv = bias[oc];
        for (int i = 0; i < plane; ++i) op[i] = bv;
        for (int ic = 0; ic < cin; ++ic) {
            const double* ip = in + ic * plane;
            const double* wp = wt + (oc * cin + ic) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    const double wv = wp[ky * 3 + kx];
                    const int y0 = std::max(0, 1 - ky), y1 = std::min(h, h + 1 - ky);
                    const int x0 = std::max(0, 1 - kx), x1 = std::min(w, w + 1 - kx);
                    for (int y = y0; y < y1; ++y) {
                        double* orow = op + y * w;
                        const double* irow = ip + (y + ky - 1) * w + (kx - 1);
                        for (int x = x0; x < x1; ++x) orow[x] += wv * irow[x];
                    }
                }
            }
        }
    }
}

inline void conv3x3_backward_input(const double* dout, int cout, int h, int w,
                                   const double* wt, int cin, double* din) {
    const int plane = h * w;
    std::memset(din, 0, sizeof(double) * static_cast<std::size_t>(cin) * plane);
    for (int oc = 0; oc < cout; ++oc) {
        const double* dop = dout + oc * plane;
        for (int ic = 0; ic < cin; ++ic) {
            double* dip = din + ic * plane;
            const double* wp = wt + (oc * cin + ic) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    const double wv = wp[ky * 3 + kx];
                    const int y0 = std::max(0, 1 - ky), y1 = std::min(h, h + 1 - ky);
                    const int x0 = std::max(0, 1 - kx), x1 = std::min(w, w + 1 - kx);
                    for (int y = y0; y < y1; ++y) {
                        const double* drow = dop + y * w;
                        double* irow = dip + (y + ky - 1) * w + (kx - 1);
                        for (int x = x0; x < x1; ++x) irow[x] += wv * drow[x];
                    }
                }
            }
        }
    }
}

inline void conv3x3_backward_params(const double* in, const double* dout, int cin, int cout,
                                    int h, int w, double* dw, double* db) {
    const int plane = h * w;
    for (int oc = 0; oc < cout; ++oc) {
        const double* dop = dout + oc * plane;
        double acc = 0.0;
        for (int i = 0; i < plane; ++i) acc += dop[i];
        db[oc] += acc;
        for (int ic = 0; ic < cin; ++ic) {
            const double* ip = in + ic * plane;
            double* wp = dw + (oc * cin + ic) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    const int y0 = std::max(0, 1 - ky), y1 = std::min(h, h + 1 - ky);
                    const int x0 = std::max(0, 1 - kx), x1 = std::min(w, w + 1 - kx);
                    double sum = 0.0;
                    for (int y = y0; y < y1; ++y) {
                        const double* drow = dop + y * w;
                        const double* irow = ip + (y + ky - 1) * w + (kx - 1);
                        for (int x = x0; x < x1; ++x) sum += drow[x] * irow[x];
                    }
                    wp[ky * 3 + kx] += sum;
                }
            }
        }
    }
}

inline void relu_forward(double* v, std::uint8_t* mask, int n) {
    for (int i = 0; i < n; ++i) {
        mask[i] = v[i] > 0.0;
        if (!mask[i]) v[i] = 0.0;
    }
}

inline void relu_backward(double* dv, const std::uint8_t* mask, int n) {
    for (int i = 0; i < n; ++i)
        if (!mask[i]) dv[i] = 0.0;
}

inline void maxpool2_forward(const double* in, int ch, int h, int w, double* out, int* arg) {
    const int oh = h / 2, ow = w / 2;
    for (int c = 0; c < ch; ++c) {
        const double* ip = in + c * h * w;
        double* op = out + c * oh * ow;
        int* ap = arg + c * oh * ow;
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                const int base = (2 * y) * w + 2 * x;
                int best = base;
                double bv = ip[base];
                if (ip[base + 1] > bv) { bv = ip[base + 1]; best = base + 1; }
                if (ip[base + w] > bv) { bv = ip[base + w]; best = base + w; }
                if (ip[base + w + 1] > bv) { bv = ip[base + w + 1]; best = base + w + 1; }
                op[y * ow + x] = bv;
                ap[y * ow + x] = best;
            }
        }
    }
}

inline void maxpool2_backward(const double* dout, const int* arg, int ch, int h, int w,
                              double* din) {
    const int oh = h / 2, ow = w / 2;
    std::memset(din, 0, sizeof(double) * static_cast<std::size_t>(ch) * h * w);
    for (int c = 0; c < ch; ++c) {
        const double* dop = dout + c * oh * ow;
        const int* ap = arg + c * oh * ow;
        double* dip = din + c * h * w;
        for (int i = 0; i < oh * ow; ++i) dip[ap[i]] += dop[i];
    }
}

inline void dense_forward(const double* in, int nin, const double* wt, const double* bias,
                          int nout, double* out) {
    for (int o = 0; o < nout; ++o) {
        const double* wr = wt + o * nin;
        double acc = bias[o];
        for (int i = 0; i < nin; ++i) acc += wr[i] * in[i];
        out[o] = acc;
    }
}

inline void dense_backward_input(const double* dout, const double* wt, int nin, int nout,
                                 double* din) {
    std::memset(din, 0, sizeof(double) * static_cast<std::size_t>(nin));
    for (int o = 0; o < nout; ++o) {
        const double* wr = wt + o * nin;
        const double dv = dout[o];
        for (int i = 0; i < nin; ++i) din[i] += dv * wr[i];
    }
}

inline void dense_backward_params(const double* in, const double* dout, int nin, int nout,
                                  double* dw, double* db) {
    for (int o = 0; o < nout; ++o) {
        const double dv = dout[o];
        db[o] += dv;
        double* wr = dw + o * nin;
        for (int i = 0; i < nin; ++i) wr[i] += dv * in[i];
    }
}

inline void softmax2(const double* logits, double* probs) {
    const double m = std::max(logits[0], logits[1]);
    const double e0 = std::exp(logits[0] - m), e1 = std::exp(logits[1] - m);
    const double z = e0 + e1;
    probs[0] = e0 / z;
    probs[1] = e1 / z;
}

}  // namespace detail_cnn

// Reusable activation caches; one per concurrent evaluation stream.
struct CnnScratch {
    static constexpr int N = CnnModel::kInput;
    std::array<double, N * N> a0;
    std::array<double, CnnModel::kC1 * N * N> a1;
    std::array<std::uint8_t, CnnModel::kC1 * N * N> m1;
    std::array<double, CnnModel::kC1 * (N / 2) * (N / 2)> p1;
    std::array<int, CnnModel::kC1 * (N / 2) * (N / 2)> g1;
    std::array<double, CnnModel::kC2 * (N / 2) * (N / 2)> a2;
    std::array<std::uint8_t, CnnModel::kC2 * (N / 2) * (N / 2)> m2;
    std::array<double, CnnModel::kFlat> p2;
    std::array<int, CnnModel::kFlat> g2;
    std::array<double, CnnModel::kHidden> f1;
    std::array<std::uint8_t, CnnModel::kHidden> fm;
    std::array<double, CnnModel::kHidden> drop;  // inverted dropout scale per unit
    std::array<double, CnnModel::kClasses> logits;
    std::array<double, CnnModel::kClasses> probs;

    // backward buffers
    std::array<double, CnnModel::kHidden> d_f1;
    std::array<double, CnnModel::kFlat> d_p2;
    std::array<double, CnnModel::kC2 * (N / 2) * (N / 2)> d_a2;
    std::array<double, CnnModel::kC1 * (N / 2) * (N / 2)> d_p1;
    std::array<double, CnnModel::kC1 * N * N> d_a1;
    std::array<double, N * N> d_in;
};

struct CnnGrads {
    std::vector<double> w1, b1, w2, b2, w3, b3, w4, b4;

    explicit CnnGrads(const CnnModel& m)
        : w1(m.w1.size(), 0.0), b1(m.b1.size(), 0.0), w2(m.w2.size(), 0.0),
          b2(m.b2.size(), 0.0), w3(m.w3.size(), 0.0), b3(m.b3.size(), 0.0),
          w4(m.w4.size(), 0.0), b4(m.b4.size(), 0.0) {}

    void zero() {
        auto z = [](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); };
        z(w1); z(b1); z(w2); z(b2); z(w3); z(b3); z(w4); z(b4);
    }
};

inline void cnn_init_params(CnnModel& m, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "cnn-init"));
    auto he_fill = [&rng](std::vector<double>& v, std::size_t n, int fan_in) {
        v.resize(n);
        const double scale = std::sqrt(2.0 / fan_in);
        for (auto& x : v) x = rng.normal() * scale;
    };
    he_fill(m.w1, static_cast<std::size_t>(CnnModel::kC1) * 9, 9);
    he_fill(m.w2, static_cast<std::size_t>(CnnModel::kC2) * CnnModel::kC1 * 9,
            CnnModel::kC1 * 9);
    he_fill(m.w3, static_cast<std::size_t>(CnnModel::kHidden) * CnnModel::kFlat,
            CnnModel::kFlat);
    he_fill(m.w4, static_cast<std::size_t>(CnnModel::kClasses) * CnnModel::kHidden,
            CnnModel::kHidden);
    m.b1.assign(CnnModel::kC1, 0.0);
    m.b2.assign(CnnModel::kC2, 0.0);
    m.b3.assign(CnnModel::kHidden, 0.0);
    m.b4.assign(CnnModel::kClasses, 0.0);
}

namespace detail_cnn {

inline void check_input(const CnnModel& m, const DetectorInput& x) {
    if (!x.is_tensor()) throw ShapeError("cnn expects a tensor input");
    if (x.tag != m.tag) throw ShapeError("cnn pipeline tag mismatch");
    const auto& t = x.tensor();
    if (static_cast<int>(t.height) != m.input_h || static_cast<int>(t.width) != m.input_w)
        throw ShapeError("cnn input shape mismatch");
}

// Forward pass. When training, `drop_rng` drives the inverted-dropout mask;
// at inference the mask is identity. The unit-range input is centered before
// the first convolution; the shift is constant, so input gradients are
// unaffected.
inline void forward(const CnnModel& m, const double* x, CnnScratch& s, bool train,
                    Rng* drop_rng) {
    constexpr int N = CnnModel::kInput;
    for (int i = 0; i < N * N; ++i) s.a0[i] = x[i] - 0.5;

    conv3x3_forward(s.a0.data(), 1, N, N, m.w1.data(), m.b1.data(), CnnModel::kC1,
                    s.a1.data());
    relu_forward(s.a1.data(), s.m1.data(), CnnModel::kC1 * N * N);
    maxpool2_forward(s.a1.data(), CnnModel::kC1, N, N, s.p1.data(), s.g1.data());

    conv3x3_forward(s.p1.data(), CnnModel::kC1, N / 2, N / 2, m.w2.data(), m.b2.data(),
                    CnnModel::kC2, s.a2.data());
    relu_forward(s.a2.data(), s.m2.data(), CnnModel::kC2 * (N / 2) * (N / 2));
    maxpool2_forward(s.a2.data(), CnnModel::kC2, N / 2, N / 2, s.p2.data(), s.g2.data());

    dense_forward(s.p2.data(), CnnModel::kFlat, m.w3.data(), m.b3.data(), CnnModel::kHidden,
                  s.f1.data());
    relu_forward(s.f1.data(), s.fm.data(), CnnModel::kHidden);
    if (train && m.dropout > 0.0) {
        const double keep = 1.0 - m.dropout;
        for (int i = 0; i < CnnModel::kHidden; ++i) {
            s.drop[i] = (drop_rng->uniform01() < keep) ? 1.0 / keep : 0.0;
            s.f1[i] *= s.drop[i];
        }
    } else {
        s.drop.fill(1.0);
    }

    dense_forward(s.f1.data(), CnnModel::kHidden, m.w4.data(), m.b4.data(),
                  CnnModel::kClasses, s.logits.data());
    softmax2(s.logits.data(), s.probs.data());
}

// Backward from a logit-space gradient. Either or both of `grads` (parameter
// gradients, accumulated) and `dinput` may be requested.
inline void backward(const CnnModel& m, CnnScratch& s, const double* dlogits, CnnGrads* grads,
                     double* dinput) {
    constexpr int N = CnnModel::kInput;
    if (grads)
        dense_backward_params(s.f1.data(), dlogits, CnnModel::kHidden, CnnModel::kClasses,
                              grads->w4.data(), grads->b4.data());
    dense_backward_input(dlogits, m.w4.data(), CnnModel::kHidden, CnnModel::kClasses,
                         s.d_f1.data());
    for (int i = 0; i < CnnModel::kHidden; ++i) s.d_f1[i] *= s.drop[i];
    relu_backward(s.d_f1.data(), s.fm.data(), CnnModel::kHidden);

    if (grads)
        dense_backward_params(s.p2.data(), s.d_f1.data(), CnnModel::kFlat, CnnModel::kHidden,
                              grads->w3.data(), grads->b3.data());
    dense_backward_input(s.d_f1.data(), m.w3.data(), CnnModel::kFlat, CnnModel::kHidden,
                         s.d_p2.data());

    maxpool2_backward(s.d_p2.data(), s.g2.data(), CnnModel::kC2, N / 2, N / 2, s.d_a2.data());
    relu_backward(s.d_a2.data(), s.m2.data(), CnnModel::kC2 * (N / 2) * (N / 2));
    if (grads)
        conv3x3_backward_params(s.p1.data(), s.d_a2.data(), CnnModel::kC1, CnnModel::kC2,
                                N / 2, N / 2, grads->w2.data(), grads->b2.data());
    conv3x3_backward_input(s.d_a2.data(), CnnModel::kC2, N / 2, N / 2, m.w2.data(),
                           CnnModel::kC1, s.d_p1.data());

    maxpool2_backward(s.d_p1.data(), s.g1.data(), CnnModel::kC1, N, N, s.d_a1.data());
    relu_backward(s.d_a1.data(), s.m1.data(), CnnModel::kC1 * N * N);
    if (grads)
        conv3x3_backward_params(s.a0.data(), s.d_a1.data(), 1, CnnModel::kC1, N, N,
                                grads->w1.data(), grads->b1.data());
    if (dinput) {
        conv3x3_backward_input(s.d_a1.data(), CnnModel::kC1, N, N, m.w1.data(), 1,
                               s.d_in.data());
        std::memcpy(dinput, s.d_in.data(), sizeof(double) * N * N);
    }
}

}  // namespace detail_cnn

// Logits and softmax probabilities, dropout disabled.
inline std::pair<std::array<double, 2>, std::array<double, 2>> cnn_forward(
    const CnnModel& m, const DetectorInput& x, CnnScratch& scratch) {
    detail_cnn::check_input(m, x);
    detail_cnn::forward(m, x.tensor().values.data(), scratch, false, nullptr);
    return {scratch.logits, scratch.probs};
}

inline std::pair<std::array<double, 2>, std::array<double, 2>> cnn_forward(
    const CnnModel& m, const DetectorInput& x) {
    auto scratch = std::make_unique<CnnScratch>();
    return cnn_forward(m, x, *scratch);
}

struct CrossEntropyLoss { Kind label; };
struct LogitLoss { Kind klass; };
using CnnLossSpec = std::variant<CrossEntropyLoss, LogitLoss>;

// Gradient of an arbitrary logit-space linear functional w.r.t. the input:
// seed = dL/dlogits. The attacks use this directly for hinge objectives.
inline PixelTensor cnn_input_gradient_from_seed(const CnnModel& m, const DetectorInput& x,
                                                const std::array<double, 2>& logit_seed,
                                                CnnScratch& scratch) {
    detail_cnn::check_input(m, x);
    detail_cnn::forward(m, x.tensor().values.data(), scratch, false, nullptr);
    PixelTensor grad(static_cast<std::size_t>(m.input_h), static_cast<std::size_t>(m.input_w));
    detail_cnn::backward(m, scratch, logit_seed.data(), nullptr, grad.values.data());
    return grad;
}

// Full backpropagation to the input layer, dropout disabled.
inline PixelTensor cnn_input_gradient(const CnnModel& m, const DetectorInput& x,
                                      const CnnLossSpec& loss, CnnScratch& scratch) {
    detail_cnn::check_input(m, x);
    detail_cnn::forward(m, x.tensor().values.data(), scratch, false, nullptr);
    std::array<double, 2> seed{0.0, 0.0};
    if (const auto* ce = std::get_if<CrossEntropyLoss>(&loss)) {
        const int t = kind_index(ce->label);
        seed[0] = scratch.probs[0] - (t == 0 ? 1.0 : 0.0);
        seed[1] = scratch.probs[1] - (t == 1 ? 1.0 : 0.0);
    } else {
        seed[kind_index(std::get<LogitLoss>(loss).klass)] = 1.0;
    }
    PixelTensor grad(static_cast<std::size_t>(m.input_h), static_cast<std::size_t>(m.input_w));
    detail_cnn::backward(m, scratch, seed.data(), nullptr, grad.values.data());
    return grad;
}

inline PixelTensor cnn_input_gradient(const CnnModel& m, const DetectorInput& x,
                                      const CnnLossSpec& loss) {
    auto scratch = std::make_unique<CnnScratch>();
    return cnn_input_gradient(m, x, loss, *scratch);
}

inline double cnn_cross_entropy(const std::array<double, 2>& probs, Kind label) {
    return -std::log(std::max(probs[kind_index(label)], 1e-300));
}

// Mini-batch SGD on cross-entropy. Deterministic for a fixed seed: weight
// init, per-epoch shuffles and dropout masks all derive from it.
inline CnnModel train_cnn(const std::vector<LabeledInput>& train, const CnnConfig& cfg,
                          std::uint64_t seed) {
    if (train.empty()) throw DegenerateData("train_cnn: empty training set");
    require_both_classes(train, "train_cnn");
    if (cfg.learning_rate <= 0 || cfg.epochs <= 0 || cfg.batch_size <= 0)
        throw ConfigError("train_cnn: hyperparameters must be positive");
    if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0))
        throw ConfigError("train_cnn: dropout must lie in [0,1)");

    CnnModel model;
    model.tag = train.front().first.tag;
    model.dropout = cfg.dropout;
    for (const auto& [input, label] : train) {
        if (input.tag != model.tag) throw ShapeError("train_cnn: mixed pipeline tags");
        detail_cnn::check_input(model, input);
    }
    cnn_init_params(model, seed);
    model.seed = seed;

    auto scratch = std::make_unique<CnnScratch>();
    CnnGrads grads(model);
    const std::size_t n = train.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(seed, "cnn-shuffle", static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        Rng drop_rng(derive_seed(seed, "cnn-dropout", static_cast<std::uint64_t>(epoch)));

        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
            grads.zero();
            for (std::size_t i = start; i < stop; ++i) {
                const auto& [input, label] = train[order[i]];
                detail_cnn::forward(model, input.tensor().values.data(), *scratch, true,
                                    &drop_rng);
                const int t = kind_index(label.kind);
                std::array<double, 2> seed_vec{scratch->probs[0] - (t == 0 ? 1.0 : 0.0),
                                               scratch->probs[1] - (t == 1 ? 1.0 : 0.0)};
                detail_cnn::backward(model, *scratch, seed_vec.data(), &grads, nullptr);
            }
            const double scale = cfg.learning_rate / static_cast<double>(stop - start);
            auto apply = [scale](std::vector<double>& w, const std::vector<double>& g) {
                for (std::size_t i = 0; i < w.size(); ++i) w[i] -= scale * g[i];
            };
            apply(model.w1, grads.w1); apply(model.b1, grads.b1);
            apply(model.w2, grads.w2); apply(model.b2, grads.b2);
            apply(model.w3, grads.w3); apply(model.b3, grads.b3);
            apply(model.w4, grads.w4); apply(model.b4, grads.b4);
        }

        double loss = 0.0;
        for (const auto& [input, label] : train) {
            detail_cnn::forward(model, input.tensor().values.data(), *scratch, false, nullptr);
            loss += cnn_cross_entropy(scratch->probs, label.kind);
        }
        model.epoch_loss.push_back(loss / static_cast<double>(n));
    }
    return model;
}

}  // namespace malimg
