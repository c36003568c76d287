#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "malimg/byteplot.hpp"
#include "malimg/corpus.hpp"
#include "malimg/detectors/cnn.hpp"
#include "malimg/errors.hpp"
#include "malimg/parallel.hpp"

namespace malimg {

struct Norms {
    std::size_t l0 = 0;  // changed-cell count
    double l2 = 0.0;
    double linf = 0.0;
};

// One crafted perturbation record.
struct AdvExample {
    std::string id;
    PixelTensor x_orig;
    PixelTensor x_adv;
    std::vector<double> delta;  // x_adv - x_orig, cell-wise
    Kind target = Kind::benign;
    bool targeted = true;
    bool success = false;
    int iterations = 0;
    std::vector<std::pair<int, double>> loss_trace;  // (iteration, |l|)
    Norms norms;
    std::string error;  // set when a batch element failed with a domain error
};

struct FgsmConfig {
    double epsilon = 0.4;
    int max_iterations = 4096;
    enum class Mode { single_step, iterative } mode = Mode::single_step;
    bool targeted = true;
};

struct CwConfig {
    enum class Norm { l0, l2, linf } norm = Norm::l2;
    double kappa = 0.0;
    double c_min = 1e-3;
    double c_max = 100.0;
    int search_steps = 9;        // bisection steps on the penalty weight c
    double learning_rate = 0.05;
    int iterations = 100;        // gradient-descent steps per c value
    double r_weight = 1.0;       // classifier-loss share of the split penalty
    double d_weight = 0.0;       // secondary-detector share; 0 disables the hook
    double tau = 0.0;            // secondary-detector score threshold
    bool targeted = true;
    // Optional secondary-detector hook; both callbacks are needed for the
    // split penalty to be differentiable.
    std::function<double(const PixelTensor&)> detector_score;
    std::function<std::vector<double>(const PixelTensor&)> detector_score_grad;
};

namespace detail_attack {

inline Kind flip(Kind k) { return k == Kind::benign ? Kind::malware : Kind::benign; }

inline void check_box(const PixelTensor& x, const char* who) {
    for (double v : x.values)
        if (!std::isfinite(v) || v < 0.0 || v > 1.0)
            throw ConfigError(std::string(who) + ": input outside the [0,1] box");
}

inline Norms compute_norms(const std::vector<double>& delta) {
    Norms n;
    double ss = 0.0;
    for (double d : delta) {
        if (d != 0.0) ++n.l0;
        ss += d * d;
        n.linf = std::max(n.linf, std::abs(d));
    }
    n.l2 = std::sqrt(ss);
    return n;
}

inline void finalize(AdvExample& ae) {
    ae.delta.resize(ae.x_orig.size());
    for (std::size_t i = 0; i < ae.delta.size(); ++i)
        ae.delta[i] = ae.x_adv.values[i] - ae.x_orig.values[i];
    ae.norms = compute_norms(ae.delta);
}

// The class the craft drives toward: the requested target, or the only
// other class when escaping the true label (binary head).
inline Kind effective_target(Kind label, bool targeted) {
    return targeted ? label : flip(label);
}

// Same tie rule as the detectors: an exact logit tie reads benign.
inline bool argmax_is(const std::array<double, 2>& logits, Kind k) {
    const bool malware_wins = logits[kind_index(Kind::malware)] > logits[kind_index(Kind::benign)];
    return (k == Kind::malware) == malware_wins;
}

// Moves x one epsilon step along `direction`, clamped to the unit box, and
// walks back by ulps if rounding pushed |result - x| a hair past epsilon.
// Keeps the ||delta||_inf <= epsilon contract exact in double arithmetic.
inline double step_within(double x, double eps, double direction) {
    if (direction == 0.0 || eps == 0.0) return x;
    double t = std::clamp(x + direction * eps, 0.0, 1.0);
    while (std::abs(t - x) > eps) t = std::nextafter(t, x);
    return t;
}

}  // namespace detail_attack

// FGSM per the sign-of-gradient rule. Single-step applies the whole epsilon
// budget at once, descending the target-class loss. Iterative saturates one
// not-yet-modified coordinate per step, the one with the largest gradient
// into the target class, stopping on success, on budget exhaustion, or when
// no coordinate still helps (reported as success=false, never as an error).
inline AdvExample craft_fgsm(const CnnModel& surrogate, const PixelTensor& x, Kind label,
                             const FgsmConfig& cfg, CnnScratch* scratch_opt = nullptr) {
    if (!(cfg.epsilon >= 0.0 && cfg.epsilon <= 1.0))
        throw ConfigError("craft_fgsm: epsilon must lie in [0,1]");
    if (cfg.max_iterations < 1) throw ConfigError("craft_fgsm: max_iterations must be positive");
    detail_attack::check_box(x, "craft_fgsm");

    std::unique_ptr<CnnScratch> owned;
    if (!scratch_opt) {
        owned = std::make_unique<CnnScratch>();
        scratch_opt = owned.get();
    }
    CnnScratch& scratch = *scratch_opt;

    AdvExample ae;
    ae.x_orig = x;
    ae.x_adv = x;
    ae.target = label;
    ae.targeted = cfg.targeted;
    const Kind toward = detail_attack::effective_target(label, cfg.targeted);
    const std::size_t n = x.size();

    auto observe = [&](const PixelTensor& point, int iter) {
        DetectorInput in{surrogate.tag, point};
        auto [logits, probs] = cnn_forward(surrogate, in, scratch);
        ae.loss_trace.emplace_back(iter, std::abs(cnn_cross_entropy(probs, toward)));
        return logits;
    };

    observe(ae.x_adv, 0);

    if (cfg.mode == FgsmConfig::Mode::single_step) {
        DetectorInput in{surrogate.tag, x};
        PixelTensor grad = cnn_input_gradient(surrogate, in, CrossEntropyLoss{label}, scratch);
        // Targeted: descend toward the target. Untargeted: ascend the true
        // label's loss.
        const double sgn = cfg.targeted ? -1.0 : 1.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double g = grad.values[i];
            const double direction = g > 0.0 ? sgn : (g < 0.0 ? -sgn : 0.0);
            ae.x_adv.values[i] = detail_attack::step_within(x.values[i], cfg.epsilon, direction);
        }
        ae.iterations = 1;
        ae.success = detail_attack::argmax_is(observe(ae.x_adv, 1), toward);
    } else {
        std::vector<std::uint8_t> modified(n, 0);
        for (int t = 1; t <= cfg.max_iterations; ++t) {
            DetectorInput in{surrogate.tag, ae.x_adv};
            auto [logits, probs] = cnn_forward(surrogate, in, scratch);
            if (detail_attack::argmax_is(logits, toward)) {
                ae.success = true;
                break;
            }
            PixelTensor grad =
                cnn_input_gradient(surrogate, in, CrossEntropyLoss{toward}, scratch);
            // Most negative target-loss gradient == largest gradient into the
            // target class for an upward pixel move.
            std::size_t pick = n;
            double best = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (modified[i]) continue;
                if (grad.values[i] < best) {
                    best = grad.values[i];
                    pick = i;
                }
            }
            if (pick == n) break;  // no helpful coordinate left: Failure
            // Saturate toward the box maximum, epsilon-clamped.
            ae.x_adv.values[pick] = detail_attack::step_within(x.values[pick], cfg.epsilon, 1.0);
            modified[pick] = 1;
            ae.iterations = t;
            observe(ae.x_adv, t);
        }
        if (!ae.success) {
            DetectorInput in{surrogate.tag, ae.x_adv};
            ae.success = detail_attack::argmax_is(cnn_forward(surrogate, in, scratch).first, toward);
        }
    }

    detail_attack::finalize(ae);
    return ae;
}

namespace detail_attack {

constexpr double kAtanhClip = 1e-6;

inline double to_w(double x) {
    const double t = std::clamp(x, kAtanhClip, 1.0 - kAtanhClip) * 2.0 - 1.0;
    return std::atanh(t);
}

struct CwRun {
    PixelTensor x_adv;
    bool success = false;
    double dist = std::numeric_limits<double>::infinity();  // by the active norm
    double final_g = std::numeric_limits<double>::infinity();
    int best_iteration = 0;
    std::vector<std::pair<int, double>> trace;
};

// One gradient-descent run of the tanh-reparameterized objective at a fixed
// penalty weight c. `frozen` pins coordinates to the original value (L0
// mode); `linf_tau > 0` swaps the squared-L2 distance term for the
// per-coordinate bound penalty sum(max(|delta_i| - tau, 0)).
inline CwRun cw_optimize(const CnnModel& surrogate, const PixelTensor& x, Kind toward,
                         double c, const CwConfig& cfg, CnnScratch& scratch,
                         const std::vector<std::uint8_t>* frozen, double linf_tau,
                         const std::vector<double>* warm_start) {
    const std::size_t n = x.size();
    std::vector<double> w(n);
    if (warm_start) {
        w = *warm_start;
    } else {
        for (std::size_t i = 0; i < n; ++i) w[i] = to_w(x.values[i]);
    }

    CwRun run;
    run.x_adv = x;
    PixelTensor xs(x.height, x.width);
    const int ti = kind_index(toward);
    const int oi = 1 - ti;

    auto distance = [&](const PixelTensor& point) {
        if (cfg.norm == CwConfig::Norm::linf) {
            double m = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                m = std::max(m, std::abs(point.values[i] - x.values[i]));
            return m;
        }
        double ss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = point.values[i] - x.values[i];
            ss += d * d;
        }
        return std::sqrt(ss);
    };

    for (int iter = 0; iter <= cfg.iterations; ++iter) {
        for (std::size_t i = 0; i < n; ++i) {
            xs.values[i] = (frozen && (*frozen)[i]) ? x.values[i]
                                                    : 0.5 * (std::tanh(w[i]) + 1.0);
        }
        DetectorInput in{surrogate.tag, xs};
        auto [logits, probs] = cnn_forward(surrogate, in, scratch);
        run.trace.emplace_back(iter, std::abs(cnn_cross_entropy(probs, toward)));

        const double margin = logits[oi] - logits[ti];  // want <= -kappa
        const double g_hinge = std::max(margin, -cfg.kappa);
        if (!std::isfinite(g_hinge)) throw NumericError("craft_cw: non-finite loss");
        run.final_g = g_hinge;

        if (margin <= -cfg.kappa && argmax_is(logits, toward)) {
            const double dist = distance(xs);
            if (!run.success || dist < run.dist) {
                run.success = true;
                run.x_adv = xs;
                run.dist = dist;
                run.best_iteration = iter;
            }
        }
        if (iter == cfg.iterations) break;

        // dL/dx*: distance term plus (sub)gradients of the active penalties.
        std::vector<double> dx(n, 0.0);
        if (linf_tau > 0.0) {
            for (std::size_t i = 0; i < n; ++i) {
                const double d = xs.values[i] - x.values[i];
                if (std::abs(d) > linf_tau) dx[i] = d > 0.0 ? 1.0 : -1.0;
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) dx[i] = 2.0 * (xs.values[i] - x.values[i]);
        }

        const bool use_split = cfg.d_weight > 0.0 && cfg.detector_score;
        if (margin > -cfg.kappa) {
            std::array<double, 2> seed{0.0, 0.0};
            seed[oi] = 1.0;
            seed[ti] = -1.0;
            PixelTensor hg = cnn_input_gradient_from_seed(surrogate, in, seed, scratch);
            const double wgt = use_split ? c * cfg.r_weight : c;
            for (std::size_t i = 0; i < n; ++i) dx[i] += wgt * hg.values[i];
        }
        if (use_split) {
            const double score = cfg.detector_score(xs);
            if (score > cfg.tau && cfg.detector_score_grad) {
                const auto sg = cfg.detector_score_grad(xs);
                for (std::size_t i = 0; i < n && i < sg.size(); ++i)
                    dx[i] += c * cfg.d_weight * sg[i];
            }
        }

        for (std::size_t i = 0; i < n; ++i) {
            if (frozen && (*frozen)[i]) continue;
            const double th = std::tanh(w[i]);
            w[i] -= cfg.learning_rate * dx[i] * 0.5 * (1.0 - th * th);
            if (!std::isfinite(w[i])) throw NumericError("craft_cw: optimizer diverged");
        }
    }
    return run;
}

// Geometric bisection on c over [c_min, c_max], keeping the
// smallest-distortion success.
inline CwRun cw_search_c(const CnnModel& surrogate, const PixelTensor& x, Kind toward,
                         const CwConfig& cfg, CnnScratch& scratch,
                         const std::vector<std::uint8_t>* frozen, double* c_used) {
    double lo = cfg.c_min, hi = cfg.c_max;
    CwRun best;
    CwRun last_fail;
    bool have_fail = false;
    for (int step = 0; step < cfg.search_steps; ++step) {
        const double c = std::sqrt(lo * hi);
        CwRun run = cw_optimize(surrogate, x, toward, c, cfg, scratch, frozen, 0.0, nullptr);
        if (run.success) {
            if (!best.success || run.dist < best.dist) {
                best = std::move(run);
                if (c_used) *c_used = c;
            }
            hi = c;  // lighter penalty next: less distortion if it still works
        } else {
            last_fail = std::move(run);
            have_fail = true;
            lo = c;
        }
    }
    if (!best.success && have_fail) return last_fail;
    return best;
}

}  // namespace detail_attack

// C&W crafting. L2 minimizes ||delta||_2^2 + c*g with the tanh box change of
// variables and hinge objective g = max(max_{i!=t} Z_i - Z_t, -kappa); c is
// found by bisection. Linf iteratively shrinks a per-coordinate bound. L0
// solves L2 and then greedily freezes the lowest-impact coordinates to zero
// perturbation and re-solves until no solution remains.
inline AdvExample craft_cw(const CnnModel& surrogate, const PixelTensor& x, Kind label,
                           const CwConfig& cfg, CnnScratch* scratch_opt = nullptr) {
    if (cfg.kappa < 0.0) throw ConfigError("craft_cw: kappa must be non-negative");
    if (cfg.search_steps < 1) throw ConfigError("craft_cw: search_steps must be >= 1");
    if (cfg.learning_rate <= 0.0) throw ConfigError("craft_cw: learning_rate must be positive");
    if (cfg.iterations < 1) throw ConfigError("craft_cw: iterations must be positive");
    if (!(cfg.c_min > 0.0 && cfg.c_min <= cfg.c_max))
        throw ConfigError("craft_cw: invalid c range");
    if (cfg.r_weight < 0.0 || cfg.d_weight < 0.0 || cfg.tau < 0.0)
        throw ConfigError("craft_cw: negative split weights");
    detail_attack::check_box(x, "craft_cw");

    std::unique_ptr<CnnScratch> owned;
    if (!scratch_opt) {
        owned = std::make_unique<CnnScratch>();
        scratch_opt = owned.get();
    }
    CnnScratch& scratch = *scratch_opt;

    AdvExample ae;
    ae.x_orig = x;
    ae.x_adv = x;
    ae.target = label;
    ae.targeted = cfg.targeted;
    const Kind toward = detail_attack::effective_target(label, cfg.targeted);

    using detail_attack::CwRun;

    if (cfg.norm == CwConfig::Norm::l2) {
        CwRun run = detail_attack::cw_search_c(surrogate, x, toward, cfg, scratch, nullptr,
                                               nullptr);
        ae.x_adv = run.x_adv;
        ae.success = run.success;
        ae.iterations = run.success ? run.best_iteration : cfg.iterations;
        ae.loss_trace = std::move(run.trace);
    } else if (cfg.norm == CwConfig::Norm::linf) {
        // Escalate c until the bound-penalty objective first succeeds, then
        // shrink the bound while the optimizer keeps succeeding.
        CwRun best;
        CwRun seed_run;
        double c = std::sqrt(cfg.c_min * cfg.c_max);
        bool found = false;
        for (int esc = 0; esc < 4 && !found; ++esc) {
            seed_run = detail_attack::cw_optimize(surrogate, x, toward, c, cfg, scratch,
                                                  nullptr, 1.0, nullptr);
            if (seed_run.success)
                found = true;
            else
                c = std::min(cfg.c_max, c * 10.0);
        }
        if (found) {
            best = seed_run;
            double tau = std::max(1e-4, best.dist);
            std::vector<double> warm(x.size());
            for (int round = 0; round < 10; ++round) {
                tau *= 0.9;
                for (std::size_t i = 0; i < x.size(); ++i)
                    warm[i] = detail_attack::to_w(best.x_adv.values[i]);
                CwRun run = detail_attack::cw_optimize(surrogate, x, toward, c, cfg, scratch,
                                                       nullptr, tau, &warm);
                if (!run.success) break;
                if (run.dist < best.dist) best = std::move(run);
                if (best.dist <= 1e-4) break;
            }
            ae.x_adv = best.x_adv;
            ae.success = true;
            ae.iterations = best.best_iteration;
            ae.loss_trace = std::move(best.trace);
        } else {
            ae.x_adv = seed_run.x_adv;
            ae.success = false;
            ae.iterations = cfg.iterations;
            ae.loss_trace = std::move(seed_run.trace);
        }
    } else {  // L0
        double c_used = std::sqrt(cfg.c_min * cfg.c_max);
        CwRun base = detail_attack::cw_search_c(surrogate, x, toward, cfg, scratch, nullptr,
                                                &c_used);
        if (!base.success) {
            ae.x_adv = base.x_adv;
            ae.success = false;
            ae.iterations = cfg.iterations;
            ae.loss_trace = std::move(base.trace);
        } else {
            std::vector<std::uint8_t> frozen(x.size(), 0);
            CwRun best = std::move(base);
            for (int round = 0; round < 24; ++round) {
                // Impact of each still-free changed coordinate:
                // |delta_i * grad_i| of the hinge at the current solution.
                DetectorInput in{surrogate.tag, best.x_adv};
                std::array<double, 2> seed{0.0, 0.0};
                seed[1 - kind_index(toward)] = 1.0;
                seed[kind_index(toward)] = -1.0;
                PixelTensor hg = cnn_input_gradient_from_seed(surrogate, in, seed, scratch);

                std::vector<std::pair<double, std::size_t>> impact;
                for (std::size_t i = 0; i < x.size(); ++i) {
                    if (frozen[i]) continue;
                    const double d = best.x_adv.values[i] - x.values[i];
                    if (d != 0.0) impact.emplace_back(std::abs(d * hg.values[i]), i);
                }
                if (impact.size() <= 1) break;
                std::sort(impact.begin(), impact.end());
                const std::size_t to_freeze = std::max<std::size_t>(1, impact.size() / 5);
                for (std::size_t k = 0; k < to_freeze; ++k) frozen[impact[k].second] = 1;

                CwRun run = detail_attack::cw_optimize(surrogate, x, toward, c_used, cfg,
                                                       scratch, &frozen, 0.0, nullptr);
                if (!run.success) break;
                best = std::move(run);
            }
            ae.x_adv = best.x_adv;
            ae.success = true;
            ae.iterations = best.best_iteration;
            ae.loss_trace = std::move(best.trace);
        }
    }

    detail_attack::finalize(ae);
    return ae;
}

struct AttackMethod {
    std::variant<FgsmConfig, CwConfig> config;

    static AttackMethod fgsm(const FgsmConfig& cfg) { return {cfg}; }
    static AttackMethod cw(const CwConfig& cfg) { return {cfg}; }

    std::string name() const {
        return std::holds_alternative<FgsmConfig>(config) ? "fgsm" : "cw";
    }
};

// Element-wise crafting, order preserved, per-sample domain errors recorded
// in place without aborting the batch.
inline std::vector<AdvExample> batch_craft(
    const CnnModel& surrogate, const std::vector<std::pair<std::string, PixelTensor>>& samples,
    Kind target, const AttackMethod& method, std::uint64_t seed) {
    if (samples.empty()) throw EmptySet("batch_craft: no samples");
    (void)seed;  // crafting is deterministic; the seed is recorded by callers

    std::vector<AdvExample> out(samples.size());
    parallel_for(samples.size(), [&](std::size_t i) {
        auto scratch = std::make_unique<CnnScratch>();
        AdvExample ae;
        try {
            if (const auto* f = std::get_if<FgsmConfig>(&method.config))
                ae = craft_fgsm(surrogate, samples[i].second, target, *f, scratch.get());
            else
                ae = craft_cw(surrogate, samples[i].second, target,
                              std::get<CwConfig>(method.config), scratch.get());
        } catch (const Error& e) {
            ae.x_orig = samples[i].second;
            ae.x_adv = samples[i].second;
            ae.target = target;
            ae.success = false;
            ae.error = e.what();
            detail_attack::finalize(ae);
        }
        ae.id = samples[i].first;
        out[i] = std::move(ae);
    });
    return out;
}

}  // namespace malimg
