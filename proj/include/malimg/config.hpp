#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "malimg/attacks.hpp"
#include "malimg/corpus.hpp"
#include "malimg/detectors/common.hpp"
#include "malimg/errors.hpp"
#include "malimg/rng.hpp"

namespace malimg {

struct EvalSettings {
    int k = 10;
    std::vector<double> epsilon_grid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    double target_rate = 95.0;
    double transfer_epsilon = 0.5;
    int wavelet_levels = 2;
    int attack_sample_cap = 0;  // 0 = attack every held-out malware sample
};

struct AttackSettings {
    std::string method = "fgsm";  // "fgsm" | "cw"
    FgsmConfig fgsm;
    CwConfig cw;

    AttackMethod to_method() const {
        if (method == "fgsm") return AttackMethod::fgsm(fgsm);
        return AttackMethod::cw(cw);
    }
};

// Everything a run needs; JSON-backed, strict keys, no wall-clock seeding.
struct RunConfig {
    std::uint64_t seed = 0;
    std::string corpus_dir;
    std::string model_path;
    std::string out_dir;
    SynthSpec synth;
    Algorithm algorithm = Algorithm::cnn;
    PipelineTag pipeline = PipelineTag::raw;
    TrainConfig train;
    AttackSettings attack;
    EvalSettings eval;
};

namespace detail_config {

using nlohmann::ordered_json;

inline void require_keys(const ordered_json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
    if (!j.is_object()) throw ConfigError("section '" + where + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key))
            throw ConfigError("unknown key '" + key + "' in section '" + where + "'");
    }
}

template <typename T>
T get_or(const ordered_json& j, const char* key, T fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("bad value for key '" + std::string(key) + "' in section '" + where +
                          "'");
    }
}

inline Algorithm parse_algorithm(const std::string& s) {
    if (s == "cnn") return Algorithm::cnn;
    if (s == "svm") return Algorithm::svm;
    if (s == "rf") return Algorithm::rf;
    throw ConfigError("unknown algorithm '" + s + "'");
}

inline PipelineTag parse_pipeline(const std::string& s) {
    if (s == "raw") return PipelineTag::raw;
    if (s == "wavelet") return PipelineTag::wavelet;
    throw ConfigError("unknown pipeline '" + s + "'");
}

inline SvmKernel parse_kernel(const std::string& s) {
    if (s == "linear") return SvmKernel::linear;
    if (s == "rbf") return SvmKernel::rbf;
    throw ConfigError("unknown svm kernel '" + s + "'");
}

inline FgsmConfig::Mode parse_fgsm_mode(const std::string& s) {
    if (s == "single_step") return FgsmConfig::Mode::single_step;
    if (s == "iterative") return FgsmConfig::Mode::iterative;
    throw ConfigError("unknown fgsm mode '" + s + "'");
}

inline CwConfig::Norm parse_cw_norm(const std::string& s) {
    if (s == "l0") return CwConfig::Norm::l0;
    if (s == "l2") return CwConfig::Norm::l2;
    if (s == "linf") return CwConfig::Norm::linf;
    throw ConfigError("unknown cw norm '" + s + "'");
}

}  // namespace detail_config

inline RunConfig parse_config(const nlohmann::ordered_json& j) {
    using detail_config::get_or;
    using detail_config::require_keys;

    require_keys(j, {"seed", "paths", "corpus", "detector", "train", "attack", "eval"}, "root");
    RunConfig cfg;
    if (!j.contains("seed")) throw ConfigError("missing required key 'seed'");
    cfg.seed = get_or<std::uint64_t>(j, "seed", 0, "root");

    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        require_keys(p, {"corpus", "model", "out"}, "paths");
        cfg.corpus_dir = get_or<std::string>(p, "corpus", "", "paths");
        cfg.model_path = get_or<std::string>(p, "model", "", "paths");
        cfg.out_dir = get_or<std::string>(p, "out", "", "paths");
    }

    if (j.contains("corpus")) {
        const auto& c = j.at("corpus");
        require_keys(c,
                     {"per_family", "benign", "size_min", "size_max", "motif_seed",
                      "motif_length", "motif_density", "noise_entropy"},
                     "corpus");
        cfg.synth.per_family = get_or<int>(c, "per_family", cfg.synth.per_family, "corpus");
        cfg.synth.benign = get_or<int>(c, "benign", cfg.synth.benign, "corpus");
        cfg.synth.size_min = get_or<std::size_t>(c, "size_min", cfg.synth.size_min, "corpus");
        cfg.synth.size_max = get_or<std::size_t>(c, "size_max", cfg.synth.size_max, "corpus");
        cfg.synth.motif_seed =
            get_or<std::uint64_t>(c, "motif_seed", cfg.synth.motif_seed, "corpus");
        cfg.synth.motif_length =
            get_or<int>(c, "motif_length", cfg.synth.motif_length, "corpus");
        cfg.synth.motif_density =
            get_or<double>(c, "motif_density", cfg.synth.motif_density, "corpus");
        cfg.synth.noise_entropy =
            get_or<double>(c, "noise_entropy", cfg.synth.noise_entropy, "corpus");
        try {
            validate_spec(cfg.synth);
        } catch (const SpecError& e) {
            throw ConfigError(std::string("corpus section: ") + e.what());
        }
    }

    if (j.contains("detector")) {
        const auto& d = j.at("detector");
        require_keys(d, {"algorithm", "pipeline"}, "detector");
        cfg.algorithm =
            detail_config::parse_algorithm(get_or<std::string>(d, "algorithm", "cnn", "detector"));
        cfg.pipeline =
            detail_config::parse_pipeline(get_or<std::string>(d, "pipeline", "raw", "detector"));
    }

    if (j.contains("train")) {
        const auto& t = j.at("train");
        require_keys(t, {"cnn", "svm", "rf"}, "train");
        if (t.contains("cnn")) {
            const auto& c = t.at("cnn");
            require_keys(c, {"learning_rate", "epochs", "batch_size", "dropout"}, "train.cnn");
            cfg.train.cnn.learning_rate =
                get_or<double>(c, "learning_rate", cfg.train.cnn.learning_rate, "train.cnn");
            cfg.train.cnn.epochs = get_or<int>(c, "epochs", cfg.train.cnn.epochs, "train.cnn");
            cfg.train.cnn.batch_size =
                get_or<int>(c, "batch_size", cfg.train.cnn.batch_size, "train.cnn");
            cfg.train.cnn.dropout =
                get_or<double>(c, "dropout", cfg.train.cnn.dropout, "train.cnn");
        }
        if (t.contains("svm")) {
            const auto& s = t.at("svm");
            require_keys(s, {"c", "kernel", "gamma", "tolerance", "max_updates"}, "train.svm");
            cfg.train.svm.c = get_or<double>(s, "c", cfg.train.svm.c, "train.svm");
            cfg.train.svm.kernel = detail_config::parse_kernel(
                get_or<std::string>(s, "kernel", "rbf", "train.svm"));
            cfg.train.svm.gamma = get_or<double>(s, "gamma", cfg.train.svm.gamma, "train.svm");
            cfg.train.svm.tolerance =
                get_or<double>(s, "tolerance", cfg.train.svm.tolerance, "train.svm");
            cfg.train.svm.max_updates =
                get_or<long>(s, "max_updates", cfg.train.svm.max_updates, "train.svm");
        }
        if (t.contains("rf")) {
            const auto& r = t.at("rf");
            require_keys(r, {"trees", "max_depth", "min_leaf", "mtry", "max_nodes"}, "train.rf");
            cfg.train.rf.trees = get_or<int>(r, "trees", cfg.train.rf.trees, "train.rf");
            cfg.train.rf.max_depth =
                get_or<int>(r, "max_depth", cfg.train.rf.max_depth, "train.rf");
            cfg.train.rf.min_leaf =
                get_or<int>(r, "min_leaf", cfg.train.rf.min_leaf, "train.rf");
            cfg.train.rf.mtry = get_or<int>(r, "mtry", cfg.train.rf.mtry, "train.rf");
            cfg.train.rf.max_nodes =
                get_or<int>(r, "max_nodes", cfg.train.rf.max_nodes, "train.rf");
        }
        validate_train_config(cfg.train);
    }

    if (j.contains("attack")) {
        const auto& a = j.at("attack");
        require_keys(a, {"method", "fgsm", "cw"}, "attack");
        cfg.attack.method = get_or<std::string>(a, "method", "fgsm", "attack");
        if (cfg.attack.method != "fgsm" && cfg.attack.method != "cw")
            throw ConfigError("unknown attack method '" + cfg.attack.method + "'");
        if (a.contains("fgsm")) {
            const auto& f = a.at("fgsm");
            require_keys(f, {"epsilon", "max_iterations", "mode", "targeted"}, "attack.fgsm");
            cfg.attack.fgsm.epsilon =
                get_or<double>(f, "epsilon", cfg.attack.fgsm.epsilon, "attack.fgsm");
            cfg.attack.fgsm.max_iterations = get_or<int>(
                f, "max_iterations", cfg.attack.fgsm.max_iterations, "attack.fgsm");
            cfg.attack.fgsm.mode = detail_config::parse_fgsm_mode(
                get_or<std::string>(f, "mode", "single_step", "attack.fgsm"));
            cfg.attack.fgsm.targeted =
                get_or<bool>(f, "targeted", cfg.attack.fgsm.targeted, "attack.fgsm");
            if (!(cfg.attack.fgsm.epsilon >= 0.0 && cfg.attack.fgsm.epsilon <= 1.0))
                throw ConfigError("attack.fgsm.epsilon must lie in [0,1]");
        }
        if (a.contains("cw")) {
            const auto& c = a.at("cw");
            require_keys(c,
                         {"norm", "kappa", "c_min", "c_max", "search_steps", "learning_rate",
                          "iterations", "r_weight", "d_weight", "tau", "targeted"},
                         "attack.cw");
            cfg.attack.cw.norm =
                detail_config::parse_cw_norm(get_or<std::string>(c, "norm", "l2", "attack.cw"));
            cfg.attack.cw.kappa = get_or<double>(c, "kappa", cfg.attack.cw.kappa, "attack.cw");
            cfg.attack.cw.c_min = get_or<double>(c, "c_min", cfg.attack.cw.c_min, "attack.cw");
            cfg.attack.cw.c_max = get_or<double>(c, "c_max", cfg.attack.cw.c_max, "attack.cw");
            cfg.attack.cw.search_steps =
                get_or<int>(c, "search_steps", cfg.attack.cw.search_steps, "attack.cw");
            cfg.attack.cw.learning_rate =
                get_or<double>(c, "learning_rate", cfg.attack.cw.learning_rate, "attack.cw");
            cfg.attack.cw.iterations =
                get_or<int>(c, "iterations", cfg.attack.cw.iterations, "attack.cw");
            cfg.attack.cw.r_weight =
                get_or<double>(c, "r_weight", cfg.attack.cw.r_weight, "attack.cw");
            cfg.attack.cw.d_weight =
                get_or<double>(c, "d_weight", cfg.attack.cw.d_weight, "attack.cw");
            cfg.attack.cw.tau = get_or<double>(c, "tau", cfg.attack.cw.tau, "attack.cw");
            cfg.attack.cw.targeted =
                get_or<bool>(c, "targeted", cfg.attack.cw.targeted, "attack.cw");
        }
    }

    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        require_keys(e,
                     {"k", "epsilon_grid", "target_rate", "transfer_epsilon", "wavelet_levels",
                      "attack_sample_cap"},
                     "eval");
        cfg.eval.k = get_or<int>(e, "k", cfg.eval.k, "eval");
        cfg.eval.epsilon_grid =
            get_or<std::vector<double>>(e, "epsilon_grid", cfg.eval.epsilon_grid, "eval");
        cfg.eval.target_rate = get_or<double>(e, "target_rate", cfg.eval.target_rate, "eval");
        cfg.eval.transfer_epsilon =
            get_or<double>(e, "transfer_epsilon", cfg.eval.transfer_epsilon, "eval");
        cfg.eval.wavelet_levels =
            get_or<int>(e, "wavelet_levels", cfg.eval.wavelet_levels, "eval");
        cfg.eval.attack_sample_cap =
            get_or<int>(e, "attack_sample_cap", cfg.eval.attack_sample_cap, "eval");
        if (cfg.eval.k < 2) throw ConfigError("eval.k must be at least 2");
        if (cfg.eval.epsilon_grid.empty()) throw ConfigError("eval.epsilon_grid must be non-empty");
        if (cfg.eval.wavelet_levels < 1) throw ConfigError("eval.wavelet_levels must be positive");
    }

    return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("parse failure in " + path.string() + ": " + e.what());
    }
    return parse_config(j);
}

// Full effective configuration with every default applied; reloading this
// document yields an identical RunConfig.
inline nlohmann::ordered_json effective_config_json(const RunConfig& cfg) {
    nlohmann::ordered_json j;
    j["seed"] = cfg.seed;
    j["paths"] = {{"corpus", cfg.corpus_dir}, {"model", cfg.model_path}, {"out", cfg.out_dir}};
    j["corpus"] = {{"per_family", cfg.synth.per_family},
                   {"benign", cfg.synth.benign},
                   {"size_min", cfg.synth.size_min},
                   {"size_max", cfg.synth.size_max},
                   {"motif_seed", cfg.synth.motif_seed},
                   {"motif_length", cfg.synth.motif_length},
                   {"motif_density", cfg.synth.motif_density},
                   {"noise_entropy", cfg.synth.noise_entropy}};
    j["detector"] = {{"algorithm", algorithm_name(cfg.algorithm)},
                     {"pipeline", pipeline_name(cfg.pipeline)}};
    j["train"] = {
        {"cnn",
         {{"learning_rate", cfg.train.cnn.learning_rate},
          {"epochs", cfg.train.cnn.epochs},
          {"batch_size", cfg.train.cnn.batch_size},
          {"dropout", cfg.train.cnn.dropout}}},
        {"svm",
         {{"c", cfg.train.svm.c},
          {"kernel", cfg.train.svm.kernel == SvmKernel::rbf ? "rbf" : "linear"},
          {"gamma", cfg.train.svm.gamma},
          {"tolerance", cfg.train.svm.tolerance},
          {"max_updates", cfg.train.svm.max_updates}}},
        {"rf",
         {{"trees", cfg.train.rf.trees},
          {"max_depth", cfg.train.rf.max_depth},
          {"min_leaf", cfg.train.rf.min_leaf},
          {"mtry", cfg.train.rf.mtry},
          {"max_nodes", cfg.train.rf.max_nodes}}}};
    j["attack"] = {
        {"method", cfg.attack.method},
        {"fgsm",
         {{"epsilon", cfg.attack.fgsm.epsilon},
          {"max_iterations", cfg.attack.fgsm.max_iterations},
          {"mode",
           cfg.attack.fgsm.mode == FgsmConfig::Mode::single_step ? "single_step" : "iterative"},
          {"targeted", cfg.attack.fgsm.targeted}}},
        {"cw",
         {{"norm", cfg.attack.cw.norm == CwConfig::Norm::l0
                       ? "l0"
                       : cfg.attack.cw.norm == CwConfig::Norm::l2 ? "l2" : "linf"},
          {"kappa", cfg.attack.cw.kappa},
          {"c_min", cfg.attack.cw.c_min},
          {"c_max", cfg.attack.cw.c_max},
          {"search_steps", cfg.attack.cw.search_steps},
          {"learning_rate", cfg.attack.cw.learning_rate},
          {"iterations", cfg.attack.cw.iterations},
          {"r_weight", cfg.attack.cw.r_weight},
          {"d_weight", cfg.attack.cw.d_weight},
          {"tau", cfg.attack.cw.tau},
          {"targeted", cfg.attack.cw.targeted}}}};
    j["eval"] = {{"k", cfg.eval.k},
                 {"epsilon_grid", cfg.eval.epsilon_grid},
                 {"target_rate", cfg.eval.target_rate},
                 {"transfer_epsilon", cfg.eval.transfer_epsilon},
                 {"wavelet_levels", cfg.eval.wavelet_levels},
                 {"attack_sample_cap", cfg.eval.attack_sample_cap}};
    return j;
}

inline std::string config_hash_hex(const RunConfig& cfg) {
    const std::uint64_t h = fnv1a64(effective_config_json(cfg).dump());
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace malimg
