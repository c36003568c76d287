#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "malimg/config.hpp"
#include "malimg/corpus.hpp"
#include "malimg/detectors/serialize.hpp"
#include "malimg/eval.hpp"
#include "malimg/reports.hpp"

namespace malimg::cli {

namespace fs = std::filesystem;

struct CommonFlags {
    std::string config_path;
    std::string corpus_dir;
    std::string model_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_given = false;
};

namespace detail {

inline RunConfig resolve(const CommonFlags& flags, bool config_required = true) {
    RunConfig cfg;
    if (!flags.config_path.empty()) {
        cfg = load_config(flags.config_path);
    } else if (config_required) {
        throw ConfigError("--config is required for this subcommand");
    }
    if (flags.seed_given) cfg.seed = flags.seed;
    if (!flags.corpus_dir.empty()) cfg.corpus_dir = flags.corpus_dir;
    if (!flags.model_path.empty()) cfg.model_path = flags.model_path;
    if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
    return cfg;
}

// Run directories are named from seed and config hash, never from the clock,
// so identical invocations land in identical paths.
inline fs::path run_dir(const RunConfig& cfg, const std::string& subcommand) {
    if (!cfg.out_dir.empty()) return cfg.out_dir;
    return fs::path("runs") /
           (subcommand + "-s" + std::to_string(cfg.seed) + "-" +
            config_hash_hex(cfg).substr(0, 8));
}

inline void emit_effective_config(const RunConfig& cfg, const fs::path& dir) {
    fs::create_directories(dir);
    write_json_file(dir / "effective-config.json", effective_config_json(cfg));
}

inline ReportMeta meta_for(const RunConfig& cfg) {
    return ReportMeta{config_hash_hex(cfg), cfg.seed};
}

inline Corpus load_corpus_checked(const RunConfig& cfg) {
    if (cfg.corpus_dir.empty())
        throw ConfigError("no corpus directory given (paths.corpus or --corpus)");
    return load_corpus(cfg.corpus_dir);
}

inline std::vector<std::pair<std::string, PixelTensor>> malware_samples(
    const TensorCorpus& tc, std::size_t cap) {
    std::vector<std::pair<std::string, PixelTensor>> out;
    for (std::size_t i = 0; i < tc.size(); ++i)
        if (tc.labels[i].kind == Kind::malware) out.emplace_back(tc.ids[i], tc.tensors[i]);
    if (cap > 0 && out.size() > cap) out.resize(cap);
    return out;
}

inline std::vector<std::pair<PixelTensor, ClassLabel>> training_view(const TensorCorpus& tc) {
    std::vector<std::pair<PixelTensor, ClassLabel>> out;
    out.reserve(tc.size());
    for (std::size_t i = 0; i < tc.size(); ++i)
        out.emplace_back(tc.tensors[i], tc.labels[i]);
    return out;
}

inline int cmd_gen(const CommonFlags& flags) {
    RunConfig cfg = detail::resolve(flags);
    const fs::path dir = cfg.corpus_dir.empty()
                             ? run_dir(cfg, "gen") / "corpus"
                             : fs::path(cfg.corpus_dir);
    const Corpus corpus = synth_corpus(cfg.synth, cfg.seed);
    save_corpus(corpus, dir);
    emit_effective_config(cfg, dir);
    std::cout << "generated " << corpus.size() << " samples under " << dir.string() << "\n";
    return 0;
}

inline int cmd_visualize(const std::string& in_path, const std::string& out_path) {
    std::ifstream in(in_path, std::ios::binary);
    if (!in) throw IngestError("cannot open " + in_path);
    std::vector<std::uint8_t> bytes(std::istreambuf_iterator<char>(in), {});
    const GrayImage img = bytes_to_image(bytes);
    write_pgm(out_path, img);
    std::cout << "wrote " << out_path << " (" << img.width << "x" << img.height << ")\n";
    return 0;
}

inline int cmd_train(const CommonFlags& flags) {
    RunConfig cfg = detail::resolve(flags);
    const Corpus corpus = load_corpus_checked(cfg);
    const TensorCorpus tc = to_tensor_corpus(corpus);
    const Detector det = train_detector(cfg.algorithm, cfg.pipeline, training_view(tc),
                                        cfg.train, cfg.seed, cfg.eval.wavelet_levels);
    const fs::path dir = run_dir(cfg, "train");
    fs::create_directories(dir / "models");
    const fs::path model_path = cfg.model_path.empty()
                                    ? dir / "models" / (det.name() + ".bin")
                                    : fs::path(cfg.model_path);
    if (model_path.has_parent_path()) fs::create_directories(model_path.parent_path());
    save_detector(det, model_path.string());
    emit_effective_config(cfg, dir);
    std::cout << "trained " << det.name() << " -> " << model_path.string() << "\n";
    return 0;
}

inline int cmd_attack(const CommonFlags& flags) {
    RunConfig cfg = detail::resolve(flags);
    if (cfg.model_path.empty())
        throw ConfigError("attack requires a surrogate model (paths.model or --model)");
    const Detector surrogate = load_detector(cfg.model_path);
    if (surrogate.algorithm != Algorithm::cnn || surrogate.tag != PipelineTag::raw)
        throw ConfigError("the attack surrogate must be a raw-pipeline cnn model");

    const Corpus corpus = load_corpus_checked(cfg);
    const TensorCorpus tc = to_tensor_corpus(corpus);
    const auto samples =
        malware_samples(tc, static_cast<std::size_t>(std::max(0, cfg.eval.attack_sample_cap)));
    if (samples.empty()) throw EmptySet("attack: corpus holds no malware samples");

    const auto aes = batch_craft(surrogate.cnn(), samples, Kind::benign,
                                 cfg.attack.to_method(), derive_seed(cfg.seed, "attack"));
    const fs::path dir = run_dir(cfg, "attack");
    save_adv_set(aes, dir / "aes", meta_for(cfg));
    emit_effective_config(cfg, dir);

    std::size_t ok = 0;
    for (const auto& ae : aes)
        if (ae.success) ++ok;
    std::cout << "crafted " << aes.size() << " adversarial examples (" << ok
              << " surrogate successes) under " << (dir / "aes").string() << "\n";
    return 0;
}

inline int cmd_evaluate(const CommonFlags& flags) {
    RunConfig cfg = detail::resolve(flags);
    const Corpus corpus = load_corpus_checked(cfg);
    const TensorCorpus tc = to_tensor_corpus(corpus);
    const CvReport report = cross_validated_attack(
        tc, cfg.algorithm, cfg.pipeline, cfg.train, cfg.attack.to_method(), cfg.eval.k,
        cfg.seed, cfg.eval.wavelet_levels,
        static_cast<std::size_t>(std::max(0, cfg.eval.attack_sample_cap)));

    const fs::path dir = run_dir(cfg, "evaluate");
    write_json_file(dir / "reports" / "cv_report.json", cv_report_json(report, meta_for(cfg)));
    detail_report::write_file(dir / "reports" / "cv_report.txt", cv_report_text(report));
    emit_effective_config(cfg, dir);
    std::cout << cv_report_text(report);
    return 0;
}

inline int cmd_transfer(const CommonFlags& flags) {
    RunConfig cfg = detail::resolve(flags);
    const Corpus corpus = load_corpus_checked(cfg);
    const TensorCorpus tc = to_tensor_corpus(corpus);

    const FoldAssignment folds = split_folds(corpus, cfg.eval.k,
                                             derive_seed(cfg.seed, "transfer-folds"));
    std::vector<std::pair<PixelTensor, ClassLabel>> train_set;
    std::vector<std::pair<std::string, PixelTensor>> craft_set;
    for (std::size_t i = 0; i < tc.size(); ++i) {
        if (folds.fold_of.at(tc.ids[i]) == 0) {
            if (tc.labels[i].kind == Kind::malware)
                craft_set.emplace_back(tc.ids[i], tc.tensors[i]);
        } else {
            train_set.emplace_back(tc.tensors[i], tc.labels[i]);
        }
    }
    if (craft_set.empty()) throw EmptySet("transfer: craft fold holds no malware");
    if (cfg.eval.attack_sample_cap > 0 &&
        craft_set.size() > static_cast<std::size_t>(cfg.eval.attack_sample_cap))
        craft_set.resize(static_cast<std::size_t>(cfg.eval.attack_sample_cap));

    const std::vector<std::pair<Algorithm, PipelineTag>> kinds = {
        {Algorithm::cnn, PipelineTag::raw},     {Algorithm::svm, PipelineTag::raw},
        {Algorithm::rf, PipelineTag::raw},      {Algorithm::cnn, PipelineTag::wavelet},
        {Algorithm::svm, PipelineTag::wavelet}, {Algorithm::rf, PipelineTag::wavelet}};
    std::vector<Detector> detectors(kinds.size());
    parallel_for(kinds.size(), [&](std::size_t i) {
        detectors[i] = train_detector(kinds[i].first, kinds[i].second, train_set, cfg.train,
                                      derive_seed(cfg.seed, "transfer-train", i),
                                      cfg.eval.wavelet_levels);
    });

    FgsmConfig fgsm;
    fgsm.epsilon = cfg.eval.transfer_epsilon;
    const auto aes = batch_craft(detectors[0].cnn(), craft_set, Kind::benign,
                                 AttackMethod::fgsm(fgsm), derive_seed(cfg.seed, "transfer"));

    std::vector<std::vector<AdvExample>> source_sets(detectors.size());
    for (std::size_t s = 0; s < detectors.size(); ++s)
        source_sets[s] = filter_source_successful(detectors[s], aes);

    const TransferMatrix tm = transferability_matrix(detectors, source_sets);
    const fs::path dir = run_dir(cfg, "transfer");
    write_json_file(dir / "reports" / "transfer.json", transfer_matrix_json(tm, meta_for(cfg)));
    detail_report::write_file(dir / "reports" / "transfer.txt", transfer_matrix_text(tm));
    emit_effective_config(cfg, dir);
    std::cout << transfer_matrix_text(tm);
    return 0;
}

inline int cmd_report(const std::string& run_path) {
    const fs::path reports = fs::path(run_path) / "reports";
    if (!fs::exists(reports)) throw EmptySet("report: no reports directory under " + run_path);

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(reports))
        if (entry.path().extension() == ".json") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw EmptySet("report: no JSON reports under " + reports.string());

    ordered_json summary;
    summary["kind"] = "summary";
    ordered_json merged = ordered_json::object();
    std::string text = "Run summary: " + run_path + "\n\n";
    for (const auto& file : files) {
        std::ifstream in(file);
        ordered_json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw IngestError("malformed report " + file.string() + ": " + e.what());
        }
        merged[file.filename().string()] = j;
        text += "- " + file.filename().string() + " (" +
                j.value("kind", std::string("unknown")) + ")\n";
        if (j.contains("attack_success"))
            text += "    attack success: " +
                    detail_report::fmt(j["attack_success"]["mean"].get<double>(), "%.2f") +
                    "% +/- " +
                    detail_report::fmt(j["attack_success"]["std"].get<double>(), "%.2f") + "\n";
        if (j.contains("clean_accuracy"))
            text += "    clean accuracy: " +
                    detail_report::fmt(j["clean_accuracy"]["mean"].get<double>(), "%.2f") +
                    "% +/- " +
                    detail_report::fmt(j["clean_accuracy"]["std"].get<double>(), "%.2f") + "\n";
    }
    summary["reports"] = merged;
    write_json_file(fs::path(run_path) / "summary.json", summary);
    detail_report::write_file(fs::path(run_path) / "summary.txt", text);
    std::cout << text;
    return 0;
}

}  // namespace detail

// Entry point behind main(); argv-style arguments without the program name.
// Exit codes: 0 success, 1 domain error (single machine-parsable line on
// stderr), 2 usage error.
inline int run(const std::vector<std::string>& args) {
    CLI::App app{"malware byteplot adversarial-examples workbench"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string in_path, out_path, run_path;

    auto add_common = [&flags](CLI::App* cmd, bool with_model = false) {
        cmd->add_option("--config", flags.config_path, "JSON config file");
        cmd->add_option("--corpus", flags.corpus_dir, "corpus directory");
        cmd->add_option("--out", flags.out_dir, "output directory");
        if (with_model) cmd->add_option("--model", flags.model_path, "model file");
        auto* seed_opt = cmd->add_option("--seed", flags.seed, "seed override");
        seed_opt->each([&flags](const std::string&) { flags.seed_given = true; });
    };

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic corpus");
    add_common(gen);
    CLI::App* visualize = app.add_subcommand("visualize", "render one binary as a PGM byteplot");
    visualize->add_option("--in", in_path, "input binary")->required();
    visualize->add_option("--out", out_path, "output PGM path")->required();
    CLI::App* train = app.add_subcommand("train", "train and serialize a detector");
    add_common(train, true);
    CLI::App* attack = app.add_subcommand("attack", "craft and serialize adversarial examples");
    add_common(attack, true);
    CLI::App* evaluate = app.add_subcommand("evaluate", "fold-replacement cross-validated attack");
    add_common(evaluate);
    CLI::App* transfer = app.add_subcommand("transfer", "6-detector transferability matrix");
    add_common(transfer);
    CLI::App* report = app.add_subcommand("report", "merge a run's reports into one summary");
    report->add_option("--run", run_path, "run directory")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "error: Usage: " << e.what() << "\n";
        return 2;
    }

    try {
        if (gen->parsed()) return detail::cmd_gen(flags);
        if (visualize->parsed()) return detail::cmd_visualize(in_path, out_path);
        if (train->parsed()) return detail::cmd_train(flags);
        if (attack->parsed()) return detail::cmd_attack(flags);
        if (evaluate->parsed()) return detail::cmd_evaluate(flags);
        if (transfer->parsed()) return detail::cmd_transfer(flags);
        if (report->parsed()) return detail::cmd_report(run_path);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: Internal: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace malimg::cli
