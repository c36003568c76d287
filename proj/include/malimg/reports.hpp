#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "malimg/attacks.hpp"
#include "malimg/byteplot.hpp"
#include "malimg/errors.hpp"
#include "malimg/eval.hpp"

namespace malimg {

using ordered_json = nlohmann::ordered_json;

// Metadata stamped into every report file so a run can be replayed exactly.
struct ReportMeta {
    std::string config_hash;  // hex fnv1a64 of the effective config
    std::uint64_t seed = 0;
};

namespace reference {

// Operating points reported by the original ATMPA study, embedded in reports
// as side-by-side annotations only; they are never pass/fail thresholds.
inline ordered_json fgsm_table() {
    return ordered_json::array({
        {{"detector", "cnn"}, {"epsilon", 0.4}, {"success_rate", 100.0}},
        {{"detector", "wavelet-cnn"}, {"epsilon", 0.5}, {"success_rate", 100.0}},
        {{"detector", "svm"}, {"epsilon", 0.5}, {"success_rate", 100.0}},
        {{"detector", "wavelet-svm"}, {"epsilon", 0.6}, {"success_rate", 99.8}},
        {{"detector", "rf"}, {"epsilon", 0.4}, {"success_rate", 100.0}},
        {{"detector", "wavelet-rf"}, {"epsilon", 0.6}, {"success_rate", 99.7}},
    });
}

inline ordered_json cw_table() {
    return ordered_json::array({
        {{"detector", "cnn"}, {"l0", 0.23}, {"l2", 0.30}, {"linf", 0.36}, {"success_rate", 100.0}},
        {{"detector", "wavelet-cnn"}, {"l0", 0.34}, {"l2", 0.41}, {"linf", 0.40}, {"success_rate", 100.0}},
        {{"detector", "svm"}, {"l0", 0.51}, {"l2", 0.43}, {"linf", 0.40}, {"success_rate", 100.0}},
        {{"detector", "wavelet-svm"}, {"l0", 0.69}, {"l2", 0.65}, {"linf", 0.32}, {"success_rate", 99.7}},
        {{"detector", "rf"}, {"l0", 0.49}, {"l2", 0.43}, {"linf", 0.39}, {"success_rate", 100.0}},
        {{"detector", "wavelet-rf"}, {"l0", 0.56}, {"l2", 0.52}, {"linf", 0.49}, {"success_rate", 100.0}},
    });
}

inline ordered_json transfer_table() {
    return ordered_json{
        {"columns", {"cnn", "svm", "rf", "wavelet-cnn", "wavelet-svm", "wavelet-rf"}},
        {"rows",
         {{{"source", "cnn"}, {"rates", {100.0, 57.8, 86.3, 88.5, 54.2, 75.6}}},
          {{"source", "svm"}, {"rates", {64.5, 100.0, 75.5, 54.2, 85.7, 64.5}}},
          {{"source", "rf"}, {"rates", {81.5, 45.6, 100.0, 67.9, 48.2, 88.7}}}}},
    };
}

inline ordered_json distance_ratio() {
    return ordered_json{{"untargeted_to_targeted_mean_distance", "1:1.08"}};
}

}  // namespace reference

namespace detail_report {

inline std::string fmt(double v, const char* spec = "%.6g") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IngestError("cannot write " + path.string());
    out << content;
    if (!out) throw IngestError("short write to " + path.string());
}

inline void stamp(ordered_json& j, const ReportMeta& meta) {
    j["config_hash"] = meta.config_hash;
    j["seed"] = meta.seed;
}

}  // namespace detail_report

inline void write_json_file(const std::filesystem::path& path, const ordered_json& j) {
    detail_report::write_file(path, j.dump(2) + "\n");
}

// --- Cross-validation report ---------------------------------------------

inline ordered_json cv_report_json(const CvReport& r, const ReportMeta& meta) {
    ordered_json j;
    j["kind"] = "cv_report";
    j["detector"] = r.detector;
    j["attack"] = r.attack;
    j["k"] = r.k;
    j["distortion"] = r.distortion;
    j["fold_clean_accuracy"] = r.fold_clean_accuracy;
    j["fold_attack_success"] = r.fold_attack_success;
    j["clean_accuracy"] = {{"mean", r.clean_mean}, {"std", r.clean_std}};
    j["attack_success"] = {{"mean", r.attack_mean}, {"std", r.attack_std}};
    j["reference"] = {{"fgsm", reference::fgsm_table()}, {"cw", reference::cw_table()}};
    detail_report::stamp(j, meta);
    return j;
}

inline std::string cv_report_text(const CvReport& r) {
    std::string out;
    out += "Fold-replacement cross-validation\n";
    out += "  detector: " + r.detector + "\n";
    out += "  attack:   " + r.attack + "  (" + r.distortion + ")\n";
    out += "  k:        " + std::to_string(r.k) + "\n\n";
    out += "  fold   clean%    attack%\n";
    for (int i = 0; i < r.k; ++i) {
        char line[96];
        std::snprintf(line, sizeof(line), "  %4d   %7.2f   %7.2f\n", i,
                      r.fold_clean_accuracy[static_cast<std::size_t>(i)],
                      r.fold_attack_success[static_cast<std::size_t>(i)]);
        out += line;
    }
    char agg[160];
    std::snprintf(agg, sizeof(agg),
                  "\n  clean accuracy: %.2f%% +/- %.2f\n  attack success: %.2f%% +/- %.2f\n",
                  r.clean_mean, r.clean_std, r.attack_mean, r.attack_std);
    out += agg;
    return out;
}

// --- Transfer matrix -------------------------------------------------------

inline ordered_json transfer_matrix_json(const TransferMatrix& tm, const ReportMeta& meta) {
    ordered_json j;
    j["kind"] = "transfer_matrix";
    j["detectors"] = tm.detectors;
    j["rate"] = tm.rate;
    j["reference"] = reference::transfer_table();
    detail_report::stamp(j, meta);
    return j;
}

inline std::string transfer_matrix_text(const TransferMatrix& tm) {
    std::string out = "Transferability rate (%), rows = AE source, columns = target\n\n";
    std::size_t width = 12;
    for (const auto& name : tm.detectors) width = std::max(width, name.size() + 2);

    auto pad = [width](const std::string& s) {
        std::string p = s;
        while (p.size() < width) p.insert(p.begin(), ' ');
        return p;
    };
    out += pad("");
    for (const auto& name : tm.detectors) out += pad(name);
    out += "\n";
    for (std::size_t s = 0; s < tm.detectors.size(); ++s) {
        out += pad(tm.detectors[s]);
        for (std::size_t t = 0; t < tm.detectors.size(); ++t) {
            char cell[32];
            std::snprintf(cell, sizeof(cell), "%.1f", tm.rate[s][t]);
            out += pad(cell);
        }
        out += "\n";
    }
    return out;
}

// --- Epsilon curves ---------------------------------------------------------

inline std::string curve_csv(const std::vector<std::pair<double, double>>& curve) {
    std::string out = "epsilon,success_rate\n";
    for (const auto& [eps, rate] : curve)
        out += detail_report::fmt(eps, "%.10g") + "," + detail_report::fmt(rate, "%.10g") + "\n";
    return out;
}

inline ordered_json minimal_epsilon_json(const MinimalEpsilonResult& r, double target_rate,
                                         const ReportMeta& meta) {
    ordered_json j;
    j["kind"] = "minimal_epsilon";
    j["target_rate"] = target_rate;
    if (r.epsilon) j["epsilon"] = *r.epsilon;
    else j["epsilon"] = nullptr;
    ordered_json curve = ordered_json::array();
    for (const auto& [eps, rate] : r.curve)
        curve.push_back({{"epsilon", eps}, {"success_rate", rate}});
    j["curve"] = curve;
    j["reference"] = {{"fgsm", reference::fgsm_table()}};
    detail_report::stamp(j, meta);
    return j;
}

// --- Distortion statistics --------------------------------------------------

namespace detail_report {

inline ordered_json histogram_json(const Histogram& h) {
    return ordered_json{{"lo", h.lo}, {"hi", h.hi}, {"counts", h.counts}};
}

}  // namespace detail_report

inline ordered_json distortion_stats_json(const DistortionStats& st, const ReportMeta& meta) {
    ordered_json j;
    j["kind"] = "distortion_stats";
    j["untargeted_mean_l2"] = st.untargeted_mean_l2;
    j["targeted_mean_l2"] = st.targeted_mean_l2;
    if (st.ratio_finite) j["ratio"] = st.ratio;
    else j["ratio"] = "inf";
    j["histograms"] = {
        {"untargeted",
         {{"l0", detail_report::histogram_json(st.untargeted_l0)},
          {"l2", detail_report::histogram_json(st.untargeted_l2)},
          {"linf", detail_report::histogram_json(st.untargeted_linf)}}},
        {"targeted",
         {{"l0", detail_report::histogram_json(st.targeted_l0)},
          {"l2", detail_report::histogram_json(st.targeted_l2)},
          {"linf", detail_report::histogram_json(st.targeted_linf)}}},
    };
    j["reference"] = reference::distance_ratio();
    detail_report::stamp(j, meta);
    return j;
}

inline ordered_json loss_trace_summary_json(const LossTraceSummary& s, const ReportMeta& meta) {
    ordered_json j;
    j["kind"] = "loss_trace_summary";
    j["median_decay"] = s.median_decay;
    j["fraction_first_is_max"] = s.fraction_first_is_max;
    ordered_json rows = ordered_json::array();
    for (const auto& row : s.rows)
        rows.push_back({{"id", row.id},
                        {"first", row.first},
                        {"last", row.last},
                        {"iterations", row.iterations},
                        {"success", row.success}});
    j["per_sample"] = rows;
    detail_report::stamp(j, meta);
    return j;
}

// --- Adversarial-example set serialization ----------------------------------
// Layout: manifest.json plus orig/<id>.pgm, adv/<id>.pgm, traces/<id>.csv.
// PGM export quantizes tensors to 8 bits, which is exactly the precision an
// AE must survive to map back onto bytes; reloading therefore recomputes
// deltas and norms from the quantized images.

inline GrayImage tensor_to_gray(const PixelTensor& t) {
    GrayImage img;
    img.width = t.width;
    img.height = t.height;
    img.pixels = image_to_bytes(t);
    return img;
}

inline void save_adv_set(const std::vector<AdvExample>& aes,
                         const std::filesystem::path& dir, const ReportMeta& meta) {
    std::filesystem::create_directories(dir / "orig");
    std::filesystem::create_directories(dir / "adv");
    std::filesystem::create_directories(dir / "traces");

    ordered_json manifest;
    manifest["kind"] = "adv_set";
    detail_report::stamp(manifest, meta);
    ordered_json samples = ordered_json::array();
    for (const auto& ae : aes) {
        ordered_json row;
        row["id"] = ae.id;
        row["success"] = ae.success;
        row["targeted"] = ae.targeted;
        row["target"] = ae.target == Kind::benign ? "benign" : "malware";
        row["iterations"] = ae.iterations;
        row["norms"] = {{"l0", ae.norms.l0}, {"l2", ae.norms.l2}, {"linf", ae.norms.linf}};
        if (!ae.error.empty()) row["error"] = ae.error;
        samples.push_back(row);

        write_pgm((dir / "orig" / (ae.id + ".pgm")).string(), tensor_to_gray(ae.x_orig));
        write_pgm((dir / "adv" / (ae.id + ".pgm")).string(), tensor_to_gray(ae.x_adv));

        std::string csv = "iteration,abs_loss\n";
        for (const auto& [t, l] : ae.loss_trace)
            csv += std::to_string(t) + "," + detail_report::fmt(l, "%.17g") + "\n";
        detail_report::write_file(dir / "traces" / (ae.id + ".csv"), csv);
    }
    manifest["samples"] = samples;
    write_json_file(dir / "manifest.json", manifest);
}

inline std::vector<AdvExample> load_adv_set(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IngestError("cannot open AE manifest under " + dir.string());
    ordered_json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IngestError("malformed AE manifest: " + std::string(e.what()));
    }

    std::vector<AdvExample> out;
    for (const auto& row : manifest.at("samples")) {
        AdvExample ae;
        ae.id = row.at("id").get<std::string>();
        ae.success = row.at("success").get<bool>();
        ae.targeted = row.at("targeted").get<bool>();
        ae.target = row.at("target").get<std::string>() == "benign" ? Kind::benign
                                                                    : Kind::malware;
        ae.iterations = row.at("iterations").get<int>();
        if (row.contains("error")) ae.error = row.at("error").get<std::string>();
        ae.x_orig = normalize(read_pgm((dir / "orig" / (ae.id + ".pgm")).string()));
        ae.x_adv = normalize(read_pgm((dir / "adv" / (ae.id + ".pgm")).string()));

        std::ifstream trace(dir / "traces" / (ae.id + ".csv"));
        if (trace) {
            std::string line;
            std::getline(trace, line);  // header
            while (std::getline(trace, line)) {
                const auto comma = line.find(',');
                if (comma == std::string::npos) continue;
                ae.loss_trace.emplace_back(std::stoi(line.substr(0, comma)),
                                           std::stod(line.substr(comma + 1)));
            }
        }
        detail_attack::finalize(ae);
        out.push_back(std::move(ae));
    }
    return out;
}

}  // namespace malimg
