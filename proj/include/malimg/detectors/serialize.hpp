#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "malimg/detectors/detector.hpp"
#include "malimg/errors.hpp"

namespace malimg {

// Self-describing little-endian container, one model per file. Doubles are
// written raw (IEEE-754), so a load/save cycle is bit exact.
namespace detail_ser {

inline constexpr char kMagic[8] = {'M', 'L', 'I', 'M', 'G', 'M', 'D', '1'};

struct Writer {
    std::ofstream out;

    explicit Writer(const std::string& path) : out(path, std::ios::binary) {
        if (!out) throw IngestError("cannot open model file for writing: " + path);
    }
    void raw(const void* p, std::size_t n) {
        out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    }
    void u8(std::uint8_t v) { raw(&v, 1); }
    void u64(std::uint64_t v) { raw(&v, 8); }
    void f64(double v) { raw(&v, 8); }
    void str(const std::string& s) {
        u64(s.size());
        raw(s.data(), s.size());
    }
    void vec(const std::vector<double>& v) {
        u64(v.size());
        raw(v.data(), v.size() * sizeof(double));
    }
};

struct Reader {
    std::ifstream in;
    std::string path;

    explicit Reader(const std::string& p) : in(p, std::ios::binary), path(p) {
        if (!in) throw IngestError("cannot open model file: " + p);
    }
    void raw(void* p, std::size_t n) {
        in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (in.gcount() != static_cast<std::streamsize>(n))
            throw IngestError("truncated model file: " + path);
    }
    std::uint8_t u8() { std::uint8_t v; raw(&v, 1); return v; }
    std::uint64_t u64() { std::uint64_t v; raw(&v, 8); return v; }
    double f64() { double v; raw(&v, 8); return v; }
    std::string str() {
        const auto n = u64();
        if (n > (1ull << 32)) throw IngestError("oversized string in model file: " + path);
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }
    std::vector<double> vec() {
        const auto n = u64();
        if (n > (1ull << 32)) throw IngestError("oversized payload in model file: " + path);
        std::vector<double> v(n);
        raw(v.data(), n * sizeof(double));
        return v;
    }
};

}  // namespace detail_ser

inline void save_detector(const Detector& det, const std::string& path) {
    detail_ser::Writer w(path);
    w.raw(detail_ser::kMagic, sizeof(detail_ser::kMagic));
    w.u8(static_cast<std::uint8_t>(det.algorithm));
    w.u8(det.tag == PipelineTag::wavelet ? 1 : 0);
    w.u64(static_cast<std::uint64_t>(det.wavelet_levels));

    switch (det.algorithm) {
        case Algorithm::cnn: {
            const CnnModel& m = det.cnn();
            w.str("raw-pixels-64x64");
            w.u64(m.seed);
            w.u64(static_cast<std::uint64_t>(m.input_h));
            w.u64(static_cast<std::uint64_t>(m.input_w));
            w.f64(m.dropout);
            w.vec(m.w1); w.vec(m.b1);
            w.vec(m.w2); w.vec(m.b2);
            w.vec(m.w3); w.vec(m.b3);
            w.vec(m.w4); w.vec(m.b4);
            w.vec(m.epoch_loss);
            break;
        }
        case Algorithm::svm: {
            const SvmModel& m = det.svm();
            w.str(m.layout_version);
            w.u64(0);  // svm training is deterministic, no seed
            w.u8(m.kernel == SvmKernel::rbf ? 1 : 0);
            w.f64(m.gamma);
            w.f64(m.c);
            w.f64(m.rho);
            w.f64(m.feature_scale);
            w.f64(m.max_kkt_violation);
            w.u64(static_cast<std::uint64_t>(m.smo_updates));
            w.u64(m.feature_dim);
            w.u64(m.support_vectors.size());
            for (const auto& sv : m.support_vectors) w.vec(sv);
            w.vec(m.alpha);
            w.vec(m.alpha_y);
            w.u64(m.sv_label.size());
            for (auto v : m.sv_label) w.u8(static_cast<std::uint8_t>(v == 1 ? 1 : 0));
            break;
        }
        case Algorithm::rf: {
            const RfModel& m = det.rf();
            w.str(m.layout_version);
            w.u64(m.seed);
            w.u64(m.n_features);
            w.u64(static_cast<std::uint64_t>(m.mtry));
            w.f64(m.oob_error);
            w.u64(m.oob_evaluated);
            w.u64(m.trees.size());
            for (const auto& tree : m.trees) {
                w.u64(tree.nodes.size());
                for (const auto& nd : tree.nodes) {
                    w.u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(nd.feature)));
                    w.f64(nd.threshold);
                    w.u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(nd.left)));
                    w.u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(nd.right)));
                    w.f64(nd.value);
                    w.u64(static_cast<std::uint64_t>(nd.count));
                }
            }
            break;
        }
    }
    if (!w.out) throw IngestError("short write to model file: " + path);
}

inline Detector load_detector(const std::string& path) {
    detail_ser::Reader r(path);
    char magic[8];
    r.raw(magic, sizeof(magic));
    if (std::memcmp(magic, detail_ser::kMagic, sizeof(magic)) != 0)
        throw IngestError("not a model file: " + path);

    Detector det;
    det.algorithm = static_cast<Algorithm>(r.u8());
    det.tag = r.u8() ? PipelineTag::wavelet : PipelineTag::raw;
    det.wavelet_levels = static_cast<int>(r.u64());

    switch (det.algorithm) {
        case Algorithm::cnn: {
            CnnModel m;
            m.tag = det.tag;
            r.str();  // layout marker
            m.seed = r.u64();
            m.input_h = static_cast<int>(r.u64());
            m.input_w = static_cast<int>(r.u64());
            m.dropout = r.f64();
            m.w1 = r.vec(); m.b1 = r.vec();
            m.w2 = r.vec(); m.b2 = r.vec();
            m.w3 = r.vec(); m.b3 = r.vec();
            m.w4 = r.vec(); m.b4 = r.vec();
            m.epoch_loss = r.vec();
            det.model = std::move(m);
            break;
        }
        case Algorithm::svm: {
            SvmModel m;
            m.tag = det.tag;
            m.layout_version = r.str();
            r.u64();  // reserved
            m.kernel = r.u8() ? SvmKernel::rbf : SvmKernel::linear;
            m.gamma = r.f64();
            m.c = r.f64();
            m.rho = r.f64();
            m.feature_scale = r.f64();
            m.max_kkt_violation = r.f64();
            m.smo_updates = static_cast<long>(r.u64());
            m.feature_dim = r.u64();
            const auto nsv = r.u64();
            m.support_vectors.resize(nsv);
            for (auto& sv : m.support_vectors) sv = r.vec();
            m.alpha = r.vec();
            m.alpha_y = r.vec();
            const auto nl = r.u64();
            m.sv_label.resize(nl);
            for (auto& v : m.sv_label) v = r.u8() ? 1 : -1;
            det.model = std::move(m);
            break;
        }
        case Algorithm::rf: {
            RfModel m;
            m.tag = det.tag;
            m.layout_version = r.str();
            m.seed = r.u64();
            m.n_features = r.u64();
            m.mtry = static_cast<int>(r.u64());
            m.oob_error = r.f64();
            m.oob_evaluated = r.u64();
            m.trees.resize(r.u64());
            for (auto& tree : m.trees) {
                tree.nodes.resize(r.u64());
                for (auto& nd : tree.nodes) {
                    nd.feature = static_cast<int>(static_cast<std::int64_t>(r.u64()));
                    nd.threshold = r.f64();
                    nd.left = static_cast<int>(static_cast<std::int64_t>(r.u64()));
                    nd.right = static_cast<int>(static_cast<std::int64_t>(r.u64()));
                    nd.value = r.f64();
                    nd.count = static_cast<int>(r.u64());
                }
            }
            det.model = std::move(m);
            break;
        }
        default:
            throw IngestError("unknown algorithm tag in model file: " + path);
    }
    return det;
}

}  // namespace malimg
