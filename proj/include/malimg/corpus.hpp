#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "malimg/errors.hpp"
#include "malimg/rng.hpp"

namespace malimg {

enum class Kind { malware, benign };

// The nine malware families plus benign, matching the labels.csv vocabulary.
enum class Family { R, L, K3, V, S, T, K1, O, G };

inline constexpr int kFamilyCount = 9;

inline const char* family_name(Family f) {
    switch (f) {
        case Family::R: return "R";
        case Family::L: return "L";
        case Family::K3: return "K3";
        case Family::V: return "V";
        case Family::S: return "S";
        case Family::T: return "T";
        case Family::K1: return "K1";
        case Family::O: return "O";
        case Family::G: return "G";
    }
    return "?";
}

struct ClassLabel {
    Kind kind = Kind::benign;
    std::optional<Family> family;  // present iff kind == malware

    bool valid() const { return family.has_value() == (kind == Kind::malware); }

    static ClassLabel benign() { return {Kind::benign, std::nullopt}; }
    static ClassLabel malware(Family f) { return {Kind::malware, f}; }
};

inline std::string label_to_string(const ClassLabel& l) {
    return l.kind == Kind::benign ? "benign" : family_name(*l.family);
}

inline ClassLabel label_from_string(const std::string& s) {
    if (s == "benign") return ClassLabel::benign();
    for (int i = 0; i < kFamilyCount; ++i) {
        Family f = static_cast<Family>(i);
        if (s == family_name(f)) return ClassLabel::malware(f);
    }
    throw LabelError("unknown label '" + s + "'");
}

// One labeled raw binary.
struct ByteSample {
    std::string id;
    std::vector<std::uint8_t> bytes;  // length >= 64
    ClassLabel label;
    enum class Source { loaded, synthetic } source = Source::loaded;
};

struct Corpus {
    std::vector<ByteSample> samples;
    std::uint64_t seed = 0;  // generation seed for synthetic corpora

    std::size_t size() const { return samples.size(); }
    std::size_t count(Kind k) const {
        std::size_t n = 0;
        for (const auto& s : samples)
            if (s.label.kind == k) ++n;
        return n;
    }
};

inline void validate_sample(const ByteSample& s) {
    if (s.bytes.size() < 64)
        throw SpecError("sample '" + s.id + "' shorter than 64 bytes");
    if (!s.label.valid())
        throw LabelError("sample '" + s.id + "' has inconsistent label");
}

// --- Synthetic stand-in corpus ------------------------------------------

// Families are fixed byte motifs tiled over pseudo-random background noise.
// Motif bytes live in the dark half of the range so every family carries
// texture a detector can learn, while benign samples are pure background.
struct SynthSpec {
    int per_family = 10;
    int benign = 20;
    std::size_t size_min = 2048;
    std::size_t size_max = 8192;
    std::uint64_t motif_seed = 1;
    int motif_length = 32;
    double motif_density = 0.5;
    double noise_entropy = 1.0;  // fraction of the 8-bit range used by background bytes
};

inline void validate_spec(const SynthSpec& spec) {
    if (spec.per_family < 0 || spec.benign < 0)
        throw SpecError("negative sample count");
    if (spec.size_min < 1024 || spec.size_max > 64 * 1024 || spec.size_min > spec.size_max)
        throw SpecError("size range must sit inside [1KB, 64KB]");
    if (spec.motif_length < 1) throw SpecError("motif_length must be positive");
    if (!(spec.motif_density >= 0.0 && spec.motif_density <= 1.0))
        throw SpecError("motif_density must lie in [0,1]");
    if (!(spec.noise_entropy > 0.0 && spec.noise_entropy <= 1.0))
        throw SpecError("noise_entropy must lie in (0,1]");
}

namespace detail {

inline std::uint8_t noise_byte(Rng& rng, double entropy) {
    const int levels = std::max(2, static_cast<int>(std::lround(std::exp2(8.0 * entropy))));
    const auto i = rng.uniform_int(static_cast<std::uint64_t>(levels));
    return static_cast<std::uint8_t>(
        std::lround(static_cast<double>(i) * 255.0 / (levels - 1)));
}

inline std::vector<std::uint8_t> family_motif(const SynthSpec& spec, int family_index) {
    Rng rng(derive_seed(spec.motif_seed, "motif", static_cast<std::uint64_t>(family_index)));
    std::vector<std::uint8_t> motif(static_cast<std::size_t>(spec.motif_length));
    for (auto& b : motif) b = static_cast<std::uint8_t>(rng.uniform_int(128));
    return motif;
}

}  // namespace detail

// Pure function of (spec, seed): identical arguments yield byte-identical
// corpora. Benign background bytes come from a stream disjoint from every
// malware stream.
inline Corpus synth_corpus(const SynthSpec& spec, std::uint64_t seed) {
    validate_spec(spec);
    Corpus corpus;
    corpus.seed = seed;

    const std::size_t span = spec.size_max - spec.size_min + 1;
    char idbuf[64];

    for (int f = 0; f < kFamilyCount; ++f) {
        const auto motif = detail::family_motif(spec, f);
        for (int j = 0; j < spec.per_family; ++j) {
            Rng rng(derive_seed(seed, "malware",
                                static_cast<std::uint64_t>(f) * 1000003ull +
                                    static_cast<std::uint64_t>(j)));
            ByteSample s;
            std::snprintf(idbuf, sizeof(idbuf), "m-%s-%04d",
                          family_name(static_cast<Family>(f)), j);
            s.id = idbuf;
            s.label = ClassLabel::malware(static_cast<Family>(f));
            s.source = ByteSample::Source::synthetic;
            const std::size_t n = spec.size_min + rng.uniform_int(span);
            s.bytes.resize(n);
            for (std::size_t pos = 0; pos < n; pos += motif.size()) {
                const bool use_motif = rng.uniform01() < spec.motif_density;
                for (std::size_t k = 0; k < motif.size() && pos + k < n; ++k) {
                    s.bytes[pos + k] =
                        use_motif ? motif[k] : detail::noise_byte(rng, spec.noise_entropy);
                }
            }
            corpus.samples.push_back(std::move(s));
        }
    }
    for (int j = 0; j < spec.benign; ++j) {
        Rng rng(derive_seed(seed, "benign", static_cast<std::uint64_t>(j)));
        ByteSample s;
        std::snprintf(idbuf, sizeof(idbuf), "b-%04d", j);
        s.id = idbuf;
        s.label = ClassLabel::benign();
        s.source = ByteSample::Source::synthetic;
        const std::size_t n = spec.size_min + rng.uniform_int(span);
        s.bytes.resize(n);
        for (auto& b : s.bytes) b = detail::noise_byte(rng, spec.noise_entropy);
        corpus.samples.push_back(std::move(s));
    }

    for (const auto& s : corpus.samples) validate_sample(s);
    return corpus;
}

// --- Disk format: labels.csv + one <id>.bin per row ----------------------

inline Corpus load_corpus(const std::filesystem::path& root) {
    const auto manifest = root / "labels.csv";
    std::ifstream in(manifest);
    if (!in) throw IngestError("cannot open " + manifest.string());

    std::string line;
    if (!std::getline(in, line)) throw EmptyCorpus("empty manifest " + manifest.string());
    if (line != "id,label" && line != "id,label\r")
        throw IngestError("manifest header must be 'id,label'");

    Corpus corpus;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw IngestError("malformed manifest row '" + line + "'");
        ByteSample s;
        s.id = line.substr(0, comma);
        s.label = label_from_string(line.substr(comma + 1));
        s.source = ByteSample::Source::loaded;
        if (!seen.insert(s.id).second)
            throw IngestError("duplicate id '" + s.id + "' in manifest");

        std::ifstream bin(root / (s.id + ".bin"), std::ios::binary);
        if (!bin) throw IngestError(s.id);
        s.bytes.assign(std::istreambuf_iterator<char>(bin), std::istreambuf_iterator<char>());
        if (s.bytes.empty()) throw IngestError("empty sample file for id '" + s.id + "'");
        corpus.samples.push_back(std::move(s));
    }
    if (corpus.samples.empty()) throw EmptyCorpus("manifest has no rows: " + manifest.string());

    std::sort(corpus.samples.begin(), corpus.samples.end(),
              [](const ByteSample& a, const ByteSample& b) { return a.id < b.id; });
    return corpus;
}

inline void save_corpus(const Corpus& corpus, const std::filesystem::path& root) {
    std::filesystem::create_directories(root);
    std::vector<const ByteSample*> ordered;
    ordered.reserve(corpus.samples.size());
    for (const auto& s : corpus.samples) ordered.push_back(&s);
    std::sort(ordered.begin(), ordered.end(),
              [](const ByteSample* a, const ByteSample* b) { return a->id < b->id; });

    std::ofstream manifest(root / "labels.csv", std::ios::binary);
    if (!manifest) throw IngestError("cannot write manifest under " + root.string());
    manifest << "id,label\n";
    for (const ByteSample* s : ordered) {
        manifest << s->id << "," << label_to_string(s->label) << "\n";
        std::ofstream bin(root / (s->id + ".bin"), std::ios::binary);
        if (!bin) throw IngestError("cannot write sample file for id '" + s->id + "'");
        bin.write(reinterpret_cast<const char*>(s->bytes.data()),
                  static_cast<std::streamsize>(s->bytes.size()));
    }
}

// --- Cross-validation folds ----------------------------------------------

struct FoldAssignment {
    int k = 0;
    std::map<std::string, int> fold_of;  // id -> fold in [0,k)

    std::vector<std::string> ids_in_fold(int fold) const {
        std::vector<std::string> out;
        for (const auto& [id, f] : fold_of)
            if (f == fold) out.push_back(id);
        return out;
    }
};

// Stratified by malware/benign: each stratum is shuffled and dealt
// round-robin on one rolling cursor, so per-stratum and total fold sizes
// both differ by at most one.
inline FoldAssignment split_folds(const Corpus& corpus, int k, std::uint64_t seed) {
    if (k < 2) throw FoldError("k must be at least 2");
    if (static_cast<std::size_t>(k) > corpus.size())
        throw FoldError("k exceeds corpus size");

    std::vector<std::string> malware_ids, benign_ids;
    for (const auto& s : corpus.samples)
        (s.label.kind == Kind::malware ? malware_ids : benign_ids).push_back(s.id);
    std::sort(malware_ids.begin(), malware_ids.end());
    std::sort(benign_ids.begin(), benign_ids.end());

    Rng rng(derive_seed(seed, "folds"));
    rng.shuffle(malware_ids);
    rng.shuffle(benign_ids);

    FoldAssignment fa;
    fa.k = k;
    int cursor = 0;
    for (const auto& id : malware_ids) {
        fa.fold_of[id] = cursor;
        cursor = (cursor + 1) % k;
    }
    for (const auto& id : benign_ids) {
        fa.fold_of[id] = cursor;
        cursor = (cursor + 1) % k;
    }
    return fa;
}

}  // namespace malimg
