#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "malimg/corpus.hpp"
#include "oracles.hpp"

using namespace malimg;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_sample(const fs::path& dir, const std::string& id, std::size_t n = 64,
                  std::uint8_t fill = 1) {
    std::ofstream out(dir / (id + ".bin"), std::ios::binary);
    std::vector<char> bytes(n, static_cast<char>(fill));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST(Labels, RoundTripVocabulary) {
    for (const std::string s : {"benign", "R", "L", "K3", "V", "S", "T", "K1", "O", "G"}) {
        const ClassLabel l = label_from_string(s);
        EXPECT_TRUE(l.valid());
        EXPECT_EQ(label_to_string(l), s);
    }
    EXPECT_THROW(label_from_string("Ramnit"), LabelError);
    EXPECT_THROW(label_from_string(""), LabelError);
}

TEST(LoadCorpus, DirectMappingAndOrdering) {
    const auto dir = fresh_dir("malimg-load-basic");
    std::ofstream(dir / "labels.csv") << "id,label\nb,R\na,benign\n";
    write_sample(dir, "a");
    write_sample(dir, "b");
    const Corpus c = load_corpus(dir);
    ASSERT_EQ(c.size(), 2u);
    EXPECT_EQ(c.samples[0].id, "a");  // sorted by id
    EXPECT_EQ(c.samples[0].label.kind, Kind::benign);
    EXPECT_EQ(c.samples[1].id, "b");
    EXPECT_EQ(c.samples[1].label.kind, Kind::malware);
    EXPECT_EQ(*c.samples[1].label.family, Family::R);
    fs::remove_all(dir);
}

TEST(LoadCorpus, MissingSampleFileNamesTheId) {
    const auto dir = fresh_dir("malimg-load-missing");
    std::ofstream(dir / "labels.csv") << "id,label\na,benign\n";
    try {
        load_corpus(dir);
        FAIL() << "expected IngestError";
    } catch (const IngestError& e) {
        EXPECT_NE(std::string(e.what()).find("a"), std::string::npos);
    }
    fs::remove_all(dir);
}

TEST(LoadCorpus, UnknownLabelAndEmptyManifest) {
    const auto dir = fresh_dir("malimg-load-label");
    std::ofstream(dir / "labels.csv") << "id,label\na,trojan\n";
    write_sample(dir, "a");
    EXPECT_THROW(load_corpus(dir), LabelError);

    std::ofstream(dir / "labels.csv", std::ios::trunc) << "id,label\n";
    EXPECT_THROW(load_corpus(dir), EmptyCorpus);

    std::ofstream(dir / "labels.csv", std::ios::trunc) << "";
    EXPECT_THROW(load_corpus(dir), EmptyCorpus);
    fs::remove_all(dir);
}

TEST(LoadCorpus, PreservesSkewedClassCounts) {
    // Mirrors the real corpus's class skew (e.g. 41 of one family against
    // 2942 of another); per-class counts must be preserved exactly.
    const auto dir = fresh_dir("malimg-load-skew");
    std::ofstream manifest(dir / "labels.csv");
    manifest << "id,label\n";
    int serial = 0;
    auto add = [&](const std::string& label, int count) {
        for (int i = 0; i < count; ++i) {
            char id[32];
            std::snprintf(id, sizeof(id), "s%05d", serial++);
            manifest << id << "," << label << "\n";
            write_sample(dir, id);
        }
    };
    add("S", 41);
    add("K3", 2942);
    add("benign", 100);
    manifest.close();

    const Corpus c = load_corpus(dir);
    EXPECT_EQ(c.size(), 41u + 2942u + 100u);
    std::size_t s = 0, k3 = 0, benign = 0;
    for (const auto& sample : c.samples) {
        if (sample.label.kind == Kind::benign) ++benign;
        else if (*sample.label.family == Family::S) ++s;
        else if (*sample.label.family == Family::K3) ++k3;
    }
    EXPECT_EQ(s, 41u);
    EXPECT_EQ(k3, 2942u);
    EXPECT_EQ(benign, 100u);
    fs::remove_all(dir);
}

TEST(SaveLoad, IdentityOnBytesAndLabels) {
    SynthSpec spec;
    spec.per_family = 3;
    spec.benign = 5;
    const Corpus original = synth_corpus(spec, 11);
    const auto dir = fresh_dir("malimg-roundtrip");
    save_corpus(original, dir);
    const Corpus loaded = load_corpus(dir);
    ASSERT_EQ(loaded.size(), original.size());

    std::map<std::string, const ByteSample*> by_id;
    for (const auto& s : original.samples) by_id[s.id] = &s;
    for (const auto& s : loaded.samples) {
        ASSERT_TRUE(by_id.count(s.id));
        EXPECT_EQ(s.bytes, by_id[s.id]->bytes);
        EXPECT_EQ(label_to_string(s.label), label_to_string(by_id[s.id]->label));
    }
    fs::remove_all(dir);
}

TEST(SynthCorpus, ExactCountsAndSizes) {
    SynthSpec spec;
    spec.per_family = 10;
    spec.benign = 20;
    spec.size_min = 2048;
    spec.size_max = 8192;
    const Corpus c = synth_corpus(spec, 7);
    EXPECT_EQ(c.size(), 110u);
    EXPECT_EQ(c.count(Kind::malware), 90u);
    EXPECT_EQ(c.count(Kind::benign), 20u);
    for (const auto& s : c.samples) {
        EXPECT_GE(s.bytes.size(), 2048u);
        EXPECT_LE(s.bytes.size(), 8192u);
        EXPECT_EQ(s.source, ByteSample::Source::synthetic);
    }
}

TEST(SynthCorpus, PureFunctionOfSpecAndSeed) {
    SynthSpec spec;
    spec.per_family = 4;
    spec.benign = 6;
    const Corpus a = synth_corpus(spec, 1234);
    const Corpus b = synth_corpus(spec, 1234);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a.samples[i].id, b.samples[i].id);
        EXPECT_EQ(a.samples[i].bytes, b.samples[i].bytes);
    }
    const Corpus c = synth_corpus(spec, 1235);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a.samples[i].bytes != c.samples[i].bytes) any_diff = true;
    EXPECT_TRUE(any_diff);
}

TEST(SynthCorpus, MotifDensityControlsHistogramDistance) {
    // Oracle: mean L1 histogram distance between family samples and benign
    // samples over 30 pairs, at density 1.0 versus 0.0.
    auto mean_distance = [](double density) {
        SynthSpec spec;
        spec.per_family = 4;
        spec.benign = 30;
        spec.motif_density = density;
        const Corpus c = synth_corpus(spec, 99);
        std::vector<const ByteSample*> malware, benign;
        for (const auto& s : c.samples)
            (s.label.kind == Kind::malware ? malware : benign).push_back(&s);
        double total = 0.0;
        for (int i = 0; i < 30; ++i)
            total += oracles::hist_l1(malware[i % malware.size()]->bytes, benign[i]->bytes);
        return total / 30.0;
    };
    EXPECT_GT(mean_distance(1.0), mean_distance(0.0));
}

TEST(SynthCorpus, RejectsInvalidSpecs) {
    SynthSpec bad;
    bad.motif_density = 1.5;
    EXPECT_THROW(synth_corpus(bad, 1), SpecError);
    bad = SynthSpec{};
    bad.size_min = 512;  // below 1KB
    EXPECT_THROW(synth_corpus(bad, 1), SpecError);
    bad = SynthSpec{};
    bad.size_max = 128 * 1024;  // above 64KB
    EXPECT_THROW(synth_corpus(bad, 1), SpecError);
}

namespace {

Corpus tiny_corpus(int malware, int benign) {
    Corpus c;
    for (int i = 0; i < malware; ++i) {
        ByteSample s;
        s.id = "m" + std::to_string(100 + i);
        s.bytes.assign(64, 1);
        s.label = ClassLabel::malware(Family::R);
        c.samples.push_back(s);
    }
    for (int i = 0; i < benign; ++i) {
        ByteSample s;
        s.id = "b" + std::to_string(100 + i);
        s.bytes.assign(64, 2);
        s.label = ClassLabel::benign();
        c.samples.push_back(s);
    }
    return c;
}

}  // namespace

TEST(SplitFolds, TenEqualFolds) {
    const Corpus c = tiny_corpus(70, 30);
    const FoldAssignment fa = split_folds(c, 10, 5);
    std::vector<int> sizes(10, 0);
    for (const auto& [id, f] : fa.fold_of) ++sizes[static_cast<std::size_t>(f)];
    for (int s : sizes) EXPECT_EQ(s, 10);
}

TEST(SplitFolds, SingletonFolds) {
    const Corpus c = tiny_corpus(5, 5);
    const FoldAssignment fa = split_folds(c, 10, 5);
    std::vector<int> sizes(10, 0);
    for (const auto& [id, f] : fa.fold_of) ++sizes[static_cast<std::size_t>(f)];
    for (int s : sizes) EXPECT_EQ(s, 1);
}

TEST(SplitFolds, PartitionProperty) {
    // Oracle: folds are pairwise disjoint and their union is the id set;
    // 101 samples over 10 folds gives one fold of 11 and nine of 10.
    const Corpus c = tiny_corpus(71, 30);
    const FoldAssignment fa = split_folds(c, 10, 17);
    EXPECT_EQ(fa.fold_of.size(), 101u);

    std::set<std::string> seen;
    std::vector<int> sizes(10, 0);
    for (const auto& [id, f] : fa.fold_of) {
        EXPECT_TRUE(seen.insert(id).second);
        ASSERT_GE(f, 0);
        ASSERT_LT(f, 10);
        ++sizes[static_cast<std::size_t>(f)];
    }
    std::set<std::string> ids;
    for (const auto& s : c.samples) ids.insert(s.id);
    EXPECT_EQ(seen, ids);

    std::sort(sizes.begin(), sizes.end());
    EXPECT_EQ(sizes.front(), 10);
    EXPECT_EQ(sizes.back(), 11);
}

TEST(SplitFolds, StratifiedByKind) {
    const Corpus c = tiny_corpus(73, 29);
    const int k = 10;
    const FoldAssignment fa = split_folds(c, k, 3);
    std::map<std::string, Kind> kind_of;
    for (const auto& s : c.samples) kind_of[s.id] = s.label.kind;

    std::vector<int> malware_per(k, 0), benign_per(k, 0), total(k, 0);
    for (const auto& [id, f] : fa.fold_of) {
        ++total[static_cast<std::size_t>(f)];
        if (kind_of[id] == Kind::malware) ++malware_per[static_cast<std::size_t>(f)];
        else ++benign_per[static_cast<std::size_t>(f)];
    }
    auto spread = [](const std::vector<int>& v) {
        return *std::max_element(v.begin(), v.end()) - *std::min_element(v.begin(), v.end());
    };
    EXPECT_LE(spread(malware_per), 1);
    EXPECT_LE(spread(benign_per), 1);
    EXPECT_LE(spread(total), 1);
}

TEST(SplitFolds, DeterministicAndSeedSensitive) {
    const Corpus c = tiny_corpus(40, 20);
    const FoldAssignment a = split_folds(c, 5, 7);
    const FoldAssignment b = split_folds(c, 5, 7);
    EXPECT_EQ(a.fold_of, b.fold_of);
    const FoldAssignment d = split_folds(c, 5, 8);
    EXPECT_NE(a.fold_of, d.fold_of);
}

TEST(SplitFolds, RejectsBadK) {
    const Corpus c = tiny_corpus(3, 2);
    EXPECT_THROW(split_folds(c, 6, 1), FoldError);
    EXPECT_THROW(split_folds(c, 1, 1), FoldError);
}
