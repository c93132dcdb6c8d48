#include <doctest.h>

#include <filesystem>
#include <map>
#include <set>

#include "lsr/pairing.hpp"
#include "lsr/rng.hpp"
#include "lsr/synth.hpp"
#include "oracles.hpp"

using namespace lsr;

namespace {

EmbeddingSet grid_set(int n_anatomy, int n_protocols, int n_patients, Eigen::Index m,
                      std::uint64_t seed) {
    SynthConfig cfg;
    cfg.m = static_cast<int>(m);
    cfg.n_anatomy = n_anatomy;
    cfg.n_protocols = n_protocols;
    cfg.n_patients = n_patients;
    cfg.d_bio = std::min<int>(4, static_cast<int>(m) - 2);
    cfg.d_tech = 2;
    cfg.noise_sigma = 0.05;
    cfg.seed = seed;
    return generate(cfg).first;
}

std::map<std::uint64_t, std::size_t> id_index(const EmbeddingSet& set) {
    std::map<std::uint64_t, std::size_t> out;
    for (std::size_t i = 0; i < set.size(); ++i) out[set.record_ids[i]] = i;
    return out;
}

}  // namespace

TEST_CASE("knn: exact duplicate ranks first with similarity 1") {
    EmbeddingSet set;
    set.vectors.resize(4, 3);
    set.vectors << 1, 0, 0,
                   2, 0, 0,   // same direction as the query
                   0, 1, 0,
                   0, 0, 1;
    for (std::uint64_t i = 0; i < 4; ++i) {
        set.record_ids.push_back(i);
        set.anatomy_ids.push_back(0);
        set.protocol_ids.push_back(0);
        set.patient_ids.push_back(0);
        set.has_survival.push_back(0);
        set.survival_times.push_back(0);
        set.events.push_back(0);
    }
    set.rebuild_vocabs();
    const auto ranked = knn_cosine(0, set, nullptr, 3);
    CHECK(ranked[0] == 1);
}

TEST_CASE("knn: orthogonal candidates tie-break by ascending record_id") {
    EmbeddingSet set;
    set.vectors.resize(4, 4);
    set.vectors << 1, 0, 0, 0,
                   0, 1, 0, 0,
                   0, 0, 1, 0,
                   0, 0, 0, 1;
    for (std::uint64_t i = 0; i < 4; ++i) {
        set.record_ids.push_back(10 * (4 - i));  // ids 40, 30, 20, 10 in row order
        set.anatomy_ids.push_back(0);
        set.protocol_ids.push_back(0);
        set.patient_ids.push_back(0);
        set.has_survival.push_back(0);
        set.survival_times.push_back(0);
        set.events.push_back(0);
    }
    set.rebuild_vocabs();
    const auto ranked = knn_cosine(40, set, nullptr, 3);
    CHECK(ranked == std::vector<std::uint64_t>{10, 20, 30});
}

TEST_CASE("knn: 200 random vectors match the exhaustive oracle at k=51") {
    SeededRng rng(31);
    EmbeddingSet set;
    set.vectors.resize(200, 12);
    for (Eigen::Index i = 0; i < 200; ++i) {
        for (Eigen::Index j = 0; j < 12; ++j) set.vectors(i, j) = rng.normal();
        set.record_ids.push_back(static_cast<std::uint64_t>(i));
        set.anatomy_ids.push_back(0);
        set.protocol_ids.push_back(0);
        set.patient_ids.push_back(0);
        set.has_survival.push_back(0);
        set.survival_times.push_back(0);
        set.events.push_back(0);
    }
    set.rebuild_vocabs();
    for (std::size_t q : {0u, 57u, 199u}) {
        const auto got = knn_cosine(q, set, nullptr, 51);
        const auto want = oracle::knn_exhaustive(set.vectors, set.record_ids, q, 51);
        CHECK(got == want);
    }
}

TEST_CASE("knn error paths") {
    EmbeddingSet set;
    set.vectors.resize(3, 2);
    set.vectors << 0, 0,
                   1, 0,
                   0, 1;
    for (std::uint64_t i = 0; i < 3; ++i) {
        set.record_ids.push_back(i);
        set.anatomy_ids.push_back(0);
        set.protocol_ids.push_back(0);
        set.patient_ids.push_back(0);
        set.has_survival.push_back(0);
        set.survival_times.push_back(0);
        set.events.push_back(0);
    }
    set.rebuild_vocabs();
    CHECK_THROWS_WITH_AS(knn_cosine(0, set, nullptr, 1), doctest::Contains("zero norm"), DataError);
    CHECK_THROWS_WITH_AS(knn_cosine(1, set, nullptr, 5), doctest::Contains("candidates"), DataError);
}

TEST_CASE("build_pair_set: balanced output satisfying the metadata invariants") {
    const EmbeddingSet set = grid_set(20, 2, 2, 8, 3);
    PairingOptions opt;
    opt.rank_lo = 3;
    opt.rank_hi = 10;
    opt.neighbors = 11;
    opt.seed = 5;
    const PairSet pairs = build_pair_set(set, 100, opt);
    CHECK(pairs.samples.size() == 100);
    CHECK(pairs.count_label1 == 50);
    CHECK(pairs.count_label0 == 50);
    const auto idx = id_index(set);
    for (const auto& s : pairs.samples) {
        const std::size_t i = idx.at(s.i);
        const std::size_t j = idx.at(s.j);
        if (s.label == 1) {
            CHECK(set.anatomy_ids[i] == set.anatomy_ids[j]);
            CHECK(set.protocol_ids[i] != set.protocol_ids[j]);
        } else {
            CHECK(set.protocol_ids[i] == set.protocol_ids[j]);
            CHECK(set.anatomy_ids[i] != set.anatomy_ids[j]);
        }
        const Vec expect = set.vectors.row(static_cast<Eigen::Index>(i)) -
                           set.vectors.row(static_cast<Eigen::Index>(j));
        CHECK((s.delta - expect).norm() == 0.0);
    }
}

TEST_CASE("build_pair_set: no duplicate ordered pairs") {
    const EmbeddingSet set = grid_set(10, 2, 3, 8, 21);
    PairingOptions opt;
    opt.rank_lo = 2;
    opt.rank_hi = 8;
    opt.neighbors = 9;
    opt.seed = 9;
    const PairSet pairs = build_pair_set(set, 200, opt);
    std::set<std::pair<std::uint64_t, std::uint64_t>> seen;
    for (const auto& s : pairs.samples) CHECK(seen.insert({s.i, s.j}).second);
}

TEST_CASE("build_pair_set: single protocol cannot produce positives") {
    const EmbeddingSet set = grid_set(20, 1, 2, 8, 3);
    PairingOptions opt;
    opt.seed = 5;
    CHECK_THROWS_WITH_AS(build_pair_set(set, 100, opt),
                         doctest::Contains("no positive pairs constructible"), DataError);
}

TEST_CASE("build_pair_set: negative partner rank stays inside the window") {
    const EmbeddingSet set = grid_set(30, 2, 2, 8, 13);
    PairingOptions opt;
    opt.rank_lo = 5;
    opt.rank_hi = 20;
    opt.neighbors = 21;
    opt.seed = 17;
    const PairSet pairs = build_pair_set(set, 200, opt);
    const auto idx = id_index(set);
    // recompute each negative's rank from scratch
    Mat normalized = set.vectors;
    for (Eigen::Index i = 0; i < normalized.rows(); ++i) normalized.row(i).normalize();
    for (const auto& s : pairs.samples) {
        if (s.label != 0) continue;
        const std::size_t qi = idx.at(s.i);
        struct Entry {
            double sim;
            std::uint64_t id;
        };
        std::vector<Entry> entries;
        for (std::size_t c = 0; c < set.size(); ++c) {
            if (set.protocol_ids[c] != set.protocol_ids[qi] ||
                set.anatomy_ids[c] == set.anatomy_ids[qi]) {
                continue;
            }
            entries.push_back({normalized.row(static_cast<Eigen::Index>(qi))
                                   .dot(normalized.row(static_cast<Eigen::Index>(c))),
                               set.record_ids[c]});
        }
        std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
            if (a.sim != b.sim) return a.sim > b.sim;
            return a.id < b.id;
        });
        std::size_t rank = 0;
        for (std::size_t r = 0; r < entries.size(); ++r) {
            if (entries[r].id == s.j) {
                rank = r + 1;
                break;
            }
        }
        CHECK(rank >= opt.rank_lo);
        CHECK(rank <= opt.rank_hi);
    }
}

TEST_CASE("build_pair_set: zero-noise deltas land in the planted subspaces") {
    SynthConfig cfg;
    cfg.m = 16;
    cfg.n_anatomy = 12;
    cfg.n_protocols = 2;
    cfg.n_patients = 2;
    cfg.d_bio = 5;
    cfg.d_tech = 3;
    cfg.noise_sigma = 0.0;
    cfg.seed = 71;
    const auto [set, gt] = generate(cfg);
    PairingOptions opt;
    opt.rank_lo = 2;
    opt.rank_hi = 6;
    opt.neighbors = 7;
    opt.seed = 2;
    const PairSet pairs = build_pair_set(set, 120, opt);
    const Mat proj_t = gt.tech_basis * gt.tech_basis.transpose();
    const Mat proj_b = gt.bio_basis * gt.bio_basis.transpose();
    for (const auto& s : pairs.samples) {
        const Mat& proj = s.label == 1 ? proj_t : proj_b;
        CHECK((s.delta - proj * s.delta).norm() < 1e-8 * std::max(1.0, s.delta.norm()));
    }
}

TEST_CASE("build_pair_set: deterministic under seed, distinct across seeds") {
    const EmbeddingSet set = grid_set(15, 2, 2, 8, 29);
    PairingOptions opt;
    opt.rank_lo = 2;
    opt.rank_hi = 9;
    opt.neighbors = 10;
    opt.seed = 100;
    const PairSet a = build_pair_set(set, 80, opt);
    const PairSet b = build_pair_set(set, 80, opt);
    REQUIRE(a.samples.size() == b.samples.size());
    bool identical = true;
    for (std::size_t k = 0; k < a.samples.size(); ++k) {
        identical = identical && a.samples[k].i == b.samples[k].i && a.samples[k].j == b.samples[k].j;
    }
    CHECK(identical);
    opt.seed = 101;
    const PairSet c = build_pair_set(set, 80, opt);
    bool any_diff = false;
    for (std::size_t k = 0; k < a.samples.size(); ++k) {
        any_diff = any_diff || a.samples[k].i != c.samples[k].i || a.samples[k].j != c.samples[k].j;
    }
    CHECK(any_diff);
}

TEST_CASE("build_pair_set: symmetrization mirrors every sample") {
    const EmbeddingSet set = grid_set(15, 2, 2, 8, 33);
    PairingOptions opt;
    opt.rank_lo = 2;
    opt.rank_hi = 9;
    opt.neighbors = 10;
    opt.symmetrize = true;
    opt.seed = 3;
    const PairSet pairs = build_pair_set(set, 80, opt);
    CHECK(pairs.samples.size() == 80);
    CHECK(pairs.count_label1 == 40);
    for (std::size_t k = 0; k < pairs.samples.size(); k += 2) {
        CHECK(pairs.samples[k].i == pairs.samples[k + 1].j);
        CHECK(pairs.samples[k].j == pairs.samples[k + 1].i);
        CHECK((pairs.samples[k].delta + pairs.samples[k + 1].delta).norm() == 0.0);
    }
}

TEST_CASE("pair set round-trips through the packed container") {
    const EmbeddingSet set = grid_set(10, 2, 2, 8, 41);
    PairingOptions opt;
    opt.rank_lo = 2;
    opt.rank_hi = 6;
    opt.neighbors = 7;
    opt.seed = 4;
    const PairSet pairs = build_pair_set(set, 60, opt);
    const auto path = std::filesystem::temp_directory_path() / "lsr_pairs.bin";
    save_pairs(pairs, path.string());
    const PairSet back = load_pairs(path.string());
    REQUIRE(back.samples.size() == pairs.samples.size());
    CHECK(back.m == pairs.m);
    CHECK(back.count_label1 == pairs.count_label1);
    for (std::size_t k = 0; k < pairs.samples.size(); ++k) {
        CHECK(back.samples[k].i == pairs.samples[k].i);
        CHECK(back.samples[k].j == pairs.samples[k].j);
        CHECK(back.samples[k].label == pairs.samples[k].label);
        CHECK(back.samples[k].delta == pairs.samples[k].delta);
    }
}
