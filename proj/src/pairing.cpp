#include "lsr/pairing.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <unordered_map>

#include "lsr/binio.hpp"
#include "lsr/rng.hpp"

namespace lsr {

namespace {

constexpr char kPairMagic[9] = "LSRPRS01";

/// Ranked candidate list for one query over a fixed candidate pool:
/// descending cosine similarity of l2-normalized vectors, ties by ascending
/// record_id. Zero-norm candidates sort as similarity 0.
std::vector<std::size_t> rank_by_cosine(const Mat& normalized, const EmbeddingSet& set,
                                        std::size_t query, const std::vector<std::size_t>& pool) {
    struct Entry {
        double sim;
        std::uint64_t id;
        std::size_t idx;
    };
    std::vector<Entry> entries;
    entries.reserve(pool.size());
    const Vec q = normalized.row(static_cast<Eigen::Index>(query)).transpose();
    for (std::size_t c : pool) {
        const double sim = normalized.row(static_cast<Eigen::Index>(c)) * q;
        entries.push_back({sim, set.record_ids[c], c});
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.sim != b.sim) return a.sim > b.sim;
        return a.id < b.id;
    });
    std::vector<std::size_t> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.idx);
    return out;
}

Mat l2_normalized(const Mat& x) {
    Mat out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double n = x.row(i).norm();
        out.row(i) = n > 0.0 ? (x.row(i) / n).eval() : x.row(i);
    }
    return out;
}

std::size_t index_of_record(const EmbeddingSet& set, std::uint64_t record_id) {
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (set.record_ids[i] == record_id) return i;
    }
    throw DataError("record_id " + std::to_string(record_id) + " not in set");
}

}  // namespace

std::vector<std::uint64_t> knn_cosine(std::uint64_t query_id, const EmbeddingSet& set,
                                      const std::function<bool(const EmbeddingRecord&)>& filter,
                                      std::size_t k) {
    const std::size_t q = index_of_record(set, query_id);
    if (set.vectors.row(static_cast<Eigen::Index>(q)).norm() == 0.0) {
        throw DataError("knn_cosine: query vector has zero norm (record_id " +
                        std::to_string(query_id) + ")");
    }
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (i == q) continue;
        if (!filter || filter(set.record(i))) pool.push_back(i);
    }
    if (pool.size() < k) {
        throw DataError("knn_cosine: only " + std::to_string(pool.size()) +
                        " candidates pass the filter, need k=" + std::to_string(k));
    }
    const Mat normalized = l2_normalized(set.vectors);
    const auto ranked = rank_by_cosine(normalized, set, q, pool);
    std::vector<std::uint64_t> out;
    out.reserve(k);
    for (std::size_t r = 0; r < k; ++r) out.push_back(set.record_ids[ranked[r]]);
    return out;
}

PairSet build_pair_set(const EmbeddingSet& set, std::size_t n_pairs, const PairingOptions& opt) {
    if (opt.rank_lo < 1 || opt.rank_hi < opt.rank_lo) {
        throw ConfigError("pairing: need 1 <= rank_lo <= rank_hi");
    }
    if (opt.neighbors <= opt.rank_hi) {
        throw ConfigError("pairing: neighbors must exceed rank_hi");
    }
    const std::size_t divisor = opt.symmetrize ? 4 : 2;
    if (n_pairs == 0 || n_pairs % divisor != 0) {
        throw ConfigError("pairing: n_pairs must be a positive multiple of " + std::to_string(divisor));
    }
    if (set.protocol_vocab.size() < 2) {
        throw DataError("pairing: no positive pairs constructible (single protocol)");
    }
    if (set.anatomy_vocab.size() < 2) {
        throw DataError("pairing: no negative pairs constructible (single anatomy site)");
    }

    const std::size_t n = set.size();
    std::unordered_map<std::uint32_t, std::size_t> protocol_rank;
    for (std::size_t r = 0; r < set.protocol_vocab.size(); ++r) {
        protocol_rank[set.protocol_vocab[r]] = r;
    }

    // partner pools keyed by metadata
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<std::size_t>> by_anat_proto;
    for (std::size_t i = 0; i < n; ++i) {
        by_anat_proto[{set.anatomy_ids[i], set.protocol_ids[i]}].push_back(i);
    }

    std::vector<std::size_t> positive_anchors;
    std::vector<std::vector<std::size_t>> positive_partners(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::uint32_t p : set.protocol_vocab) {
            if (p == set.protocol_ids[i]) continue;
            const auto it = by_anat_proto.find({set.anatomy_ids[i], p});
            if (it == by_anat_proto.end()) continue;
            positive_partners[i].insert(positive_partners[i].end(), it->second.begin(),
                                        it->second.end());
        }
        if (!positive_partners[i].empty()) positive_anchors.push_back(i);
    }
    if (positive_anchors.empty()) {
        throw DataError("pairing: no positive pairs constructible");
    }

    // negatives: anchors with at least rank_lo same-protocol/different-anatomy
    // candidates and a nonzero query vector (candidate counts from metadata,
    // candidate lists built lazily per anchor)
    std::map<std::uint32_t, std::size_t> proto_count;
    for (std::size_t i = 0; i < n; ++i) ++proto_count[set.protocol_ids[i]];
    std::vector<std::size_t> negative_anchors;
    for (std::size_t i = 0; i < n; ++i) {
        if (set.vectors.row(static_cast<Eigen::Index>(i)).norm() == 0.0) continue;
        const std::size_t same_cell =
            by_anat_proto.at({set.anatomy_ids[i], set.protocol_ids[i]}).size();
        const std::size_t eligible = proto_count.at(set.protocol_ids[i]) - same_cell;
        if (eligible >= opt.rank_lo) negative_anchors.push_back(i);
    }
    if (negative_anchors.empty()) {
        throw DataError("pairing: insufficient same-protocol candidates within the rank window");
    }

    const Mat normalized = l2_normalized(set.vectors);
    // ranked candidates up to rank_hi, memoized per anchor
    std::unordered_map<std::size_t, std::vector<std::size_t>> ranked_cache;
    auto ranked_window = [&](std::size_t anchor) -> const std::vector<std::size_t>& {
        auto it = ranked_cache.find(anchor);
        if (it != ranked_cache.end()) return it->second;
        std::vector<std::size_t> pool;
        for (std::size_t j = 0; j < n; ++j) {
            if (set.protocol_ids[j] == set.protocol_ids[anchor] &&
                set.anatomy_ids[j] != set.anatomy_ids[anchor]) {
                pool.push_back(j);
            }
        }
        auto ranked = rank_by_cosine(normalized, set, anchor, pool);
        if (ranked.size() > opt.rank_hi) ranked.resize(opt.rank_hi);
        return ranked_cache.emplace(anchor, std::move(ranked)).first->second;
    };

    SeededRng rng = SeededRng::derive(opt.seed, streams::pairing);
    const std::size_t base_total = opt.symmetrize ? n_pairs / 2 : n_pairs;
    const std::size_t want_each = base_total / 2;

    PairSet out;
    out.m = set.dim();
    out.samples.reserve(n_pairs);

    auto emit = [&](std::size_t a, std::size_t b, std::uint8_t label) {
        PairSample s;
        s.i = set.record_ids[a];
        s.j = set.record_ids[b];
        s.label = label;
        s.delta = set.vectors.row(static_cast<Eigen::Index>(a)) -
                  set.vectors.row(static_cast<Eigen::Index>(b));
        out.samples.push_back(std::move(s));
        if (opt.symmetrize) {
            PairSample m;
            m.i = set.record_ids[b];
            m.j = set.record_ids[a];
            m.label = label;
            m.delta = -out.samples.back().delta;
            out.samples.push_back(std::move(m));
        }
        if (label == 1) {
            out.count_label1 += opt.symmetrize ? 2 : 1;
        } else {
            out.count_label0 += opt.symmetrize ? 2 : 1;
        }
    };

    std::set<std::pair<std::size_t, std::size_t>> used_pos;
    std::size_t attempts = 0;
    const std::size_t max_attempts = 200 * want_each + 1000;
    while (used_pos.size() < want_each) {
        if (++attempts > max_attempts) {
            throw DataError("pairing: insufficient distinct positive pairs (got " +
                            std::to_string(used_pos.size()) + " of " + std::to_string(want_each) + ")");
        }
        std::size_t a = positive_anchors[rng.uniform_below(positive_anchors.size())];
        const auto& partners = positive_partners[a];
        std::size_t b = partners[rng.uniform_below(partners.size())];
        // orient by protocol vocabulary order: minuend carries the lower index
        if (protocol_rank.at(set.protocol_ids[a]) > protocol_rank.at(set.protocol_ids[b])) {
            std::swap(a, b);
        }
        if (!used_pos.insert({a, b}).second) continue;
        emit(a, b, 1);
    }

    std::set<std::pair<std::size_t, std::size_t>> used_neg;
    attempts = 0;
    while (used_neg.size() < want_each) {
        if (++attempts > max_attempts) {
            throw DataError("pairing: insufficient distinct negative pairs within the rank window (got " +
                            std::to_string(used_neg.size()) + " of " + std::to_string(want_each) + ")");
        }
        const std::size_t a = negative_anchors[rng.uniform_below(negative_anchors.size())];
        const auto& ranked = ranked_window(a);
        const std::size_t hi = std::min(opt.rank_hi, ranked.size());
        const std::size_t rank = opt.rank_lo + rng.uniform_below(hi - opt.rank_lo + 1);
        const std::size_t b = ranked[rank - 1];
        if (!used_neg.insert({a, b}).second) continue;
        emit(a, b, 0);
    }

    return out;
}

void save_pairs(const PairSet& pairs, const std::string& path) {
    BinWriter out(path);
    out.magic(kPairMagic);
    out.u32(static_cast<std::uint32_t>(pairs.m));
    out.u64(pairs.samples.size());
    for (const auto& s : pairs.samples) {
        out.u64(s.i);
        out.u64(s.j);
        out.u8(s.label);
        for (Eigen::Index j = 0; j < s.delta.size(); ++j) out.f64(s.delta[j]);
    }
    out.close();
}

PairSet load_pairs(const std::string& path) {
    BinReader in(path);
    in.expect_magic(kPairMagic);
    PairSet out;
    out.m = static_cast<Eigen::Index>(in.u32());
    const std::uint64_t count = in.u64();
    out.samples.reserve(count);
    for (std::uint64_t k = 0; k < count; ++k) {
        PairSample s;
        s.i = in.u64();
        s.j = in.u64();
        s.label = in.u8();
        if (s.label > 1) throw DataError(path + ": pair " + std::to_string(k) + " has label > 1");
        s.delta.resize(out.m);
        for (Eigen::Index j = 0; j < out.m; ++j) s.delta[j] = in.f64();
        if (!s.delta.allFinite()) throw DataError(path + ": pair " + std::to_string(k) + " non-finite");
        if (s.label == 1) {
            ++out.count_label1;
        } else {
            ++out.count_label0;
        }
        out.samples.push_back(std::move(s));
    }
    return out;
}

Mat deltas_with_label(const PairSet& pairs, int label) {
    std::size_t count = 0;
    for (const auto& s : pairs.samples) count += (s.label == label);
    Mat out(static_cast<Eigen::Index>(count), pairs.m);
    Eigen::Index r = 0;
    for (const auto& s : pairs.samples) {
        if (s.label == label) out.row(r++) = s.delta.transpose();
    }
    return out;
}

}  // namespace lsr
