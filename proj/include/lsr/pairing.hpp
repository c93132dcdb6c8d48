#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lsr/common.hpp"
#include "lsr/dataio.hpp"

namespace lsr {

/// Labeled latent difference. label 1: same anatomy, different protocol
/// (delta oriented lower protocol-vocab index minus higher). label 0: same
/// protocol, different anatomy, partner mined from the cosine rank window.
struct PairSample {
    std::uint64_t i = 0;  // record_id of the minuend
    std::uint64_t j = 0;  // record_id of the subtrahend
    std::uint8_t label = 0;
    Vec delta;            // z_i - z_j
};

struct PairSet {
    std::vector<PairSample> samples;
    Eigen::Index m = 0;
    std::size_t count_label1 = 0;
    std::size_t count_label0 = 0;
};

struct PairingOptions {
    std::size_t rank_lo = 10;   // 1-based rank window for hard negatives
    std::size_t rank_hi = 50;
    std::size_t neighbors = 51; // retrieval depth; must be > rank_hi
    /// When true, every sampled pair additionally emits its mirror (j, i, -delta)
    /// with the same label and n_pairs counts the total. Off by default: a
    /// sign-symmetric training set has a chance-level optimal linear
    /// classifier, which defeats the downstream axis estimate.
    bool symmetrize = false;
    std::uint64_t seed = 0;
};

/// Exact k-nearest-neighbour search by cosine similarity of l2-normalized
/// vectors. The query record is excluded; candidates are restricted by the
/// predicate; ties break toward the lower record_id.
std::vector<std::uint64_t> knn_cosine(std::uint64_t query_id, const EmbeddingSet& set,
                                      const std::function<bool(const EmbeddingRecord&)>& filter,
                                      std::size_t k);

/// Builds a balanced pair set: n_pairs/2 positives (same anatomy, different
/// protocol, metadata-mined) and n_pairs/2 hard negatives (same protocol,
/// different anatomy, partner drawn uniformly from cosine ranks
/// [rank_lo, min(rank_hi, available)]). Deterministic under fixed seed.
PairSet build_pair_set(const EmbeddingSet& set, std::size_t n_pairs, const PairingOptions& opt);

void save_pairs(const PairSet& pairs, const std::string& path);
PairSet load_pairs(const std::string& path);

/// n x m matrix of the deltas with the given label.
Mat deltas_with_label(const PairSet& pairs, int label);

}  // namespace lsr
