#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lsr/common.hpp"

namespace lsr {

/// One embedding vector plus acquisition metadata. Categorical ids are
/// nonnegative integer codes; survival fields are either both present or
/// both absent.
struct EmbeddingRecord {
    std::uint64_t record_id = 0;
    Vec vector;
    std::uint32_t anatomy_id = 0;
    std::uint32_t protocol_id = 0;
    std::uint32_t patient_id = 0;
    std::optional<double> survival_time;
    std::optional<bool> event;
};

/// Column-oriented embedding dataset. Immutable once loaded; safe to share
/// read-only across threads.
class EmbeddingSet {
public:
    Mat vectors;  // n x m, one row per record, file order
    std::vector<std::uint64_t> record_ids;
    std::vector<std::uint32_t> anatomy_ids;
    std::vector<std::uint32_t> protocol_ids;
    std::vector<std::uint32_t> patient_ids;
    std::vector<std::uint8_t> has_survival;  // 0/1 per record
    std::vector<double> survival_times;      // valid where has_survival
    std::vector<std::uint8_t> events;        // valid where has_survival

    std::vector<std::uint32_t> anatomy_vocab;   // sorted unique
    std::vector<std::uint32_t> protocol_vocab;  // sorted unique
    std::vector<std::uint32_t> patient_vocab;   // sorted unique

    std::size_t size() const { return record_ids.size(); }
    Eigen::Index dim() const { return vectors.cols(); }

    EmbeddingRecord record(std::size_t i) const;
    void append(const EmbeddingRecord& rec);

    /// Recompute the vocabularies from the stored records.
    void rebuild_vocabs();

    /// Check invariants: unique ids, finite vectors, survival_time iff event.
    /// Throws DataError naming the first offending record.
    void validate() const;

    /// New set containing the given record indices, in the given order.
    EmbeddingSet subset(const std::vector<std::size_t>& idx) const;

    /// Copy with the vector block replaced (same metadata). Rows must match.
    EmbeddingSet with_vectors(Mat replacement) const;
};

enum class FileFormat { csv, packed_binary };

EmbeddingSet load_embeddings(const std::string& path, FileFormat format);
void save_embeddings(const EmbeddingSet& set, const std::string& path, FileFormat format);

/// Shortest round-trip decimal rendering of a double (same formatter used by
/// every CSV the tool writes).
std::string format_double(double v);

}  // namespace lsr
