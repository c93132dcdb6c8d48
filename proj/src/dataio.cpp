#include "lsr/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "lsr/binio.hpp"

namespace lsr {

namespace {

constexpr char kEmbeddingMagic[9] = "LSREMB01";

std::vector<std::uint32_t> sorted_unique(const std::vector<std::uint32_t>& v) {
    std::vector<std::uint32_t> out(v);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, std::size_t row, const char* what) {
    double v = 0;
    const char* b = s.data();
    const char* e = b + s.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc{} || p != e) {
        throw DataError("row " + std::to_string(row) + ": cannot parse " + what + " '" + s + "'");
    }
    return v;
}

template <class T>
T parse_uint(const std::string& s, std::size_t row, const char* what) {
    T v = 0;
    const char* b = s.data();
    const char* e = b + s.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc{} || p != e) {
        throw DataError("row " + std::to_string(row) + ": cannot parse " + what + " '" + s + "'");
    }
    return v;
}

}  // namespace

std::string format_double(double v) {
    char buf[40];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, p);
}

EmbeddingRecord EmbeddingSet::record(std::size_t i) const {
    EmbeddingRecord r;
    r.record_id = record_ids[i];
    r.vector = vectors.row(static_cast<Eigen::Index>(i));
    r.anatomy_id = anatomy_ids[i];
    r.protocol_id = protocol_ids[i];
    r.patient_id = patient_ids[i];
    if (has_survival[i]) {
        r.survival_time = survival_times[i];
        r.event = events[i] != 0;
    }
    return r;
}

void EmbeddingSet::append(const EmbeddingRecord& rec) {
    const Eigen::Index n = vectors.rows();
    if (n == 0 && vectors.cols() == 0) {
        vectors.resize(0, rec.vector.size());
    }
    if (rec.vector.size() != vectors.cols()) {
        throw DataError("record " + std::to_string(rec.record_id) + ": vector length " +
                        std::to_string(rec.vector.size()) + " does not match m=" +
                        std::to_string(vectors.cols()));
    }
    vectors.conservativeResize(n + 1, Eigen::NoChange);
    vectors.row(n) = rec.vector;
    record_ids.push_back(rec.record_id);
    anatomy_ids.push_back(rec.anatomy_id);
    protocol_ids.push_back(rec.protocol_id);
    patient_ids.push_back(rec.patient_id);
    has_survival.push_back(rec.survival_time.has_value() ? 1 : 0);
    survival_times.push_back(rec.survival_time.value_or(0.0));
    events.push_back(rec.event.value_or(false) ? 1 : 0);
}

void EmbeddingSet::rebuild_vocabs() {
    anatomy_vocab = sorted_unique(anatomy_ids);
    protocol_vocab = sorted_unique(protocol_ids);
    patient_vocab = sorted_unique(patient_ids);
}

void EmbeddingSet::validate() const {
    const std::size_t n = size();
    if (anatomy_ids.size() != n || protocol_ids.size() != n || patient_ids.size() != n ||
        has_survival.size() != n || survival_times.size() != n || events.size() != n ||
        static_cast<std::size_t>(vectors.rows()) != n) {
        throw DataError("inconsistent column lengths in EmbeddingSet");
    }
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!seen.insert(record_ids[i]).second) {
            throw DataError("row " + std::to_string(i + 1) + ": duplicate record_id " +
                            std::to_string(record_ids[i]));
        }
        if (!vectors.row(static_cast<Eigen::Index>(i)).allFinite()) {
            throw DataError("row " + std::to_string(i + 1) + ": non-finite vector entry");
        }
        if (has_survival[i] && !std::isfinite(survival_times[i])) {
            throw DataError("row " + std::to_string(i + 1) + ": non-finite survival_time");
        }
        if (has_survival[i] && survival_times[i] <= 0.0) {
            throw DataError("row " + std::to_string(i + 1) + ": survival_time must be positive");
        }
    }
}

EmbeddingSet EmbeddingSet::subset(const std::vector<std::size_t>& idx) const {
    EmbeddingSet out;
    out.vectors.resize(static_cast<Eigen::Index>(idx.size()), vectors.cols());
    out.record_ids.reserve(idx.size());
    for (std::size_t t = 0; t < idx.size(); ++t) {
        const std::size_t i = idx[t];
        out.vectors.row(static_cast<Eigen::Index>(t)) = vectors.row(static_cast<Eigen::Index>(i));
        out.record_ids.push_back(record_ids[i]);
        out.anatomy_ids.push_back(anatomy_ids[i]);
        out.protocol_ids.push_back(protocol_ids[i]);
        out.patient_ids.push_back(patient_ids[i]);
        out.has_survival.push_back(has_survival[i]);
        out.survival_times.push_back(survival_times[i]);
        out.events.push_back(events[i]);
    }
    out.rebuild_vocabs();
    return out;
}

EmbeddingSet EmbeddingSet::with_vectors(Mat replacement) const {
    if (replacement.rows() != vectors.rows()) {
        throw DataError("with_vectors: row count mismatch");
    }
    EmbeddingSet out(*this);
    out.vectors = std::move(replacement);
    return out;
}

namespace {

EmbeddingSet load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": empty file (missing header)");

    const auto header = split_csv_line(line);
    constexpr std::size_t kMetaCols = 6;
    static const char* kMeta[kMetaCols] = {"record_id", "anatomy_id",    "protocol_id",
                                           "patient_id", "survival_time", "event"};
    if (header.size() < kMetaCols) throw DataError(path + ": malformed header (too few columns)");
    for (std::size_t c = 0; c < kMetaCols; ++c) {
        if (header[c] != kMeta[c]) {
            throw DataError(path + ": malformed header, column " + std::to_string(c + 1) +
                            " is '" + header[c] + "', expected '" + kMeta[c] + "'");
        }
    }
    const std::size_t m = header.size() - kMetaCols;
    for (std::size_t j = 0; j < m; ++j) {
        const std::string expect = "z" + std::to_string(j);
        if (header[kMetaCols + j] != expect) {
            throw DataError(path + ": malformed header, expected column '" + expect + "', got '" +
                            header[kMetaCols + j] + "'");
        }
    }

    std::vector<EmbeddingRecord> recs;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != kMetaCols + m) {
            const std::size_t got = f.size() > kMetaCols ? f.size() - kMetaCols : 0;
            throw DataError(path + ": row " + std::to_string(row) + " has " + std::to_string(got) +
                            " vector values, header declares m=" + std::to_string(m));
        }
        EmbeddingRecord r;
        r.record_id = parse_uint<std::uint64_t>(f[0], row, "record_id");
        r.anatomy_id = parse_uint<std::uint32_t>(f[1], row, "anatomy_id");
        r.protocol_id = parse_uint<std::uint32_t>(f[2], row, "protocol_id");
        r.patient_id = parse_uint<std::uint32_t>(f[3], row, "patient_id");
        const bool has_time = !f[4].empty();
        const bool has_event = !f[5].empty();
        if (has_time != has_event) {
            throw DataError(path + ": row " + std::to_string(row) +
                            ": survival_time and event must both be present or both empty");
        }
        if (has_time) {
            r.survival_time = parse_double(f[4], row, "survival_time");
            const auto ev = parse_uint<std::uint32_t>(f[5], row, "event");
            if (ev > 1) throw DataError(path + ": row " + std::to_string(row) + ": event must be 0 or 1");
            r.event = ev != 0;
        }
        r.vector.resize(static_cast<Eigen::Index>(m));
        for (std::size_t j = 0; j < m; ++j) {
            r.vector[static_cast<Eigen::Index>(j)] = parse_double(f[kMetaCols + j], row, "vector entry");
        }
        recs.push_back(std::move(r));
    }

    EmbeddingSet set;
    set.vectors.resize(static_cast<Eigen::Index>(recs.size()), static_cast<Eigen::Index>(m));
    for (std::size_t i = 0; i < recs.size(); ++i) {
        const auto& r = recs[i];
        set.vectors.row(static_cast<Eigen::Index>(i)) = r.vector;
        set.record_ids.push_back(r.record_id);
        set.anatomy_ids.push_back(r.anatomy_id);
        set.protocol_ids.push_back(r.protocol_id);
        set.patient_ids.push_back(r.patient_id);
        set.has_survival.push_back(r.survival_time.has_value() ? 1 : 0);
        set.survival_times.push_back(r.survival_time.value_or(0.0));
        set.events.push_back(r.event.value_or(false) ? 1 : 0);
    }
    set.rebuild_vocabs();
    set.validate();
    return set;
}

void save_csv(const EmbeddingSet& set, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "record_id,anatomy_id,protocol_id,patient_id,survival_time,event";
    for (Eigen::Index j = 0; j < set.dim(); ++j) out << ",z" << j;
    out << "\n";
    for (std::size_t i = 0; i < set.size(); ++i) {
        out << set.record_ids[i] << ',' << set.anatomy_ids[i] << ',' << set.protocol_ids[i] << ','
            << set.patient_ids[i] << ',';
        if (set.has_survival[i]) {
            out << format_double(set.survival_times[i]) << ',' << (set.events[i] ? 1 : 0);
        } else {
            out << ',';
        }
        for (Eigen::Index j = 0; j < set.dim(); ++j) {
            out << ',' << format_double(set.vectors(static_cast<Eigen::Index>(i), j));
        }
        out << "\n";
    }
    out.close();
    if (!out) throw DataError("write failure: " + path);
}

EmbeddingSet load_binary(const std::string& path) {
    BinReader in(path);
    in.expect_magic(kEmbeddingMagic);
    const std::uint32_t m = in.u32();
    const std::uint64_t count = in.u64();
    EmbeddingSet set;
    set.vectors.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(m));
    set.record_ids.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        set.record_ids.push_back(in.u64());
        set.anatomy_ids.push_back(in.u32());
        set.protocol_ids.push_back(in.u32());
        set.patient_ids.push_back(in.u32());
        const std::uint8_t flags = in.u8();
        in.u8();
        in.u8();
        in.u8();  // reserved padding
        const double t = in.f64();
        set.has_survival.push_back(flags & 1u);
        set.events.push_back((flags >> 1) & 1u);
        set.survival_times.push_back((flags & 1u) ? t : 0.0);
        for (std::uint32_t j = 0; j < m; ++j) {
            set.vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = in.f64();
        }
    }
    set.rebuild_vocabs();
    set.validate();
    return set;
}

void save_binary(const EmbeddingSet& set, const std::string& path) {
    BinWriter out(path);
    out.magic(kEmbeddingMagic);
    out.u32(static_cast<std::uint32_t>(set.dim()));
    out.u64(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        out.u64(set.record_ids[i]);
        out.u32(set.anatomy_ids[i]);
        out.u32(set.protocol_ids[i]);
        out.u32(set.patient_ids[i]);
        const std::uint8_t flags =
            static_cast<std::uint8_t>((set.has_survival[i] ? 1u : 0u) | (set.events[i] ? 2u : 0u));
        out.u8(flags);
        out.u8(0);
        out.u8(0);
        out.u8(0);
        out.f64(set.has_survival[i] ? set.survival_times[i] : 0.0);
        for (Eigen::Index j = 0; j < set.dim(); ++j) {
            out.f64(set.vectors(static_cast<Eigen::Index>(i), j));
        }
    }
    out.close();
}

}  // namespace

EmbeddingSet load_embeddings(const std::string& path, FileFormat format) {
    return format == FileFormat::csv ? load_csv(path) : load_binary(path);
}

void save_embeddings(const EmbeddingSet& set, const std::string& path, FileFormat format) {
    set.validate();
    if (format == FileFormat::csv) {
        save_csv(set, path);
    } else {
        save_binary(set, path);
    }
}

}  // namespace lsr
