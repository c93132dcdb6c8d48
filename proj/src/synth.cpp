#include "lsr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "lsr/binio.hpp"
#include "lsr/rng.hpp"

namespace lsr {

namespace {
constexpr char kTruthMagic[9] = "LSRGTH01";

Mat gaussian_matrix(SeededRng& rng, Eigen::Index rows, Eigen::Index cols) {
    Mat out(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = rng.normal();
    }
    return out;
}
}  // namespace

void SynthConfig::validate() const {
    if (m < 1 || n_anatomy < 1 || n_protocols < 1 || n_patients < 1 || d_bio < 1 || d_tech < 1) {
        throw ConfigError("synth: all counts must be >= 1");
    }
    if (d_bio + d_tech > m) {
        throw ConfigError("synth: d_bio + d_tech (" + std::to_string(d_bio + d_tech) +
                          ") exceeds m (" + std::to_string(m) + ")");
    }
    if (noise_sigma < 0.0) throw ConfigError("synth: noise_sigma must be >= 0");
    if (tech_strength <= 0.0) throw ConfigError("synth: tech_strength must be > 0");
    if (patient_sigma < 0.0) throw ConfigError("synth: patient_sigma must be >= 0");
    if (survival) {
        if (survival->base_hazard <= 0.0) throw ConfigError("synth.survival: base_hazard must be > 0");
        if (survival->effect_cluster < 0 || survival->effect_cluster >= d_bio) {
            throw ConfigError("synth.survival: effect_cluster must index a biological mode in [0, d_bio)");
        }
        if (survival->censor_quantile <= 0.0 || survival->censor_quantile > 1.0) {
            throw ConfigError("synth.survival: censor_quantile must be in (0, 1]");
        }
    }
}

std::pair<EmbeddingSet, GroundTruth> generate(const SynthConfig& config) {
    config.validate();

    GroundTruth gt;
    {
        SeededRng rng = SeededRng::derive(config.seed, streams::synth_bases);
        const Mat raw = gaussian_matrix(rng, config.m, config.d_tech + config.d_bio);
        Eigen::HouseholderQR<Mat> qr(raw);
        Mat q = qr.householderQ() * Mat::Identity(config.m, config.d_tech + config.d_bio);
        // fix column signs from R's diagonal so the basis is a pure function of raw
        const Mat r = qr.matrixQR().topRows(config.d_tech + config.d_bio).triangularView<Eigen::Upper>();
        for (Eigen::Index j = 0; j < q.cols(); ++j) {
            if (r(j, j) < 0) q.col(j) = -q.col(j);
        }
        gt.tech_basis = q.leftCols(config.d_tech);
        gt.bio_basis = q.middleCols(config.d_tech, config.d_bio);
    }
    {
        SeededRng rng = SeededRng::derive(config.seed, streams::synth_codes);
        gt.anatomy_codes = gaussian_matrix(rng, config.n_anatomy, config.d_bio);
        gt.protocol_offsets = gaussian_matrix(rng, config.n_protocols, config.d_tech);
        gt.patient_codes = gaussian_matrix(rng, config.n_patients, config.d_bio);
    }

    SeededRng noise = SeededRng::derive(config.seed, streams::synth_noise);
    const std::size_t n =
        static_cast<std::size_t>(config.n_patients) * config.n_anatomy * config.n_protocols;
    EmbeddingSet set;
    set.vectors.resize(static_cast<Eigen::Index>(n), config.m);
    set.record_ids.reserve(n);

    std::uint64_t next_id = 0;
    Vec eta(config.d_tech), eps(config.m);
    for (int s = 0; s < config.n_patients; ++s) {
        for (int a = 0; a < config.n_anatomy; ++a) {
            for (int p = 0; p < config.n_protocols; ++p) {
                for (Eigen::Index j = 0; j < config.d_tech; ++j) eta[j] = noise.normal();
                for (Eigen::Index j = 0; j < config.m; ++j) eps[j] = noise.normal();
                const Vec bio = gt.anatomy_codes.row(a).transpose() +
                                config.patient_sigma * gt.patient_codes.row(s).transpose();
                const Vec tech = gt.protocol_offsets.row(p).transpose() + config.noise_sigma * eta;
                set.vectors.row(static_cast<Eigen::Index>(next_id)) =
                    (gt.bio_basis * bio + config.tech_strength * (gt.tech_basis * tech) +
                     config.noise_sigma * eps)
                        .transpose();
                set.record_ids.push_back(next_id);
                set.anatomy_ids.push_back(static_cast<std::uint32_t>(a));
                set.protocol_ids.push_back(static_cast<std::uint32_t>(p));
                set.patient_ids.push_back(static_cast<std::uint32_t>(s));
                set.has_survival.push_back(0);
                set.survival_times.push_back(0.0);
                set.events.push_back(0);
                ++next_id;
            }
        }
    }
    set.rebuild_vocabs();
    return {std::move(set), std::move(gt)};
}

EmbeddingSet generate_survival(const EmbeddingSet& set, GroundTruth& truth, const SynthConfig& config) {
    if (!config.survival) throw ConfigError("generate_survival: survival section missing from config");
    const SurvivalParams& sp = *config.survival;
    const int n_pat = static_cast<int>(truth.patient_codes.rows());
    if (sp.effect_cluster < 0 || sp.effect_cluster >= truth.patient_codes.cols()) {
        throw ConfigError("generate_survival: effect_cluster out of range");
    }

    Vec x(n_pat);
    for (int s = 0; s < n_pat; ++s) x[s] = truth.patient_codes(s, sp.effect_cluster);
    if (sp.binary_covariate) {
        // median split: the upper half of patients get x=1
        std::vector<int> order(n_pat);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) { return x[a] < x[b]; });
        Vec xb = Vec::Zero(n_pat);
        for (int rank = n_pat / 2; rank < n_pat; ++rank) xb[order[rank]] = 1.0;
        x = xb;
    }
    truth.patient_covariate = x;

    SeededRng rng = SeededRng::derive(config.seed, streams::synth_survival);
    Vec times(n_pat);
    for (int s = 0; s < n_pat; ++s) {
        const double hazard = sp.base_hazard * std::exp(sp.effect_size * x[s]);
        double u = rng.uniform01();
        if (u <= 0.0) u = 0x1.0p-53;
        times[s] = -std::log(u) / hazard;
    }

    double horizon = std::numeric_limits<double>::infinity();
    if (sp.censor_quantile < 1.0) {
        std::vector<double> sorted(times.data(), times.data() + n_pat);
        std::sort(sorted.begin(), sorted.end());
        const double pos = sp.censor_quantile * static_cast<double>(n_pat - 1);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const double frac = pos - static_cast<double>(lo);
        horizon = lo + 1 < sorted.size() ? sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
                                         : sorted.back();
    }

    EmbeddingSet out(set);
    const auto& vocab = set.patient_vocab;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto it = std::lower_bound(vocab.begin(), vocab.end(), out.patient_ids[i]);
        const int s = static_cast<int>(it - vocab.begin());
        if (s >= n_pat) throw DataError("generate_survival: patient id not covered by ground truth");
        const bool censored = times[s] > horizon;
        out.has_survival[i] = 1;
        out.survival_times[i] = censored ? horizon : times[s];
        out.events[i] = censored ? 0 : 1;
    }
    return out;
}

void save_ground_truth(const GroundTruth& gt, const std::string& path) {
    BinWriter out(path);
    out.magic(kTruthMagic);
    out.u32(static_cast<std::uint32_t>(gt.tech_basis.rows()));
    out.u32(static_cast<std::uint32_t>(gt.bio_basis.cols()));
    out.u32(static_cast<std::uint32_t>(gt.tech_basis.cols()));
    out.u32(static_cast<std::uint32_t>(gt.anatomy_codes.rows()));
    out.u32(static_cast<std::uint32_t>(gt.protocol_offsets.rows()));
    out.u32(static_cast<std::uint32_t>(gt.patient_codes.rows()));
    auto write_mat = [&out](const Mat& m) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            for (Eigen::Index i = 0; i < m.rows(); ++i) out.f64(m(i, j));
        }
    };
    write_mat(gt.tech_basis);
    write_mat(gt.bio_basis);
    write_mat(gt.anatomy_codes);
    write_mat(gt.protocol_offsets);
    write_mat(gt.patient_codes);
    out.u8(gt.patient_covariate.size() > 0 ? 1 : 0);
    for (Eigen::Index i = 0; i < gt.patient_covariate.size(); ++i) out.f64(gt.patient_covariate[i]);
    out.close();
}

GroundTruth load_ground_truth(const std::string& path) {
    BinReader in(path);
    in.expect_magic(kTruthMagic);
    const std::uint32_t m = in.u32();
    const std::uint32_t d_bio = in.u32();
    const std::uint32_t d_tech = in.u32();
    const std::uint32_t n_anat = in.u32();
    const std::uint32_t n_proto = in.u32();
    const std::uint32_t n_pat = in.u32();
    GroundTruth gt;
    auto read_mat = [&in](Eigen::Index rows, Eigen::Index cols) {
        Mat out(rows, cols);
        for (Eigen::Index j = 0; j < cols; ++j) {
            for (Eigen::Index i = 0; i < rows; ++i) out(i, j) = in.f64();
        }
        return out;
    };
    gt.tech_basis = read_mat(m, d_tech);
    gt.bio_basis = read_mat(m, d_bio);
    gt.anatomy_codes = read_mat(n_anat, d_bio);
    gt.protocol_offsets = read_mat(n_proto, d_tech);
    gt.patient_codes = read_mat(n_pat, d_bio);
    if (in.u8()) {
        gt.patient_covariate.resize(n_pat);
        for (std::uint32_t i = 0; i < n_pat; ++i) gt.patient_covariate[i] = in.f64();
    }
    return gt;
}

}  // namespace lsr
