#include "lsr/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "lsr/baselines.hpp"
#include "lsr/metrics.hpp"
#include "lsr/rng.hpp"
#include "lsr/survival.hpp"

namespace lsr {

namespace {

namespace fs = std::filesystem;

std::string path_in(const ExperimentConfig& cfg, const char* name) {
    return (fs::path(cfg.out_dir) / name).string();
}

EmbeddingSet load_stage_embeddings(const ExperimentConfig& cfg) {
    return load_embeddings(path_in(cfg, artifacts::embeddings), FileFormat::packed_binary);
}

StabilityOptions stability_options(const ExperimentConfig& cfg) {
    StabilityOptions opt;
    opt.k_values = cfg.clustering.k_values();
    opt.variance_target = cfg.clustering.variance_target;
    opt.policy = cfg.clustering.policy;
    opt.restarts = cfg.clustering.restarts;
    opt.max_iter = cfg.clustering.max_iter;
    opt.seed = cfg.seed;
    return opt;
}

const char* metric_name(DistanceMetric m) {
    return m == DistanceMetric::cosine ? "cosine" : "euclidean";
}

}  // namespace

void run_synth(const ExperimentConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    auto [set, truth] = generate(cfg.synth);
    if (cfg.synth.survival) {
        set = generate_survival(set, truth, cfg.synth);
    }
    save_embeddings(set, path_in(cfg, artifacts::embeddings), FileFormat::packed_binary);
    if (cfg.export_csv) {
        save_embeddings(set, path_in(cfg, artifacts::embeddings_csv), FileFormat::csv);
    }
    save_ground_truth(truth, path_in(cfg, artifacts::ground_truth));
    std::cerr << "synth: " << set.size() << " records, m=" << set.dim() << "\n";
}

void run_pairs(const ExperimentConfig& cfg) {
    const EmbeddingSet set = load_stage_embeddings(cfg);
    PairingOptions opt = cfg.pairing;
    opt.seed = cfg.seed;
    const PairSet pairs = build_pair_set(set, cfg.n_pairs, opt);
    save_pairs(pairs, path_in(cfg, artifacts::pairs));
    std::cerr << "pairs: " << pairs.samples.size() << " samples (" << pairs.count_label1
              << " technical, " << pairs.count_label0 << " biological)\n";
}

void run_fit_rotation(const ExperimentConfig& cfg) {
    const EmbeddingSet set = load_stage_embeddings(cfg);
    const PairSet pairs = load_pairs(path_in(cfg, artifacts::pairs));
    RotationOptions opt = cfg.rotation;
    opt.train.seed = cfg.seed;
    const Projector projector = fit_rotation(set, pairs, cfg.rotation_r, opt);
    save_projector(projector, path_in(cfg, artifacts::projector));
    save_projector_csv(projector, path_in(cfg, artifacts::projector_csv));
    std::cerr << "fit-rotation: r=" << projector.r()
              << ", classifier val accuracy=" << projector.provenance.classifier_val_accuracy
              << ", v_diff " << (projector.provenance.v_diff_included ? "included" : "dropped")
              << "\n";
}

void run_project(const ExperimentConfig& cfg) {
    const EmbeddingSet set = load_stage_embeddings(cfg);
    const Projector projector = load_projector(path_in(cfg, artifacts::projector));
    const auto [zt, zb] = split_rows(set.vectors, projector);
    save_embeddings(set.with_vectors(zt), path_in(cfg, artifacts::z_technical),
                    FileFormat::packed_binary);
    save_embeddings(set.with_vectors(zb), path_in(cfg, artifacts::z_biological),
                    FileFormat::packed_binary);
    std::cerr << "project: wrote technical and biological embeddings\n";
}

void run_cluster(const ExperimentConfig& cfg) {
    const EmbeddingSet zb = load_embeddings(path_in(cfg, artifacts::z_biological),
                                            FileFormat::packed_binary);
    ClusterFitOptions opt;
    opt.variance_target = cfg.clustering.variance_target;
    opt.policy = cfg.clustering.policy;
    opt.kmeans.restarts = cfg.clustering.restarts;
    opt.kmeans.max_iter = cfg.clustering.max_iter;
    opt.kmeans.seed = cfg.seed;
    const ClusterModel model = fit_cluster_model(zb.vectors, cfg.clustering.fit_k, opt);
    save_cluster_model(model, path_in(cfg, artifacts::cluster_model));
    save_centroids_csv(model, path_in(cfg, artifacts::centroids_csv));

    const std::vector<int> labels = model.assign_rows(zb.vectors);
    std::ofstream out(path_in(cfg, artifacts::labels_csv));
    if (!out) throw DataError("cannot open for writing: " + path_in(cfg, artifacts::labels_csv));
    out << "record_id,label\n";
    for (std::size_t i = 0; i < labels.size(); ++i) {
        out << zb.record_ids[i] << ',' << labels[i] << "\n";
    }
    out.close();
    if (!out) throw DataError("write failure: " + path_in(cfg, artifacts::labels_csv));
    std::cerr << "cluster: k=" << cfg.clustering.fit_k << " (" << metric_name(model.metric)
              << "), inertia=" << model.inertia << "\n";
}

void run_stability(const ExperimentConfig& cfg) {
    const EmbeddingSet set = load_stage_embeddings(cfg);
    const Projector projector = load_projector(path_in(cfg, artifacts::projector));
    const StabilityOptions opt = stability_options(cfg);

    struct Labeled {
        std::string name;
        std::vector<StabilityReport> reports;
    };
    std::vector<Labeled> all;
    all.push_back({"z", stability_sweep(set, nullptr, opt)});
    all.push_back({"zB", stability_sweep(set, &projector, opt)});

    if (cfg.baselines.coral) {
        if (set.protocol_vocab.size() < 2) throw DataError("stability: CORAL needs 2 protocols");
        const std::uint32_t proto_a = set.protocol_vocab[0];
        const std::uint32_t proto_b = set.protocol_vocab[1];
        std::vector<std::size_t> src, tgt;
        for (std::size_t i = 0; i < set.size(); ++i) {
            if (set.protocol_ids[i] == proto_b) src.push_back(i);
            if (set.protocol_ids[i] == proto_a) tgt.push_back(i);
        }
        Mat source(static_cast<Eigen::Index>(src.size()), set.dim());
        Mat target(static_cast<Eigen::Index>(tgt.size()), set.dim());
        for (std::size_t t = 0; t < src.size(); ++t) source.row(static_cast<Eigen::Index>(t)) = set.vectors.row(static_cast<Eigen::Index>(src[t]));
        for (std::size_t t = 0; t < tgt.size(); ++t) target.row(static_cast<Eigen::Index>(t)) = set.vectors.row(static_cast<Eigen::Index>(tgt[t]));
        const CoralTransform coral = coral_fit(source, target, cfg.baselines.coral_eps);
        Mat feats = set.vectors;
        for (std::size_t t = 0; t < src.size(); ++t) {
            feats.row(static_cast<Eigen::Index>(src[t])) =
                coral_apply(coral, set.vectors.row(static_cast<Eigen::Index>(src[t]))).row(0);
        }
        all.push_back({"coral", stability_sweep_features(set, feats, opt)});
    }
    if (cfg.baselines.combat) {
        CombatOptions copt;
        copt.fit_fraction = cfg.baselines.combat_fit_fraction;
        copt.chunk = cfg.baselines.combat_chunk;
        copt.seed = cfg.seed;
        Mat covariates(static_cast<Eigen::Index>(set.size()), 1);
        for (std::size_t i = 0; i < set.size(); ++i) {
            covariates(static_cast<Eigen::Index>(i), 0) = static_cast<double>(set.anatomy_ids[i]);
        }
        const Mat harmonized = combat_fit_apply(set.vectors, set.protocol_ids,
                                                std::optional<Mat>(covariates), copt);
        all.push_back({"combat", stability_sweep_features(set, harmonized, opt)});
    }

    std::ofstream out(path_in(cfg, artifacts::stability_csv));
    if (!out) throw DataError("cannot open for writing: " + path_in(cfg, artifacts::stability_csv));
    out << "k,metric,ari,nmi,dice,embedding\n";
    for (const auto& group : all) {
        for (const auto& rep : group.reports) {
            out << rep.k << ',' << metric_name(rep.metric_used) << ',' << format_double(rep.ari)
                << ',' << format_double(rep.nmi) << ',' << format_double(rep.dice) << ','
                << group.name << "\n";
        }
    }
    out.close();
    if (!out) throw DataError("write failure: " + path_in(cfg, artifacts::stability_csv));

    std::ofstream pp(path_in(cfg, artifacts::stability_per_patient_csv));
    if (!pp) throw DataError("cannot open for writing: " + path_in(cfg, artifacts::stability_per_patient_csv));
    pp << "k,embedding,patient_id,ari,nmi,dice\n";
    for (const auto& group : all) {
        for (const auto& rep : group.reports) {
            for (const auto& ps : rep.per_patient) {
                pp << rep.k << ',' << group.name << ',' << ps.patient_id << ','
                   << format_double(ps.ari) << ',' << format_double(ps.nmi) << ','
                   << format_double(ps.dice) << "\n";
            }
        }
    }
    pp.close();
    if (!pp) throw DataError("write failure: " + path_in(cfg, artifacts::stability_per_patient_csv));
    std::cerr << "stability: wrote " << all.size() << " embeddings x "
              << cfg.clustering.k_values().size() << " k values\n";
}

void run_classify_protocol(const ExperimentConfig& cfg) {
    const EmbeddingSet set = load_stage_embeddings(cfg);
    const Projector projector = load_projector(path_in(cfg, artifacts::projector));
    if (set.protocol_vocab.size() < 2) throw DataError("classify: need at least 2 protocols");
    const std::uint32_t target = set.protocol_vocab[0];

    // held-out split by patient
    std::vector<std::uint32_t> patients = set.patient_vocab;
    SeededRng rng = SeededRng::derive(cfg.seed, streams::classify_split);
    rng.shuffle(patients);
    const std::size_t n_test = std::max<std::size_t>(
        1, static_cast<std::size_t>(cfg.classify.test_fraction * static_cast<double>(patients.size())));
    std::set<std::uint32_t> test_patients(patients.begin(),
                                          patients.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::vector<std::size_t> train_idx, test_idx;
    for (std::size_t i = 0; i < set.size(); ++i) {
        (test_patients.count(set.patient_ids[i]) ? test_idx : train_idx).push_back(i);
    }
    if (train_idx.empty() || test_idx.empty()) {
        throw DataError("classify: train/test split left an empty side");
    }
    const EmbeddingSet train = set.subset(train_idx);
    const EmbeddingSet test = set.subset(test_idx);
    const ClassifierEval eval =
        subspace_classifier_eval(train, test, projector, target, cfg.classify.lambda);

    std::ofstream out(path_in(cfg, artifacts::classify_csv));
    if (!out) throw DataError("cannot open for writing: " + path_in(cfg, artifacts::classify_csv));
    out << "features,scope,accuracy\n";
    auto row = [&out](const char* feat, const char* scope, double v) {
        out << feat << ',' << scope << ',' << format_double(v) << "\n";
    };
    row("zT", "overall", eval.acc_zT);
    row("zT", "target", eval.acc_zT_target);
    row("zT", "rest", eval.acc_zT_rest);
    row("z", "overall", eval.acc_z);
    row("z", "target", eval.acc_z_target);
    row("z", "rest", eval.acc_z_rest);
    row("zB", "overall", eval.acc_zB);
    row("zB", "target", eval.acc_zB_target);
    row("zB", "rest", eval.acc_zB_rest);
    out.close();
    if (!out) throw DataError("write failure: " + path_in(cfg, artifacts::classify_csv));
    std::cerr << "classify: acc(zT)=" << eval.acc_zT << " acc(z)=" << eval.acc_z
              << " acc(zB)=" << eval.acc_zB << "\n";
}

void run_cox(const ExperimentConfig& cfg) {
    const EmbeddingSet set = load_stage_embeddings(cfg);
    const Projector projector = load_projector(path_in(cfg, artifacts::projector));

    // patients lacking survival fields are excluded from the fit
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (set.has_survival[i]) keep.push_back(i);
    }
    if (keep.empty()) throw DataError("cox: no records carry survival fields");
    if (keep.size() < set.size()) {
        std::cerr << "cox: excluding " << (set.size() - keep.size())
                  << " records without survival fields\n";
    }
    const EmbeddingSet surv = set.subset(keep);
    const auto [zt, zb] = split_rows(surv.vectors, projector);
    (void)zt;

    struct Space {
        std::string name;
        const Mat* features;
    };
    const Mat raw = surv.vectors;
    const std::vector<Space> spaces = {{"zB", &zb}, {"z", &raw}};

    std::vector<HrRow> rows;
    for (int k : cfg.survival_fit.ks) {
        for (const auto& space : spaces) {
            ClusterFitOptions opt;
            opt.variance_target = cfg.clustering.variance_target;
            opt.policy = cfg.clustering.policy;
            opt.kmeans.restarts = cfg.clustering.restarts;
            opt.kmeans.max_iter = cfg.clustering.max_iter;
            opt.kmeans.seed = cfg.seed + static_cast<std::uint64_t>(k);
            const ClusterModel model = fit_cluster_model(*space.features, k, opt);
            const std::vector<int> labels = assign(model.centroids, model.metric,
                                                   pca_transform(model.pca, *space.features));
            const auto profiles = cluster_profiles(labels, surv, k);

            // one row per patient: profile covariates + survival outcome
            Mat x = profiles_to_design(profiles);
            std::vector<double> times;
            std::vector<std::uint8_t> events;
            for (const auto& profile : profiles) {
                bool found = false;
                for (std::size_t i = 0; i < surv.size(); ++i) {
                    if (surv.patient_ids[i] == profile.patient_id) {
                        times.push_back(surv.survival_times[i]);
                        events.push_back(surv.events[i]);
                        found = true;
                        break;
                    }
                }
                if (!found) throw DataError("cox: missing survival for patient");
            }

            HrRow row;
            row.k = k;
            row.embedding = space.name;
            try {
                const CoxModel model_fit = cox_fit(x, times, events, cfg.survival_fit.ridge);
                row.hr_per_sd = model_fit.hr_per_sd;
                row.converged = model_fit.converged;
                row.n_events = model_fit.n_events;
                row.n_censored = model_fit.n_censored;
                row.iterations = model_fit.iterations;
            } catch (const NumericError& e) {
                std::cerr << "cox: k=" << k << " " << space.name << ": " << e.what() << "\n";
                row.converged = false;
            }
            rows.push_back(std::move(row));
        }
    }
    write_hr_report(rows, path_in(cfg, artifacts::cox_csv));
    std::cerr << "cox: wrote " << rows.size() << " rows\n";
}

void run_pipeline(const ExperimentConfig& cfg) {
    run_synth(cfg);
    run_pairs(cfg);
    run_fit_rotation(cfg);
    run_project(cfg);
    run_cluster(cfg);
    run_stability(cfg);
    run_classify_protocol(cfg);
    if (cfg.synth.survival) {
        run_cox(cfg);
    } else {
        std::cerr << "cox: skipped (no survival section in config)\n";
    }
}

}  // namespace lsr
