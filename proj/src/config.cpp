#include "lsr/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace lsr {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& scope, const std::set<std::string>& allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key())) {
            throw ConfigError("config: unknown key '" + scope + it.key() + "'");
        }
    }
}

template <class T>
void read(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) {
        try {
            out = obj.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
        }
    }
}

}  // namespace

std::vector<int> ClusteringConfig::k_values() const {
    std::vector<int> out;
    for (int k = k_min; k <= k_max; k += k_step) out.push_back(k);
    return out;
}

void ExperimentConfig::validate() const {
    synth.validate();
    if (out_dir.empty()) throw ConfigError("config: out_dir must not be empty");
    if (n_pairs == 0) throw ConfigError("config: n_pairs must be positive");
    if (rotation_r <= 1) {
        throw ConfigError("config: rotation.r must exceed 1 (layout reserves v_base and v_diff)");
    }
    if (rotation_r >= synth.m) {
        throw ConfigError("config: rotation.r must be smaller than m (r=" + std::to_string(rotation_r) +
                          ", m=" + std::to_string(synth.m) + ")");
    }
    if (pairing.rank_lo < 1 || pairing.rank_hi < pairing.rank_lo) {
        throw ConfigError("config: pairing rank window requires 1 <= rank_lo <= rank_hi");
    }
    if (pairing.neighbors <= pairing.rank_hi) {
        throw ConfigError("config: pairing.neighbors must exceed rank_hi");
    }
    if (rotation.train.epochs < 1 || rotation.train.lr <= 0.0 || rotation.train.batch < 1) {
        throw ConfigError("config: rotation epochs, lr and batch must be positive");
    }
    if (rotation.train.val_fraction < 0.0 || rotation.train.val_fraction >= 1.0) {
        throw ConfigError("config: rotation.val_fraction must be in [0, 1)");
    }
    if (rotation.vdiff_drop_tol <= 0.0 || rotation.vdiff_drop_tol >= 1.0) {
        throw ConfigError("config: rotation.vdiff_drop_tol must be in (0, 1)");
    }
    if (clustering.k_min < 2 || clustering.k_max < clustering.k_min || clustering.k_step < 1) {
        throw ConfigError("config: clustering k range requires 2 <= k_min <= k_max, k_step >= 1");
    }
    if (clustering.fit_k < 2) throw ConfigError("config: clustering.fit_k must be >= 2");
    if (!(clustering.variance_target > 0.0) || clustering.variance_target > 1.0) {
        throw ConfigError("config: clustering.variance_target must be in (0, 1]");
    }
    if (clustering.restarts < 1 || clustering.max_iter < 1) {
        throw ConfigError("config: clustering restarts and max_iter must be >= 1");
    }
    if (survival_fit.ridge < 0.0) throw ConfigError("config: survival.ridge must be >= 0");
    for (int k : survival_fit.ks) {
        if (k < 2) throw ConfigError("config: survival.ks entries must be >= 2");
    }
    if (baselines.combat_fit_fraction <= 0.0 || baselines.combat_fit_fraction > 1.0) {
        throw ConfigError("config: baselines.combat_fit_fraction must be in (0, 1]");
    }
    if (baselines.combat_chunk < 1) throw ConfigError("config: baselines.combat_chunk must be >= 1");
    if (baselines.coral_eps <= 0.0) throw ConfigError("config: baselines.coral_eps must be > 0");
    if (classify.lambda < 0.0) throw ConfigError("config: classify.lambda must be >= 0");
    if (classify.test_fraction <= 0.0 || classify.test_fraction >= 1.0) {
        throw ConfigError("config: classify.test_fraction must be in (0, 1)");
    }
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    json root;
    try {
        in >> root;
    } catch (const json::exception& e) {
        throw ConfigError("config: parse error in " + path + ": " + e.what());
    }
    if (!root.is_object()) throw ConfigError("config: top level must be an object");

    ExperimentConfig cfg;
    check_keys(root, "", {"seed", "out_dir", "export_csv", "synth", "pairing", "rotation",
                          "clustering", "survival", "baselines", "classify"});
    read(root, "seed", cfg.seed);
    read(root, "out_dir", cfg.out_dir);
    read(root, "export_csv", cfg.export_csv);

    if (root.contains("synth")) {
        const json& s = root.at("synth");
        check_keys(s, "synth.", {"m", "n_anatomy", "n_protocols", "n_patients", "d_bio", "d_tech",
                                 "noise_sigma", "tech_strength", "patient_sigma", "survival"});
        read(s, "m", cfg.synth.m);
        read(s, "n_anatomy", cfg.synth.n_anatomy);
        read(s, "n_protocols", cfg.synth.n_protocols);
        read(s, "n_patients", cfg.synth.n_patients);
        read(s, "d_bio", cfg.synth.d_bio);
        read(s, "d_tech", cfg.synth.d_tech);
        read(s, "noise_sigma", cfg.synth.noise_sigma);
        read(s, "tech_strength", cfg.synth.tech_strength);
        read(s, "patient_sigma", cfg.synth.patient_sigma);
        if (s.contains("survival") && !s.at("survival").is_null()) {
            const json& sv = s.at("survival");
            check_keys(sv, "synth.survival.",
                       {"base_hazard", "effect_cluster", "effect_size", "censor_quantile",
                        "binary_covariate"});
            SurvivalParams sp;
            read(sv, "base_hazard", sp.base_hazard);
            read(sv, "effect_cluster", sp.effect_cluster);
            read(sv, "effect_size", sp.effect_size);
            read(sv, "censor_quantile", sp.censor_quantile);
            read(sv, "binary_covariate", sp.binary_covariate);
            cfg.synth.survival = sp;
        }
    }

    if (root.contains("pairing")) {
        const json& p = root.at("pairing");
        check_keys(p, "pairing.", {"n_pairs", "rank_lo", "rank_hi", "neighbors", "symmetrize"});
        read(p, "n_pairs", cfg.n_pairs);
        read(p, "rank_lo", cfg.pairing.rank_lo);
        read(p, "rank_hi", cfg.pairing.rank_hi);
        read(p, "neighbors", cfg.pairing.neighbors);
        read(p, "symmetrize", cfg.pairing.symmetrize);
    }

    if (root.contains("rotation")) {
        const json& r = root.at("rotation");
        check_keys(r, "rotation.",
                   {"r", "epochs", "lr", "batch", "val_fraction", "optimizer", "vdiff_drop_tol",
                    "residual_use_all_labels"});
        read(r, "r", cfg.rotation_r);
        read(r, "epochs", cfg.rotation.train.epochs);
        read(r, "lr", cfg.rotation.train.lr);
        read(r, "batch", cfg.rotation.train.batch);
        read(r, "val_fraction", cfg.rotation.train.val_fraction);
        if (r.contains("optimizer")) {
            const std::string name = r.at("optimizer").get<std::string>();
            if (name == "gd") {
                cfg.rotation.train.optimizer = Optimizer::gradient_descent;
            } else if (name == "adam") {
                cfg.rotation.train.optimizer = Optimizer::adam;
            } else {
                throw ConfigError("config: rotation.optimizer must be 'gd' or 'adam'");
            }
        }
        read(r, "vdiff_drop_tol", cfg.rotation.vdiff_drop_tol);
        read(r, "residual_use_all_labels", cfg.rotation.residual_use_all_labels);
    }

    if (root.contains("clustering")) {
        const json& cl = root.at("clustering");
        check_keys(cl, "clustering.",
                   {"k_min", "k_max", "k_step", "fit_k", "variance_target", "metric_policy",
                    "restarts", "max_iter"});
        read(cl, "k_min", cfg.clustering.k_min);
        read(cl, "k_max", cfg.clustering.k_max);
        read(cl, "k_step", cfg.clustering.k_step);
        read(cl, "fit_k", cfg.clustering.fit_k);
        read(cl, "variance_target", cfg.clustering.variance_target);
        if (cl.contains("metric_policy")) {
            const std::string name = cl.at("metric_policy").get<std::string>();
            if (name == "euclidean") {
                cfg.clustering.policy = MetricPolicy::euclidean;
            } else if (name == "cosine") {
                cfg.clustering.policy = MetricPolicy::cosine;
            } else if (name == "auto") {
                cfg.clustering.policy = MetricPolicy::automatic;
            } else {
                throw ConfigError("config: clustering.metric_policy must be euclidean, cosine or auto");
            }
        }
        read(cl, "restarts", cfg.clustering.restarts);
        read(cl, "max_iter", cfg.clustering.max_iter);
    }

    if (root.contains("survival")) {
        const json& sv = root.at("survival");
        check_keys(sv, "survival.", {"ridge", "ks"});
        read(sv, "ridge", cfg.survival_fit.ridge);
        read(sv, "ks", cfg.survival_fit.ks);
    }

    if (root.contains("baselines")) {
        const json& b = root.at("baselines");
        check_keys(b, "baselines.",
                   {"combat", "coral", "combat_fit_fraction", "combat_chunk", "coral_eps"});
        read(b, "combat", cfg.baselines.combat);
        read(b, "coral", cfg.baselines.coral);
        read(b, "combat_fit_fraction", cfg.baselines.combat_fit_fraction);
        read(b, "combat_chunk", cfg.baselines.combat_chunk);
        read(b, "coral_eps", cfg.baselines.coral_eps);
    }

    if (root.contains("classify")) {
        const json& c = root.at("classify");
        check_keys(c, "classify.", {"lambda", "test_fraction"});
        read(c, "lambda", cfg.classify.lambda);
        read(c, "test_fraction", cfg.classify.test_fraction);
    }

    cfg.synth.seed = cfg.seed;
    cfg.pairing.seed = cfg.seed;
    cfg.rotation.train.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

std::string explain_config(const ExperimentConfig& cfg) {
    std::ostringstream out;
    auto line = [&out](const std::string& key, const std::string& value, const char* origin) {
        out << key << " = " << value << "  [" << origin << "]\n";
    };
    const char* kProtocol = "protocol default";
    const char* kTool = "implementation choice";
    line("seed", std::to_string(cfg.seed), kTool);
    line("pairing.n_pairs", std::to_string(cfg.n_pairs), kTool);
    line("pairing.rank_lo", std::to_string(cfg.pairing.rank_lo), kProtocol);
    line("pairing.rank_hi", std::to_string(cfg.pairing.rank_hi), kProtocol);
    line("pairing.neighbors", std::to_string(cfg.pairing.neighbors), kProtocol);
    line("pairing.symmetrize", cfg.pairing.symmetrize ? "true" : "false", kTool);
    line("rotation.r", std::to_string(cfg.rotation_r), kProtocol);
    line("rotation.epochs", std::to_string(cfg.rotation.train.epochs), kProtocol);
    line("rotation.lr", format_double(cfg.rotation.train.lr), kProtocol);
    line("rotation.batch", std::to_string(cfg.rotation.train.batch), kProtocol);
    line("rotation.val_fraction", format_double(cfg.rotation.train.val_fraction), kProtocol);
    line("rotation.optimizer",
         cfg.rotation.train.optimizer == Optimizer::adam ? "adam" : "gd", kTool);
    line("rotation.vdiff_drop_tol", format_double(cfg.rotation.vdiff_drop_tol), kTool);
    line("clustering.k_min", std::to_string(cfg.clustering.k_min), kProtocol);
    line("clustering.k_max", std::to_string(cfg.clustering.k_max), kProtocol);
    line("clustering.k_step", std::to_string(cfg.clustering.k_step), kTool);
    line("clustering.variance_target", format_double(cfg.clustering.variance_target), kTool);
    line("clustering.metric_policy",
         cfg.clustering.policy == MetricPolicy::automatic
             ? "auto"
             : (cfg.clustering.policy == MetricPolicy::cosine ? "cosine" : "euclidean"),
         kProtocol);
    line("clustering.restarts", std::to_string(cfg.clustering.restarts), kTool);
    line("survival.ridge", format_double(cfg.survival_fit.ridge), kTool);
    line("baselines.combat_fit_fraction", format_double(cfg.baselines.combat_fit_fraction), kProtocol);
    line("baselines.combat_chunk", std::to_string(cfg.baselines.combat_chunk), kProtocol);
    line("baselines.coral_eps", format_double(cfg.baselines.coral_eps), kTool);
    line("classify.lambda", format_double(cfg.classify.lambda), kTool);
    return out.str();
}

}  // namespace lsr
