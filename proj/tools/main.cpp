#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "lsr/pipeline.hpp"

namespace {

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> r;
    std::optional<int> k_min;
    std::optional<int> k_max;
    std::optional<std::size_t> n_pairs;
    std::optional<std::string> baseline;
};

lsr::ExperimentConfig resolve(const std::string& config_path, const Overrides& ov) {
    lsr::ExperimentConfig cfg =
        config_path.empty() ? lsr::ExperimentConfig{} : lsr::load_config(config_path);
    if (ov.seed) {
        cfg.seed = *ov.seed;
        cfg.synth.seed = *ov.seed;
        cfg.pairing.seed = *ov.seed;
        cfg.rotation.train.seed = *ov.seed;
    }
    if (ov.out) cfg.out_dir = *ov.out;
    if (ov.r) cfg.rotation_r = *ov.r;
    if (ov.k_min) cfg.clustering.k_min = *ov.k_min;
    if (ov.k_max) cfg.clustering.k_max = *ov.k_max;
    if (ov.n_pairs) cfg.n_pairs = *ov.n_pairs;
    if (ov.baseline) {
        if (*ov.baseline == "combat") {
            cfg.baselines.combat = true;
            cfg.baselines.coral = false;
        } else if (*ov.baseline == "coral") {
            cfg.baselines.combat = false;
            cfg.baselines.coral = true;
        } else if (*ov.baseline == "none") {
            cfg.baselines.combat = false;
            cfg.baselines.coral = false;
        } else if (*ov.baseline == "both") {
            cfg.baselines.combat = true;
            cfg.baselines.coral = true;
        } else {
            throw lsr::ConfigError("--baseline must be combat, coral, none or both");
        }
    }
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"latentrot: disentangles acquisition-related from biological variation in "
                 "embedding vectors via a learned linear rotation"};
    app.require_subcommand(1);

    std::string config_path;
    Overrides ov;
    app.add_option("--config", config_path, "JSON configuration file")->capture_default_str();
    app.add_option("--seed", ov.seed, "override the experiment seed");
    app.add_option("--out", ov.out, "override the output directory");
    app.add_option("--r", ov.r, "override the technical subspace dimension");
    app.add_option("--k-min", ov.k_min, "override the smallest cluster count");
    app.add_option("--k-max", ov.k_max, "override the largest cluster count");
    app.add_option("--n-pairs", ov.n_pairs, "override the number of training pairs");
    app.add_option("--baseline", ov.baseline, "baselines to run: combat|coral|none|both");

    struct Cmd {
        const char* name;
        const char* help;
        void (*fn)(const lsr::ExperimentConfig&);
    };
    const Cmd commands[] = {
        {"synth", "generate a synthetic embedding dataset with known factor structure", lsr::run_synth},
        {"pairs", "build the labeled pair set with hard-negative mining", lsr::run_pairs},
        {"fit-rotation", "learn the technical-subspace projector", lsr::run_fit_rotation},
        {"project", "split embeddings into technical and biological parts", lsr::run_project},
        {"cluster", "fit the tissue cluster model on the biological embedding", lsr::run_cluster},
        {"stability", "cross-protocol cluster stability for z, zB and baselines", lsr::run_stability},
        {"classify-protocol", "protocol classification accuracy per subspace", lsr::run_classify_protocol},
        {"cox", "proportional-hazards fits on cluster-volume profiles", lsr::run_cox},
        {"pipeline", "run every stage in order", lsr::run_pipeline},
    };
    for (const auto& cmd : commands) {
        auto* sub = app.add_subcommand(cmd.name, cmd.help);
        sub->callback([&, fn = cmd.fn] { fn(resolve(config_path, ov)); });
    }
    auto* explain = app.add_subcommand("explain-config", "print each parameter and its origin");
    explain->callback([&] { std::cout << lsr::explain_config(resolve(config_path, ov)); });

    try {
        CLI11_PARSE(app, argc, argv);
    } catch (const lsr::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const lsr::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const lsr::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
