#pragma once

#include <string>

#include "lsr/config.hpp"

namespace lsr {

/// Conventional artifact file names inside the output directory.
namespace artifacts {
constexpr const char* embeddings = "embeddings.bin";
constexpr const char* embeddings_csv = "embeddings.csv";
constexpr const char* ground_truth = "ground_truth.bin";
constexpr const char* pairs = "pairs.bin";
constexpr const char* projector = "projector.bin";
constexpr const char* projector_csv = "projector.csv";
constexpr const char* z_technical = "zt.bin";
constexpr const char* z_biological = "zb.bin";
constexpr const char* cluster_model = "cluster_model.bin";
constexpr const char* centroids_csv = "centroids.csv";
constexpr const char* labels_csv = "labels.csv";
constexpr const char* stability_csv = "stability.csv";
constexpr const char* stability_per_patient_csv = "stability_per_patient.csv";
constexpr const char* classify_csv = "classify.csv";
constexpr const char* cox_csv = "cox.csv";
}  // namespace artifacts

/// Each stage reads its inputs from the output directory and writes its own
/// artifacts, so a deleted downstream artifact can be reproduced by rerunning
/// only that stage.
void run_synth(const ExperimentConfig& cfg);
void run_pairs(const ExperimentConfig& cfg);
void run_fit_rotation(const ExperimentConfig& cfg);
void run_project(const ExperimentConfig& cfg);
void run_cluster(const ExperimentConfig& cfg);
void run_stability(const ExperimentConfig& cfg);
void run_classify_protocol(const ExperimentConfig& cfg);
void run_cox(const ExperimentConfig& cfg);
void run_pipeline(const ExperimentConfig& cfg);

}  // namespace lsr
