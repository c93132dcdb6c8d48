#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lsr/common.hpp"
#include "lsr/dataio.hpp"
#include "lsr/pairing.hpp"

namespace lsr {

/// Linear logistic classifier on latent differences.
struct DeltaClassifier {
    Vec w;
    double b = 0.0;
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;
    std::vector<double> loss_history;  // per-epoch mean training BCE
};

enum class Optimizer { gradient_descent, adam };

struct TrainOptions {
    int epochs = 50;
    double lr = 1e-3;
    std::size_t batch = 4096;
    double val_fraction = 0.2;
    /// Plain minibatch gradient descent by default. Adam's per-coordinate
    /// normalization turns the weight vector into a coordinate-sign pattern on
    /// strongly separable difference data, which corrupts the axis estimate;
    /// it stays available for data where classes overlap.
    Optimizer optimizer = Optimizer::gradient_descent;
    std::uint64_t seed = 0;
};

/// Mean BCE of sigmoid(w.x + b) over rows of X with labels y, plus analytic
/// gradients. Exposed so tests can check the gradient against finite
/// differences.
struct BceEval {
    double loss = 0.0;
    Vec grad_w;
    double grad_b = 0.0;
};
BceEval bce_loss_and_grad(const Vec& w, double b, const Mat& X, const std::vector<std::uint8_t>& y);

DeltaClassifier fit_delta_classifier(const PairSet& pairs, const TrainOptions& opt);

/// v_base = w / ||w||. Errors when ||w|| <= 1e-12 (classifier failed to learn).
Vec dominant_axis(const DeltaClassifier& clf);

/// Top principal directions of the label-1 deltas projected onto the
/// orthogonal complement of v_base (centered PCA of the residuals). Columns
/// are unit-norm, mutually orthogonal and orthogonal to v_base.
/// use_all_labels widens the input to every delta regardless of label.
Mat residual_directions(const PairSet& pairs, const Vec& v_base, int n_dirs,
                        bool use_all_labels = false);

/// Achievable residual rank for the same input (eigenvalues above a relative
/// floor); lets callers size n_dirs before requesting directions.
int residual_rank(const PairSet& pairs, const Vec& v_base, bool use_all_labels = false);

/// Mean latent difference over positive pairs between the two protocols,
/// each pair oriented as z_ref - z_other. Unnormalized.
Vec mean_protocol_offset(const EmbeddingSet& set, const PairSet& pairs, std::uint32_t ref_protocol,
                         std::uint32_t other_protocol);

struct ProjectorProvenance {
    int n_residual_used = 0;
    bool v_diff_included = true;
    int backfilled = 0;
    double classifier_val_accuracy = std::numeric_limits<double>::quiet_NaN();
    std::uint32_t ref_protocol = 0xFFFFFFFFu;
    std::uint32_t other_protocol = 0xFFFFFFFFu;
};

/// Orthonormal basis of the technical subspace; z_T = P P^T z,
/// z_B = (I - P P^T) z.
struct Projector {
    Mat basis;  // m x r, orthonormal columns ordered [v_base, residual dirs, v_diff-derived]
    ProjectorProvenance provenance;

    Eigen::Index m() const { return basis.rows(); }
    Eigen::Index r() const { return basis.cols(); }
};

/// Stacks [v_base | V_res(:, 0..r-3) | v_diff] and orthonormalizes. A column
/// whose residual after projection onto the accepted columns falls below
/// drop_tol (relative) is treated as dependent up to estimation noise,
/// dropped, and backfilled with the next unused V_res column.
Projector build_projector(const Vec& v_base, const Mat& v_res, const Vec& v_diff, int r,
                          double drop_tol = 0.1);

/// (z_T, z_B) with z_T = P P^T z and z_B = z - z_T.
std::pair<Vec, Vec> split(const Vec& z, const Projector& p);

/// Row-wise split of a whole matrix.
std::pair<Mat, Mat> split_rows(const Mat& z, const Projector& p);

struct RotationOptions {
    TrainOptions train;
    double vdiff_drop_tol = 0.1;
    bool residual_use_all_labels = false;
    /// Protocol pair for the mean offset. Unset: the offset with the largest
    /// norm among protocol pairs that have positive pairs.
    std::optional<std::pair<std::uint32_t, std::uint32_t>> offset_protocols;
};

/// classifier -> dominant axis -> residual PCA -> protocol offset -> QR.
Projector fit_rotation(const EmbeddingSet& set, const PairSet& pairs, int r,
                       const RotationOptions& opt);

void save_projector(const Projector& p, const std::string& path);
Projector load_projector(const std::string& path);
void save_projector_csv(const Projector& p, const std::string& path);

}  // namespace lsr
