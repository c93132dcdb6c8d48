#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "lsr/rng.hpp"
#include "lsr/rotation.hpp"
#include "lsr/synth.hpp"
#include "oracles.hpp"

using namespace lsr;

namespace {

PairSet toy_pairs(const Mat& deltas, const std::vector<std::uint8_t>& labels) {
    PairSet pairs;
    pairs.m = deltas.cols();
    for (Eigen::Index i = 0; i < deltas.rows(); ++i) {
        PairSample s;
        s.i = static_cast<std::uint64_t>(2 * i);
        s.j = static_cast<std::uint64_t>(2 * i + 1);
        s.label = labels[static_cast<std::size_t>(i)];
        s.delta = deltas.row(i).transpose();
        pairs.samples.push_back(std::move(s));
        if (s.label == 1) {
            ++pairs.count_label1;
        } else {
            ++pairs.count_label0;
        }
    }
    return pairs;
}

}  // namespace

TEST_CASE("bce gradient matches central finite differences") {
    SeededRng rng(2024);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Index n = 40, m = 7;
        Mat x(n, m);
        std::vector<std::uint8_t> y(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < m; ++j) x(i, j) = rng.normal();
            y[static_cast<std::size_t>(i)] = rng.uniform01() < 0.5;
        }
        Vec w(m);
        for (Eigen::Index j = 0; j < m; ++j) w[j] = rng.normal();
        double b = rng.normal();

        const BceEval eval = bce_loss_and_grad(w, b, x, y);
        const double h = 1e-6;
        for (Eigen::Index j = 0; j < m; ++j) {
            const double fd = oracle::central_diff(
                [&](const Vec& at) { return bce_loss_and_grad(at, b, x, y).loss; }, w, j, h);
            CHECK(std::abs(eval.grad_w[j] - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
        }
        const double fd_b =
            (bce_loss_and_grad(w, b + h, x, y).loss - bce_loss_and_grad(w, b - h, x, y).loss) / (2 * h);
        CHECK(std::abs(eval.grad_b - fd_b) <= 1e-5 * std::max(1.0, std::abs(fd_b)));
    }
}

TEST_CASE("separable 1-d toy reaches train accuracy 1") {
    Mat deltas(200, 1);
    std::vector<std::uint8_t> labels(200);
    for (int i = 0; i < 200; ++i) {
        labels[static_cast<std::size_t>(i)] = i < 100;
        deltas(i, 0) = i < 100 ? 1.0 : -1.0;
    }
    TrainOptions opt;
    opt.seed = 1;
    const DeltaClassifier clf = fit_delta_classifier(toy_pairs(deltas, labels), opt);
    CHECK(clf.train_accuracy == 1.0);
    CHECK(clf.val_accuracy == 1.0);
}

TEST_CASE("random labels stay at chance level") {
    SeededRng rng(7);
    const Eigen::Index n = 10000, m = 6;
    Mat deltas(n, m);
    std::vector<std::uint8_t> labels(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) deltas(i, j) = rng.normal();
        labels[static_cast<std::size_t>(i)] = rng.uniform01() < 0.5;
    }
    TrainOptions opt;
    opt.seed = 2;
    const DeltaClassifier clf = fit_delta_classifier(toy_pairs(deltas, labels), opt);
    CHECK(clf.val_accuracy >= 0.40);
    CHECK(clf.val_accuracy <= 0.60);
}

TEST_CASE("training loss is non-increasing within tolerance") {
    SeededRng rng(11);
    const Eigen::Index n = 2000, m = 8;
    Mat deltas(n, m);
    std::vector<std::uint8_t> labels(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const bool pos = i < n / 2;
        labels[static_cast<std::size_t>(i)] = pos;
        for (Eigen::Index j = 0; j < m; ++j) deltas(i, j) = rng.normal() + (pos ? 1.5 : 0.0);
    }
    for (Optimizer optimizer : {Optimizer::gradient_descent, Optimizer::adam}) {
        TrainOptions opt;
        opt.seed = 3;
        opt.optimizer = optimizer;
        const DeltaClassifier clf = fit_delta_classifier(toy_pairs(deltas, labels), opt);
        for (std::size_t e = 1; e < clf.loss_history.size(); ++e) {
            CHECK(clf.loss_history[e] <= clf.loss_history[e - 1] + 1e-3);
        }
    }
}

TEST_CASE("single-class pair set is rejected") {
    Mat deltas(10, 2);
    deltas.setOnes();
    std::vector<std::uint8_t> labels(10, 1);
    CHECK_THROWS_AS(fit_delta_classifier(toy_pairs(deltas, labels), TrainOptions{}), DataError);
}

TEST_CASE("dominant_axis normalizes and is scale invariant") {
    DeltaClassifier clf;
    clf.w = Vec::Zero(4);
    clf.w << 3, 4, 0, 0;
    const Vec v = dominant_axis(clf);
    CHECK(v[0] == doctest::Approx(0.6));
    CHECK(v[1] == doctest::Approx(0.8));
    DeltaClassifier scaled = clf;
    scaled.w *= 10.0;
    CHECK((dominant_axis(scaled) - v).norm() < 1e-15);
    DeltaClassifier zero;
    zero.w = Vec::Zero(4);
    CHECK_THROWS_AS(dominant_axis(zero), NumericError);
}

TEST_CASE("residual_directions: rank-0 residual data is rejected") {
    const Eigen::Index m = 6;
    Vec v_base = Vec::Zero(m);
    v_base[0] = 1.0;
    Mat deltas(20, m);
    SeededRng rng(5);
    for (Eigen::Index i = 0; i < 20; ++i) deltas.row(i) = (rng.normal() * v_base).transpose();
    std::vector<std::uint8_t> labels(20, 1);
    CHECK_THROWS_WITH_AS(residual_directions(toy_pairs(deltas, labels), v_base, 1),
                         doctest::Contains("rank 0"), DataError);
}

TEST_CASE("residual_directions: a single forced direction is recovered") {
    const Eigen::Index m = 5;
    Vec v_base = Vec::Zero(m);
    v_base[0] = 1.0;
    Vec e2 = Vec::Zero(m);
    e2[1] = 1.0;
    Mat deltas(2, m);
    deltas.row(0) = (v_base + e2).transpose();
    deltas.row(1) = (v_base - e2).transpose();
    std::vector<std::uint8_t> labels(2, 1);
    const Mat v_res = residual_directions(toy_pairs(deltas, labels), v_base, 1);
    CHECK(std::abs(std::abs(v_res.col(0).dot(e2)) - 1.0) < 1e-10);
}

TEST_CASE("residual_directions match a dense eigendecomposition of the residual covariance") {
    SeededRng rng(17);
    const Eigen::Index m = 12, n = 5000;
    Vec v_base(m);
    for (Eigen::Index j = 0; j < m; ++j) v_base[j] = rng.normal();
    v_base.normalize();
    Mat deltas(n, m);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) deltas(i, j) = rng.normal() * (1.0 + 0.3 * (m - j));
    }
    std::vector<std::uint8_t> labels(static_cast<std::size_t>(n), 1);
    const int n_dirs = 8;
    const Mat got = residual_directions(toy_pairs(deltas, labels), v_base, n_dirs);

    // oracle: explicitly form the centered covariance of the projected deltas
    Mat resid = deltas - (deltas * v_base) * v_base.transpose();
    Vec mean = resid.colwise().mean().transpose();
    resid.rowwise() -= mean.transpose();
    Mat cov = resid.transpose() * resid / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
    for (int c = 0; c < n_dirs; ++c) {
        const Vec want = eig.eigenvectors().col(m - 1 - c);
        const double align = std::abs(want.dot(got.col(c)));
        CHECK(align > 1.0 - 1e-6);
    }
    // orthogonality guarantees
    CHECK((got.transpose() * got - Mat::Identity(n_dirs, n_dirs)).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((got.transpose() * v_base).cwiseAbs().maxCoeff() < 1e-8);
}

namespace {

/// Tiny two-protocol set plus labeled pairs with known orientation.
struct OffsetFixture {
    EmbeddingSet set;
    PairSet pairs;
};

OffsetFixture offset_fixture(const std::vector<Vec>& oriented_deltas, Eigen::Index m) {
    OffsetFixture fx;
    const std::size_t n_pairs = oriented_deltas.size();
    fx.set.vectors.resize(static_cast<Eigen::Index>(2 * n_pairs), m);
    SeededRng rng(23);
    for (std::size_t p = 0; p < n_pairs; ++p) {
        Vec base(m);
        for (Eigen::Index j = 0; j < m; ++j) base[j] = rng.normal();
        // record 2p carries protocol 0 (ref), record 2p+1 protocol 1
        fx.set.vectors.row(static_cast<Eigen::Index>(2 * p)) = (base + oriented_deltas[p]).transpose();
        fx.set.vectors.row(static_cast<Eigen::Index>(2 * p + 1)) = base.transpose();
        for (int side = 0; side < 2; ++side) {
            fx.set.record_ids.push_back(2 * p + static_cast<std::size_t>(side));
            fx.set.anatomy_ids.push_back(static_cast<std::uint32_t>(p));
            fx.set.protocol_ids.push_back(static_cast<std::uint32_t>(side));
            fx.set.patient_ids.push_back(0);
            fx.set.has_survival.push_back(0);
            fx.set.survival_times.push_back(0);
            fx.set.events.push_back(0);
        }
        PairSample s;
        // half the samples are stored in flipped orientation
        const bool flip = p % 2 == 1;
        s.i = 2 * p + (flip ? 1 : 0);
        s.j = 2 * p + (flip ? 0 : 1);
        s.label = 1;
        s.delta = flip ? (-oriented_deltas[p]).eval() : oriented_deltas[p];
        fx.pairs.samples.push_back(std::move(s));
        ++fx.pairs.count_label1;
    }
    fx.pairs.m = m;
    fx.set.rebuild_vocabs();
    return fx;
}

}  // namespace

TEST_CASE("mean_protocol_offset: constant oriented deltas return the constant") {
    const Eigen::Index m = 4;
    Vec c(m);
    c << 1, -2, 3, 0.5;
    const auto fx = offset_fixture(std::vector<Vec>(8, c), m);
    const Vec got = mean_protocol_offset(fx.set, fx.pairs, 0, 1);
    CHECK((got - c).norm() < 1e-12);
}

TEST_CASE("mean_protocol_offset: orientation removes the sampling sign") {
    // stored deltas alternate sign, but all orient to d
    const Eigen::Index m = 3;
    Vec d(m);
    d << 2, 0, -1;
    const auto fx = offset_fixture(std::vector<Vec>(6, d), m);
    const Vec got = mean_protocol_offset(fx.set, fx.pairs, 0, 1);
    CHECK((got - d).norm() < 1e-12);
}

TEST_CASE("mean_protocol_offset: matches the arithmetic mean on random data") {
    SeededRng rng(41);
    const Eigen::Index m = 6;
    std::vector<Vec> deltas;
    Vec mean = Vec::Zero(m);
    for (int p = 0; p < 1000; ++p) {
        Vec d(m);
        for (Eigen::Index j = 0; j < m; ++j) d[j] = rng.normal();
        mean += d;
        deltas.push_back(std::move(d));
    }
    mean /= 1000.0;
    const auto fx = offset_fixture(deltas, m);
    CHECK((mean_protocol_offset(fx.set, fx.pairs, 0, 1) - mean).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mean_protocol_offset: missing protocol pair is an error") {
    const Eigen::Index m = 3;
    const auto fx = offset_fixture(std::vector<Vec>(4, Vec::Ones(m)), m);
    CHECK_THROWS_AS(mean_protocol_offset(fx.set, fx.pairs, 0, 7), DataError);
}

TEST_CASE("build_projector: orthonormal inputs are reproduced up to sign") {
    SeededRng rng(53);
    const Eigen::Index m = 10;
    Mat gauss(m, 4);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < 4; ++j) gauss(i, j) = rng.normal();
    }
    const Mat q = Eigen::HouseholderQR<Mat>(gauss).householderQ() * Mat::Identity(m, 4);
    const Projector p = build_projector(q.col(0), q.middleCols(1, 2), q.col(3), 4);
    for (int c = 0; c < 4; ++c) {
        CHECK(std::abs(std::abs(p.basis.col(c).dot(q.col(c))) - 1.0) < 1e-10);
    }
    CHECK(p.provenance.v_diff_included);
    CHECK(p.provenance.backfilled == 0);
}

TEST_CASE("build_projector: dependent v_diff is dropped and backfilled") {
    SeededRng rng(59);
    const Eigen::Index m = 8;
    Mat gauss(m, 4);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < 4; ++j) gauss(i, j) = rng.normal();
    }
    const Mat q = Eigen::HouseholderQR<Mat>(gauss).householderQ() * Mat::Identity(m, 4);
    const Vec v_base = q.col(0);
    const Mat v_res = q.middleCols(1, 3);  // one spare beyond r-2
    const Projector p = build_projector(v_base, v_res, v_base, 4);
    CHECK_FALSE(p.provenance.v_diff_included);
    CHECK(p.provenance.backfilled == 1);
    CHECK((p.basis.transpose() * p.basis - Mat::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("build_projector: span equals the span of a random full-rank stack") {
    SeededRng rng(61);
    const Eigen::Index m = 24;
    const int r = 10;
    Mat stack(m, r);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < r; ++j) stack(i, j) = rng.normal();
    }
    const Projector p = build_projector(stack.col(0), stack.middleCols(1, r - 2), stack.col(r - 1), r);
    const Mat q = Eigen::HouseholderQR<Mat>(stack).householderQ() * Mat::Identity(m, r);
    const Vec angles = oracle::principal_angles(p.basis, q);
    CHECK(angles.maxCoeff() < 1e-8);
    CHECK((p.basis.transpose() * p.basis - Mat::Identity(r, r)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("build_projector: insufficient directions is an error") {
    const Eigen::Index m = 6;
    Vec v = Vec::Zero(m);
    v[0] = 1.0;
    Mat v_res(m, 1);
    v_res.setZero();
    v_res(1, 0) = 1.0;
    CHECK_THROWS_WITH_AS(build_projector(v, v_res, v, 3),
                         doctest::Contains("insufficient independent directions"), DataError);
}

TEST_CASE("split: exact decomposition, orthogonality, idempotence") {
    SeededRng rng(67);
    const Eigen::Index m = 32;
    Mat gauss(m, 6);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < 6; ++j) gauss(i, j) = rng.normal();
    }
    Projector p;
    p.basis = Eigen::HouseholderQR<Mat>(gauss).householderQ() * Mat::Identity(m, 6);

    SUBCASE("vector already in the span has no biological part") {
        Vec coords(6);
        for (Eigen::Index j = 0; j < 6; ++j) coords[j] = rng.normal();
        const Vec z = p.basis * coords;
        const auto [zt, zb] = split(z, p);
        CHECK(zb.norm() < 1e-10 * z.norm());
        CHECK((zt - z).norm() < 1e-10 * z.norm());
    }
    SUBCASE("vector orthogonal to the span has no technical part") {
        Vec z(m);
        for (Eigen::Index j = 0; j < m; ++j) z[j] = rng.normal();
        z -= p.basis * (p.basis.transpose() * z);
        const auto [zt, zb] = split(z, p);
        CHECK(zt.norm() < 1e-10 * z.norm());
    }
    SUBCASE("1000 random vectors decompose exactly") {
        for (int t = 0; t < 1000; ++t) {
            Vec z(m);
            for (Eigen::Index j = 0; j < m; ++j) z[j] = rng.normal();
            const auto [zt, zb] = split(z, p);
            CHECK((z - zt - zb).norm() < 1e-12 * z.norm());
            CHECK(std::abs(zt.dot(zb)) < 1e-10 * z.squaredNorm());
            const auto [zbt, zbb] = split(zb, p);
            CHECK(zbt.norm() < 1e-10 * z.norm());
        }
    }
    SUBCASE("dimension mismatch is rejected") {
        CHECK_THROWS_AS(split(Vec::Zero(m + 1), p), DataError);
    }
}

namespace {

std::pair<EmbeddingSet, PairSet> rotation_fixture(std::uint64_t seed) {
    SynthConfig cfg;
    cfg.m = 32;
    cfg.n_anatomy = 20;
    cfg.n_protocols = 2;
    cfg.n_patients = 10;
    cfg.d_bio = 6;
    cfg.d_tech = 3;
    cfg.noise_sigma = 0.05;
    cfg.tech_strength = 3.0;
    cfg.seed = seed;
    auto [set, gt] = generate(cfg);
    PairingOptions popt;
    popt.rank_lo = 5;
    popt.rank_hi = 30;
    popt.neighbors = 31;
    popt.seed = seed;
    PairSet pairs = build_pair_set(set, 4000, popt);
    (void)gt;
    return {std::move(set), std::move(pairs)};
}

}  // namespace

TEST_CASE("fit_rotation: r=1 is rejected") {
    auto [set, pairs] = rotation_fixture(301);
    CHECK_THROWS_AS(fit_rotation(set, pairs, 1, RotationOptions{}), ConfigError);
}

TEST_CASE("fit_rotation: bit-identical output under a fixed seed") {
    auto [set, pairs] = rotation_fixture(302);
    RotationOptions opt;
    opt.train.seed = 7;
    const Projector a = fit_rotation(set, pairs, 5, opt);
    const Projector b = fit_rotation(set, pairs, 5, opt);
    CHECK(a.basis == b.basis);
    CHECK(a.provenance.v_diff_included == b.provenance.v_diff_included);
}

TEST_CASE("fit_rotation: recovers the planted technical subspace") {
    SynthConfig cfg;
    cfg.m = 32;
    cfg.n_anatomy = 20;
    cfg.n_protocols = 2;
    cfg.n_patients = 10;
    cfg.d_bio = 6;
    cfg.d_tech = 3;
    cfg.noise_sigma = 0.05;
    cfg.tech_strength = 3.0;
    cfg.seed = 303;
    auto [set, gt] = generate(cfg);
    PairingOptions popt;
    popt.rank_lo = 5;
    popt.rank_hi = 30;
    popt.neighbors = 31;
    popt.seed = 303;
    const PairSet pairs = build_pair_set(set, 6000, popt);
    RotationOptions opt;
    opt.train.seed = 303;
    const Projector p = fit_rotation(set, pairs, 3, opt);
    const Vec angles = oracle::principal_angles(p.basis, gt.tech_basis);
    CHECK(angles.maxCoeff() * oracle::kDegrees < 10.0);
    CHECK(p.provenance.classifier_val_accuracy > 0.9);
}

TEST_CASE("projector round-trips through its file formats") {
    auto [set, pairs] = rotation_fixture(304);
    RotationOptions opt;
    opt.train.seed = 1;
    const Projector p = fit_rotation(set, pairs, 4, opt);
    const auto path = std::filesystem::temp_directory_path() / "lsr_proj.bin";
    save_projector(p, path.string());
    const Projector back = load_projector(path.string());
    CHECK(back.basis == p.basis);
    CHECK(back.provenance.n_residual_used == p.provenance.n_residual_used);
    CHECK(back.provenance.ref_protocol == p.provenance.ref_protocol);
}
