#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <set>

#include "kegnas/dmogp.hpp"
#include "oracles.hpp"

using namespace kegnas;

namespace {

DmogpConfig small_config() {
    DmogpConfig cfg;
    cfg.hidden = 5;
    cfg.arch_dim = 4;
    cfg.combined_dim = 3;
    cfg.feature_dim = 2;
    return cfg;
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

struct Instance {
    std::vector<Encoding> encs;
    Eigen::MatrixXd s, y;
};

Instance random_instance(const SearchSpaceSpec& spec, std::size_t n, int feature_dim, Rng& rng) {
    Instance out;
    for (std::size_t i = 0; i < n; ++i) out.encs.push_back(random_architecture(spec, rng));
    out.s = random_matrix(static_cast<Eigen::Index>(n), feature_dim, rng);
    out.y = random_matrix(static_cast<Eigen::Index>(n), kNumObjectives, rng);
    return out;
}

void perturb_kernel(Dmogp& gp, Rng& rng) {
    auto& p = gp.params();
    p.value(p.id("gp.log_amp"))(0, 0) = 0.3 * rng.normal();
    p.value(p.id("gp.log_ls"))(0, 0) = 0.2 * rng.normal();
    p.value(p.id("gp.L")) = random_matrix(kNumObjectives, 2, rng) * 0.5;
    p.value(p.id("gp.log_kappa")) = random_matrix(1, kNumObjectives, rng) * 0.3;
    p.value(p.id("gp.log_noise")) = random_matrix(1, kNumObjectives, rng) * 0.5 - Eigen::MatrixXd::Constant(1, 2, 2.0);
}

}  // namespace

TEST_CASE("kernel symmetry, structure and positive semidefiniteness") {
    const auto spec = SearchSpaceSpec::standard();
    Dmogp gp(spec, DmogpConfig{}, 1);
    Rng rng(2);
    perturb_kernel(gp, rng);
    const auto inst = random_instance(spec, 12, kFeatureDim, rng);
    const int m = kNumObjectives;
    Eigen::MatrixXd k(12 * m, 12 * m);
    for (int a = 0; a < 12; ++a) {
        for (int b = 0; b < 12; ++b) {
            const auto kab = gp.deep_kernel(inst.encs[a], inst.s.row(a).transpose(), inst.encs[b], inst.s.row(b).transpose());
            const auto kba = gp.deep_kernel(inst.encs[b], inst.s.row(b).transpose(), inst.encs[a], inst.s.row(a).transpose());
            CHECK(kab == kba.transpose());
            k.block(a * m, b * m, m, m) = kab;
        }
    }
    CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(k).eigenvalues().minCoeff() > -1e-10);
    const Eigen::MatrixXd b = gp.coregionalization();
    CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(b).eigenvalues().minCoeff() > 0.0);
    const auto self = gp.deep_kernel(inst.encs[0], inst.s.row(0).transpose(), inst.encs[0], inst.s.row(0).transpose());
    const double amp2 = gp.amplitude() * gp.amplitude();
    CHECK(self(0, 0) == doctest::Approx(amp2 * b(0, 0)));
    CHECK(self(1, 1) == doctest::Approx(amp2 * b(1, 1)));

    Eigen::VectorXd z(3), w(3);
    z << 0, 0, 0;
    w << 1e3, 0, 0;
    CHECK(gp.rbf(z, z) == doctest::Approx(amp2));
    CHECK(gp.rbf(z, w) == 0.0);
}

TEST_CASE("isomorphic encodings share features and distinct classes do not") {
    const auto spec = SearchSpaceSpec::with_ops(2);
    Dmogp gp(spec, DmogpConfig{}, 3);
    const Encoding a{{0, 0, 1, 2}, {0, 1, 0, 1}};
    const Encoding b{{0, 0, 2, 1}, {1, 0, 0, 1}};
    REQUIRE(canonicalize(a) == canonicalize(b));
    const std::vector<Encoding> pair{a, b};
    const auto f = gp.encode_architectures(pair);
    CHECK(f.row(0) == f.row(1));

    const auto all = enumerate(spec);
    const auto feats = gp.encode_architectures(all);
    double closest = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < feats.rows(); ++i)
        for (Eigen::Index j = i + 1; j < feats.rows(); ++j) closest = std::min(closest, (feats.row(i) - feats.row(j)).norm());
    CHECK(closest > 0.0);
}

TEST_CASE("prediction matches the dense posterior formula") {
    const auto spec = SearchSpaceSpec::standard();
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        Dmogp gp(spec, DmogpConfig{}, 100 + trial);
        perturb_kernel(gp, rng);
        const auto inst = random_instance(spec, 1 + rng.below(20), kFeatureDim, rng);
        gp.condition(inst.encs, inst.s, inst.y);
        for (int q = 0; q < 3; ++q) {
            const Encoding query = random_architecture(spec, rng);
            const Eigen::VectorXd sq = random_matrix(kFeatureDim, 1, rng);
            const auto pred = gp.predict(query, sq);
            const auto dense = oracle::dense_gp_posterior(gp, inst.encs, inst.s, inst.y, query, sq);
            CHECK((pred.mean - dense.mean).norm() <= 1e-6 * std::max(1e-3, dense.mean.norm()));
            CHECK((pred.cov - dense.cov).norm() <= 1e-6 * std::max(1e-3, dense.cov.norm()));
            CHECK(pred.cov.diagonal().minCoeff() >= -1e-10);
            CHECK(pred.cov == pred.cov.transpose());
        }
    }
}

TEST_CASE("near noise-free interpolation and the far-field prior") {
    const auto spec = SearchSpaceSpec::standard();
    Rng rng(5);
    Dmogp gp(spec, DmogpConfig{}, 6);
    auto& p = gp.params();
    p.value(p.id("gp.log_noise")).setConstant(std::log(1e-12));
    const auto inst = random_instance(spec, 1, kFeatureDim, rng);
    gp.condition(inst.encs, inst.s, inst.y);
    const auto at = gp.predict(inst.encs[0], inst.s.row(0).transpose());
    CHECK((at.mean - inst.y.row(0).transpose()).norm() < 1e-6);
    CHECK(at.cov.diagonal().maxCoeff() <= 1e-8);

    // A tiny lengthscale puts every other point out of reach.
    p.value(p.id("gp.log_ls"))(0, 0) = std::log(1e-4);
    const auto five = random_instance(spec, 5, kFeatureDim, rng);
    gp.condition(five.encs, five.s, five.y);
    const auto far = gp.predict(random_architecture(spec, rng), random_matrix(kFeatureDim, 1, rng));
    CHECK(far.mean.norm() < 1e-12);
    const Eigen::MatrixXd prior = gp.amplitude() * gp.amplitude() * gp.coregionalization();
    CHECK((far.cov - prior).norm() < 1e-12);
}

TEST_CASE("marginal-likelihood gradient passes finite differences") {
    const auto spec = SearchSpaceSpec::with_ops(3);
    Rng rng(7);
    for (int trial = 0; trial < 3; ++trial) {
        Dmogp gp(spec, small_config(), 10 + trial);
        perturb_kernel(gp, rng);
        const auto inst = random_instance(spec, 3 + rng.below(7), 2, rng);
        auto f = [&] { return gp.negative_log_marginal_likelihood(inst.encs, inst.s, inst.y, false); };
        auto g = [&] { gp.negative_log_marginal_likelihood(inst.encs, inst.s, inst.y, true); };
        CHECK(oracle::max_param_grad_error(gp.params(), f, g) < 1e-6);
    }
}

TEST_CASE("marginal likelihood equals the dense Gaussian density") {
    const auto spec = SearchSpaceSpec::standard();
    Rng rng(8);
    Dmogp gp(spec, DmogpConfig{}, 9);
    perturb_kernel(gp, rng);
    const auto inst = random_instance(spec, 6, kFeatureDim, rng);
    const int m = kNumObjectives;
    Eigen::MatrixXd c(6 * m, 6 * m);
    for (int a = 0; a < 6; ++a)
        for (int b = 0; b < 6; ++b)
            c.block(a * m, b * m, m, m) =
                gp.deep_kernel(inst.encs[a], inst.s.row(a).transpose(), inst.encs[b], inst.s.row(b).transpose());
    for (int a = 0; a < 6; ++a) c.block(a * m, a * m, m, m) += gp.noise().asDiagonal().toDenseMatrix();
    Eigen::VectorXd y(6 * m);
    for (int a = 0; a < 6; ++a) y.segment(a * m, m) = inst.y.row(a).transpose();
    const double expected = 0.5 * y.dot(c.fullPivLu().solve(y)) + 0.5 * std::log(c.determinant()) +
                            0.5 * 6 * m * std::log(2.0 * M_PI);
    CHECK(gp.negative_log_marginal_likelihood(inst.encs, inst.s, inst.y, false) == doctest::Approx(expected));
}

TEST_CASE("target transform") {
    std::vector<GpSample> data{
        {Encoding{}, 0, {0.2, 10.0}}, {Encoding{}, 0, {0.3, 100.0}}, {Encoding{}, 1, {0.1, 1000.0}},
        {Encoding{}, 1, {0.4, 10000.0}}};
    const auto t = TargetTransform::fit(data, 2);
    const auto row = t.to_target(data[0].obj, 0);
    CHECK(row[0] == 0.2);
    CHECK(row[1] == doctest::Approx(-1.0));
    CHECK(t.to_target(data[1].obj, 0)[1] == doctest::Approx(1.0));
    Eigen::VectorXd target(2);
    target << 0.25, 0.0;
    const auto obj = t.to_objective(target);
    CHECK(obj.err() == 0.25);
    CHECK(obj.params() == doctest::Approx(std::exp(t.pooled_mean)));
    CHECK(std::exp(t.pooled_mean) == doctest::Approx(std::sqrt(10.0 * 10000.0)));
}

TEST_CASE("fitting recovers a known deep-kernel GP on held-out inputs") {
    const auto spec = SearchSpaceSpec::standard();
    Rng rng(11);
    DmogpConfig cfg;
    Dmogp truth(spec, cfg, 12);
    auto& tp = truth.params();
    tp.value(tp.id("gp.log_ls"))(0, 0) = std::log(0.8);

    const Eigen::VectorXd s = random_matrix(kFeatureDim, 1, rng);
    std::vector<Encoding> encs;
    {
        std::set<Encoding> seen;
        while (encs.size() < 260) {
            const auto e = canonicalize(random_architecture(spec, rng));
            if (seen.insert(e).second) encs.push_back(e);
        }
    }
    const auto n = static_cast<Eigen::Index>(encs.size());
    const int m = kNumObjectives;
    const Eigen::MatrixXd z = truth.embed(encs, s.transpose().replicate(n, 1));
    Eigen::MatrixXd k(n * m, n * m);
    const Eigen::MatrixXd b = truth.coregionalization();
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) k.block(i * m, j * m, m, m) = truth.rbf(z.row(i), z.row(j)) * b;
    k.diagonal().array() += 1e-6;
    const Eigen::MatrixXd l = k.llt().matrixL();
    const Eigen::VectorXd draw = l * random_matrix(n * m, 1, rng);

    std::vector<GpSample> train, test;
    for (Eigen::Index i = 0; i < n; ++i) {
        // The second output passes through exp so that its log recovers the draw.
        GpSample sample{encs[i], 0, {draw[i * m] + 0.01 * rng.normal(), std::exp(draw[i * m + 1] + 0.01 * rng.normal())}};
        (i < 200 ? train : test).push_back(sample);
    }
    const std::vector<TaskFeatureDistribution> feats{{s, Eigen::VectorXd::Constant(kFeatureDim, 1e-3)}};
    Dmogp model(spec, cfg, 13);
    cfg.epochs = 150;
    const auto res = model.fit(train, feats, cfg, rng);
    REQUIRE(model.conditioned());

    std::vector<Encoding> test_encs;
    for (const auto& t : test) test_encs.push_back(t.enc);
    const auto preds = model.predict_batch(test_encs, s);
    for (int out = 0; out < m; ++out) {
        double se = 0.0, mean = 0.0, var = 0.0;
        std::vector<double> truth_vals;
        for (std::size_t i = 0; i < test.size(); ++i) truth_vals.push_back(model.transform().to_target(test[i].obj, 0)[out]);
        for (double v : truth_vals) mean += v / truth_vals.size();
        for (double v : truth_vals) var += (v - mean) * (v - mean) / truth_vals.size();
        for (std::size_t i = 0; i < test.size(); ++i) se += std::pow(preds[i].mean[out] - truth_vals[i], 2);
        const double smse = se / test.size() / var;
        CAPTURE(out);
        CHECK(smse < 0.3);
    }

    double early = 0.0, late = 0.0;
    const auto& tr = res.likelihood_trace;
    REQUIRE(tr.size() >= 20);
    for (std::size_t i = 0; i < 10; ++i) early += tr[i];
    for (std::size_t i = tr.size() - 10; i < tr.size(); ++i) late += tr[i];
    CHECK(late > early);
}

TEST_CASE("scoring candidates") {
    const auto spec = SearchSpaceSpec::standard();
    Rng rng(14);
    Dmogp gp(spec, DmogpConfig{}, 15);
    CHECK_THROWS(gp.predict(Encoding{}, Eigen::VectorXd::Zero(kFeatureDim)));
    const auto inst = random_instance(spec, 8, kFeatureDim, rng);
    gp.condition(inst.encs, inst.s, inst.y);
    const Eigen::VectorXd s = random_matrix(kFeatureDim, 1, rng);
    CHECK(gp.score_candidates({}, s).empty());
    const Encoding e = random_architecture(spec, rng);
    const std::vector<Encoding> dup{e, e, canonicalize(e)};
    const auto scored = gp.score_candidates(dup, s);
    REQUIRE(scored.size() == 3);
    CHECK(scored[0].predicted == scored[1].predicted);
    CHECK(scored[0].predicted == scored[2].predicted);
    CHECK(scored[0].variance.minCoeff() >= -1e-10);

    std::vector<Encoding> many;
    for (int i = 0; i < 300; ++i) many.push_back(random_architecture(spec, rng));
    const auto batch = gp.predict_batch(many, s);
    for (std::size_t i = 0; i < many.size(); i += 41) {
        const auto single = gp.predict(many[i], s);
        CHECK((single.mean - batch[i].mean).norm() < 1e-12);
        CHECK((single.cov - batch[i].cov).norm() < 1e-12);
    }
}

TEST_CASE("checkpoints restore the conditioned surrogate") {
    const auto spec = SearchSpaceSpec::standard();
    Rng rng(16);
    Dmogp gp(spec, DmogpConfig{}, 17);
    perturb_kernel(gp, rng);
    gp.set_transform(TargetTransform{{0.5}, {2.0}, 0.5, 2.0});
    const auto inst = random_instance(spec, 10, kFeatureDim, rng);
    gp.condition(inst.encs, inst.s, inst.y);
    const auto path = (std::filesystem::temp_directory_path() / "kegnas_gp_test.ckpt").string();
    gp.save(path);
    const auto back = Dmogp::load(path, spec);
    std::filesystem::remove(path);
    REQUIRE(back.conditioned());
    CHECK(back.conditioning_size() == 10);
    CHECK(back.transform().pooled_std == 2.0);
    for (int q = 0; q < 5; ++q) {
        const auto e = random_architecture(spec, rng);
        const Eigen::VectorXd s = random_matrix(kFeatureDim, 1, rng);
        const auto a = gp.predict(e, s);
        const auto b = back.predict(e, s);
        CHECK(a.mean == b.mean);
        CHECK(a.cov == b.cov);
    }
}

TEST_CASE("malformed conditioning data is rejected") {
    const auto spec = SearchSpaceSpec::standard();
    Dmogp gp(spec, DmogpConfig{}, 18);
    CHECK_THROWS(gp.condition({}, Eigen::MatrixXd(0, kFeatureDim), Eigen::MatrixXd(0, 2)));
    const std::vector<Encoding> one{Encoding{}};
    CHECK_THROWS(gp.condition(one, Eigen::MatrixXd::Zero(1, kFeatureDim), Eigen::MatrixXd::Zero(1, 3)));
    CHECK_THROWS(gp.condition(one, Eigen::MatrixXd::Zero(1, 5), Eigen::MatrixXd::Zero(1, 2)));
}
