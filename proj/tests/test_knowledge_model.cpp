#include "doctest.h"

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <filesystem>
#include <map>

#include "kegnas/knowledge_model.hpp"
#include "kegnas/pipeline.hpp"
#include "oracles.hpp"

using namespace kegnas;

namespace {

std::vector<Encoding> all_raw(int num_ops) {
    std::vector<Encoding> out;
    const int q4 = num_ops * num_ops * num_ops * num_ops;
    for (int b = 0; b <= 1; ++b)
        for (int c = 0; c <= 2; ++c)
            for (int d = 0; d <= 3; ++d)
                for (int o = 0; o < q4; ++o) {
                    Encoding e{{0, b, c, d}, {}};
                    int x = o;
                    for (int i = 0; i < 4; ++i) {
                        e.ops[i] = x % num_ops;
                        x /= num_ops;
                    }
                    out.push_back(e);
                }
    return out;
}

Eigen::VectorXd random_feature(int dim, Rng& rng) {
    Eigen::VectorXd s(dim);
    for (int i = 0; i < dim; ++i) s[i] = rng.normal();
    return s;
}

}  // namespace

TEST_CASE("zeroed heads give the uniform closed form") {
    for (int q : {2, 5, 9}) {
        KnowledgeModel km(SearchSpaceSpec::with_ops(q), 8, 4, 3);
        auto& p = km.params();
        for (const char* name : {"km.op.w", "km.op.b", "km.edge2.w", "km.edge2.b"}) p.value(p.id(name)).setZero();
        Rng rng(1);
        const double expected = -4.0 * std::log(static_cast<double>(q)) - std::log(24.0);
        for (int t = 0; t < 20; ++t) {
            const Encoding e = random_architecture(SearchSpaceSpec::with_ops(q), rng);
            CHECK(km.log_prob(e, random_feature(4, rng)) == doctest::Approx(expected).epsilon(1e-12));
        }
    }
}

TEST_CASE("probabilities over the two-operation space sum to one") {
    const auto encs = all_raw(2);
    REQUIRE(encs.size() == 384);
    Rng rng(2);
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        KnowledgeModel km(SearchSpaceSpec::with_ops(2), 16, kFeatureDim, seed);
        const Eigen::VectorXd s = random_feature(kFeatureDim, rng);
        const Eigen::MatrixXd rows = s.transpose().replicate(static_cast<Eigen::Index>(encs.size()), 1);
        const auto lp = km.log_prob_batch(encs, rows);
        double total = 0.0;
        for (double v : lp) total += std::exp(v);
        CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
        for (std::size_t i = 0; i < encs.size(); i += 37) CHECK(km.log_prob(encs[i], s) == doctest::Approx(lp[i]));
    }
}

TEST_CASE("samples follow the model's own probabilities") {
    const auto encs = all_raw(2);
    KnowledgeModel km(SearchSpaceSpec::with_ops(2), 16, kFeatureDim, 5);
    km.mark_trained();
    Rng rng(6);
    const Eigen::VectorXd s = random_feature(kFeatureDim, rng);
    const auto lp = km.log_prob_batch(encs, s.transpose().replicate(static_cast<Eigen::Index>(encs.size()), 1));
    const std::size_t n = 50000;
    std::map<Encoding, std::size_t> counts;
    for (const auto& e : km.generate(s, n, rng)) ++counts[e];
    double chi2 = 0.0, pooled_exp = 0.0, pooled_obs = 0.0;
    int cells = 0;
    for (std::size_t i = 0; i < encs.size(); ++i) {
        const double expected = n * std::exp(lp[i]);
        const double observed = static_cast<double>(counts[encs[i]]);
        if (expected < 5.0) {
            pooled_exp += expected;
            pooled_obs += observed;
            continue;
        }
        chi2 += (observed - expected) * (observed - expected) / expected;
        ++cells;
    }
    if (pooled_exp > 0.0) {
        chi2 += (pooled_obs - pooled_exp) * (pooled_obs - pooled_exp) / pooled_exp;
        ++cells;
    }
    const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(cells - 1), chi2));
    CHECK(p > 0.01);
}

TEST_CASE("log-likelihood gradient passes finite differences") {
    Rng rng(7);
    KnowledgeModel km(SearchSpaceSpec::with_ops(3), 4, 3, 8);
    std::vector<Encoding> batch;
    for (int i = 0; i < 5; ++i) batch.push_back(random_architecture(SearchSpaceSpec::with_ops(3), rng));
    Eigen::MatrixXd s(5, 3);
    for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = rng.normal();
    auto f = [&] {
        nn::Tape tape;
        return tape.value(tape.sum(km.log_prob_on_tape(tape, batch, s)))(0, 0);
    };
    auto g = [&] {
        nn::Tape tape;
        tape.backward(tape.sum(km.log_prob_on_tape(tape, batch, s)));
    };
    CHECK(oracle::max_param_grad_error(km.params(), f, g) < 1e-6);
}

TEST_CASE("overfitting one target concentrates the samples") {
    const auto spec = SearchSpaceSpec::standard();
    Rng rng(10);
    TaskFeatureDistribution feat{random_feature(kFeatureDim, rng), Eigen::VectorXd::Constant(kFeatureDim, 0.1)};
    const std::vector<std::size_t> task_of{0};
    const std::vector<TaskFeatureDistribution> feats{feat};
    KnowledgeModelConfig cfg;
    cfg.epochs = 400;

    SUBCASE("asymmetric target") {
        KnowledgeModel km(spec, 64, kFeatureDim, 9);
        const std::vector<Encoding> encs{Encoding{{0, 1, 2, 0}, {1, 3, 5, 8}}};
        const auto res = km.train(encs, task_of, feats, cfg, rng);
        CHECK(res.loss_trace.size() == 400);
        CHECK(res.loss_trace.back() < 0.1);
        CHECK(km.log_prob(encs[0], feat.mu) > -0.1);
        std::size_t hits = 0;
        for (const auto& e : km.generate(feat.mu, 1000, rng)) hits += e == encs[0];
        CHECK(hits >= 950);
    }
    SUBCASE("target with interchangeable siblings") {
        // Two raw orderings describe the same class, so the loss floor is log 2.
        KnowledgeModel km(spec, 64, kFeatureDim, 9);
        const std::vector<Encoding> encs{Encoding{{0, 1, 1, 3}, {2, 7, 7, 4}}};
        const auto res = km.train(encs, task_of, feats, cfg, rng);
        CHECK(res.loss_trace.back() < std::log(2.0) + 0.1);
        std::size_t hits = 0;
        for (const auto& e : km.generate(feat.mu, 1000, rng)) hits += canonicalize(e) == canonicalize(encs[0]);
        CHECK(hits >= 950);
    }
}

TEST_CASE("training loss falls under a moving average") {
    const auto spec = SearchSpaceSpec::standard();
    Rng rng(20);
    std::vector<Encoding> encs;
    std::vector<std::size_t> task_of;
    for (int i = 0; i < 300; ++i) {
        encs.push_back(random_architecture(spec, rng));
        encs.back().ops[0] = 2;
        task_of.push_back(0);
    }
    const std::vector<TaskFeatureDistribution> feats{
        {random_feature(kFeatureDim, rng), Eigen::VectorXd::Constant(kFeatureDim, 0.1)}};
    KnowledgeModel km(spec, 32, kFeatureDim, 21);
    KnowledgeModelConfig cfg;
    cfg.epochs = 100;
    cfg.batch = 64;
    const auto trace = km.train(encs, task_of, feats, cfg, rng).loss_trace;
    auto window = [&](std::size_t end) {
        double sum = 0.0;
        for (std::size_t k = end - 10; k < end; ++k) sum += trace[k];
        return sum / 10.0;
    };
    for (std::size_t end = 20; end <= trace.size(); end += 10) CHECK(window(end) <= window(end - 10) + 1e-3);
}

TEST_CASE("tasks with disjoint operation sets yield different generated marginals") {
    const auto spec = SearchSpaceSpec::standard();
    Rng rng(11);
    std::vector<Encoding> encs;
    std::vector<std::size_t> task_of;
    for (int i = 0; i < 200; ++i) {
        for (std::size_t t = 0; t < 2; ++t) {
            Encoding e = random_architecture(spec, rng);
            for (auto& op : e.ops) op = static_cast<int>(rng.below(3)) + (t == 0 ? 0 : 5);
            encs.push_back(e);
            task_of.push_back(t);
        }
    }
    const Eigen::VectorXd base = random_feature(kFeatureDim, rng);
    const std::vector<TaskFeatureDistribution> feats{
        {base, Eigen::VectorXd::Constant(kFeatureDim, 0.1)},
        {-base, Eigen::VectorXd::Constant(kFeatureDim, 0.1)},
    };
    KnowledgeModel km(spec, 32, kFeatureDim, 12);
    KnowledgeModelConfig cfg;
    cfg.hidden = 32;
    cfg.epochs = 150;
    cfg.batch = 64;
    cfg.adam.lr = 3e-3;
    km.train(encs, task_of, feats, cfg, rng);
    std::array<Eigen::VectorXd, 2> marg{Eigen::VectorXd::Zero(9), Eigen::VectorXd::Zero(9)};
    for (int t = 0; t < 2; ++t) {
        for (const auto& e : km.generate(feats[t].mu, 1000, rng))
            for (int op : e.ops) marg[t][op] += 1.0;
        marg[t] /= marg[t].sum();
    }
    const double tv = 0.5 * (marg[0] - marg[1]).cwiseAbs().sum();
    CHECK(tv > 0.5);
}

TEST_CASE("generation respects the whitelist and needs a trained model") {
    const auto spec = benchmark_space(9);
    KnowledgeModel km(spec, 16, kFeatureDim, 13);
    Rng rng(14);
    const Eigen::VectorXd s = random_feature(kFeatureDim, rng);
    CHECK_THROWS(km.generate(s, 5, rng));
    km.mark_trained();
    for (const auto& e : km.generate(s, 2000, rng)) CHECK_FALSE(validate(e, spec));
    Rng a(15), b(15);
    CHECK(km.generate(s, 50, a) == km.generate(s, 50, b));
}

TEST_CASE("checkpoints reproduce the model") {
    const auto spec = SearchSpaceSpec::standard();
    KnowledgeModel km(spec, 16, kFeatureDim, 16);
    km.mark_trained();
    const auto path = std::filesystem::temp_directory_path() / "kegnas_km_test.ckpt";
    km.save(path.string());
    const auto back = KnowledgeModel::load(path.string(), spec);
    std::filesystem::remove(path);
    CHECK(back.trained());
    CHECK(back.hidden() == 16);
    Rng rng(17);
    for (int t = 0; t < 10; ++t) {
        const auto e = random_architecture(spec, rng);
        const auto s = random_feature(kFeatureDim, rng);
        CHECK(back.log_prob(e, s) == km.log_prob(e, s));
    }
    CHECK_THROWS(KnowledgeModel::load(path.string(), spec));
    CHECK_THROWS(KnowledgeModel::load("/nonexistent/km.ckpt", spec));
}

TEST_CASE("training input is validated") {
    const auto spec = SearchSpaceSpec::standard();
    KnowledgeModel km(spec, 8, kFeatureDim, 18);
    Rng rng(19);
    const std::vector<Encoding> encs{Encoding{{0, 0, 0, 0}, {0, 0, 0, 0}}};
    const std::vector<std::size_t> bad_task{3};
    const std::vector<TaskFeatureDistribution> feats{
        {Eigen::VectorXd::Zero(kFeatureDim), Eigen::VectorXd::Ones(kFeatureDim)}};
    CHECK_THROWS(km.train(encs, bad_task, feats, KnowledgeModelConfig{}, rng));
    const std::vector<Encoding> none;
    const std::vector<std::size_t> no_task;
    CHECK_THROWS(km.train(none, no_task, feats, KnowledgeModelConfig{}, rng));
}
