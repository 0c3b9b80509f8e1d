#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "kegnas/pipeline.hpp"

using namespace kegnas;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("kegnas_pipeline_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

TrainConfig quick_train() {
    TrainConfig cfg;
    cfg.seed = 3;
    cfg.km.hidden = 16;
    cfg.km.epochs = 20;
    cfg.gp.hidden = 8;
    cfg.gp.arch_dim = 8;
    cfg.gp.combined_dim = 8;
    cfg.gp.epochs = 5;
    return cfg;
}

struct Fixture {
    SearchSpaceSpec spec = SearchSpaceSpec::with_ops(3);
    std::vector<SyntheticTaskSpec> family = make_synthetic_family(7, 3, 0.8, 3);
    BenchmarkTable kb;
    TargetTask task;

    Fixture() {
        kb = tabulate_synthetic({family[0], family[1]}, spec, {"s0", "s1"});
        task.name = "target";
        task.spec = spec;
        const auto target = family[2];
        task.oracle = [target](const Encoding& e) { return evaluate_synthetic(e, target); };
        task.feature = synthetic_task_feature(target);
        task.params_scale = 4.0 * op_cost_table()[2];
    }
};

SearchConfig search_cfg(Mode mode, std::uint64_t seed) {
    SearchConfig cfg;
    cfg.mode = mode;
    cfg.seed = seed;
    cfg.n_c = 100;
    cfg.moea.pop_size = 10;
    cfg.moea.generations = 8;
    cfg.moea.eval_budget = 60;
    return cfg;
}

}  // namespace

TEST_CASE("transfer selection keeps the predicted non-dominated set in order") {
    const std::vector<Encoding> cands{Encoding{{0, 0, 0, 0}, {0, 0, 0, 0}}, Encoding{{0, 0, 0, 0}, {1, 0, 0, 0}},
                                      Encoding{{0, 0, 0, 0}, {1, 1, 0, 0}}, Encoding{{0, 0, 0, 0}, {1, 1, 1, 0}}};
    const std::vector<ObjectiveVector> preds{{0.3, 5.0}, {0.2, 6.0}, {0.4, 7.0}, {0.1, 9.0}};
    const auto sel = select_transfer(cands, preds);
    REQUIRE(sel.size() == 3);
    CHECK(sel[0] == cands[0]);
    CHECK(sel[1] == cands[1]);
    CHECK(sel[2] == cands[3]);
    CHECK_THROWS(select_transfer({}, {}));
    CHECK_THROWS(select_transfer(cands, std::span<const ObjectiveVector>(preds).first(2)));
}

TEST_CASE("normalized hypervolume") {
    const std::vector<ObjectiveVector> pts{{0.5, 2.0}};
    CHECK(normalized_hv(pts, 4.0) == doctest::Approx(0.5 * 0.55));
    CHECK(normalized_hv({}, 4.0) == 0.0);
}

TEST_CASE("mode names") {
    for (Mode m : {Mode::kegnas, Mode::rkegnas, Mode::nsga2}) CHECK(parse_mode(to_string(m)) == m);
    CHECK_THROWS_WITH(parse_mode("random"), doctest::Contains("random"));
}

TEST_CASE("the nsga2 mode is the plain engine on a random start") {
    Fixture fx;
    const auto cfg = search_cfg(Mode::nsga2, 11);
    const auto run = search_phase(fx.task, cfg, nullptr, nullptr);
    CHECK(run.transfer.empty());
    CHECK(run.n_l == 0);

    Rng init_rng(derive_seed(11, "init"));
    MoeaConfig moea = cfg.moea;
    moea.seed = derive_seed(11, "moea");
    const auto direct = nsga2_run(initialize_population({}, 10, fx.spec, init_rng), fx.task.oracle, moea, fx.spec,
                                  ObjectiveVector{1.0, 1.05 * fx.task.params_scale});
    REQUIRE(run.archive.ledger.size() == direct.ledger.size());
    for (std::size_t i = 0; i < direct.ledger.size(); ++i) {
        CHECK(run.archive.ledger[i].enc == direct.ledger[i].enc);
        CHECK(run.archive.ledger[i].obj == direct.ledger[i].obj);
    }
    REQUIRE(run.hv_trace.size() == direct.hv_trace.size());
    CHECK(run.hv_trace.back() == doctest::Approx(direct.hv_trace.back() / fx.task.params_scale));
    CHECK(run.final_hv > 0.0);
    CHECK(run.final_hv <= run.hv_trace.back() + 1e-12);
}

TEST_CASE("training once, reusing checkpoints and searching with the models") {
    Fixture fx;
    const auto dir = scratch("train");
    const auto cfg = quick_train();
    const auto first = train_phase(fx.kb, cfg, dir.string());
    CHECK_FALSE(first.reused);
    CHECK(first.km_loss.size() == 20);
    CHECK(first.gp_likelihood.size() == 5);
    CHECK(first.corpus_size > 0);
    const auto again = train_phase(fx.kb, cfg, dir.string());
    CHECK(again.reused);
    CHECK(again.fingerprint == first.fingerprint);
    auto changed = cfg;
    changed.km.epochs = 21;
    CHECK(corpus_fingerprint(build_training_data(fx.kb, cfg.n_s), changed) != first.fingerprint);

    const auto km = KnowledgeModel::load(first.km_path, fx.spec);
    const auto gp = Dmogp::load(first.gp_path, fx.spec);

    const auto keg = search_phase(fx.task, search_cfg(Mode::kegnas, 5), &km, &gp);
    const auto same = search_phase(fx.task, search_cfg(Mode::kegnas, 5), &km, &gp);
    const auto plain = search_phase(fx.task, search_cfg(Mode::nsga2, 5), nullptr, nullptr);
    const auto rand = search_phase(fx.task, search_cfg(Mode::rkegnas, 5), &km, &gp);
    CHECK(keg.n_l > 0);
    CHECK(keg.n_l == keg.transfer.size());
    CHECK(rand.n_l == keg.n_l);
    for (const auto& e : keg.transfer) CHECK(canonicalize(e) == e);

    const auto& gen0 = keg.archive.generations.front().population;
    const std::size_t seeded = std::min<std::size_t>(keg.transfer.size(), 10);
    if (keg.transfer.size() < 10) {
        for (std::size_t i = 0; i < seeded; ++i) CHECK(gen0[i].enc == keg.transfer[i]);
    }
    CHECK(plain.archive.generations.front().population.front().enc != gen0.front().enc);

    REQUIRE(same.archive.ledger.size() == keg.archive.ledger.size());
    for (std::size_t i = 0; i < keg.archive.ledger.size(); ++i) CHECK(same.archive.ledger[i].enc == keg.archive.ledger[i].enc);
    CHECK(same.final_hv == keg.final_hv);

    CHECK_THROWS(search_phase(fx.task, search_cfg(Mode::kegnas, 5), &km, nullptr));
    CHECK_THROWS(search_phase(fx.task, search_cfg(Mode::rkegnas, 5), nullptr, nullptr));
    CHECK_THROWS(search_phase(fx.task, search_cfg(Mode::rkegnas, 5), &km, nullptr));
    auto explicit_nl = search_cfg(Mode::rkegnas, 5);
    explicit_nl.n_l = 4;
    CHECK(search_phase(fx.task, explicit_nl, &km, nullptr).n_l == 4);
    fs::remove_all(dir);
}

TEST_CASE("archives round trip and reports count front members") {
    Fixture fx;
    std::vector<SearchRun> runs;
    for (std::uint64_t seed : {1u, 2u, 3u}) runs.push_back(search_phase(fx.task, search_cfg(Mode::nsga2, seed), nullptr, nullptr));

    std::stringstream ss;
    write_archive(ss, runs[0]);
    const auto back = read_archive(ss);
    CHECK(back.config.mode == "nsga2");
    CHECK(back.config.seed == 1);
    CHECK(back.final_hv == runs[0].final_hv);
    REQUIRE(back.archive.ledger.size() == runs[0].archive.ledger.size());
    CHECK(back.archive.ledger.back().obj == runs[0].archive.ledger.back().obj);
    CHECK(back.archive.final_front.size() == runs[0].archive.final_front.size());
    CHECK(best_accuracy(back) == best_accuracy(runs[0]));

    SearchRun other = runs[1];
    other.config.mode = "kegnas";
    runs.push_back(other);
    const auto rep = make_report(runs);
    REQUIRE(rep.modes.size() == 2);
    CHECK(rep.modes[0].mode == "kegnas");
    CHECK(rep.modes[1].mode == "nsga2");
    CHECK(rep.modes[1].runs == 3);
    std::size_t members = 0;
    for (std::size_t i = 0; i < 3; ++i) members += runs[i].archive.final_front.size();
    CHECK(rep.modes[1].front_members == members);
    std::size_t ops = 0, shapes = 0;
    for (auto c : rep.modes[1].op_frequency) ops += c;
    for (const auto& [k, c] : rep.modes[1].macro_frequency) shapes += c;
    CHECK(ops == 4 * members);
    CHECK(shapes == members);
    CHECK(rep.modes[1].pred_frequency[2].size() == 3);
    REQUIRE(rep.tests.size() == 1);
    CHECK(rep.tests[0].a == "kegnas");
    CHECK_THROWS(make_report({}));
}

TEST_CASE("the command line is deterministic and reports errors") {
    const auto dir = scratch("cli");
    const std::string cli = KEGNAS_CLI;
    auto bench = [&](const std::string& out) {
        const std::string cmd = cli + " bench-synth --ops 3 --space full --k 2 --runs 2 --generations 5 --pop-size 8" +
                                " --km-epochs 10 --gp-epochs 3 --nc 60 --out " + (dir / out).string() + " > /dev/null";
        return std::system(cmd.c_str());
    };
    REQUIRE(bench("a") == 0);
    REQUIRE(bench("b") == 0);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(dir / "a" / "archives")) {
        CHECK(slurp(e.path()) == slurp(dir / "b" / "archives" / e.path().filename()));
        ++files;
    }
    CHECK(files == 6);
    CHECK(slurp(dir / "a" / "summary.jsonl") == slurp(dir / "b" / "summary.jsonl"));

    const std::string bad = cli + " search --kb " + (dir / "missing.tsv").string() + " --task x --out " +
                            (dir / "o").string() + " 2> /dev/null";
    CHECK(std::system(bad.c_str()) != 0);
    CHECK(std::system((cli + " 2> /dev/null > /dev/null").c_str()) != 0);
    fs::remove_all(dir);
}
