#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kegnas/pipeline.hpp"
#include "kegnas/vgae.hpp"

namespace fs = std::filesystem;
using namespace kegnas;

namespace {

struct SpaceOptions {
    int ops = 9;
    std::string space = "full";

    SearchSpaceSpec spec() const {
        if (space == "restricted") return benchmark_space(ops);
        if (space == "full") return SearchSpaceSpec::with_ops(ops);
        throw std::invalid_argument("--space must be 'full' or 'restricted'");
    }
};

void add_space_options(CLI::App* cmd, SpaceOptions& opt) {
    cmd->add_option("--ops", opt.ops, "number of candidate operations")->check(CLI::Range(1, 9));
    cmd->add_option("--space", opt.space, "macro space: full or restricted");
}

BenchmarkTable load_kb(const std::string& path, const std::string& features, const SearchSpaceSpec& spec) {
    BenchmarkTable kb = BenchmarkTable::load(path, spec);
    if (!features.empty()) kb.load_features(features);
    return kb;
}

void write_matrix(nlohmann::json& rec, const std::string& key, const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        std::vector<double> row(m.cols());
        for (Eigen::Index j = 0; j < m.cols(); ++j) row[static_cast<std::size_t>(j)] = m(i, j);
        rows.push_back(row);
    }
    rec[key] = rows;
}

std::vector<SearchRun> collect_archives(const std::vector<std::string>& inputs) {
    std::vector<std::string> files;
    for (const auto& in : inputs) {
        if (fs::is_directory(in)) {
            std::vector<std::string> found;
            for (const auto& e : fs::directory_iterator(in)) {
                if (e.path().extension() == ".jsonl") found.push_back(e.path().string());
            }
            std::sort(found.begin(), found.end());
            files.insert(files.end(), found.begin(), found.end());
        } else {
            files.push_back(in);
        }
    }
    std::vector<SearchRun> runs;
    for (const auto& f : files) runs.push_back(load_archive(f));
    return runs;
}

TaskFeatureDistribution target_feature(const BenchmarkTable& table, std::size_t task, const std::string& features) {
    if (!features.empty()) {
        BenchmarkTable copy = table;
        copy.load_features(features);
        return copy.features(task);
    }
    return table.features(task);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Knowledge-aware evolutionary multi-objective graph architecture search"};
    app.require_subcommand(1);

    // build-data
    SpaceOptions bd_space;
    std::string bd_kb, bd_features, bd_out;
    std::size_t bd_ns = 10;
    auto* build = app.add_subcommand("build-data", "build training corpora and task-similarity statistics");
    build->add_option("--kb", bd_kb, "knowledge-base table")->required();
    build->add_option("--features", bd_features, "task-feature file");
    build->add_option("--ns", bd_ns, "number of non-dominated fronts kept per task");
    build->add_option("--out", bd_out, "output directory")->required();
    add_space_options(build, bd_space);

    // train
    SpaceOptions tr_space;
    std::string tr_kb, tr_features, tr_out;
    TrainConfig tr_cfg;
    auto* train = app.add_subcommand("train", "train the knowledge model and the surrogate once");
    train->add_option("--kb", tr_kb, "knowledge-base table")->required();
    train->add_option("--features", tr_features, "task-feature file");
    train->add_option("--ns", tr_cfg.n_s, "number of non-dominated fronts kept per task");
    train->add_option("--seed", tr_cfg.seed, "training seed");
    train->add_option("--km-epochs", tr_cfg.km.epochs, "knowledge-model epochs");
    train->add_option("--gp-epochs", tr_cfg.gp.epochs, "surrogate epochs");
    train->add_option("--out", tr_out, "checkpoint directory")->required();
    add_space_options(train, tr_space);

    // search
    SpaceOptions se_space;
    std::string se_mode = "kegnas", se_kb, se_task, se_features, se_models, se_out;
    std::uint64_t se_seed = 0;
    std::size_t se_runs = 1, se_pop = 25, se_gens = 100, se_nc = 500, se_nl = 0;
    std::size_t se_budget = 0;
    auto* search = app.add_subcommand("search", "search a target task listed in a benchmark table");
    search->add_option("--mode", se_mode, "kegnas, rkegnas or nsga2");
    search->add_option("--seed", se_seed, "base seed");
    search->add_option("--runs", se_runs, "independent runs");
    search->add_option("--pop-size", se_pop, "population size");
    search->add_option("--generations", se_gens, "maximum generations");
    search->add_option("--budget", se_budget, "unique evaluations (default 2% of the task's rows)");
    search->add_option("--nc", se_nc, "candidate transfer architectures");
    search->add_option("--nl", se_nl, "transfer size for rkegnas without a surrogate");
    search->add_option("--kb", se_kb, "table holding the target task")->required();
    search->add_option("--task", se_task, "target task id")->required();
    search->add_option("--features", se_features, "task-feature file with the target's features");
    search->add_option("--models", se_models, "checkpoint directory from 'train'");
    search->add_option("--out", se_out, "archive directory")->required();
    add_space_options(search, se_space);

    // report
    std::vector<std::string> rep_inputs;
    std::string rep_out;
    auto* report = app.add_subcommand("report", "summarize archives");
    report->add_option("archives", rep_inputs, "archive files or directories")->required();
    report->add_option("--out", rep_out, "directory for summary.jsonl and report.txt");

    // bench-synth
    SynthBenchConfig sb;
    std::string sb_out, sb_space = "restricted", sb_modes = "kegnas,rkegnas,nsga2";
    std::size_t sb_budget = 0;
    auto* bench = app.add_subcommand("bench-synth", "end-to-end ablation on a synthetic task family");
    bench->add_option("--seed", sb.seed, "family and run seed");
    bench->add_option("--runs", sb.runs, "paired runs per mode");
    bench->add_option("--k", sb.k, "source tasks");
    bench->add_option("--rho", sb.rho, "inter-task similarity")->check(CLI::Range(0.0, 1.0));
    bench->add_option("--noise", sb.noise, "objective noise");
    bench->add_option("--ops", sb.num_ops, "number of candidate operations")->check(CLI::Range(1, 9));
    bench->add_option("--space", sb_space, "macro space: full or restricted");
    bench->add_option("--budget", sb_budget, "unique evaluations (default 2% of the space)");
    bench->add_option("--pop-size", sb.pop_size, "population size");
    bench->add_option("--generations", sb.generations, "maximum generations");
    bench->add_option("--nc", sb.n_c, "candidate transfer architectures");
    bench->add_option("--ns", sb.train.n_s, "non-dominated fronts kept per source task");
    bench->add_option("--km-epochs", sb.train.km.epochs, "knowledge-model epochs");
    bench->add_option("--gp-epochs", sb.train.gp.epochs, "surrogate epochs");
    bench->add_option("--jobs", sb.jobs, "runs executed concurrently");
    bench->add_option("--modes", sb_modes, "comma-separated modes");
    bench->add_option("--out", sb_out, "output directory")->required();

    // generate
    SpaceOptions ge_space;
    std::string ge_models, ge_kb, ge_task, ge_features;
    std::size_t ge_nc = 500;
    std::uint64_t ge_seed = 0;
    auto* generate = app.add_subcommand("generate", "sample candidate architectures for a task");
    generate->add_option("--models", ge_models, "checkpoint directory")->required();
    generate->add_option("--kb", ge_kb, "table listing the task")->required();
    generate->add_option("--task", ge_task, "task id")->required();
    generate->add_option("--features", ge_features, "task-feature file");
    generate->add_option("--nc", ge_nc, "number of samples");
    generate->add_option("--seed", ge_seed, "sampling seed");
    add_space_options(generate, ge_space);

    // predict
    SpaceOptions pr_space;
    std::string pr_models, pr_kb, pr_task, pr_features, pr_in;
    auto* predict = app.add_subcommand("predict", "surrogate predictions for encodings read from a file");
    predict->add_option("--models", pr_models, "checkpoint directory")->required();
    predict->add_option("--kb", pr_kb, "table listing the task")->required();
    predict->add_option("--task", pr_task, "task id")->required();
    predict->add_option("--features", pr_features, "task-feature file");
    predict->add_option("--in", pr_in, "one encoding per line")->required();
    add_space_options(predict, pr_space);

    // vgae
    std::string vg_graph, vg_task = "task";
    std::uint64_t vg_seed = 0;
    VgaeConfig vg_cfg;
    auto* vgae = app.add_subcommand("vgae", "task features from a graph (first line 'nodes N', then 'u v' edges)");
    vgae->add_option("--graph", vg_graph, "edge-list file")->required();
    vgae->add_option("--task", vg_task, "task id written in the output line");
    vgae->add_option("--epochs", vg_cfg.epochs, "training epochs");
    vgae->add_option("--seed", vg_seed, "seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*build) {
            const SearchSpaceSpec spec = bd_space.spec();
            const BenchmarkTable kb = load_kb(bd_kb, bd_features, spec);
            const TrainingCorpora corpora = build_training_data(kb, bd_ns);
            fs::create_directories(bd_out);
            const BenchmarkTable corpus = corpus_table(corpora, spec);
            corpus.save((fs::path(bd_out) / "corpus.tsv").string());
            corpus.save_features((fs::path(bd_out) / "corpus_features.tsv").string());
            std::ofstream sim(fs::path(bd_out) / "similarity.jsonl");
            nlohmann::json rec{{"type", "similarity"}, {"tasks", kb.tasks()}};
            write_matrix(rec, "pearson_acc", task_similarity_pearson(kb, Metric::acc));
            write_matrix(rec, "pearson_params", task_similarity_pearson(kb, Metric::params));
            Eigen::MatrixXd overlap(kb.num_tasks(), kb.num_tasks());
            for (std::size_t i = 0; i < kb.num_tasks(); ++i)
                for (std::size_t j = 0; j < kb.num_tasks(); ++j)
                    overlap(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = pareto_overlap_ratio(kb, i, j);
            write_matrix(rec, "pareto_overlap", overlap);
            sim << rec.dump() << '\n';
            for (std::size_t t = 0; t < kb.num_tasks(); ++t) {
                std::cout << kb.tasks()[t] << ": " << corpora.per_task[t] << " samples\n";
            }
            std::cout << "corpus size " << corpora.d_km.size() << '\n';
        } else if (*train) {
            const BenchmarkTable kb = load_kb(tr_kb, tr_features, tr_space.spec());
            const TrainOutcome out = train_phase(kb, tr_cfg, tr_out);
            if (!out.reused) {
                std::ofstream log(fs::path(tr_out) / "train_log.jsonl");
                log << nlohmann::json{{"type", "knowledge_model"}, {"loss", out.km_loss}}.dump() << '\n';
                log << nlohmann::json{{"type", "dmogp"}, {"likelihood", out.gp_likelihood}}.dump() << '\n';
            }
            std::cout << (out.reused ? "reused" : "trained") << " checkpoints (fingerprint " << out.fingerprint
                      << ", corpus " << out.corpus_size << ")\n";
        } else if (*search) {
            const SearchSpaceSpec spec = se_space.spec();
            const BenchmarkTable table = BenchmarkTable::load(se_kb, spec);
            const std::size_t task_idx = table.task_index(se_task);
            const Mode mode = parse_mode(se_mode);
            TargetTask task;
            task.name = se_task;
            task.spec = spec;
            task.oracle = [&table, task_idx](const Encoding& e) { return table.evaluate(e, task_idx); };
            double max_params = 0.0;
            for (const auto& r : table.rows(task_idx)) max_params = std::max(max_params, r.params);
            task.params_scale = max_params;
            if (mode != Mode::nsga2) task.feature = target_feature(table, task_idx, se_features);

            std::optional<KnowledgeModel> km;
            std::optional<Dmogp> gp;
            if (mode != Mode::nsga2) {
                if (se_models.empty()) throw std::invalid_argument("--models is required for mode " + se_mode);
                km.emplace(KnowledgeModel::load((fs::path(se_models) / "knowledge_model.ckpt").string(), spec));
                const fs::path gp_path = fs::path(se_models) / "dmogp.ckpt";
                if (mode == Mode::kegnas || fs::exists(gp_path)) gp.emplace(Dmogp::load(gp_path.string(), spec));
            }
            fs::create_directories(fs::path(se_out) / "timing");
            for (std::size_t i = 0; i < se_runs; ++i) {
                SearchConfig cfg;
                cfg.mode = mode;
                cfg.seed = se_runs == 1 ? se_seed : run_seed(se_seed, i);
                cfg.n_c = se_nc;
                if (se_nl > 0) cfg.n_l = se_nl;
                cfg.moea.pop_size = se_pop;
                cfg.moea.generations = se_gens;
                cfg.moea.eval_budget = se_budget > 0 ? se_budget : std::max(se_pop, table.rows(task_idx).size() / 50);
                const SearchRun run = search_phase(task, cfg, km ? &*km : nullptr, gp ? &*gp : nullptr);
                save_archive((fs::path(se_out) / archive_name(run)).string(), run);
                save_timing((fs::path(se_out) / "timing" / archive_name(run)).string(), run);
                std::cout << archive_name(run) << ": HV " << run.final_hv << ", best acc " << best_accuracy(run)
                          << ", " << run.archive.ledger.size() << " evaluations, N_l " << run.n_l << '\n';
            }
        } else if (*report) {
            const auto runs = collect_archives(rep_inputs);
            const Report rep = make_report(runs);
            write_report_table(std::cout, rep);
            if (!rep_out.empty()) {
                fs::create_directories(rep_out);
                std::ofstream summary(fs::path(rep_out) / "summary.jsonl");
                write_report_jsonl(summary, rep);
                std::ofstream table(fs::path(rep_out) / "report.txt");
                write_report_table(table, rep);
            }
        } else if (*bench) {
            if (sb_space != "restricted" && sb_space != "full") {
                throw std::invalid_argument("--space must be 'full' or 'restricted'");
            }
            sb.restricted = sb_space == "restricted";
            if (sb_budget > 0) sb.budget = sb_budget;
            sb.modes.clear();
            std::stringstream ss(sb_modes);
            for (std::string m; std::getline(ss, m, ',');) sb.modes.push_back(parse_mode(m));
            const SynthBench result = run_synthetic_benchmark(sb, sb_out);
            std::cout << "space " << result.space_size << ", budget " << result.budget << ", corpus "
                      << result.train.corpus_size << (result.train.reused ? " (reused models)" : "") << "\n\n";
            std::ifstream table(fs::path(sb_out) / "report.txt");
            std::cout << table.rdbuf();
        } else if (*generate) {
            const SearchSpaceSpec spec = ge_space.spec();
            const BenchmarkTable table = BenchmarkTable::load(ge_kb, spec);
            const auto feature = target_feature(table, table.task_index(ge_task), ge_features);
            const auto km = KnowledgeModel::load((fs::path(ge_models) / "knowledge_model.ckpt").string(), spec);
            Rng rng(ge_seed);
            for (const auto& e : km.generate(feature.mu, ge_nc, rng)) std::cout << e.to_string() << '\n';
        } else if (*predict) {
            const SearchSpaceSpec spec = pr_space.spec();
            const BenchmarkTable table = BenchmarkTable::load(pr_kb, spec);
            const auto feature = target_feature(table, table.task_index(pr_task), pr_features);
            const auto gp = Dmogp::load((fs::path(pr_models) / "dmogp.ckpt").string(), spec);
            std::ifstream in(pr_in);
            if (!in) throw std::runtime_error("cannot open '" + pr_in + "'");
            std::vector<Encoding> encs;
            for (std::string line; std::getline(in, line);) {
                if (!line.empty()) encs.push_back(Encoding::parse(line));
            }
            const auto preds = gp.predict_batch(encs, feature.mu);
            for (std::size_t i = 0; i < encs.size(); ++i) {
                std::cout << nlohmann::json{{"enc", encs[i].to_string()},
                                            {"mean", {preds[i].mean[0], preds[i].mean[1]}},
                                            {"var", {preds[i].cov(0, 0), preds[i].cov(1, 1)}}}
                                 .dump()
                          << '\n';
            }
        } else if (*vgae) {
            std::ifstream in(vg_graph);
            if (!in) throw std::runtime_error("cannot open '" + vg_graph + "'");
            Graph g;
            std::string word;
            if (!(in >> word >> g.num_nodes) || word != "nodes") throw std::runtime_error("expected 'nodes N' header");
            for (int u, v; in >> u >> v;) g.edges.emplace_back(u, v);
            Rng rng(vg_seed);
            const auto res = vgae_task_features(g, vg_cfg, rng);
            BenchmarkTable single({vg_task}, SearchSpaceSpec::standard());
            single.set_features(0, res.dist);
            single.write_features(std::cout);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
