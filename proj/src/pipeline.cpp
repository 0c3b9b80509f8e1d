#include "kegnas/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <unordered_set>

namespace kegnas {

namespace fs = std::filesystem;

std::string to_string(Mode mode) {
    switch (mode) {
        case Mode::kegnas: return "kegnas";
        case Mode::rkegnas: return "rkegnas";
        case Mode::nsga2: return "nsga2";
    }
    return "?";
}

Mode parse_mode(const std::string& text) {
    if (text == "kegnas") return Mode::kegnas;
    if (text == "rkegnas") return Mode::rkegnas;
    if (text == "nsga2") return Mode::nsga2;
    throw std::invalid_argument("unknown mode '" + text + "' (expected kegnas, rkegnas or nsga2)");
}

SearchSpaceSpec benchmark_space(int num_ops) {
    SearchSpaceSpec spec = SearchSpaceSpec::with_ops(num_ops);
    std::set<PredVector> shapes;
    for (int a = 0; a <= 1; ++a)
        for (int b = 0; b <= 2; ++b)
            for (int c = 0; c <= 3; ++c) shapes.insert(macro_shape(PredVector{0, a, b, c}));
    shapes.erase(PredVector{0, 1, 0, 3});  // two chains of two
    shapes.erase(PredVector{0, 0, 2, 3});  // a chain of three beside a single vertex
    spec.macro_whitelist = std::move(shapes);
    return spec;
}

// ---------------------------------------------------------------------------
// Training phase

std::string corpus_fingerprint(const TrainingCorpora& corpora, const TrainConfig& cfg) {
    std::ostringstream os;
    for (const auto& t : corpora.tasks) os << t << ',';
    os << '\n';
    for (const auto& s : corpora.d_gp) {
        os << s.enc.to_string() << '\t' << s.task << '\t' << nn::format_double(s.obj.err()) << '\t'
           << nn::format_double(s.obj.params()) << '\n';
    }
    for (const auto& f : corpora.features) {
        for (Eigen::Index i = 0; i < f.mu.size(); ++i) os << nn::format_double(f.mu[i]) << ',';
        for (Eigen::Index i = 0; i < f.sigma.size(); ++i) os << nn::format_double(f.sigma[i]) << ',';
        os << '\n';
    }
    os << "n_s=" << cfg.n_s << " seed=" << cfg.seed << " km=" << cfg.km.hidden << ',' << cfg.km.feature_dim << ','
       << cfg.km.epochs << ',' << cfg.km.batch << ',' << nn::format_double(cfg.km.adam.lr) << " gp=" << cfg.gp.hidden
       << ',' << cfg.gp.arch_dim << ',' << cfg.gp.combined_dim << ',' << cfg.gp.coregion_rank << ','
       << cfg.gp.epochs << ',' << cfg.gp.batch << ',' << cfg.gp.max_conditioning << ','
       << nn::format_double(cfg.gp.adam.lr);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_string(os.str())));
    return buf;
}

namespace {

std::string checkpoint_fingerprint(const std::string& path) {
    try {
        const auto store = nn::ParamStore::load_file(path);
        auto it = store.meta().find("fingerprint");
        return it == store.meta().end() ? "" : it->second;
    } catch (const std::exception&) {
        return "";
    }
}

}  // namespace

TrainOutcome train_phase(const BenchmarkTable& kb, const TrainConfig& cfg, const std::string& out_dir) {
    const TrainingCorpora corpora = build_training_data(kb, cfg.n_s);
    TrainOutcome out;
    out.fingerprint = corpus_fingerprint(corpora, cfg);
    out.corpus_size = corpora.d_km.size();
    fs::create_directories(out_dir);
    out.km_path = (fs::path(out_dir) / "knowledge_model.ckpt").string();
    out.gp_path = (fs::path(out_dir) / "dmogp.ckpt").string();
    if (fs::exists(out.km_path) && fs::exists(out.gp_path) && checkpoint_fingerprint(out.km_path) == out.fingerprint &&
        checkpoint_fingerprint(out.gp_path) == out.fingerprint) {
        out.reused = true;
        return out;
    }

    std::vector<Encoding> encs;
    std::vector<std::size_t> task_of;
    for (const auto& r : corpora.d_km) {
        encs.push_back(r.enc);
        task_of.push_back(r.task);
    }
    KnowledgeModel km(kb.spec(), cfg.km.hidden, cfg.km.feature_dim, derive_seed(cfg.seed, "km-init"));
    Rng km_rng(derive_seed(cfg.seed, "km-train"));
    out.km_loss = km.train(encs, task_of, corpora.features, cfg.km, km_rng).loss_trace;
    km.params().meta()["fingerprint"] = out.fingerprint;
    km.save(out.km_path);

    Dmogp gp(kb.spec(), cfg.gp, derive_seed(cfg.seed, "gp-init"));
    Rng gp_rng(derive_seed(cfg.seed, "gp-train"));
    out.gp_likelihood = gp.fit(corpora.d_gp, corpora.features, cfg.gp, gp_rng).likelihood_trace;
    gp.params().meta()["fingerprint"] = out.fingerprint;
    gp.save(out.gp_path);
    return out;
}

// ---------------------------------------------------------------------------
// Search phase

std::vector<Encoding> select_transfer(std::span<const Encoding> cands, std::span<const ObjectiveVector> predictions) {
    if (cands.empty()) throw std::invalid_argument("no candidate transfer architectures");
    if (cands.size() != predictions.size()) throw std::invalid_argument("one prediction per candidate required");
    std::vector<Encoding> out;
    for (std::size_t i : nondominated_indices(predictions)) out.push_back(cands[i]);
    return out;
}

double normalized_hv(std::span<const ObjectiveVector> points, double params_scale) {
    std::vector<ObjectiveVector> scaled;
    scaled.reserve(points.size());
    for (const auto& p : points) scaled.push_back(ObjectiveVector{p.err(), p.params() / params_scale});
    return hypervolume_2d(scaled, ObjectiveVector{1.0, 1.05});
}

SearchRun search_phase(const TargetTask& task, const SearchConfig& cfg, const KnowledgeModel* km, const Dmogp* gp) {
    using clock = std::chrono::steady_clock;
    if (!(task.params_scale > 0.0)) throw std::invalid_argument("params_scale must be positive");
    cfg.moea.check();
    const auto t0 = clock::now();

    SearchRun run;
    run.config.mode = to_string(cfg.mode);
    run.config.task = task.name;
    run.config.seed = cfg.seed;
    run.config.pop_size = cfg.moea.pop_size;
    run.config.generations = cfg.moea.generations;
    run.config.budget = cfg.moea.eval_budget;
    run.config.n_c = cfg.mode == Mode::nsga2 ? 0 : cfg.n_c;
    run.config.num_ops = task.spec.num_ops;
    run.config.params_scale = task.params_scale;

    if (cfg.mode != Mode::nsga2) {
        if (km == nullptr) throw std::invalid_argument("mode " + run.config.mode + " needs a knowledge-model checkpoint");
        if (cfg.mode == Mode::kegnas && gp == nullptr) {
            throw std::invalid_argument("mode kegnas needs a surrogate checkpoint");
        }
        if (cfg.n_c == 0) throw std::invalid_argument("n_c must be positive");
        const Eigen::VectorXd& s = task.feature.mu;
        Rng gen_rng(derive_seed(cfg.seed, "generate"));
        std::vector<Encoding> cands;
        std::unordered_set<Encoding, EncodingHash> seen;
        for (const auto& e : km->generate(s, cfg.n_c, gen_rng)) {
            const Encoding c = canonicalize(e);
            if (seen.insert(c).second) cands.push_back(c);
        }
        std::vector<Encoding> front;
        if (gp != nullptr) {
            std::vector<ObjectiveVector> preds;
            for (const auto& sc : gp->score_candidates(cands, s)) preds.push_back(sc.predicted);
            front = select_transfer(cands, preds);
        }
        if (cfg.mode == Mode::kegnas) {
            run.transfer = std::move(front);
        } else {
            std::size_t n_l = 0;
            if (gp != nullptr) {
                n_l = front.size();
            } else if (cfg.n_l) {
                n_l = *cfg.n_l;
            } else {
                throw std::invalid_argument("mode rkegnas needs a surrogate checkpoint or an explicit transfer size");
            }
            n_l = std::min(n_l, cands.size());
            Rng pick(derive_seed(cfg.seed, "transfer"));
            for (std::size_t i = 0; i < n_l; ++i) {
                const std::size_t j = i + pick.below(cands.size() - i);
                std::swap(cands[i], cands[j]);
                run.transfer.push_back(cands[i]);
            }
        }
    }
    run.n_l = run.transfer.size();

    Rng init_rng(derive_seed(cfg.seed, "init"));
    auto init = initialize_population(run.transfer, cfg.moea.pop_size, task.spec, init_rng);
    const auto t1 = clock::now();

    MoeaConfig moea = cfg.moea;
    moea.seed = derive_seed(cfg.seed, "moea");
    run.archive = nsga2_run(std::move(init), task.oracle, moea, task.spec,
                            ObjectiveVector{1.0, 1.05 * task.params_scale});
    for (double hv : run.archive.hv_trace) run.hv_trace.push_back(hv / task.params_scale);
    std::vector<ObjectiveVector> front;
    for (const auto& ind : run.archive.final_front) front.push_back(*ind.obj);
    run.final_hv = normalized_hv(front, task.params_scale);
    const auto t2 = clock::now();
    run.timing.pre_search_seconds = std::chrono::duration<double>(t1 - t0).count();
    run.timing.search_seconds = std::chrono::duration<double>(t2 - t1).count();
    return run;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark

std::uint64_t run_seed(std::uint64_t seed, std::size_t i) { return derive_seed(seed, "run" + std::to_string(i)); }

std::string archive_name(const SearchRun& run) {
    return run.config.mode + "_" + std::to_string(run.config.seed) + ".jsonl";
}

SynthBench run_synthetic_benchmark(const SynthBenchConfig& cfg, const std::string& out_dir) {
    if (cfg.runs == 0) throw std::invalid_argument("runs must be positive");
    const SearchSpaceSpec spec = cfg.restricted ? benchmark_space(cfg.num_ops) : SearchSpaceSpec::with_ops(cfg.num_ops);
    const auto family = make_synthetic_family(cfg.seed, cfg.k + 1, cfg.rho, cfg.num_ops, cfg.noise);
    const std::vector<SyntheticTaskSpec> sources(family.begin(), family.end() - 1);
    const SyntheticTaskSpec target = family.back();
    std::vector<std::string> names;
    for (std::size_t i = 0; i < cfg.k; ++i) names.push_back("source" + std::to_string(i));

    SynthBench bench;
    const BenchmarkTable kb = tabulate_synthetic(sources, spec, names);
    bench.space_size = kb.rows(0).size();
    bench.budget = cfg.budget.value_or(
        static_cast<std::size_t>(std::floor(cfg.budget_fraction * static_cast<double>(bench.space_size))));

    fs::create_directories(out_dir);
    const fs::path root(out_dir);
    bench.train = train_phase(kb, cfg.train, (root / "models").string());
    const KnowledgeModel km = KnowledgeModel::load(bench.train.km_path, spec);
    const Dmogp gp = Dmogp::load(bench.train.gp_path, spec);

    double max_cost = 0.0;
    for (int op = 0; op < cfg.num_ops; ++op) max_cost = std::max(max_cost, op_cost_table()[static_cast<std::size_t>(op)]);
    TargetTask task;
    task.name = "target";
    task.spec = spec;
    task.oracle = [target](const Encoding& e) { return evaluate_synthetic(e, target); };
    task.feature = synthetic_task_feature(target);
    task.params_scale = kNumIntermediate * max_cost;

    struct Job {
        std::size_t index;
        SearchConfig cfg;
    };
    std::vector<Job> jobs;
    for (std::size_t i = 0; i < cfg.runs; ++i) {
        for (Mode mode : cfg.modes) {
            SearchConfig sc;
            sc.mode = mode;
            sc.seed = run_seed(cfg.seed, i);
            sc.n_c = cfg.n_c;
            sc.moea.pop_size = cfg.pop_size;
            sc.moea.generations = cfg.generations;
            sc.moea.eval_budget = bench.budget;
            jobs.push_back(Job{jobs.size(), sc});
        }
    }
    bench.runs.resize(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
    std::size_t next = 0;
    std::mutex mu;
    auto worker = [&]() {
        for (;;) {
            std::size_t j;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (next >= jobs.size()) return;
                j = next++;
            }
            try {
                bench.runs[j] = search_phase(task, jobs[j].cfg, &km, &gp);
            } catch (...) {
                errors[j] = std::current_exception();
            }
        }
    };
    const std::size_t n_threads = std::max<std::size_t>(1, std::min(cfg.jobs, jobs.size()));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    fs::create_directories(root / "archives");
    fs::create_directories(root / "timing");
    for (const auto& run : bench.runs) {
        save_archive((root / "archives" / archive_name(run)).string(), run);
        save_timing((root / "timing" / archive_name(run)).string(), run);
    }
    const Report report = make_report(bench.runs);
    std::ofstream summary(root / "summary.jsonl");
    write_report_jsonl(summary, report);
    std::ofstream table(root / "report.txt");
    write_report_table(table, report);
    return bench;
}

}  // namespace kegnas
