#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kegnas/archive.hpp"
#include "kegnas/benchmark.hpp"
#include "kegnas/data_builder.hpp"
#include "kegnas/dmogp.hpp"
#include "kegnas/knowledge_model.hpp"
#include "kegnas/moea.hpp"

namespace kegnas {

enum class Mode { kegnas, rkegnas, nsga2 };

std::string to_string(Mode mode);
Mode parse_mode(const std::string& text);

/// Nine operations restricted to the macro shapes that keep the space near
/// the size of common tabular graph benchmarks (26037 classes).
SearchSpaceSpec benchmark_space(int num_ops = 9);

struct TrainConfig {
    std::size_t n_s = 10;
    std::uint64_t seed = 0;
    KnowledgeModelConfig km{};
    DmogpConfig gp{};
};

struct TrainOutcome {
    std::string km_path;
    std::string gp_path;
    std::string fingerprint;
    bool reused = false;
    std::size_t corpus_size = 0;
    std::vector<double> km_loss;
    std::vector<double> gp_likelihood;
};

/// Trains both models once per (knowledge base, configuration). Checkpoints
/// in `out_dir` whose fingerprint matches are reused as they are.
TrainOutcome train_phase(const BenchmarkTable& kb, const TrainConfig& cfg, const std::string& out_dir);

/// Fingerprint of the corpus and training configuration.
std::string corpus_fingerprint(const TrainingCorpora& corpora, const TrainConfig& cfg);

struct TargetTask {
    std::string name;
    SearchSpaceSpec spec;
    Oracle oracle;
    TaskFeatureDistribution feature;
    /// Parameter counts are divided by this before computing HV.
    double params_scale = 1.0;
};

struct SearchConfig {
    Mode mode = Mode::kegnas;
    std::uint64_t seed = 0;
    MoeaConfig moea{};
    std::size_t n_c = 500;
    /// Transfer-set size for rkegnas when no surrogate is available.
    std::optional<std::size_t> n_l;
};

/// Candidates whose predicted objectives are non-dominated, in input order.
std::vector<Encoding> select_transfer(std::span<const Encoding> cands, std::span<const ObjectiveVector> predictions);

/// HV of (err, params / params_scale) against the reference (1, 1.05).
double normalized_hv(std::span<const ObjectiveVector> points, double params_scale);

/// One search on the target task. kegnas needs both models, rkegnas the
/// knowledge model (and the surrogate or cfg.n_l for the transfer size),
/// nsga2 neither.
SearchRun search_phase(const TargetTask& task, const SearchConfig& cfg, const KnowledgeModel* km, const Dmogp* gp);

struct SynthBenchConfig {
    std::uint64_t seed = 0;
    std::size_t k = 7;
    double rho = 0.8;
    int num_ops = 9;
    bool restricted = true;
    double noise = 0.0;
    std::size_t runs = 20;
    std::size_t n_c = 500;
    /// Evaluation budget as a fraction of the space when `budget` is unset.
    double budget_fraction = 0.02;
    std::optional<std::size_t> budget;
    std::size_t pop_size = 25;
    std::size_t generations = 100;
    std::size_t jobs = 1;
    std::vector<Mode> modes{Mode::kegnas, Mode::rkegnas, Mode::nsga2};
    TrainConfig train{};
};

struct SynthBench {
    TrainOutcome train;
    std::vector<SearchRun> runs;  // ordered by seed, then mode
    std::size_t space_size = 0;
    std::size_t budget = 0;
};

/// Synthetic family of k source tasks plus one target task with pairwise
/// similarity rho: tabulate the sources, train, search every (seed, mode)
/// and write archives and a report to `out_dir`.
SynthBench run_synthetic_benchmark(const SynthBenchConfig& cfg, const std::string& out_dir);

/// Seed of the i-th run of a benchmark seeded with `seed`.
std::uint64_t run_seed(std::uint64_t seed, std::size_t i);

std::string archive_name(const SearchRun& run);

}  // namespace kegnas
