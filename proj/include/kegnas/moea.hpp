#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "kegnas/pareto.hpp"
#include "kegnas/rng.hpp"
#include "kegnas/search_space.hpp"

namespace kegnas {

struct Individual {
    Encoding enc;
    std::optional<ObjectiveVector> obj;
    int rank = -1;
    double crowd = 0.0;
};

struct MoeaConfig {
    std::size_t pop_size = 25;
    std::size_t generations = 100;
    double sbx_eta = 20.0;
    double pm_eta = 20.0;
    double p_crossover = 1.0;
    double p_mutation = 1.0 / kEncodingLength;
    std::size_t eval_budget = 525;
    std::uint64_t seed = 0;
    /// Oracle calls per generation run on this many threads; 1 keeps the
    /// engine single-threaded for oracles that are not reentrant.
    std::size_t threads = 1;

    void check() const;
};

/// Thrown by an oracle for an architecture it has no record of. The engine
/// drops the individual without charging the budget.
class UnknownArchitecture : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Oracle = std::function<ObjectiveVector(const Encoding&)>;

struct EvaluationRecord {
    Encoding enc;  // canonical
    ObjectiveVector obj;
    std::size_t generation = 0;
};

struct GenerationRecord {
    std::size_t generation = 0;
    std::vector<Individual> population;
};

struct RunArchive {
    std::vector<GenerationRecord> generations;
    std::vector<EvaluationRecord> ledger;
    std::vector<Individual> final_front;
    /// HV of the non-dominated set of everything evaluated so far, one entry
    /// per recorded generation (empty when no reference point was given).
    std::vector<double> hv_trace;
    std::size_t misses = 0;
    bool budget_exhausted = false;
};

/// Simulated binary crossover on the real relaxation of each slot followed
/// by round-and-clamp repair; children are always valid.
std::pair<Encoding, Encoding> sbx_crossover(const Encoding& p1, const Encoding& p2, double eta,
                                            const SearchSpaceSpec& spec, Rng& rng);

/// Polynomial mutation per slot with probability `p_m`; each slot's real
/// range is [lo - 0.5, hi + 0.5] so every integer owns an equal-width cell.
Encoding pm_mutation(const Encoding& enc, double eta, double p_m, const SearchSpaceSpec& spec, Rng& rng);

/// Warm-start initialization. Fewer transfer architectures than `pop_size`
/// are topped up with uniform random encodings; otherwise `pop_size` are
/// drawn from the transfer set without replacement.
std::vector<Individual> initialize_population(std::span<const Encoding> transfer, std::size_t pop_size,
                                              const SearchSpaceSpec& spec, Rng& rng);

/// Generational NSGA-II with (mu + lambda) survival. Evaluations are cached
/// by canonical encoding so repeats do not spend budget.
RunArchive nsga2_run(std::vector<Individual> init, const Oracle& oracle, const MoeaConfig& cfg,
                     const SearchSpaceSpec& spec, const std::optional<ObjectiveVector>& hv_ref = std::nullopt);

/// Assigns rank and crowding to every member (all must be evaluated).
void assign_rank_and_crowding(std::vector<Individual>& pop);

}  // namespace kegnas
