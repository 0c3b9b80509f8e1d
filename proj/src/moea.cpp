#include "kegnas/moea.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>
#include <unordered_map>

namespace kegnas {

void MoeaConfig::check() const {
    if (pop_size < 2) throw std::invalid_argument("pop_size must be >= 2");
    if (eval_budget < pop_size) throw std::invalid_argument("eval_budget must be >= pop_size");
    if (p_crossover < 0.0 || p_crossover > 1.0) throw std::invalid_argument("p_crossover outside [0, 1]");
    if (p_mutation < 0.0 || p_mutation > 1.0) throw std::invalid_argument("p_mutation outside [0, 1]");
    if (sbx_eta < 0.0 || pm_eta < 0.0) throw std::invalid_argument("distribution indices must be >= 0");
    if (threads == 0) throw std::invalid_argument("threads must be >= 1");
}

std::pair<Encoding, Encoding> sbx_crossover(const Encoding& p1, const Encoding& p2, double eta,
                                            const SearchSpaceSpec& spec, Rng& rng) {
    std::array<double, kEncodingLength> c1{}, c2{};
    for (int k = 0; k < kEncodingLength; ++k) {
        const double x1 = p1.slot(k);
        const double x2 = p2.slot(k);
        c1[k] = x1;
        c2[k] = x2;
        if (spec.slot_upper(k) == spec.slot_lower(k)) continue;
        if (rng.uniform() > 0.5 || std::abs(x1 - x2) <= 1e-14) continue;
        const double lo = std::min(x1, x2);
        const double hi = std::max(x1, x2);
        const double u = rng.uniform();
        const double beta = u <= 0.5 ? std::pow(2.0 * u, 1.0 / (eta + 1.0))
                                     : std::pow(1.0 / (2.0 * (1.0 - u)), 1.0 / (eta + 1.0));
        double a = 0.5 * ((lo + hi) - beta * (hi - lo));
        double b = 0.5 * ((lo + hi) + beta * (hi - lo));
        if (rng.uniform() < 0.5) std::swap(a, b);
        c1[k] = a;
        c2[k] = b;
    }
    return {repair(c1, spec), repair(c2, spec)};
}

Encoding pm_mutation(const Encoding& enc, double eta, double p_m, const SearchSpaceSpec& spec, Rng& rng) {
    std::array<double, kEncodingLength> y{};
    for (int k = 0; k < kEncodingLength; ++k) y[k] = enc.slot(k);
    if (p_m <= 0.0) return repair(y, spec);
    const double mut_pow = 1.0 / (eta + 1.0);
    for (int k = 0; k < kEncodingLength; ++k) {
        if (spec.slot_upper(k) == spec.slot_lower(k)) continue;
        if (rng.uniform() >= p_m) continue;
        const double yl = spec.slot_lower(k) - 0.5;
        const double yu = spec.slot_upper(k) + 0.5;
        const double span = yu - yl;
        const double d1 = (y[k] - yl) / span;
        const double d2 = (yu - y[k]) / span;
        const double u = rng.uniform();
        double dq;
        if (u < 0.5) {
            const double val = 2.0 * u + (1.0 - 2.0 * u) * std::pow(1.0 - d1, eta + 1.0);
            dq = std::pow(val, mut_pow) - 1.0;
        } else {
            const double val = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * std::pow(1.0 - d2, eta + 1.0);
            dq = 1.0 - std::pow(val, mut_pow);
        }
        y[k] = std::clamp(y[k] + dq * span, yl, yu);
    }
    return repair(y, spec);
}

std::vector<Individual> initialize_population(std::span<const Encoding> transfer, std::size_t pop_size,
                                              const SearchSpaceSpec& spec, Rng& rng) {
    std::vector<Individual> pop;
    if (transfer.size() < pop_size) {
        for (const auto& e : transfer) pop.push_back(Individual{e});
        while (pop.size() < pop_size) pop.push_back(Individual{random_architecture(spec, rng)});
    } else {
        std::vector<std::size_t> idx(transfer.size());
        std::iota(idx.begin(), idx.end(), 0);
        // partial Fisher-Yates
        for (std::size_t i = 0; i < pop_size; ++i) {
            const std::size_t j = i + rng.below(idx.size() - i);
            std::swap(idx[i], idx[j]);
            pop.push_back(Individual{transfer[idx[i]]});
        }
    }
    return pop;
}

void assign_rank_and_crowding(std::vector<Individual>& pop) {
    std::vector<ObjectiveVector> objs;
    objs.reserve(pop.size());
    for (const auto& ind : pop) {
        if (!ind.obj) throw std::logic_error("ranking an unevaluated individual");
        objs.push_back(*ind.obj);
    }
    const auto part = fast_nondominated_sort(objs);
    for (std::size_t f = 0; f < part.fronts.size(); ++f) {
        std::vector<ObjectiveVector> front;
        for (std::size_t i : part.fronts[f]) front.push_back(objs[i]);
        const auto cd = crowding_distance(front);
        for (std::size_t k = 0; k < part.fronts[f].size(); ++k) {
            auto& ind = pop[part.fronts[f][k]];
            ind.rank = static_cast<int>(f);
            ind.crowd = cd[k];
        }
    }
}

namespace {

class Evaluator {
public:
    Evaluator(const Oracle& oracle, const MoeaConfig& cfg, RunArchive& archive)
        : oracle_(oracle), cfg_(cfg), archive_(archive) {}

    /// Evaluates `batch` in order. Returns how many leading individuals were
    /// processed before the budget ran out; individuals the oracle does not
    /// know are left without objectives.
    std::size_t evaluate(std::vector<Individual>& batch, std::size_t generation) {
        std::vector<Encoding> canon(batch.size());
        std::vector<Encoding> fresh;
        std::unordered_map<Encoding, std::size_t, EncodingHash> fresh_index;
        std::size_t processed = 0;
        for (; processed < batch.size(); ++processed) {
            canon[processed] = canonicalize(batch[processed].enc);
            const auto& c = canon[processed];
            if (cache_.contains(c) || missed_.contains(c) || fresh_index.contains(c)) continue;
            if (archive_.ledger.size() + fresh.size() >= cfg_.eval_budget) {
                archive_.budget_exhausted = true;
                break;
            }
            fresh_index[c] = fresh.size();
            fresh.push_back(c);
        }

        std::vector<std::optional<ObjectiveVector>> results(fresh.size());
        run_oracle(fresh, results);
        for (std::size_t i = 0; i < fresh.size(); ++i) {
            if (results[i]) {
                cache_[fresh[i]] = *results[i];
                archive_.ledger.push_back(EvaluationRecord{fresh[i], *results[i], generation});
            } else {
                missed_[fresh[i]] = true;
                ++archive_.misses;
            }
        }
        for (std::size_t i = 0; i < processed; ++i) {
            auto it = cache_.find(canon[i]);
            if (it != cache_.end()) batch[i].obj = it->second;
        }
        return processed;
    }

    bool exhausted() const { return archive_.ledger.size() >= cfg_.eval_budget; }

private:
    void run_oracle(const std::vector<Encoding>& todo, std::vector<std::optional<ObjectiveVector>>& out) {
        auto work = [&](std::size_t begin, std::size_t stride, std::exception_ptr& err) {
            for (std::size_t i = begin; i < todo.size(); i += stride) {
                try {
                    out[i] = oracle_(todo[i]);
                } catch (const UnknownArchitecture&) {
                    out[i].reset();
                } catch (...) {
                    err = std::current_exception();
                    return;
                }
            }
        };
        const std::size_t n_threads = std::min(cfg_.threads, std::max<std::size_t>(todo.size(), 1));
        std::vector<std::exception_ptr> errors(n_threads);
        if (n_threads <= 1) {
            work(0, 1, errors[0]);
        } else {
            std::vector<std::thread> pool;
            for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(work, t, n_threads, std::ref(errors[t]));
            for (auto& th : pool) th.join();
        }
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }

    const Oracle& oracle_;
    const MoeaConfig& cfg_;
    RunArchive& archive_;
    std::unordered_map<Encoding, ObjectiveVector, EncodingHash> cache_;
    std::unordered_map<Encoding, bool, EncodingHash> missed_;
};

std::vector<Individual> keep_evaluated(std::vector<Individual> v, std::size_t processed) {
    v.resize(std::min(processed, v.size()));
    std::erase_if(v, [](const Individual& ind) { return !ind.obj; });
    return v;
}

std::size_t tournament(const std::vector<Individual>& pop, Rng& rng) {
    const std::size_t a = rng.below(pop.size());
    const std::size_t b = rng.below(pop.size());
    const auto& x = pop[a];
    const auto& y = pop[b];
    if (x.rank != y.rank) return x.rank < y.rank ? a : b;
    if (x.crowd != y.crowd) return x.crowd > y.crowd ? a : b;
    return rng.uniform() < 0.5 ? a : b;
}

std::vector<Individual> environmental_selection(std::vector<Individual> merged, std::size_t n) {
    assign_rank_and_crowding(merged);
    std::vector<std::size_t> order(merged.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (merged[a].rank != merged[b].rank) return merged[a].rank < merged[b].rank;
        return merged[a].crowd > merged[b].crowd;
    });
    std::vector<Individual> next;
    for (std::size_t i = 0; i < std::min(n, order.size()); ++i) next.push_back(merged[order[i]]);
    // Rank and crowding are reported relative to the surviving population.
    assign_rank_and_crowding(next);
    return next;
}

double ledger_hv(const RunArchive& archive, const ObjectiveVector& ref) {
    std::vector<ObjectiveVector> pts;
    pts.reserve(archive.ledger.size());
    for (const auto& r : archive.ledger) pts.push_back(r.obj);
    return hypervolume_2d(pts, ref);
}

}  // namespace

RunArchive nsga2_run(std::vector<Individual> init, const Oracle& oracle, const MoeaConfig& cfg,
                     const SearchSpaceSpec& spec, const std::optional<ObjectiveVector>& hv_ref) {
    cfg.check();
    for (const auto& ind : init) require_valid(ind.enc, spec);
    RunArchive archive;
    Evaluator evaluator(oracle, cfg, archive);
    Rng rng(cfg.seed);

    auto record = [&](std::size_t g, const std::vector<Individual>& pop) {
        archive.generations.push_back(GenerationRecord{g, pop});
        if (hv_ref) archive.hv_trace.push_back(ledger_hv(archive, *hv_ref));
    };

    std::size_t processed = evaluator.evaluate(init, 0);
    std::vector<Individual> pop = keep_evaluated(std::move(init), processed);
    if (pop.empty()) throw std::runtime_error("no member of the initial population could be evaluated");
    assign_rank_and_crowding(pop);
    record(0, pop);

    bool stop = archive.budget_exhausted;
    for (std::size_t g = 1; g <= cfg.generations && !stop && !evaluator.exhausted(); ++g) {
        std::vector<Individual> offspring;
        offspring.reserve(cfg.pop_size);
        while (offspring.size() < cfg.pop_size) {
            const auto& a = pop[tournament(pop, rng)];
            const auto& b = pop[tournament(pop, rng)];
            Encoding c1 = a.enc, c2 = b.enc;
            if (rng.uniform() < cfg.p_crossover) std::tie(c1, c2) = sbx_crossover(a.enc, b.enc, cfg.sbx_eta, spec, rng);
            offspring.push_back(Individual{pm_mutation(c1, cfg.pm_eta, cfg.p_mutation, spec, rng)});
            if (offspring.size() < cfg.pop_size) {
                offspring.push_back(Individual{pm_mutation(c2, cfg.pm_eta, cfg.p_mutation, spec, rng)});
            }
        }
        processed = evaluator.evaluate(offspring, g);
        if (archive.budget_exhausted) stop = true;
        offspring = keep_evaluated(std::move(offspring), processed);

        std::vector<Individual> merged = std::move(pop);
        merged.insert(merged.end(), offspring.begin(), offspring.end());
        pop = environmental_selection(std::move(merged), cfg.pop_size);
        record(g, pop);
    }

    for (const auto& ind : pop) {
        if (ind.rank == 0) archive.final_front.push_back(ind);
    }
    return archive;
}

}  // namespace kegnas
