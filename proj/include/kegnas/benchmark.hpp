#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "kegnas/moea.hpp"
#include "kegnas/pareto.hpp"
#include "kegnas/search_space.hpp"
#include "kegnas/task_feature.hpp"

namespace kegnas {

struct BenchmarkRow {
    Encoding enc;  // canonical
    double acc = 0.0;
    double params = 0.0;

    ObjectiveVector objectives() const { return ObjectiveVector{1.0 - acc, params}; }
};

/// Tabular benchmark: per task, canonical architecture -> (accuracy, params).
///
/// File format: a header `tasks: id1,id2,...` followed by one row per line,
/// `p0,p1,p2,p3|o0,o1,o2,o3<TAB>task<TAB>acc<TAB>params`. Blank lines and
/// lines starting with '#' are skipped.
class BenchmarkTable {
public:
    BenchmarkTable() = default;
    BenchmarkTable(std::vector<std::string> tasks, SearchSpaceSpec spec);

    static BenchmarkTable load(const std::string& path, const SearchSpaceSpec& spec);
    static BenchmarkTable read(std::istream& is, const SearchSpaceSpec& spec, const std::string& origin = "<stream>");
    void save(const std::string& path) const;
    void write(std::ostream& os) const;

    /// Task-feature file: `task<TAB>mu csv<TAB>sigma csv` per line.
    void load_features(const std::string& path);
    void write_features(std::ostream& os) const;
    void save_features(const std::string& path) const;

    const std::vector<std::string>& tasks() const { return tasks_; }
    std::size_t num_tasks() const { return tasks_.size(); }
    std::size_t task_index(const std::string& id) const;
    const SearchSpaceSpec& spec() const { return spec_; }

    /// Canonicalizes and validates; a repeated architecture is an error.
    void add(std::size_t task, const Encoding& enc, double acc, double params);
    const std::vector<BenchmarkRow>& rows(std::size_t task) const { return rows_.at(task); }
    std::size_t size() const;

    std::optional<ObjectiveVector> lookup(std::size_t task, const Encoding& enc) const;
    /// Throws UnknownArchitecture for a miss.
    ObjectiveVector evaluate(const Encoding& enc, std::size_t task) const;

    bool has_features(std::size_t task) const { return features_.contains(task); }
    const TaskFeatureDistribution& features(std::size_t task) const;
    void set_features(std::size_t task, TaskFeatureDistribution dist);

private:
    std::vector<std::string> tasks_;
    SearchSpaceSpec spec_;
    std::vector<std::vector<BenchmarkRow>> rows_;
    std::vector<std::unordered_map<Encoding, std::size_t, EncodingHash>> index_;
    std::map<std::size_t, TaskFeatureDistribution> features_;
};

/// Closed-form task: err = sigmoid(bias - score(enc)) where the score adds
/// per-operation affinities, a bonus per vertex depth and a term for every
/// edge between two intermediates. Parameter cost is task independent.
struct SyntheticTaskSpec {
    Eigen::VectorXd t;               // task vector
    Eigen::VectorXd affinity;        // per operation
    Eigen::VectorXd depth_weights;   // per depth 1..4
    Eigen::MatrixXd pair_weights;    // (op of vertex, op of predecessor)
    double bias = 0.0;
    double noise = 0.0;
    std::uint64_t noise_seed = 0;
};

/// Relative cost per standard operation (RC lowest, ARMA highest).
const std::vector<double>& op_cost_table();
double params_proxy(const Encoding& enc);

/// `k` tasks whose vectors have pairwise correlation `rho`.
std::vector<SyntheticTaskSpec> make_synthetic_family(std::uint64_t seed, std::size_t k, double rho, int num_ops = 9,
                                                     double noise = 0.0);
ObjectiveVector evaluate_synthetic(const Encoding& enc, const SyntheticTaskSpec& task);
/// Narrow Gaussian around the task vector, standing in for graph features.
TaskFeatureDistribution synthetic_task_feature(const SyntheticTaskSpec& task);

/// Table holding every canonical architecture of `spec` for each task.
BenchmarkTable tabulate_synthetic(const std::vector<SyntheticTaskSpec>& tasks, const SearchSpaceSpec& spec,
                                  const std::vector<std::string>& names);

struct ParetoPoint {
    Encoding enc;
    ObjectiveVector obj;
};

/// Exact non-dominated set over the whole space, ordered by encoding.
/// Refuses spaces with more than `max_size` canonical architectures.
std::vector<ParetoPoint> brute_force_pareto(const std::function<ObjectiveVector(const Encoding&)>& eval,
                                            const SearchSpaceSpec& spec, std::size_t max_size = 100000);
std::vector<ParetoPoint> brute_force_pareto(const BenchmarkTable& table, std::size_t task);

}  // namespace kegnas
