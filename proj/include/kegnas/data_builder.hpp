#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "kegnas/benchmark.hpp"
#include "kegnas/dmogp.hpp"

namespace kegnas {

struct KmRecord {
    Encoding enc;
    std::size_t task = 0;
};

struct TrainingCorpora {
    std::vector<std::string> tasks;
    std::vector<KmRecord> d_km;
    std::vector<GpSample> d_gp;
    std::vector<std::size_t> per_task;  // samples contributed by each task
    std::vector<TaskFeatureDistribution> features;
};

/// For every task, the architectures in the first `n_s` non-dominated fronts
/// become one sample each in both corpora, in table order.
TrainingCorpora build_training_data(const BenchmarkTable& kb, std::size_t n_s = 10);

/// Corpus rows as a benchmark table (features attached).
BenchmarkTable corpus_table(const TrainingCorpora& corpora, const SearchSpaceSpec& spec);

enum class Metric { acc, params };

/// Pearson correlation between tasks over the architectures every task lists.
Eigen::MatrixXd task_similarity_pearson(const BenchmarkTable& table, Metric metric);

/// Jaccard overlap |P_i & P_j| / |P_i | P_j| of the exact Pareto sets.
double pareto_overlap_ratio(const BenchmarkTable& table, std::size_t i, std::size_t j);

}  // namespace kegnas
