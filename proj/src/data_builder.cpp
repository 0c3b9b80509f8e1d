#include "kegnas/data_builder.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace kegnas {

TrainingCorpora build_training_data(const BenchmarkTable& kb, std::size_t n_s) {
    if (n_s == 0) throw std::invalid_argument("n_s must be positive");
    TrainingCorpora out;
    out.tasks = kb.tasks();
    for (std::size_t t = 0; t < kb.num_tasks(); ++t) {
        if (!kb.has_features(t)) throw std::invalid_argument("task '" + kb.tasks()[t] + "' has no feature distribution");
        out.features.push_back(kb.features(t));
    }
    for (std::size_t t = 0; t < kb.num_tasks(); ++t) {
        const auto& rows = kb.rows(t);
        std::vector<ObjectiveVector> objs;
        objs.reserve(rows.size());
        for (const auto& r : rows) objs.push_back(r.objectives());
        const auto part = fast_nondominated_sort(objs, n_s);
        std::size_t count = 0;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (part.rank[i] < 0) continue;
            out.d_km.push_back(KmRecord{rows[i].enc, t});
            out.d_gp.push_back(GpSample{rows[i].enc, t, objs[i]});
            ++count;
        }
        out.per_task.push_back(count);
    }
    return out;
}

BenchmarkTable corpus_table(const TrainingCorpora& corpora, const SearchSpaceSpec& spec) {
    BenchmarkTable table(corpora.tasks, spec);
    for (const auto& s : corpora.d_gp) table.add(s.task, s.enc, 1.0 - s.obj.err(), s.obj.params());
    for (std::size_t t = 0; t < corpora.features.size(); ++t) table.set_features(t, corpora.features[t]);
    return table;
}

Eigen::MatrixXd task_similarity_pearson(const BenchmarkTable& table, Metric metric) {
    const std::size_t k = table.num_tasks();
    std::vector<Encoding> shared;
    for (const auto& r : table.rows(0)) {
        bool everywhere = true;
        for (std::size_t t = 1; t < k && everywhere; ++t) everywhere = table.lookup(t, r.enc).has_value();
        if (everywhere) shared.push_back(r.enc);
    }
    if (shared.size() < 2) throw std::invalid_argument("tasks share fewer than two architectures");
    Eigen::MatrixXd values(static_cast<Eigen::Index>(shared.size()), static_cast<Eigen::Index>(k));
    for (std::size_t t = 0; t < k; ++t) {
        for (std::size_t i = 0; i < shared.size(); ++i) {
            const auto obj = *table.lookup(t, shared[i]);
            values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) =
                metric == Metric::acc ? 1.0 - obj.err() : obj.params();
        }
    }
    Eigen::MatrixXd centered = values.rowwise() - values.colwise().mean();
    Eigen::VectorXd norms = centered.colwise().norm();
    for (std::size_t t = 0; t < k; ++t) {
        if (!(norms[static_cast<Eigen::Index>(t)] > 0.0)) {
            throw std::invalid_argument("task '" + table.tasks()[t] + "' has zero variance in the chosen metric");
        }
    }
    Eigen::MatrixXd unit = centered.array().rowwise() / norms.transpose().array();
    Eigen::MatrixXd corr = unit.transpose() * unit;
    corr = 0.5 * (corr + corr.transpose());
    corr.diagonal().setOnes();
    return corr.cwiseMax(-1.0).cwiseMin(1.0);
}

double pareto_overlap_ratio(const BenchmarkTable& table, std::size_t i, std::size_t j) {
    std::set<Encoding> a, b;
    for (const auto& p : brute_force_pareto(table, i)) a.insert(p.enc);
    for (const auto& p : brute_force_pareto(table, j)) b.insert(p.enc);
    std::size_t inter = 0;
    for (const auto& e : a) inter += b.contains(e) ? 1 : 0;
    const std::size_t uni = a.size() + b.size() - inter;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace kegnas
