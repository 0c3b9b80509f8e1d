#include "kegnas/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "kegnas/neural.hpp"

namespace kegnas {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

Eigen::VectorXd parse_csv_vector(const std::string& text) {
    const auto parts = split(text, ',');
    Eigen::VectorXd v(static_cast<Eigen::Index>(parts.size()));
    for (std::size_t i = 0; i < parts.size(); ++i) v[static_cast<Eigen::Index>(i)] = nn::parse_double(trim(parts[i]));
    return v;
}

std::string csv(const Eigen::VectorXd& v) {
    std::string out;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += nn::format_double(v[i]);
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tabular benchmark

BenchmarkTable::BenchmarkTable(std::vector<std::string> tasks, SearchSpaceSpec spec)
    : tasks_(std::move(tasks)), spec_(std::move(spec)) {
    spec_.check();
    if (tasks_.empty()) throw std::invalid_argument("benchmark table needs at least one task");
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
        if (tasks_[i].empty()) throw std::invalid_argument("empty task id");
        for (std::size_t j = 0; j < i; ++j) {
            if (tasks_[i] == tasks_[j]) throw std::invalid_argument("duplicate task id '" + tasks_[i] + "'");
        }
    }
    rows_.resize(tasks_.size());
    index_.resize(tasks_.size());
}

std::size_t BenchmarkTable::task_index(const std::string& id) const {
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
        if (tasks_[i] == id) return i;
    }
    throw std::out_of_range("unknown task '" + id + "'");
}

std::size_t BenchmarkTable::size() const {
    std::size_t n = 0;
    for (const auto& r : rows_) n += r.size();
    return n;
}

void BenchmarkTable::add(std::size_t task, const Encoding& enc, double acc, double params) {
    if (task >= tasks_.size()) throw std::out_of_range("task index out of range");
    require_valid(enc, spec_);
    if (!(acc >= 0.0 && acc <= 1.0)) throw std::invalid_argument("accuracy outside [0, 1]");
    if (!(params > 0.0) || !std::isfinite(params)) throw std::invalid_argument("parameter count must be positive");
    const Encoding canon = canonicalize(enc);
    if (index_[task].contains(canon)) {
        throw std::invalid_argument("duplicate architecture " + canon.to_string() + " for task '" + tasks_[task] + "'");
    }
    index_[task][canon] = rows_[task].size();
    rows_[task].push_back(BenchmarkRow{canon, acc, params});
}

std::optional<ObjectiveVector> BenchmarkTable::lookup(std::size_t task, const Encoding& enc) const {
    const auto& idx = index_.at(task);
    auto it = idx.find(canonicalize(enc));
    if (it == idx.end()) return std::nullopt;
    return rows_[task][it->second].objectives();
}

ObjectiveVector BenchmarkTable::evaluate(const Encoding& enc, std::size_t task) const {
    auto obj = lookup(task, enc);
    if (!obj) {
        throw UnknownArchitecture("architecture " + canonicalize(enc).to_string() + " is not listed for task '" +
                                  tasks_.at(task) + "'");
    }
    return *obj;
}

const TaskFeatureDistribution& BenchmarkTable::features(std::size_t task) const {
    auto it = features_.find(task);
    if (it == features_.end()) throw std::out_of_range("task '" + tasks_.at(task) + "' has no feature distribution");
    return it->second;
}

void BenchmarkTable::set_features(std::size_t task, TaskFeatureDistribution dist) {
    if (task >= tasks_.size()) throw std::out_of_range("task index out of range");
    dist.check(static_cast<int>(dist.mu.size()));
    features_[task] = std::move(dist);
}

BenchmarkTable BenchmarkTable::read(std::istream& is, const SearchSpaceSpec& spec, const std::string& origin) {
    std::string line;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& msg) {
        throw std::runtime_error(origin + ":" + std::to_string(line_no) + ": " + msg);
    };
    std::optional<BenchmarkTable> table;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty() || line[0] == '#') continue;
        if (!table) {
            if (!line.starts_with("tasks:")) fail("expected header 'tasks: id1,id2,...'");
            std::vector<std::string> ids;
            for (const auto& part : split(line.substr(6), ',')) {
                const std::string id = trim(part);
                if (!id.empty()) ids.push_back(id);
            }
            if (ids.empty()) fail("task list is empty");
            try {
                table.emplace(std::move(ids), spec);
            } catch (const std::exception& e) {
                fail(e.what());
            }
            continue;
        }
        const auto fields = split(line, '\t');
        if (fields.size() != 4) fail("expected 4 tab-separated fields, found " + std::to_string(fields.size()));
        try {
            const Encoding enc = Encoding::parse(fields[0]);
            const std::size_t task = table->task_index(fields[1]);
            table->add(task, enc, nn::parse_double(fields[2]), nn::parse_double(fields[3]));
        } catch (const std::exception& e) {
            fail(e.what());
        }
    }
    if (!table) throw std::runtime_error(origin + ": missing 'tasks:' header");
    return std::move(*table);
}

BenchmarkTable BenchmarkTable::load(const std::string& path, const SearchSpaceSpec& spec) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open benchmark table '" + path + "'");
    return read(in, spec, path);
}

void BenchmarkTable::write(std::ostream& os) const {
    os << "tasks: ";
    for (std::size_t i = 0; i < tasks_.size(); ++i) os << (i ? "," : "") << tasks_[i];
    os << '\n';
    for (std::size_t t = 0; t < tasks_.size(); ++t) {
        for (const auto& r : rows_[t]) {
            os << r.enc.to_string() << '\t' << tasks_[t] << '\t' << nn::format_double(r.acc) << '\t'
               << nn::format_double(r.params) << '\n';
        }
    }
}

void BenchmarkTable::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    write(out);
}

void BenchmarkTable::load_features(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open task-feature file '" + path + "'");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty() || line[0] == '#') continue;
        const auto fields = split(line, '\t');
        try {
            if (fields.size() != 3) throw std::runtime_error("expected task, mu and sigma fields");
            TaskFeatureDistribution d{parse_csv_vector(fields[1]), parse_csv_vector(fields[2])};
            if (d.mu.size() != d.sigma.size()) throw std::runtime_error("mu and sigma lengths differ");
            set_features(task_index(fields[0]), std::move(d));
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

void BenchmarkTable::write_features(std::ostream& os) const {
    for (const auto& [task, d] : features_) os << tasks_[task] << '\t' << csv(d.mu) << '\t' << csv(d.sigma) << '\n';
}

void BenchmarkTable::save_features(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    write_features(out);
}

// ---------------------------------------------------------------------------
// Synthetic tasks

const std::vector<double>& op_cost_table() {
    // GCN, GraphSAGE, GAT, GIN, ChebNet, ARMA, k-GNN, RC, FC
    static const std::vector<double> costs{0.17, 0.33, 0.18, 0.20, 0.50, 0.66, 0.34, 0.01, 0.09};
    return costs;
}

double params_proxy(const Encoding& enc) {
    const auto& costs = op_cost_table();
    OpVector ops = enc.ops;
    std::sort(ops.begin(), ops.end());
    double total = 0.0;
    for (int op : ops) total += costs.at(static_cast<std::size_t>(op));
    return total;
}

std::vector<SyntheticTaskSpec> make_synthetic_family(std::uint64_t seed, std::size_t k, double rho, int num_ops,
                                                     double noise) {
    if (k < 2) throw std::invalid_argument("a task family needs at least two tasks");
    if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("similarity must lie in [0, 1]");
    if (num_ops < 1 || num_ops > static_cast<int>(op_cost_table().size())) {
        throw std::invalid_argument("synthetic tasks support 1..9 operations");
    }
    if (noise < 0.0) throw std::invalid_argument("noise must be non-negative");
    const int d = kFeatureDim;
    const double root_d = std::sqrt(static_cast<double>(d));

    Rng proj_rng(derive_seed(seed, "projection"));
    auto normal_matrix = [](Rng& r, int rows, int cols) {
        Eigen::MatrixXd m(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) m(i, j) = r.normal();
        return m;
    };
    const Eigen::MatrixXd p_aff = normal_matrix(proj_rng, num_ops, d);
    const Eigen::MatrixXd p_depth = normal_matrix(proj_rng, kNumIntermediate, d);
    const Eigen::MatrixXd p_pair = normal_matrix(proj_rng, num_ops * num_ops, d);

    Rng task_rng(derive_seed(seed, "tasks"));
    Eigen::VectorXd common(d);
    for (int i = 0; i < d; ++i) common[i] = task_rng.normal();
    std::vector<SyntheticTaskSpec> out;
    for (std::size_t t = 0; t < k; ++t) {
        SyntheticTaskSpec spec;
        spec.t.resize(d);
        for (int i = 0; i < d; ++i) spec.t[i] = std::sqrt(rho) * common[i] + std::sqrt(1.0 - rho) * task_rng.normal();
        spec.affinity = 0.4 * p_aff * spec.t / root_d;
        spec.depth_weights = 0.25 * p_depth * spec.t / root_d;
        const Eigen::VectorXd pair = 0.25 * p_pair * spec.t / root_d;
        spec.pair_weights = Eigen::Map<const Eigen::MatrixXd>(pair.data(), num_ops, num_ops);
        spec.bias = -1.0;
        spec.noise = noise;
        spec.noise_seed = derive_seed(seed, "noise" + std::to_string(t));
        out.push_back(std::move(spec));
    }
    return out;
}

ObjectiveVector evaluate_synthetic(const Encoding& raw, const SyntheticTaskSpec& task) {
    const Encoding enc = canonicalize(raw);
    const auto depths = vertex_depths(enc);
    double score = 0.0;
    for (int i = 0; i < kNumIntermediate; ++i) {
        const int op = enc.ops[i];
        if (op < 0 || op >= task.affinity.size()) throw std::invalid_argument("operation outside the task's space");
        score += task.affinity[op];
        score += task.depth_weights[depths[i] - 1];
        if (enc.pred[i] > 0) score += task.pair_weights(op, enc.ops[enc.pred[i] - 1]);
    }
    double logit = task.bias - score;
    if (task.noise > 0.0) {
        Rng r(mix64(task.noise_seed ^ EncodingHash{}(enc)));
        logit += task.noise * r.normal();
    }
    const double err = 1.0 / (1.0 + std::exp(-logit));
    return ObjectiveVector{err, params_proxy(enc)};
}

TaskFeatureDistribution synthetic_task_feature(const SyntheticTaskSpec& task) {
    return TaskFeatureDistribution{task.t, Eigen::VectorXd::Constant(task.t.size(), 0.1)};
}

BenchmarkTable tabulate_synthetic(const std::vector<SyntheticTaskSpec>& tasks, const SearchSpaceSpec& spec,
                                  const std::vector<std::string>& names) {
    if (names.size() != tasks.size()) throw std::invalid_argument("one name per synthetic task required");
    BenchmarkTable table(names, spec);
    const auto all = enumerate(spec);
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        for (const auto& e : all) {
            const auto obj = evaluate_synthetic(e, tasks[t]);
            table.add(t, e, 1.0 - obj.err(), obj.params());
        }
        table.set_features(t, synthetic_task_feature(tasks[t]));
    }
    return table;
}

// ---------------------------------------------------------------------------
// Ground-truth fronts

namespace {

std::vector<ParetoPoint> front_of(std::vector<ParetoPoint> pts) {
    std::vector<ObjectiveVector> objs;
    objs.reserve(pts.size());
    for (const auto& p : pts) objs.push_back(p.obj);
    std::vector<ParetoPoint> out;
    for (std::size_t i : nondominated_indices(objs)) out.push_back(pts[i]);
    std::sort(out.begin(), out.end(), [](const ParetoPoint& a, const ParetoPoint& b) { return a.enc < b.enc; });
    return out;
}

}  // namespace

std::vector<ParetoPoint> brute_force_pareto(const std::function<ObjectiveVector(const Encoding&)>& eval,
                                            const SearchSpaceSpec& spec, std::size_t max_size) {
    const auto all = enumerate(spec);
    if (all.size() > max_size) {
        throw std::runtime_error("space has " + std::to_string(all.size()) +
                                 " architectures, more than the enumeration limit " + std::to_string(max_size));
    }
    std::vector<ParetoPoint> pts;
    pts.reserve(all.size());
    for (const auto& e : all) pts.push_back(ParetoPoint{e, eval(e)});
    return front_of(std::move(pts));
}

std::vector<ParetoPoint> brute_force_pareto(const BenchmarkTable& table, std::size_t task) {
    std::vector<ParetoPoint> pts;
    for (const auto& r : table.rows(task)) pts.push_back(ParetoPoint{r.enc, r.objectives()});
    return front_of(std::move(pts));
}

}  // namespace kegnas
