#include "kegnas/knowledge_model.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace kegnas {

using nn::Activation;
using nn::Dense;
using nn::Tape;
using nn::Var;

KnowledgeModel::KnowledgeModel(const SearchSpaceSpec& spec, int hidden, int feature_dim, std::uint64_t seed)
    : spec_(spec), hidden_(hidden), feature_dim_(feature_dim) {
    spec_.check();
    if (hidden <= 0 || feature_dim <= 0) throw std::invalid_argument("knowledge model sizes must be positive");
    Rng rng(seed);
    const int n = spec_.num_ops;
    Dense::create(store_, "km.init", feature_dim, hidden, Activation::tanh, rng);
    Dense::create(store_, "km.op", hidden, n, Activation::none, rng);
    nn::GruCell::create(store_, "km.gru", n, hidden, rng);
    nn::GruCell::create(store_, "km.graph", hidden, hidden, rng);
    Dense::create(store_, "km.edge1", 2 * hidden, hidden, Activation::tanh, rng);
    Dense::create(store_, "km.edge2", hidden, 1, Activation::none, rng);
    Dense::create(store_, "km.gate", hidden, hidden, Activation::sigmoid, rng);
    Dense::create(store_, "km.map", hidden, hidden, Activation::none, rng);
    store_.meta()["kind"] = "knowledge_model";
    store_.meta()["num_ops"] = std::to_string(n);
    store_.meta()["hidden"] = std::to_string(hidden);
    store_.meta()["feature_dim"] = std::to_string(feature_dim);
    store_.meta()["trained"] = "0";
    bind();
}

KnowledgeModel::KnowledgeModel(const SearchSpaceSpec& spec, nn::ParamStore store)
    : spec_(spec), store_(std::move(store)) {
    spec_.check();
    const auto& meta = store_.meta();
    auto get = [&](const std::string& key) {
        auto it = meta.find(key);
        if (it == meta.end()) throw std::runtime_error("knowledge model checkpoint lacks '" + key + "'");
        return it->second;
    };
    if (get("kind") != "knowledge_model") throw std::runtime_error("checkpoint is not a knowledge model");
    if (std::stoi(get("num_ops")) != spec_.num_ops) {
        throw std::runtime_error("knowledge model was trained for " + get("num_ops") + " operations, spec has " +
                                 std::to_string(spec_.num_ops));
    }
    hidden_ = std::stoi(get("hidden"));
    feature_dim_ = std::stoi(get("feature_dim"));
    bind();
}

KnowledgeModel KnowledgeModel::load(const std::string& path, const SearchSpaceSpec& spec) {
    return KnowledgeModel(spec, nn::ParamStore::load_file(path));
}

void KnowledgeModel::save(const std::string& path) const { store_.save_file(path); }

void KnowledgeModel::bind() {
    init_ = Dense::bind(store_, "km.init", Activation::tanh);
    op_head_ = Dense::bind(store_, "km.op", Activation::none);
    cell_ = nn::GruCell::bind(store_, "km.gru");
    graph_cell_ = nn::GruCell::bind(store_, "km.graph");
    edge_hidden_ = Dense::bind(store_, "km.edge1", Activation::tanh);
    edge_out_ = Dense::bind(store_, "km.edge2", Activation::none);
    gate_ = Dense::bind(store_, "km.gate", Activation::sigmoid);
    map_ = Dense::bind(store_, "km.map", Activation::none);
    if (init_.in != feature_dim_ || init_.out != hidden_ || op_head_.out != spec_.num_ops) {
        throw std::runtime_error("knowledge model tensors disagree with metadata");
    }
}

bool KnowledgeModel::trained() const {
    auto it = store_.meta().find("trained");
    return it != store_.meta().end() && it->second == "1";
}

void KnowledgeModel::mark_trained() { store_.meta()["trained"] = "1"; }

Var KnowledgeModel::initial_state(Tape& tape, const Eigen::MatrixXd& s) const {
    if (s.cols() != feature_dim_) {
        throw std::invalid_argument("task feature has " + std::to_string(s.cols()) + " columns, expected " +
                                    std::to_string(feature_dim_));
    }
    return init_(tape, store_, tape.constant(s));
}

Var KnowledgeModel::op_log_probs(Tape& tape, Var graph) const {
    return tape.log_softmax_rows(op_head_(tape, store_, graph));
}

Var KnowledgeModel::next_graph(Tape& tape, Var graph, Var h_new) const {
    return graph_cell_.step(tape, store_, h_new, graph);
}

Var KnowledgeModel::one_hot(Tape& tape, const std::vector<int>& ops) const {
    nn::Matrix x = nn::Matrix::Zero(static_cast<Eigen::Index>(ops.size()), spec_.num_ops);
    for (std::size_t r = 0; r < ops.size(); ++r) x(static_cast<Eigen::Index>(r), ops[r]) = 1.0;
    return tape.constant(std::move(x));
}

Var KnowledgeModel::pred_log_probs(Tape& tape, const std::vector<Var>& h, Var graph, Var x_op) const {
    const Var provisional = cell_.step(tape, store_, x_op, graph);
    Var scores = edge_out_(tape, store_, edge_hidden_(tape, store_, tape.concat_cols(h[0], provisional)));
    for (std::size_t j = 1; j < h.size(); ++j) {
        const Var sj = edge_out_(tape, store_, edge_hidden_(tape, store_, tape.concat_cols(h[j], provisional)));
        scores = tape.concat_cols(scores, sj);
    }
    return tape.log_softmax_rows(scores);
}

Var KnowledgeModel::next_state(Tape& tape, const std::vector<Var>& h, Var x_op, const std::vector<int>& preds) const {
    const Var agg = tape.select_rows(h, preds);
    const Var fun = tape.hadamard(gate_(tape, store_, agg), map_(tape, store_, agg));
    return cell_.step(tape, store_, x_op, fun);
}

Var KnowledgeModel::log_prob_on_tape(Tape& tape, std::span<const Encoding> encs, const Eigen::MatrixXd& s) const {
    if (encs.empty()) throw std::invalid_argument("log_prob of an empty batch");
    if (static_cast<std::size_t>(s.rows()) != encs.size()) {
        throw std::invalid_argument("one task-feature row per encoding required");
    }
    SearchSpaceSpec structural = spec_;
    structural.macro_whitelist.reset();
    for (const auto& e : encs) require_valid(e, structural);

    std::vector<Var> h{initial_state(tape, s)};
    Var graph = h[0];
    Var total{};
    for (int i = 1; i <= kNumIntermediate; ++i) {
        std::vector<int> ops(encs.size()), preds(encs.size());
        for (std::size_t r = 0; r < encs.size(); ++r) {
            ops[r] = encs[r].ops[i - 1];
            preds[r] = encs[r].pred[i - 1];
        }
        const Var op_term = tape.pick(op_log_probs(tape, graph), ops);
        const Var x = one_hot(tape, ops);
        const Var pred_term = tape.pick(pred_log_probs(tape, h, graph, x), preds);
        const Var step = tape.add(op_term, pred_term);
        total = i == 1 ? step : tape.add(total, step);
        if (i < kNumIntermediate) {
            h.push_back(next_state(tape, h, x, preds));
            graph = next_graph(tape, graph, h.back());
        }
    }
    return total;
}

std::vector<double> KnowledgeModel::log_prob_batch(std::span<const Encoding> encs, const Eigen::MatrixXd& s) const {
    Tape tape;
    const Var lp = log_prob_on_tape(tape, encs, s);
    const auto& v = tape.value(lp);
    return std::vector<double>(v.data(), v.data() + v.size());
}

double KnowledgeModel::log_prob(const Encoding& enc, const Eigen::VectorXd& s) const {
    return log_prob_batch(std::span<const Encoding>(&enc, 1), s.transpose())[0];
}

namespace {

int sample_row(const nn::Matrix& logp, Eigen::Index row, Rng& rng) {
    const double u = rng.uniform();
    double cum = 0.0;
    for (Eigen::Index c = 0; c < logp.cols(); ++c) {
        cum += std::exp(logp(row, c));
        if (u < cum) return static_cast<int>(c);
    }
    return static_cast<int>(logp.cols() - 1);
}

}  // namespace

std::vector<Encoding> KnowledgeModel::generate(const Eigen::VectorXd& s, std::size_t count, Rng& rng) const {
    if (!trained()) throw std::logic_error("knowledge model is untrained");
    std::vector<Encoding> out;
    out.reserve(count);
    constexpr int kMaxRounds = 1000;
    for (int round = 0; out.size() < count; ++round) {
        if (round == kMaxRounds) throw std::runtime_error("knowledge model cannot satisfy the macro whitelist");
        const std::size_t need = count - out.size();
        const auto rows = static_cast<Eigen::Index>(need);
        Tape tape;
        std::vector<Var> h{initial_state(tape, s.transpose().replicate(rows, 1))};
        Var graph = h[0];
        std::vector<Encoding> batch(need);
        for (int i = 1; i <= kNumIntermediate; ++i) {
            const nn::Matrix op_lp = tape.value(op_log_probs(tape, graph));
            std::vector<int> ops(need), preds(need);
            for (std::size_t r = 0; r < need; ++r) ops[r] = sample_row(op_lp, static_cast<Eigen::Index>(r), rng);
            const Var x = one_hot(tape, ops);
            const nn::Matrix pred_lp = tape.value(pred_log_probs(tape, h, graph, x));
            for (std::size_t r = 0; r < need; ++r) preds[r] = sample_row(pred_lp, static_cast<Eigen::Index>(r), rng);
            for (std::size_t r = 0; r < need; ++r) {
                batch[r].ops[i - 1] = ops[r];
                batch[r].pred[i - 1] = preds[r];
            }
            if (i < kNumIntermediate) {
                h.push_back(next_state(tape, h, x, preds));
                graph = next_graph(tape, graph, h.back());
            }
        }
        for (const auto& e : batch) {
            if (!validate(e, spec_)) out.push_back(e);
        }
    }
    return out;
}

KnowledgeTrainResult KnowledgeModel::train(std::span<const Encoding> encs, std::span<const std::size_t> task_of,
                                           std::span<const TaskFeatureDistribution> features,
                                           const KnowledgeModelConfig& cfg, Rng& rng) {
    if (encs.empty()) throw std::invalid_argument("knowledge model corpus is empty");
    if (task_of.size() != encs.size()) throw std::invalid_argument("task_of must align with the corpus");
    if (cfg.batch == 0) throw std::invalid_argument("batch size must be positive");
    for (const auto& f : features) f.check(feature_dim_);
    for (std::size_t t : task_of) {
        if (t >= features.size()) throw std::invalid_argument("corpus references a task without features");
    }

    KnowledgeTrainResult result;
    std::vector<std::size_t> order(encs.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t end = std::min(order.size(), start + cfg.batch);
            std::vector<Encoding> batch;
            Eigen::MatrixXd s(static_cast<Eigen::Index>(end - start), feature_dim_);
            for (std::size_t k = start; k < end; ++k) {
                batch.push_back(encs[order[k]]);
                s.row(static_cast<Eigen::Index>(k - start)) = features[task_of[order[k]]].sample(rng).transpose();
            }
            store_.zero_grad();
            Tape tape;
            const Var loss = tape.scale(tape.mean(log_prob_on_tape(tape, batch, s)), -1.0);
            const double value = tape.value(loss)(0, 0);
            if (!std::isfinite(value)) {
                throw std::runtime_error("knowledge model loss is non-finite at epoch " + std::to_string(epoch) +
                                         ", batch starting at " + std::to_string(start));
            }
            tape.backward(loss);
            if (nn::adam_update(store_, cfg.adam) == nn::UpdateStatus::rejected_nonfinite) ++result.rejected_steps;
            total += value * static_cast<double>(end - start);
        }
        result.loss_trace.push_back(total / static_cast<double>(encs.size()));
    }
    mark_trained();
    return result;
}

}  // namespace kegnas
