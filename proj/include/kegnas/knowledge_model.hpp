#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kegnas/neural.hpp"
#include "kegnas/search_space.hpp"
#include "kegnas/task_feature.hpp"

namespace kegnas {

struct KnowledgeModelConfig {
    int hidden = 64;
    int feature_dim = kFeatureDim;
    std::size_t epochs = 400;
    std::size_t batch = 256;
    nn::AdamConfig adam{};
};

struct KnowledgeTrainResult {
    std::vector<double> loss_trace;  // mean negative log-likelihood per epoch
    std::size_t rejected_steps = 0;
};

/// Task-conditioned autoregressive decoder over architectures. Vertices are
/// emitted in topological order: an operation from a softmax head on the
/// graph state, then exactly one predecessor from a softmax over the vertices
/// already emitted. The new vertex state is a GRU update of the operation
/// one-hot from a gated map of the predecessor state, and the graph state is
/// a second GRU run over the vertex states.
class KnowledgeModel {
public:
    KnowledgeModel(const SearchSpaceSpec& spec, int hidden, int feature_dim, std::uint64_t seed);

    /// Rebuilds a model from a checkpoint written by save().
    static KnowledgeModel load(const std::string& path, const SearchSpaceSpec& spec);
    void save(const std::string& path) const;

    bool trained() const;
    void mark_trained();

    /// Teacher-forced log-likelihood of `enc` (any structurally valid
    /// encoding, whitelist ignored). Rows of `s` are task features.
    double log_prob(const Encoding& enc, const Eigen::VectorXd& s) const;
    std::vector<double> log_prob_batch(std::span<const Encoding> encs, const Eigen::MatrixXd& s) const;

    /// Per-row log-likelihoods (batch x 1) recorded on `tape`.
    nn::Var log_prob_on_tape(nn::Tape& tape, std::span<const Encoding> encs, const Eigen::MatrixXd& s) const;

    /// `count` samples for task feature `s`. Samples rejected by a macro
    /// whitelist are redrawn.
    std::vector<Encoding> generate(const Eigen::VectorXd& s, std::size_t count, Rng& rng) const;

    /// Minimizes the mean negative log-likelihood. Each sample i is paired
    /// with a fresh draw from features[task_of[i]] every epoch.
    KnowledgeTrainResult train(std::span<const Encoding> encs, std::span<const std::size_t> task_of,
                               std::span<const TaskFeatureDistribution> features, const KnowledgeModelConfig& cfg,
                               Rng& rng);

    nn::ParamStore& params() { return store_; }
    const nn::ParamStore& params() const { return store_; }
    const SearchSpaceSpec& spec() const { return spec_; }
    int hidden() const { return hidden_; }
    int feature_dim() const { return feature_dim_; }

private:
    KnowledgeModel(const SearchSpaceSpec& spec, nn::ParamStore store);
    void bind();

    nn::Var initial_state(nn::Tape& tape, const Eigen::MatrixXd& s) const;
    nn::Var op_log_probs(nn::Tape& tape, nn::Var graph) const;
    nn::Var next_graph(nn::Tape& tape, nn::Var graph, nn::Var h_new) const;
    nn::Var pred_log_probs(nn::Tape& tape, const std::vector<nn::Var>& h, nn::Var graph, nn::Var x_op) const;
    nn::Var next_state(nn::Tape& tape, const std::vector<nn::Var>& h, nn::Var x_op,
                       const std::vector<int>& preds) const;
    nn::Var one_hot(nn::Tape& tape, const std::vector<int>& ops) const;

    SearchSpaceSpec spec_;
    int hidden_ = 0;
    int feature_dim_ = 0;
    mutable nn::ParamStore store_;
    nn::Dense init_, op_head_, edge_hidden_, edge_out_, gate_, map_;
    nn::GruCell cell_, graph_cell_;
};

}  // namespace kegnas
