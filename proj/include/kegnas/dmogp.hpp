#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kegnas/neural.hpp"
#include "kegnas/pareto.hpp"
#include "kegnas/search_space.hpp"
#include "kegnas/task_feature.hpp"

namespace kegnas {

/// Objectives modelled by the surrogate: error rate and parameter count.
inline constexpr int kNumObjectives = 2;

struct DmogpConfig {
    int hidden = 32;         // encoder GRU state
    int arch_dim = 32;       // architecture feature b
    int combined_dim = 32;   // combined feature c
    int feature_dim = kFeatureDim;
    int coregion_rank = 2;
    std::size_t epochs = 60;
    /// Inputs per stochastic marginal-likelihood step.
    std::size_t batch = 128;
    /// Inputs kept for the posterior after training.
    std::size_t max_conditioning = 1000;
    nn::AdamConfig adam{5e-3, 0.9, 0.999, 1e-8};
};

struct GpSample {
    Encoding enc;
    std::size_t task = 0;
    ObjectiveVector obj;
};

struct GpPrediction {
    Eigen::VectorXd mean;  // model target space
    Eigen::MatrixXd cov;
};

struct ScoredCandidate {
    Encoding enc;
    ObjectiveVector predicted;  // objective units
    Eigen::VectorXd variance;   // model target space
};

struct DmogpFitResult {
    /// Mean per-target log marginal likelihood of each epoch's minibatches.
    std::vector<double> likelihood_trace;
    std::size_t rejected_steps = 0;
};

/// Maps objectives to GP targets: error is kept as is, the parameter count
/// is log-transformed and standardized per source task. Predictions for a
/// new task are mapped back with the statistics pooled over source tasks.
struct TargetTransform {
    std::vector<double> task_mean;
    std::vector<double> task_std;
    double pooled_mean = 0.0;
    double pooled_std = 1.0;

    static TargetTransform fit(std::span<const GpSample> data, std::size_t num_tasks);
    Eigen::RowVectorXd to_target(const ObjectiveVector& obj, std::size_t task) const;
    ObjectiveVector to_objective(const Eigen::VectorXd& target) const;
};

/// Deep multi-output GP. A bidirectional GRU encoder maps a canonical
/// architecture to f, a dense layer maps (f, s) to z, and the kernel is
/// amp^2 exp(-|z - z'|^2 / (2 l^2)) B with B = L L^T + diag(kappa). Targets
/// are stacked per input (all outputs of input 0, then input 1, ...).
class Dmogp {
public:
    Dmogp(const SearchSpaceSpec& spec, const DmogpConfig& cfg, std::uint64_t seed);

    static Dmogp load(const std::string& path, const SearchSpaceSpec& spec);
    void save(const std::string& path) const;

    /// f(enc) for canonical forms of `encs` (rows).
    Eigen::MatrixXd encode_architectures(std::span<const Encoding> encs) const;
    /// z = g(f(enc), s); rows of `s` pair with `encs`.
    Eigen::MatrixXd embed(std::span<const Encoding> encs, const Eigen::MatrixXd& s) const;
    nn::Var embed_on_tape(nn::Tape& tape, std::span<const Encoding> encs, const Eigen::MatrixXd& s) const;

    double amplitude() const;
    double lengthscale() const;
    Eigen::MatrixXd coregionalization() const;
    Eigen::VectorXd noise() const;
    /// Scalar RBF factor between embedded points.
    double rbf(const Eigen::VectorXd& z1, const Eigen::VectorXd& z2) const;
    Eigen::MatrixXd deep_kernel(const Encoding& e1, const Eigen::VectorXd& s1, const Encoding& e2,
                                const Eigen::VectorXd& s2) const;

    /// -log p(Y | X) for targets Y (rows per input, columns per output).
    /// With `accumulate` the gradient w.r.t. every parameter is added to the
    /// store's gradient buffers.
    double negative_log_marginal_likelihood(std::span<const Encoding> encs, const Eigen::MatrixXd& s,
                                            const Eigen::MatrixXd& y, bool accumulate);

    /// Maximizes the marginal likelihood over minibatches, then conditions on
    /// at most cfg.max_conditioning inputs with s = mu of each task.
    DmogpFitResult fit(std::span<const GpSample> data, std::span<const TaskFeatureDistribution> features,
                       const DmogpConfig& cfg, Rng& rng);

    /// Caches the Cholesky factor for the posterior (targets in model space).
    void condition(std::span<const Encoding> encs, const Eigen::MatrixXd& s, const Eigen::MatrixXd& y);
    bool conditioned() const { return !cond_encs_.empty(); }
    std::size_t conditioning_size() const { return cond_encs_.size(); }
    /// Diagonal jitter that made the cached factorization succeed.
    double jitter() const { return jitter_; }

    GpPrediction predict(const Encoding& enc, const Eigen::VectorXd& s) const;
    std::vector<GpPrediction> predict_batch(std::span<const Encoding> encs, const Eigen::VectorXd& s) const;
    std::vector<ScoredCandidate> score_candidates(std::span<const Encoding> cands, const Eigen::VectorXd& s) const;

    const TargetTransform& transform() const { return transform_; }
    void set_transform(TargetTransform t) { transform_ = std::move(t); }

    nn::ParamStore& params() { return store_; }
    const nn::ParamStore& params() const { return store_; }
    const SearchSpaceSpec& spec() const { return spec_; }

private:
    Dmogp(const SearchSpaceSpec& spec, nn::ParamStore store);
    void bind();
    nn::Var encode_on_tape(nn::Tape& tape, std::span<const Encoding> encs) const;
    Eigen::MatrixXd rbf_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) const;
    Eigen::MatrixXd full_covariance(const Eigen::MatrixXd& r) const;
    std::vector<GpPrediction> predict_unique(std::span<const Encoding> encs, const Eigen::VectorXd& s) const;

    SearchSpaceSpec spec_;
    DmogpConfig cfg_;
    mutable nn::ParamStore store_;
    nn::GruCell fwd_, rev_;
    nn::Dense fwd_gate_, fwd_map_, rev_gate_, rev_map_, readout_, combiner_;
    nn::ParamStore::Id log_amp_ = 0, log_ls_ = 0, chol_ = 0, log_kappa_ = 0, log_noise_ = 0;

    TargetTransform transform_;
    std::vector<Encoding> cond_encs_;
    Eigen::MatrixXd cond_s_, cond_y_, cond_z_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    Eigen::MatrixXd alpha_;  // N x m, C^-1 y reshaped per input
    double jitter_ = 0.0;
};

}  // namespace kegnas
