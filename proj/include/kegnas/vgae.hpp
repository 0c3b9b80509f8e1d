#pragma once

#include <Eigen/Dense>

#include <utility>
#include <vector>

#include "kegnas/neural.hpp"
#include "kegnas/rng.hpp"
#include "kegnas/task_feature.hpp"

namespace kegnas {

/// Undirected graph with dense node features (identity when empty).
struct Graph {
    int num_nodes = 0;
    std::vector<std::pair<int, int>> edges;
    Eigen::MatrixXd features;

    void check() const;
    Eigen::MatrixXd feature_matrix() const;
};

struct VgaeConfig {
    int dim = kFeatureDim;
    std::size_t epochs = 200;
    nn::AdamConfig adam{1e-2, 0.9, 0.999, 1e-8};
};

struct VgaeResult {
    TaskFeatureDistribution dist;
    Eigen::MatrixXd node_mu;
    Eigen::MatrixXd node_sigma;
    std::vector<double> loss_trace;
};

/// One-layer graph-convolutional variational autoencoder trained on edge
/// reconstruction (inner-product decoder, one sampled non-edge per edge)
/// plus the KL term. The task distribution pools node means by averaging
/// and node standard deviations by root mean square.
VgaeResult vgae_task_features(const Graph& graph, const VgaeConfig& cfg, Rng& rng);

/// Area under the ROC curve of sigmoid(mu_i . mu_j) separating `pos` from
/// `neg` pairs (ties count one half).
double reconstruction_auc(const Eigen::MatrixXd& mu, const std::vector<std::pair<int, int>>& pos,
                          const std::vector<std::pair<int, int>>& neg);

}  // namespace kegnas
