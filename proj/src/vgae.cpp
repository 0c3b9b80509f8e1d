#include "kegnas/vgae.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <set>
#include <stdexcept>

namespace kegnas {

using nn::Matrix;
using nn::Tape;
using nn::Var;

void Graph::check() const {
    if (num_nodes <= 0) throw std::invalid_argument("graph has no nodes");
    if (edges.empty()) throw std::invalid_argument("graph has no edges");
    for (const auto& [u, v] : edges) {
        if (u < 0 || v < 0 || u >= num_nodes || v >= num_nodes) throw std::invalid_argument("edge endpoint out of range");
    }
    if (features.size() != 0 && features.rows() != num_nodes) {
        throw std::invalid_argument("one feature row per node required");
    }
}

Eigen::MatrixXd Graph::feature_matrix() const {
    if (features.size() != 0) return features;
    return Eigen::MatrixXd::Identity(num_nodes, num_nodes);
}

namespace {

/// D^-1/2 (A + I) D^-1/2
std::shared_ptr<const nn::SparseMatrix> normalized_adjacency(const Graph& g) {
    std::set<std::pair<int, int>> links;
    for (const auto& [u, v] : g.edges) {
        if (u == v) continue;
        links.emplace(u, v);
        links.emplace(v, u);
    }
    for (int i = 0; i < g.num_nodes; ++i) links.emplace(i, i);
    std::vector<double> deg(static_cast<std::size_t>(g.num_nodes), 0.0);
    for (const auto& [u, v] : links) deg[static_cast<std::size_t>(u)] += 1.0;
    std::vector<Eigen::Triplet<double>> trip;
    for (const auto& [u, v] : links) {
        trip.emplace_back(u, v, 1.0 / std::sqrt(deg[static_cast<std::size_t>(u)] * deg[static_cast<std::size_t>(v)]));
    }
    auto a = std::make_shared<nn::SparseMatrix>(g.num_nodes, g.num_nodes);
    a->setFromTriplets(trip.begin(), trip.end());
    return a;
}

}  // namespace

VgaeResult vgae_task_features(const Graph& graph, const VgaeConfig& cfg, Rng& rng) {
    graph.check();
    if (cfg.dim <= 0) throw std::invalid_argument("latent dimension must be positive");
    const auto adj = normalized_adjacency(graph);
    const Matrix x = graph.feature_matrix();
    const int n = graph.num_nodes;

    std::set<std::pair<int, int>> edge_set;
    std::vector<std::pair<int, int>> pos;
    for (auto [u, v] : graph.edges) {
        if (u == v) continue;
        if (u > v) std::swap(u, v);
        if (edge_set.emplace(u, v).second) pos.emplace_back(u, v);
    }
    if (pos.empty()) throw std::invalid_argument("graph has no edges between distinct nodes");

    nn::ParamStore store;
    const auto w_mu = store.add("vgae.w_mu", nn::glorot(static_cast<int>(x.cols()), cfg.dim, rng));
    const auto w_sigma = store.add("vgae.w_logsigma", nn::glorot(static_cast<int>(x.cols()), cfg.dim, rng));
    // A X is constant across epochs.
    const Matrix ax = (*adj) * x;

    VgaeResult result;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> src, dst, nsrc, ndst;
        for (const auto& [u, v] : pos) {
            src.push_back(u);
            dst.push_back(v);
            int a, b;
            do {
                a = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
                b = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
            } while (a == b && n > 1);
            nsrc.push_back(a);
            ndst.push_back(b);
        }
        Matrix eps(n, cfg.dim);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < cfg.dim; ++j) eps(i, j) = rng.normal();

        store.zero_grad();
        Tape t;
        const Var axv = t.constant(ax);
        const Var mu = t.matmul(axv, t.param(store, w_mu));
        const Var log_sigma = t.matmul(axv, t.param(store, w_sigma));
        const Var sigma = t.exp(log_sigma);
        const Var z = t.add(mu, t.hadamard(sigma, t.constant(eps)));
        const Var pos_logit = t.row_sum(t.hadamard(t.gather_rows(z, src), t.gather_rows(z, dst)));
        const Var neg_logit = t.row_sum(t.hadamard(t.gather_rows(z, nsrc), t.gather_rows(z, ndst)));
        const Var recon = t.add(t.mean(t.log_sigmoid(pos_logit)), t.mean(t.log_sigmoid(t.scale(neg_logit, -1.0))));
        // KL(q || N(0, I)) averaged over nodes
        const Var kl_terms = t.sub(t.add(t.square(mu), t.square(sigma)), t.add_scalar(t.scale(log_sigma, 2.0), 1.0));
        const Var kl = t.scale(t.sum(kl_terms), 0.5 / (static_cast<double>(n) * static_cast<double>(n)));
        const Var loss = t.add(t.scale(recon, -1.0), kl);
        const double value = t.value(loss)(0, 0);
        if (!std::isfinite(value)) throw std::runtime_error("graph autoencoder loss is non-finite");
        t.backward(loss);
        nn::adam_update(store, cfg.adam);
        result.loss_trace.push_back(value);
    }

    result.node_mu = ax * store.value(w_mu);
    result.node_sigma = (ax * store.value(w_sigma)).array().exp();
    result.dist.mu = result.node_mu.colwise().mean().transpose();
    result.dist.sigma = result.node_sigma.array().square().colwise().mean().sqrt().transpose();
    return result;
}

double reconstruction_auc(const Eigen::MatrixXd& mu, const std::vector<std::pair<int, int>>& pos,
                          const std::vector<std::pair<int, int>>& neg) {
    if (pos.empty() || neg.empty()) throw std::invalid_argument("AUC needs positive and negative pairs");
    auto score = [&](const std::pair<int, int>& e) { return mu.row(e.first).dot(mu.row(e.second)); };
    double wins = 0.0;
    for (const auto& p : pos) {
        const double sp = score(p);
        for (const auto& q : neg) {
            const double sq = score(q);
            wins += sp > sq ? 1.0 : (sp == sq ? 0.5 : 0.0);
        }
    }
    return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

}  // namespace kegnas
