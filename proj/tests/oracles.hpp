#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "kegnas/dmogp.hpp"
#include "kegnas/neural.hpp"
#include "kegnas/pareto.hpp"
#include "kegnas/rng.hpp"

namespace oracle {

using kegnas::ObjectiveVector;

inline bool dominates(const ObjectiveVector& a, const ObjectiveVector& b) {
    bool strict = false;
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (a[k] > b[k]) return false;
        if (a[k] < b[k]) strict = true;
    }
    return strict;
}

// Peel fronts by repeated all-pairs domination checks.
inline std::vector<std::vector<std::size_t>> pairwise_fronts(const std::vector<ObjectiveVector>& pts) {
    std::vector<std::vector<std::size_t>> fronts;
    std::vector<bool> done(pts.size(), false);
    std::size_t left = pts.size();
    while (left > 0) {
        std::vector<std::size_t> front;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (done[i]) continue;
            bool dominated = false;
            for (std::size_t j = 0; j < pts.size() && !dominated; ++j) {
                if (!done[j] && j != i && oracle::dominates(pts[j], pts[i])) dominated = true;
            }
            if (!dominated) front.push_back(i);
        }
        for (auto i : front) done[i] = true;
        left -= front.size();
        fronts.push_back(front);
    }
    return fronts;
}

inline std::vector<ObjectiveVector> random_points(kegnas::Rng& rng, std::size_t n, std::size_t m, bool grid) {
    std::vector<ObjectiveVector> pts(n);
    for (auto& p : pts) {
        p.values.resize(m);
        for (auto& v : p.values) v = grid ? static_cast<double>(rng.below(8)) : rng.uniform();
    }
    return pts;
}

struct McEstimate {
    double area;
    double stderr_;
};

inline McEstimate monte_carlo_hv(const std::vector<ObjectiveVector>& pts, const ObjectiveVector& ref,
                                 std::size_t samples, kegnas::Rng& rng) {
    double lo0 = ref[0], lo1 = ref[1];
    for (const auto& p : pts) {
        lo0 = std::min(lo0, p[0]);
        lo1 = std::min(lo1, p[1]);
    }
    const double box = (ref[0] - lo0) * (ref[1] - lo1);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < samples; ++i) {
        const double x = rng.uniform(lo0, ref[0]);
        const double y = rng.uniform(lo1, ref[1]);
        for (const auto& p : pts) {
            if (p[0] <= x && p[1] <= y) {
                ++hits;
                break;
            }
        }
    }
    const double f = static_cast<double>(hits) / static_cast<double>(samples);
    return {box * f, box * std::sqrt(f * (1.0 - f) / static_cast<double>(samples))};
}

struct DensePosterior {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

// Builds the full joint covariance pairwise through deep_kernel and solves it
// with a dense LU.
inline DensePosterior dense_gp_posterior(const kegnas::Dmogp& gp, const std::vector<kegnas::Encoding>& encs,
                                         const Eigen::MatrixXd& s, const Eigen::MatrixXd& y,
                                         const kegnas::Encoding& query, const Eigen::VectorXd& sq) {
    const int m = kegnas::kNumObjectives;
    const auto n = static_cast<Eigen::Index>(encs.size());
    Eigen::MatrixXd c(n * m, n * m);
    Eigen::MatrixXd k(n * m, m);
    for (Eigen::Index a = 0; a < n; ++a) {
        for (Eigen::Index b = 0; b < n; ++b) {
            c.block(a * m, b * m, m, m) =
                gp.deep_kernel(encs[a], s.row(a).transpose(), encs[b], s.row(b).transpose());
        }
        k.block(a * m, 0, m, m) = gp.deep_kernel(encs[a], s.row(a).transpose(), query, sq);
    }
    const Eigen::VectorXd noise = gp.noise();
    for (Eigen::Index a = 0; a < n; ++a)
        for (int i = 0; i < m; ++i) c(a * m + i, a * m + i) += noise[i] + gp.jitter();
    Eigen::VectorXd yv(n * m);
    for (Eigen::Index a = 0; a < n; ++a)
        for (int i = 0; i < m; ++i) yv[a * m + i] = y(a, i);
    const auto lu = c.fullPivLu();
    DensePosterior out;
    out.mean = k.transpose() * lu.solve(yv);
    out.cov = gp.deep_kernel(query, sq, query, sq) - k.transpose() * lu.solve(k);
    return out;
}

// Central differences of f over every scalar of every tensor in `store`,
// compared with the analytic gradient left in the store's buffers by `grad`.
inline double max_param_grad_error(kegnas::nn::ParamStore& store, const std::function<double()>& f,
                                   const std::function<void()>& grad, double h = 1e-5) {
    store.zero_grad();
    grad();
    double worst = 0.0;
    for (std::size_t id = 0; id < store.size(); ++id) {
        const Eigen::MatrixXd analytic = store.grad(id);
        auto& v = store.value(id);
        for (Eigen::Index r = 0; r < v.rows(); ++r) {
            for (Eigen::Index c = 0; c < v.cols(); ++c) {
                const double keep = v(r, c);
                v(r, c) = keep + h;
                const double fp = f();
                v(r, c) = keep - h;
                const double fm = f();
                v(r, c) = keep;
                const double numeric = (fp - fm) / (2.0 * h);
                const double a = analytic(r, c);
                const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a) + std::abs(numeric));
                worst = std::max(worst, err);
            }
        }
    }
    return worst;
}

}  // namespace oracle
