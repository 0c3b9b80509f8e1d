#pragma once

#include <Eigen/Dense>

#include "kegnas/rng.hpp"

namespace kegnas {

inline constexpr int kFeatureDim = 32;

/// Diagonal Gaussian N(mu, sigma^2) over task features.
struct TaskFeatureDistribution {
    Eigen::VectorXd mu;
    Eigen::VectorXd sigma;

    /// Throws std::invalid_argument on wrong dimension, non-finite entries or
    /// non-positive sigma.
    void check(int dim = kFeatureDim) const;

    /// mu + sigma * eps with eps ~ N(0, I), drawn in coordinate order.
    Eigen::VectorXd sample(Rng& rng) const;
};

}  // namespace kegnas
