#include "kegnas/task_feature.hpp"

#include <stdexcept>
#include <string>

namespace kegnas {

void TaskFeatureDistribution::check(int dim) const {
    if (mu.size() != dim || sigma.size() != dim) {
        throw std::invalid_argument("task feature dimension must be " + std::to_string(dim));
    }
    if (!mu.allFinite() || !sigma.allFinite()) throw std::invalid_argument("task feature has non-finite entries");
    if ((sigma.array() <= 0.0).any()) throw std::invalid_argument("task feature sigma must be positive");
}

Eigen::VectorXd TaskFeatureDistribution::sample(Rng& rng) const {
    Eigen::VectorXd s(mu.size());
    for (Eigen::Index i = 0; i < mu.size(); ++i) s[i] = mu[i] + sigma[i] * rng.normal();
    return s;
}

}  // namespace kegnas
