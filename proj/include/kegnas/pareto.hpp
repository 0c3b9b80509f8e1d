#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <vector>

namespace kegnas {

/// Minimization objectives. Index 0 is the error (1 - accuracy), index 1 the
/// parameter-count proxy.
struct ObjectiveVector {
    std::vector<double> values;

    ObjectiveVector() = default;
    ObjectiveVector(std::initializer_list<double> v) : values(v) {}
    explicit ObjectiveVector(std::vector<double> v) : values(std::move(v)) {}

    std::size_t size() const { return values.size(); }
    double operator[](std::size_t i) const { return values[i]; }
    double& operator[](std::size_t i) { return values[i]; }
    bool operator==(const ObjectiveVector&) const = default;

    double err() const { return values.at(0); }
    double params() const { return values.at(1); }
};

/// a <= b componentwise and a < b somewhere. Throws on dimension mismatch.
bool dominates(const ObjectiveVector& a, const ObjectiveVector& b);

struct FrontPartition {
    std::vector<std::vector<std::size_t>> fronts;  // ascending indices per front
    std::vector<int> rank;                         // 0-based front index, -1 if not materialized
};

/// NSGA-II front partition. With `max_fronts`, only the first fronts are
/// materialized and the remaining points keep rank -1.
FrontPartition fast_nondominated_sort(std::span<const ObjectiveVector> points,
                                      std::optional<std::size_t> max_fronts = std::nullopt);

/// Indices of the first front.
std::vector<std::size_t> nondominated_indices(std::span<const ObjectiveVector> points);

/// Boundary points get +inf. Repeated vectors after their first occurrence
/// get 0 and are ignored when computing neighbour gaps.
std::vector<double> crowding_distance(std::span<const ObjectiveVector> front);

/// Exact dominated area (m = 2) bounded by `ref`; points not strictly better
/// than `ref` in both objectives are ignored.
double hypervolume_2d(std::span<const ObjectiveVector> points, const ObjectiveVector& ref);

}  // namespace kegnas
