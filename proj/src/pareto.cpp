#include "kegnas/pareto.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace kegnas {

bool dominates(const ObjectiveVector& a, const ObjectiveVector& b) {
    if (a.size() != b.size()) throw std::invalid_argument("objective dimension mismatch");
    bool strict = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] > b[i]) return false;
        if (a[i] < b[i]) strict = true;
    }
    return strict;
}

namespace {

FrontPartition sort_general(std::span<const ObjectiveVector> pts, std::size_t max_fronts) {
    const std::size_t n = pts.size();
    std::vector<std::vector<std::size_t>> dominated(n);
    std::vector<std::size_t> counter(n, 0);
    FrontPartition out;
    out.rank.assign(n, -1);
    std::vector<std::size_t> current;
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t q = 0; q < n; ++q) {
            if (p == q) continue;
            if (dominates(pts[p], pts[q])) {
                dominated[p].push_back(q);
            } else if (dominates(pts[q], pts[p])) {
                ++counter[p];
            }
        }
        if (counter[p] == 0) current.push_back(p);
    }
    while (!current.empty() && out.fronts.size() < max_fronts) {
        const int r = static_cast<int>(out.fronts.size());
        std::vector<std::size_t> next;
        for (std::size_t p : current) {
            out.rank[p] = r;
            for (std::size_t q : dominated[p]) {
                if (--counter[q] == 0) next.push_back(q);
            }
        }
        std::sort(current.begin(), current.end());
        out.fronts.push_back(std::move(current));
        current = std::move(next);
    }
    return out;
}

// Two objectives: sweep in lexicographic order; a front dominates a point iff
// the front's most recent member does.
FrontPartition sort_two(std::span<const ObjectiveVector> pts, std::size_t max_fronts) {
    const std::size_t n = pts.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (pts[a][0] != pts[b][0]) return pts[a][0] < pts[b][0];
        if (pts[a][1] != pts[b][1]) return pts[a][1] < pts[b][1];
        return a < b;
    });
    FrontPartition out;
    out.rank.assign(n, -1);
    std::vector<std::size_t> last;
    for (std::size_t p : order) {
        std::size_t k = 0;
        for (; k < last.size(); ++k) {
            const auto& q = pts[last[k]];
            const bool same = q[0] == pts[p][0] && q[1] == pts[p][1];
            if (!(q[1] <= pts[p][1] && !same)) break;
        }
        if (k == last.size()) {
            if (k >= max_fronts) continue;
            last.push_back(p);
            out.fronts.emplace_back();
        } else {
            last[k] = p;
        }
        out.rank[p] = static_cast<int>(k);
        out.fronts[k].push_back(p);
    }
    for (auto& f : out.fronts) std::sort(f.begin(), f.end());
    return out;
}

}  // namespace

FrontPartition fast_nondominated_sort(std::span<const ObjectiveVector> points, std::optional<std::size_t> max_fronts) {
    if (points.empty()) return {};
    const std::size_t m = points.front().size();
    for (const auto& p : points) {
        if (p.size() != m) throw std::invalid_argument("objective dimension mismatch");
    }
    const std::size_t limit = max_fronts.value_or(std::numeric_limits<std::size_t>::max());
    if (limit == 0) return FrontPartition{{}, std::vector<int>(points.size(), -1)};
    return m == 2 ? sort_two(points, limit) : sort_general(points, limit);
}

std::vector<std::size_t> nondominated_indices(std::span<const ObjectiveVector> points) {
    auto part = fast_nondominated_sort(points, 1);
    return part.fronts.empty() ? std::vector<std::size_t>{} : part.fronts.front();
}

std::vector<double> crowding_distance(std::span<const ObjectiveVector> front) {
    const std::size_t n = front.size();
    std::vector<double> dist(n, 0.0);
    if (n == 0) return dist;
    std::vector<std::size_t> unique;
    for (std::size_t i = 0; i < n; ++i) {
        bool repeated = false;
        for (std::size_t u : unique) {
            if (front[u] == front[i]) {
                repeated = true;
                break;
            }
        }
        if (!repeated) unique.push_back(i);
    }
    const double inf = std::numeric_limits<double>::infinity();
    if (unique.size() <= 2) {
        for (std::size_t u : unique) dist[u] = inf;
        return dist;
    }
    const std::size_t m = front.front().size();
    for (std::size_t obj = 0; obj < m; ++obj) {
        std::vector<std::size_t> order = unique;
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return front[a][obj] < front[b][obj]; });
        const double lo = front[order.front()][obj];
        const double hi = front[order.back()][obj];
        dist[order.front()] = inf;
        dist[order.back()] = inf;
        if (hi - lo <= 0.0) continue;
        for (std::size_t k = 1; k + 1 < order.size(); ++k) {
            dist[order[k]] += (front[order[k + 1]][obj] - front[order[k - 1]][obj]) / (hi - lo);
        }
    }
    return dist;
}

double hypervolume_2d(std::span<const ObjectiveVector> points, const ObjectiveVector& ref) {
    if (ref.size() != 2) throw std::invalid_argument("hypervolume_2d requires two objectives");
    std::vector<std::pair<double, double>> kept;
    for (const auto& p : points) {
        if (p.size() != 2) throw std::invalid_argument("hypervolume_2d requires two objectives");
        if (p[0] < ref[0] && p[1] < ref[1]) kept.emplace_back(p[0], p[1]);
    }
    std::sort(kept.begin(), kept.end());
    double area = 0.0;
    double ceiling = ref[1];
    for (const auto& [x, y] : kept) {
        if (y < ceiling) {
            area += (ref[0] - x) * (ceiling - y);
            ceiling = y;
        }
    }
    return area;
}

}  // namespace kegnas
