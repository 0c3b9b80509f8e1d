#include "kegnas/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace kegnas {

double mean(std::span<const double> xs) {
    if (xs.empty()) throw std::invalid_argument("mean of an empty sample");
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double stddev(std::span<const double> xs) {
    if (xs.size() < 2) return 0.0;
    const double m = mean(xs);
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

double median(std::span<const double> xs) {
    if (xs.empty()) throw std::invalid_argument("median of an empty sample");
    std::vector<double> v(xs.begin(), xs.end());
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

RankSumResult wilcoxon_rank_sum(std::span<const double> a, std::span<const double> b, double alpha) {
    if (a.empty() || b.empty()) throw std::invalid_argument("rank-sum test needs two non-empty samples");
    const double n1 = static_cast<double>(a.size());
    const double n2 = static_cast<double>(b.size());
    std::vector<std::pair<double, int>> all;
    for (double x : a) all.emplace_back(x, 0);
    for (double x : b) all.emplace_back(x, 1);
    std::sort(all.begin(), all.end());

    double rank_a = 0.0;
    double tie_term = 0.0;
    for (std::size_t i = 0; i < all.size();) {
        std::size_t j = i;
        while (j < all.size() && all[j].first == all[i].first) ++j;
        const double avg = 0.5 * static_cast<double>(i + 1 + j);
        const double t = static_cast<double>(j - i);
        tie_term += t * t * t - t;
        for (std::size_t k = i; k < j; ++k) {
            if (all[k].second == 0) rank_a += avg;
        }
        i = j;
    }
    RankSumResult r;
    r.u = rank_a - n1 * (n1 + 1.0) / 2.0;
    const double n = n1 + n2;
    const double var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if (var <= 0.0) return r;  // every value tied
    r.z = (r.u - n1 * n2 / 2.0) / std::sqrt(var);
    r.p_value = std::erfc(std::abs(r.z) / std::sqrt(2.0));
    if (r.p_value < alpha) r.verdict = r.z > 0 ? "+" : "-";
    return r;
}

}  // namespace kegnas
