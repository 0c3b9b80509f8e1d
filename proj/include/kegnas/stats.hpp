#pragma once

#include <span>
#include <string>

namespace kegnas {

double mean(std::span<const double> xs);
/// Sample standard deviation (n - 1); 0 for fewer than two values.
double stddev(std::span<const double> xs);
double median(std::span<const double> xs);

struct RankSumResult {
    double u = 0.0;  // Mann-Whitney U of the first sample
    double z = 0.0;
    double p_value = 1.0;
    /// "+" when the first sample is significantly larger, "-" when smaller,
    /// "≈" otherwise.
    std::string verdict = "≈";
};

/// Two-sided Wilcoxon rank-sum test, normal approximation with tie
/// correction and no continuity correction.
RankSumResult wilcoxon_rank_sum(std::span<const double> a, std::span<const double> b, double alpha = 0.05);

}  // namespace kegnas
