#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "kegnas/moea.hpp"
#include "kegnas/stats.hpp"

namespace kegnas {

struct RunConfigSnapshot {
    std::string mode;
    std::string task;
    std::uint64_t seed = 0;
    std::size_t pop_size = 0;
    std::size_t generations = 0;
    std::size_t budget = 0;
    std::size_t n_c = 0;
    int num_ops = 0;
    double params_scale = 1.0;
};

struct Timing {
    double pre_search_seconds = 0.0;
    double search_seconds = 0.0;
};

struct SearchRun {
    RunConfigSnapshot config;
    std::vector<Encoding> transfer;
    std::size_t n_l = 0;
    RunArchive archive;
    /// Normalized HV per recorded generation; the last entry is the final HV.
    std::vector<double> hv_trace;
    double final_hv = 0.0;
    /// Wall-clock is kept out of the archive so archives stay reproducible.
    Timing timing;
};

/// Line-delimited JSON: one config record, one transfer record, one record
/// per generation and per evaluation, then a summary.
void write_archive(std::ostream& os, const SearchRun& run);
void save_archive(const std::string& path, const SearchRun& run);
SearchRun read_archive(std::istream& is);
SearchRun load_archive(const std::string& path);
void save_timing(const std::string& path, const SearchRun& run);

double best_accuracy(const SearchRun& run);

struct ModeSummary {
    std::string mode;
    std::size_t runs = 0;
    double best_acc_mean = 0.0, best_acc_std = 0.0;
    double hv_mean = 0.0, hv_std = 0.0, hv_median = 0.0;
    std::size_t front_members = 0;
    std::vector<std::size_t> op_frequency;                // per operation
    std::map<std::string, std::size_t> macro_frequency;  // per canonical macro shape
    std::vector<std::vector<std::size_t>> pred_frequency; // per slot, per predecessor value
};

struct PairwiseTest {
    std::string a, b;
    RankSumResult hv;
    RankSumResult best_acc;
};

struct Report {
    std::vector<ModeSummary> modes;
    std::vector<PairwiseTest> tests;
};

/// Modes appear in the order kegnas, rkegnas, nsga2, then any others.
Report make_report(std::span<const SearchRun> runs);
void write_report_jsonl(std::ostream& os, const Report& report);
void write_report_table(std::ostream& os, const Report& report);

}  // namespace kegnas
