#include "kegnas/archive.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace kegnas {

using nlohmann::json;

namespace {

json member(const Encoding& enc, const ObjectiveVector& obj) {
    return json{{"enc", enc.to_string()}, {"err", obj.err()}, {"params", obj.params()}};
}

json front_json(const std::vector<Individual>& front) {
    json arr = json::array();
    for (const auto& ind : front) arr.push_back(member(ind.enc, *ind.obj));
    return arr;
}

Individual individual_from(const json& j) {
    Individual ind;
    ind.enc = Encoding::parse(j.at("enc").get<std::string>());
    ind.obj = ObjectiveVector{j.at("err").get<double>(), j.at("params").get<double>()};
    if (j.contains("rank")) ind.rank = j.at("rank").get<int>();
    return ind;
}

}  // namespace

void write_archive(std::ostream& os, const SearchRun& run) {
    const auto& c = run.config;
    os << json{{"type", "config"},       {"mode", c.mode},       {"task", c.task},
               {"seed", c.seed},         {"pop_size", c.pop_size}, {"generations", c.generations},
               {"budget", c.budget},     {"n_c", c.n_c},         {"num_ops", c.num_ops},
               {"params_scale", c.params_scale}}
              .dump()
       << '\n';
    json transfer = json::array();
    for (const auto& e : run.transfer) transfer.push_back(e.to_string());
    os << json{{"type", "transfer"}, {"n_l", run.n_l}, {"architectures", transfer}}.dump() << '\n';
    for (std::size_t g = 0; g < run.archive.generations.size(); ++g) {
        const auto& gen = run.archive.generations[g];
        json pop = json::array();
        for (const auto& ind : gen.population) {
            json m = member(ind.enc, *ind.obj);
            m["rank"] = ind.rank;
            pop.push_back(m);
        }
        json rec{{"type", "generation"}, {"generation", gen.generation}, {"population", pop}};
        if (g < run.hv_trace.size()) rec["hv"] = run.hv_trace[g];
        os << rec.dump() << '\n';
    }
    for (const auto& e : run.archive.ledger) {
        json rec = member(e.enc, e.obj);
        rec["type"] = "eval";
        rec["generation"] = e.generation;
        os << rec.dump() << '\n';
    }
    os << json{{"type", "summary"},
               {"final_front", front_json(run.archive.final_front)},
               {"final_hv", run.final_hv},
               {"best_acc", best_accuracy(run)},
               {"evaluations", run.archive.ledger.size()},
               {"misses", run.archive.misses},
               {"budget_exhausted", run.archive.budget_exhausted}}
              .dump()
       << '\n';
}

void save_archive(const std::string& path, const SearchRun& run) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write archive '" + path + "'");
    write_archive(out, run);
}

SearchRun read_archive(std::istream& is) {
    SearchRun run;
    std::string line;
    std::size_t line_no = 0;
    bool saw_config = false, saw_summary = false;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            const std::string type = j.at("type").get<std::string>();
            if (type == "config") {
                auto& c = run.config;
                c.mode = j.at("mode").get<std::string>();
                c.task = j.at("task").get<std::string>();
                c.seed = j.at("seed").get<std::uint64_t>();
                c.pop_size = j.at("pop_size").get<std::size_t>();
                c.generations = j.at("generations").get<std::size_t>();
                c.budget = j.at("budget").get<std::size_t>();
                c.n_c = j.at("n_c").get<std::size_t>();
                c.num_ops = j.at("num_ops").get<int>();
                c.params_scale = j.at("params_scale").get<double>();
                saw_config = true;
            } else if (type == "transfer") {
                run.n_l = j.at("n_l").get<std::size_t>();
                for (const auto& e : j.at("architectures")) run.transfer.push_back(Encoding::parse(e.get<std::string>()));
            } else if (type == "generation") {
                GenerationRecord gen;
                gen.generation = j.at("generation").get<std::size_t>();
                for (const auto& m : j.at("population")) gen.population.push_back(individual_from(m));
                run.archive.generations.push_back(std::move(gen));
                if (j.contains("hv")) run.hv_trace.push_back(j.at("hv").get<double>());
            } else if (type == "eval") {
                const Individual ind = individual_from(j);
                run.archive.ledger.push_back(EvaluationRecord{ind.enc, *ind.obj, j.at("generation").get<std::size_t>()});
            } else if (type == "summary") {
                for (const auto& m : j.at("final_front")) {
                    Individual ind = individual_from(m);
                    ind.rank = 0;
                    run.archive.final_front.push_back(std::move(ind));
                }
                run.final_hv = j.at("final_hv").get<double>();
                run.archive.misses = j.at("misses").get<std::size_t>();
                run.archive.budget_exhausted = j.at("budget_exhausted").get<bool>();
                saw_summary = true;
            } else {
                throw std::runtime_error("unknown record type '" + type + "'");
            }
        } catch (const std::exception& e) {
            throw std::runtime_error("archive line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!saw_config || !saw_summary) throw std::runtime_error("archive lacks a config or summary record");
    return run;
}

SearchRun load_archive(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open archive '" + path + "'");
    try {
        return read_archive(in);
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

void save_timing(const std::string& path, const SearchRun& run) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << json{{"mode", run.config.mode},
                {"seed", run.config.seed},
                {"pre_search_seconds", run.timing.pre_search_seconds},
                {"search_seconds", run.timing.search_seconds}}
               .dump()
        << '\n';
}

double best_accuracy(const SearchRun& run) {
    double best = 0.0;
    for (const auto& ind : run.archive.final_front) best = std::max(best, 1.0 - ind.obj->err());
    return best;
}

// ---------------------------------------------------------------------------
// Report

Report make_report(std::span<const SearchRun> runs) {
    if (runs.empty()) throw std::invalid_argument("report needs at least one archive");
    std::vector<std::string> order;
    for (const char* m : {"kegnas", "rkegnas", "nsga2"}) {
        if (std::any_of(runs.begin(), runs.end(), [&](const SearchRun& r) { return r.config.mode == m; })) {
            order.push_back(m);
        }
    }
    for (const auto& r : runs) {
        if (std::find(order.begin(), order.end(), r.config.mode) == order.end()) order.push_back(r.config.mode);
    }

    Report report;
    std::map<std::string, std::vector<double>> hv, acc;
    for (const auto& mode : order) {
        ModeSummary s;
        s.mode = mode;
        for (const auto& r : runs) {
            if (r.config.mode != mode) continue;
            ++s.runs;
            hv[mode].push_back(r.final_hv);
            acc[mode].push_back(best_accuracy(r));
            const auto num_ops = static_cast<std::size_t>(std::max(r.config.num_ops, 1));
            if (s.op_frequency.size() < num_ops) s.op_frequency.resize(num_ops, 0);
            if (s.pred_frequency.empty()) {
                for (int i = 0; i < kNumIntermediate; ++i) s.pred_frequency.emplace_back(static_cast<std::size_t>(i + 1), 0);
            }
            for (const auto& ind : r.archive.final_front) {
                ++s.front_members;
                for (int i = 0; i < kNumIntermediate; ++i) {
                    const auto op = static_cast<std::size_t>(ind.enc.ops[i]);
                    if (op >= s.op_frequency.size()) s.op_frequency.resize(op + 1, 0);
                    ++s.op_frequency[op];
                    ++s.pred_frequency[static_cast<std::size_t>(i)][static_cast<std::size_t>(ind.enc.pred[i])];
                }
                Encoding shape;
                shape.pred = macro_shape(ind.enc.pred);
                ++s.macro_frequency[shape.to_string().substr(0, shape.to_string().find('|'))];
            }
        }
        s.hv_mean = mean(hv[mode]);
        s.hv_std = stddev(hv[mode]);
        s.hv_median = median(hv[mode]);
        s.best_acc_mean = mean(acc[mode]);
        s.best_acc_std = stddev(acc[mode]);
        report.modes.push_back(std::move(s));
    }
    for (std::size_t i = 0; i < order.size(); ++i) {
        for (std::size_t j = i + 1; j < order.size(); ++j) {
            PairwiseTest t;
            t.a = order[i];
            t.b = order[j];
            t.hv = wilcoxon_rank_sum(hv[order[i]], hv[order[j]]);
            t.best_acc = wilcoxon_rank_sum(acc[order[i]], acc[order[j]]);
            report.tests.push_back(std::move(t));
        }
    }
    return report;
}

void write_report_jsonl(std::ostream& os, const Report& report) {
    for (const auto& s : report.modes) {
        os << json{{"type", "mode"},
                   {"mode", s.mode},
                   {"runs", s.runs},
                   {"best_acc_mean", s.best_acc_mean},
                   {"best_acc_std", s.best_acc_std},
                   {"hv_mean", s.hv_mean},
                   {"hv_std", s.hv_std},
                   {"hv_median", s.hv_median},
                   {"front_members", s.front_members},
                   {"op_frequency", s.op_frequency},
                   {"macro_frequency", s.macro_frequency},
                   {"pred_frequency", s.pred_frequency}}
                  .dump()
           << '\n';
    }
    for (const auto& t : report.tests) {
        auto test = [](const RankSumResult& r) {
            return json{{"u", r.u}, {"z", r.z}, {"p", r.p_value}, {"verdict", r.verdict}};
        };
        os << json{{"type", "wilcoxon"}, {"a", t.a}, {"b", t.b}, {"hv", test(t.hv)}, {"best_acc", test(t.best_acc)}}
                  .dump()
           << '\n';
    }
}

void write_report_table(std::ostream& os, const Report& report) {
    std::ostringstream out;
    out << std::fixed;
    out << std::left << std::setw(10) << "mode" << std::right << std::setw(6) << "runs" << std::setw(22)
        << "best acc (mean±std)" << std::setw(22) << "HV (mean±std)" << std::setw(12) << "HV median" << '\n';
    for (const auto& s : report.modes) {
        std::ostringstream a, h;
        a << std::fixed << std::setprecision(4) << s.best_acc_mean << "±" << s.best_acc_std;
        h << std::fixed << std::setprecision(4) << s.hv_mean << "±" << s.hv_std;
        out << std::left << std::setw(10) << s.mode << std::right << std::setw(6) << s.runs << std::setw(23)
            << a.str() << std::setw(23) << h.str() << std::setw(12) << std::setprecision(4) << s.hv_median << '\n';
    }
    if (!report.tests.empty()) out << "\nWilcoxon rank-sum (two-sided, 95%):\n";
    for (const auto& t : report.tests) {
        out << "  " << t.a << " vs " << t.b << ": HV " << t.hv.verdict << " (p=" << std::setprecision(4)
            << t.hv.p_value << "), best acc " << t.best_acc.verdict << " (p=" << t.best_acc.p_value << ")\n";
    }
    for (const auto& s : report.modes) {
        out << "\n" << s.mode << " operation frequency over final fronts:";
        for (std::size_t op = 0; op < s.op_frequency.size(); ++op) out << ' ' << op << ':' << s.op_frequency[op];
        out << "\n" << s.mode << " macro-shape frequency:";
        for (const auto& [shape, n] : s.macro_frequency) out << ' ' << shape << ':' << n;
        out << '\n';
    }
    os << out.str();
}

}  // namespace kegnas
