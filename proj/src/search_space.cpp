#include "kegnas/search_space.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

namespace kegnas {

namespace {

int parse_int(std::string_view text, std::string_view whole) {
    int value = 0;
    const auto* first = text.data();
    const auto* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last || text.empty()) {
        throw std::invalid_argument("malformed encoding '" + std::string(whole) + "'");
    }
    return value;
}

void parse_group(std::string_view group, std::array<int, kNumIntermediate>& out, std::string_view whole) {
    std::size_t start = 0;
    for (int i = 0; i < kNumIntermediate; ++i) {
        const std::size_t comma = group.find(',', start);
        const bool last = i == kNumIntermediate - 1;
        if (last != (comma == std::string_view::npos)) {
            throw std::invalid_argument("malformed encoding '" + std::string(whole) + "'");
        }
        const std::size_t end = last ? group.size() : comma;
        out[i] = parse_int(group.substr(start, end - start), whole);
        start = end + 1;
    }
}

std::vector<PredVector> all_pred_vectors() {
    std::vector<PredVector> out;
    PredVector p{};
    for (p[1] = 0; p[1] <= 1; ++p[1])
        for (p[2] = 0; p[2] <= 2; ++p[2])
            for (p[3] = 0; p[3] <= 3; ++p[3]) out.push_back(p);
    return out;
}

// Subtree signature: [op, #children, child signatures...], children sorted.
using Signature = std::vector<int>;

struct Tree {
    std::array<std::vector<int>, kNumIntermediate + 1> children;
    std::array<int, kNumIntermediate + 1> label{};
};

Tree build_tree(const Encoding& enc) {
    Tree t;
    t.label[0] = -1;
    for (int i = 0; i < kNumIntermediate; ++i) {
        t.children[enc.pred[i]].push_back(i + 1);
        t.label[i + 1] = enc.ops[i];
    }
    return t;
}

Signature signature(const Tree& t, int v, std::array<Signature, kNumIntermediate + 1>& cache) {
    std::vector<Signature> child_sigs;
    for (int c : t.children[v]) child_sigs.push_back(signature(t, c, cache));
    std::sort(child_sigs.begin(), child_sigs.end());
    Signature sig{t.label[v], static_cast<int>(child_sigs.size())};
    for (const auto& cs : child_sigs) sig.insert(sig.end(), cs.begin(), cs.end());
    cache[v] = sig;
    return sig;
}

void preorder(const Tree& t, int v, int parent_new, const std::array<Signature, kNumIntermediate + 1>& sigs,
              int& counter, Encoding& out) {
    int my_id = 0;
    if (v != 0) {
        my_id = counter++;
        out.pred[my_id - 1] = parent_new;
        out.ops[my_id - 1] = t.label[v];
    }
    std::vector<int> kids = t.children[v];
    std::stable_sort(kids.begin(), kids.end(), [&](int a, int b) { return sigs[a] < sigs[b]; });
    for (int c : kids) preorder(t, c, my_id, sigs, counter, out);
}

}  // namespace

std::string Encoding::to_string() const {
    std::string s;
    for (int i = 0; i < kNumIntermediate; ++i) {
        if (i) s += ',';
        s += std::to_string(pred[i]);
    }
    s += '|';
    for (int i = 0; i < kNumIntermediate; ++i) {
        if (i) s += ',';
        s += std::to_string(ops[i]);
    }
    return s;
}

Encoding Encoding::parse(std::string_view text) {
    const std::size_t bar = text.find('|');
    if (bar == std::string_view::npos || text.find('|', bar + 1) != std::string_view::npos) {
        throw std::invalid_argument("malformed encoding '" + std::string(text) + "'");
    }
    Encoding e;
    parse_group(text.substr(0, bar), e.pred, text);
    parse_group(text.substr(bar + 1), e.ops, text);
    return e;
}

std::size_t EncodingHash::operator()(const Encoding& e) const noexcept {
    std::uint64_t h = 0;
    for (int k = 0; k < kEncodingLength; ++k) h = h * 31 + static_cast<std::uint64_t>(e.slot(k) + 1);
    return static_cast<std::size_t>(mix64(h));
}

const std::vector<std::string>& standard_op_names() {
    static const std::vector<std::string> names{"GCN", "GraphSAGE", "GAT", "GIN", "ChebNet",
                                                "ARMA", "k-GNN", "RC", "FC"};
    return names;
}

SearchSpaceSpec SearchSpaceSpec::standard() { return with_ops(9); }

SearchSpaceSpec SearchSpaceSpec::with_ops(int num_ops) {
    SearchSpaceSpec spec;
    spec.num_ops = num_ops;
    const auto& names = standard_op_names();
    for (int i = 0; i < num_ops; ++i) {
        spec.op_names.push_back(i < static_cast<int>(names.size()) ? names[i] : "op" + std::to_string(i));
    }
    spec.check();
    return spec;
}

void SearchSpaceSpec::check() const {
    if (num_intermediate != kNumIntermediate) {
        throw std::invalid_argument("num_intermediate is fixed at 4");
    }
    if (num_ops < 2) throw std::invalid_argument("num_ops must be >= 2");
    if (!op_names.empty() && static_cast<int>(op_names.size()) != num_ops) {
        throw std::invalid_argument("op_names size does not match num_ops");
    }
    if (macro_whitelist) {
        if (macro_whitelist->empty()) throw std::invalid_argument("macro whitelist is empty");
        for (const auto& p : *macro_whitelist) {
            for (int i = 0; i < kNumIntermediate; ++i) {
                if (p[i] < 0 || p[i] > i) throw std::invalid_argument("whitelist entry is not a valid predecessor vector");
            }
            if (macro_shape(p) != p) throw std::invalid_argument("whitelist entry is not canonical");
        }
    }
}

std::string SearchSpaceSpec::op_name(int op) const {
    if (op >= 0 && op < static_cast<int>(op_names.size())) return op_names[op];
    return "op" + std::to_string(op);
}

std::optional<Violation> validate(const Encoding& enc, const SearchSpaceSpec& spec) {
    for (int i = 0; i < kNumIntermediate; ++i) {
        if (enc.pred[i] < 0) return Violation{i, "predecessor slot " + std::to_string(i) + " is negative"};
        if (enc.pred[i] > i) {
            return Violation{i, "predecessor slot " + std::to_string(i) + " = " + std::to_string(enc.pred[i]) +
                                    " exceeds " + std::to_string(i) + " (forward reference)"};
        }
    }
    for (int i = 0; i < kNumIntermediate; ++i) {
        if (enc.ops[i] < 0 || enc.ops[i] >= spec.num_ops) {
            return Violation{kNumIntermediate + i, "operation slot " + std::to_string(i) + " = " +
                                                       std::to_string(enc.ops[i]) + " outside [0, " +
                                                       std::to_string(spec.num_ops - 1) + "]"};
        }
    }
    if (spec.macro_whitelist && !spec.macro_whitelist->contains(macro_shape(enc.pred))) {
        return Violation{-1, "macro shape not in whitelist"};
    }
    return std::nullopt;
}

void require_valid(const Encoding& enc, const SearchSpaceSpec& spec) {
    if (auto v = validate(enc, spec)) {
        throw std::invalid_argument("invalid encoding " + enc.to_string() + ": " + v->rule);
    }
}

bool ArchitectureDag::has_edge(int from, int to) const {
    return std::find(edges.begin(), edges.end(), std::pair{from, to}) != edges.end();
}

std::vector<int> ArchitectureDag::successors(int v) const {
    std::vector<int> out;
    for (const auto& [a, b] : edges) {
        if (a == v) out.push_back(b);
    }
    return out;
}

ArchitectureDag decode(const Encoding& enc, const SearchSpaceSpec& spec) {
    require_valid(enc, spec);
    ArchitectureDag dag;
    dag.ops = enc.ops;
    for (int i = 0; i < kNumIntermediate; ++i) dag.edges.emplace_back(enc.pred[i], i + 1);
    const auto leaves = leaf_mask(enc);
    for (int i = 0; i < kNumIntermediate; ++i) {
        if (leaves[i]) {
            dag.output_inputs.push_back(i + 1);
            dag.edges.emplace_back(i + 1, ArchitectureDag::kOutput);
        }
    }
    return dag;
}

Encoding encode(const ArchitectureDag& dag) {
    Encoding e;
    e.ops = dag.ops;
    std::array<int, kNumIntermediate> seen{};
    for (const auto& [from, to] : dag.edges) {
        if (to >= 1 && to <= kNumIntermediate) {
            if (seen[to - 1]++) throw std::invalid_argument("intermediate vertex with two incoming edges");
            e.pred[to - 1] = from;
        }
    }
    for (int i = 0; i < kNumIntermediate; ++i) {
        if (!seen[i]) throw std::invalid_argument("intermediate vertex without incoming edge");
    }
    return e;
}

Encoding canonicalize(const Encoding& enc) {
    for (int i = 0; i < kNumIntermediate; ++i) {
        if (enc.pred[i] < 0 || enc.pred[i] > i) {
            throw std::invalid_argument("cannot canonicalize invalid encoding " + enc.to_string());
        }
    }
    const Tree t = build_tree(enc);
    std::array<Signature, kNumIntermediate + 1> sigs;
    signature(t, 0, sigs);
    Encoding out;
    int counter = 1;
    preorder(t, 0, 0, sigs, counter, out);
    return out;
}

PredVector macro_shape(const PredVector& pred) {
    Encoding e;
    e.pred = pred;
    return canonicalize(e).pred;
}

std::array<int, kNumIntermediate> vertex_depths(const Encoding& enc) {
    std::array<int, kNumIntermediate> depth{};
    for (int i = 0; i < kNumIntermediate; ++i) {
        depth[i] = enc.pred[i] == 0 ? 1 : depth[enc.pred[i] - 1] + 1;
    }
    return depth;
}

std::array<bool, kNumIntermediate> leaf_mask(const Encoding& enc) {
    std::array<bool, kNumIntermediate> leaf;
    leaf.fill(true);
    for (int i = 0; i < kNumIntermediate; ++i) {
        if (enc.pred[i] > 0) leaf[enc.pred[i] - 1] = false;
    }
    return leaf;
}

Encoding random_architecture(const SearchSpaceSpec& spec, Rng& rng) {
    Encoding e;
    do {
        for (int i = 0; i < kNumIntermediate; ++i) e.pred[i] = rng.between(0, i);
    } while (spec.macro_whitelist && !spec.macro_whitelist->contains(macro_shape(e.pred)));
    for (int i = 0; i < kNumIntermediate; ++i) e.ops[i] = rng.between(0, spec.num_ops - 1);
    return e;
}

Encoding random_architecture(const SearchSpaceSpec& spec, std::uint64_t seed) {
    Rng rng(seed);
    return random_architecture(spec, rng);
}

Encoding repair(const std::array<double, kEncodingLength>& relaxed, const SearchSpaceSpec& spec) {
    Encoding e;
    for (int k = 0; k < kEncodingLength; ++k) {
        const double r = std::isfinite(relaxed[k]) ? std::round(relaxed[k]) : 0.0;
        const double lo = spec.slot_lower(k);
        const double hi = spec.slot_upper(k);
        e.slot(k) = static_cast<int>(std::clamp(r, lo, hi));
    }
    if (spec.macro_whitelist && !spec.macro_whitelist->contains(macro_shape(e.pred))) {
        static const std::vector<PredVector> candidates = all_pred_vectors();
        double best = std::numeric_limits<double>::infinity();
        PredVector chosen = e.pred;
        for (const auto& p : candidates) {
            if (!spec.macro_whitelist->contains(macro_shape(p))) continue;
            double d = 0.0;
            for (int i = 0; i < kNumIntermediate; ++i) d += std::abs(relaxed[i] - p[i]);
            if (d < best) {
                best = d;
                chosen = p;
            }
        }
        e.pred = chosen;
    }
    return e;
}

std::size_t raw_space_size(const SearchSpaceSpec& spec) {
    std::size_t n = 1;
    for (int i = 0; i < kNumIntermediate; ++i) n *= static_cast<std::size_t>(spec.num_ops);
    std::size_t preds = 0;
    for (const auto& p : all_pred_vectors()) {
        if (!spec.macro_whitelist || spec.macro_whitelist->contains(macro_shape(p))) ++preds;
    }
    return n * preds;
}

std::vector<Encoding> enumerate(const SearchSpaceSpec& spec) {
    spec.check();
    std::unordered_set<Encoding, EncodingHash> seen;
    std::vector<Encoding> out;
    for (const auto& p : all_pred_vectors()) {
        if (spec.macro_whitelist && !spec.macro_whitelist->contains(macro_shape(p))) continue;
        Encoding e;
        e.pred = p;
        const int n = spec.num_ops;
        for (int code = 0; code < n * n * n * n; ++code) {
            int c = code;
            for (int i = kNumIntermediate - 1; i >= 0; --i) {
                e.ops[i] = c % n;
                c /= n;
            }
            Encoding canon = canonicalize(e);
            if (seen.insert(canon).second) out.push_back(canon);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

void for_each_canonical(const SearchSpaceSpec& spec, const std::function<void(const Encoding&)>& fn) {
    for (const auto& e : enumerate(spec)) fn(e);
}

}  // namespace kegnas
