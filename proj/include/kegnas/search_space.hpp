#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kegnas/rng.hpp"

namespace kegnas {

inline constexpr int kNumIntermediate = 4;
inline constexpr int kEncodingLength = 2 * kNumIntermediate;

using PredVector = std::array<int, kNumIntermediate>;
using OpVector = std::array<int, kNumIntermediate>;

/// One architecture: pred[i] is the predecessor of intermediate vertex i+1
/// (0 is the input vertex), ops[i] the operation at vertex i+1.
struct Encoding {
    PredVector pred{};
    OpVector ops{};

    auto operator<=>(const Encoding&) const = default;

    int slot(int k) const { return k < kNumIntermediate ? pred[k] : ops[k - kNumIntermediate]; }
    int& slot(int k) { return k < kNumIntermediate ? pred[k] : ops[k - kNumIntermediate]; }

    /// `p0,p1,p2,p3|o0,o1,o2,o3`
    std::string to_string() const;
    static Encoding parse(std::string_view text);
};

struct EncodingHash {
    std::size_t operator()(const Encoding& e) const noexcept;
};

struct SearchSpaceSpec {
    int num_intermediate = kNumIntermediate;
    int num_ops = 9;
    std::vector<std::string> op_names;
    /// Canonical unlabeled predecessor vectors (see macro_shape).
    std::optional<std::set<PredVector>> macro_whitelist;

    /// The nine-operation space (GCN ... FC).
    static SearchSpaceSpec standard();
    /// First `num_ops` operations of the standard list.
    static SearchSpaceSpec with_ops(int num_ops);

    /// Throws std::invalid_argument when the spec itself is malformed.
    void check() const;

    int slot_lower(int /*slot*/) const { return 0; }
    int slot_upper(int slot) const { return slot < kNumIntermediate ? slot : num_ops - 1; }
    std::string op_name(int op) const;
};

const std::vector<std::string>& standard_op_names();

struct Violation {
    int slot;  // 0..7, or -1 for whole-encoding rules
    std::string rule;
};

std::optional<Violation> validate(const Encoding& enc, const SearchSpaceSpec& spec);
void require_valid(const Encoding& enc, const SearchSpaceSpec& spec);

struct ArchitectureDag {
    static constexpr int kInput = 0;
    static constexpr int kOutput = kNumIntermediate + 1;

    OpVector ops{};                          // labels of vertices 1..4
    std::vector<std::pair<int, int>> edges;  // (from, to), vertices 0..4
    std::vector<int> output_inputs;          // intermediates concatenated into the output

    bool has_edge(int from, int to) const;
    std::vector<int> successors(int v) const;
};

ArchitectureDag decode(const Encoding& enc, const SearchSpaceSpec& spec);
Encoding encode(const ArchitectureDag& dag);

/// Representative of the isomorphism class. The macro graph is a rooted
/// tree, so sibling subtrees are sorted by (op, subtree signature) and
/// vertices are relabelled in preorder.
Encoding canonicalize(const Encoding& enc);

/// Canonical predecessor vector with all operation labels ignored.
PredVector macro_shape(const PredVector& pred);

/// Depth of each intermediate vertex (children of the input have depth 1).
std::array<int, kNumIntermediate> vertex_depths(const Encoding& enc);
/// Intermediates with no successor (wired to the output).
std::array<bool, kNumIntermediate> leaf_mask(const Encoding& enc);

Encoding random_architecture(const SearchSpaceSpec& spec, Rng& rng);
Encoding random_architecture(const SearchSpaceSpec& spec, std::uint64_t seed);

/// Round each relaxed slot, clamp it into range and, under a whitelist,
/// project the predecessor vector onto the nearest admissible shape.
Encoding repair(const std::array<double, kEncodingLength>& relaxed, const SearchSpaceSpec& spec);

/// Number of raw (non-canonicalized) encodings.
std::size_t raw_space_size(const SearchSpaceSpec& spec);

/// Every isomorphism class exactly once, sorted ascending.
std::vector<Encoding> enumerate(const SearchSpaceSpec& spec);
void for_each_canonical(const SearchSpaceSpec& spec, const std::function<void(const Encoding&)>& fn);

}  // namespace kegnas
