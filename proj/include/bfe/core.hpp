#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "bfe/common.hpp"

namespace bfe {

// ---------------------------------------------------------------------------
// Primitive state objects
// ---------------------------------------------------------------------------

/// Finite grid of individual states. Each point is a coordinate vector of a
/// fixed dimension (wealth x productivity for the savings economy, a single
/// integer level for the investment models). Ordering is fixed at
/// construction and indices into it are used everywhere else.
struct StateGrid {
    std::vector<std::vector<double>> points;

    int size() const { return static_cast<int>(points.size()); }
    int dim() const { return points.empty() ? 0 : static_cast<int>(points.front().size()); }

    void validate() const {
        require_arg(points.size() >= 2, "StateGrid: need at least 2 points");
        const std::size_t d = points.front().size();
        require_arg(d >= 1, "StateGrid: point dimension must be >= 1");
        for (const auto& p : points)
            require_arg(p.size() == d, "StateGrid: inconsistent point dimensions");
        for (std::size_t i = 0; i < points.size(); ++i)
            for (std::size_t j = i + 1; j < points.size(); ++j)
                require_arg(points[i] != points[j], "StateGrid: duplicate grid point");
    }
};

/// Finite Markov chain for the aggregate state: values of z and a
/// row-stochastic transition matrix.
struct AggregateChain {
    std::vector<double> values;
    std::vector<std::vector<double>> transition;

    int size() const { return static_cast<int>(values.size()); }

    void validate() const {
        require_arg(!values.empty(), "AggregateChain: empty state set");
        require_arg(transition.size() == values.size(), "AggregateChain: transition shape");
        for (const auto& row : transition) {
            require_arg(row.size() == values.size(), "AggregateChain: transition shape");
            double sum = 0.0;
            for (double p : row) {
                require_arg(p >= 0.0 && p <= 1.0, "AggregateChain: entry outside [0,1]");
                sum += p;
            }
            require_arg(std::abs(sum - 1.0) <= 1e-12, "AggregateChain: row does not sum to 1");
        }
    }
};

/// Probability histogram over the individual state grid.
struct PopulationState {
    std::vector<double> mass;

    int size() const { return static_cast<int>(mass.size()); }

    double total() const { return std::accumulate(mass.begin(), mass.end(), 0.0); }

    bool is_valid(double tol = 1e-10) const {
        for (double m : mass)
            if (!(m >= 0.0)) return false;
        return std::abs(total() - 1.0) <= tol;
    }

    void validate(double tol = 1e-10) const {
        require_arg(!mass.empty(), "PopulationState: empty histogram");
        for (double m : mass)
            require_arg(m >= 0.0, "PopulationState: negative mass");
        require_arg(std::abs(total() - 1.0) <= tol, "PopulationState: mass does not sum to 1");
    }

    static PopulationState uniform(int n) {
        PopulationState s;
        s.mass.assign(n, 1.0 / n);
        return s;
    }

    static PopulationState point_mass(int n, int at) {
        require_arg(at >= 0 && at < n, "PopulationState: point index out of range");
        PopulationState s;
        s.mass.assign(n, 0.0);
        s.mass[at] = 1.0;
        return s;
    }
};

inline double l1_distance(const PopulationState& a, const PopulationState& b) {
    require(a.size() == b.size(), "l1_distance: size mismatch");
    double d = 0.0;
    for (int i = 0; i < a.size(); ++i) d += std::abs(a.mass[i] - b.mass[i]);
    return d;
}

/// s := lambda * target + (1 - lambda) * s, in place.
inline void mix_into(PopulationState& s, const PopulationState& target, double lambda) {
    require(s.size() == target.size(), "mix_into: size mismatch");
    for (int i = 0; i < s.size(); ++i)
        s.mass[i] = lambda * target.mass[i] + (1.0 - lambda) * s.mass[i];
}

// ---------------------------------------------------------------------------
// Model abstraction
// ---------------------------------------------------------------------------

/// An action is a point in R^q; all shipped models use q = 1.
using Action = std::vector<double>;

struct TransitionEntry {
    int target;
    double weight;
};
using TransitionRow = std::vector<TransitionEntry>;

/// One economy: grid, aggregate chain, feasible action sets, one-period
/// transition law (with the idiosyncratic shock integrated out), payoff, and
/// the reported aggregate statistic.
///
/// The payoff and feasibility functions see the population only through
/// `payoff_stats(s)`, a low-dimensional vector of sufficient statistics
/// (aggregate capital, total capacity, ...). All shipped models couple to s
/// through one such scalar, and factoring it out keeps DP table construction
/// linear in the grid rather than quadratic.
struct ModelSpec {
    StateGrid grid;
    AggregateChain chain;

    /// Candidate action set per grid point; indices into these vectors are
    /// the action ids used by policies and tables.
    std::vector<std::vector<Action>> actions;

    /// Law of x' given (x, z_next, action id, s): appends (target, weight)
    /// entries summing to 1 onto `out`.
    std::function<void(int x, int z_next, int a, const PopulationState& s, TransitionRow& out)>
        transition;

    std::function<std::vector<double>(const PopulationState&)> payoff_stats;
    std::function<double(int x, int z, int a, std::span<const double> stats)> payoff;
    /// Optional: restricts the Bellman max to actions feasible at (x, z, s).
    /// Null means every candidate action is always feasible.
    std::function<bool(int x, int z, int a, std::span<const double> stats)> feasible;

    double discount = 0.0;
    std::function<double(const PopulationState&)> aggregate_stat;

    /// Optional runtime check on realized populations (e.g. that no mass
    /// piles up at the top of a truncated grid). Null means always fine.
    std::function<bool(const PopulationState&)> population_guard;

    /// False when the transition law ignores s; kernel tables can then be
    /// built once per model and shared across all populations.
    bool kernel_depends_on_population = true;

    int n_states() const { return grid.size(); }
    int n_aggregate() const { return chain.size(); }
    int n_actions(int x) const { return static_cast<int>(actions[x].size()); }

    double payoff_full(int x, int z, int a, const PopulationState& s) const {
        const std::vector<double> stats = payoff_stats(s);
        return payoff(x, z, a, stats);
    }

    void validate() const {
        grid.validate();
        chain.validate();
        require_arg(discount > 0.0 && discount < 1.0, "ModelSpec: discount must be in (0,1)");
        require_arg(static_cast<int>(actions.size()) == grid.size(),
                    "ModelSpec: one action set per grid point required");
        for (const auto& set : actions)
            require_arg(!set.empty(), "ModelSpec: empty feasible action set");
        require_arg(static_cast<bool>(transition), "ModelSpec: missing transition");
        require_arg(static_cast<bool>(payoff), "ModelSpec: missing payoff");
        require_arg(static_cast<bool>(payoff_stats), "ModelSpec: missing payoff_stats");
        require_arg(static_cast<bool>(aggregate_stat), "ModelSpec: missing aggregate_stat");
    }

    /// Spot-checks every transition row at a reference population.
    void validate_kernel(double tol = 1e-10) const {
        const PopulationState ref = PopulationState::uniform(grid.size());
        TransitionRow row;
        for (int x = 0; x < grid.size(); ++x)
            for (int z = 0; z < chain.size(); ++z)
                for (int a = 0; a < n_actions(x); ++a) {
                    row.clear();
                    transition(x, z, a, ref, row);
                    double sum = 0.0;
                    for (const auto& e : row) {
                        require_arg(e.target >= 0 && e.target < grid.size(),
                                    "ModelSpec: transition target out of range");
                        require_arg(e.weight >= 0.0, "ModelSpec: negative transition weight");
                        sum += e.weight;
                    }
                    require_arg(std::abs(sum - 1.0) <= tol,
                                "ModelSpec: transition row does not sum to 1");
                }
    }
};

// ---------------------------------------------------------------------------
// Foresight tree
// ---------------------------------------------------------------------------

/// All aggregate-shock histories of length <= N from a root state, stored
/// breadth-first with children in z order. Node 0 is the root; the node
/// count is 1 + sum_{j=1..N} |Z|^j. Each node carries a forecast population;
/// each depth-N leaf additionally carries the frozen continuation population
/// used beyond the foresight window.
struct ForesightTree {
    int root_state = 0;
    int horizon = 0;  // N
    int n_z = 0;
    std::vector<int> level_offset;              // offset of each depth level, size horizon+2
    std::vector<PopulationState> populations;   // one per node
    std::vector<PopulationState> continuations; // one per depth-N leaf, in node order

    int node_count() const { return level_offset[horizon + 1]; }
    int leaf_count() const { return level_offset[horizon + 1] - level_offset[horizon]; }

    static std::int64_t expected_node_count(int n_z, int horizon) {
        std::int64_t total = 1, level = 1;
        for (int j = 1; j <= horizon; ++j) {
            level *= n_z;
            total += level;
        }
        return total;
    }

    int depth_of(int node) const {
        for (int k = 0; k <= horizon; ++k)
            if (node < level_offset[k + 1]) return k;
        throw std::invalid_argument("ForesightTree: node id out of range");
    }

    bool is_leaf(int node) const { return depth_of(node) == horizon; }

    int child(int node, int zi) const {
        const int k = depth_of(node);
        require_arg(k < horizon, "ForesightTree: leaf has no children");
        require_arg(zi >= 0 && zi < n_z, "ForesightTree: child index out of range");
        return level_offset[k + 1] + (node - level_offset[k]) * n_z + zi;
    }

    int parent(int node) const {
        const int k = depth_of(node);
        require_arg(k > 0, "ForesightTree: root has no parent");
        return level_offset[k - 1] + (node - level_offset[k]) / n_z;
    }

    /// z index at the node (the last element of its history).
    int z_of(int node) const {
        const int k = depth_of(node);
        if (k == 0) return root_state;
        return (node - level_offset[k]) % n_z;
    }

    /// Full shock history from the root to the node, as z indices.
    std::vector<int> history(int node) const {
        const int k = depth_of(node);
        std::vector<int> h(k + 1);
        int cur = node;
        for (int d = k; d >= 1; --d) {
            h[d] = z_of(cur);
            cur = parent(cur);
        }
        h[0] = root_state;
        return h;
    }

    /// Node id for a history starting at the root; throws if absent.
    int node_at(std::span<const int> hist) const {
        require_arg(!hist.empty() && static_cast<int>(hist.size()) <= horizon + 1,
                    "ForesightTree: history length out of range");
        require_arg(hist[0] == root_state, "ForesightTree: history does not start at the root");
        int cur = 0;
        for (std::size_t i = 1; i < hist.size(); ++i) {
            require_arg(hist[i] >= 0 && hist[i] < n_z, "ForesightTree: unknown aggregate state");
            cur = child(cur, hist[i]);
        }
        return cur;
    }

    int leaf_node(int ordinal) const { return level_offset[horizon] + ordinal; }
    int leaf_ordinal(int node) const {
        require_arg(is_leaf(node), "ForesightTree: node is not a leaf");
        return node - level_offset[horizon];
    }

    /// Sets every node population and leaf continuation to s0.
    void fill(const PopulationState& s0) {
        for (auto& p : populations) p = s0;
        for (auto& c : continuations) c = s0;
    }

    void validate() const {
        require_arg(node_count() == static_cast<int>(populations.size()),
                    "ForesightTree: population count mismatch");
        require_arg(leaf_count() == static_cast<int>(continuations.size()),
                    "ForesightTree: continuation count mismatch");
        for (const auto& p : populations) p.validate();
        for (const auto& c : continuations) c.validate();
    }
};

/// Node id for a history suffix (the part after the root) of length k in a
/// tree over n_z aggregate states; ids do not depend on the root state.
inline int suffix_node_id(int n_z, std::span<const int> suffix) {
    int offset = 0, level = 1, digits = 0;
    for (int h : suffix) {
        offset += level;
        level *= n_z;
        digits = digits * n_z + h;
    }
    return offset + digits;
}

/// Leaf ordinal (position within the deepest level) for a full-depth suffix.
inline int suffix_leaf_ordinal(int n_z, std::span<const int> suffix) {
    int digits = 0;
    for (int h : suffix) digits = digits * n_z + h;
    return digits;
}

/// Builds the tree skeleton (deterministic breadth-first enumeration,
/// children in z order) with empty populations.
inline ForesightTree build_tree(int root_state, int depth, const AggregateChain& chain) {
    require_arg(depth >= 0, "build_tree: depth must be >= 0");
    require_arg(root_state >= 0 && root_state < chain.size(),
                "build_tree: unknown root aggregate state");
    ForesightTree tree;
    tree.root_state = root_state;
    tree.horizon = depth;
    tree.n_z = chain.size();
    tree.level_offset.assign(depth + 2, 0);
    std::int64_t level = 1;
    for (int k = 0; k <= depth; ++k) {
        tree.level_offset[k + 1] = tree.level_offset[k] + static_cast<int>(level);
        level *= chain.size();
    }
    tree.populations.resize(tree.node_count());
    tree.continuations.resize(tree.leaf_count());
    return tree;
}

/// Builds the tree and initializes every node (and continuation) at s0.
inline ForesightTree build_tree(int root_state, int depth, const AggregateChain& chain,
                                const PopulationState& s0) {
    s0.validate();
    ForesightTree tree = build_tree(root_state, depth, chain);
    tree.fill(s0);
    return tree;
}

// ---------------------------------------------------------------------------
// Population pushforward and continuation rules
// ---------------------------------------------------------------------------

/// One-period law of motion of the histogram: mass at x moves according to
/// the transition row for (x, z_next, policy action at x, s).
inline PopulationState push_forward(const PopulationState& s, int z_next,
                                    std::span<const int> policy_actions,
                                    const ModelSpec& spec) {
    require_arg(z_next >= 0 && z_next < spec.n_aggregate(), "push_forward: unknown z");
    require(s.size() == spec.n_states(), "push_forward: population/grid size mismatch");
    require(static_cast<int>(policy_actions.size()) == spec.n_states(),
            "push_forward: policy/grid size mismatch");
    PopulationState out;
    out.mass.assign(spec.n_states(), 0.0);
    TransitionRow row;
    for (int x = 0; x < spec.n_states(); ++x) {
        const double m = s.mass[x];
        if (m == 0.0) continue;
        const int a = policy_actions[x];
        require(a >= 0 && a < spec.n_actions(x),
                "push_forward: policy action not in the feasible set");
        row.clear();
        spec.transition(x, z_next, a, s, row);
        for (const auto& e : row) out.mass[e.target] += m * e.weight;
    }
    return out;
}

enum class ContinuationRule { last_node, average_path };

inline std::string to_string(ContinuationRule rule) {
    return rule == ContinuationRule::last_node ? "last-node" : "average-path";
}

inline ContinuationRule continuation_rule_from_string(const std::string& name) {
    if (name == "last-node") return ContinuationRule::last_node;
    if (name == "average-path") return ContinuationRule::average_path;
    throw std::invalid_argument("unknown continuation rule: " + name);
}

/// Continuation population for one leaf under the given rule, computed from
/// the tree's current populations.
inline PopulationState continuation_for_leaf(const ForesightTree& tree, int leaf_node,
                                             ContinuationRule rule) {
    require_arg(tree.is_leaf(leaf_node), "continuation_for_leaf: not a depth-N node");
    if (rule == ContinuationRule::last_node) return tree.populations[leaf_node];
    // average-path: pointwise mean of the populations from root to leaf.
    PopulationState acc = tree.populations[leaf_node];
    int cur = leaf_node;
    int count = 1;
    while (tree.depth_of(cur) > 0) {
        cur = tree.parent(cur);
        for (int i = 0; i < acc.size(); ++i) acc.mass[i] += tree.populations[cur].mass[i];
        ++count;
    }
    for (double& m : acc.mass) m /= count;
    return acc;
}

/// Continuation state for a full leaf history (root included, length N+1).
inline PopulationState continuation_state(std::span<const int> leaf_history,
                                          const ForesightTree& tree, ContinuationRule rule) {
    require_arg(static_cast<int>(leaf_history.size()) == tree.horizon + 1,
                "continuation_state: history must name a depth-N node");
    return continuation_for_leaf(tree, tree.node_at(leaf_history), rule);
}

/// Recomputes every leaf continuation from the tree's populations.
inline void refresh_continuations(ForesightTree& tree, ContinuationRule rule) {
    for (int ord = 0; ord < tree.leaf_count(); ++ord)
        tree.continuations[ord] = continuation_for_leaf(tree, tree.leaf_node(ord), rule);
}

}  // namespace bfe
