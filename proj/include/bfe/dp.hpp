#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <list>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "bfe/common.hpp"
#include "bfe/core.hpp"

namespace bfe {

// ---------------------------------------------------------------------------
// Cached tables
// ---------------------------------------------------------------------------

/// Transition rows for every (x, z_next, action id) at one fixed population,
/// deduplicated: identical entry lists (common when the law ignores part of
/// the state) are stored once and referenced by id, so a Bellman sweep needs
/// one dot product per unique row rather than per (x, a, z) triple.
struct KernelTable {
    std::vector<int> action_base;  // per grid point, cumulative action offsets
    int total_actions = 0;
    int n_z = 0;
    int unique_rows = 0;
    std::vector<int> row_of;            // (x,a,z) id -> unique row id
    std::vector<std::int64_t> offsets;  // unique row id -> entry range
    std::vector<TransitionEntry> entries;

    std::int64_t row_id(int x, int a, int z) const {
        return static_cast<std::int64_t>(action_base[x] + a) * n_z + z;
    }
    std::span<const TransitionEntry> unique_row(int u) const {
        return {entries.data() + offsets[u],
                static_cast<std::size_t>(offsets[u + 1] - offsets[u])};
    }
    std::span<const TransitionEntry> row(int x, int a, int z) const {
        return unique_row(row_of[row_id(x, a, z)]);
    }
};

inline KernelTable build_kernel_table(const ModelSpec& spec, const PopulationState& s) {
    KernelTable t;
    const int nx = spec.n_states();
    t.n_z = spec.n_aggregate();
    t.action_base.resize(nx);
    for (int x = 0; x < nx; ++x) {
        t.action_base[x] = t.total_actions;
        t.total_actions += spec.n_actions(x);
    }
    const std::int64_t rows = static_cast<std::int64_t>(t.total_actions) * t.n_z;
    t.row_of.assign(rows, -1);
    t.offsets.assign(1, 0);
    std::unordered_map<std::string, int> seen;
    std::string key;
    TransitionRow row;
    for (int x = 0; x < nx; ++x)
        for (int a = 0; a < spec.n_actions(x); ++a)
            for (int z = 0; z < t.n_z; ++z) {
                row.clear();
                spec.transition(x, z, a, s, row);
                key.clear();
                for (const auto& e : row) {  // padding-free key
                    key.append(reinterpret_cast<const char*>(&e.target), sizeof(e.target));
                    key.append(reinterpret_cast<const char*>(&e.weight), sizeof(e.weight));
                }
                const auto [it, inserted] = seen.emplace(key, t.unique_rows);
                if (inserted) {
                    ++t.unique_rows;
                    t.entries.insert(t.entries.end(), row.begin(), row.end());
                    t.offsets.push_back(static_cast<std::int64_t>(t.entries.size()));
                }
                t.row_of[t.row_id(x, a, z)] = it->second;
            }
    return t;
}

/// Hands out kernel tables per population; when the model's kernel ignores
/// the population the table is built once and shared. At most one table
/// obtained from `at` is valid at a time for population-dependent kernels.
class KernelCache {
public:
    explicit KernelCache(const ModelSpec& spec)
        : spec_(&spec), depends_(spec.kernel_depends_on_population) {
        if (!depends_)
            shared_ = build_kernel_table(spec, PopulationState::uniform(spec.n_states()));
    }
    const KernelTable& at(const PopulationState& s) {
        if (!depends_) return shared_;
        scratch_ = build_kernel_table(*spec_, s);
        return scratch_;
    }

private:
    const ModelSpec* spec_;
    bool depends_;
    KernelTable shared_;
    KernelTable scratch_;
};

/// Payoffs and feasibility for every (x, z, action id) at one population's
/// sufficient statistics. Same row indexing as KernelTable.
struct PayoffTable {
    std::vector<double> value;
    std::vector<std::uint8_t> ok;
    int n_z = 0;
    std::vector<int> action_base;

    std::int64_t row_id(int x, int a, int z) const {
        return static_cast<std::int64_t>(action_base[x] + a) * n_z + z;
    }
};

/// Content-addressed LRU of payoff tables keyed by the exact population.
/// Within a fixed-point solve the same populations recur bitwise once the
/// policy settles, so table construction amortizes to a lookup. Returned
/// references stay valid until the next `at` call.
class PayoffCache {
public:
    explicit PayoffCache(const ModelSpec& spec, int capacity = 32)
        : spec_(&spec), capacity_(capacity) {}

    const PayoffTable& at(const PopulationState& s);

private:
    struct Entry {
        std::vector<double> key;
        PayoffTable table;
    };
    const ModelSpec* spec_;
    int capacity_;
    std::list<Entry> entries_;
};

inline PayoffTable build_payoff_table(const ModelSpec& spec, const PopulationState& s) {
    PayoffTable t;
    const int nx = spec.n_states();
    t.n_z = spec.n_aggregate();
    t.action_base.resize(nx);
    int total = 0;
    for (int x = 0; x < nx; ++x) {
        t.action_base[x] = total;
        total += spec.n_actions(x);
    }
    const std::int64_t rows = static_cast<std::int64_t>(total) * t.n_z;
    t.value.assign(rows, -std::numeric_limits<double>::infinity());
    t.ok.assign(rows, 1);
    const std::vector<double> stats = spec.payoff_stats(s);
    for (int x = 0; x < nx; ++x)
        for (int a = 0; a < spec.n_actions(x); ++a)
            for (int z = 0; z < t.n_z; ++z) {
                const std::int64_t id = t.row_id(x, a, z);
                if (spec.feasible && !spec.feasible(x, z, a, stats)) {
                    t.ok[id] = 0;
                    continue;
                }
                t.value[id] = spec.payoff(x, z, a, stats);
            }
    return t;
}

inline const PayoffTable& PayoffCache::at(const PopulationState& s) {
    for (auto it = entries_.begin(); it != entries_.end(); ++it) {
        if (it->key == s.mass) {
            entries_.splice(entries_.begin(), entries_, it);
            return entries_.front().table;
        }
    }
    if (static_cast<int>(entries_.size()) >= capacity_) entries_.pop_back();
    entries_.push_front({s.mass, build_payoff_table(*spec_, s)});
    return entries_.front().table;
}

// ---------------------------------------------------------------------------
// Stationary tail
// ---------------------------------------------------------------------------

struct DpOptions {
    double tol = 1e-8;
    int max_iter = 10000;
    /// Midpoint extrapolation from the standard beta/(1-beta) error bounds
    /// between sweeps. The returned residual is always measured directly, so
    /// this only changes how fast the target is reached.
    bool accelerate = true;
    /// Fixed-policy evaluation sweeps run after each Bellman sweep. These
    /// cost a fraction of a full sweep (no action search) and push the
    /// values toward the current greedy policy's fixed point, so the
    /// expensive sweeps act as policy-improvement steps. 0 recovers plain
    /// value iteration; the convergence guarantee and the measured stopping
    /// rule are the same either way.
    int eval_sweeps = 300;
};

/// Infinite-horizon value function and greedy policy under a permanently
/// frozen population. Indexing is [z * nx + x].
struct TailSolution {
    std::vector<double> values;
    std::vector<int> policy;
    double residual = std::numeric_limits<double>::infinity();
    int sweeps = 0;
    std::vector<double> residual_trace;  // sup-norm value change per sweep
};

namespace detail {

/// One Bellman application: out = T(values), recording the greedy action.
/// Returns the sup-norm of out - values. Dot products are computed once per
/// (unique kernel row, next-z) pair and then shared across the whole sweep.
inline double bellman_sweep(const ModelSpec& spec, const KernelTable& kernel,
                            const PayoffTable& payoff, std::span<const double> values,
                            std::span<double> out, std::span<int> argmax,
                            std::vector<double>& dot_scratch) {
    const int nx = spec.n_states();
    const int nz = spec.n_aggregate();
    const double beta = spec.discount;

    dot_scratch.resize(static_cast<std::size_t>(kernel.unique_rows) * nz);
    for (int u = 0; u < kernel.unique_rows; ++u) {
        const auto row = kernel.unique_row(u);
        for (int z2 = 0; z2 < nz; ++z2) {
            double acc = 0.0;
            for (const auto& e : row)
                acc += e.weight * values[static_cast<std::size_t>(z2) * nx + e.target];
            dot_scratch[static_cast<std::size_t>(u) * nz + z2] = acc;
        }
    }

    double delta = 0.0;
    for (int x = 0; x < nx; ++x) {
        const int na = spec.n_actions(x);
        const std::int64_t base = static_cast<std::int64_t>(kernel.action_base[x]) * nz;
        for (int z = 0; z < nz; ++z) {
            const auto& prow = spec.chain.transition[z];
            double best = -std::numeric_limits<double>::infinity();
            int best_a = -1;
            for (int a = 0; a < na; ++a) {
                const std::int64_t pid = base + static_cast<std::int64_t>(a) * nz + z;
                if (!payoff.ok[pid]) continue;
                double cont = 0.0;
                for (int z2 = 0; z2 < nz; ++z2) {
                    const int u = kernel.row_of[base + static_cast<std::int64_t>(a) * nz + z2];
                    cont += prow[z2] * dot_scratch[static_cast<std::size_t>(u) * nz + z2];
                }
                const double rhs = payoff.value[pid] + beta * cont;
                if (rhs > best) {
                    best = rhs;
                    best_a = a;
                }
            }
            if (best_a < 0)
                throw contract_error("bellman_sweep: no feasible action at a grid point");
            const std::size_t idx = static_cast<std::size_t>(z) * nx + x;
            out[idx] = best;
            argmax[idx] = best_a;
            delta = std::max(delta, std::abs(best - values[idx]));
        }
    }
    return delta;
}

inline double bellman_sweep(const ModelSpec& spec, const KernelTable& kernel,
                            const PayoffTable& payoff, std::span<const double> values,
                            std::span<double> out, std::span<int> argmax) {
    std::vector<double> scratch;
    return bellman_sweep(spec, kernel, payoff, values, out, argmax, scratch);
}

/// Fixed-policy evaluation sweeps with midpoint extrapolation, in place.
/// The policy map is affine, so the beta/(1-beta) bounds are exact and the
/// iteration is monotone under the shifts.
inline void policy_eval_phase(const ModelSpec& spec, const KernelTable& kernel,
                              const PayoffTable& payoff, std::span<const int> policy,
                              std::span<double> values, int max_sweeps, double stop_delta,
                              bool accelerate, std::vector<double>& dot_scratch,
                              std::vector<double>& next_scratch) {
    const int nx = spec.n_states();
    const int nz = spec.n_aggregate();
    const double beta = spec.discount;
    const double shift_factor = beta / (1.0 - beta);
    next_scratch.resize(values.size());
    dot_scratch.resize(static_cast<std::size_t>(kernel.unique_rows) * nz);
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        for (int u = 0; u < kernel.unique_rows; ++u) {
            const auto row = kernel.unique_row(u);
            for (int z2 = 0; z2 < nz; ++z2) {
                double acc = 0.0;
                for (const auto& e : row)
                    acc += e.weight * values[static_cast<std::size_t>(z2) * nx + e.target];
                dot_scratch[static_cast<std::size_t>(u) * nz + z2] = acc;
            }
        }
        double mn = std::numeric_limits<double>::infinity();
        double mx = -std::numeric_limits<double>::infinity();
        for (int x = 0; x < nx; ++x) {
            const std::int64_t base = static_cast<std::int64_t>(kernel.action_base[x]) * nz;
            for (int z = 0; z < nz; ++z) {
                const std::size_t idx = static_cast<std::size_t>(z) * nx + x;
                const int a = policy[idx];
                const auto& prow = spec.chain.transition[z];
                double cont = 0.0;
                for (int z2 = 0; z2 < nz; ++z2) {
                    const int u = kernel.row_of[base + static_cast<std::int64_t>(a) * nz + z2];
                    cont += prow[z2] * dot_scratch[static_cast<std::size_t>(u) * nz + z2];
                }
                const double rhs =
                    payoff.value[base + static_cast<std::int64_t>(a) * nz + z] + beta * cont;
                next_scratch[idx] = rhs;
                const double d = rhs - values[idx];
                mn = std::min(mn, d);
                mx = std::max(mx, d);
            }
        }
        const double mid = (accelerate && sweep >= 1) ? shift_factor * 0.5 * (mn + mx) : 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) values[i] = next_scratch[i] + mid;
        if (std::max(std::abs(mn), std::abs(mx)) < stop_delta) break;
    }
}

}  // namespace detail

/// Solves the stationary dynamic program under the frozen population s_c by
/// value iteration. The returned residual is the measured sup-norm Bellman
/// defect of the returned values and is < tol on success; the policy is
/// greedy with respect to the returned values with ties broken toward the
/// smallest action index.
inline TailSolution solve_stationary_tail(const ModelSpec& spec, const PopulationState& s_c,
                                          const DpOptions& opt = {},
                                          const KernelTable* kernel = nullptr,
                                          std::span<const double> warm_start = {},
                                          PayoffCache* payoff_cache = nullptr) {
    require_arg(opt.tol > 0.0, "solve_stationary_tail: tol must be positive");
    const int nx = spec.n_states();
    const int nz = spec.n_aggregate();
    const std::size_t n = static_cast<std::size_t>(nx) * nz;
    const double beta = spec.discount;

    KernelTable local;
    if (!kernel) {
        local = build_kernel_table(spec, s_c);
        kernel = &local;
    }
    PayoffTable payoff_local;
    if (!payoff_cache) payoff_local = build_payoff_table(spec, s_c);
    const PayoffTable& payoff = payoff_cache ? payoff_cache->at(s_c) : payoff_local;

    TailSolution sol;
    sol.values.assign(n, 0.0);
    if (warm_start.size() == n)
        std::copy(warm_start.begin(), warm_start.end(), sol.values.begin());
    sol.policy.assign(n, -1);
    std::vector<double> next(n, 0.0);
    std::vector<double> dots;
    std::vector<double> eval_scratch;

    const double shift_factor = beta / (1.0 - beta);
    double last_delta = std::numeric_limits<double>::infinity();
    for (int iter = 1; iter <= opt.max_iter; ++iter) {
        const double delta =
            detail::bellman_sweep(spec, *kernel, payoff, sol.values, next, sol.policy, dots);
        sol.residual_trace.push_back(delta);
        sol.sweeps = iter;
        last_delta = delta;
        if (beta * delta < opt.tol) {
            // next = T(values): its own Bellman defect is at most beta*delta.
            // One verification pass measures it and refreshes the greedy policy.
            std::vector<double> check(n);
            sol.residual =
                detail::bellman_sweep(spec, *kernel, payoff, next, check, sol.policy, dots);
            sol.residual_trace.push_back(sol.residual);
            sol.values.swap(next);
            if (sol.residual < opt.tol) return sol;
            // Numerical edge: keep iterating from the verified point.
            next = check;
        }
        if (opt.accelerate && iter >= 2) {
            // Midpoint of the beta/(1-beta) bounds: kills the common error
            // component, leaving the span to contract at the mixing rate.
            double mn = std::numeric_limits<double>::infinity();
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < n; ++i) {
                const double d = next[i] - sol.values[i];
                mn = std::min(mn, d);
                mx = std::max(mx, d);
            }
            const double mid = shift_factor * 0.5 * (mn + mx);
            for (std::size_t i = 0; i < n; ++i) sol.values[i] = next[i] + mid;
        } else {
            sol.values.swap(next);
        }
        if (opt.eval_sweeps > 0)
            detail::policy_eval_phase(spec, *kernel, payoff, sol.policy, sol.values,
                                      opt.eval_sweeps, 0.25 * opt.tol, opt.accelerate, dots,
                                      eval_scratch);
    }
    throw convergence_error("solve_stationary_tail: max_iter reached", beta * last_delta,
                            opt.max_iter);
}

// ---------------------------------------------------------------------------
// Tree backward induction
// ---------------------------------------------------------------------------

/// Values per (grid point, tree node) plus the stationary tail table of each
/// depth-N leaf. A depth-N node is valued inside the frozen-continuation
/// regime, i.e. its column equals its tail evaluated at the node's z.
struct ValueTable {
    std::vector<std::vector<double>> node_values;  // [node][x]
    std::vector<std::vector<double>> tail_values;  // [leaf ordinal][z*nx+x]
};

struct PolicyTable {
    std::vector<std::vector<int>> node_actions;  // [node][x], action ids
    std::vector<std::vector<int>> tail_actions;  // [leaf ordinal][z*nx+x]
};

/// Finite backward induction through the tree against solved leaf tails.
/// At a node of depth k < N the Bellman step uses the node's own population
/// in both payoff and transition, and values the successor for shock z_i at
/// the child node.
inline std::pair<ValueTable, PolicyTable> backward_induction(const ForesightTree& tree,
                                                             const ModelSpec& spec,
                                                             std::span<const TailSolution> tails,
                                                             KernelCache* cache = nullptr,
                                                             PayoffCache* payoff_cache = nullptr) {
    require(static_cast<int>(tails.size()) == tree.leaf_count(),
            "backward_induction: one solved tail per depth-N leaf required");
    const int nx = spec.n_states();
    const int nz = spec.n_aggregate();
    const double beta = spec.discount;

    ValueTable values;
    PolicyTable policy;
    values.node_values.assign(tree.node_count(), std::vector<double>(nx, 0.0));
    policy.node_actions.assign(tree.node_count(), std::vector<int>(nx, -1));
    values.tail_values.resize(tree.leaf_count());
    policy.tail_actions.resize(tree.leaf_count());

    for (int ord = 0; ord < tree.leaf_count(); ++ord) {
        require(tails[ord].values.size() == static_cast<std::size_t>(nx) * nz,
                "backward_induction: tail table has wrong shape");
        values.tail_values[ord] = tails[ord].values;
        policy.tail_actions[ord] = tails[ord].policy;
        const int node = tree.leaf_node(ord);
        const int z = tree.z_of(node);
        for (int x = 0; x < nx; ++x) {
            values.node_values[node][x] = tails[ord].values[static_cast<std::size_t>(z) * nx + x];
            policy.node_actions[node][x] = tails[ord].policy[static_cast<std::size_t>(z) * nx + x];
        }
    }

    KernelCache local_cache{spec};
    if (!cache) cache = &local_cache;

    for (int depth = tree.horizon - 1; depth >= 0; --depth) {
        for (int node = tree.level_offset[depth]; node < tree.level_offset[depth + 1]; ++node) {
            const PopulationState& s_node = tree.populations[node];
            const KernelTable& kernel = cache->at(s_node);
            PayoffTable payoff_local;
            if (!payoff_cache) payoff_local = build_payoff_table(spec, s_node);
            const PayoffTable& payoff =
                payoff_cache ? payoff_cache->at(s_node) : payoff_local;
            const int z = tree.z_of(node);
            const auto& prow = spec.chain.transition[z];
            for (int x = 0; x < nx; ++x) {
                double best = -std::numeric_limits<double>::infinity();
                int best_a = -1;
                for (int a = 0; a < spec.n_actions(x); ++a) {
                    const std::int64_t pid = payoff.row_id(x, a, z);
                    if (!payoff.ok[pid]) continue;
                    double cont = 0.0;
                    for (int zi = 0; zi < nz; ++zi) {
                        const double pz = prow[zi];
                        if (pz == 0.0) continue;
                        const auto& child_values = values.node_values[tree.child(node, zi)];
                        double ev = 0.0;
                        for (const auto& e : kernel.row(x, a, zi))
                            ev += e.weight * child_values[e.target];
                        cont += pz * ev;
                    }
                    const double rhs = payoff.value[pid] + beta * cont;
                    if (rhs > best) {
                        best = rhs;
                        best_a = a;
                    }
                }
                if (best_a < 0)
                    throw contract_error("backward_induction: no feasible action at a node");
                values.node_values[node][x] = best;
                policy.node_actions[node][x] = best_a;
            }
        }
    }
    return {std::move(values), std::move(policy)};
}

/// Sup-norm Bellman defect of a complete solution: the worst defect over the
/// leaf tail equations (under each leaf's stored continuation) and the tree
/// equations at every node. Zero for an exact solution.
inline double bellman_residual(const ValueTable& values, const ForesightTree& tree,
                               const ModelSpec& spec, KernelCache* cache = nullptr) {
    const int nx = spec.n_states();
    const int nz = spec.n_aggregate();
    const double beta = spec.discount;
    require(static_cast<int>(values.node_values.size()) == tree.node_count(),
            "bellman_residual: node value table has wrong shape");
    require(static_cast<int>(values.tail_values.size()) == tree.leaf_count(),
            "bellman_residual: tail table count mismatch");

    KernelCache local_cache{spec};
    if (!cache) cache = &local_cache;
    double worst = 0.0;

    // Tail equations at each leaf's continuation population.
    std::vector<double> out(static_cast<std::size_t>(nx) * nz);
    std::vector<int> arg(out.size());
    for (int ord = 0; ord < tree.leaf_count(); ++ord) {
        const PopulationState& s_c = tree.continuations[ord];
        const KernelTable& kernel = cache->at(s_c);
        const PayoffTable payoff = build_payoff_table(spec, s_c);  // diagnostics: uncached
        const double defect =
            detail::bellman_sweep(spec, kernel, payoff, values.tail_values[ord], out, arg);
        worst = std::max(worst, defect);
        // Leaf node columns must agree with the tail at the leaf's z.
        const int node = tree.leaf_node(ord);
        const int z = tree.z_of(node);
        for (int x = 0; x < nx; ++x)
            worst = std::max(worst, std::abs(values.node_values[node][x] -
                                             values.tail_values[ord][static_cast<std::size_t>(z) *
                                                                         nx +
                                                                     x]));
    }

    // Tree equations at interior nodes.
    for (int depth = 0; depth < tree.horizon; ++depth) {
        for (int node = tree.level_offset[depth]; node < tree.level_offset[depth + 1]; ++node) {
            const PopulationState& s_node = tree.populations[node];
            const KernelTable& kernel = cache->at(s_node);
            const PayoffTable payoff = build_payoff_table(spec, s_node);
            const int z = tree.z_of(node);
            const auto& prow = spec.chain.transition[z];
            for (int x = 0; x < nx; ++x) {
                double best = -std::numeric_limits<double>::infinity();
                for (int a = 0; a < spec.n_actions(x); ++a) {
                    const std::int64_t pid = payoff.row_id(x, a, z);
                    if (!payoff.ok[pid]) continue;
                    double cont = 0.0;
                    for (int zi = 0; zi < nz; ++zi) {
                        const double pz = prow[zi];
                        if (pz == 0.0) continue;
                        const auto& child_values = values.node_values[tree.child(node, zi)];
                        double ev = 0.0;
                        for (const auto& e : kernel.row(x, a, zi))
                            ev += e.weight * child_values[e.target];
                        cont += pz * ev;
                    }
                    best = std::max(best, payoff.value[pid] + beta * cont);
                }
                worst = std::max(worst, std::abs(values.node_values[node][x] - best));
            }
        }
    }
    return worst;
}

}  // namespace bfe
