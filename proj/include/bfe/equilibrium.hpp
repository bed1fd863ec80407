#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "bfe/common.hpp"
#include "bfe/core.hpp"
#include "bfe/dp.hpp"

namespace bfe {

struct SolveConfig {
    double tol = 1e-6;       // L1 tolerance on node populations
    int max_iter = 500;
    double damping = 0.5;    // lambda in (0,1]; 1 = undamped
    ContinuationRule continuation_rule = ContinuationRule::last_node;
    DpOptions dp;
    /// Give up early when the residual has not improved for this many
    /// iterations (a policy-tie cycle cannot fall below the jump size).
    /// 0 disables the check.
    int stall_window = 15;

    void validate() const {
        require_arg(tol > 0.0, "SolveConfig: tol must be positive");
        require_arg(max_iter >= 1, "SolveConfig: max_iter must be >= 1");
        require_arg(damping > 0.0 && damping <= 1.0, "SolveConfig: damping must be in (0,1]");
        require_arg(stall_window >= 0, "SolveConfig: stall_window must be >= 0");
    }
};

struct EquilibriumResult {
    ForesightTree tree;
    ValueTable values;
    PolicyTable policy;
    std::vector<TailSolution> tails;  // per leaf ordinal, consistent with `values`
    double residual = std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
    std::vector<double> residual_trace;
    SolveConfig config;
};

/// One application of the population-dynamics operator: the root is kept,
/// every child population is the pushforward of its parent's input
/// population under the parent-node policy and the child's aggregate state,
/// and leaf continuations are recomputed from the output populations.
inline ForesightTree phi_operator(const ForesightTree& tree, const PolicyTable& policy,
                                  const ModelSpec& spec,
                                  ContinuationRule rule = ContinuationRule::last_node) {
    require(static_cast<int>(policy.node_actions.size()) == tree.node_count(),
            "phi_operator: policy does not match the tree");
    ForesightTree out = tree;
    for (int depth = 0; depth < tree.horizon; ++depth) {
        for (int node = tree.level_offset[depth]; node < tree.level_offset[depth + 1]; ++node) {
            for (int zi = 0; zi < tree.n_z; ++zi) {
                out.populations[tree.child(node, zi)] =
                    push_forward(tree.populations[node], zi, policy.node_actions[node], spec);
            }
        }
    }
    refresh_continuations(out, rule);
    return out;
}

/// Optional warm start for solve_nbfe: an initial tree (its root population
/// is overridden by s0) and tail value guesses per leaf ordinal.
struct WarmStart {
    const ForesightTree* tree = nullptr;
    std::span<const TailSolution> tails = {};
};

/// Computes an N-bounded-foresight equilibrium by damped fixed-point
/// iteration: solve the dynamic program against the current tree, apply the
/// population-dynamics operator, mix with factor `damping`, and repeat until
/// the operator moves no node by more than tol in L1. The root population is
/// anchored at s0 throughout. Non-convergence is reported through the
/// `converged` flag with the residual trace attached, not as an exception.
inline EquilibriumResult solve_nbfe(int root_state, const PopulationState& s0, int horizon,
                                    const ModelSpec& spec, const SolveConfig& cfg = {},
                                    const WarmStart* warm = nullptr,
                                    KernelCache* kernel_cache = nullptr) {
    cfg.validate();
    s0.validate();
    require_arg(horizon >= 0, "solve_nbfe: horizon must be >= 0");
    require(s0.size() == spec.n_states(), "solve_nbfe: s0 does not match the grid");

    EquilibriumResult result;
    result.config = cfg;

    ForesightTree tree = build_tree(root_state, horizon, spec.chain, s0);
    if (warm && warm->tree && warm->tree->horizon == horizon &&
        warm->tree->n_z == spec.n_aggregate() && warm->tree->root_state == root_state &&
        !warm->tree->populations.empty() &&
        warm->tree->populations.front().size() == spec.n_states()) {
        tree = *warm->tree;
        tree.populations[0] = s0;
        refresh_continuations(tree, cfg.continuation_rule);
    }

    KernelCache local_cache{spec};
    KernelCache& cache = kernel_cache ? *kernel_cache : local_cache;
    PayoffCache payoff_cache{spec, 4 * (tree.node_count() + tree.leaf_count())};
    std::vector<TailSolution> tails(tree.leaf_count());
    bool have_tails = false;
    if (warm && static_cast<int>(warm->tails.size()) == tree.leaf_count() &&
        !warm->tails.empty() &&
        warm->tails.front().values.size() ==
            static_cast<std::size_t>(spec.n_states()) * spec.n_aggregate()) {
        tails.assign(warm->tails.begin(), warm->tails.end());
        have_tails = true;
    }

    // Tail solutions keyed by the exact continuation they were solved under.
    // Across iterations the continuations often repeat bitwise (once the
    // policy stabilizes, and on both sides of a policy-tie cycle), making
    // the re-solve a lookup.
    struct LeafMemo {
        std::vector<double> key;
        TailSolution sol;
        bool valid = false;
    };
    std::vector<std::array<LeafMemo, 2>> memo(tree.leaf_count());

    double best_residual = std::numeric_limits<double>::infinity();
    int best_iter = 0;
    for (int iter = 1; iter <= cfg.max_iter; ++iter) {
        ValueTable values;
        PolicyTable policy;
        try {
            for (int ord = 0; ord < tree.leaf_count(); ++ord) {
                const PopulationState& s_c = tree.continuations[ord];
                auto& slots = memo[ord];
                if (slots[0].valid && slots[0].key == s_c.mass) {
                    tails[ord] = slots[0].sol;
                    continue;
                }
                if (slots[1].valid && slots[1].key == s_c.mass) {
                    std::swap(slots[0], slots[1]);
                    tails[ord] = slots[0].sol;
                    continue;
                }
                std::span<const double> guess =
                    have_tails ? std::span<const double>(tails[ord].values)
                               : std::span<const double>();
                tails[ord] = solve_stationary_tail(spec, s_c, cfg.dp, &cache.at(s_c), guess,
                                                   &payoff_cache);
                slots[1] = std::move(slots[0]);
                slots[0] = {s_c.mass, tails[ord], true};
            }
            have_tails = true;
            std::tie(values, policy) =
                backward_induction(tree, spec, tails, &cache, &payoff_cache);
        } catch (const convergence_error& e) {
            // A tail failed to converge: surface as a non-converged result if
            // an earlier coherent iterate exists, otherwise rethrow.
            if (result.iterations == 0) throw;
            result.converged = false;
            return result;
        }

        const ForesightTree phi = phi_operator(tree, policy, spec, cfg.continuation_rule);
        double residual = 0.0;
        for (int node = 1; node < tree.node_count(); ++node)
            residual = std::max(residual, l1_distance(phi.populations[node],
                                                      tree.populations[node]));
        result.residual_trace.push_back(residual);
        result.iterations = iter;
        if (residual < best_residual) {
            // Keep the best coherent iterate seen so far.
            best_residual = residual;
            best_iter = iter;
            result.tree = tree;
            result.values = std::move(values);
            result.policy = std::move(policy);
            result.tails = tails;
            result.residual = residual;
        }
        if (residual < cfg.tol) {
            result.converged = true;
            return result;
        }
        if (iter == cfg.max_iter) break;
        if (cfg.stall_window > 0 && iter - best_iter >= cfg.stall_window) break;
        // A policy flipping across a tie produces an exactly repeating
        // residual; once two interleaved repeats are seen without any
        // improvement the cycle is certain and iterating further is wasted.
        const auto& trace = result.residual_trace;
        const std::size_t k = trace.size();
        if (k >= 6 && iter - best_iter >= 4 &&
            std::abs(trace[k - 1] - trace[k - 3]) <= 1e-9 * (1.0 + trace[k - 1]) &&
            std::abs(trace[k - 2] - trace[k - 4]) <= 1e-9 * (1.0 + trace[k - 2]))
            break;
        for (int node = 1; node < tree.node_count(); ++node)
            mix_into(tree.populations[node], phi.populations[node], cfg.damping);
        refresh_continuations(tree, cfg.continuation_rule);
    }
    result.converged = false;
    return result;
}

/// The three equilibrium defect measures: Bellman optimality, population
/// consistency (stored child vs fresh pushforward of its parent), and
/// information consistency (stored continuation vs the continuation rule).
struct ConsistencyReport {
    double optimality = 0.0;
    double population = 0.0;
    double information = 0.0;
};

inline ConsistencyReport check_consistency(const EquilibriumResult& result,
                                           const ModelSpec& spec) {
    ConsistencyReport report;
    const ForesightTree& tree = result.tree;
    report.optimality = bellman_residual(result.values, tree, spec);
    for (int depth = 0; depth < tree.horizon; ++depth) {
        for (int node = tree.level_offset[depth]; node < tree.level_offset[depth + 1]; ++node) {
            for (int zi = 0; zi < tree.n_z; ++zi) {
                const PopulationState fresh = push_forward(
                    tree.populations[node], zi, result.policy.node_actions[node], spec);
                report.population =
                    std::max(report.population,
                             l1_distance(fresh, tree.populations[tree.child(node, zi)]));
            }
        }
    }
    for (int ord = 0; ord < tree.leaf_count(); ++ord) {
        const PopulationState expected =
            continuation_for_leaf(tree, tree.leaf_node(ord), result.config.continuation_rule);
        report.information =
            std::max(report.information, l1_distance(expected, tree.continuations[ord]));
    }
    return report;
}

}  // namespace bfe
