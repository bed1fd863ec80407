#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bfe/common.hpp"
#include "bfe/core.hpp"
#include "bfe/equilibrium.hpp"
#include "bfe/parallel.hpp"
#include "bfe/rng.hpp"

namespace bfe {

enum class PropagationMode { exact, sampled };

inline std::string to_string(PropagationMode mode) {
    return mode == PropagationMode::exact ? "exact" : "sampled";
}

struct EnsembleConfig {
    int n_paths = 1;
    int periods = 1;     // T
    int foresight = 0;   // N
    std::uint64_t base_seed = 0;
    int burn_in = 0;
    /// Pre-simulation periods at the fixed initial aggregate state; shapes
    /// the starting population without consuming any random draws.
    int warmup_periods = 0;
    PropagationMode propagation = PropagationMode::exact;
    int sample_agents = 1000;  // sampled mode only
    SolveConfig solver;
    int threads = 1;

    void validate() const {
        require_arg(n_paths >= 1, "EnsembleConfig: n_paths must be >= 1");
        require_arg(periods >= 1, "EnsembleConfig: periods must be >= 1");
        require_arg(foresight >= 0, "EnsembleConfig: foresight must be >= 0");
        require_arg(burn_in >= 0, "EnsembleConfig: burn_in must be >= 0");
        require_arg(warmup_periods >= 0, "EnsembleConfig: warmup_periods must be >= 0");
        require_arg(sample_agents >= 1, "EnsembleConfig: sample_agents must be >= 1");
        require_arg(threads >= 1, "EnsembleConfig: threads must be >= 1");
        solver.validate();
    }
};

struct PeriodRecord {
    int t = 0;
    int z_index = 0;
    double z_value = 0.0;
    PopulationState population;  // realized s_t
    double stat = 0.0;           // aggregate statistic of s_t
    ForesightTree forecast;      // converged tree used this period
    double residual = 0.0;
    int iterations = 0;
    bool converged = false;
    bool guard_ok = true;
};

struct SimulationRecord {
    int path_id = 0;
    std::uint64_t path_seed = 0;
    int foresight = 0;
    std::vector<PeriodRecord> periods;

    bool all_converged() const {
        for (const auto& p : periods)
            if (!p.converged) return false;
        return true;
    }
};

namespace detail {

/// Warm-start tree for the next period: node (z', h1..hk) is seeded with the
/// previous tree's forecast for that same calendar period, which is its
/// depth-(k+1) node when one exists and the corresponding leaf continuation
/// beyond the window.
inline ForesightTree shift_tree(const ForesightTree& prev, int realized_z,
                                const AggregateChain& chain) {
    ForesightTree next = build_tree(realized_z, prev.horizon, chain);
    std::vector<int> hist;
    for (int node = 0; node < next.node_count(); ++node) {
        hist = next.history(node);  // (z', h1..hk)
        if (static_cast<int>(hist.size()) <= prev.horizon) {
            hist.insert(hist.begin(), prev.root_state);
            next.populations[node] = prev.populations[prev.node_at(hist)];
        } else {
            hist.pop_back();
            hist.insert(hist.begin(), prev.root_state);
            const int leaf = prev.node_at(hist);
            next.populations[node] = prev.continuations[prev.leaf_ordinal(leaf)];
        }
    }
    refresh_continuations(next, ContinuationRule::last_node);
    return next;
}

/// Remaps the previous period's tail solutions onto the shifted tree's
/// leaves: the new leaf (z', h1..hN) reuses the tail of the old leaf
/// (z_prev, z', h1..h_{N-1}).
inline std::vector<TailSolution> shift_tails(const ForesightTree& prev, int realized_z,
                                             const ForesightTree& next,
                                             const std::vector<TailSolution>& prev_tails) {
    std::vector<TailSolution> out(next.leaf_count());
    std::vector<int> hist;
    for (int ord = 0; ord < next.leaf_count(); ++ord) {
        hist = next.history(next.leaf_node(ord));  // (z', h1..hN)
        hist.pop_back();
        hist.insert(hist.begin(), prev.root_state);
        const int prev_leaf = prev.node_at(hist);
        out[ord] = prev_tails[prev.leaf_ordinal(prev_leaf)];
    }
    return out;
}

/// Deterministic largest-remainder allocation of n agents to a histogram.
inline std::vector<int> allocate_agents(const PopulationState& s, int n) {
    const int nx = s.size();
    std::vector<int> count(nx, 0);
    std::vector<std::pair<double, int>> remainder(nx);
    int assigned = 0;
    for (int i = 0; i < nx; ++i) {
        const double ideal = s.mass[i] * n;
        count[i] = static_cast<int>(ideal);
        assigned += count[i];
        remainder[i] = {ideal - count[i], i};
    }
    std::sort(remainder.begin(), remainder.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (int k = 0; k < n - assigned; ++k) ++count[remainder[k % nx].second];
    std::vector<int> agents;
    agents.reserve(n);
    for (int i = 0; i < nx; ++i)
        for (int c = 0; c < count[i]; ++c) agents.push_back(i);
    return agents;
}

}  // namespace detail

/// The deterministic pre-simulation phase on its own: `periods` solves at
/// the fixed aggregate state z0, each followed by a pushforward.
inline PopulationState warmup_population(const ModelSpec& spec, const PopulationState& s0,
                                         int z0, int periods, const SolveConfig& solver,
                                         int foresight) {
    PopulationState s = s0;
    KernelCache cache{spec};
    EquilibriumResult prev;
    bool have_prev = false;
    for (int w = 0; w < periods; ++w) {
        WarmStart warm;
        ForesightTree warm_tree;
        std::vector<TailSolution> warm_tails;
        if (have_prev) {
            warm_tree = detail::shift_tree(prev.tree, z0, spec.chain);
            warm_tails = detail::shift_tails(prev.tree, z0, warm_tree, prev.tails);
            warm.tree = &warm_tree;
            warm.tails = warm_tails;
        }
        prev = solve_nbfe(z0, s, foresight, spec, solver, have_prev ? &warm : nullptr, &cache);
        have_prev = true;
        s = push_forward(s, z0, prev.policy.node_actions[0], spec);
    }
    return s;
}

/// Rolling-horizon simulation of one path: each period the equilibrium is
/// re-solved at the realized (z_t, s_t), the forecast tree is recorded, the
/// aggregate state advances on its own random stream, and the population
/// advances under the root policy (exactly on the histogram by default, or
/// through a finite panel of sampled agents).
inline SimulationRecord simulate_path(const ModelSpec& spec, const PopulationState& s0, int z0,
                                      const EnsembleConfig& cfg, int path_id) {
    cfg.validate();
    s0.validate();
    require_arg(z0 >= 0 && z0 < spec.n_aggregate(), "simulate_path: unknown initial z");

    SimulationRecord record;
    record.path_id = path_id;
    record.path_seed = derive_seed(cfg.base_seed, static_cast<std::uint64_t>(path_id));
    record.foresight = cfg.foresight;
    record.periods.reserve(cfg.periods);

    RandomStream aggregate_stream(derive_seed(record.path_seed, 1));
    RandomStream idiosyncratic_stream(derive_seed(record.path_seed, 2));

    PopulationState s = s0;
    int z = z0;
    KernelCache kernel_cache{spec};
    EquilibriumResult prev;
    bool have_prev = false;

    auto solve_at = [&](int z_now, const PopulationState& s_now) {
        WarmStart warm;
        ForesightTree warm_tree;
        std::vector<TailSolution> warm_tails;
        if (have_prev) {
            warm_tree = detail::shift_tree(prev.tree, z_now, spec.chain);
            warm_tails = detail::shift_tails(prev.tree, z_now, warm_tree, prev.tails);
            warm.tree = &warm_tree;
            warm.tails = warm_tails;
        }
        return solve_nbfe(z_now, s_now, cfg.foresight, spec, cfg.solver,
                          have_prev ? &warm : nullptr, &kernel_cache);
    };

    if (cfg.warmup_periods > 0)
        s = warmup_population(spec, s, z, cfg.warmup_periods, cfg.solver, cfg.foresight);

    std::vector<int> agents;
    if (cfg.propagation == PropagationMode::sampled) {
        agents = detail::allocate_agents(s, cfg.sample_agents);
        PopulationState empirical;
        empirical.mass.assign(spec.n_states(), 0.0);
        for (int a : agents) empirical.mass[a] += 1.0 / cfg.sample_agents;
        s = empirical;
    }

    TransitionRow row;
    for (int t = 0; t < cfg.periods; ++t) {
        prev = solve_at(z, s);
        have_prev = true;

        PeriodRecord period;
        period.t = t;
        period.z_index = z;
        period.z_value = spec.chain.values[z];
        period.population = s;
        period.stat = spec.aggregate_stat(s);
        period.forecast = prev.tree;
        period.residual = prev.residual;
        period.iterations = prev.iterations;
        period.converged = prev.converged;
        period.guard_ok = spec.population_guard ? spec.population_guard(s) : true;
        record.periods.push_back(std::move(period));

        if (t + 1 == cfg.periods) break;
        const int z_next = aggregate_stream.categorical(spec.chain.transition[z]);
        std::span<const int> root_policy = prev.policy.node_actions[0];
        if (cfg.propagation == PropagationMode::exact) {
            s = push_forward(s, z_next, root_policy, spec);
        } else {
            PopulationState empirical;
            empirical.mass.assign(spec.n_states(), 0.0);
            for (int& agent : agents) {
                row.clear();
                spec.transition(agent, z_next, root_policy[agent], s, row);
                const double u = idiosyncratic_stream.u01();
                double cum = 0.0;
                int target = row.back().target;
                for (const auto& e : row) {
                    cum += e.weight;
                    if (u < cum) {
                        target = e.target;
                        break;
                    }
                }
                agent = target;
            }
            for (int a : agents) empirical.mass[a] += 1.0 / cfg.sample_agents;
            s = empirical;
        }
        z = z_next;
    }
    return record;
}

/// Independent paths with seeds split off base_seed by path index; each path
/// is individually reproducible and the set is thread-count invariant. The
/// warmup phase consumes no random draws and is identical across paths, so
/// it runs once up front.
inline std::vector<SimulationRecord> simulate_ensemble(const ModelSpec& spec,
                                                       const PopulationState& s0, int z0,
                                                       const EnsembleConfig& cfg) {
    cfg.validate();
    PopulationState start = s0;
    EnsembleConfig per_path = cfg;
    if (cfg.warmup_periods > 0) {
        start = warmup_population(spec, s0, z0, cfg.warmup_periods, cfg.solver, cfg.foresight);
        per_path.warmup_periods = 0;
    }
    std::vector<SimulationRecord> records(cfg.n_paths);
    parallel_for(cfg.n_paths, cfg.threads,
                 [&](int path) { records[path] = simulate_path(spec, start, z0, per_path, path); });
    return records;
}

/// Ensembles for several foresight depths on identical shock paths. All
/// configurations must agree on everything that feeds the random streams.
inline std::vector<std::vector<SimulationRecord>> shared_shock_ensemble(
    const ModelSpec& spec, const PopulationState& s0, int z0,
    std::span<const EnsembleConfig> cfgs) {
    require_arg(!cfgs.empty(), "shared_shock_ensemble: no configurations");
    for (const auto& cfg : cfgs) {
        require_arg(cfg.n_paths == cfgs.front().n_paths &&
                        cfg.periods == cfgs.front().periods &&
                        cfg.base_seed == cfgs.front().base_seed,
                    "shared_shock_ensemble: configurations must share paths, periods and seed");
    }
    std::vector<std::vector<SimulationRecord>> out;
    out.reserve(cfgs.size());
    for (const auto& cfg : cfgs) out.push_back(simulate_ensemble(spec, s0, z0, cfg));
    return out;
}

}  // namespace bfe
