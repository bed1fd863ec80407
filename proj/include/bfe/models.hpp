#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "bfe/common.hpp"
#include "bfe/core.hpp"

namespace bfe {

// ---------------------------------------------------------------------------
// Shared pieces
// ---------------------------------------------------------------------------

/// Evenly spaced grid on [lo, hi] bent by `curvature` (1 = linear; larger
/// values concentrate points near lo).
inline std::vector<double> curved_grid(double lo, double hi, int n, double curvature = 1.0) {
    require_arg(n >= 2, "curved_grid: need at least 2 points");
    require_arg(hi > lo, "curved_grid: empty range");
    require_arg(curvature > 0.0, "curved_grid: curvature must be positive");
    std::vector<double> g(n);
    for (int i = 0; i < n; ++i) {
        const double u = static_cast<double>(i) / (n - 1);
        g[i] = lo + (hi - lo) * std::pow(u, curvature);
    }
    g.front() = lo;
    g.back() = hi;
    return g;
}

/// Success/depreciation investment dynamics on levels 0..M: one level up
/// with probability a/(1+a) on success, one level down with probability
/// delta, at the boundaries the outward mass folds into staying put.
inline void investment_transition(int level, int max_level, double delta, double a,
                                  TransitionRow& out) {
    const double down = delta / (1.0 + a);
    const double up = (1.0 - delta) * a / (1.0 + a);
    double stay = 1.0 - down - up;
    double pd = down, pu = up;
    if (level == 0) {
        stay += pd;
        pd = 0.0;
    }
    if (level == max_level) {
        stay += pu;
        pu = 0.0;
    }
    if (pd > 0.0) out.push_back({level - 1, pd});
    out.push_back({level, stay});
    if (pu > 0.0) out.push_back({level + 1, pu});
}

// ---------------------------------------------------------------------------
// Krusell-Smith savings economy
// ---------------------------------------------------------------------------

struct KSParams {
    double discount = 0.99;
    double capital_share = 0.36;        // Cobb-Douglas exponent
    double depreciation = 0.025;
    std::vector<double> z_values = {0.99, 1.01};
    std::vector<std::vector<double>> z_transition = {{0.875, 0.125}, {0.125, 0.875}};
    double borrowing_limit = 0.0;       // b >= 0; savings bounded below by -b
    /// Labor-productivity states; the low state doubles as home production
    /// so cash-on-hand stays positive for the unemployed.
    std::vector<double> productivity_values = {0.25, 1.0};
    /// Productivity transition conditional on the arriving aggregate state:
    /// employment_transition[z'][e][e'].
    std::vector<std::vector<std::vector<double>>> employment_transition = {
        {{0.60, 0.40}, {0.07, 0.93}},   // arriving in the low-z state
        {{0.75, 0.25}, {0.03, 0.97}},   // arriving in the high-z state
    };
    double wealth_min = 0.0;
    double wealth_max = 150.0;
    int wealth_points = 100;
    double grid_curvature = 2.0;
    /// 0 = savings actions coincide with the wealth grid (exact transitions).
    int action_points = 0;

    void validate() const {
        require_arg(discount > 0.0 && discount < 1.0, "KSParams: discount in (0,1) required");
        require_arg(capital_share > 0.0 && capital_share < 1.0,
                    "KSParams: capital share in (0,1) required");
        require_arg(depreciation > 0.0 && depreciation <= 1.0,
                    "KSParams: depreciation in (0,1] required");
        require_arg(borrowing_limit >= 0.0, "KSParams: borrowing limit must be >= 0");
        for (double z : z_values) require_arg(z > 0.0, "KSParams: z values must be positive");
        require_arg(wealth_points >= 2, "KSParams: wealth grid too small");
        require_arg(wealth_max > wealth_min && wealth_min >= -borrowing_limit,
                    "KSParams: bad wealth bounds");
        require_arg(!productivity_values.empty(), "KSParams: productivity states required");
        require_arg(employment_transition.size() == z_values.size(),
                    "KSParams: one productivity transition per aggregate state");
    }
};

struct FactorPrices {
    double R;  // gross interest rate
    double w;  // wage
};

/// Competitive factor prices at aggregate capital K under productivity z:
/// R = z a K^(a-1) - delta + 1 and w = z (1-a) K^a.
inline FactorPrices ks_prices(double capital, double z, const KSParams& params) {
    require_arg(capital > 0.0, "ks_prices: capital must be positive");
    const double a = params.capital_share;
    const double marginal = z * a * std::pow(capital, a - 1.0);
    return {marginal - params.depreciation + 1.0,
            z * (1.0 - a) * std::pow(capital, a)};
}

/// Rough steady-state capital from the deterministic Euler condition
/// R = 1/beta; used only to sanity-check the wealth grid span.
inline double ks_reference_capital(const KSParams& p) {
    const double zbar =
        std::accumulate(p.z_values.begin(), p.z_values.end(), 0.0) / p.z_values.size();
    const double rate = 1.0 / p.discount - 1.0 + p.depreciation;
    return std::pow(zbar * p.capital_share / rate, 1.0 / (1.0 - p.capital_share));
}

inline ModelSpec build_ks(const KSParams& params) {
    params.validate();
    const double k_ref = ks_reference_capital(params);
    require_arg(params.wealth_max > 2.0 * k_ref,
                "build_ks: wealth grid top is too close to steady-state capital");

    const auto wealth = std::make_shared<std::vector<double>>(
        curved_grid(params.wealth_min, params.wealth_max, params.wealth_points,
                    params.grid_curvature));
    const auto prod = std::make_shared<std::vector<double>>(params.productivity_values);
    const int nw = static_cast<int>(wealth->size());
    const int ne = static_cast<int>(prod->size());
    const int nz = static_cast<int>(params.z_values.size());

    ModelSpec spec;
    spec.discount = params.discount;
    spec.chain.values = params.z_values;
    spec.chain.transition = params.z_transition;

    spec.grid.points.reserve(static_cast<std::size_t>(nw) * ne);
    for (int iw = 0; iw < nw; ++iw)
        for (int ie = 0; ie < ne; ++ie)
            spec.grid.points.push_back({(*wealth)[iw], (*prod)[ie]});

    // One shared savings grid; per-(x,z,s) feasibility trims it to actions
    // with positive consumption, so the effective set is a grid over
    // [-b, cash-on-hand].
    std::vector<double> savings;
    if (params.action_points <= 0) {
        savings = *wealth;
        if (params.borrowing_limit > 0.0)
            savings.insert(savings.begin(), -params.borrowing_limit);
    } else {
        savings = curved_grid(-params.borrowing_limit, params.wealth_max, params.action_points,
                              params.grid_curvature);
    }
    std::vector<Action> shared_actions;
    shared_actions.reserve(savings.size());
    for (double a : savings) shared_actions.push_back({a});
    spec.actions.assign(spec.grid.points.size(), shared_actions);

    const auto action_values = std::make_shared<std::vector<double>>(std::move(savings));
    const auto emp = std::make_shared<std::vector<std::vector<std::vector<double>>>>(
        params.employment_transition);

    spec.kernel_depends_on_population = false;
    spec.transition = [wealth, action_values, emp, ne](int x, int z_next, int a,
                                                       const PopulationState&,
                                                       TransitionRow& out) {
        const int ie = x % ne;
        const double av = (*action_values)[a];
        const auto& erow = (*emp)[z_next][ie];
        // Bracket the savings level on the wealth grid, splitting the mass
        // so the mean is preserved.
        const auto& wg = *wealth;
        const auto it = std::lower_bound(wg.begin(), wg.end(), av);
        int hi = static_cast<int>(it - wg.begin());
        if (hi >= static_cast<int>(wg.size())) hi = static_cast<int>(wg.size()) - 1;
        int lo = hi;
        double w_hi = 1.0;
        if (wg[hi] != av) {
            lo = std::max(hi - 1, 0);
            w_hi = (lo == hi) ? 1.0 : (av - wg[lo]) / (wg[hi] - wg[lo]);
        }
        for (int ep = 0; ep < ne; ++ep) {
            const double pe = erow[ep];
            if (pe == 0.0) continue;
            if (w_hi < 1.0) out.push_back({lo * ne + ep, pe * (1.0 - w_hi)});
            out.push_back({hi * ne + ep, pe * w_hi});
        }
    };

    // Sufficient statistics: aggregate capital, then (R, w) per z so the
    // payoff is pure arithmetic.
    const auto grid_points = std::make_shared<std::vector<std::vector<double>>>(spec.grid.points);
    const auto ksp = std::make_shared<KSParams>(params);
    spec.payoff_stats = [grid_points, ksp, nz](const PopulationState& s) {
        double capital = 0.0;
        for (int i = 0; i < s.size(); ++i) capital += s.mass[i] * (*grid_points)[i][0];
        std::vector<double> stats(1 + 2 * nz);
        stats[0] = capital;
        for (int z = 0; z < nz; ++z) {
            const FactorPrices p = ks_prices(capital, ksp->z_values[z], *ksp);
            stats[1 + 2 * z] = p.R;
            stats[2 + 2 * z] = p.w;
        }
        return stats;
    };
    spec.payoff = [grid_points, action_values](int x, int z, int a,
                                               std::span<const double> stats) {
        const double c = stats[1 + 2 * z] * (*grid_points)[x][0] +
                         stats[2 + 2 * z] * (*grid_points)[x][1] - (*action_values)[a];
        return std::log(c);
    };
    spec.feasible = [grid_points, action_values](int x, int z, int a,
                                                 std::span<const double> stats) {
        const double c = stats[1 + 2 * z] * (*grid_points)[x][0] +
                         stats[2 + 2 * z] * (*grid_points)[x][1] - (*action_values)[a];
        return c > 0.0;
    };
    spec.aggregate_stat = [grid_points](const PopulationState& s) {
        double capital = 0.0;
        for (int i = 0; i < s.size(); ++i) capital += s.mass[i] * (*grid_points)[i][0];
        return capital;
    };
    // Optimal savings must never bind at the top of the truncated wealth
    // grid; flag any population that piles mass onto the last wealth row.
    const int top_first = (nw - 1) * ne;
    spec.population_guard = [top_first](const PopulationState& s) {
        double top_mass = 0.0;
        for (int i = top_first; i < s.size(); ++i) top_mass += s.mass[i];
        return top_mass <= 1e-6;
    };

    spec.validate();
    // Every (x, z) must offer at least one positive-consumption action at a
    // reference population, otherwise the model is misconfigured.
    {
        const std::vector<double> stats =
            spec.payoff_stats(PopulationState::uniform(spec.n_states()));
        for (int x = 0; x < spec.n_states(); ++x)
            for (int z = 0; z < nz; ++z) {
                bool any = false;
                for (int a = 0; a < spec.n_actions(x) && !any; ++a)
                    any = spec.feasible(x, z, a, stats);
                require_arg(any, "build_ks: empty feasible action set (cash-on-hand below -b)");
            }
    }
    return spec;
}

// ---------------------------------------------------------------------------
// Capacity competition
// ---------------------------------------------------------------------------

struct CapacityParams {
    double discount = 0.925;
    int levels = 9;                  // states 0..levels
    double invest_max = 1.0;         // upper bound on investment
    double unit_cost = 4.0;          // d
    double depreciation = 0.7;
    double demand_e = 75.0;
    double demand_f = 10.0;
    double market_size = 0.125;      // m
    std::vector<double> z_values = {1.0, 2.0};
    std::vector<std::vector<double>> z_transition = {{0.8, 0.2}, {0.2, 0.8}};
    int action_points = 21;
    std::function<double(double)> capacity_map;  // qbar; identity if unset

    void validate() const {
        require_arg(discount > 0.0 && discount < 1.0, "CapacityParams: discount in (0,1)");
        require_arg(levels >= 1, "CapacityParams: need at least one positive level");
        require_arg(invest_max > 0.0, "CapacityParams: investment bound must be positive");
        require_arg(unit_cost > 0.0, "CapacityParams: unit cost must be positive");
        require_arg(depreciation > 0.0 && depreciation < 1.0,
                    "CapacityParams: depreciation in (0,1)");
        require_arg(demand_f > 0.0 && market_size > 0.0, "CapacityParams: bad demand block");
        require_arg(action_points >= 2, "CapacityParams: need at least 2 action points");
    }
};

namespace detail {

inline ModelSpec build_investment_model(
    double discount, int levels, double invest_max, double unit_cost, double depreciation,
    const std::vector<double>& z_values, const std::vector<std::vector<double>>& z_transition,
    int action_points, std::function<double(const PopulationState&)> stat,
    std::function<double(int x, int z, double stat_value)> gross_profit) {
    ModelSpec spec;
    spec.discount = discount;
    spec.chain.values = z_values;
    spec.chain.transition = z_transition;
    for (int i = 0; i <= levels; ++i) spec.grid.points.push_back({static_cast<double>(i)});

    std::vector<double> invest = curved_grid(0.0, invest_max, action_points);
    std::vector<Action> shared_actions;
    for (double a : invest) shared_actions.push_back({a});
    spec.actions.assign(spec.grid.points.size(), shared_actions);
    const auto action_values = std::make_shared<std::vector<double>>(std::move(invest));

    spec.kernel_depends_on_population = false;
    spec.transition = [action_values, levels, depreciation](int x, int, int a,
                                                            const PopulationState&,
                                                            TransitionRow& out) {
        investment_transition(x, levels, depreciation, (*action_values)[a], out);
    };
    spec.payoff_stats = [stat](const PopulationState& s) {
        return std::vector<double>{stat(s)};
    };
    spec.payoff = [gross_profit, action_values, unit_cost](int x, int z, int a,
                                                           std::span<const double> stats) {
        return gross_profit(x, z, stats[0]) - unit_cost * (*action_values)[a];
    };
    spec.aggregate_stat = stat;
    spec.validate();
    return spec;
}

}  // namespace detail

/// Capacity competition: capacity-constrained quantity setting against a
/// linear inverse demand P(Q) = e/f - Q/(m f), firms producing at capacity,
/// scaled by the aggregate demand shock.
inline ModelSpec build_capacity(const CapacityParams& params) {
    params.validate();
    std::function<double(double)> qbar = params.capacity_map;
    if (!qbar) qbar = [](double x) { return x; };

    const double e = params.demand_e, f = params.demand_f, m = params.market_size;
    const auto z_values = params.z_values;
    auto price = [e, f, m](double q_total) { return e / f - q_total / (m * f); };

    // The inverse demand must stay nonnegative over the reachable range of
    // total capacity.
    double q_max = 0.0;
    for (int i = 0; i <= params.levels; ++i) q_max = std::max(q_max, qbar(i));
    require_arg(price(q_max) >= 0.0,
                "build_capacity: inverse demand goes negative over the reachable range");

    std::vector<double> qvals(params.levels + 1);
    for (int i = 0; i <= params.levels; ++i) qvals[i] = qbar(i);
    const auto qv = std::make_shared<std::vector<double>>(std::move(qvals));

    auto stat = [qv](const PopulationState& s) {
        double q = 0.0;
        for (int i = 0; i < s.size(); ++i) q += s.mass[i] * (*qv)[i];
        return q;
    };
    auto profit = [price, qv, z_values](int x, int z, double q_total) {
        return z_values[z] * price(q_total) * (*qv)[x];
    };
    return detail::build_investment_model(params.discount, params.levels, params.invest_max,
                                          params.unit_cost, params.depreciation, params.z_values,
                                          params.z_transition, params.action_points, stat,
                                          profit);
}

// ---------------------------------------------------------------------------
// Quality ladder
// ---------------------------------------------------------------------------

struct QualityParams {
    double discount = 0.925;
    int levels = 9;
    double invest_max = 1.0;
    double unit_cost = 4.0;
    double depreciation = 0.7;
    double quality_elasticity = 0.5;  // theta_1 < 1
    double profit_scale = 30.0;       // c~
    std::vector<double> z_values = {1.0, 2.0};
    std::vector<std::vector<double>> z_transition = {{0.8, 0.2}, {0.2, 0.8}};
    int action_points = 21;

    void validate() const {
        require_arg(discount > 0.0 && discount < 1.0, "QualityParams: discount in (0,1)");
        require_arg(levels >= 1, "QualityParams: need at least one positive level");
        require_arg(invest_max > 0.0, "QualityParams: investment bound must be positive");
        require_arg(unit_cost > 0.0, "QualityParams: unit cost must be positive");
        require_arg(depreciation > 0.0 && depreciation < 1.0,
                    "QualityParams: depreciation in (0,1)");
        require_arg(quality_elasticity < 1.0, "QualityParams: quality elasticity must be < 1");
        require_arg(profit_scale > 0.0, "QualityParams: profit scale must be positive");
        require_arg(action_points >= 2, "QualityParams: need at least 2 action points");
    }
};

/// Quality ladder under logit demand in the many-firm limit: per-period
/// gross profit z c (x+1)^theta / integral (y+1)^theta s(dy).
inline ModelSpec build_quality(const QualityParams& params) {
    params.validate();
    std::vector<double> quality_weight(params.levels + 1);
    for (int i = 0; i <= params.levels; ++i)
        quality_weight[i] = std::pow(i + 1.0, params.quality_elasticity);
    const auto qw = std::make_shared<std::vector<double>>(std::move(quality_weight));

    auto stat = [qw](const PopulationState& s) {
        double denom = 0.0;
        for (int i = 0; i < s.size(); ++i) denom += s.mass[i] * (*qw)[i];
        return denom;
    };
    const double scale = params.profit_scale;
    const auto z_values = params.z_values;
    auto profit = [qw, scale, z_values](int x, int z, double denom) {
        return z_values[z] * scale * (*qw)[x] / denom;
    };
    return detail::build_investment_model(params.discount, params.levels, params.invest_max,
                                          params.unit_cost, params.depreciation, params.z_values,
                                          params.z_transition, params.action_points, stat,
                                          profit);
}

}  // namespace bfe
