#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "bfe/common.hpp"
#include "bfe/core.hpp"
#include "bfe/sim.hpp"

namespace bfe {

/// The aggregate-statistic view of one simulated path: realized z and stat
/// per period plus the statistic of every forecast node and continuation.
/// Everything the reports need, without the full histograms.
struct StatRecord {
    int path_id = 0;
    int foresight = 0;
    int n_z = 0;
    std::vector<int> z_index;                              // per t
    std::vector<double> stat;                              // per t
    std::vector<bool> converged;                           // per t
    std::vector<std::vector<double>> forecast_node_stat;   // per t, per node id
    std::vector<std::vector<double>> forecast_cont_stat;   // per t, per leaf ordinal
};

inline StatRecord make_stat_record(const SimulationRecord& record, const ModelSpec& spec) {
    StatRecord out;
    out.path_id = record.path_id;
    out.foresight = record.foresight;
    out.n_z = spec.n_aggregate();
    const int T = static_cast<int>(record.periods.size());
    out.z_index.resize(T);
    out.stat.resize(T);
    out.converged.resize(T);
    out.forecast_node_stat.resize(T);
    out.forecast_cont_stat.resize(T);
    for (int t = 0; t < T; ++t) {
        const PeriodRecord& p = record.periods[t];
        out.z_index[t] = p.z_index;
        out.stat[t] = p.stat;
        out.converged[t] = p.converged;
        out.forecast_node_stat[t].reserve(p.forecast.node_count());
        for (const auto& pop : p.forecast.populations)
            out.forecast_node_stat[t].push_back(spec.aggregate_stat(pop));
        out.forecast_cont_stat[t].reserve(p.forecast.leaf_count());
        for (const auto& pop : p.forecast.continuations)
            out.forecast_cont_stat[t].push_back(spec.aggregate_stat(pop));
    }
    return out;
}

/// Sample standard deviation (n-1 denominator) of the aggregate statistic
/// over periods t >= burn_in.
inline double std_of_mean(const StatRecord& record, int burn_in) {
    const int T = static_cast<int>(record.stat.size());
    require_arg(T - burn_in >= 2, "std_of_mean: need at least two post-burn-in periods");
    double mean = 0.0;
    int n = 0;
    for (int t = burn_in; t < T; ++t) {
        mean += record.stat[t];
        ++n;
    }
    mean /= n;
    double ss = 0.0;
    for (int t = burn_in; t < T; ++t) {
        const double d = record.stat[t] - mean;
        ss += d * d;
    }
    return std::sqrt(ss / (n - 1));
}

inline double std_of_mean(const SimulationRecord& record, const ModelSpec& spec, int burn_in) {
    return std_of_mean(make_stat_record(record, spec), burn_in);
}

struct ForecastErrorStat {
    double mean_error = 0.0;
    long samples = 0;
    long excluded = 0;  // periods dropped because the realized statistic was 0
};

/// Mean relative error of the statistic forecast j periods ahead: the
/// period-t snapshot is read at the realized future history, falling back to
/// the frozen continuation of the realized depth-N prefix once j exceeds the
/// foresight window, and compared against the realized statistic at t+j.
inline ForecastErrorStat forecast_error_detail(const StatRecord& record, int horizon,
                                               int burn_in = 0) {
    require_arg(horizon >= 1, "forecast_error: horizon must be >= 1");
    require_arg(!record.forecast_node_stat.empty(), "forecast_error: no forecast snapshots");
    const int T = static_cast<int>(record.stat.size());
    const int N = record.foresight;
    ForecastErrorStat out;
    double acc = 0.0;
    std::vector<int> suffix;
    for (int t = burn_in; t + horizon < T; ++t) {
        double forecast;
        if (horizon <= N) {
            suffix.assign(record.z_index.begin() + t + 1,
                          record.z_index.begin() + t + 1 + horizon);
            forecast = record.forecast_node_stat[t][suffix_node_id(record.n_z, suffix)];
        } else {
            suffix.assign(record.z_index.begin() + t + 1, record.z_index.begin() + t + 1 + N);
            forecast = record.forecast_cont_stat[t][suffix_leaf_ordinal(record.n_z, suffix)];
        }
        const double realized = record.stat[t + horizon];
        if (realized == 0.0) {
            ++out.excluded;
            continue;
        }
        acc += std::abs(forecast - realized) / realized;
        ++out.samples;
    }
    if (out.samples > 0) out.mean_error = acc / out.samples;
    return out;
}

inline double forecast_error(const StatRecord& record, int horizon) {
    return forecast_error_detail(record, horizon).mean_error;
}

inline double forecast_error(const SimulationRecord& record, const ModelSpec& spec,
                             int horizon) {
    return forecast_error(make_stat_record(record, spec), horizon);
}

struct VariabilityRow {
    int foresight = 0;
    double mean_sigma = 0.0;          // unweighted mean of per-path sigmas
    std::vector<double> path_sigmas;  // per path
    int n_paths = 0;
    int burn_in = 0;
};

struct ForecastErrorRow {
    int foresight = 0;
    int horizon = 0;
    double mean_error = 0.0;  // unweighted mean of per-path means
    long samples = 0;
    long excluded = 0;
    int n_paths = 0;
};

struct EnsembleReports {
    VariabilityRow variability;
    std::vector<ForecastErrorRow> forecast_errors;  // one row per horizon
};

/// Per-path statistics averaged with equal weights over the ensemble.
inline EnsembleReports ensemble_reports(std::span<const StatRecord> records, int burn_in,
                                        std::span<const int> horizons) {
    require_arg(!records.empty(), "ensemble_reports: empty ensemble");
    EnsembleReports out;
    out.variability.foresight = records.front().foresight;
    out.variability.n_paths = static_cast<int>(records.size());
    out.variability.burn_in = burn_in;
    for (const StatRecord& r : records) {
        const double sigma = std_of_mean(r, burn_in);
        out.variability.path_sigmas.push_back(sigma);
        out.variability.mean_sigma += sigma;
    }
    out.variability.mean_sigma /= records.size();

    for (int j : horizons) {
        ForecastErrorRow row;
        row.foresight = records.front().foresight;
        row.horizon = j;
        row.n_paths = static_cast<int>(records.size());
        int contributing = 0;
        for (const StatRecord& r : records) {
            const ForecastErrorStat stat = forecast_error_detail(r, j, burn_in);
            row.samples += stat.samples;
            row.excluded += stat.excluded;
            if (stat.samples > 0) {
                row.mean_error += stat.mean_error;
                ++contributing;
            }
        }
        if (contributing > 0) row.mean_error /= contributing;
        out.forecast_errors.push_back(row);
    }
    return out;
}

inline EnsembleReports ensemble_reports(std::span<const SimulationRecord> records,
                                        const ModelSpec& spec, int burn_in,
                                        std::span<const int> horizons) {
    std::vector<StatRecord> stats;
    stats.reserve(records.size());
    for (const SimulationRecord& r : records) stats.push_back(make_stat_record(r, spec));
    return ensemble_reports(stats, burn_in, horizons);
}

}  // namespace bfe
