#include <catch2/catch.hpp>

#include <algorithm>

#include "bfe/analysis.hpp"

using namespace bfe;

namespace {

/// Synthetic single-path record with every forecast planted by hand.
StatRecord synthetic_record(int foresight, int n_z, std::vector<int> z_path,
                            std::vector<double> stats) {
    StatRecord r;
    r.foresight = foresight;
    r.n_z = n_z;
    r.z_index = std::move(z_path);
    r.stat = std::move(stats);
    const int T = static_cast<int>(r.stat.size());
    r.converged.assign(T, true);
    const int nodes = static_cast<int>(ForesightTree::expected_node_count(n_z, foresight));
    const int leaves = foresight == 0 ? 1 : static_cast<int>(std::pow(n_z, foresight));
    r.forecast_node_stat.assign(T, std::vector<double>(nodes, 0.0));
    r.forecast_cont_stat.assign(T, std::vector<double>(leaves, 0.0));
    return r;
}

}  // namespace

TEST_CASE("standard deviation of the statistic series") {
    StatRecord r = synthetic_record(0, 1, {0, 0, 0, 0}, {2.0, 2.0, 2.0, 2.0});
    CHECK(std_of_mean(r, 0) == 0.0);

    StatRecord two = synthetic_record(0, 1, {0, 0}, {1.0, 3.0});
    CHECK(std_of_mean(two, 0) == Approx(std::sqrt(2.0)).margin(1e-15));

    StatRecord burned = synthetic_record(0, 1, {0, 0, 0, 0}, {9.0, 9.0, 1.0, 3.0});
    CHECK(std_of_mean(burned, 2) == Approx(std::sqrt(2.0)).margin(1e-15));

    CHECK_THROWS_AS(std_of_mean(two, 1), std::invalid_argument);
}

TEST_CASE("forecast error formula on a single sample") {
    // One usable period: forecast 1.05 against realization 1.00.
    StatRecord r = synthetic_record(0, 2, {0, 1}, {2.0, 1.0});
    r.forecast_cont_stat[0][0] = 1.05;
    const ForecastErrorStat e = forecast_error_detail(r, 1);
    CHECK(e.samples == 1);
    CHECK(e.mean_error == Approx(0.05).margin(1e-12));
    CHECK(forecast_error(r, 1) == Approx(0.05).margin(1e-12));
}

TEST_CASE("forecast lookups hit the realized history, not its neighbours") {
    // Foresight 1, two aggregate states, path z = (0, 1, 0, 1).
    StatRecord r = synthetic_record(1, 2, {0, 1, 0, 1}, {10.0, 20.0, 40.0, 80.0});
    // Snapshot at t: node stats indexed 0 (root), 1 (child z0), 2 (child z1).
    for (int t = 0; t < 4; ++t) {
        r.forecast_node_stat[t] = {1000.0 + t, 100.0 + t, 200.0 + t};
        r.forecast_cont_stat[t] = {300.0 + t, 400.0 + t};
    }
    SECTION("horizon one reads the depth-1 node of the realized branch") {
        const ForecastErrorStat e = forecast_error_detail(r, 1);
        // t=0: realized z1 -> node stat 200; realized 20 -> |200-20|/20 = 9
        // t=1: realized z0 -> 101; realized 40 -> 61/40
        // t=2: realized z1 -> 202; realized 80 -> 122/80
        const double expected = (9.0 + 61.0 / 40.0 + 122.0 / 80.0) / 3.0;
        CHECK(e.samples == 3);
        CHECK(e.mean_error == Approx(expected).margin(1e-12));
    }
    SECTION("beyond the window the continuation of the realized prefix is used") {
        const ForecastErrorStat e = forecast_error_detail(r, 2);
        // t=0: prefix z1 -> continuation 400; realized 40 -> 9
        // t=1: prefix z0 -> continuation 301; realized 80 -> 221/80
        const double expected = (9.0 + 221.0 / 80.0) / 2.0;
        CHECK(e.samples == 2);
        CHECK(e.mean_error == Approx(expected).margin(1e-12));
    }
    SECTION("burn-in drops early periods") {
        const ForecastErrorStat e = forecast_error_detail(r, 1, 2);
        CHECK(e.samples == 1);
        CHECK(e.mean_error == Approx(122.0 / 80.0).margin(1e-12));
    }
}

TEST_CASE("zero realizations are excluded and counted") {
    StatRecord r = synthetic_record(0, 2, {0, 0, 1}, {1.0, 0.0, 2.0});
    r.forecast_cont_stat[0][0] = 1.0;
    r.forecast_cont_stat[1][0] = 3.0;
    const ForecastErrorStat e = forecast_error_detail(r, 1);
    CHECK(e.excluded == 1);
    CHECK(e.samples == 1);
    CHECK(e.mean_error == Approx(0.5).margin(1e-12));
}

TEST_CASE("forecast error is nonnegative and zero when snapshots match realizations") {
    StatRecord r = synthetic_record(1, 2, {0, 1, 1}, {5.0, 6.0, 7.0});
    r.forecast_node_stat[0] = {5.0, 9.0, 6.0};
    r.forecast_node_stat[1] = {6.0, 9.0, 7.0};
    const ForecastErrorStat e = forecast_error_detail(r, 1);
    CHECK(e.mean_error == 0.0);
}

TEST_CASE("ensemble aggregation") {
    StatRecord a = synthetic_record(0, 2, {0, 1, 0}, {1.0, 2.0, 3.0});
    a.forecast_cont_stat[0][0] = 2.0;
    a.forecast_cont_stat[1][0] = 3.0;
    StatRecord b = synthetic_record(0, 2, {1, 0, 1}, {3.0, 4.0, 5.0});
    b.forecast_cont_stat[0][0] = 5.0;
    b.forecast_cont_stat[1][0] = 4.0;
    const std::vector<int> horizons = {1, 2};

    SECTION("one path: the report equals the per-path statistic") {
        const std::vector<StatRecord> one = {a};
        const EnsembleReports rep = ensemble_reports(one, 0, horizons);
        CHECK(rep.variability.mean_sigma == Approx(std_of_mean(a, 0)));
        CHECK(rep.forecast_errors[0].mean_error == Approx(forecast_error(a, 1)));
    }
    SECTION("two identical paths: the mean equals either") {
        const std::vector<StatRecord> twice = {a, a};
        const EnsembleReports rep = ensemble_reports(twice, 0, horizons);
        CHECK(rep.variability.mean_sigma == Approx(std_of_mean(a, 0)));
        CHECK(rep.forecast_errors[0].mean_error == Approx(forecast_error(a, 1)));
    }
    SECTION("record order does not matter") {
        const std::vector<StatRecord> ab = {a, b};
        const std::vector<StatRecord> ba = {b, a};
        const EnsembleReports r1 = ensemble_reports(ab, 0, horizons);
        const EnsembleReports r2 = ensemble_reports(ba, 0, horizons);
        CHECK(r1.variability.mean_sigma == Approx(r2.variability.mean_sigma).margin(1e-15));
        for (std::size_t i = 0; i < r1.forecast_errors.size(); ++i) {
            CHECK(r1.forecast_errors[i].mean_error ==
                  Approx(r2.forecast_errors[i].mean_error).margin(1e-15));
            CHECK(r1.forecast_errors[i].samples == r2.forecast_errors[i].samples);
        }
    }
}
