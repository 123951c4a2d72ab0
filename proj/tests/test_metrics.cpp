#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"
#include "ptuner/metrics.hpp"
#include "ptuner/surrogate.hpp"

using namespace ptuner;

namespace {

// Grid integration over the reference box, independent of the sweep.
double grid_hv(const std::vector<HvPoint>& pts, const RefPoint& ref, int steps) {
    double area = 0;
    const double dx = ref.quality_loss_ref / steps, dy = ref.time_ref / steps;
    for (int i = 0; i < steps; ++i) {
        const double x = (i + 0.5) * dx;
        double best = ref.time_ref;
        for (const auto& p : pts)
            if (p.quality_loss <= x) best = std::min(best, p.time_ms);
        if (best < ref.time_ref) area += dx * (ref.time_ref - best);
    }
    (void)dy;
    return area;
}

EvaluationRecord rec(double time_ms, double quality) {
    EvaluationRecord r;
    r.time_ms = time_ms;
    r.quality = quality;
    return r;
}

RunArchive archive_with_front(std::vector<std::pair<double, double>> pts) {
    RunArchive a;
    for (auto [t, q] : pts) {
        Individual i;
        i.objectives = {t, q};
        a.final_front.push_back(i);
    }
    return a;
}

} // namespace

TEST_CASE("hypervolume: fixed cases") {
    CHECK(hypervolume_2d({{0.35, 9400.0}}, {1.0, 50000.0}) == 26390.0);
    CHECK(hypervolume_2d({{1.0, 50000.0}}) == 0.0);
    CHECK(hypervolume_2d({}) == 0.0);
    CHECK(hypervolume_2d({{1.2, 100.0}, {0.5, 60000.0}}) == 0.0);
    // two staircase steps: 0.5*40000 + 0.25*10000
    CHECK(hypervolume_2d({{0.5, 10000.0}, {0.25, 40000.0}}) == doctest::Approx(0.5 * 40000 + 0.25 * 10000));
}

TEST_CASE("hypervolume: matches grid integration on random sets") {
    Rng rng(10);
    const RefPoint ref;
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<HvPoint> pts;
        const std::size_t n = 1 + rng.index(20);
        for (std::size_t i = 0; i < n; ++i) pts.push_back({rng.uniform(0, 1.1), rng.uniform(0, 55000)});
        CHECK(hypervolume_2d(pts, ref) == doctest::Approx(grid_hv(pts, ref, 200000)).epsilon(1e-3));
    }
}

TEST_CASE("hypervolume invariants") {
    Rng rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<HvPoint> pts;
        const std::size_t n = rng.index(15);
        for (std::size_t i = 0; i < n; ++i) pts.push_back({rng.uniform(0, 1), rng.uniform(0, 50000)});
        const double hv = hypervolume_2d(pts);
        auto more = pts;
        more.push_back({rng.uniform(0, 1), rng.uniform(0, 50000)});
        CHECK(hypervolume_2d(more) >= hv);
        auto shuffled = pts;
        std::reverse(shuffled.begin(), shuffled.end());
        if (!pts.empty()) shuffled.push_back(pts.front());
        CHECK(hypervolume_2d(shuffled) == doctest::Approx(hv));
    }
}

TEST_CASE("pareto_front") {
    CHECK(pareto_front({}).empty());
    CHECK(pareto_front({rec(100, 0.5)}).size() == 1);
    const auto f = pareto_front({rec(100, 0.5), rec(200, 0.9), rec(150, 0.4), rec(100, 0.5), rec(50, 0.1)});
    REQUIRE(f.size() == 3);
    CHECK(f[0].time_ms == 100);
    CHECK(f[1].time_ms == 200);
    CHECK(f[2].time_ms == 50);

    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<EvaluationRecord> rs;
        for (int i = 0; i < 100; ++i)
            rs.push_back(rec(100.0 * static_cast<double>(rng.uniform_int(1, 40)), rng.uniform_int(0, 20) / 20.0));
        auto dom = [](const EvaluationRecord& a, const EvaluationRecord& b) {
            return a.time_ms <= b.time_ms && a.quality >= b.quality && (a.time_ms < b.time_ms || a.quality > b.quality);
        };
        std::vector<std::pair<double, double>> oracle;
        for (const auto& r : rs) {
            bool dominated = false;
            for (const auto& o : rs) dominated = dominated || dom(o, r);
            const std::pair<double, double> key{r.time_ms, r.quality};
            if (!dominated && std::find(oracle.begin(), oracle.end(), key) == oracle.end()) oracle.push_back(key);
        }
        const auto got = pareto_front(rs);
        REQUIRE(got.size() == oracle.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].time_ms == oracle[i].first);
            CHECK(got[i].quality == oracle[i].second);
        }
    }
}

TEST_CASE("run_stats") {
    const auto one = run_stats({5});
    CHECK(one.mean == 5);
    CHECK(one.iqr == 0);
    CHECK(run_stats({1, 2, 3, 4}).median == 2.5);
    std::vector<double> hundred;
    for (int i = 1; i <= 100; ++i) hundred.push_back(i);
    const auto s = run_stats(hundred);
    CHECK(s.q1 == doctest::Approx(25.75));
    CHECK(s.q3 == doctest::Approx(75.25));
    CHECK(s.iqr == doctest::Approx(49.5));
    CHECK(s.min == 1);
    CHECK(s.max == 100);
    CHECK(s.mean == 50.5);
    CHECK_THROWS(run_stats({}));
    CHECK(quantile({3, 1, 2}, 0.5) == 2);
}

TEST_CASE("compare_runs") {
    const std::vector<RunArchive> a{archive_with_front({{9400, 0.65}, {5000, 0.4}}),
                                    archive_with_front({{10000, 0.7}})};
    const std::vector<RunArchive> b{archive_with_front({{25000, 0.8}}), archive_with_front({{24000, 0.9}})};

    const auto self = compare_runs(a, a);
    CHECK(self.time_ratio == 1.0);
    CHECK(self.quality_ratio == 1.0);
    CHECK(self.hv_ratio == 1.0);
    CHECK(self.quality_gap == 0.0);

    const auto r = compare_runs(a, b, std::nullopt, "green", "stable");
    CHECK(r.a.best_time_ms == std::vector<double>{5000, 10000});
    CHECK(r.a.best_quality == std::vector<double>{0.65, 0.7});
    CHECK(r.time_ratio == doctest::Approx(24500.0 / 7500.0));
    CHECK(r.quality_gap == doctest::Approx(0.85 - 0.675));
    CHECK(r.a.hypervolume[0] == doctest::Approx(hypervolume_2d({{0.35, 9400}, {0.6, 5000}})));
    CHECK(r.hv_ratio == doctest::Approx(r.a.hv_stats.mean / r.b.hv_stats.mean));

    auto odd = b;
    odd[1].hv_ref = {1.0, 60000.0};
    CHECK_THROWS_AS(compare_runs(a, odd), MetricsError);
    CHECK_NOTHROW(compare_runs(a, odd, RefPoint{}));
    CHECK_THROWS_AS(compare_runs({}, b), MetricsError);
}

TEST_CASE("reports carry raw and percentage ratios") {
    // the published hypervolumes: 29074.11 / 4642.17 is 6.26x, i.e. 526% higher
    const std::vector<RunArchive> a{archive_with_front({{0, 1.0}})};
    const std::vector<RunArchive> b{archive_with_front({{0, 1.0}})};
    auto r = compare_runs(a, b, std::nullopt, "green", "stable");
    r.a.hv_stats.mean = 29074.11;
    r.b.hv_stats.mean = 4642.17;
    r.hv_ratio = 29074.11 / 4642.17;
    const auto j = nlohmann::json::parse(report_summary_json(r));
    CHECK(j["schema"] == "pareto-tuner/comparison");
    CHECK(j["hv_ratio_a_over_b"].get<double>() == doctest::Approx(6.263).epsilon(1e-3));
    CHECK(j["hv_increase_pct_a_over_b"].get<double>() == doctest::Approx(526.3).epsilon(1e-3));
    const auto text = report_text(r);
    CHECK(text.find("6.26") != std::string::npos);
    CHECK(text.find("526") != std::string::npos);
    const auto tsv = report_table_tsv(r);
    CHECK(tsv.find("approach\trun\tbest_time_ms\tbest_quality\thypervolume") != std::string::npos);
}
