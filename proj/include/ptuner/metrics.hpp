#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ptuner/nsga2.hpp"

namespace ptuner {

/// Both coordinates are minimized.
struct HvPoint {
    double quality_loss = 0.0;
    double time_ms = 0.0;
};

inline HvPoint to_hv_point(const ObjectiveVector& o) { return {1.0 - o.quality, o.time_ms}; }

/// Mutually non-dominated subset (minimizing 1 - quality and time_ms), in
/// input order. Of several records with identical objectives only the first
/// is kept.
std::vector<EvaluationRecord> pareto_front(const std::vector<EvaluationRecord>& records);

/// Exact area dominated by `points` inside the reference box. Points at or
/// beyond the reference in either coordinate contribute nothing.
double hypervolume_2d(const std::vector<HvPoint>& points, const RefPoint& ref = {});

struct RunStats {
    double mean = 0.0;
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    double iqr = 0.0;
    double min = 0.0;
    double max = 0.0;
};

/// Quantiles use linear interpolation between order statistics:
/// Q(p) = x[floor(h)] + (h - floor(h)) * (x[floor(h)+1] - x[floor(h)]), h = (n-1)p.
/// Throws std::invalid_argument on empty input.
RunStats run_stats(const std::vector<double>& values);
double quantile(std::vector<double> values, double p);

struct ApproachSummary {
    std::string label;
    std::vector<double> best_time_ms;
    std::vector<double> best_quality;
    std::vector<double> hypervolume;
    RunStats time_stats;
    RunStats quality_stats;
    RunStats hv_stats;
};

struct ComparisonReport {
    RefPoint ref;
    ApproachSummary a;
    ApproachSummary b;
    /// mean best time of b over a: "b takes N times as long".
    double time_ratio = 1.0;
    /// mean best quality of a over b.
    double quality_ratio = 1.0;
    /// mean best quality of b minus a.
    double quality_gap = 0.0;
    /// mean hypervolume of a over b.
    double hv_ratio = 1.0;
};

class MetricsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Per-run best time, best quality and hypervolume of each archive's final
/// front, measured against `ref` when given. Otherwise every archive must
/// carry the same stored reference point. Throws MetricsError on an empty side
/// or mismatched reference points.
ComparisonReport compare_runs(const std::vector<RunArchive>& a, const std::vector<RunArchive>& b,
                              std::optional<RefPoint> ref = std::nullopt, std::string label_a = "a",
                              std::string label_b = "b");

double front_hypervolume(const std::vector<Individual>& front, const RefPoint& ref);

/// Machine-readable summary (JSON).
std::string report_summary_json(const ComparisonReport& r);
/// One row per run: approach, run, best_time_ms, best_quality, hypervolume.
std::string report_table_tsv(const ComparisonReport& r);
/// Human-readable summary with both the raw ratio and percentage forms.
std::string report_text(const ComparisonReport& r);

} // namespace ptuner
