#include "ptuner/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "ptuner/archive.hpp"

namespace ptuner {

std::vector<EvaluationRecord> pareto_front(const std::vector<EvaluationRecord>& records) {
    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        const auto& a = records[x];
        const auto& b = records[y];
        if (a.time_ms != b.time_ms) return a.time_ms < b.time_ms;
        return (1.0 - a.quality) < (1.0 - b.quality);
    });
    std::vector<std::size_t> keep;
    double best_loss = std::numeric_limits<double>::infinity();
    for (std::size_t i : order) {
        const double loss = 1.0 - records[i].quality;
        if (loss < best_loss) {
            keep.push_back(i);
            best_loss = loss;
        }
    }
    std::sort(keep.begin(), keep.end());
    std::vector<EvaluationRecord> out;
    out.reserve(keep.size());
    for (std::size_t i : keep) out.push_back(records[i]);
    return out;
}

double hypervolume_2d(const std::vector<HvPoint>& points, const RefPoint& ref) {
    std::vector<HvPoint> inside;
    inside.reserve(points.size());
    for (const auto& p : points) {
        if (p.quality_loss < ref.quality_loss_ref && p.time_ms < ref.time_ref) inside.push_back(p);
    }
    std::sort(inside.begin(), inside.end(), [](const HvPoint& a, const HvPoint& b) {
        if (a.time_ms != b.time_ms) return a.time_ms < b.time_ms;
        return a.quality_loss < b.quality_loss;
    });
    double area = 0.0;
    double ceiling = ref.quality_loss_ref;
    for (const auto& p : inside) {
        if (p.quality_loss >= ceiling) continue;
        area += (ref.time_ref - p.time_ms) * (ceiling - p.quality_loss);
        ceiling = p.quality_loss;
    }
    return area;
}

double quantile(std::vector<double> values, double p) {
    if (values.empty()) throw std::invalid_argument("quantile of empty sample");
    std::sort(values.begin(), values.end());
    const double h = static_cast<double>(values.size() - 1) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= values.size()) return values.back();
    return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

RunStats run_stats(const std::vector<double>& values) {
    if (values.empty()) throw std::invalid_argument("run_stats of empty sample");
    RunStats s;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    s.median = quantile(values, 0.5);
    s.q1 = quantile(values, 0.25);
    s.q3 = quantile(values, 0.75);
    s.iqr = s.q3 - s.q1;
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    s.min = *mn;
    s.max = *mx;
    return s;
}

double front_hypervolume(const std::vector<Individual>& front, const RefPoint& ref) {
    std::vector<HvPoint> pts;
    pts.reserve(front.size());
    for (const auto& ind : front) pts.push_back(to_hv_point(ind.objectives));
    return hypervolume_2d(pts, ref);
}

namespace {

ApproachSummary summarize(const std::vector<RunArchive>& runs, const RefPoint& ref, std::string label) {
    ApproachSummary s;
    s.label = std::move(label);
    for (const auto& run : runs) {
        if (run.final_front.empty()) throw MetricsError("archive with empty final front");
        double best_time = std::numeric_limits<double>::infinity();
        double best_quality = -std::numeric_limits<double>::infinity();
        for (const auto& ind : run.final_front) {
            best_time = std::min(best_time, ind.objectives.time_ms);
            best_quality = std::max(best_quality, ind.objectives.quality);
        }
        s.best_time_ms.push_back(best_time);
        s.best_quality.push_back(best_quality);
        s.hypervolume.push_back(front_hypervolume(run.final_front, ref));
    }
    s.time_stats = run_stats(s.best_time_ms);
    s.quality_stats = run_stats(s.best_quality);
    s.hv_stats = run_stats(s.hypervolume);
    return s;
}

double safe_ratio(double num, double den) {
    if (num == den) return 1.0;
    return den == 0.0 ? std::numeric_limits<double>::infinity() : num / den;
}

} // namespace

ComparisonReport compare_runs(const std::vector<RunArchive>& a, const std::vector<RunArchive>& b,
                              std::optional<RefPoint> ref, std::string label_a, std::string label_b) {
    if (a.empty() || b.empty()) throw MetricsError("compare_runs needs at least one archive per side");
    const RefPoint stored = a.front().hv_ref;
    if (!ref) {
        for (const auto* side : {&a, &b}) {
            for (const auto& run : *side) {
                if (!(run.hv_ref == stored))
                    throw MetricsError("archives carry different hypervolume reference points");
            }
        }
    }
    ComparisonReport r;
    r.ref = ref.value_or(stored);
    r.a = summarize(a, r.ref, std::move(label_a));
    r.b = summarize(b, r.ref, std::move(label_b));
    r.time_ratio = safe_ratio(r.b.time_stats.mean, r.a.time_stats.mean);
    r.quality_ratio = safe_ratio(r.a.quality_stats.mean, r.b.quality_stats.mean);
    r.quality_gap = r.b.quality_stats.mean - r.a.quality_stats.mean;
    r.hv_ratio = safe_ratio(r.a.hv_stats.mean, r.b.hv_stats.mean);
    return r;
}

namespace {

nlohmann::ordered_json stats_json(const RunStats& s) {
    return {{"mean", s.mean}, {"median", s.median}, {"q1", s.q1}, {"q3", s.q3},
            {"iqr", s.iqr},   {"min", s.min},       {"max", s.max}};
}

nlohmann::ordered_json approach_json(const ApproachSummary& s) {
    nlohmann::ordered_json j;
    j["label"] = s.label;
    j["runs"] = s.best_time_ms.size();
    j["best_time_ms"] = stats_json(s.time_stats);
    j["best_quality"] = stats_json(s.quality_stats);
    j["hypervolume"] = stats_json(s.hv_stats);
    return j;
}

} // namespace

std::string report_summary_json(const ComparisonReport& r) {
    nlohmann::ordered_json j;
    j["schema"] = "pareto-tuner/comparison";
    j["version"] = 1;
    j["ref"] = {{"quality_loss", r.ref.quality_loss_ref}, {"time_ms", r.ref.time_ref}};
    j["a"] = approach_json(r.a);
    j["b"] = approach_json(r.b);
    j["time_ratio_b_over_a"] = r.time_ratio;
    j["time_increase_pct_b_over_a"] = (r.time_ratio - 1.0) * 100.0;
    j["quality_ratio_a_over_b"] = r.quality_ratio;
    j["quality_gap_b_minus_a"] = r.quality_gap;
    j["hv_ratio_a_over_b"] = r.hv_ratio;
    j["hv_increase_pct_a_over_b"] = (r.hv_ratio - 1.0) * 100.0;
    return j.dump(2) + "\n";
}

std::string report_table_tsv(const ComparisonReport& r) {
    std::ostringstream out;
    out << "# pareto-tuner comparison-table 1\n";
    out << "approach\trun\tbest_time_ms\tbest_quality\thypervolume\n";
    for (const auto* s : {&r.a, &r.b}) {
        for (std::size_t i = 0; i < s->best_time_ms.size(); ++i) {
            out << s->label << '\t' << i << '\t' << format_double(s->best_time_ms[i]) << '\t'
                << format_double(s->best_quality[i]) << '\t' << format_double(s->hypervolume[i]) << '\n';
        }
    }
    return out.str();
}

std::string report_text(const ComparisonReport& r) {
    std::ostringstream out;
    char buf[256];
    auto line = [&](const char* what, const RunStats& sa, const RunStats& sb) {
        std::snprintf(buf, sizeof buf, "%-14s %14.4f (IQR %10.4f)   %14.4f (IQR %10.4f)\n", what, sa.mean, sa.iqr,
                      sb.mean, sb.iqr);
        out << buf;
    };
    std::snprintf(buf, sizeof buf, "reference point: quality loss %g, time %g ms\n", r.ref.quality_loss_ref,
                  r.ref.time_ref);
    out << buf;
    std::snprintf(buf, sizeof buf, "%-14s %32s   %32s\n", "", r.a.label.c_str(), r.b.label.c_str());
    out << buf;
    line("best time ms", r.a.time_stats, r.b.time_stats);
    line("best quality", r.a.quality_stats, r.b.quality_stats);
    line("hypervolume", r.a.hv_stats, r.b.hv_stats);
    std::snprintf(buf, sizeof buf, "time: %s takes %.3fx the time of %s (%.1f%% more)\n", r.b.label.c_str(),
                  r.time_ratio, r.a.label.c_str(), (r.time_ratio - 1.0) * 100.0);
    out << buf;
    std::snprintf(buf, sizeof buf, "quality: %s minus %s = %.4f\n", r.b.label.c_str(), r.a.label.c_str(),
                  r.quality_gap);
    out << buf;
    std::snprintf(buf, sizeof buf, "hypervolume: %s is %.3fx %s (%.1f%% higher)\n", r.a.label.c_str(), r.hv_ratio,
                  r.b.label.c_str(), (r.hv_ratio - 1.0) * 100.0);
    out << buf;
    return out.str();
}

} // namespace ptuner
