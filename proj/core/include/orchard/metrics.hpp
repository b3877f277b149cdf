#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace orchard {

// K x K count table; rows are true classes, columns predicted classes.
struct ConfusionMatrix {
    std::vector<std::string> classes;
    std::vector<std::vector<uint64_t>> counts;

    size_t size() const { return classes.size(); }
    uint64_t total() const;
    uint64_t trace() const;
    uint64_t row_sum(size_t k) const;
    uint64_t col_sum(size_t k) const;
    void validate() const;

    static ConfusionMatrix zeros(std::vector<std::string> classes);
};

// One-vs-rest view of a single class.
struct BinaryCounts {
    uint64_t tp = 0;
    uint64_t fp = 0;
    uint64_t fn = 0;
    uint64_t tn = 0;
};

BinaryCounts binary_counts(const ConfusionMatrix& cm, size_t k);

// A percentage that may be undefined (zero denominator). Undefined values
// stay flagged all the way to the output; they are never silently zero.
struct MetricValue {
    double value = 0.0;
    bool defined = false;

    static MetricValue ratio_percent(uint64_t num, uint64_t den);
    static MetricValue undefined() { return {}; }
};

struct ClassMetrics {
    std::string name;
    MetricValue accuracy;     // TP / row total
    MetricValue precision;    // TP / (TP + FP)
    MetricValue recall;       // TP / (TP + FN)
    MetricValue specificity;  // TN / (TN + FP)
    MetricValue f_measure;    // 2PR / (P + R)
};

struct MetricsReport {
    std::vector<ClassMetrics> per_class;
    ClassMetrics average;          // unweighted means of the class values
    MetricValue overall_accuracy;  // trace / total
    uint64_t total = 0;
};

// Full-precision arithmetic (64-bit); rounding happens only at rendering.
MetricsReport compute_report(const ConfusionMatrix& cm);

// Presentation rule for table cells: percentages truncated (not rounded)
// to one decimal, the convention the reference tables follow.
double truncate_percent(double pct);
std::string format_metric(const MetricValue& v);

// CSV: one header row of class names, then K rows of K counts.
// '#' lines and blank lines are ignored; errors carry line numbers.
ConfusionMatrix parse_cm_csv(std::istream& in, const std::string& source_name);
ConfusionMatrix parse_cm_csv_file(const std::filesystem::path& path);
void write_cm_csv(const ConfusionMatrix& cm, std::ostream& out);

std::string render_report_text(const MetricsReport& report);

nlohmann::json report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);

}  // namespace orchard
