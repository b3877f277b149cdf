#include "orchard/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "orchard/errors.hpp"

namespace orchard {

uint64_t ConfusionMatrix::total() const {
    uint64_t t = 0;
    for (const auto& row : counts) {
        for (uint64_t v : row) t += v;
    }
    return t;
}

uint64_t ConfusionMatrix::trace() const {
    uint64_t t = 0;
    for (size_t i = 0; i < counts.size(); ++i) t += counts[i][i];
    return t;
}

uint64_t ConfusionMatrix::row_sum(size_t k) const {
    uint64_t t = 0;
    for (uint64_t v : counts[k]) t += v;
    return t;
}

uint64_t ConfusionMatrix::col_sum(size_t k) const {
    uint64_t t = 0;
    for (const auto& row : counts) t += row[k];
    return t;
}

void ConfusionMatrix::validate() const {
    if (classes.empty()) throw ValidationError("confusion matrix has no classes");
    if (counts.size() != classes.size()) {
        throw ValidationError("confusion matrix row count does not match class count");
    }
    for (const auto& row : counts) {
        if (row.size() != classes.size()) {
            throw ValidationError("confusion matrix is not square");
        }
    }
}

ConfusionMatrix ConfusionMatrix::zeros(std::vector<std::string> classes) {
    ConfusionMatrix cm;
    cm.counts.assign(classes.size(), std::vector<uint64_t>(classes.size(), 0));
    cm.classes = std::move(classes);
    return cm;
}

BinaryCounts binary_counts(const ConfusionMatrix& cm, size_t k) {
    cm.validate();
    if (k >= cm.size()) {
        throw ValidationError("class index " + std::to_string(k) + " outside [0," +
                              std::to_string(cm.size()) + ")");
    }
    BinaryCounts b;
    b.tp = cm.counts[k][k];
    b.fp = cm.col_sum(k) - b.tp;
    b.fn = cm.row_sum(k) - b.tp;
    b.tn = cm.total() - b.tp - b.fp - b.fn;
    return b;
}

MetricValue MetricValue::ratio_percent(uint64_t num, uint64_t den) {
    if (den == 0) return undefined();
    return {100.0 * static_cast<double>(num) / static_cast<double>(den), true};
}

namespace {

MetricValue f_measure_of(const MetricValue& p, const MetricValue& r) {
    if (!p.defined || !r.defined) return MetricValue::undefined();
    const double sum = p.value + r.value;
    if (sum == 0.0) return MetricValue::undefined();
    return {2.0 * p.value * r.value / sum, true};
}

MetricValue mean_of(const std::vector<MetricValue>& vs) {
    double acc = 0.0;
    for (const auto& v : vs) {
        if (!v.defined) return MetricValue::undefined();  // degenerate classes stay visible
        acc += v.value;
    }
    return {acc / static_cast<double>(vs.size()), true};
}

}  // namespace

MetricsReport compute_report(const ConfusionMatrix& cm) {
    cm.validate();
    const uint64_t total = cm.total();
    if (total == 0) throw ValidationError("confusion matrix is empty (total 0)");

    MetricsReport report;
    report.total = total;
    report.overall_accuracy = MetricValue::ratio_percent(cm.trace(), total);

    std::vector<MetricValue> acc, prec, rec, spec, f1;
    for (size_t k = 0; k < cm.size(); ++k) {
        const BinaryCounts b = binary_counts(cm, k);
        ClassMetrics m;
        m.name = cm.classes[k];
        m.accuracy = MetricValue::ratio_percent(b.tp, b.tp + b.fn);
        m.precision = MetricValue::ratio_percent(b.tp, b.tp + b.fp);
        m.recall = MetricValue::ratio_percent(b.tp, b.tp + b.fn);
        m.specificity = MetricValue::ratio_percent(b.tn, b.tn + b.fp);
        m.f_measure = f_measure_of(m.precision, m.recall);
        acc.push_back(m.accuracy);
        prec.push_back(m.precision);
        rec.push_back(m.recall);
        spec.push_back(m.specificity);
        f1.push_back(m.f_measure);
        report.per_class.push_back(std::move(m));
    }
    report.average.name = "Average";
    report.average.accuracy = mean_of(acc);
    report.average.precision = mean_of(prec);
    report.average.recall = mean_of(rec);
    report.average.specificity = mean_of(spec);
    report.average.f_measure = mean_of(f1);
    return report;
}

double truncate_percent(double pct) {
    // the guard rescues values a few ulps below a decimal boundary
    return std::floor(pct * 10.0 + 1e-9) / 10.0;
}

std::string format_metric(const MetricValue& v) {
    if (!v.defined) return "n/a";
    std::ostringstream os;
    os << std::fixed << std::setprecision(1) << truncate_percent(v.value);
    return os.str();
}

namespace {

[[noreturn]] void csv_error(const std::string& source, size_t line, const std::string& what) {
    throw FormatError(source + ":" + std::to_string(line) + ": " + what);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(field);
            field.clear();
        } else {
            field += ch;
        }
    }
    out.push_back(field);
    for (auto& f : out) {
        while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.erase(f.begin());
        while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.pop_back();
    }
    return out;
}

}  // namespace

ConfusionMatrix parse_cm_csv(std::istream& in, const std::string& source_name) {
    ConfusionMatrix cm;
    std::string line;
    size_t lineno = 0;
    bool have_header = false;
    size_t data_rows = 0;

    while (std::getline(in, line)) {
        ++lineno;
        std::string stripped = line;
        if (!stripped.empty() && stripped.back() == '\r') stripped.pop_back();
        if (stripped.empty() || stripped[0] == '#') continue;
        auto fields = split_csv_line(stripped);
        if (!have_header) {
            for (const auto& f : fields) {
                if (f.empty()) csv_error(source_name, lineno, "empty class name in header");
            }
            cm.classes = fields;
            cm.counts.assign(cm.classes.size(), {});
            have_header = true;
            continue;
        }
        if (data_rows >= cm.size()) {
            csv_error(source_name, lineno, "more data rows than classes");
        }
        if (fields.size() != cm.size()) {
            csv_error(source_name, lineno,
                      "expected " + std::to_string(cm.size()) + " columns, got " +
                          std::to_string(fields.size()));
        }
        std::vector<uint64_t> row;
        for (size_t col = 0; col < fields.size(); ++col) {
            long long v;
            try {
                size_t used = 0;
                v = std::stoll(fields[col], &used);
                if (used != fields[col].size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                csv_error(source_name, lineno,
                          "cell (" + cm.classes[data_rows] + "," + cm.classes[col] +
                              ") is not an integer: '" + fields[col] + "'");
            }
            if (v < 0) {
                csv_error(source_name, lineno,
                          "negative count in cell (" + cm.classes[data_rows] + "," +
                              cm.classes[col] + ")");
            }
            row.push_back(static_cast<uint64_t>(v));
        }
        cm.counts[data_rows++] = std::move(row);
    }
    if (!have_header) throw FormatError(source_name + ": empty confusion-matrix file");
    if (data_rows != cm.size()) {
        throw FormatError(source_name + ": expected " + std::to_string(cm.size()) +
                          " data rows, got " + std::to_string(data_rows));
    }
    return cm;
}

ConfusionMatrix parse_cm_csv_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open confusion-matrix file: " + path.string());
    return parse_cm_csv(in, path.string());
}

void write_cm_csv(const ConfusionMatrix& cm, std::ostream& out) {
    cm.validate();
    for (size_t i = 0; i < cm.classes.size(); ++i) {
        if (i) out << ',';
        out << cm.classes[i];
    }
    out << '\n';
    for (const auto& row : cm.counts) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) out << ',';
            out << row[i];
        }
        out << '\n';
    }
}

std::string render_report_text(const MetricsReport& report) {
    std::ostringstream os;
    size_t name_w = 8;
    for (const auto& m : report.per_class) name_w = std::max(name_w, m.name.size());
    name_w = std::max(name_w, report.average.name.size()) + 2;

    auto row = [&](const ClassMetrics& m) {
        os << std::left << std::setw(static_cast<int>(name_w)) << m.name << std::right
           << std::setw(9) << format_metric(m.accuracy) << std::setw(11)
           << format_metric(m.precision) << std::setw(8) << format_metric(m.recall)
           << std::setw(13) << format_metric(m.specificity) << std::setw(11)
           << format_metric(m.f_measure) << '\n';
    };

    os << std::left << std::setw(static_cast<int>(name_w)) << "Class" << std::right
       << std::setw(9) << "Accuracy" << std::setw(11) << "Precision" << std::setw(8) << "Recall"
       << std::setw(13) << "Specificity" << std::setw(11) << "F-measure" << '\n';
    for (const auto& m : report.per_class) row(m);
    row(report.average);

    os << "Overall accuracy: ";
    if (report.overall_accuracy.defined) {
        os << std::fixed << std::setprecision(2) << report.overall_accuracy.value << "%";
    } else {
        os << "n/a";
    }
    os << " (" << report.total << " samples)\n";
    return os.str();
}

namespace {

nlohmann::json metric_to_json(const MetricValue& v) {
    if (!v.defined) return nullptr;
    return v.value;
}

MetricValue metric_from_json(const nlohmann::json& j) {
    if (j.is_null()) return MetricValue::undefined();
    return {j.get<double>(), true};
}

nlohmann::json class_to_json(const ClassMetrics& m) {
    return nlohmann::json{{"name", m.name},
                          {"accuracy", metric_to_json(m.accuracy)},
                          {"precision", metric_to_json(m.precision)},
                          {"recall", metric_to_json(m.recall)},
                          {"specificity", metric_to_json(m.specificity)},
                          {"f_measure", metric_to_json(m.f_measure)}};
}

ClassMetrics class_from_json(const nlohmann::json& j) {
    ClassMetrics m;
    m.name = j.at("name").get<std::string>();
    m.accuracy = metric_from_json(j.at("accuracy"));
    m.precision = metric_from_json(j.at("precision"));
    m.recall = metric_from_json(j.at("recall"));
    m.specificity = metric_from_json(j.at("specificity"));
    m.f_measure = metric_from_json(j.at("f_measure"));
    return m;
}

}  // namespace

nlohmann::json report_to_json(const MetricsReport& report) {
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& m : report.per_class) classes.push_back(class_to_json(m));
    return nlohmann::json{{"total", report.total},
                          {"overall_accuracy", metric_to_json(report.overall_accuracy)},
                          {"classes", classes},
                          {"average", class_to_json(report.average)}};
}

MetricsReport report_from_json(const nlohmann::json& j) {
    MetricsReport report;
    report.total = j.at("total").get<uint64_t>();
    report.overall_accuracy = metric_from_json(j.at("overall_accuracy"));
    for (const auto& c : j.at("classes")) report.per_class.push_back(class_from_json(c));
    report.average = class_from_json(j.at("average"));
    return report;
}

}  // namespace orchard
