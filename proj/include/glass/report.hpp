#pragma once

// Long-form metrics table shared by every stage, plus the join between
// pretraining validation correlation and downstream scores.

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "glass/metrics.hpp"

namespace glass {

inline const std::set<std::string>& report_metric_names()
{
    static const std::set<std::string> names{"train_loss", "val_gaze_corr", "mae", "pearson_r", "macro_f1"};
    return names;
}

struct ReportRow {
    std::string run_id;
    std::string stage;  // pretrain, predict_previous, finetune, baseline
    std::string config_hash;
    std::string metric;
    double value = 0;
    std::uint64_t seed = 0;
    // Training step for curve points; empty for end-of-run summaries.
    std::optional<std::size_t> step;

    bool operator==(const ReportRow&) const = default;
};

namespace detail {

inline std::uint64_t parse_count(const std::string& cell, std::size_t row, const std::string& column)
{
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty())
        throw ParseError(row, "bad integer '" + cell + "' in column " + column);
    return v;
}

} // namespace detail

class MetricsReport {
public:
    void add(ReportRow row)
    {
        if (!report_metric_names().count(row.metric)) throw ConfigError("unknown metric name: " + row.metric);
        if (row.run_id.find(',') != std::string::npos || row.stage.find(',') != std::string::npos)
            throw ConfigError("report fields may not contain commas");
        rows_.push_back(std::move(row));
    }

    void append(const MetricsReport& other)
    {
        for (const auto& r : other.rows_) rows_.push_back(r);
    }

    const std::vector<ReportRow>& rows() const { return rows_; }
    bool empty() const { return rows_.empty(); }

    std::vector<ReportRow> select(const std::string& stage, const std::string& metric, bool summaries_only = true) const
    {
        std::vector<ReportRow> out;
        for (const auto& r : rows_)
            if (r.stage == stage && r.metric == metric && (!summaries_only || !r.step)) out.push_back(r);
        return out;
    }

    void write_csv(std::ostream& out) const
    {
        out << "run_id,stage,config_hash,metric,value,seed,step\n";
        for (const auto& r : rows_) {
            out << r.run_id << ',' << r.stage << ',' << r.config_hash << ',' << r.metric << ','
                << detail::format_double(r.value) << ',' << r.seed << ',';
            if (r.step) out << *r.step;
            out << '\n';
        }
    }

    static MetricsReport read_csv(std::istream& in)
    {
        MetricsReport rep;
        std::string line;
        if (!std::getline(in, line)) throw SchemaError("run_id");
        const auto header = detail::split_csv_line(line);
        const std::vector<std::string> want{"run_id", "stage", "config_hash", "metric", "value", "seed", "step"};
        for (std::size_t i = 0; i < want.size(); ++i)
            if (i >= header.size() || detail::trim(header[i]) != want[i]) throw SchemaError(want[i]);
        std::size_t row = 1;
        while (std::getline(in, line)) {
            ++row;
            if (detail::trim(line).empty()) continue;
            const auto f = detail::split_csv_line(line);
            if (f.size() != want.size()) throw ParseError(row, "expected 7 fields");
            ReportRow r;
            r.run_id = f[0];
            r.stage = f[1];
            r.config_hash = f[2];
            r.metric = f[3];
            r.value = detail::parse_double(f[4], row, "value");
            r.seed = detail::parse_count(f[5], row, "seed");
            if (!detail::trim(f[6]).empty()) r.step = detail::parse_count(f[6], row, "step");
            try {
                rep.add(std::move(r));
            } catch (const ConfigError& e) {
                throw ParseError(row, e.what());
            }
        }
        return rep;
    }

private:
    std::vector<ReportRow> rows_;
};

inline MetricsReport read_report_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return MetricsReport::read_csv(in);
}

struct ScatterPoint {
    std::string config_hash;
    double x = 0;  // pretraining validation gaze correlation
    double y = 0;  // downstream score, MAE negated
};

struct MetricCorrelation {
    std::string metric;  // "-mae", "pearson_r" or "macro_f1"
    std::vector<ScatterPoint> points;
    std::optional<double> r;
};

// Pairs each pretrained configuration's validation correlation with the
// seed-averaged downstream metric of runs that used it.
inline std::vector<MetricCorrelation> correlate_report(const MetricsReport& pretrain, const MetricsReport& downstream)
{
    std::map<std::string, double> val;
    for (const auto& r : pretrain.select("pretrain", "val_gaze_corr")) val[r.config_hash] = r.value;
    std::vector<MetricCorrelation> out;
    bool any = false;
    for (const std::string metric : {"mae", "pearson_r", "macro_f1"}) {
        std::map<std::string, std::pair<double, std::size_t>> acc;
        for (const auto& r : downstream.rows())
            if (r.metric == metric && !r.step && (r.stage == "finetune")) {
                auto& a = acc[r.config_hash];
                a.first += r.value;
                a.second += 1;
            }
        if (acc.empty()) continue;
        any = true;
        MetricCorrelation mc;
        mc.metric = metric == "mae" ? "-mae" : metric;
        for (const auto& [hash, a] : acc) {
            const auto it = val.find(hash);
            if (it == val.end()) continue;
            const double mean = a.first / static_cast<double>(a.second);
            mc.points.push_back({hash, it->second, metric == "mae" ? -mean : mean});
        }
        if (mc.points.size() < 3)
            throw InsufficientDataError(metric + ": " + std::to_string(mc.points.size()) +
                                        " joined points, need at least 3");
        std::vector<double> xs, ys;
        for (const auto& p : mc.points) {
            xs.push_back(p.x);
            ys.push_back(p.y);
        }
        mc.r = pearson(xs, ys);
        out.push_back(std::move(mc));
    }
    if (!any) throw InsufficientDataError("no downstream rows to correlate");
    return out;
}

inline void write_correlations_csv(const std::vector<MetricCorrelation>& cs, std::ostream& out)
{
    out << "metric,points,pearson_r\n";
    for (const auto& c : cs) {
        out << c.metric << ',' << c.points.size() << ',';
        if (c.r) out << detail::format_double(*c.r);
        out << '\n';
    }
}

} // namespace glass
