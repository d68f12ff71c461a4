#pragma once

// Minimal self-contained SVG line and scatter plots. Coordinates are printed
// with fixed precision so identical inputs give identical bytes.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "glass/report.hpp"

namespace glass {

struct PlotSeries {
    std::string label;
    std::vector<std::pair<double, double>> points;
    bool dashed = false;
};

namespace detail {

inline std::string fixed(double v, int digits = 2)
{
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

inline std::string xml_escape(const std::string& s)
{
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

inline const char* palette(std::size_t i)
{
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};
    return colors[i % 7];
}

struct Frame {
    double x0, x1, y0, y1;
    static constexpr double width = 640, height = 420, left = 70, right = 170, top = 40, bottom = 60;

    double px(double x) const { return left + (x - x0) / (x1 - x0) * (width - left - right); }
    double py(double y) const { return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom); }
};

inline Frame fit_frame(const std::vector<std::pair<double, double>>& pts)
{
    Frame f{0, 1, 0, 1};
    if (pts.empty()) return f;
    f.x0 = f.x1 = pts[0].first;
    f.y0 = f.y1 = pts[0].second;
    for (const auto& [x, y] : pts) {
        f.x0 = std::min(f.x0, x);
        f.x1 = std::max(f.x1, x);
        f.y0 = std::min(f.y0, y);
        f.y1 = std::max(f.y1, y);
    }
    auto pad = [](double& lo, double& hi) {
        const double span = hi - lo;
        const double m = span > 0 ? 0.05 * span : (std::abs(lo) > 0 ? 0.05 * std::abs(lo) : 0.5);
        lo -= m;
        hi += m;
    };
    pad(f.x0, f.x1);
    pad(f.y0, f.y1);
    return f;
}

inline void axes(std::ostringstream& s, const Frame& f, const std::string& title, const std::string& xlabel,
                 const std::string& ylabel)
{
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << Frame::width << "\" height=\"" << Frame::height
      << "\" viewBox=\"0 0 " << Frame::width << ' ' << Frame::height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << fixed(Frame::width / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
      << xml_escape(title) << "</text>\n";
    const double xa = Frame::left, xb = Frame::width - Frame::right;
    const double ya = Frame::top, yb = Frame::height - Frame::bottom;
    s << "<path d=\"M" << fixed(xa) << ' ' << fixed(ya) << " V" << fixed(yb) << " H" << fixed(xb)
      << "\" stroke=\"black\" fill=\"none\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0, yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
        s << "<text x=\"" << fixed(f.px(xv)) << "\" y=\"" << fixed(yb + 16) << "\" text-anchor=\"middle\">"
          << fixed(xv, 3) << "</text>\n";
        s << "<text x=\"" << fixed(xa - 6) << "\" y=\"" << fixed(f.py(yv) + 4) << "\" text-anchor=\"end\">"
          << fixed(yv, 3) << "</text>\n";
    }
    s << "<text x=\"" << fixed((xa + xb) / 2) << "\" y=\"" << fixed(Frame::height - 18)
      << "\" text-anchor=\"middle\">" << xml_escape(xlabel) << "</text>\n";
    s << "<text x=\"18\" y=\"" << fixed((ya + yb) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
      << fixed((ya + yb) / 2) << ")\">" << xml_escape(ylabel) << "</text>\n";
}

} // namespace detail

inline std::string line_plot_svg(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                                 const std::vector<PlotSeries>& series)
{
    std::vector<std::pair<double, double>> all;
    for (const auto& s : series) all.insert(all.end(), s.points.begin(), s.points.end());
    const auto f = detail::fit_frame(all);
    std::ostringstream s;
    detail::axes(s, f, title, xlabel, ylabel);
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& sr = series[i];
        if (sr.points.empty()) continue;
        s << "<polyline fill=\"none\" stroke=\"" << detail::palette(i) << "\" stroke-width=\"1.5\"";
        if (sr.dashed) s << " stroke-dasharray=\"6 4\"";
        s << " points=\"";
        for (std::size_t k = 0; k < sr.points.size(); ++k)
            s << (k ? " " : "") << detail::fixed(f.px(sr.points[k].first)) << ',' << detail::fixed(f.py(sr.points[k].second));
        s << "\"/>\n";
        const double ly = detail::Frame::top + 16.0 * static_cast<double>(i);
        const double lx = detail::Frame::width - detail::Frame::right + 12;
        s << "<line x1=\"" << detail::fixed(lx) << "\" y1=\"" << detail::fixed(ly) << "\" x2=\"" << detail::fixed(lx + 18)
          << "\" y2=\"" << detail::fixed(ly) << "\" stroke=\"" << detail::palette(i) << "\"";
        if (sr.dashed) s << " stroke-dasharray=\"6 4\"";
        s << "/>\n<text x=\"" << detail::fixed(lx + 24) << "\" y=\"" << detail::fixed(ly + 4) << "\">"
          << detail::xml_escape(sr.label) << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

inline std::string scatter_svg(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                               const std::vector<std::pair<double, double>>& points, std::optional<double> r)
{
    const auto f = detail::fit_frame(points);
    std::ostringstream s;
    detail::axes(s, f, title, xlabel, ylabel);
    for (const auto& [x, y] : points)
        s << "<circle cx=\"" << detail::fixed(f.px(x)) << "\" cy=\"" << detail::fixed(f.py(y))
          << "\" r=\"4\" fill=\"#1f77b4\"/>\n";
    s << "<text x=\"" << detail::fixed(detail::Frame::width - detail::Frame::right + 12) << "\" y=\""
      << detail::fixed(detail::Frame::top + 4) << "\">r = " << (r ? detail::fixed(*r, 3) : std::string("n/a"))
      << "</text>\n</svg>\n";
    return s.str();
}

namespace detail {

inline void write_text_file(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

// Per-run curve of one metric against step, ordered by run id.
inline std::vector<PlotSeries> curves(const MetricsReport& report, const std::string& metric)
{
    std::map<std::string, PlotSeries> by_run;
    for (const auto& r : report.rows())
        if (r.metric == metric && r.step && r.stage == "pretrain") {
            auto& s = by_run[r.run_id];
            s.label = r.run_id;
            s.points.emplace_back(static_cast<double>(*r.step), r.value);
        }
    std::vector<PlotSeries> out;
    for (auto& [id, s] : by_run) {
        std::stable_sort(s.points.begin(), s.points.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace detail

// Learning curves from step rows, a predict-previous reference line, and one
// scatter per downstream metric when the report joins. Everything is
// rendered before any file is written.
inline std::vector<std::filesystem::path> emit_plots(const MetricsReport& report, const std::filesystem::path& out_dir)
{
    if (report.empty()) throw InsufficientDataError("empty report, nothing to plot");
    std::vector<std::pair<std::string, std::string>> files;

    auto val = detail::curves(report, "val_gaze_corr");
    if (!val.empty()) {
        double x0 = val[0].points.front().first, x1 = x0;
        for (const auto& s : val)
            for (const auto& p : s.points) {
                x0 = std::min(x0, p.first);
                x1 = std::max(x1, p.first);
            }
        for (const auto& b : report.select("predict_previous", "val_gaze_corr")) {
            const std::string label = b.run_id == "predict_previous" ? "predict-previous" : "predict-previous " + b.run_id;
            val.push_back({label, {{x0, b.value}, {x1, b.value}}, true});
        }
        files.emplace_back("val_gaze_corr.svg", line_plot_svg("Validation gaze correlation", "training step",
                                                               "gaze correlation", val));
    }
    const auto loss = detail::curves(report, "train_loss");
    if (!loss.empty())
        files.emplace_back("train_loss.svg", line_plot_svg("Training loss", "training step", "joint loss", loss));

    try {
        for (const auto& c : correlate_report(report, report)) {
            std::vector<std::pair<double, double>> pts;
            for (const auto& p : c.points) pts.emplace_back(p.x, p.y);
            const std::string name = c.metric == "-mae" ? "neg_mae" : c.metric;
            files.emplace_back("scatter_" + name + ".svg",
                               scatter_svg("Pretraining vs downstream (" + c.metric + ")", "validation gaze correlation",
                                           c.metric, pts, c.r));
        }
    } catch (const InsufficientDataError&) {
        // No joinable downstream rows; curves only.
    }
    if (files.empty()) throw InsufficientDataError("report has no plottable rows");

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    std::vector<std::filesystem::path> written;
    for (const auto& [name, text] : files) {
        detail::write_text_file(out_dir / name, text);
        written.push_back(out_dir / name);
    }
    return written;
}

} // namespace glass
