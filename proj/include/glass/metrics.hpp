#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "glass/gaze_data.hpp"

namespace glass {

// Pearson correlation; nullopt when either side has zero variance.
inline std::optional<double> pearson(std::span<const double> x, std::span<const double> y)
{
    if (x.size() != y.size()) throw ShapeError("pearson inputs differ in length");
    if (x.empty()) return std::nullopt;
    auto constant = [](std::span<const double> v) {
        return std::all_of(v.begin(), v.end(), [&](double a) { return a == v[0]; });
    };
    if (constant(x) || constant(y)) return std::nullopt;
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0 || syy <= 0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

// Pooled correlation over every (window, frame, dim) value.
inline std::optional<double> gaze_correlation(const std::vector<Tensor<double>>& preds,
                                              const std::vector<Tensor<double>>& targets)
{
    if (preds.empty() || preds.size() != targets.size()) throw ShapeError("gaze_correlation needs matching non-empty lists");
    std::vector<double> x, y;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i].dims() != targets[i].dims())
            throw ShapeError("prediction " + shape_str(preds[i].dims()) + " vs target " + shape_str(targets[i].dims()));
        x.insert(x.end(), preds[i].data().begin(), preds[i].data().end());
        y.insert(y.end(), targets[i].data().begin(), targets[i].data().end());
    }
    return pearson(x, y);
}

struct VadMetrics {
    double mae = 0;
    std::optional<double> pearson_r;
};

// MAE averages the per-sample mean over the three dims; r pools every
// (sample, dim) pair.
inline VadMetrics vad_metrics(const std::vector<VADLabel>& preds, const std::vector<VADLabel>& labels)
{
    if (preds.empty() || preds.size() != labels.size()) throw ShapeError("vad_metrics needs equal non-empty lists");
    VadMetrics m;
    std::vector<double> x, y;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto p = preds[i].as_array(), l = labels[i].as_array();
        double s = 0;
        for (int k = 0; k < 3; ++k) {
            s += std::abs(p[k] - l[k]);
            x.push_back(p[k]);
            y.push_back(l[k]);
        }
        m.mae += s / 3.0;
    }
    m.mae /= static_cast<double>(preds.size());
    m.pearson_r = pearson(x, y);
    return m;
}

// Unweighted mean of per-class F1 over all three behavior classes.
inline double macro_f1(const std::vector<BehaviorClass>& preds, const std::vector<BehaviorClass>& labels)
{
    if (preds.empty() || preds.size() != labels.size()) throw ShapeError("macro_f1 needs equal non-empty lists");
    std::array<double, behavior_class_count> tp{}, fp{}, fn{};
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto p = static_cast<std::size_t>(preds[i]), l = static_cast<std::size_t>(labels[i]);
        if (p == l) {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn[l] += 1;
        }
    }
    double total = 0;
    for (std::size_t c = 0; c < behavior_class_count; ++c) {
        const double denom = 2 * tp[c] + fp[c] + fn[c];
        total += denom > 0 ? 2 * tp[c] / denom : 0.0;
    }
    return total / static_cast<double>(behavior_class_count);
}

struct MeanStd {
    double mean = 0;
    double std = 0;
    std::size_t count = 0;
};

// Sample standard deviation (n - 1); missing values are skipped.
inline MeanStd mean_std(const std::vector<std::optional<double>>& values)
{
    MeanStd r;
    double s = 0;
    for (const auto& v : values)
        if (v) {
            s += *v;
            ++r.count;
        }
    if (r.count == 0) return r;
    r.mean = s / static_cast<double>(r.count);
    double sq = 0;
    for (const auto& v : values)
        if (v) sq += (*v - r.mean) * (*v - r.mean);
    r.std = r.count > 1 ? std::sqrt(sq / static_cast<double>(r.count - 1)) : 0.0;
    return r;
}

} // namespace glass
