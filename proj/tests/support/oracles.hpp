#pragma once

// Straight-from-the-definition reference implementations used to cross-check
// the library metrics. Deliberately naive.

#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "glass/gaze_data.hpp"

namespace oracle {

// Single-pass moment formula in long double, unlike the library's two-pass
// centered sums.
inline std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y)
{
    long double n = static_cast<long double>(x.size()), sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += static_cast<long double>(x[i]) * x[i];
        syy += static_cast<long double>(y[i]) * y[i];
        sxy += static_cast<long double>(x[i]) * y[i];
    }
    const long double vx = n * sxx - sx * sx, vy = n * syy - sy * sy;
    bool cx = true, cy = true;
    for (std::size_t i = 1; i < x.size(); ++i) {
        cx = cx && x[i] == x[0];
        cy = cy && y[i] == y[0];
    }
    if (cx || cy) return std::nullopt;
    return static_cast<double>((n * sxy - sx * sy) / std::sqrt(vx * vy));
}

struct Vad {
    double mae;
    std::optional<double> r;
};

// Flattened absolute error over all 3n values, then one mean.
inline Vad vad_metrics(const std::vector<glass::VADLabel>& p, const std::vector<glass::VADLabel>& l)
{
    std::vector<double> x, y;
    long double abs_sum = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pv[3] = {p[i].valence, p[i].arousal, p[i].dominance};
        const double lv[3] = {l[i].valence, l[i].arousal, l[i].dominance};
        for (int k = 0; k < 3; ++k) {
            abs_sum += std::fabs(pv[k] - lv[k]);
            x.push_back(pv[k]);
            y.push_back(lv[k]);
        }
    }
    return {static_cast<double>(abs_sum / (3.0L * static_cast<long double>(p.size()))), pearson(x, y)};
}

// Precision and recall per class, F1 as their harmonic mean, zero when
// undefined.
inline double macro_f1(const std::vector<glass::BehaviorClass>& p, const std::vector<glass::BehaviorClass>& l)
{
    double total = 0;
    for (int c = 0; c < 3; ++c) {
        const auto cls = static_cast<glass::BehaviorClass>(c);
        double tp = 0, pred_pos = 0, real_pos = 0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            tp += (p[i] == cls && l[i] == cls);
            pred_pos += (p[i] == cls);
            real_pos += (l[i] == cls);
        }
        const double precision = pred_pos > 0 ? tp / pred_pos : 0;
        const double recall = real_pos > 0 ? tp / real_pos : 0;
        total += precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0;
    }
    return total / 3;
}

struct RandomInstance {
    std::vector<glass::VADLabel> vad_pred, vad_label;
    std::vector<glass::BehaviorClass> cls_pred, cls_label;
};

inline RandomInstance random_instance(std::mt19937_64& rng)
{
    std::uniform_int_distribution<int> size(2, 60), cls(0, 2);
    std::uniform_real_distribution<double> u(0, 1);
    RandomInstance inst;
    const int n = size(rng);
    for (int i = 0; i < n; ++i) {
        inst.vad_pred.push_back({u(rng), u(rng), u(rng)});
        inst.vad_label.push_back({u(rng), u(rng), u(rng)});
        inst.cls_pred.push_back(static_cast<glass::BehaviorClass>(cls(rng)));
        inst.cls_label.push_back(static_cast<glass::BehaviorClass>(cls(rng)));
    }
    return inst;
}

} // namespace oracle
