#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "glass/autodiff.hpp"

namespace glass {

struct GradCheckOptions {
    double step = 1e-4;
    double tol = 1e-4;
    // 0 checks every coordinate of every parameter.
    std::size_t max_coords_per_param = 0;
    // Denominator floor for the relative error, so coordinates whose true
    // derivative is ~0 are judged on absolute error instead.
    double scale_floor = 1e-6;
    // Also compare grad . u against the central difference along a random
    // +-1/sqrt(n) direction u spanning the whole tensor, once per parameter.
    bool directional = false;
    std::uint64_t seed = 0;
};

struct GradCheckEntry {
    std::string param;
    std::size_t index = 0;
    double analytic = 0;
    double numeric = 0;
    double rel_error = 0;
};

struct GradCheckReport {
    double max_rel_error = 0;
    std::size_t checked = 0;
    // Coordinates where the perturbation crossed a piecewise branch.
    std::size_t excluded = 0;
    std::size_t params_covered = 0;
    std::size_t directions_checked = 0;
    GradCheckEntry worst;
    bool passed = false;
};

inline double relative_error(double analytic, double numeric, double floor)
{
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Compares reverse-mode gradients of a scalar tape function against central
// differences. `loss_fn(Tape<double>&)` must rebuild the whole computation
// from the parameter values each time it is called.
template <typename F>
GradCheckReport grad_check(ParameterSet<double>& params, F&& loss_fn, const GradCheckOptions& opt = {})
{
    auto evaluate = [&](std::uint64_t& signature) {
        Tape<double> tape;
        Var<double> loss = loss_fn(tape);
        const double v = loss.value()[0];
        if (!std::isfinite(v)) throw NumericError("loss is not finite");
        signature = tape.branch_signature();
        return v;
    };

    params.zero_grad();
    auto record = [&](GradCheckReport& rep, const std::string& name, std::size_t idx, double analytic, double numeric) {
        const double rel = relative_error(analytic, numeric, opt.scale_floor);
        if (rel >= rep.max_rel_error) {
            rep.max_rel_error = rel;
            rep.worst = {name, idx, analytic, numeric, rel};
        }
    };

    std::uint64_t base_sig = 0;
    {
        Tape<double> tape;
        Var<double> loss = loss_fn(tape);
        if (!std::isfinite(loss.value()[0])) throw NumericError("loss is not finite");
        base_sig = tape.branch_signature();
        tape.backward(loss);
    }

    GradCheckReport report;
    std::mt19937_64 rng(opt.seed);
    for (auto& p : params) {
        for (auto g : p.grad.data())
            if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + p.name);
        std::vector<std::size_t> coords(p.value.size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (opt.max_coords_per_param && coords.size() > opt.max_coords_per_param) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(opt.max_coords_per_param);
            std::sort(coords.begin(), coords.end());
        }
        ++report.params_covered;
        for (auto idx : coords) {
            const double orig = p.value[idx];
            std::uint64_t sig_plus = 0, sig_minus = 0;
            p.value[idx] = orig + opt.step;
            const double f_plus = evaluate(sig_plus);
            p.value[idx] = orig - opt.step;
            const double f_minus = evaluate(sig_minus);
            p.value[idx] = orig;
            if (sig_plus != base_sig || sig_minus != base_sig) {
                ++report.excluded;
                continue;
            }
            ++report.checked;
            record(report, p.name, idx, p.grad[idx], (f_plus - f_minus) / (2.0 * opt.step));
        }
        if (opt.directional) {
            std::bernoulli_distribution coin(0.5);
            std::vector<double> u(p.value.size());
            double analytic = 0;
            for (std::size_t i = 0; i < u.size(); ++i) {
                u[i] = (coin(rng) ? 1.0 : -1.0) / std::sqrt(static_cast<double>(u.size()));
                analytic += u[i] * p.grad[i];
            }
            const Tensor<double> orig = p.value;
            std::uint64_t sig_plus = 0, sig_minus = 0;
            for (std::size_t i = 0; i < u.size(); ++i) p.value[i] = orig[i] + opt.step * u[i];
            const double f_plus = evaluate(sig_plus);
            for (std::size_t i = 0; i < u.size(); ++i) p.value[i] = orig[i] - opt.step * u[i];
            const double f_minus = evaluate(sig_minus);
            p.value = orig;
            if (sig_plus != base_sig || sig_minus != base_sig) {
                ++report.excluded;
            } else {
                ++report.directions_checked;
                record(report, p.name + " (direction)", 0, analytic, (f_plus - f_minus) / (2.0 * opt.step));
            }
        }
    }
    report.passed = report.max_rel_error < opt.tol;
    return report;
}

} // namespace glass
