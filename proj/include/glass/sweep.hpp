#pragma once

// Pretraining sweeps over one configuration axis and the report rows each
// pretraining run contributes.

#include <cmath>
#include <string>
#include <vector>

#include "glass/checkpoint.hpp"
#include "glass/pretrain.hpp"
#include "glass/report.hpp"

namespace glass {

enum class SweepAxis { model_size, input_seconds, output_seconds };

inline std::string to_string(SweepAxis a)
{
    switch (a) {
    case SweepAxis::model_size: return "model_size";
    case SweepAxis::input_seconds: return "input_seconds";
    case SweepAxis::output_seconds: return "output_seconds";
    }
    return "?";
}

inline SweepAxis sweep_axis_from_string(const std::string& s)
{
    if (s == "model_size") return SweepAxis::model_size;
    if (s == "input_seconds") return SweepAxis::input_seconds;
    if (s == "output_seconds") return SweepAxis::output_seconds;
    throw ConfigError("unknown sweep axis: " + s);
}

inline std::vector<std::string> default_sweep_values(SweepAxis a)
{
    if (a == SweepAxis::model_size) return {"small", "base", "large"};
    return {"2", "5", "10"};
}

// Seconds to frames; only whole 2, 5 or 10 second spans are accepted.
inline std::size_t seconds_to_frames(const std::string& value, double fps)
{
    if (value != "2" && value != "5" && value != "10") throw ConfigError("sweep seconds must be 2, 5 or 10, got " + value);
    return static_cast<std::size_t>(std::lround(std::stod(value) * fps));
}

// The model config for one sweep value; dimensions other than the swept one
// come from base.
inline GlassConfig apply_sweep_value(GlassConfig base, SweepAxis axis, const std::string& value, double fps = 30)
{
    switch (axis) {
    case SweepAxis::model_size: {
        auto c = GlassConfig::named(value);
        c.input_dims = base.input_dims;
        c.input_frames = base.input_frames;
        c.output_frames = base.output_frames;
        c.patch = base.patch;
        c.rope_base = base.rope_base;
        base = c;
        break;
    }
    case SweepAxis::input_seconds: base.input_frames = seconds_to_frames(value, fps); break;
    case SweepAxis::output_seconds: base.output_frames = seconds_to_frames(value, fps); break;
    }
    base.validate();
    return base;
}

struct PretrainArtifacts {
    std::string run_id;
    PretrainResult result;
    std::string checkpoint_bytes;
    std::string config_hash;
};

// Checkpoint bytes and hash of the best model; the hash joins downstream rows.
inline PretrainArtifacts package_pretraining(std::string run_id, PretrainResult result)
{
    PretrainArtifacts a{std::move(run_id), std::move(result), {}, {}};
    a.checkpoint_bytes = encode_checkpoint(make_checkpoint(a.result.best_model));
    a.config_hash = content_hash(a.checkpoint_bytes);
    return a;
}

// Summary val_gaze_corr, per-evaluation val_gaze_corr and per-step train_loss.
inline MetricsReport pretrain_report(const PretrainArtifacts& a, std::uint64_t seed)
{
    MetricsReport rep;
    if (a.result.best_val_corr)
        rep.add({a.run_id, "pretrain", a.config_hash, "val_gaze_corr", *a.result.best_val_corr, seed, std::nullopt});
    for (const auto& row : a.result.log) {
        rep.add({a.run_id, "pretrain", a.config_hash, "train_loss", row.train_loss, seed, row.step});
        if (row.val_corr) rep.add({a.run_id, "pretrain", a.config_hash, "val_gaze_corr", *row.val_corr, seed, row.step});
    }
    return rep;
}

inline ReportRow predict_previous_row(const PretrainArtifacts& a, std::uint64_t seed)
{
    if (!a.result.baseline_val_corr) throw NumericError("predict-previous correlation is undefined");
    return {"predict_previous", "predict_previous", a.config_hash, "val_gaze_corr", *a.result.baseline_val_corr, seed,
            std::nullopt};
}

struct SweepOutcome {
    std::vector<PretrainArtifacts> runs;
    MetricsReport report;
};

// One pretraining run per axis value, all with cfg.seed. Windows are
// re-extracted per value since the frame counts change.
inline SweepOutcome run_sweep(const std::vector<LoadedSubject>& subjects, const PretrainConfig& cfg, SweepAxis axis,
                              std::vector<std::string> values = {}, double fps = 30)
{
    if (values.empty()) values = default_sweep_values(axis);
    std::vector<GlassConfig> models;
    for (const auto& v : values) models.push_back(apply_sweep_value(cfg.model, axis, v, fps));

    SweepOutcome out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        PretrainConfig run_cfg = cfg;
        run_cfg.model = models[i];
        const auto data = prepare_pretrain_data(subjects, run_cfg.model, run_cfg.stride);
        out.runs.push_back(package_pretraining("sweep-" + to_string(axis) + "-" + values[i], run_pretraining(data, run_cfg)));
        out.report.append(pretrain_report(out.runs.back(), cfg.seed));
    }
    out.report.add(predict_previous_row(out.runs.front(), cfg.seed));
    return out;
}

} // namespace glass
