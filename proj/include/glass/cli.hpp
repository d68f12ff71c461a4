#pragma once

// Command-line front end: synth, pretrain, finetune, baseline, eval and
// report. Exit codes: 0 success, 1 configuration error, 2 usage error,
// 3 data or I/O failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "glass/config.hpp"
#include "glass/svg.hpp"

namespace glass::cli {

namespace fs = std::filesystem;

inline constexpr int exit_ok = 0;
inline constexpr int exit_config = 1;
inline constexpr int exit_usage = 2;
inline constexpr int exit_runtime = 3;

inline const char* checkpoint_file = "checkpoint.glss";
inline const char* norm_stats_file = "norm_stats.json";
inline const char* report_file = "report.csv";
inline const char* resolved_config_file = "resolved_config.ini";

// Checkpoints carry weights only; inputs must be normalized with the
// statistics of the pretraining run, stored beside the checkpoint.
inline void write_norm_stats(const NormStats& st, const fs::path& path)
{
    nlohmann::json j;
    j["mean"] = st.mean;
    j["std"] = st.std;
    j["clamped"] = st.clamped;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

inline NormStats read_norm_stats(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        const auto j = nlohmann::json::parse(in);
        NormStats st;
        st.mean = j.at("mean").get<decltype(st.mean)>();
        st.std = j.at("std").get<decltype(st.std)>();
        st.clamped = j.at("clamped").get<decltype(st.clamped)>();
        return st;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(0, path.string() + ": " + e.what());
    }
}

namespace detail {

inline void ensure_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

inline void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

template <typename F>
void write_with(const fs::path& path, F&& f)
{
    std::ostringstream os;
    f(os);
    write_text(path, os.str());
}

inline RunConfig load_config(const std::string& path)
{
    if (!path.empty()) return load_run_config(path);
    RunConfig c;
    c.finalize();
    return c;
}

// Subjects from a manifest, or the configured synthetic corpus when none is given.
inline std::vector<LoadedSubject> load_subjects(const RunConfig& cfg, const std::string& manifest)
{
    if (manifest.empty()) return synth_corpus(cfg.synth, cfg.corpus);
    return load_manifest(manifest, {}, cfg.synth.fps);
}

inline NormStats train_split_stats(const std::vector<LoadedSubject>& subjects)
{
    std::vector<GazeSequence> seqs;
    for (const auto& s : subjects)
        if (s.split == "train") seqs.push_back(s.sequence);
    if (seqs.empty()) throw ConfigError("no training subjects");
    return compute_norm_stats(seqs);
}

inline std::string fmt(std::optional<double> v)
{
    if (!v) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", *v);
    return buf;
}

inline std::string fmt(const MeanStd& m)
{
    if (m.count == 0) return "n/a";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f +- %.4f", m.mean, m.std);
    return buf;
}

inline void save_pretrain_run(const PretrainArtifacts& a, const fs::path& dir)
{
    ensure_dir(dir);
    write_file_bytes(dir / checkpoint_file, a.checkpoint_bytes);
    write_with(dir / "train_log.csv", [&](std::ostream& os) { write_train_log(a.result.log, os); });
    write_norm_stats(a.result.stats, dir / norm_stats_file);
}

inline void add_run_rows(MetricsReport& rep, const std::vector<FinetuneRun>& runs, const std::string& stage,
                         const std::string& run_id, const std::string& hash)
{
    for (const auto& r : runs) {
        if (r.mae) rep.add({run_id, stage, hash, "mae", *r.mae, r.seed, std::nullopt});
        if (r.pearson_r) rep.add({run_id, stage, hash, "pearson_r", *r.pearson_r, r.seed, std::nullopt});
        if (r.macro_f1) rep.add({run_id, stage, hash, "macro_f1", *r.macro_f1, r.seed, std::nullopt});
    }
}

inline void print_summary(std::ostream& out, const std::string& label, const std::vector<FinetuneRun>& runs)
{
    const auto s = summarize(runs);
    out << label << ": ";
    if (runs.empty() || runs.front().task == Task::vad)
        out << "mae " << fmt(s.mae) << ", pearson_r " << fmt(s.pearson_r);
    else
        out << "macro_f1 " << fmt(s.macro_f1);
    out << " over " << runs.size() << " splits\n";
}

} // namespace detail

// ---------------------------------------------------------------------------
// Commands. Each writes its resolved config into its output directory.

inline void cmd_synth(const RunConfig& cfg, const fs::path& out_dir, std::ostream& out)
{
    detail::ensure_dir(out_dir);
    const auto subjects = synth_corpus(cfg.synth, cfg.corpus);
    std::vector<ManifestEntry> entries;
    for (const auto& s : subjects) {
        const auto id = s.sequence.subject_id;
        detail::write_with(out_dir / (id + ".csv"), [&](std::ostream& os) { write_openface_csv(s.sequence, os); });
        detail::write_with(out_dir / (id + ".annotations.jsonl"),
                           [&](std::ostream& os) { write_annotations(s.annotations, os); });
        entries.push_back({id + ".csv", id + ".annotations.jsonl", id, s.split});
    }
    detail::write_with(out_dir / "manifest.csv", [&](std::ostream& os) { write_manifest(entries, os); });
    save_run_config(cfg, out_dir / resolved_config_file);
    out << "wrote " << subjects.size() << " subjects to " << out_dir.string() << '\n';
}

inline void cmd_pretrain(const RunConfig& cfg, const std::string& manifest, const fs::path& out_dir,
                         const std::optional<std::string>& sweep_axis, std::ostream& out)
{
    const auto axis = sweep_axis ? std::optional(sweep_axis_from_string(*sweep_axis)) : std::nullopt;
    detail::ensure_dir(out_dir);
    save_run_config(cfg, out_dir / resolved_config_file);
    const auto subjects = detail::load_subjects(cfg, manifest);
    MetricsReport rep;
    if (axis) {
        const auto values = *axis == cfg.sweep_axis ? cfg.sweep_values : default_sweep_values(*axis);
        const auto sw = run_sweep(subjects, cfg.pretrain, *axis, values, cfg.synth.fps);
        for (const auto& r : sw.runs) {
            detail::save_pretrain_run(r, out_dir / r.run_id);
            out << r.run_id << ": val_gaze_corr " << detail::fmt(r.result.best_val_corr) << " (step "
                << r.result.best_step << "), checkpoint " << r.config_hash << '\n';
        }
        out << "predict_previous: val_gaze_corr " << detail::fmt(sw.runs.front().result.baseline_val_corr) << '\n';
        rep = sw.report;
    } else {
        const auto data = prepare_pretrain_data(subjects, cfg.pretrain.model, cfg.pretrain.stride);
        const auto a = package_pretraining("pretrain-" + cfg.pretrain.model.size_name, run_pretraining(data, cfg.pretrain));
        detail::save_pretrain_run(a, out_dir);
        rep = pretrain_report(a, cfg.pretrain.seed);
        rep.add(predict_previous_row(a, cfg.pretrain.seed));
        out << "train windows " << data.train.size() << ", val windows " << data.val.size() << '\n'
            << "val_gaze_corr " << detail::fmt(a.result.best_val_corr) << " at step " << a.result.best_step
            << ", predict_previous " << detail::fmt(a.result.baseline_val_corr) << '\n'
            << "checkpoint " << (out_dir / checkpoint_file).string() << " (" << a.config_hash << ")\n";
    }
    detail::write_with(out_dir / report_file, [&](std::ostream& os) { rep.write_csv(os); });
}

inline void cmd_finetune(const RunConfig& cfg, const std::string& manifest, const std::vector<std::string>& checkpoints,
                         const fs::path& out_dir, std::ostream& out)
{
    detail::ensure_dir(out_dir);
    save_run_config(cfg, out_dir / resolved_config_file);
    const auto subjects = detail::load_subjects(cfg, manifest);
    MetricsReport rep;
    std::vector<FinetuneRun> all;
    for (const auto& ck : checkpoints) {
        const fs::path path(ck);
        const auto bytes = read_file_bytes(path);
        const auto hash = content_hash(bytes);
        const auto model = model_from_checkpoint<float>(decode_checkpoint(bytes));
        const auto stats = read_norm_stats(path.parent_path() / norm_stats_file);
        const auto data = build_task_dataset(subjects, cfg.finetune.task, cfg.input_seconds, stats, cfg.stride_seconds);
        const auto runs = run_finetune_seeds(model, data, cfg.finetune, cfg.split_seeds);
        const std::string run_id = "finetune-" + to_string(cfg.finetune.head) + "-" + to_string(cfg.finetune.task);
        detail::add_run_rows(rep, runs, "finetune", run_id, hash);
        detail::print_summary(out, run_id + " " + hash, runs);
        all.insert(all.end(), runs.begin(), runs.end());
    }
    detail::write_with(out_dir / "finetune.csv", [&](std::ostream& os) { write_finetune_csv(all, os); });
    detail::write_with(out_dir / report_file, [&](std::ostream& os) { rep.write_csv(os); });
}

inline void cmd_baseline(const RunConfig& cfg, const std::string& manifest, const fs::path& out_dir, std::ostream& out)
{
    detail::ensure_dir(out_dir);
    save_run_config(cfg, out_dir / resolved_config_file);
    const auto subjects = detail::load_subjects(cfg, manifest);
    const auto data = build_task_dataset(subjects, cfg.finetune.task, cfg.input_seconds,
                                         detail::train_split_stats(subjects), cfg.stride_seconds);
    const auto runs = fit_baseline_seeds(data, cfg.baseline, cfg.finetune, cfg.split_seeds);
    const std::string run_id = "baseline-" + to_string(cfg.baseline) + "-" + to_string(cfg.finetune.task);
    MetricsReport rep;
    detail::add_run_rows(rep, runs, "baseline", run_id, to_string(cfg.baseline));
    detail::print_summary(out, run_id, runs);
    detail::write_with(out_dir / "baseline.csv", [&](std::ostream& os) { write_finetune_csv(runs, os); });
    detail::write_with(out_dir / report_file, [&](std::ostream& os) { rep.write_csv(os); });
}

inline void cmd_eval(const RunConfig& cfg, const std::string& manifest, const std::string& checkpoint,
                     const fs::path& out_dir, std::ostream& out)
{
    detail::ensure_dir(out_dir);
    save_run_config(cfg, out_dir / resolved_config_file);
    const fs::path path(checkpoint);
    const auto bytes = read_file_bytes(path);
    const auto hash = content_hash(bytes);
    auto model = model_from_checkpoint<float>(decode_checkpoint(bytes));
    const auto stats = read_norm_stats(path.parent_path() / norm_stats_file);
    const WindowSpec spec{model.config().input_frames, model.config().output_frames, cfg.pretrain.stride};
    std::vector<GazeWindow> windows;
    for (const auto& s : detail::load_subjects(cfg, manifest))
        if (s.split == "val")
            for (auto& w : extract_windows(normalize(s.sequence, stats), spec)) windows.push_back(std::move(w));
    if (windows.empty()) throw ConfigError("validation split yields no windows");
    const auto score = validate_forecasts(model, windows, stats);
    MetricsReport rep;
    if (score.model_corr) rep.add({"eval", "pretrain", hash, "val_gaze_corr", *score.model_corr, 0, std::nullopt});
    if (score.baseline_corr)
        rep.add({"predict_previous", "predict_previous", hash, "val_gaze_corr", *score.baseline_corr, 0, std::nullopt});
    out << "windows " << windows.size() << ", val_gaze_corr " << detail::fmt(score.model_corr) << ", predict_previous "
        << detail::fmt(score.baseline_corr) << '\n';
    detail::write_with(out_dir / report_file, [&](std::ostream& os) { rep.write_csv(os); });
}

inline void cmd_report(const RunConfig& cfg, const std::vector<std::string>& inputs, const fs::path& out_dir,
                       std::ostream& out)
{
    MetricsReport rep;
    for (const auto& p : inputs) rep.append(read_report_file(p));
    if (rep.empty()) throw InsufficientDataError("input reports hold no rows");
    detail::ensure_dir(out_dir);
    save_run_config(cfg, out_dir / resolved_config_file);
    detail::write_with(out_dir / report_file, [&](std::ostream& os) { rep.write_csv(os); });
    try {
        const auto cs = correlate_report(rep, rep);
        detail::write_with(out_dir / "correlations.csv", [&](std::ostream& os) { write_correlations_csv(cs, os); });
        for (const auto& c : cs) out << "corr(val_gaze_corr, " << c.metric << ") = " << detail::fmt(c.r) << '\n';
    } catch (const InsufficientDataError& e) {
        out << "no correlation table: " << e.what() << '\n';
    }
    for (const auto& f : emit_plots(rep, out_dir)) out << "wrote " << f.string() << '\n';
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    CLI::App app{"Gaze forecasting pretraining and emotion fine-tuning", "glass_cli"};
    app.require_subcommand(1, 1);

    std::string config, manifest, out_dir, checkpoint;
    std::vector<std::string> checkpoints, inputs;
    std::string sweep, baseline_kind;

    auto* synth = app.add_subcommand("synth", "Write a synthetic corpus: CSVs, annotations, manifest");
    synth->add_option("--config", config, "INI run configuration")->check(CLI::ExistingFile);
    synth->add_option("--out", out_dir, "Output directory")->required();

    auto* pretrain = app.add_subcommand("pretrain", "Pretrain the forecaster; checkpoint and training log");
    pretrain->add_option("--config", config, "INI run configuration")->check(CLI::ExistingFile);
    pretrain->add_option("--data", manifest, "Manifest CSV (default: synthetic corpus from config)");
    pretrain->add_option("--out", out_dir, "Output directory (default pretrain_out)");
    pretrain->add_option("--sweep", sweep, "Sweep axis: model_size, input_seconds or output_seconds");

    auto* finetune = app.add_subcommand("finetune", "Fine-tune an emotion head on pretrained encoders");
    finetune->add_option("--config", config, "INI run configuration")->check(CLI::ExistingFile);
    finetune->add_option("--data", manifest, "Manifest CSV (default: synthetic corpus from config)");
    finetune->add_option("--checkpoint", checkpoints, "Checkpoint file; repeat for several")->required();
    finetune->add_option("--out", out_dir, "Output directory");

    auto* baseline = app.add_subcommand("baseline", "Fit a statistical or CNN baseline");
    baseline->add_option("--config", config, "INI run configuration")->check(CLI::ExistingFile);
    baseline->add_option("--data", manifest, "Manifest CSV (default: synthetic corpus from config)");
    baseline->add_option("--kind", baseline_kind, "stats_eyes, stats_face or cnn (overrides config)");
    baseline->add_option("--out", out_dir, "Output directory");

    auto* eval = app.add_subcommand("eval", "Score a checkpoint on validation windows");
    eval->add_option("--config", config, "INI run configuration")->check(CLI::ExistingFile);
    eval->add_option("--data", manifest, "Manifest CSV (default: synthetic corpus from config)");
    eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    eval->add_option("--out", out_dir, "Output directory");

    auto* report = app.add_subcommand("report", "Merge reports, correlate and plot");
    report->add_option("--config", config, "INI run configuration")->check(CLI::ExistingFile);
    report->add_option("--input", inputs, "Report CSV; repeat for several")->required()->check(CLI::ExistingFile);
    report->add_option("--out", out_dir, "Output directory")->required();

    if (argc > 1 && argv[1][0] != '-') {
        bool known = false;
        for (const auto* sub : app.get_subcommands({})) known = known || sub->get_name() == argv[1];
        if (!known) {
            err << "error: usage: unknown subcommand '" << argv[1] << "'\n" << app.help();
            return exit_usage;
        }
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        err << "error: usage: " << e.what() << '\n';
        const auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return exit_usage;
    }

    try {
        RunConfig cfg = detail::load_config(config);
        if (out_dir.empty()) out_dir = app.got_subcommand(pretrain) ? "pretrain_out" : "glass_out";
        if (app.got_subcommand(synth)) {
            cmd_synth(cfg, out_dir, out);
        } else if (app.got_subcommand(pretrain)) {
            cmd_pretrain(cfg, manifest, out_dir, sweep.empty() ? std::nullopt : std::optional(sweep), out);
        } else if (app.got_subcommand(finetune)) {
            cmd_finetune(cfg, manifest, checkpoints, out_dir, out);
        } else if (app.got_subcommand(baseline)) {
            if (!baseline_kind.empty()) cfg.baseline = baseline_from_string(baseline_kind);
            cmd_baseline(cfg, manifest, out_dir, out);
        } else if (app.got_subcommand(eval)) {
            cmd_eval(cfg, manifest, checkpoint, out_dir, out);
        } else {
            cmd_report(cfg, inputs, out_dir, out);
        }
    } catch (const ConfigError& e) {
        err << "error: config: " << e.what() << '\n';
        return exit_config;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_runtime;
    }
    return exit_ok;
}

} // namespace glass::cli
