#pragma once

// Sectioned INI run configuration. Every key has a default; unknown
// sections and keys are errors. `write_run_config` echoes the fully resolved
// configuration, which reads back to an identical RunConfig.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "glass/baselines.hpp"
#include "glass/dataset_io.hpp"
#include "glass/sweep.hpp"

namespace glass {

struct RunConfig {
    SynthConfig synth;
    CorpusSpec corpus;
    PretrainConfig pretrain;
    FinetuneConfig finetune;
    double input_seconds = 5;
    double stride_seconds = 3;
    BaselineKind baseline = BaselineKind::stats_eyes;
    SweepAxis sweep_axis = SweepAxis::output_seconds;
    std::vector<std::string> sweep_values{"2", "5", "10"};
    std::vector<std::uint64_t> split_seeds{0, 1, 2, 3, 4};

    // Ties derived fields together and checks every section.
    void finalize()
    {
        synth.validate();
        pretrain.validate();
        finetune.fps = synth.fps;
        finetune.chunk.patch_rate = synth.fps / static_cast<double>(pretrain.model.patch);
        finetune.validate();
        check_input_seconds(input_seconds);
        if (!(stride_seconds > 0)) throw ConfigError("finetune.stride_seconds must be positive");
        if (split_seeds.empty()) throw ConfigError("seeds.split_seeds is empty");
        for (const auto& v : sweep_values) apply_sweep_value(pretrain.model, sweep_axis, v, synth.fps);
    }
};

namespace detail {

struct ConfigField {
    std::string section;
    std::string key;
    std::function<std::string()> get;
    std::function<void(const std::string&)> set;
};

template <typename N>
N parse_number(const std::string& text, const std::string& where)
{
    N v{};
    const auto s = trim(text);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw ConfigError(where + ": cannot parse '" + text + "'");
    return v;
}

inline bool parse_bool(const std::string& text, const std::string& where)
{
    const auto s = trim(text);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError(where + ": expected true or false, got '" + text + "'");
}

inline std::vector<std::string> split_list(const std::string& text)
{
    std::vector<std::string> out;
    for (auto& part : split_csv_line(text)) {
        auto t = trim(part);
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

template <typename T>
std::string join_list(const std::vector<T>& xs)
{
    std::ostringstream os;
    for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << xs[i];
    return os.str();
}

// Binds every key to a field of `c`. Order here is the echo order.
inline std::vector<ConfigField> config_fields(RunConfig& c)
{
    std::vector<ConfigField> f;
    auto real = [&f](std::string sec, std::string key, double& ref) {
        const auto where = sec + "." + key;
        f.push_back({sec, key, [&ref] { return format_double(ref); },
                     [&ref, where](const std::string& s) { ref = parse_number<double>(s, where); }});
    };
    auto size = [&f](std::string sec, std::string key, std::size_t& ref) {
        const auto where = sec + "." + key;
        f.push_back({sec, key, [&ref] { return std::to_string(ref); },
                     [&ref, where](const std::string& s) { ref = parse_number<std::size_t>(s, where); }});
    };
    auto u64 = [&f](std::string sec, std::string key, std::uint64_t& ref) {
        const auto where = sec + "." + key;
        f.push_back({sec, key, [&ref] { return std::to_string(ref); },
                     [&ref, where](const std::string& s) { ref = parse_number<std::uint64_t>(s, where); }});
    };

    auto& s = c.synth;
    real("synth", "duration_s", s.duration_s);
    real("synth", "fps", s.fps);
    size("synth", "regimes", s.regimes);
    u64("synth", "library_seed", s.library_seed);
    real("synth", "segment_min_s", s.segment_min_s);
    real("synth", "segment_max_s", s.segment_max_s);
    real("synth", "amplitude_scale", s.amplitude_scale);
    real("synth", "noise_scale", s.noise_scale);
    real("synth", "ou_theta", s.ou_theta);
    real("synth", "ou_sigma", s.ou_sigma);
    real("synth", "gaps_per_min", s.gaps_per_min);
    real("synth", "label_noise", s.label_noise);
    real("synth", "behavior_threshold", s.behavior_threshold);
    real("synth", "behavior_events_per_min", s.behavior_events_per_min);

    size("corpus", "train_subjects", c.corpus.train_subjects);
    size("corpus", "val_subjects", c.corpus.val_subjects);
    u64("corpus", "seed", c.corpus.seed);

    auto& m = c.pretrain.model;
    // The size preset sets width, depth and heads; it is applied before the
    // other model keys so explicit values override it (see apply_ptree).
    f.push_back({"model", "size", [&m] { return m.size_name; }, [&m](const std::string& v) {
                     const auto p = GlassConfig::named(trim(v));
                     m.model_dim = p.model_dim;
                     m.encoder_blocks = p.encoder_blocks;
                     m.decoder_blocks = p.decoder_blocks;
                     m.heads = p.heads;
                     m.size_name = p.size_name;
                 }});
    size("model", "input_frames", m.input_frames);
    size("model", "output_frames", m.output_frames);
    size("model", "patch", m.patch);
    size("model", "model_dim", m.model_dim);
    size("model", "encoder_blocks", m.encoder_blocks);
    size("model", "decoder_blocks", m.decoder_blocks);
    size("model", "heads", m.heads);
    real("model", "rope_base", m.rope_base);

    real("loss", "lambda", c.pretrain.loss.lambda);
    real("loss", "huber_delta", c.pretrain.loss.huber_delta);

    auto& o = c.pretrain.optim;
    real("optim", "base_lr", o.base_lr);
    size("optim", "warmup_steps", o.warmup_steps);
    real("optim", "weight_decay", o.weight_decay);
    real("optim", "beta1", o.beta1);
    real("optim", "beta2", o.beta2);
    real("optim", "eps", o.eps);
    size("optim", "total_steps", o.total_steps);

    real("schedule", "end_fraction", c.pretrain.schedule.end_fraction);

    size("pretrain", "batch_size", c.pretrain.batch_size);
    real("pretrain", "clip_norm", c.pretrain.clip_norm);
    size("pretrain", "eval_every", c.pretrain.eval_every);
    size("pretrain", "stride", c.pretrain.stride);
    u64("pretrain", "seed", c.pretrain.seed);

    auto& ft = c.finetune;
    f.push_back({"finetune", "head", [&ft] { return to_string(ft.head); },
                 [&ft](const std::string& v) { ft.head = head_from_string(trim(v)); }});
    f.push_back({"finetune", "task", [&ft] { return to_string(ft.task); },
                 [&ft](const std::string& v) { ft.task = task_from_string(trim(v)); }});
    real("finetune", "input_seconds", c.input_seconds);
    real("finetune", "stride_seconds", c.stride_seconds);
    real("finetune", "chunk_seconds", ft.chunk.chunk_seconds);
    size("finetune", "epochs", ft.epochs);
    size("finetune", "batch_size", ft.batch_size);
    real("finetune", "lr", ft.lr);
    real("finetune", "weight_decay", ft.weight_decay);
    real("finetune", "dropout", ft.dropout);
    size("finetune", "hidden", ft.hidden);
    f.push_back({"finetune", "tune_encoder", [&ft] { return std::string(ft.tune_encoder ? "true" : "false"); },
                 [&ft](const std::string& v) { ft.tune_encoder = parse_bool(v, "finetune.tune_encoder"); }});
    real("finetune", "test_fraction", ft.test_fraction);
    real("finetune", "tail_sd", ft.tail_sd);
    real("finetune", "tail_ratio", ft.tail_ratio);

    f.push_back({"baseline", "kind", [&c] { return to_string(c.baseline); },
                 [&c](const std::string& v) { c.baseline = baseline_from_string(trim(v)); }});

    f.push_back({"sweep", "axis", [&c] { return to_string(c.sweep_axis); },
                 [&c](const std::string& v) { c.sweep_axis = sweep_axis_from_string(trim(v)); }});
    f.push_back({"sweep", "values", [&c] { return join_list(c.sweep_values); },
                 [&c](const std::string& v) { c.sweep_values = split_list(v); }});

    f.push_back({"seeds", "split_seeds", [&c] { return join_list(c.split_seeds); }, [&c](const std::string& v) {
                     c.split_seeds.clear();
                     for (const auto& p : split_list(v)) c.split_seeds.push_back(parse_number<std::uint64_t>(p, "seeds.split_seeds"));
                 }});
    return f;
}

inline void apply_ptree(RunConfig& c, const boost::property_tree::ptree& tree)
{
    auto fields = config_fields(c);
    auto find = [&](const std::string& sec, const std::string& key) -> ConfigField* {
        for (auto& f : fields)
            if (f.section == sec && f.key == key) return &f;
        return nullptr;
    };
    for (const auto& [sec, body] : tree) {
        if (body.empty() && !body.data().empty()) throw ConfigError("key '" + sec + "' outside any section");
        bool known = false;
        for (const auto& f : fields) known = known || f.section == sec;
        if (!known) throw ConfigError("unknown config section [" + sec + "]");
        for (const auto& [key, leaf] : body)
            if (!find(sec, key)) throw ConfigError("unknown config key " + sec + "." + key);
    }
    if (const auto m = tree.get_child_optional("model"))
        if (const auto size = m->get_optional<std::string>("size")) find("model", "size")->set(*size);
    for (const auto& [sec, body] : tree)
        for (const auto& [key, leaf] : body)
            if (!(sec == "model" && key == "size")) find(sec, key)->set(leaf.data());
}

} // namespace detail

inline RunConfig parse_run_config(std::istream& in)
{
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(std::string("config syntax: ") + e.what());
    }
    RunConfig c;
    detail::apply_ptree(c, tree);
    c.finalize();
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    return parse_run_config(in);
}

inline void write_run_config(const RunConfig& c, std::ostream& out)
{
    RunConfig copy = c;
    std::string section;
    for (const auto& f : detail::config_fields(copy)) {
        if (f.section != section) {
            out << (section.empty() ? "" : "\n") << '[' << f.section << "]\n";
            section = f.section;
        }
        out << f.key << " = " << f.get() << '\n';
    }
}

inline void save_run_config(const RunConfig& c, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    write_run_config(c, out);
}

} // namespace glass
