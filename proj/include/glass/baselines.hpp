#pragma once

// Reference predictors: hand-crafted window statistics fed to a small MLP
// (eyes only, or eyes plus facial action units), and a temporal CNN over
// raw gaze.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "glass/emotion.hpp"

namespace glass {

enum class BaselineKind { stats_eyes, stats_face, cnn };

inline std::string to_string(BaselineKind k)
{
    switch (k) {
    case BaselineKind::stats_eyes: return "stats_eyes";
    case BaselineKind::stats_face: return "stats_face";
    case BaselineKind::cnn: return "cnn";
    }
    return "?";
}

inline BaselineKind baseline_from_string(const std::string& s)
{
    for (auto k : {BaselineKind::stats_eyes, BaselineKind::stats_face, BaselineKind::cnn})
        if (to_string(k) == s) return k;
    throw ConfigError("unknown baseline: " + s);
}

inline std::size_t stat_feature_count(std::size_t k) { return 4 * k + k * (k - 1) / 2; }

// Per column: mean, std, mean |first difference|, mean |second difference|;
// then Pearson correlation of every column pair (0 when either is constant).
inline std::vector<double> stat_features(const Tensor<double>& x)
{
    const std::size_t n = x.rows(), k = x.cols();
    if (n < 3) throw ShapeError("statistical features need at least 3 frames, got " + std::to_string(n));
    std::vector<double> out;
    out.reserve(stat_feature_count(k));
    std::vector<double> mean(k, 0.0), sd(k, 0.0);
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t r = 0; r < n; ++r) mean[c] += x(r, c);
        mean[c] /= static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) sd[c] += (x(r, c) - mean[c]) * (x(r, c) - mean[c]);
        sd[c] = std::sqrt(sd[c] / static_cast<double>(n));
        // The mean of a constant column can round away from the value itself.
        bool constant = true;
        for (std::size_t r = 1; r < n && constant; ++r) constant = x(r, c) == x(0, c);
        if (constant) {
            mean[c] = x(0, c);
            sd[c] = 0;
        }
        double vel = 0, acc = 0;
        for (std::size_t r = 1; r < n; ++r) vel += std::abs(x(r, c) - x(r - 1, c));
        for (std::size_t r = 2; r < n; ++r) acc += std::abs(x(r, c) - 2 * x(r - 1, c) + x(r - 2, c));
        out.insert(out.end(), {mean[c], sd[c], vel / static_cast<double>(n - 1), acc / static_cast<double>(n - 2)});
    }
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = a + 1; b < k; ++b) {
            if (sd[a] == 0 || sd[b] == 0) {
                out.push_back(0.0);
                continue;
            }
            double s = 0;
            for (std::size_t r = 0; r < n; ++r) s += (x(r, a) - mean[a]) * (x(r, b) - mean[b]);
            out.push_back(s / (static_cast<double>(n) * sd[a] * sd[b]));
        }
    return out;
}

inline std::vector<double> stat_features(const GazeWindow& w, bool include_face)
{
    if (!include_face) return stat_features(w.input);
    if (!w.face) throw SchemaError("face_aux");
    const auto& f = *w.face;
    if (f.rows() != w.input.rows()) throw ShapeError("face block length differs from gaze block");
    Tensor<double> both(w.input.rows(), w.input.cols() + f.cols());
    for (std::size_t r = 0; r < both.rows(); ++r) {
        for (std::size_t c = 0; c < w.input.cols(); ++c) both(r, c) = w.input(r, c);
        for (std::size_t c = 0; c < f.cols(); ++c) both(r, w.input.cols() + c) = f(r, c);
    }
    return stat_features(both);
}

// ---------------------------------------------------------------------------
// Temporal CNN

struct CnnConfig {
    std::size_t channels = 32;
    std::size_t layers = 3;
    std::size_t kernel = 5;
    std::size_t hidden = 64;
    double dropout = 0.1;
    std::size_t input_dims = gaze_dims;
    Task task = Task::vad;

    // Valid convolutions with dilation 1, 2, 4, ...
    std::size_t receptive_field() const
    {
        std::size_t rf = 1;
        for (std::size_t l = 0; l < layers; ++l) rf += (kernel - 1) << l;
        return rf;
    }
};

template <typename T>
class TemporalCnn {
public:
    TemporalCnn(CnnConfig cfg, std::uint64_t seed) : cfg_(cfg)
    {
        if (cfg_.layers == 0 || cfg_.kernel == 0 || cfg_.channels == 0) throw ConfigError("bad CNN shape");
        std::mt19937_64 rng(seed);
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            const std::size_t in = l ? cfg_.channels : cfg_.input_dims;
            const std::string name = "cnn.conv" + std::to_string(l);
            convs_.push_back(add_linear(ps_, name, cfg_.kernel * in, cfg_.channels, rng));
            norms_.push_back(add_norm(ps_, name + ".bn", cfg_.channels));
            running_mean_.emplace_back(Shape{cfg_.channels}, T(0));
            running_var_.emplace_back(Shape{cfg_.channels}, T(1));
        }
        fc1_ = add_linear(ps_, "cnn.fc1", cfg_.channels, cfg_.hidden, rng);
        fc2_ = add_linear(ps_, "cnn.fc2", cfg_.hidden, 3, rng);
    }

    const CnnConfig& config() const { return cfg_; }
    ParameterSet<T>& params() { return ps_; }

    // One output row [1 x 3] per window. Batch norm pools statistics over
    // every (window, time) position of the batch in training mode.
    std::vector<Var<T>> forward(Tape<T>& tape, const std::vector<Var<T>>& windows, bool training,
                                std::mt19937_64* rng = nullptr)
    {
        std::vector<Var<T>> xs = windows;
        for (auto& x : xs)
            if (x.rows() < cfg_.receptive_field())
                throw ShapeError("window of " + std::to_string(x.rows()) + " frames is shorter than receptive field " +
                                 std::to_string(cfg_.receptive_field()));
        const double p = training && rng ? cfg_.dropout : 0.0;
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            std::vector<Var<T>> conv;
            for (auto& x : xs)
                conv.push_back(relu(apply(tape, ps_, convs_[l], unfold_time(x, cfg_.kernel, std::size_t{1} << l, 0, 0))));
            Var<T> stacked = concat_rows(conv);
            stacked = batch_norm(stacked, tape.param(ps_, norms_[l].gain), tape.param(ps_, norms_[l].offset),
                                 running_mean_[l], running_var_[l], training);
            if (p > 0) stacked = dropout(stacked, p, *rng);
            std::size_t at = 0;
            for (std::size_t i = 0; i < xs.size(); ++i) {
                const std::size_t len = conv[i].rows();
                xs[i] = slice_rows(stacked, at, len);
                at += len;
            }
        }
        std::vector<Var<T>> outs;
        for (auto& x : xs) {
            Var<T> o = apply(tape, ps_, fc2_, relu(apply(tape, ps_, fc1_, mean_rows(x))));
            outs.push_back(cfg_.task == Task::vad ? sigmoid(o) : o);
        }
        return outs;
    }

    Tensor<T> predict(const Tensor<T>& window)
    {
        Tape<T> tape;
        return forward(tape, {tape.constant(window)}, false)[0].value();
    }

private:
    CnnConfig cfg_;
    ParameterSet<T> ps_;
    std::vector<LinearRef> convs_;
    std::vector<NormRef> norms_;
    std::vector<Tensor<T>> running_mean_, running_var_;
    LinearRef fc1_, fc2_;
};

// ---------------------------------------------------------------------------
// Statistical-feature MLP

struct FeatureScaler {
    std::vector<double> mean, sd;

    static FeatureScaler fit(const std::vector<std::vector<double>>& rows)
    {
        if (rows.empty()) throw ConfigError("cannot fit a scaler on no rows");
        FeatureScaler s;
        const std::size_t k = rows[0].size();
        s.mean.assign(k, 0.0);
        s.sd.assign(k, 0.0);
        for (const auto& r : rows)
            for (std::size_t j = 0; j < k; ++j) s.mean[j] += r[j];
        for (auto& m : s.mean) m /= static_cast<double>(rows.size());
        for (const auto& r : rows)
            for (std::size_t j = 0; j < k; ++j) s.sd[j] += (r[j] - s.mean[j]) * (r[j] - s.mean[j]);
        for (auto& v : s.sd) v = std::sqrt(v / static_cast<double>(rows.size()));
        return s;
    }

    template <typename T>
    Tensor<T> apply(const std::vector<double>& row) const
    {
        Tensor<T> t(1, row.size());
        for (std::size_t j = 0; j < row.size(); ++j)
            t[j] = static_cast<T>(sd[j] > 1e-12 ? (row[j] - mean[j]) / sd[j] : 0.0);
        return t;
    }
};

template <typename T>
class StatsMlp {
public:
    StatsMlp(std::size_t inputs, std::size_t hidden, Task task, double dropout_p, std::uint64_t seed)
      : task_(task), dropout_(dropout_p)
    {
        std::mt19937_64 rng(seed);
        fc1_ = add_linear(ps_, "stats.fc1", inputs, hidden, rng);
        fc2_ = add_linear(ps_, "stats.fc2", hidden, 3, rng);
    }

    ParameterSet<T>& params() { return ps_; }

    Var<T> forward(Tape<T>& tape, Var<T> x, bool training, std::mt19937_64* rng = nullptr)
    {
        Var<T> h = relu(apply(tape, ps_, fc1_, x));
        if (training && rng && dropout_ > 0) h = dropout(h, dropout_, *rng);
        Var<T> o = apply(tape, ps_, fc2_, h);
        return task_ == Task::vad ? sigmoid(o) : o;
    }

private:
    Task task_;
    double dropout_;
    ParameterSet<T> ps_;
    LinearRef fc1_, fc2_;
};

namespace detail {

template <typename T>
Var<T> task_loss(Var<T> out, const LabeledWindow& s, Task task)
{
    if (task == Task::vad) return mae_loss(out, label_target(s).cast<T>());
    return cross_entropy(out, static_cast<std::size_t>(s.behavior()));
}

} // namespace detail

// Trains and scores one baseline on one split; same splits, upsampling and
// metrics as run_finetune.
inline FinetuneRun fit_baseline(const std::vector<LabeledWindow>& dataset, BaselineKind kind, const FinetuneConfig& cfg)
{
    cfg.validate();
    const auto ts = detail::training_split(dataset, cfg);
    const auto& train = ts.train;
    const std::uint64_t init_seed = cfg.split_seed * 7919 + 29;

    if (kind == BaselineKind::cnn) {
        CnnConfig cc;
        cc.task = cfg.task;
        cc.hidden = cfg.hidden;
        cc.dropout = cfg.dropout;
        TemporalCnn<float> net(cc, init_seed);
        std::vector<Tensor<float>> inputs;
        for (const auto& s : train) inputs.push_back(s.window.input.cast<float>());
        std::vector<bool> all(net.params().size(), true);
        detail::train_minibatches<float>({&net.params()}, {all}, train.size(), cfg, cfg.split_seed + 1,
                                         [&](Tape<float>& tape, const auto& idx, std::mt19937_64& rng) {
            std::vector<Var<float>> xs;
            for (auto i : idx) xs.push_back(tape.constant(inputs[i]));
            auto outs = net.forward(tape, xs, true, &rng);
            Var<float> total = detail::task_loss(outs[0], train[idx[0]], cfg.task);
            for (std::size_t k = 1; k < idx.size(); ++k) total = add(total, detail::task_loss(outs[k], train[idx[k]], cfg.task));
            return scale(total, 1.0f / static_cast<float>(idx.size()));
        });
        return detail::score_split(dataset, ts.split, train.size(), cfg, to_string(kind),
                                   [&](const LabeledWindow& s) { return net.predict(s.window.input.cast<float>()); });
    }

    const bool face = kind == BaselineKind::stats_face;
    std::vector<std::vector<double>> feats;
    for (const auto& s : train) feats.push_back(stat_features(s.window, face));
    const auto scaler = FeatureScaler::fit(feats);
    std::vector<Tensor<float>> xs;
    for (const auto& f : feats) xs.push_back(scaler.apply<float>(f));
    StatsMlp<float> mlp(feats[0].size(), cfg.hidden, cfg.task, cfg.dropout, init_seed);
    std::vector<bool> all(mlp.params().size(), true);
    detail::train_minibatches<float>({&mlp.params()}, {all}, train.size(), cfg, cfg.split_seed + 1,
                                     [&](Tape<float>& tape, const auto& idx, std::mt19937_64& rng) {
        return detail::mean_sample_loss(tape, idx, rng, [&](Tape<float>& t, std::size_t i, std::mt19937_64& r) {
            return detail::task_loss(mlp.forward(t, t.constant(xs[i]), true, &r), train[i], cfg.task);
        });
    });
    return detail::score_split(dataset, ts.split, train.size(), cfg, to_string(kind), [&](const LabeledWindow& s) {
        Tape<float> tape;
        return mlp.forward(tape, tape.constant(scaler.apply<float>(stat_features(s.window, face))), false).value();
    });
}

inline std::vector<FinetuneRun> fit_baseline_seeds(const std::vector<LabeledWindow>& dataset, BaselineKind kind,
                                                   FinetuneConfig cfg, const std::vector<std::uint64_t>& seeds)
{
    std::vector<FinetuneRun> runs;
    for (auto s : seeds) {
        cfg.split_seed = s;
        runs.push_back(fit_baseline(dataset, kind, cfg));
    }
    return runs;
}

} // namespace glass
