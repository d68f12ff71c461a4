#pragma once

// Fine-tuning: the decoder is dropped and an emotion head reads chunked
// encoder features [emb | d/dt | d2/dt2] for VAD regression or 3-way
// behavior classification.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "glass/dataset_io.hpp"
#include "glass/glass_model.hpp"
#include "glass/metrics.hpp"
#include "glass/optim.hpp"

namespace glass {

enum class Task { vad, behavior };
enum class HeadKind { mlp, tcn, gru, transformer };

inline std::string to_string(Task t) { return t == Task::vad ? "vad" : "behavior"; }

inline Task task_from_string(const std::string& s)
{
    if (s == "vad") return Task::vad;
    if (s == "behavior") return Task::behavior;
    throw ConfigError("unknown task: " + s);
}

inline std::string to_string(HeadKind k)
{
    switch (k) {
    case HeadKind::mlp: return "mlp";
    case HeadKind::tcn: return "tcn";
    case HeadKind::gru: return "gru";
    case HeadKind::transformer: return "transformer";
    }
    return "?";
}

inline HeadKind head_from_string(const std::string& s)
{
    for (auto k : {HeadKind::mlp, HeadKind::tcn, HeadKind::gru, HeadKind::transformer})
        if (to_string(k) == s) return k;
    throw ConfigError("unknown head kind: " + s);
}

// ---------------------------------------------------------------------------
// Features

namespace detail {

// d1: central differences, one-sided at the edges.
template <typename T>
Tensor<T> first_difference_operator(std::size_t n)
{
    Tensor<T> m(n, n);
    m(0, 0) = -1;
    m(0, 1) = 1;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        m(i, i - 1) = T(-0.5);
        m(i, i + 1) = T(0.5);
    }
    m(n - 1, n - 2) = -1;
    m(n - 1, n - 1) = 1;
    return m;
}

// d2: second central differences, edge rows copied from their neighbours.
template <typename T>
Tensor<T> second_difference_operator(std::size_t n)
{
    Tensor<T> m(n, n);
    for (std::size_t i = 1; i + 1 < n; ++i) {
        m(i, i - 1) = 1;
        m(i, i) = -2;
        m(i, i + 1) = 1;
    }
    for (std::size_t c = 0; c < 3; ++c) {
        m(0, c) = m(1, c);
        m(n - 1, n - 3 + c) = m(n - 2, n - 3 + c);
    }
    return m;
}

} // namespace detail

template <typename T>
Var<T> encoder_features(Var<T> enc)
{
    const std::size_t n = enc.rows();
    if (n < 3) throw ShapeError("encoder features need at least 3 rows, got " + std::to_string(n));
    return concat_cols<T>({enc, left_mul_const(detail::first_difference_operator<T>(n), enc),
                           left_mul_const(detail::second_difference_operator<T>(n), enc)});
}

template <typename T>
Tensor<T> encoder_features(const Tensor<T>& enc)
{
    Tape<T> tape;
    return encoder_features(tape.constant(enc)).value();
}

struct ChunkConfig {
    double chunk_seconds = 1.0;
    double patch_rate = 2.0;  // patches per second, fps / P

    std::size_t rows_per_chunk() const
    {
        const double r = std::round(chunk_seconds * patch_rate);
        if (!(r >= 1)) throw ConfigError("chunk of " + std::to_string(chunk_seconds) + " s holds no patch");
        return static_cast<std::size_t>(r);
    }
};

// Row-averaging matrix for consecutive groups; the remainder forms a final
// smaller chunk.
template <typename T>
Tensor<T> chunk_operator(std::size_t rows, const ChunkConfig& cfg)
{
    if (rows == 0) throw ShapeError("cannot chunk an empty feature sequence");
    const std::size_t per = cfg.rows_per_chunk();
    const std::size_t count = (rows + per - 1) / per;
    Tensor<T> m(count, rows);
    for (std::size_t c = 0; c < count; ++c) {
        const std::size_t b = c * per, e = std::min(rows, b + per);
        for (std::size_t r = b; r < e; ++r) m(c, r) = static_cast<T>(1.0 / static_cast<double>(e - b));
    }
    return m;
}

template <typename T>
Var<T> chunk(Var<T> features, const ChunkConfig& cfg)
{
    return left_mul_const(chunk_operator<T>(features.rows(), cfg), features);
}

template <typename T>
Tensor<T> chunk(const Tensor<T>& features, const ChunkConfig& cfg)
{
    Tape<T> tape;
    return chunk(tape.constant(features), cfg).value();
}

// ---------------------------------------------------------------------------
// Heads

struct HeadConfig {
    HeadKind kind = HeadKind::gru;
    Task task = Task::vad;
    std::size_t input_width = 96;
    std::size_t hidden = 64;
    double dropout = 0.1;
    std::size_t tcn_layers = 3;
    std::size_t tcn_kernel = 3;
    std::size_t transformer_blocks = 2;
    std::size_t transformer_heads = 4;
};

template <typename T>
class EmotionHead {
public:
    EmotionHead(HeadConfig cfg, std::uint64_t seed) : cfg_(cfg)
    {
        if (cfg_.input_width == 0 || cfg_.hidden == 0) throw ConfigError("head widths must be positive");
        std::mt19937_64 rng(seed);
        const std::size_t in = cfg_.input_width, h = cfg_.hidden;
        switch (cfg_.kind) {
        case HeadKind::mlp:
            layers_.push_back(add_linear(ps_, "head.fc1", in, h, rng));
            break;
        case HeadKind::tcn:
            for (std::size_t l = 0; l < cfg_.tcn_layers; ++l)
                layers_.push_back(add_linear(ps_, "head.conv" + std::to_string(l), cfg_.tcn_kernel * (l ? h : in), h, rng));
            break;
        case HeadKind::gru:
            for (const char* g : {"z", "r", "n"}) {
                layers_.push_back(add_linear(ps_, std::string("head.gru.x") + g, in, h, rng));
                layers_.push_back(add_linear(ps_, std::string("head.gru.h") + g, h, h, rng));
            }
            break;
        case HeadKind::transformer:
            AttentionConfig{h, cfg_.transformer_heads, false}.validate();
            layers_.push_back(add_linear(ps_, "head.in", in, h, rng));
            for (std::size_t b = 0; b < cfg_.transformer_blocks; ++b)
                blocks_.push_back(add_encoder_block(ps_, "head.block" + std::to_string(b), h, rng));
            norm_ = add_norm(ps_, "head.ln_f", h);
            break;
        }
        out_ = add_linear(ps_, "head.out", h, 3, rng);
    }

    const HeadConfig& config() const { return cfg_; }
    ParameterSet<T>& params() { return ps_; }
    const ParameterSet<T>& params() const { return ps_; }

    // [chunks x input_width] -> [1 x 3]: VAD in [0, 1] or behavior logits.
    // `rng` drives dropout and is only used when training.
    Var<T> forward(Tape<T>& tape, Var<T> chunks, bool training, std::mt19937_64* rng = nullptr)
    {
        if (chunks.cols() != cfg_.input_width)
            throw ShapeError("head expects width " + std::to_string(cfg_.input_width) + ", got " +
                             std::to_string(chunks.cols()));
        if (chunks.rows() == 0) throw ShapeError("head needs at least one chunk");
        const double p = training && rng ? cfg_.dropout : 0.0;
        auto drop = [&](Var<T> x) { return p > 0 ? dropout(x, p, *rng) : x; };
        Var<T> pooled;
        switch (cfg_.kind) {
        case HeadKind::mlp:
            pooled = drop(gelu(apply(tape, ps_, layers_[0], mean_rows(chunks))));
            break;
        case HeadKind::tcn: {
            Var<T> x = chunks;
            for (std::size_t l = 0; l < layers_.size(); ++l) {
                const std::size_t dil = std::size_t{1} << l;
                const std::size_t pad = dil * (cfg_.tcn_kernel - 1) / 2;
                x = drop(relu(apply(tape, ps_, layers_[l], unfold_time(x, cfg_.tcn_kernel, dil, pad, pad))));
            }
            pooled = mean_rows(x);
            break;
        }
        case HeadKind::gru: {
            Var<T> h = tape.constant(Tensor<T>(1, cfg_.hidden));
            for (std::size_t t = 0; t < chunks.rows(); ++t) {
                Var<T> x = slice_rows(chunks, t, 1);
                auto gate = [&](std::size_t g, Var<T> hh) {
                    return add(apply(tape, ps_, layers_[2 * g], x), apply(tape, ps_, layers_[2 * g + 1], hh));
                };
                Var<T> z = sigmoid(gate(0, h));
                Var<T> r = sigmoid(gate(1, h));
                Var<T> n = tanh(add(apply(tape, ps_, layers_[4], x), mul(r, apply(tape, ps_, layers_[5], h))));
                h = add(n, mul(z, sub(h, n)));
            }
            pooled = drop(h);
            break;
        }
        case HeadKind::transformer: {
            Var<T> x = apply(tape, ps_, layers_[0], chunks);
            const auto pos = iota_positions(x.rows());
            const RopeSpec rs{cfg_.transformer_heads, 10000.0};
            for (const auto& b : blocks_) x = encoder_block(tape, ps_, b, x, pos, rs);
            pooled = drop(mean_rows(apply(tape, ps_, norm_, x)));
            break;
        }
        }
        Var<T> out = apply(tape, ps_, out_, pooled);
        return cfg_.task == Task::vad ? sigmoid(out) : out;
    }

    Tensor<T> predict(const Tensor<T>& chunks)
    {
        Tape<T> tape;
        return forward(tape, tape.constant(chunks), false).value();
    }

private:
    HeadConfig cfg_;
    ParameterSet<T> ps_;
    std::vector<LinearRef> layers_;
    std::vector<EncoderBlockRef> blocks_;
    NormRef norm_;
    LinearRef out_;
};

// ---------------------------------------------------------------------------
// Splits and training

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

// Whole annotation groups go to one side, so overlapping windows of one
// sentence never straddle the split.
inline SplitIndices split_by_group(const std::vector<LabeledWindow>& data, double test_fraction, std::uint64_t seed)
{
    if (data.empty()) throw ConfigError("empty dataset");
    if (!(test_fraction > 0 && test_fraction < 1)) throw ConfigError("test fraction must lie in (0, 1)");
    std::vector<std::size_t> groups;
    for (const auto& s : data) groups.push_back(s.group);
    std::sort(groups.begin(), groups.end());
    groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
    if (groups.size() < 2) throw ConfigError("need at least two annotation groups to split");
    std::mt19937_64 rng(seed);
    std::shuffle(groups.begin(), groups.end(), rng);
    const auto n_test = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(groups.size()))), 1, groups.size() - 1);
    const std::set<std::size_t> test_groups(groups.begin(), groups.begin() + static_cast<std::ptrdiff_t>(n_test));
    SplitIndices s;
    for (std::size_t i = 0; i < data.size(); ++i) (test_groups.count(data[i].group) ? s.test : s.train).push_back(i);
    return s;
}

inline void check_task_labels(const std::vector<LabeledWindow>& data, Task task)
{
    if (data.empty()) throw ConfigError("empty dataset");
    for (const auto& s : data) {
        const bool is_vad = std::holds_alternative<VADLabel>(s.label);
        if (is_vad != (task == Task::vad)) throw ConfigError("dataset labels do not match task " + to_string(task));
    }
}

inline void check_behavior_classes(const std::vector<LabeledWindow>& data, const std::vector<std::size_t>& idx)
{
    std::set<BehaviorClass> seen;
    for (auto i : idx) seen.insert(data[i].behavior());
    if (seen.size() < 2) throw ConfigError("behavior training split holds a single class");
}

struct FinetuneConfig {
    HeadKind head = HeadKind::gru;
    Task task = Task::vad;
    ChunkConfig chunk{1.0, 2.0};
    std::size_t epochs = 30;
    std::size_t batch_size = 16;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    double dropout = 0.1;
    std::size_t hidden = 64;
    bool tune_encoder = false;
    double test_fraction = 0.2;
    double tail_sd = 2.0;
    double tail_ratio = 1.0 / 3.0;
    double fps = 30.0;
    std::uint64_t split_seed = 0;

    void validate() const
    {
        if (epochs == 0 || batch_size == 0) throw ConfigError("epochs and batch size must be positive");
        if (!(lr > 0)) throw ConfigError("learning rate must be positive");
        if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must lie in [0, 1)");
        chunk.rows_per_chunk();
    }
};

// One (seed, task, head) evaluation row. Metrics that do not apply to the
// task are empty.
struct FinetuneRun {
    std::uint64_t seed = 0;
    Task task = Task::vad;
    std::string head;
    double chunk_seconds = 0;
    double input_seconds = 0;
    std::optional<double> mae;
    std::optional<double> pearson_r;
    std::optional<double> macro_f1;
    std::size_t train_count = 0;
    std::size_t test_count = 0;
};

namespace detail {

inline Tensor<double> label_target(const LabeledWindow& s)
{
    const auto a = s.vad().as_array();
    return Tensor<double>(Shape{1, 3}, std::vector<double>(a.begin(), a.end()));
}

template <typename T>
std::size_t argmax_row(const Tensor<T>& v)
{
    return static_cast<std::size_t>(std::max_element(v.data().begin(), v.data().end()) - v.data().begin());
}

// Shared minibatch loop. `batch_loss(tape, indices, rng)` builds the mean
// loss of one minibatch on a fresh tape.
template <typename T, typename LossFn>
void train_minibatches(std::vector<ParameterSet<T>*> sets, const std::vector<std::vector<bool>>& trainable,
                       std::size_t n, const FinetuneConfig& cfg, std::uint64_t seed, LossFn&& batch_loss)
{
    const std::size_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    OptimConfig oc;
    oc.base_lr = cfg.lr;
    oc.weight_decay = cfg.weight_decay;
    oc.total_steps = cfg.epochs * per_epoch;
    oc.warmup_steps = oc.total_steps / 10;
    std::vector<AdamW<T>> opts(sets.size(), AdamW<T>(oc));
    std::mt19937_64 order_rng(seed), drop_rng(seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<std::size_t> order(n);
    std::size_t step = 0;
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), order_rng);
        for (std::size_t b = 0; b < n; b += cfg.batch_size) {
            const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                               order.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + cfg.batch_size)));
            for (auto* s : sets) s->zero_grad();
            Tape<T> tape;
            tape.backward(batch_loss(tape, idx, drop_rng));
            const double lr = lr_at(++step, oc);
            for (std::size_t k = 0; k < sets.size(); ++k) {
                clip_grad_norm(*sets[k], 1.0, &trainable[k]);
                opts[k].step(*sets[k], lr, &trainable[k]);
            }
        }
    }
}

// Mean of independent per-sample losses.
template <typename T, typename SampleFn>
Var<T> mean_sample_loss(Tape<T>& tape, const std::vector<std::size_t>& idx, std::mt19937_64& rng, SampleFn&& loss_of)
{
    Var<T> total = loss_of(tape, idx[0], rng);
    for (std::size_t i = 1; i < idx.size(); ++i) total = add(total, loss_of(tape, idx[i], rng));
    return scale(total, static_cast<T>(1.0 / static_cast<double>(idx.size())));
}

struct TrainingSplit {
    SplitIndices split;
    std::vector<LabeledWindow> train;
};

// Group split, label checks, and tail upsampling of the VAD training side.
inline TrainingSplit training_split(const std::vector<LabeledWindow>& dataset, const FinetuneConfig& cfg)
{
    check_task_labels(dataset, cfg.task);
    TrainingSplit ts{split_by_group(dataset, cfg.test_fraction, cfg.split_seed), {}};
    if (cfg.task == Task::behavior) check_behavior_classes(dataset, ts.split.train);
    for (auto i : ts.split.train) ts.train.push_back(dataset[i]);
    if (cfg.task == Task::vad && ts.train.size() >= 2)
        ts.train = upsample_tail(std::move(ts.train), cfg.tail_sd, cfg.tail_ratio, cfg.split_seed).samples;
    return ts;
}

// Scores a trained predictor (window -> 3 outputs) on the held-out side.
template <typename Predict>
FinetuneRun score_split(const std::vector<LabeledWindow>& dataset, const SplitIndices& split, std::size_t train_count,
                        const FinetuneConfig& cfg, const std::string& name, Predict&& predict)
{
    FinetuneRun run;
    run.seed = cfg.split_seed;
    run.task = cfg.task;
    run.head = name;
    run.chunk_seconds = cfg.chunk.chunk_seconds;
    run.input_seconds = static_cast<double>(dataset.front().window.input.rows()) / cfg.fps;
    run.train_count = train_count;
    run.test_count = split.test.size();
    std::vector<VADLabel> vp, vl;
    std::vector<BehaviorClass> bp, bl;
    for (auto i : split.test) {
        const auto out = predict(dataset[i]);
        if (cfg.task == Task::vad) {
            vp.push_back({static_cast<double>(out[0]), static_cast<double>(out[1]), static_cast<double>(out[2])});
            vl.push_back(dataset[i].vad());
        } else {
            bp.push_back(static_cast<BehaviorClass>(argmax_row(out)));
            bl.push_back(dataset[i].behavior());
        }
    }
    if (cfg.task == Task::vad) {
        const auto m = vad_metrics(vp, vl);
        run.mae = m.mae;
        run.pearson_r = m.pearson_r;
    } else {
        run.macro_f1 = macro_f1(bp, bl);
    }
    return run;
}

} // namespace detail

struct FinetuneResult {
    FinetuneRun run;
    EmotionHead<float> head;
    GlassModel<float> encoder;
};

// Trains a head on the training groups of one split and scores the held-out
// groups. Windows must already be normalized like the pretraining data.
inline FinetuneResult run_finetune(const GlassModel<float>& pretrained, const std::vector<LabeledWindow>& dataset,
                                   const FinetuneConfig& cfg)
{
    cfg.validate();
    const auto ts = detail::training_split(dataset, cfg);
    const auto& split = ts.split;
    const auto& train = ts.train;

    GlassModel<float> encoder = pretrained;
    HeadConfig hc;
    hc.kind = cfg.head;
    hc.task = cfg.task;
    hc.input_width = 3 * encoder.config().model_dim;
    hc.hidden = cfg.hidden;
    hc.dropout = cfg.dropout;
    EmotionHead<float> head(hc, cfg.split_seed * 7919 + 17);

    auto features_of = [&](Tape<float>& tape, const LabeledWindow& s) {
        return chunk(encoder_features(encoder.encode(tape, s.window.input.cast<float>())), cfg.chunk);
    };
    auto sample_loss = [&](Tape<float>& tape, Var<float> chunks, const LabeledWindow& s, std::mt19937_64& rng) {
        Var<float> out = head.forward(tape, chunks, true, &rng);
        if (cfg.task == Task::vad) return mae_loss(out, detail::label_target(s).cast<float>());
        return cross_entropy(out, static_cast<std::size_t>(s.behavior()));
    };

    std::vector<bool> head_all(head.params().size(), true);
    if (cfg.tune_encoder) {
        std::vector<bool> enc_mask;
        for (const auto& p : encoder.params()) enc_mask.push_back(GlassModel<float>::is_encoder_param(p.name));
        detail::train_minibatches<float>({&head.params(), &encoder.params()}, {head_all, enc_mask}, train.size(), cfg,
                                         cfg.split_seed + 1, [&](Tape<float>& tape, const auto& idx, std::mt19937_64& rng) {
            return detail::mean_sample_loss(tape, idx, rng, [&](Tape<float>& t, std::size_t i, std::mt19937_64& r) {
                return sample_loss(t, features_of(t, train[i]), train[i], r);
            });
        });
    } else {
        std::vector<Tensor<float>> cached;
        for (const auto& s : train) {
            Tape<float> tape;
            cached.push_back(features_of(tape, s).value());
        }
        detail::train_minibatches<float>({&head.params()}, {head_all}, train.size(), cfg, cfg.split_seed + 1,
                                         [&](Tape<float>& tape, const auto& idx, std::mt19937_64& rng) {
            return detail::mean_sample_loss(tape, idx, rng, [&](Tape<float>& t, std::size_t i, std::mt19937_64& r) {
                return sample_loss(t, t.constant(cached[i]), train[i], r);
            });
        });
    }

    auto run = detail::score_split(dataset, split, train.size(), cfg, to_string(cfg.head), [&](const LabeledWindow& s) {
        Tape<float> tape;
        return head.forward(tape, features_of(tape, s), false).value();
    });
    return {run, std::move(head), std::move(encoder)};
}

// One run per split seed.
inline std::vector<FinetuneRun> run_finetune_seeds(const GlassModel<float>& pretrained,
                                                   const std::vector<LabeledWindow>& dataset, FinetuneConfig cfg,
                                                   const std::vector<std::uint64_t>& seeds)
{
    std::vector<FinetuneRun> runs;
    for (auto s : seeds) {
        cfg.split_seed = s;
        runs.push_back(run_finetune(pretrained, dataset, cfg).run);
    }
    return runs;
}

struct RunSummary {
    MeanStd mae;
    MeanStd pearson_r;
    MeanStd macro_f1;
};

inline RunSummary summarize(const std::vector<FinetuneRun>& runs)
{
    std::vector<std::optional<double>> a, b, c;
    for (const auto& r : runs) {
        a.push_back(r.mae);
        b.push_back(r.pearson_r);
        c.push_back(r.macro_f1);
    }
    return {mean_std(a), mean_std(b), mean_std(c)};
}

inline void write_finetune_csv(const std::vector<FinetuneRun>& runs, std::ostream& out)
{
    auto opt = [](const std::optional<double>& v) { return v ? detail::format_double(*v) : std::string(); };
    out << "seed,task,head,chunk_seconds,input_seconds,mae,pearson_r,macro_f1\n";
    for (const auto& r : runs)
        out << r.seed << ',' << to_string(r.task) << ',' << r.head << ',' << detail::format_double(r.chunk_seconds) << ','
            << detail::format_double(r.input_seconds) << ',' << opt(r.mae) << ',' << opt(r.pearson_r) << ','
            << opt(r.macro_f1) << '\n';
}

// Gaze inputs normalized with pretraining statistics; face blocks unchanged.
inline std::vector<LabeledWindow> normalize_labeled(std::vector<LabeledWindow> data, const NormStats& st)
{
    for (auto& s : data) s.window.input = normalize_block(std::move(s.window.input), st);
    return data;
}

// Labeled windows of one task across subjects, with groups kept distinct
// between subjects and gaze normalized.
inline std::vector<LabeledWindow> build_task_dataset(const std::vector<LoadedSubject>& subjects, Task task,
                                                     double input_seconds, const NormStats& stats,
                                                     double stride_seconds = 3.0)
{
    std::vector<LabeledWindow> out;
    std::size_t group = 0;
    for (const auto& s : subjects) {
        const auto windows = label_windows(s.sequence, s.annotations, input_seconds, stride_seconds, group);
        group += s.annotations.vad.size() + s.annotations.behavior.size();
        for (const auto& w : windows)
            if (std::holds_alternative<VADLabel>(w.label) == (task == Task::vad)) out.push_back(w);
    }
    return normalize_labeled(std::move(out), stats);
}

} // namespace glass
