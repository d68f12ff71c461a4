#pragma once

// Self-supervised forecasting: joint coordinate/velocity Huber loss,
// scheduled sampling, AdamW with warmup + cosine decay, and autoregressive
// validation by pooled gaze correlation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <vector>

#include "glass/checkpoint.hpp"
#include "glass/dataset_io.hpp"
#include "glass/metrics.hpp"
#include "glass/optim.hpp"

namespace glass {

struct LossConfig {
    double lambda = 0.2;
    double huber_delta = 1.0;

    void validate() const
    {
        if (lambda < 0) throw ConfigError("lambda must be non-negative");
        if (!(huber_delta > 0)) throw ConfigError("huber delta must be positive");
    }
};

struct SamplingSchedule {
    double end_fraction = 0.6;

    void validate() const
    {
        if (!(end_fraction > 0 && end_fraction <= 1)) throw ConfigError("end_fraction must lie in (0, 1]");
    }
};

inline double huber(double r, double delta)
{
    const double a = std::abs(r);
    return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
}

inline double huber_slope(double r, double delta)
{
    if (std::abs(r) <= delta) return r;
    return r > 0 ? delta : -delta;
}

// Teacher-forcing probability: 1 at the start, linear to 0 at end_fraction.
inline double tf_probability(double progress, const SamplingSchedule& sched = {})
{
    if (progress < 0 || progress > 1) throw ConfigError("progress must lie in [0, 1]");
    return std::max(0.0, 1.0 - progress / sched.end_fraction);
}

namespace detail {

template <typename T>
void check_loss_shapes(const Tensor<T>& pred, const Tensor<T>& target)
{
    if (pred.dims() != target.dims())
        throw ShapeError("prediction " + shape_str(pred.dims()) + " vs target " + shape_str(target.dims()));
}

} // namespace detail

// L = L_c + lambda * L_v. L_c averages Huber over every (frame, dim);
// L_v averages Huber of the frame-to-frame difference error over frames
// 1..T-1.
template <typename T>
double joint_loss_value(const Tensor<T>& pred, const Tensor<T>& target, const LossConfig& cfg = {})
{
    detail::check_loss_shapes(pred, target);
    const std::size_t n = pred.rows(), d = pred.cols();
    double lc = 0, lv = 0;
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t k = 0; k < d; ++k) {
            lc += huber(static_cast<double>(pred(t, k)) - static_cast<double>(target(t, k)), cfg.huber_delta);
            if (t > 0) {
                const double e = (static_cast<double>(pred(t, k)) - static_cast<double>(pred(t - 1, k))) -
                                 (static_cast<double>(target(t, k)) - static_cast<double>(target(t - 1, k)));
                lv += huber(e, cfg.huber_delta);
            }
        }
    lc /= static_cast<double>(n * d);
    if (n > 1) lv /= static_cast<double>((n - 1) * d);
    return lc + cfg.lambda * lv;
}

template <typename T>
Var<T> joint_loss(Var<T> pred, const Tensor<T>& target, const LossConfig& cfg = {})
{
    const auto& pv = pred.value();
    detail::check_loss_shapes(pv, target);
    const std::size_t n = pv.rows(), d = pv.cols();
    const double delta = cfg.huber_delta;
    // Coordinate residuals r and velocity residuals e (row 0 unused).
    std::vector<double> r(n * d), e(n * d, 0.0);
    std::uint64_t bits = 0;
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t k = 0; k < d; ++k) {
            r[t * d + k] = static_cast<double>(pv(t, k)) - static_cast<double>(target(t, k));
            bits = bits * 1315423911ull + (std::abs(r[t * d + k]) <= delta ? 1 : 2);
            if (t > 0) {
                e[t * d + k] = r[t * d + k] - r[(t - 1) * d + k];
                bits = bits * 1315423911ull + (std::abs(e[t * d + k]) <= delta ? 3 : 4);
            }
        }
    pred.tape->mix_branch(bits);
    const double value = joint_loss_value(pv, target, cfg);
    const double nc = static_cast<double>(n * d);
    const double nv = n > 1 ? static_cast<double>((n - 1) * d) : 1.0;
    return pred.tape->push(Tensor<T>(Shape{1}, static_cast<T>(value)),
                           [ip = pred.id, r = std::move(r), e = std::move(e), n, d, delta, nc, nv,
                            lambda = cfg.lambda](Tape<T>& t, std::size_t self) {
        const double g = static_cast<double>(t.grad(self)[0]);
        auto& gp = t.grad(ip);
        for (std::size_t row = 0; row < n; ++row)
            for (std::size_t k = 0; k < d; ++k) {
                double s = huber_slope(r[row * d + k], delta) / nc;
                if (row > 0) s += lambda * huber_slope(e[row * d + k], delta) / nv;
                if (row + 1 < n) s -= lambda * huber_slope(e[(row + 1) * d + k], delta) / nv;
                gp[row * d + k] += static_cast<T>(g * s);
            }
    });
}

// Joint loss of one window's decoded forecast.
template <typename T>
Var<T> window_loss(Tape<T>& tape, GlassModel<T>& model, const Tensor<T>& input, const Tensor<T>& target, double tf_prob,
                   std::uint64_t tf_seed, const LossConfig& cfg)
{
    Var<T> enc = model.encode(tape, input);
    Var<T> pred = model.decode(tape, enc, &target, tf_prob, tf_seed);
    return joint_loss(pred, target, cfg);
}

// ---------------------------------------------------------------------------
// Training loop

struct PretrainConfig {
    GlassConfig model;
    LossConfig loss;
    OptimConfig optim{3e-4, 100, 1e-4, 0.9, 0.999, 1e-8, 1000};
    SamplingSchedule schedule;
    std::size_t batch_size = 32;
    double clip_norm = 1.0;
    std::size_t eval_every = 50;
    std::size_t stride = 151;
    std::uint64_t seed = 0;

    void validate() const
    {
        model.validate();
        loss.validate();
        optim.validate();
        schedule.validate();
        if (batch_size == 0) throw ConfigError("batch size must be positive");
        if (eval_every == 0) throw ConfigError("eval_every must be positive");
        if (stride == 0) throw ConfigError("stride must be positive");
    }
};

struct PretrainData {
    std::vector<GazeWindow> train;
    std::vector<GazeWindow> val;
    NormStats stats;
};

// Normalizes with training-split statistics and cuts forecasting windows.
inline PretrainData prepare_pretrain_data(const std::vector<LoadedSubject>& subjects, const GlassConfig& model,
                                          std::size_t stride)
{
    std::set<std::string> train_ids, val_ids;
    std::vector<GazeSequence> train_seqs;
    for (const auto& s : subjects) {
        (s.split == "train" ? train_ids : val_ids).insert(s.sequence.subject_id);
        if (s.split == "train") train_seqs.push_back(s.sequence);
    }
    for (const auto& id : val_ids)
        if (train_ids.count(id)) throw ConfigError("validation subject " + id + " also appears in training");
    if (train_seqs.empty()) throw ConfigError("no training subjects");
    if (val_ids.empty()) throw ConfigError("no validation subjects");
    PretrainData data;
    data.stats = compute_norm_stats(train_seqs);
    const WindowSpec spec{model.input_frames, model.output_frames, stride};
    for (const auto& s : subjects) {
        auto windows = extract_windows(normalize(s.sequence, data.stats), spec);
        auto& dst = s.split == "train" ? data.train : data.val;
        for (auto& w : windows) dst.push_back(std::move(w));
    }
    if (data.train.empty()) throw ConfigError("training split yields no windows");
    if (data.val.empty()) throw ConfigError("validation split yields no windows");
    return data;
}

struct TrainLogRow {
    std::size_t step = 0;
    double lr = 0;
    double tf_prob = 0;
    double train_loss = 0;
    std::optional<double> val_corr;
};

struct PretrainResult {
    GlassModel<float> best_model;
    std::vector<TrainLogRow> log;
    std::optional<double> best_val_corr;
    std::size_t best_step = 0;
    std::optional<double> baseline_val_corr;
    NormStats stats;
};

struct ValidationScore {
    std::optional<double> model_corr;
    std::optional<double> baseline_corr;
};

// Autoregressive forecasts on every validation window, scored in raw gaze
// units against the predict-previous baseline on the same windows.
inline ValidationScore validate_forecasts(GlassModel<float>& model, const std::vector<GazeWindow>& windows,
                                          const NormStats& stats)
{
    std::vector<Tensor<double>> preds, base, targets;
    for (const auto& w : windows) {
        const auto f = model.forecast(w.input.cast<float>()).cast<double>();
        preds.push_back(denormalize_block(f, stats));
        base.push_back(denormalize_block(predict_previous(w.input, model.config().output_frames), stats));
        targets.push_back(denormalize_block(*w.target, stats));
    }
    return {gaze_correlation(preds, targets), gaze_correlation(base, targets)};
}

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    std::uint32_t parts[2];
    seq.generate(parts, parts + 2);
    return (static_cast<std::uint64_t>(parts[0]) << 32) | parts[1];
}

} // namespace detail

inline PretrainResult run_pretraining(const PretrainData& data, const PretrainConfig& cfg)
{
    cfg.validate();
    if (data.train.empty() || data.val.empty()) throw ConfigError("empty training or validation split");
    GlassModel<float> model(cfg.model, detail::mix_seed(cfg.seed, 1));
    AdamW<float> opt(cfg.optim);
    std::mt19937_64 order_rng(detail::mix_seed(cfg.seed, 2));
    std::mt19937_64 tf_rng(detail::mix_seed(cfg.seed, 3));

    std::vector<Tensor<float>> inputs, targets;
    for (const auto& w : data.train) {
        if (!w.target) throw ConfigError("training window without target");
        inputs.push_back(w.input.cast<float>());
        targets.push_back(w.target->cast<float>());
    }

    PretrainResult res{model, {}, std::nullopt, 0, std::nullopt, data.stats};
    std::vector<std::size_t> order(inputs.size());
    std::size_t cursor = order.size();
    const std::size_t batch = std::min(cfg.batch_size, inputs.size());
    for (std::size_t step = 1; step <= cfg.optim.total_steps; ++step) {
        const double progress = static_cast<double>(step - 1) / static_cast<double>(cfg.optim.total_steps);
        const double tf = tf_probability(progress, cfg.schedule);
        const double lr = lr_at(step, cfg.optim);
        model.params().zero_grad();
        double batch_loss = 0;
        for (std::size_t b = 0; b < batch; ++b) {
            if (cursor == order.size()) {
                std::iota(order.begin(), order.end(), std::size_t{0});
                std::shuffle(order.begin(), order.end(), order_rng);
                cursor = 0;
            }
            const std::size_t idx = order[cursor++];
            Tape<float> tape;
            Var<float> loss = window_loss(tape, model, inputs[idx], targets[idx], tf, tf_rng(), cfg.loss);
            batch_loss += static_cast<double>(loss.value()[0]);
            tape.backward(scale(loss, 1.0f / static_cast<float>(batch)));
        }
        clip_grad_norm(model.params(), cfg.clip_norm);
        opt.step(model.params(), lr);

        TrainLogRow row{step, lr, tf, batch_loss / static_cast<double>(batch), std::nullopt};
        if (step % cfg.eval_every == 0 || step == cfg.optim.total_steps) {
            const auto score = validate_forecasts(model, data.val, data.stats);
            row.val_corr = score.model_corr;
            res.baseline_val_corr = score.baseline_corr;
            if (score.model_corr && (!res.best_val_corr || *score.model_corr > *res.best_val_corr)) {
                res.best_val_corr = score.model_corr;
                res.best_step = step;
                res.best_model = model;
            }
        }
        res.log.push_back(row);
    }
    if (!res.best_val_corr) res.best_model = model;
    return res;
}

inline void write_train_log(const std::vector<TrainLogRow>& log, std::ostream& out)
{
    out << "step,lr,tf_prob,train_loss,val_corr\n";
    for (const auto& r : log) {
        out << r.step << ',' << detail::format_double(r.lr) << ',' << detail::format_double(r.tf_prob) << ','
            << detail::format_double(r.train_loss) << ',';
        if (r.val_corr) out << detail::format_double(*r.val_corr);
        out << '\n';
    }
}

} // namespace glass
