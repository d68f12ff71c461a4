#pragma once

// Patch-based encoder-decoder for gaze forecasting. The encoder embeds
// non-overlapping P-frame patches and runs pre-norm Transformer blocks; the
// decoder generates future patches one at a time from a learned start token,
// with causal self-attention and cross-attention over the encoder states.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "glass/gaze_data.hpp"
#include "glass/layers.hpp"

namespace glass {

struct GlassConfig {
    std::size_t input_dims = 6;
    std::size_t input_frames = 150;
    std::size_t output_frames = 150;
    std::size_t patch = 15;
    std::size_t model_dim = 32;
    std::size_t encoder_blocks = 2;
    std::size_t decoder_blocks = 2;
    std::size_t heads = 4;
    double rope_base = 10000.0;
    std::string size_name = "small";

    static GlassConfig small() { return {}; }

    static GlassConfig base()
    {
        GlassConfig c;
        c.model_dim = 64;
        c.encoder_blocks = c.decoder_blocks = 4;
        c.size_name = "base";
        return c;
    }

    static GlassConfig large()
    {
        GlassConfig c;
        c.model_dim = 128;
        c.encoder_blocks = c.decoder_blocks = 6;
        c.heads = 8;
        c.size_name = "large";
        return c;
    }

    static GlassConfig named(const std::string& name)
    {
        if (name == "small") return small();
        if (name == "base") return base();
        if (name == "large") return large();
        throw ConfigError("unknown model size: " + name);
    }

    std::size_t patch_width() const { return patch * input_dims; }
    std::size_t input_patches() const { return input_frames / patch; }
    std::size_t output_patches() const { return output_frames / patch; }

    void validate() const
    {
        if (input_dims == 0 || input_frames == 0 || output_frames == 0 || patch == 0 || model_dim == 0)
            throw ConfigError("model dimensions must be positive");
        if (input_frames % patch || output_frames % patch)
            throw ConfigError("patch size " + std::to_string(patch) + " must divide input and output frame counts");
        AttentionConfig{model_dim, heads, false}.validate();
    }

    bool operator==(const GlassConfig&) const = default;
};

// Flattens each run of P frames into one row: [T x D] -> [T/P x P*D]. With
// row-major storage this only changes the shape.
template <typename T>
Tensor<T> patchify(const Tensor<T>& window, std::size_t patch)
{
    if (patch == 0 || window.rows() % patch != 0)
        throw ShapeError("patch size " + std::to_string(patch) + " does not divide " + std::to_string(window.rows()) +
                         " frames");
    return window.reshaped({window.rows() / patch, patch * window.cols()});
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, std::size_t patch)
{
    if (patch == 0 || patches.cols() % patch != 0)
        throw ShapeError("patch width " + std::to_string(patches.cols()) + " not a multiple of " + std::to_string(patch));
    return patches.reshaped({patches.rows() * patch, patches.cols() / patch});
}

// Repeats the last observed frame over the horizon.
template <typename T>
Tensor<T> predict_previous(const Tensor<T>& window, std::size_t output_frames)
{
    if (window.rows() == 0) throw ShapeError("predict_previous needs at least one input frame");
    Tensor<T> out(output_frames, window.cols());
    const auto last = window.row(window.rows() - 1);
    for (std::size_t r = 0; r < output_frames; ++r) std::copy(last.begin(), last.end(), out.row(r).begin());
    return out;
}

template <typename T>
class GlassModel {
public:
    explicit GlassModel(GlassConfig cfg, std::uint64_t init_seed = 0)
      : cfg_(std::move(cfg))
    {
        cfg_.validate();
        std::mt19937_64 rng(init_seed);
        const std::size_t d = cfg_.model_dim, w = cfg_.patch_width();
        enc_embed_ = add_linear(params_, "enc.embed", w, d, rng);
        for (std::size_t i = 0; i < cfg_.encoder_blocks; ++i)
            enc_blocks_.push_back(add_encoder_block(params_, "enc.block" + std::to_string(i), d, rng));
        enc_norm_ = add_norm(params_, "enc.ln_f", d);
        dec_embed_ = add_linear(params_, "dec.embed", w, d, rng);
        {
            std::normal_distribution<double> n(0.0, 0.5);
            Tensor<T> start(Shape{d});
            for (auto& v : start.data()) v = static_cast<T>(n(rng));
            dec_start_ = params_.add("dec.start", std::move(start));
        }
        for (std::size_t i = 0; i < cfg_.decoder_blocks; ++i)
            dec_blocks_.push_back(add_decoder_block(params_, "dec.block" + std::to_string(i), d, rng));
        dec_norm_ = add_norm(params_, "dec.ln_f", d);
        dec_out_ = add_linear(params_, "dec.out", d, w, rng, 0.5);
    }

    const GlassConfig& config() const { return cfg_; }
    ParameterSet<T>& params() { return params_; }
    const ParameterSet<T>& params() const { return params_; }

    static bool is_encoder_param(const std::string& name) { return name.rfind("enc.", 0) == 0; }

    RopeSpec rope_spec() const { return {cfg_.heads, cfg_.rope_base}; }

    // [T x D] window (P | T) -> [T/P x d] encoder states.
    Var<T> encode(Tape<T>& tape, const Tensor<T>& window)
    {
        if (window.cols() != cfg_.input_dims)
            throw ShapeError("window " + shape_str(window.dims()) + " needs " + std::to_string(cfg_.input_dims) +
                             " columns");
        for (auto v : window.data())
            if (!std::isfinite(static_cast<double>(v))) throw NumericError("non-finite value in encoder input");
        Tensor<T> patches = patchify(window, cfg_.patch);
        const auto positions = iota_positions(patches.rows());
        Var<T> h = apply(tape, params_, enc_embed_, tape.constant(std::move(patches)));
        for (const auto& b : enc_blocks_) h = encoder_block(tape, params_, b, h, positions, rope_spec());
        return apply(tape, params_, enc_norm_, h);
    }

    // Autoregressive decoding of T_o frames. Before each step every earlier
    // patch is independently swapped for ground truth with probability
    // tf_prob. Returns [T_o x D].
    Var<T> decode(Tape<T>& tape, Var<T> enc, const Tensor<T>* target, double tf_prob, std::uint64_t rng_seed)
    {
        if (tf_prob < 0 || tf_prob > 1) throw ContractError("teacher forcing probability outside [0, 1]");
        if (tf_prob > 0 && !target) throw ContractError("teacher forcing needs a target");
        const std::size_t n_out = cfg_.output_patches();
        const std::size_t n_in = enc.rows();
        std::vector<Var<T>> truth_embedded;
        if (tf_prob > 0) {
            if (target->rows() != cfg_.output_frames || target->cols() != cfg_.input_dims)
                throw ShapeError("target " + shape_str(target->dims()) + " does not match the output horizon");
            Tensor<T> gt = patchify(*target, cfg_.patch);
            Var<T> emb = apply(tape, params_, dec_embed_, tape.constant(std::move(gt)));
            for (std::size_t j = 0; j + 1 < n_out; ++j) truth_embedded.push_back(slice_rows(emb, j, 1));
        }
        std::vector<KeyValues<T>> memory;
        const auto enc_positions = iota_positions(n_in);
        for (const auto& b : dec_blocks_) memory.push_back(project_kv(tape, params_, b.cross_attn, enc, enc_positions, rope_spec()));

        std::mt19937_64 rng(rng_seed);
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        Var<T> start = reshape(tape.param(params_, dec_start_), {1, cfg_.model_dim});
        std::vector<Var<T>> preds, pred_embedded;
        for (std::size_t t = 0; t < n_out; ++t) {
            std::vector<Var<T>> inputs{start};
            for (std::size_t j = 0; j < t; ++j) {
                const bool forced = tf_prob > 0 && u01(rng) < tf_prob;
                inputs.push_back(forced ? truth_embedded[j] : pred_embedded[j]);
            }
            Var<T> x = concat_rows(inputs);
            const auto positions = iota_positions(t + 1);
            const auto cross_positions = iota_positions(t + 1, n_in);
            for (std::size_t b = 0; b < dec_blocks_.size(); ++b)
                x = decoder_block(tape, params_, dec_blocks_[b], x, positions, cross_positions, memory[b], rope_spec());
            Var<T> f_t = apply(tape, params_, dec_norm_, slice_rows(x, t, 1));
            Var<T> patch = apply(tape, params_, dec_out_, f_t);
            preds.push_back(patch);
            if (t + 1 < n_out) pred_embedded.push_back(apply(tape, params_, dec_embed_, patch));
        }
        return reshape(concat_rows(preds), {cfg_.output_frames, cfg_.input_dims});
    }

    Tensor<T> encode(const Tensor<T>& window)
    {
        Tape<T> tape;
        return encode(tape, window).value();
    }

    // Fully autoregressive forecast.
    Tensor<T> forecast(const Tensor<T>& window)
    {
        Tape<T> tape;
        return decode(tape, encode(tape, window), nullptr, 0.0, 0).value();
    }

private:
    GlassConfig cfg_;
    ParameterSet<T> params_;
    LinearRef enc_embed_;
    std::vector<EncoderBlockRef> enc_blocks_;
    NormRef enc_norm_;
    LinearRef dec_embed_;
    std::size_t dec_start_ = 0;
    std::vector<DecoderBlockRef> dec_blocks_;
    NormRef dec_norm_;
    LinearRef dec_out_;
};

template <typename To, typename From>
void copy_parameters(const ParameterSet<From>& src, ParameterSet<To>& dst)
{
    for (const auto& p : src) dst.at(p.name).value = p.value.template cast<To>();
}

} // namespace glass
