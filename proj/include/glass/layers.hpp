#pragma once

// Transformer building blocks: rotary position embedding, multi-head
// attention, pre-norm encoder/decoder blocks and their parameter layouts.

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "glass/autodiff.hpp"

namespace glass {

struct AttentionConfig {
    std::size_t model_dim = 32;
    std::size_t heads = 4;
    bool causal = false;

    std::size_t head_dim() const { return model_dim / heads; }

    void validate() const
    {
        if (heads == 0 || model_dim % heads != 0)
            throw ConfigError("model dim " + std::to_string(model_dim) + " not divisible by " +
                              std::to_string(heads) + " heads");
        if (head_dim() % 2 != 0)
            throw ConfigError("per-head dim " + std::to_string(head_dim()) + " must be even for rotary pairs");
    }
};

// allowed[i * cols + j] != 0 lets query i see key j.
struct AttentionMask {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<unsigned char> allowed;

    static AttentionMask causal(std::size_t n)
    {
        AttentionMask m{n, n, std::vector<unsigned char>(n * n, 0)};
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j <= i; ++j) m.allowed[i * n + j] = 1;
        return m;
    }
};

inline std::vector<std::size_t> iota_positions(std::size_t n, std::size_t start = 0)
{
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = start + i;
    return p;
}

namespace detail {

// In-place rotation of each (even, odd) pair inside every head. sign=-1
// applies the inverse rotation.
template <typename T>
void rotate_pairs(Tensor<T>& x, std::size_t heads, const std::vector<std::size_t>& positions, double base, int sign)
{
    const std::size_t n = x.rows(), width = x.cols();
    const std::size_t p = width / heads;
    for (std::size_t r = 0; r < n; ++r) {
        const double m = static_cast<double>(positions[r]);
        for (std::size_t i = 0; i < p / 2; ++i) {
            const double theta = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(p));
            const T c = static_cast<T>(std::cos(m * theta));
            const T s = static_cast<T>(sign * std::sin(m * theta));
            for (std::size_t h = 0; h < heads; ++h) {
                T& a = x(r, h * p + 2 * i);
                T& b = x(r, h * p + 2 * i + 1);
                const T a0 = a, b0 = b;
                a = a0 * c - b0 * s;
                b = a0 * s + b0 * c;
            }
        }
    }
}

template <typename T>
void check_rope(const Tensor<T>& x, std::size_t heads, const std::vector<std::size_t>& positions)
{
    if (heads == 0 || x.cols() % heads != 0)
        throw ShapeError("width " + std::to_string(x.cols()) + " not divisible into " + std::to_string(heads) + " heads");
    if ((x.cols() / heads) % 2 != 0)
        throw ConfigError("rotary embedding needs an even per-head dim, got " + std::to_string(x.cols() / heads));
    if (positions.size() != x.rows())
        throw ShapeError("rotary positions: " + std::to_string(positions.size()) + " for " +
                         std::to_string(x.rows()) + " rows");
}

} // namespace detail

// x is [n x heads*p]; row r is rotated by position positions[r].
template <typename T>
Tensor<T> rope_rotate(Tensor<T> x, std::size_t heads, const std::vector<std::size_t>& positions, double base = 10000.0)
{
    detail::check_rope(x, heads, positions);
    detail::rotate_pairs(x, heads, positions, base, +1);
    return x;
}

template <typename T>
Var<T> rope(Var<T> x, std::size_t heads, std::vector<std::size_t> positions, double base = 10000.0)
{
    Tensor<T> out = rope_rotate(x.value(), heads, positions, base);
    return x.tape->push(std::move(out), [ix = x.id, heads, positions = std::move(positions), base](Tape<T>& t, std::size_t self) {
        Tensor<T> g = t.grad(self);
        detail::rotate_pairs(g, heads, positions, base, -1);
        auto& gx = t.grad(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

namespace detail {

// Softmax(QK^T / sqrt(p)) per head; returns weights [heads][n*m].
template <typename T>
std::vector<std::vector<T>> attention_probs(const Tensor<T>& q, const Tensor<T>& k, const AttentionConfig& cfg,
                                            const AttentionMask* mask)
{
    const std::size_t n = q.rows(), m = k.rows(), p = cfg.head_dim();
    const T inv = T(1) / std::sqrt(static_cast<T>(p));
    std::vector<std::vector<T>> probs(cfg.heads, std::vector<T>(n * m));
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        auto& a = probs[h];
        for (std::size_t i = 0; i < n; ++i) {
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < m; ++j) {
                bool ok = true;
                if (cfg.causal) ok = j <= i + (m - n);
                if (mask) ok = ok && mask->allowed[i * m + j];
                if (!ok) {
                    a[i * m + j] = -std::numeric_limits<T>::infinity();
                    continue;
                }
                T s = 0;
                for (std::size_t c = 0; c < p; ++c) s += q(i, h * p + c) * k(j, h * p + c);
                a[i * m + j] = s * inv;
                mx = std::max(mx, a[i * m + j]);
            }
            if (mx == -std::numeric_limits<T>::infinity())
                throw ContractError("attention row " + std::to_string(i) + " has no visible keys");
            T z = 0;
            for (std::size_t j = 0; j < m; ++j) {
                const T e = a[i * m + j] == -std::numeric_limits<T>::infinity() ? T(0) : std::exp(a[i * m + j] - mx);
                a[i * m + j] = e;
                z += e;
            }
            for (std::size_t j = 0; j < m; ++j) a[i * m + j] /= z;
        }
    }
    return probs;
}

template <typename T>
void check_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const AttentionConfig& cfg,
                     const AttentionMask* mask)
{
    cfg.validate();
    if (q.cols() != cfg.model_dim || k.cols() != cfg.model_dim || v.cols() != cfg.model_dim)
        throw ShapeError("attention inputs " + shape_str(q.dims()) + ", " + shape_str(k.dims()) + ", " +
                         shape_str(v.dims()) + " do not match model dim " + std::to_string(cfg.model_dim));
    if (k.rows() != v.rows())
        throw ShapeError("keys " + shape_str(k.dims()) + " and values " + shape_str(v.dims()) + " disagree");
    if (cfg.causal && q.rows() > k.rows())
        throw ShapeError("causal attention needs at least as many keys as queries");
    if (mask && (mask->rows != q.rows() || mask->cols != k.rows() || mask->allowed.size() != q.rows() * k.rows()))
        throw ShapeError("mask [" + std::to_string(mask->rows) + "x" + std::to_string(mask->cols) +
                         "] does not match scores [" + std::to_string(q.rows()) + "x" + std::to_string(k.rows()) + "]");
}

} // namespace detail

// Attention weights as a [heads*n x m] matrix (head-major).
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, const AttentionConfig& cfg,
                            const AttentionMask* mask = nullptr)
{
    detail::check_attention(q, k, k, cfg, mask);
    auto probs = detail::attention_probs(q, k, cfg, mask);
    Tensor<T> out(cfg.heads * q.rows(), k.rows());
    for (std::size_t h = 0; h < cfg.heads; ++h)
        std::copy(probs[h].begin(), probs[h].end(), out.data().begin() + h * probs[h].size());
    return out;
}

// Scaled dot-product attention over already projected (and rotated) q, k, v.
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const AttentionConfig& cfg, const AttentionMask* mask = nullptr)
{
    detail::check_attention(q.value(), k.value(), v.value(), cfg, mask);
    const std::size_t n = q.rows(), m = k.rows(), p = cfg.head_dim(), d = cfg.model_dim;
    auto probs = detail::attention_probs(q.value(), k.value(), cfg, mask);
    const auto& vv = v.value();
    Tensor<T> out(n, d);
    for (std::size_t h = 0; h < cfg.heads; ++h)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                const T a = probs[h][i * m + j];
                if (a == T(0)) continue;
                for (std::size_t c = 0; c < p; ++c) out(i, h * p + c) += a * vv(j, h * p + c);
            }
    return q.tape->push(std::move(out), [iq = q.id, ik = k.id, iv = v.id, probs = std::move(probs), n, m, p, d,
                                         heads = cfg.heads](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& qv = t.value(iq);
        const auto& kv = t.value(ik);
        const auto& vv = t.value(iv);
        Tensor<T> gq(n, d), gk(m, d), gv(m, d);
        const T inv = T(1) / std::sqrt(static_cast<T>(p));
        std::vector<T> da(m), ds(m);
        for (std::size_t h = 0; h < heads; ++h) {
            const auto& a = probs[h];
            for (std::size_t i = 0; i < n; ++i) {
                T dot = 0;
                for (std::size_t j = 0; j < m; ++j) {
                    T s = 0;
                    for (std::size_t c = 0; c < p; ++c) s += g(i, h * p + c) * vv(j, h * p + c);
                    da[j] = s;
                    dot += s * a[i * m + j];
                    const T aij = a[i * m + j];
                    if (aij != T(0))
                        for (std::size_t c = 0; c < p; ++c) gv(j, h * p + c) += aij * g(i, h * p + c);
                }
                for (std::size_t j = 0; j < m; ++j) {
                    ds[j] = a[i * m + j] * (da[j] - dot) * inv;
                    if (ds[j] == T(0)) continue;
                    for (std::size_t c = 0; c < p; ++c) {
                        gq(i, h * p + c) += ds[j] * kv(j, h * p + c);
                        gk(j, h * p + c) += ds[j] * qv(i, h * p + c);
                    }
                }
            }
        }
        auto add_into = [&](std::size_t id, const Tensor<T>& src) {
            auto& dst = t.grad(id);
            for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
        };
        add_into(iq, gq);
        add_into(ik, gk);
        add_into(iv, gv);
    });
}

// ---------------------------------------------------------------------------
// Parameter layouts

struct LinearRef {
    std::size_t weight = 0;
    std::size_t bias = 0;
};

struct NormRef {
    std::size_t gain = 0;
    std::size_t offset = 0;
};

struct AttentionRef {
    LinearRef q, k, v, o;
};

struct MlpRef {
    LinearRef up, down;
};

struct EncoderBlockRef {
    NormRef ln1;
    AttentionRef attn;
    NormRef ln2;
    MlpRef mlp;
};

struct DecoderBlockRef {
    NormRef ln1;
    AttentionRef self_attn;
    NormRef ln2;
    AttentionRef cross_attn;
    NormRef ln3;
    MlpRef mlp;
};

// Xavier-uniform weights, zero bias.
template <typename T, typename Rng>
LinearRef add_linear(ParameterSet<T>& ps, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng,
                     double gain = 1.0)
{
    const double limit = gain * std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Tensor<T> w(in, out);
    for (auto& x : w.data()) x = static_cast<T>(u(rng));
    LinearRef ref;
    ref.weight = ps.add(prefix + ".weight", std::move(w));
    ref.bias = ps.add(prefix + ".bias", Tensor<T>(Shape{out}));
    return ref;
}

template <typename T>
NormRef add_norm(ParameterSet<T>& ps, const std::string& prefix, std::size_t width)
{
    NormRef ref;
    ref.gain = ps.add(prefix + ".gain", Tensor<T>(Shape{width}, T(1)));
    ref.offset = ps.add(prefix + ".offset", Tensor<T>(Shape{width}));
    return ref;
}

template <typename T, typename Rng>
AttentionRef add_attention(ParameterSet<T>& ps, const std::string& prefix, std::size_t d, Rng& rng)
{
    AttentionRef ref;
    ref.q = add_linear(ps, prefix + ".q", d, d, rng);
    ref.k = add_linear(ps, prefix + ".k", d, d, rng);
    ref.v = add_linear(ps, prefix + ".v", d, d, rng);
    ref.o = add_linear(ps, prefix + ".o", d, d, rng);
    return ref;
}

template <typename T, typename Rng>
MlpRef add_mlp(ParameterSet<T>& ps, const std::string& prefix, std::size_t d, std::size_t hidden, Rng& rng)
{
    MlpRef ref;
    ref.up = add_linear(ps, prefix + ".up", d, hidden, rng);
    ref.down = add_linear(ps, prefix + ".down", hidden, d, rng);
    return ref;
}

template <typename T, typename Rng>
EncoderBlockRef add_encoder_block(ParameterSet<T>& ps, const std::string& prefix, std::size_t d, Rng& rng)
{
    EncoderBlockRef ref;
    ref.ln1 = add_norm(ps, prefix + ".ln1", d);
    ref.attn = add_attention(ps, prefix + ".attn", d, rng);
    ref.ln2 = add_norm(ps, prefix + ".ln2", d);
    ref.mlp = add_mlp(ps, prefix + ".mlp", d, 4 * d, rng);
    return ref;
}

template <typename T, typename Rng>
DecoderBlockRef add_decoder_block(ParameterSet<T>& ps, const std::string& prefix, std::size_t d, Rng& rng)
{
    DecoderBlockRef ref;
    ref.ln1 = add_norm(ps, prefix + ".ln1", d);
    ref.self_attn = add_attention(ps, prefix + ".self_attn", d, rng);
    ref.ln2 = add_norm(ps, prefix + ".ln2", d);
    ref.cross_attn = add_attention(ps, prefix + ".cross_attn", d, rng);
    ref.ln3 = add_norm(ps, prefix + ".ln3", d);
    ref.mlp = add_mlp(ps, prefix + ".mlp", d, 4 * d, rng);
    return ref;
}

// ---------------------------------------------------------------------------
// Forward passes over a tape

template <typename T>
Var<T> apply(Tape<T>& tape, ParameterSet<T>& ps, const LinearRef& ref, Var<T> x)
{
    return linear(x, tape.param(ps, ref.weight), tape.param(ps, ref.bias));
}

template <typename T>
Var<T> apply(Tape<T>& tape, ParameterSet<T>& ps, const NormRef& ref, Var<T> x)
{
    return layer_norm(x, tape.param(ps, ref.gain), tape.param(ps, ref.offset));
}

template <typename T>
Var<T> apply(Tape<T>& tape, ParameterSet<T>& ps, const MlpRef& ref, Var<T> x)
{
    return apply(tape, ps, ref.down, gelu(apply(tape, ps, ref.up, x)));
}

// Inverted dropout; identity when p is 0.
template <typename T, typename Rng>
Var<T> dropout(Var<T> x, double p, Rng& rng)
{
    if (p <= 0) return x;
    if (p >= 1) throw ConfigError("dropout probability must be below 1");
    std::bernoulli_distribution keep(1.0 - p);
    Tensor<T> mask(x.value().dims());
    for (auto& m : mask.data()) m = keep(rng) ? static_cast<T>(1.0 / (1.0 - p)) : T(0);
    return mul_const(x, mask);
}

struct RopeSpec {
    std::size_t heads = 4;
    double base = 10000.0;
};

// Rotated keys and values of a memory sequence, reusable across queries.
template <typename T>
struct KeyValues {
    Var<T> keys;
    Var<T> values;
};

template <typename T>
KeyValues<T> project_kv(Tape<T>& tape, ParameterSet<T>& ps, const AttentionRef& ref, Var<T> memory,
                        const std::vector<std::size_t>& positions, const RopeSpec& rs)
{
    return {rope(apply(tape, ps, ref.k, memory), rs.heads, positions, rs.base), apply(tape, ps, ref.v, memory)};
}

template <typename T>
Var<T> attend(Tape<T>& tape, ParameterSet<T>& ps, const AttentionRef& ref, Var<T> x,
              const std::vector<std::size_t>& positions, const KeyValues<T>& kv, const RopeSpec& rs, bool causal)
{
    Var<T> q = rope(apply(tape, ps, ref.q, x), rs.heads, positions, rs.base);
    AttentionConfig cfg{x.cols(), rs.heads, causal};
    return apply(tape, ps, ref.o, attention(q, kv.keys, kv.values, cfg));
}

// Pre-norm block: x + attn(ln(x)), then x + mlp(ln(x)).
template <typename T>
Var<T> encoder_block(Tape<T>& tape, ParameterSet<T>& ps, const EncoderBlockRef& ref, Var<T> x,
                     const std::vector<std::size_t>& positions, const RopeSpec& rs, bool causal = false)
{
    Var<T> h = apply(tape, ps, ref.ln1, x);
    auto kv = project_kv(tape, ps, ref.attn, h, positions, rs);
    x = add(x, attend(tape, ps, ref.attn, h, positions, kv, rs, causal));
    return add(x, apply(tape, ps, ref.mlp, apply(tape, ps, ref.ln2, x)));
}

template <typename T>
Var<T> decoder_block(Tape<T>& tape, ParameterSet<T>& ps, const DecoderBlockRef& ref, Var<T> x,
                     const std::vector<std::size_t>& positions, const std::vector<std::size_t>& cross_positions,
                     const KeyValues<T>& memory, const RopeSpec& rs)
{
    Var<T> h = apply(tape, ps, ref.ln1, x);
    auto kv = project_kv(tape, ps, ref.self_attn, h, positions, rs);
    x = add(x, attend(tape, ps, ref.self_attn, h, positions, kv, rs, true));
    x = add(x, attend(tape, ps, ref.cross_attn, apply(tape, ps, ref.ln2, x), cross_positions, memory, rs, false));
    return add(x, apply(tape, ps, ref.mlp, apply(tape, ps, ref.ln3, x)));
}

} // namespace glass
