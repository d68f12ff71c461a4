#pragma once

// Tape-based reverse-mode differentiation over 2-D tensors. Only the
// operations the gaze models need are provided.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "glass/errors.hpp"
#include "glass/tensor.hpp"

namespace glass {

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
};

template <typename T>
class ParameterSet {
public:
    std::size_t add(std::string name, Tensor<T> value)
    {
        if (index_.count(name))
            throw ConfigError("duplicate parameter name: " + name);
        const std::size_t idx = params_.size();
        index_.emplace(name, idx);
        Tensor<T> grad(value.dims());
        params_.push_back(Parameter<T>{std::move(name), std::move(value), std::move(grad)});
        return idx;
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t index_of(const std::string& name) const
    {
        auto it = index_.find(name);
        if (it == index_.end())
            throw ConfigError("unknown parameter: " + name);
        return it->second;
    }

    Parameter<T>& operator[](std::size_t i) { return params_[i]; }
    const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
    Parameter<T>& at(const std::string& name) { return params_[index_of(name)]; }
    const Parameter<T>& at(const std::string& name) const { return params_[index_of(name)]; }

    std::size_t size() const { return params_.size(); }
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    std::size_t scalar_count() const
    {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

    void zero_grad()
    {
        for (auto& p : params_) p.grad.fill(T(0));
    }

private:
    std::vector<Parameter<T>> params_;
    std::map<std::string, std::size_t> index_;
};

template <typename T>
class Tape;

template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    std::size_t id = 0;

    const Tensor<T>& value() const { return tape->value(id); }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    std::size_t size() const { return value().size(); }
};

template <typename T>
class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t)>;

    Var<T> constant(Tensor<T> value) { return push(std::move(value), nullptr); }

    Var<T> param(ParameterSet<T>& set, std::size_t idx)
    {
        const auto key = std::make_pair(static_cast<const void*>(&set), idx);
        if (auto it = param_nodes_.find(key); it != param_nodes_.end())
            return {this, it->second};
        auto* target = &set[idx];
        Var<T> v = push(target->value, [target](Tape& t, std::size_t self) {
            const auto& g = t.grad(self);
            auto& dst = target->grad;
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
        });
        param_nodes_.emplace(key, v.id);
        return v;
    }

    Var<T> param(ParameterSet<T>& set, const std::string& name)
    {
        return param(set, set.index_of(name));
    }

    Var<T> push(Tensor<T> value, Backward backward)
    {
        nodes_.push_back(Node{std::move(value), Tensor<T>(), std::move(backward)});
        return {this, nodes_.size() - 1};
    }

    const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }

    Tensor<T>& grad(std::size_t id)
    {
        auto& n = nodes_[id];
        if (n.grad.size() != n.value.size()) n.grad = Tensor<T>(n.value.dims());
        return n.grad;
    }

    void backward(Var<T> loss)
    {
        if (backward_done_)
            throw AccumulationError("backward already ran on this tape; reset() it first");
        if (loss.value().size() != 1)
            throw ShapeError("backward needs a scalar loss, got " + shape_str(loss.value().dims()));
        backward_done_ = true;
        grad(loss.id)[0] = T(1);
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            auto& n = nodes_[i];
            if (n.backward && n.grad.size() == n.value.size()) n.backward(*this, i);
        }
    }

    void reset()
    {
        nodes_.clear();
        param_nodes_.clear();
        backward_done_ = false;
        branch_signature_ = 0xcbf29ce484222325ull;
    }

    // Piecewise ops fold their branch choices in here so finite-difference
    // checks can tell when a perturbation crossed a kink.
    void mix_branch(std::uint64_t bits)
    {
        branch_signature_ ^= bits;
        branch_signature_ *= 0x100000001b3ull;
    }
    std::uint64_t branch_signature() const { return branch_signature_; }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        Backward backward;
    };

    std::vector<Node> nodes_;
    std::map<std::pair<const void*, std::size_t>, std::size_t> param_nodes_;
    bool backward_done_ = false;
    std::uint64_t branch_signature_ = 0xcbf29ce484222325ull;
};

namespace detail {

inline void require(bool cond, const std::string& msg)
{
    if (!cond) throw ShapeError(msg);
}

// C += A * B
template <typename T>
void gemm_nn(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c)
{
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* pc = c.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        T* crow = pc + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = pa[i * k + p];
            if (av == T(0)) continue;
            const T* brow = pb + p * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

// C += A * B^T
template <typename T>
void gemm_nt(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c)
{
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* pc = c.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            T s = 0;
            for (std::size_t p = 0; p < k; ++p) s += pa[i * k + p] * pb[j * k + p];
            pc[i * m + j] += s;
        }
    }
}

// C += A^T * B
template <typename T>
void gemm_tn(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c)
{
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* pc = c.data().data();
    for (std::size_t r = 0; r < n; ++r) {
        const T* brow = pb + r * m;
        for (std::size_t i = 0; i < k; ++i) {
            const T av = pa[r * k + i];
            if (av == T(0)) continue;
            T* crow = pc + i * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
Tape<T>& same_tape(Var<T> a, Var<T> b)
{
    if (a.tape != b.tape) throw ContractError("operands recorded on different tapes");
    return *a.tape;
}

} // namespace detail

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b)
{
    auto& tape = detail::same_tape(a, b);
    const auto& av = a.value();
    const auto& bv = b.value();
    detail::require(av.cols() == bv.rows(),
                    "matmul shape mismatch " + shape_str(av.dims()) + " vs " + shape_str(bv.dims()));
    Tensor<T> out(av.rows(), bv.cols());
    detail::gemm_nn(av, bv, out);
    return tape.push(std::move(out), [ia = a.id, ib = b.id](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        detail::gemm_nt(g, t.value(ib), t.grad(ia));
        detail::gemm_tn(t.value(ia), g, t.grad(ib));
    });
}

// x[n x b] + bias[b] broadcast over rows.
template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias)
{
    auto& tape = detail::same_tape(x, bias);
    const auto& xv = x.value();
    const auto& bv = bias.value();
    detail::require(bv.size() == xv.cols(),
                    "bias " + shape_str(bv.dims()) + " does not match " + shape_str(xv.dims()));
    Tensor<T> out = xv;
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv[c];
    return tape.push(std::move(out), [ix = x.id, ib = bias.id](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& gx = t.grad(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        auto& gb = t.grad(ib);
        const std::size_t cols = gb.size();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % cols] += g[i];
    });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias)
{
    return add_bias(matmul(x, weight), bias);
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b)
{
    auto& tape = detail::same_tape(a, b);
    detail::require(a.size() == b.size(), "add shape mismatch " + shape_str(a.value().dims()) +
                                              " vs " + shape_str(b.value().dims()));
    Tensor<T> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return tape.push(std::move(out), [ia = a.id, ib = b.id](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& ga = t.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        auto& gb = t.grad(ib);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b)
{
    auto& tape = detail::same_tape(a, b);
    detail::require(a.size() == b.size(), "sub shape mismatch " + shape_str(a.value().dims()) +
                                              " vs " + shape_str(b.value().dims()));
    Tensor<T> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return tape.push(std::move(out), [ia = a.id, ib = b.id](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& ga = t.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        auto& gb = t.grad(ib);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    });
}

// Elementwise product.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b)
{
    auto& tape = detail::same_tape(a, b);
    detail::require(a.size() == b.size(), "mul shape mismatch " + shape_str(a.value().dims()) +
                                              " vs " + shape_str(b.value().dims()));
    Tensor<T> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return tape.push(std::move(out), [ia = a.id, ib = b.id](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& av = t.value(ia);
        const auto& bv = t.value(ib);
        auto& ga = t.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        auto& gb = t.grad(ib);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    });
}

// Elementwise product with a constant (dropout masks and the like).
template <typename T>
Var<T> mul_const(Var<T> x, const Tensor<T>& mask)
{
    detail::require(x.size() == mask.size(), "mask " + shape_str(mask.dims()) +
                                                 " does not match " + shape_str(x.value().dims()));
    Tensor<T> out = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    return x.tape->push(std::move(out), [ix = x.id, mask](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& gx = t.grad(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
    });
}

template <typename T>
Var<T> scale(Var<T> x, T s)
{
    Tensor<T> out = x.value();
    for (auto& v : out.data()) v *= s;
    return x.tape->push(std::move(out), [ix = x.id, s](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& gx = t.grad(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s;
    });
}

namespace detail {

template <typename T, typename F, typename DF>
Var<T> unary(Var<T> x, F f, DF df)
{
    const auto& xv = x.value();
    Tensor<T> out(xv.dims());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    return x.tape->push(std::move(out), [ix = x.id, df](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& xv = t.value(ix);
        const auto& yv = t.value(self);
        auto& gx = t.grad(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i], yv[i]);
    });
}

} // namespace detail

template <typename T>
Var<T> gelu(Var<T> x)
{
    constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
    return detail::unary<T>(
        x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
        [](T v, T) {
            return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v);
        });
}

template <typename T>
Var<T> relu(Var<T> x)
{
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < x.size(); ++i)
        bits = bits * 31 + (x.value()[i] > T(0) ? 1 : 0);
    x.tape->mix_branch(bits);
    return detail::unary<T>(
        x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(Var<T> x)
{
    return detail::unary<T>(
        x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> tanh(Var<T> x)
{
    return detail::unary<T>(
        x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> sum(Var<T> x)
{
    T s = 0;
    for (auto v : x.value().data()) s += v;
    return x.tape->push(Tensor<T>(Shape{1}, s), [ix = x.id](Tape<T>& t, std::size_t self) {
        const T g = t.grad(self)[0];
        auto& gx = t.grad(ix);
        for (auto& v : gx.data()) v += g;
    });
}

template <typename T>
Var<T> mean(Var<T> x)
{
    return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

// Column means: [n x c] -> [1 x c].
template <typename T>
Var<T> mean_rows(Var<T> x)
{
    const auto& xv = x.value();
    const std::size_t n = xv.rows(), c = xv.cols();
    detail::require(n > 0, "mean_rows of empty tensor");
    Tensor<T> out(1, c);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) out(0, j) += xv(r, j);
    for (auto& v : out.data()) v /= static_cast<T>(n);
    return x.tape->push(std::move(out), [ix = x.id, n, c](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& gx = t.grad(ix);
        const T w = T(1) / static_cast<T>(n);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += g[j] * w;
    });
}

// Constant left multiplication M[r x n] * X[n x c]; used for finite
// difference stencils and pooling over rows.
template <typename T>
Var<T> left_mul_const(const Tensor<T>& m, Var<T> x)
{
    const auto& xv = x.value();
    detail::require(m.cols() == xv.rows(),
                    "left_mul shape mismatch " + shape_str(m.dims()) + " vs " + shape_str(xv.dims()));
    Tensor<T> out(m.rows(), xv.cols());
    detail::gemm_nn(m, xv, out);
    return x.tape->push(std::move(out), [ix = x.id, m](Tape<T>& t, std::size_t self) {
        detail::gemm_tn(m, t.grad(self), t.grad(ix));
    });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts)
{
    detail::require(!parts.empty(), "concat_rows of nothing");
    const std::size_t cols = parts.front().cols();
    std::size_t rows = 0;
    for (const auto& p : parts) {
        detail::require(p.cols() == cols, "concat_rows width mismatch");
        rows += p.rows();
    }
    Tensor<T> out(rows, cols);
    std::size_t off = 0;
    std::vector<std::size_t> ids;
    for (const auto& p : parts) {
        const auto& pv = p.value();
        std::copy(pv.data().begin(), pv.data().end(), out.data().begin() + off);
        off += pv.size();
        ids.push_back(p.id);
    }
    return parts.front().tape->push(std::move(out), [ids](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        std::size_t off = 0;
        for (auto id : ids) {
            auto& gp = t.grad(id);
            for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
            off += gp.size();
        }
    });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts)
{
    detail::require(!parts.empty(), "concat_cols of nothing");
    const std::size_t rows = parts.front().rows();
    std::size_t cols = 0;
    std::vector<std::size_t> ids, widths;
    for (const auto& p : parts) {
        detail::require(p.rows() == rows, "concat_cols height mismatch");
        cols += p.cols();
        ids.push_back(p.id);
        widths.push_back(p.cols());
    }
    Tensor<T> out(rows, cols);
    std::size_t c0 = 0;
    for (const auto& p : parts) {
        const auto& pv = p.value();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < pv.cols(); ++c) out(r, c0 + c) = pv(r, c);
        c0 += pv.cols();
    }
    return parts.front().tape->push(std::move(out), [ids, widths, rows, cols](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        std::size_t c0 = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            auto& gp = t.grad(ids[k]);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < widths[k]; ++c) gp[r * widths[k] + c] += g[r * cols + c0 + c];
            c0 += widths[k];
        }
    });
}

template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t count)
{
    const auto& xv = x.value();
    detail::require(begin + count <= xv.rows(), "slice_rows out of range");
    const std::size_t c = xv.cols();
    Tensor<T> out(count, c);
    std::copy(xv.data().begin() + begin * c, xv.data().begin() + (begin + count) * c, out.data().begin());
    return x.tape->push(std::move(out), [ix = x.id, begin, c](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& gx = t.grad(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[begin * c + i] += g[i];
    });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape dims)
{
    Tensor<T> out = x.value().reshaped(std::move(dims));
    return x.tape->push(std::move(out), [ix = x.id](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& gx = t.grad(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> offset, T eps = T(1e-5))
{
    auto& tape = detail::same_tape(x, gain);
    const auto& xv = x.value();
    const std::size_t n = xv.rows(), c = xv.cols();
    detail::require(gain.size() == c && offset.size() == c, "layer_norm parameter width mismatch");
    const auto& gv = gain.value();
    const auto& bv = offset.value();
    Tensor<T> out(xv.dims());
    Tensor<T> xhat(xv.dims());
    std::vector<T> inv_std(n);
    for (std::size_t r = 0; r < n; ++r) {
        T mu = 0;
        for (std::size_t j = 0; j < c; ++j) mu += xv(r, j);
        mu /= static_cast<T>(c);
        T var = 0;
        for (std::size_t j = 0; j < c; ++j) var += (xv(r, j) - mu) * (xv(r, j) - mu);
        var /= static_cast<T>(c);
        inv_std[r] = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            xhat(r, j) = (xv(r, j) - mu) * inv_std[r];
            out(r, j) = gv[j] * xhat(r, j) + bv[j];
        }
    }
    return tape.push(std::move(out), [ix = x.id, ig = gain.id, ib = offset.id, xhat = std::move(xhat),
                                      inv_std = std::move(inv_std), n, c](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& gv = t.value(ig);
        auto& gx = t.grad(ix);
        auto& gg = t.grad(ig);
        auto& gb = t.grad(ib);
        std::vector<T> dxhat(c);
        for (std::size_t r = 0; r < n; ++r) {
            T m1 = 0, m2 = 0;
            for (std::size_t j = 0; j < c; ++j) {
                const T gy = g[r * c + j];
                gg[j] += gy * xhat(r, j);
                gb[j] += gy;
                dxhat[j] = gy * gv[j];
                m1 += dxhat[j];
                m2 += dxhat[j] * xhat(r, j);
            }
            m1 /= static_cast<T>(c);
            m2 /= static_cast<T>(c);
            for (std::size_t j = 0; j < c; ++j)
                gx[r * c + j] += inv_std[r] * (dxhat[j] - m1 - xhat(r, j) * m2);
        }
    });
}

// Mean absolute error against a constant target.
template <typename T>
Var<T> mae_loss(Var<T> pred, const Tensor<T>& target)
{
    const auto& pv = pred.value();
    detail::require(pv.size() == target.size(), "mae shape mismatch " + shape_str(pv.dims()) +
                                                    " vs " + shape_str(target.dims()));
    T s = 0;
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        s += std::abs(pv[i] - target[i]);
        bits = bits * 31 + (pv[i] > target[i] ? 1 : 0);
    }
    pred.tape->mix_branch(bits);
    const T n = static_cast<T>(pv.size());
    return pred.tape->push(Tensor<T>(Shape{1}, s / n), [ip = pred.id, target, n](Tape<T>& t, std::size_t self) {
        const T g = t.grad(self)[0] / n;
        const auto& pv = t.value(ip);
        auto& gp = t.grad(ip);
        for (std::size_t i = 0; i < pv.size(); ++i) {
            const T d = pv[i] - target[i];
            gp[i] += d > T(0) ? g : (d < T(0) ? -g : T(0));
        }
    });
}

// Softmax cross-entropy of a single row of logits against a class index.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::size_t label)
{
    const auto& lv = logits.value();
    detail::require(label < lv.size(), "label outside logit range");
    T mx = lv[0];
    for (auto v : lv.data()) mx = std::max(mx, v);
    std::vector<T> p(lv.size());
    T z = 0;
    for (std::size_t i = 0; i < lv.size(); ++i) z += (p[i] = std::exp(lv[i] - mx));
    for (auto& v : p) v /= z;
    const T loss = -(lv[label] - mx - std::log(z));
    return logits.tape->push(Tensor<T>(Shape{1}, loss), [il = logits.id, p = std::move(p), label](Tape<T>& t, std::size_t self) {
        const T g = t.grad(self)[0];
        auto& gl = t.grad(il);
        for (std::size_t i = 0; i < p.size(); ++i) gl[i] += g * (p[i] - (i == label ? T(1) : T(0)));
    });
}

// Unfold a [T x C] sequence into [T_out x K*C] rows of dilated taps, with
// zero padding on either side. A convolution is then a matmul.
template <typename T>
Var<T> unfold_time(Var<T> x, std::size_t kernel, std::size_t dilation, std::size_t pad_left,
                   std::size_t pad_right)
{
    const auto& xv = x.value();
    const std::size_t len = xv.rows(), ch = xv.cols();
    const std::size_t span = dilation * (kernel - 1) + 1;
    if (len + pad_left + pad_right < span)
        throw ShapeError("sequence of " + std::to_string(len) + " frames is shorter than receptive field " +
                         std::to_string(span));
    const std::size_t out_len = len + pad_left + pad_right - span + 1;
    Tensor<T> out(out_len, kernel * ch);
    for (std::size_t o = 0; o < out_len; ++o)
        for (std::size_t k = 0; k < kernel; ++k) {
            const long src = static_cast<long>(o + k * dilation) - static_cast<long>(pad_left);
            if (src < 0 || src >= static_cast<long>(len)) continue;
            for (std::size_t c = 0; c < ch; ++c) out(o, k * ch + c) = xv(static_cast<std::size_t>(src), c);
        }
    return x.tape->push(std::move(out), [ix = x.id, kernel, dilation, pad_left, len, ch, out_len](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& gx = t.grad(ix);
        for (std::size_t o = 0; o < out_len; ++o)
            for (std::size_t k = 0; k < kernel; ++k) {
                const long src = static_cast<long>(o + k * dilation) - static_cast<long>(pad_left);
                if (src < 0 || src >= static_cast<long>(len)) continue;
                for (std::size_t c = 0; c < ch; ++c)
                    gx[static_cast<std::size_t>(src) * ch + c] += g[o * kernel * ch + k * ch + c];
            }
    });
}

// Per-column batch normalization over all rows of x. In training mode the
// batch statistics are used and the running estimates updated.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gain, Var<T> offset, Tensor<T>& running_mean, Tensor<T>& running_var,
                  bool training, T momentum = T(0.1), T eps = T(1e-5))
{
    auto& tape = detail::same_tape(x, gain);
    const auto& xv = x.value();
    const std::size_t n = xv.rows(), c = xv.cols();
    detail::require(gain.size() == c && offset.size() == c && running_mean.size() == c && running_var.size() == c,
                    "batch_norm width mismatch");
    std::vector<T> mu(c, T(0)), inv_std(c);
    if (training) {
        std::vector<T> var(c, T(0));
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) mu[j] += xv(r, j);
        for (auto& v : mu) v /= static_cast<T>(n);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) var[j] += (xv(r, j) - mu[j]) * (xv(r, j) - mu[j]);
        for (std::size_t j = 0; j < c; ++j) {
            var[j] /= static_cast<T>(n);
            inv_std[j] = T(1) / std::sqrt(var[j] + eps);
            running_mean[j] = (T(1) - momentum) * running_mean[j] + momentum * mu[j];
            const T unbiased = n > 1 ? var[j] * static_cast<T>(n) / static_cast<T>(n - 1) : var[j];
            running_var[j] = (T(1) - momentum) * running_var[j] + momentum * unbiased;
        }
    } else {
        for (std::size_t j = 0; j < c; ++j) {
            mu[j] = running_mean[j];
            inv_std[j] = T(1) / std::sqrt(running_var[j] + eps);
        }
    }
    const auto& gv = gain.value();
    const auto& bv = offset.value();
    Tensor<T> xhat(xv.dims()), out(xv.dims());
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) {
            xhat(r, j) = (xv(r, j) - mu[j]) * inv_std[j];
            out(r, j) = gv[j] * xhat(r, j) + bv[j];
        }
    return tape.push(std::move(out), [ix = x.id, ig = gain.id, ib = offset.id, xhat = std::move(xhat),
                                      inv_std = std::move(inv_std), n, c, training](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& gv = t.value(ig);
        auto& gx = t.grad(ix);
        auto& gg = t.grad(ig);
        auto& gb = t.grad(ib);
        std::vector<T> m1(c, T(0)), m2(c, T(0));
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) {
                const T gy = g[r * c + j];
                gg[j] += gy * xhat(r, j);
                gb[j] += gy;
                m1[j] += gy * gv[j];
                m2[j] += gy * gv[j] * xhat(r, j);
            }
        for (std::size_t j = 0; j < c; ++j) {
            m1[j] /= static_cast<T>(n);
            m2[j] /= static_cast<T>(n);
        }
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) {
                const T dxhat = g[r * c + j] * gv[j];
                gx[r * c + j] += training ? inv_std[j] * (dxhat - m1[j] - xhat(r, j) * m2[j]) : inv_std[j] * dxhat;
            }
    });
}

} // namespace glass
