#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "glass/errors.hpp"

namespace glass {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& dims)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) os << 'x';
        os << dims[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_size(const Shape& dims)
{
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>{});
}

// Dense row-major tensor. Rank-1 tensors behave as a single row in 2-D code.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape dims, T fill = T(0))
      : dims_(std::move(dims)), data_(shape_size(dims_), fill)
    { }

    Tensor(std::size_t rows, std::size_t cols, T fill = T(0))
      : Tensor(Shape{rows, cols}, fill)
    { }

    Tensor(Shape dims, std::vector<T> data)
      : dims_(std::move(dims)), data_(std::move(data))
    {
        if (shape_size(dims_) != data_.size())
            throw ShapeError("tensor " + shape_str(dims_) + " given " +
                             std::to_string(data_.size()) + " values");
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
    {
        return Tensor(Shape{rows, cols}, std::move(data));
    }

    static Tensor vector(std::vector<T> data)
    {
        const std::size_t n = data.size();
        return Tensor(Shape{n}, std::move(data));
    }

    const Shape& dims() const { return dims_; }
    std::size_t rank() const { return dims_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::size_t rows() const
    {
        if (dims_.size() <= 1) return dims_.empty() ? 0 : 1;
        return data_.size() / dims_.back();
    }
    std::size_t cols() const { return dims_.empty() ? 0 : dims_.back(); }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    std::span<T> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
    std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    // Same data, new dims; element count must match.
    Tensor reshaped(Shape dims) const
    {
        if (shape_size(dims) != data_.size())
            throw ShapeError("cannot reshape " + shape_str(dims_) + " to " + shape_str(dims));
        return Tensor(std::move(dims), data_);
    }

    template <typename U>
    Tensor<U> cast() const
    {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(dims_, std::move(out));
    }

    bool operator==(const Tensor& other) const = default;

private:
    Shape dims_;
    std::vector<T> data_;
};

} // namespace glass
