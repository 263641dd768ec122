#pragma once

// Minimal dense f32 kernels: rank-2/rank-3 arrays, matmul against a
// transposed weight, layer norm, row softmax, axis-wise L2 norms and
// descending argsort. All functions are pure; optional `macs` pointers
// accumulate the multiply-accumulate count actually executed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace pp {

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0f;
        return m;
    }

    static Matrix from_rows(std::initializer_list<std::initializer_list<float>> rows) {
        Matrix m(rows.size(), rows.size() ? rows.begin()->size() : 0);
        std::size_t r = 0;
        for (const auto& row : rows) {
            if (row.size() != m.cols_) throw ShapeError("from_rows: ragged rows");
            std::copy(row.begin(), row.end(), m.data_.begin() + static_cast<std::ptrdiff_t>(r * m.cols_));
            ++r;
        }
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    float& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    float at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }

    bool operator==(const Matrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<float> data_;
};

// Rank-3 array, row-major with the batch axis outermost: index (i, j, k)
// maps to data[(i*s + j)*d + k].
class Tensor3 {
public:
    Tensor3() = default;
    Tensor3(std::size_t n, std::size_t s, std::size_t d, float fill = 0.0f)
        : n_(n), s_(s), d_(d), data_(n * s * d, fill) {
        if (n == 0 || s == 0 || d == 0) throw ShapeError("Tensor3: all dims must be >= 1");
    }

    std::size_t n() const { return n_; }
    std::size_t s() const { return s_; }
    std::size_t d() const { return d_; }
    std::size_t size() const { return data_.size(); }

    float& at(std::size_t i, std::size_t j, std::size_t k) { return data_[(i * s_ + j) * d_ + k]; }
    float at(std::size_t i, std::size_t j, std::size_t k) const { return data_[(i * s_ + j) * d_ + k]; }

    std::span<float> row(std::size_t i, std::size_t j) { return {data_.data() + (i * s_ + j) * d_, d_}; }
    std::span<const float> row(std::size_t i, std::size_t j) const {
        return {data_.data() + (i * s_ + j) * d_, d_};
    }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }

    bool operator==(const Tensor3& o) const {
        return n_ == o.n_ && s_ == o.s_ && d_ == o.d_ && data_ == o.data_;
    }

private:
    std::size_t n_ = 0, s_ = 0, d_ = 0;
    std::vector<float> data_;
};

enum class Axis { Batch, Sequence, Feature };

// Permutation of 0..len-1 produced by argsort_desc.
using IndexOrder = std::vector<std::size_t>;

// result[i,j,:] = w * x[i,j,:], i.e. x (n,s,cin) times w^T with w (cout,cin).
inline Tensor3 matmul_rhs_transposed(const Tensor3& x, const Matrix& w, std::uint64_t* macs = nullptr) {
    if (x.d() != w.cols())
        throw ShapeError("matmul_rhs_transposed: x.d=" + std::to_string(x.d()) +
                         " != w.cols=" + std::to_string(w.cols()));
    Tensor3 out(x.n(), x.s(), w.rows());
    const std::size_t cin = x.d(), cout = w.rows();
    for (std::size_t i = 0; i < x.n(); ++i) {
        for (std::size_t j = 0; j < x.s(); ++j) {
            const std::span<const float> xr = x.row(i, j);
            const std::span<float> or_ = out.row(i, j);
            for (std::size_t o = 0; o < cout; ++o) {
                const std::span<const float> wr = w.row(o);
                float acc = 0.0f;
                for (std::size_t c = 0; c < cin; ++c) acc += xr[c] * wr[c];
                or_[o] = acc;
            }
        }
    }
    if (macs) *macs += static_cast<std::uint64_t>(x.n()) * x.s() * cout * cin;
    return out;
}

// Per-position normalization over the feature axis, population variance.
// eps == 0 is allowed for exact-variance checks; constant rows then divide
// by zero, which is on the caller.
inline Tensor3 layer_norm(const Tensor3& x, std::span<const float> gain, std::span<const float> bias,
                          float eps = 1e-5f) {
    if (gain.size() != x.d() || bias.size() != x.d())
        throw ShapeError("layer_norm: gain/bias length must equal feature width");
    if (!(eps >= 0.0f)) throw ValueError("layer_norm: eps must be >= 0");
    Tensor3 out(x.n(), x.s(), x.d());
    const double inv_d = 1.0 / static_cast<double>(x.d());
    for (std::size_t i = 0; i < x.n(); ++i) {
        for (std::size_t j = 0; j < x.s(); ++j) {
            const std::span<const float> xr = x.row(i, j);
            double mean = 0.0;
            for (float v : xr) mean += v;
            mean *= inv_d;
            double var = 0.0;
            for (float v : xr) {
                const double c = v - mean;
                var += c * c;
            }
            var *= inv_d;
            const double inv_std = 1.0 / std::sqrt(var + static_cast<double>(eps));
            const std::span<float> o = out.row(i, j);
            for (std::size_t k = 0; k < x.d(); ++k)
                o[k] = static_cast<float>((xr[k] - mean) * inv_std) * gain[k] + bias[k];
        }
    }
    return out;
}

// L2 norm of every slice along `keep`, summed over the other two axes.
inline std::vector<float> l2_norm_over_axes(const Tensor3& x, Axis keep) {
    std::size_t len = 0;
    switch (keep) {
        case Axis::Batch: len = x.n(); break;
        case Axis::Sequence: len = x.s(); break;
        case Axis::Feature: len = x.d(); break;
    }
    std::vector<double> acc(len, 0.0);
    for (std::size_t i = 0; i < x.n(); ++i) {
        for (std::size_t j = 0; j < x.s(); ++j) {
            const std::span<const float> xr = x.row(i, j);
            if (keep == Axis::Feature) {
                for (std::size_t k = 0; k < x.d(); ++k) acc[k] += static_cast<double>(xr[k]) * xr[k];
            } else {
                double sum = 0.0;
                for (float v : xr) sum += static_cast<double>(v) * v;
                acc[keep == Axis::Batch ? i : j] += sum;
            }
        }
    }
    std::vector<float> out(len);
    for (std::size_t k = 0; k < len; ++k) out[k] = static_cast<float>(std::sqrt(acc[k]));
    return out;
}

// Indices ordered by non-increasing value; ties broken by ascending index.
inline IndexOrder argsort_desc(std::span<const float> v) {
    for (float x : v)
        if (std::isnan(x)) throw ValueError("argsort_desc: NaN in input");
    IndexOrder idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
    return idx;
}

// Row-wise softmax with max subtraction. -inf entries get weight zero;
// each row needs at least one finite entry.
inline Matrix softmax_rows(const Matrix& scores) {
    Matrix out(scores.rows(), scores.cols());
    for (std::size_t r = 0; r < scores.rows(); ++r) {
        const std::span<const float> in = scores.row(r);
        const std::span<float> o = out.row(r);
        float mx = -std::numeric_limits<float>::infinity();
        for (float v : in) {
            if (std::isnan(v)) throw ValueError("softmax_rows: NaN in input");
            mx = std::max(mx, v);
        }
        if (!(mx > -std::numeric_limits<float>::infinity()))
            throw ValueError("softmax_rows: row has no finite entry");
        double sum = 0.0;
        for (std::size_t c = 0; c < scores.cols(); ++c) {
            const double e = std::exp(static_cast<double>(in[c]) - static_cast<double>(mx));
            o[c] = static_cast<float>(e);
            sum += e;
        }
        const float inv = static_cast<float>(1.0 / sum);
        for (std::size_t c = 0; c < scores.cols(); ++c) o[c] *= inv;
    }
    return out;
}

inline float silu(float x) { return x / (1.0f + std::exp(-x)); }

// Frobenius norm over the whole tensor; used by forward traces.
inline double l2_norm_all(const Tensor3& x) {
    double acc = 0.0;
    for (float v : x.data()) acc += static_cast<double>(v) * v;
    return std::sqrt(acc);
}

} // namespace pp
