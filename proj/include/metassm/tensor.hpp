#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace metassm {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape rule violations (dimension mismatch, bad reshape, non-scalar loss).
class ShapeError : public Error {
public:
    using Error::Error;
};

// NaN/Inf produced by an op, or divergence guards tripping.
class NumericError : public Error {
public:
    using Error::Error;
};

// Bad user-supplied configuration or arguments.
class ValidationError : public Error {
public:
    using Error::Error;
};

// File format / filesystem failures.
class IoError : public Error {
public:
    using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Dense row-major tensor of 64-bit reals. Rank 0 (empty shape) is a scalar.
class Tensor {
public:
    Tensor() : shape_(), data_(1, 0.0) {}

    Tensor(Shape shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_numel(shape_) != data_.size()) {
            throw ShapeError("tensor: shape " + shape_str(shape_) + " holds " +
                             std::to_string(shape_numel(shape_)) + " elements, got " +
                             std::to_string(data_.size()));
        }
    }

    static Tensor zeros(Shape shape) {
        std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0));
    }

    static Tensor full(Shape shape, double v) {
        std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, v));
    }

    static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

    static Tensor scalar(double v) { return Tensor({}, {v}); }

    static Tensor row(std::initializer_list<double> vals) {
        return Tensor({vals.size()}, std::vector<double>(vals));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> vals) {
        return Tensor({rows, cols}, std::move(vals));
    }

    static Tensor identity(std::size_t n) {
        Tensor t = zeros({n, n});
        for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

    bool is_scalar() const { return data_.size() == 1; }

    double item() const {
        if (data_.size() != 1) {
            throw ShapeError("item: tensor of shape " + shape_str(shape_) + " is not scalar");
        }
        return data_[0];
    }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t i, std::size_t j) { return data_[i * shape_.at(1) + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_.at(1) + j]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<const double> values() const { return data_; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool all_finite() const {
        for (double v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    bool bit_equal(const Tensor& other) const {
        if (shape_ != other.shape_) return false;
        for (std::size_t i = 0; i < data_.size(); ++i) {
            if (data_[i] != other.data_[i]) return false;
        }
        return true;
    }

private:
    Shape shape_;
    std::vector<double> data_;
};

namespace kernels {

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

inline Tensor scalar_mul(double c, const Tensor& a) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
    return out;
}

inline Tensor relu(const Tensor& a) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
    return out;
}

inline Tensor square(const Tensor& a) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= out[i];
    return out;
}

inline Tensor mean(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
    return Tensor::scalar(s / static_cast<double>(a.size()));
}

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
    return Tensor::scalar(s);
}

// A [m,k] x B [k,n] -> [m,n], or A [m,k] x b [k] -> [m].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2) {
        throw ShapeError("matmul: left operand must be rank 2, got " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1);
    if (b.rank() == 1) {
        if (b.dim(0) != k) {
            throw ShapeError("matmul: shape mismatch " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
        }
        Tensor out = Tensor::zeros({m});
        const double* pa = a.data();
        const double* pb = b.data();
        for (std::size_t i = 0; i < m; ++i) {
            double acc = 0.0;
            const double* row = pa + i * k;
            for (std::size_t j = 0; j < k; ++j) acc += row[j] * pb[j];
            out[i] = acc;
        }
        return out;
    }
    if (b.rank() != 2 || b.dim(0) != k) {
        throw ShapeError("matmul: shape mismatch " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    const std::size_t n = b.dim(1);
    Tensor out = Tensor::zeros({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = pa + i * k;
        double* crow = pc + i * n;
        for (std::size_t l = 0; l < k; ++l) {
            const double av = arow[l];
            if (av == 0.0) continue;
            const double* brow = pb + l * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return out;
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) {
        throw ShapeError("transpose: expected rank 2, got " + shape_str(a.shape()));
    }
    const std::size_t m = a.dim(0), n = a.dim(1);
    Tensor out = Tensor::zeros({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data()[j * m + i] = a.data()[i * n + j];
    return out;
}

inline Tensor reshape(const Tensor& a, Shape target) {
    if (shape_numel(target) != a.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(target));
    }
    return Tensor(std::move(target), std::vector<double>(a.data(), a.data() + a.size()));
}

// Contiguous sub-block along one axis; full extent on all other axes.
inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len) {
    if (axis >= a.rank()) {
        throw ShapeError("slice: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(a.shape()));
    }
    if (len == 0 || start + len > a.dim(axis)) {
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") invalid for " + shape_str(a.shape()) +
                         " axis " + std::to_string(axis));
    }
    Shape out_shape = a.shape();
    out_shape[axis] = len;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
    for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
    Tensor out = Tensor::zeros(out_shape);
    const std::size_t src_stride = a.dim(axis) * inner;
    const std::size_t dst_stride = len * inner;
    for (std::size_t o = 0; o < outer; ++o) {
        const double* src = a.data() + o * src_stride + start * inner;
        double* dst = out.data() + o * dst_stride;
        std::copy(src, src + dst_stride, dst);
    }
    return out;
}

inline Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Tensor& first = parts[0];
    if (axis >= first.rank()) {
        throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(first.shape()));
    }
    Shape out_shape = first.shape();
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != first.rank()) {
            throw ShapeError("concat: rank mismatch " + shape_str(first.shape()) + " vs " +
                             shape_str(p.shape()));
        }
        for (std::size_t i = 0; i < first.rank(); ++i) {
            if (i != axis && p.dim(i) != first.dim(i)) {
                throw ShapeError("concat: shape mismatch " + shape_str(first.shape()) +
                                 " vs " + shape_str(p.shape()) + " on axis " + std::to_string(i));
            }
        }
        total += p.dim(axis);
    }
    out_shape[axis] = total;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= first.dim(i);
    for (std::size_t i = axis + 1; i < first.rank(); ++i) inner *= first.dim(i);
    Tensor out = Tensor::zeros(out_shape);
    const std::size_t dst_stride = total * inner;
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
        const std::size_t part_stride = p.dim(axis) * inner;
        for (std::size_t o = 0; o < outer; ++o) {
            const double* src = p.data() + o * part_stride;
            double* dst = out.data() + o * dst_stride + offset * inner;
            std::copy(src, src + part_stride, dst);
        }
        offset += p.dim(axis);
    }
    return out;
}

}  // namespace kernels

}  // namespace metassm
