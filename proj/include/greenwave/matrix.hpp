#pragma once

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "greenwave/rng.hpp"

namespace greenwave {

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major matrix of doubles. The heavy products go through BLAS;
/// everything else is plain loops.
class Matrix {
public:
    Matrix() = default;
    Matrix(int rows, int cols) : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, 0.0) {
        if (rows < 0 || cols < 0) throw ShapeError("Matrix: negative dimension");
    }
    Matrix(int rows, int cols, std::vector<double> data) : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != static_cast<size_t>(rows) * cols)
            throw ShapeError("Matrix: data size " + std::to_string(data_.size()) + " does not match " +
                             std::to_string(rows) + "x" + std::to_string(cols));
    }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix row_vector(std::vector<double> v) {
        const int n = static_cast<int>(v.size());
        return Matrix(1, n, std::move(v));
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
    double operator()(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    std::string shape_str() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    Matrix& operator+=(const Matrix& o) {
        check_same_shape(o, "+=");
        for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    Matrix& operator-=(const Matrix& o) {
        check_same_shape(o, "-=");
        for (size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }

    Matrix& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }

    bool operator==(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_; }

private:
    void check_same_shape(const Matrix& o, const char* op) const {
        if (!same_shape(o))
            throw ShapeError(std::string("Matrix") + op + ": shape " + shape_str() + " vs " + o.shape_str());
    }

    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

namespace detail {
inline void gemm(bool trans_a, bool trans_b, const Matrix& a, const Matrix& b, Matrix& c, double beta) {
    const int m = trans_a ? a.cols() : a.rows();
    const int k = trans_a ? a.rows() : a.cols();
    const int kb = trans_b ? b.cols() : b.rows();
    const int n = trans_b ? b.rows() : b.cols();
    if (k != kb)
        throw ShapeError("matmul: inner dimensions disagree, " + a.shape_str() + (trans_a ? "^T" : "") + " * " +
                         b.shape_str() + (trans_b ? "^T" : ""));
    if (c.rows() != m || c.cols() != n) c = Matrix(m, n);
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, m, n, k,
                1.0, a.data(), a.cols(), b.data(), b.cols(), beta, c.data(), c.cols());
}
}  // namespace detail

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix c;
    detail::gemm(false, false, a, b, c, 0.0);
    return c;
}

/// a^T * b
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    Matrix c;
    detail::gemm(true, false, a, b, c, 0.0);
    return c;
}

/// a * b^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    Matrix c;
    detail::gemm(false, true, a, b, c, 0.0);
    return c;
}

/// c += a * b
inline void matmul_acc(const Matrix& a, const Matrix& b, Matrix& c) { detail::gemm(false, false, a, b, c, 1.0); }
inline void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& c) { detail::gemm(true, false, a, b, c, 1.0); }
inline void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& c) { detail::gemm(false, true, a, b, c, 1.0); }

inline Matrix add_row_broadcast(const Matrix& x, const Matrix& row) {
    if (row.rows() != 1 || row.cols() != x.cols())
        throw ShapeError("add_row_broadcast: " + x.shape_str() + " vs row " + row.shape_str());
    Matrix y = x;
    for (int r = 0; r < y.rows(); ++r)
        for (int c = 0; c < y.cols(); ++c) y(r, c) += row(0, c);
    return y;
}

inline Matrix relu(const Matrix& x) {
    Matrix y = x;
    for (double& v : y.raw()) v = v > 0.0 ? v : 0.0;
    return y;
}

inline Matrix random_normal(int rows, int cols, double stddev, Rng& rng) {
    Matrix m(rows, cols);
    for (double& v : m.raw()) v = rng.normal(0.0, stddev);
    return m;
}

/// Per-row argmax restricted to entries where mask != 0. Ties break to the
/// lowest index; a row with no valid entry is a caller contract violation.
inline std::vector<int> masked_row_argmax(const Matrix& q, const Matrix& mask) {
    if (!q.same_shape(mask)) throw ShapeError("masked_row_argmax: " + q.shape_str() + " vs mask " + mask.shape_str());
    std::vector<int> out(q.rows(), -1);
    for (int r = 0; r < q.rows(); ++r) {
        double best = 0.0;
        int best_j = -1;
        for (int c = 0; c < q.cols(); ++c) {
            if (mask(r, c) == 0.0) continue;
            if (best_j < 0 || q(r, c) > best) {
                best = q(r, c);
                best_j = c;
            }
        }
        if (best_j < 0) throw std::logic_error("masked_row_argmax: row " + std::to_string(r) + " has no valid entry");
        out[r] = best_j;
    }
    return out;
}

/// Row-wise softmax over valid entries; invalid entries get probability 0.
inline Matrix masked_softmax_rows(const Matrix& x, const Matrix& mask) {
    if (!x.same_shape(mask)) throw ShapeError("masked_softmax_rows: " + x.shape_str() + " vs " + mask.shape_str());
    Matrix p(x.rows(), x.cols());
    for (int r = 0; r < x.rows(); ++r) {
        double mx = -1e300;
        for (int c = 0; c < x.cols(); ++c)
            if (mask(r, c) != 0.0) mx = std::max(mx, x(r, c));
        double z = 0.0;
        for (int c = 0; c < x.cols(); ++c) {
            if (mask(r, c) == 0.0) continue;
            p(r, c) = std::exp(x(r, c) - mx);
            z += p(r, c);
        }
        for (int c = 0; c < x.cols(); ++c)
            if (mask(r, c) != 0.0) p(r, c) /= z;
    }
    return p;
}

}  // namespace greenwave
