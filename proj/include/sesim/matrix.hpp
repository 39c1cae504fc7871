#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "sesim/common.hpp"

namespace sesim {

// Dense row-major matrix of 64-bit reals.
class Matrix {
public:
    Matrix() = default;
    Matrix(int rows, int cols, double fill = 0.0)
        : rows_(rows), cols_(cols),
          v_(static_cast<size_t>(rows) * static_cast<size_t>(cols), fill) {
        if (rows < 0 || cols < 0) throw ArgumentError("Matrix: negative dimension");
    }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    size_t size() const { return v_.size(); }
    bool empty() const { return v_.empty(); }

    double& operator()(int r, int c) {
        return v_[static_cast<size_t>(r) * cols_ + c];
    }
    double operator()(int r, int c) const {
        return v_[static_cast<size_t>(r) * cols_ + c];
    }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }
    double* row(int r) { return v_.data() + static_cast<size_t>(r) * cols_; }
    const double* row(int r) const {
        return v_.data() + static_cast<size_t>(r) * cols_;
    }

    bool same_shape(const Matrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_;
    }

    bool all_finite() const {
        for (double x : v_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    void fill(double x) {
        for (double& e : v_) e = x;
    }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.v_ == b.v_;
    }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> v_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

// y += s * x, shapes must match.
void axpy(Matrix& y, double s, const Matrix& x);

double max_abs_diff(const Matrix& a, const Matrix& b);

}  // namespace sesim
