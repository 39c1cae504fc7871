#include "sesim/matrix.hpp"

#include <cmath>
#include <cstdlib>

namespace sesim {

double Rng::next_normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = next_unit();
    if (u1 < 1e-300) u1 = 1e-300;
    double u2 = next_unit();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

std::vector<int> sample_without_replacement(int n, int k, Rng& rng) {
    if (k > n) k = n;
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i;
    // Partial Fisher-Yates: the first k slots end up being the sample.
    for (int i = 0; i < k; ++i) {
        int j = i + static_cast<int>(rng.next_below(static_cast<uint64_t>(n - i)));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw ArgumentError("matmul: inner dimensions differ");
    Matrix out(a.rows(), b.cols());
    const int n = a.rows(), k = a.cols(), m = b.cols();
    for (int i = 0; i < n; ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (int p = 0; p < k; ++p) {
            const double s = arow[p];
            if (s == 0.0) continue;
            const double* brow = b.row(p);
            for (int j = 0; j < m; ++j) orow[j] += s * brow[j];
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

void axpy(Matrix& y, double s, const Matrix& x) {
    if (!y.same_shape(x)) throw ArgumentError("axpy: shape mismatch");
    double* yd = y.data();
    const double* xd = x.data();
    for (size_t i = 0; i < y.size(); ++i) yd[i] += s * xd[i];
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ArgumentError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
    return m;
}

}  // namespace sesim
