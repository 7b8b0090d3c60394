#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "palavra/errors.hpp"

namespace palavra {

// All in-process math runs in double; files store float32 (see binio.hpp).
using Vec = std::vector<double>;

// Dense row-major matrix.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return a[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return a[r * cols + c]; }

    static Mat identity(std::size_t n) {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }

    bool is_identity(double tol = 0.0) const {
        if (rows != cols) return false;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
                double want = (r == c) ? 1.0 : 0.0;
                if (std::abs(at(r, c) - want) > tol) return false;
            }
        return true;
    }
};

inline void check_dim(const Vec& v, std::size_t dim, const char* what) {
    if (v.size() != dim)
        throw InputError(std::string(what) + ": expected dim " + std::to_string(dim) +
                         ", got " + std::to_string(v.size()));
}

inline double dot(const Vec& x, const Vec& y) {
    if (x.size() != y.size())
        throw InputError("dot: dim mismatch " + std::to_string(x.size()) + " vs " +
                         std::to_string(y.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

inline double norm(const Vec& x) { return std::sqrt(dot(x, x)); }

inline Vec normalized(const Vec& x) {
    double n = norm(x);
    if (!(n > 0.0) || !std::isfinite(n))
        throw NumericError("normalized: zero or non-finite norm");
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / n;
    return out;
}

inline double cosine(const Vec& x, const Vec& y) {
    double nx = norm(x), ny = norm(y);
    if (!(nx > 0.0) || !(ny > 0.0) || !std::isfinite(nx) || !std::isfinite(ny))
        throw NumericError("cosine: zero or non-finite norm");
    return dot(x, y) / (nx * ny);
}

// d cosine(x, y) / d x, holding y fixed.
inline Vec cosine_grad_x(const Vec& x, const Vec& y) {
    double nx = norm(x), ny = norm(y);
    if (!(nx > 0.0) || !(ny > 0.0))
        throw NumericError("cosine_grad_x: zero norm");
    double c = dot(x, y) / (nx * ny);
    Vec g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        g[i] = y[i] / (nx * ny) - c * x[i] / (nx * nx);
    return g;
}

inline void axpy(double alpha, const Vec& x, Vec& y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline Vec scaled(const Vec& x, double alpha) {
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = alpha * x[i];
    return out;
}

inline Vec vsum(const Vec& x, const Vec& y) {
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
    return out;
}

inline Vec mean_of(const std::vector<Vec>& vs) {
    if (vs.empty()) throw PreconditionError("mean_of: empty set");
    Vec m(vs[0].size(), 0.0);
    for (const Vec& v : vs) {
        check_dim(v, m.size(), "mean_of element");
        axpy(1.0, v, m);
    }
    for (double& x : m) x /= static_cast<double>(vs.size());
    return m;
}

inline Vec matvec(const Mat& m, const Vec& x) {
    if (x.size() != m.cols)
        throw InputError("matvec: dim mismatch, matrix cols " + std::to_string(m.cols) +
                         " vs vector " + std::to_string(x.size()));
    Vec y(m.rows, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        double s = 0.0;
        const double* row = &m.a[r * m.cols];
        for (std::size_t c = 0; c < m.cols; ++c) s += row[c] * x[c];
        y[r] = s;
    }
    return y;
}

// y = m^T x
inline Vec matvec_t(const Mat& m, const Vec& x) {
    if (x.size() != m.rows) throw InputError("matvec_t: dim mismatch");
    Vec y(m.cols, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double* row = &m.a[r * m.cols];
        for (std::size_t c = 0; c < m.cols; ++c) y[c] += row[c] * x[r];
    }
    return y;
}

// m += alpha * x y^T
inline void add_outer(Mat& m, double alpha, const Vec& x, const Vec& y) {
    if (x.size() != m.rows || y.size() != m.cols)
        throw InputError("add_outer: dim mismatch");
    for (std::size_t r = 0; r < m.rows; ++r) {
        double* row = &m.a[r * m.cols];
        double ax = alpha * x[r];
        for (std::size_t c = 0; c < m.cols; ++c) row[c] += ax * y[c];
    }
}

inline bool all_finite(const Vec& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace palavra
