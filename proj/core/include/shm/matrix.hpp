#pragma once

// Dense row-major matrix and small vector helpers. Everything in this
// project is H x H or smaller, so a plain contiguous buffer is all we need.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "shm/error.hpp"

namespace shm {

#ifdef SHM_REAL_FLOAT32
using real = float;
#else
using real = double;
#endif

using Vec = std::vector<real>;

class Matrix {
  public:
    Matrix() = default;
    Matrix(int rows, int cols, real fill = real(0))
        : rows_(rows), cols_(cols), a_(static_cast<std::size_t>(rows) * cols, fill) {}

    static Matrix ones(int rows, int cols) { return Matrix(rows, cols, real(1)); }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return a_.size(); }

    real& operator()(int i, int j) { return a_[static_cast<std::size_t>(i) * cols_ + j]; }
    real operator()(int i, int j) const { return a_[static_cast<std::size_t>(i) * cols_ + j]; }

    real* data() { return a_.data(); }
    const real* data() const { return a_.data(); }
    std::vector<real>& raw() { return a_; }
    const std::vector<real>& raw() const { return a_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool operator==(const Matrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && a_ == o.a_;
    }

  private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<real> a_;
};

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (!a.same_shape(b)) {
        throw DimError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                       std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                       std::to_string(b.cols()) + ")");
    }
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "hadamard");
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.raw()[i] = a.raw()[i] * b.raw()[i];
    return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add");
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.raw()[i] = a.raw()[i] + b.raw()[i];
    return out;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "sub");
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.raw()[i] = a.raw()[i] - b.raw()[i];
    return out;
}

inline Matrix scale(real s, const Matrix& a) {
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.raw()[i] = s * a.raw()[i];
    return out;
}

// u (len m) x v (len n) -> m x n
inline Matrix outer(const Vec& u, const Vec& v) {
    Matrix out(static_cast<int>(u.size()), static_cast<int>(v.size()));
    for (std::size_t i = 0; i < u.size(); ++i)
        for (std::size_t j = 0; j < v.size(); ++j)
            out(static_cast<int>(i), static_cast<int>(j)) = u[i] * v[j];
    return out;
}

inline Vec matvec(const Matrix& m, const Vec& x) {
    if (static_cast<std::size_t>(m.cols()) != x.size()) {
        throw DimError("matvec: " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                       " times vector of length " + std::to_string(x.size()));
    }
    Vec out(static_cast<std::size_t>(m.rows()), real(0));
    for (int i = 0; i < m.rows(); ++i) {
        real acc = 0;
        for (int j = 0; j < m.cols(); ++j) acc += m(i, j) * x[j];
        out[static_cast<std::size_t>(i)] = acc;
    }
    return out;
}

// m^T x, without materializing the transpose.
inline Vec matvec_transposed(const Matrix& m, const Vec& x) {
    if (static_cast<std::size_t>(m.rows()) != x.size()) {
        throw DimError("matvec_transposed: bad vector length " + std::to_string(x.size()));
    }
    Vec out(static_cast<std::size_t>(m.cols()), real(0));
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(j)] += m(i, j) * x[static_cast<std::size_t>(i)];
    return out;
}

inline bool all_finite(const Matrix& m) {
    for (real v : m.raw())
        if (!std::isfinite(v)) return false;
    return true;
}

inline bool all_finite(const Vec& v) {
    for (real x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline real max_abs_diff(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "max_abs_diff");
    real m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.raw()[i] - b.raw()[i]));
    return m;
}

// max over entries of |a-b| / max(1, |a|, |b|)
inline real max_rel_diff(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "max_rel_diff");
    real m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        real den = std::max(real(1), std::max(std::abs(a.raw()[i]), std::abs(b.raw()[i])));
        m = std::max(m, std::abs(a.raw()[i] - b.raw()[i]) / den);
    }
    return m;
}

}  // namespace shm
