#pragma once

#include "csd/model.hpp"

#include <random>

namespace csd::testing {

// Milk, bacon, pasta over breakfast, dinner and two weekly-shop baskets.
inline Matrix toy_baskets() {
    Matrix a(3, 4);
    a << 2, 0, 1, 2,
         2, 2, 2, 4,
         0, 2, 1, 2;
    return a;
}

inline Matrix reference_m_inverse() {
    Matrix m(3, 3);
    m << 1.140, -0.107, -0.370,
        -0.107, 1.030, -0.107,
        -0.370, -0.107, 1.140;
    return m;
}

inline Matrix reference_sigma() {
    Matrix s(3, 3);
    s << 0.884, 0.257, -0.627,
         0.257, 0.514, 0.257,
        -0.627, 0.257, 0.884;
    return s;
}

// 0.1 * ones + 0.9 * I
inline Matrix equicorrelated(Index k) {
    return 0.1 * Matrix::Ones(k, k) + 0.9 * Matrix::Identity(k, k);
}

inline Matrix random_pd(std::mt19937_64& rng, Index k) {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix b(k, k);
    for (Index i = 0; i < k; ++i)
        for (Index j = 0; j < k; ++j) b(i, j) = n(rng);
    Matrix m = b * b.transpose() / static_cast<double>(k) + 0.5 * Matrix::Identity(k, k);
    return 0.5 * (m + m.transpose());
}

// Nonnegative integer matrix without zero rows or columns. Duplicates are
// not excluded; use only where ConsiderationSet is not constructed.
inline Matrix random_nonneg(std::mt19937_64& rng, Index rows, Index cols, double zero_share = 0.5) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> v(1, 3);
    Matrix a = Matrix::Zero(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j)
            if (u(rng) >= zero_share) a(i, j) = v(rng);
    for (Index i = 0; i < rows; ++i)
        if (a.row(i).sum() == 0.0) a(i, static_cast<Index>(u(rng) * cols) % cols) = 1.0;
    for (Index j = 0; j < cols; ++j)
        if (a.col(j).sum() == 0.0) a(static_cast<Index>(u(rng) * rows) % rows, j) = 1.0;
    return a;
}

inline Vector random_uniform(std::mt19937_64& rng, Index n, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    Vector v(n);
    for (Index i = 0; i < n; ++i) v(i) = u(rng);
    return v;
}

inline double max_abs(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace csd::testing
