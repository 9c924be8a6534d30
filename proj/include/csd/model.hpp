#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace csd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Nonnegative goods x baskets matrix. Each column is one basket that the
/// representative consumer considers; entry (k, j) is the units of good k in
/// basket j.
///
/// Construction validates: finite, nonnegative, no zero row or column, no
/// duplicate rows or columns.
class ConsiderationSet {
public:
    explicit ConsiderationSet(Matrix a);
    ConsiderationSet(Matrix a, std::vector<std::string> good_labels,
                     std::vector<std::string> basket_labels);

    /// K x K identity: every good is available as a singleton basket.
    static ConsiderationSet identity(Index goods);

    const Matrix& matrix() const noexcept { return a_; }
    Index goods() const noexcept { return a_.rows(); }
    Index baskets() const noexcept { return a_.cols(); }
    const std::vector<std::string>& good_labels() const noexcept { return good_labels_; }
    const std::vector<std::string>& basket_labels() const noexcept { return basket_labels_; }

    /// Subset of baskets, in the given order. Goods left without any basket
    /// make the result invalid, so callers should keep rows covered.
    ConsiderationSet select_baskets(const std::vector<Index>& columns) const;

private:
    Matrix a_;
    std::vector<std::string> good_labels_;
    std::vector<std::string> basket_labels_;
};

/// Symmetric positive-definite K x K matrix of utility interactions.
/// PD means smallest eigenvalue > 1e-10 * trace / K.
class InteractionMatrix {
public:
    explicit InteractionMatrix(Matrix m);

    /// Builds M from a given inverse (results are often reported as M^-1).
    static InteractionMatrix from_inverse(const Matrix& m_inv);

    const Matrix& matrix() const noexcept { return m_; }
    const Matrix& inverse() const noexcept { return inv_; }
    Index size() const noexcept { return m_.rows(); }
    double min_eigenvalue() const noexcept { return min_eig_; }

private:
    Matrix m_;
    Matrix inv_;
    double min_eig_ = 0.0;
};

/// Marginal utilities, price sensitivity and prices.
/// Invariants: delta > 0, phi < 0, prices >= 0, delta + phi * prices > 0.
struct DemandPrimitives {
    Vector delta;
    double phi;
    Vector prices;

    DemandPrimitives(Vector delta, double phi, Vector prices);

    /// delta + phi * p
    Vector net_utility() const { return delta + phi * prices; }
    Index size() const noexcept { return delta.size(); }
};

}  // namespace csd
