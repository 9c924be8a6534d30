#include "csd/model.hpp"

#include "csd/errors.hpp"
#include "csd/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace csd {

namespace {

std::vector<std::string> default_labels(const char* prefix, Index n) {
    std::vector<std::string> out;
    out.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
    return out;
}

bool has_duplicate_columns(const Matrix& a) {
    std::vector<Index> order(static_cast<std::size_t>(a.cols()));
    std::iota(order.begin(), order.end(), Index{0});
    auto less = [&](Index x, Index y) {
        for (Index r = 0; r < a.rows(); ++r) {
            if (a(r, x) != a(r, y)) return a(r, x) < a(r, y);
        }
        return false;
    };
    std::sort(order.begin(), order.end(), less);
    for (std::size_t i = 1; i < order.size(); ++i) {
        if (!less(order[i - 1], order[i]) && !less(order[i], order[i - 1])) return true;
    }
    return false;
}

}  // namespace

ConsiderationSet::ConsiderationSet(Matrix a)
    : ConsiderationSet(a, default_labels("g", a.rows()), default_labels("b", a.cols())) {}

ConsiderationSet::ConsiderationSet(Matrix a, std::vector<std::string> good_labels,
                                   std::vector<std::string> basket_labels)
    : a_(std::move(a)), good_labels_(std::move(good_labels)), basket_labels_(std::move(basket_labels)) {
    if (a_.rows() == 0 || a_.cols() == 0) throw InvalidInputError("consideration set is empty");
    if (!a_.allFinite()) throw InvalidInputError("consideration set has non-finite entries");
    if ((a_.array() < 0.0).any()) throw InvalidInputError("consideration set has negative entries");
    if (static_cast<Index>(good_labels_.size()) != a_.rows() ||
        static_cast<Index>(basket_labels_.size()) != a_.cols())
        throw InvalidInputError("consideration set label count does not match dimensions");
    for (Index k = 0; k < a_.rows(); ++k)
        if ((a_.row(k).array() == 0.0).all())
            throw InvalidInputError("good " + good_labels_[k] + " appears in no basket");
    for (Index j = 0; j < a_.cols(); ++j)
        if ((a_.col(j).array() == 0.0).all())
            throw InvalidInputError("basket " + basket_labels_[j] + " is empty");
    if (has_duplicate_columns(a_)) throw InvalidInputError("consideration set has duplicate baskets");
    if (has_duplicate_columns(a_.transpose())) throw InvalidInputError("consideration set has duplicate goods");
}

ConsiderationSet ConsiderationSet::identity(Index goods) {
    return ConsiderationSet(Matrix::Identity(goods, goods));
}

ConsiderationSet ConsiderationSet::select_baskets(const std::vector<Index>& columns) const {
    Matrix sub(a_.rows(), static_cast<Index>(columns.size()));
    std::vector<std::string> labels;
    labels.reserve(columns.size());
    for (std::size_t c = 0; c < columns.size(); ++c) {
        sub.col(static_cast<Index>(c)) = a_.col(columns[c]);
        labels.push_back(basket_labels_[static_cast<std::size_t>(columns[c])]);
    }
    return ConsiderationSet(std::move(sub), good_labels_, std::move(labels));
}

InteractionMatrix::InteractionMatrix(Matrix m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols() || m_.rows() == 0)
        throw InvalidInputError("interaction matrix must be square and non-empty");
    if (!m_.allFinite()) throw InvalidInputError("interaction matrix has non-finite entries");
    if (!linalg::is_symmetric(m_)) throw ModelAssumptionError("interaction matrix is not symmetric");
    m_ = (0.5 * (m_ + m_.transpose())).eval();
    min_eig_ = linalg::min_eigenvalue(m_);
    const double floor = 1e-10 * m_.trace() / static_cast<double>(m_.rows());
    if (!(min_eig_ > floor) || m_.trace() <= 0.0)
        throw ModelAssumptionError("interaction matrix is not positive definite (min eigenvalue " +
                                   std::to_string(min_eig_) + ")");
    inv_ = m_.ldlt().solve(Matrix::Identity(m_.rows(), m_.cols()));
    inv_ = (0.5 * (inv_ + inv_.transpose())).eval();
}

InteractionMatrix InteractionMatrix::from_inverse(const Matrix& m_inv) {
    if (!m_inv.allFinite()) throw InvalidInputError("inverse interaction matrix has non-finite entries");
    Matrix sym = 0.5 * (m_inv + m_inv.transpose());
    return InteractionMatrix(sym.ldlt().solve(Matrix::Identity(sym.rows(), sym.cols())));
}

DemandPrimitives::DemandPrimitives(Vector d, double p, Vector pr)
    : delta(std::move(d)), phi(p), prices(std::move(pr)) {
    if (delta.size() != prices.size()) throw InvalidInputError("delta and prices differ in length");
    if (!delta.allFinite() || !prices.allFinite() || !std::isfinite(phi))
        throw InvalidInputError("demand primitives must be finite");
    if (!(phi < 0.0)) throw ModelAssumptionError("phi must be negative");
    if ((delta.array() <= 0.0).any()) throw ModelAssumptionError("delta must be strictly positive");
    if ((prices.array() < 0.0).any()) throw ModelAssumptionError("prices must be nonnegative");
    if (((delta + phi * prices).array() <= 0.0).any())
        throw ModelAssumptionError("initial marginal utilities delta + phi p must be positive");
}

}  // namespace csd
