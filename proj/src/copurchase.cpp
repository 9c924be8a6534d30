#include "csd/copurchase.hpp"

#include "csd/errors.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <unordered_map>

namespace csd::copurchase {

TransactionLog::TransactionLog(SparseMatrix q, std::vector<std::string> products, std::vector<std::string> transactions)
    : q_(std::move(q)), products_(std::move(products)), transactions_(std::move(transactions)) {
    q_.prune(0.0);
    q_.makeCompressed();
    if (q_.rows() < 2) throw InvalidInputError("transaction log needs at least two products");
    if (q_.cols() < 1) throw InvalidInputError("transaction log needs at least one transaction");
    for (int k = 0; k < q_.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(q_, k); it; ++it)
            if (!(it.value() > 0.0) || !std::isfinite(it.value()))
                throw InvalidInputError("transaction log quantities must be positive and finite");

    s_ = q_;
    for (int k = 0; k < s_.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(s_, k); it; ++it) it.valueRef() = 1.0;

    const Vector rows = s_ * Vector::Ones(s_.cols());
    const Vector cols = s_.transpose() * Vector::Ones(s_.rows());
    for (Index r = 0; r < rows.size(); ++r)
        if (rows(r) == 0.0) throw InvalidInputError("product " + products_[static_cast<std::size_t>(r)] + " has no transactions");
    for (Index c = 0; c < cols.size(); ++c)
        if (cols(c) == 0.0) throw InvalidInputError("transaction " + transactions_[static_cast<std::size_t>(c)] + " is empty");
}

TransactionLog TransactionLog::from_entries(const std::vector<Entry>& entries) {
    std::unordered_map<std::string, Index> pidx, tidx;
    std::vector<std::string> products, transactions;
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(entries.size());
    for (const Entry& e : entries) {
        auto p = pidx.try_emplace(e.product, static_cast<Index>(products.size()));
        if (p.second) products.push_back(e.product);
        auto t = tidx.try_emplace(e.transaction, static_cast<Index>(transactions.size()));
        if (t.second) transactions.push_back(e.transaction);
        trips.emplace_back(p.first->second, t.first->second, e.quantity);
    }
    SparseMatrix q(static_cast<Index>(products.size()), static_cast<Index>(transactions.size()));
    q.setFromTriplets(trips.begin(), trips.end());
    return TransactionLog(std::move(q), std::move(products), std::move(transactions));
}

TransactionLog TransactionLog::from_dense(const Matrix& quantities, std::vector<std::string> product_ids,
                                          std::vector<std::string> transaction_ids) {
    if ((quantities.array() < 0.0).any()) throw InvalidInputError("transaction log quantities must be nonnegative");
    if (product_ids.empty())
        for (Index r = 0; r < quantities.rows(); ++r) product_ids.push_back("p" + std::to_string(r));
    if (transaction_ids.empty())
        for (Index c = 0; c < quantities.cols(); ++c) transaction_ids.push_back("t" + std::to_string(c));
    if (static_cast<Index>(product_ids.size()) != quantities.rows() ||
        static_cast<Index>(transaction_ids.size()) != quantities.cols())
        throw InvalidInputError("transaction log label count does not match dimensions");
    return TransactionLog(quantities.sparseView(), std::move(product_ids), std::move(transaction_ids));
}

TransactionLog TransactionLog::permute_products(const std::vector<Index>& perm) const {
    if (static_cast<Index>(perm.size()) != products()) throw InvalidInputError("permutation has the wrong length");
    Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> p(static_cast<int>(products()));
    std::vector<std::string> labels(perm.size());
    for (std::size_t r = 0; r < perm.size(); ++r) {
        p.indices()(perm[r]) = static_cast<int>(r);
        labels[r] = products_[static_cast<std::size_t>(perm[r])];
    }
    SparseMatrix q = p * q_;
    return TransactionLog(std::move(q), std::move(labels), transactions_);
}

Degrees degree_diagonals(const TransactionLog& log) {
    Degrees d;
    d.products = log.s() * Vector::Ones(log.transactions());
    d.transactions = log.s().transpose() * Vector::Ones(log.products());
    return d;
}

Matrix cooccurrence(const TransactionLog& log) {
    const SparseMatrix c = log.s() * log.s().transpose();
    return Matrix(c);
}

namespace {

Matrix cosine_from_gram(const Matrix& xi) {
    const Vector root = xi.diagonal().cwiseMax(0.0).cwiseSqrt();
    Matrix out(xi.rows(), xi.cols());
    for (Index a = 0; a < xi.rows(); ++a)
        for (Index b = 0; b < xi.cols(); ++b) {
            const double den = root(a) * root(b);
            out(a, b) = den > 0.0 ? xi(a, b) / den : 0.0;
        }
    out = (0.5 * (out + out.transpose())).eval();
    out = out.cwiseMax(0.0).cwiseMin(1.0);
    out.diagonal().setOnes();
    return out;
}

Matrix complement_cosine_sparse(const TransactionLog& log) {
    const Degrees d = degree_diagonals(log);
    const SparseMatrix scaled = log.s() * d.transactions.cwiseInverse().asDiagonal();
    const SparseMatrix inner = scaled * log.s().transpose();
    const Vector dp_inv = d.products.cwiseInverse();
    const Matrix xi = dp_inv.asDiagonal() * Matrix(inner) * dp_inv.asDiagonal();
    return cosine_from_gram(xi);
}

Matrix complement_cosine_dense(const Matrix& s) {
    const Vector dp = s.rowwise().sum();
    const Vector dt = s.colwise().sum().transpose();
    const Matrix dp_inv = dp.cwiseInverse().asDiagonal();
    const Matrix dt_inv = dt.cwiseInverse().asDiagonal();
    const Matrix xi = dp_inv * s * dt_inv * s.transpose() * dp_inv;
    return cosine_from_gram(xi);
}

Matrix bicm_from_degrees(const Vector& dp, const Vector& dt) {
    const double t = static_cast<double>(dt.size());
    const double k = static_cast<double>(dp.size());
    const double total = dt.sum();
    const double num = dt.squaredNorm() / t - total / t;
    const double den = total * total / k;
    Matrix mu = (dp * dp.transpose()) * (num / den);
    return 0.5 * (mu + mu.transpose());
}

void hollow(Matrix& m) { m.diagonal().setZero(); }

Matrix second_order(const Matrix& cos_c);

Matrix substitute_from(const Masks& masks, const Matrix& cos_c) {
    const Index k = cos_c.rows();
    const Matrix shared = masks.a_c.transpose() * masks.a_c;
    const Matrix cos_s = second_order(cos_c);
    Matrix w = Matrix::Zero(k, k);
    for (Index a = 0; a < k; ++a)
        for (Index b = 0; b < k; ++b)
            if (a != b && shared(a, b) > 0.0 && masks.a_l(a, b) == 1.0) w(a, b) = cos_s(a, b);
    return w;
}

ProxyMatrices assemble(const Matrix& counts, const Matrix& mu, const Matrix& cos_c, double alpha_c, double alpha_l) {
    ProxyMatrices out;
    out.alpha_c = alpha_c;
    out.alpha_l = alpha_l;
    out.mu = mu;
    out.cos_c = cos_c;
    const Masks masks = masks_from_counts(counts, mu, alpha_c, alpha_l);
    out.a_c = masks.a_c;
    out.a_l = masks.a_l;
    out.w_c = masks.a_c.cwiseProduct(cos_c);
    hollow(out.w_c);
    out.w_s = substitute_from(masks, cos_c);
    return out;
}

Matrix second_order(const Matrix& cos_c) {
    const Vector root = cos_c.rowwise().sum().cwiseMax(0.0).cwiseSqrt();
    const Matrix g = cos_c * cos_c.transpose();
    Matrix out(g.rows(), g.cols());
    for (Index a = 0; a < g.rows(); ++a)
        for (Index b = 0; b < g.cols(); ++b) {
            const double den = root(a) * root(b);
            out(a, b) = den > 0.0 ? g(a, b) / den : 0.0;
        }
    return (0.5 * (out + out.transpose())).cwiseMax(0.0).cwiseMin(1.0);
}

}  // namespace

Matrix complement_cosine(const TransactionLog& log) { return complement_cosine_sparse(log); }

Matrix bicm_expected(const TransactionLog& log) {
    const Degrees d = degree_diagonals(log);
    return bicm_from_degrees(d.products, d.transactions);
}

double poisson_cdf(long k, double mean) {
    if (k < 0) return 0.0;
    if (mean <= 0.0) return 1.0;
    return boost::math::gamma_q(static_cast<double>(k) + 1.0, mean);
}

double poisson_upper_tail(long k, double mean) {
    if (k <= 0) return 1.0;
    if (mean <= 0.0) return 0.0;
    return boost::math::gamma_p(static_cast<double>(k), mean);
}

Masks masks_from_counts(const Matrix& counts, const Matrix& mu, double alpha_c, double alpha_l) {
    if (!(alpha_c > 0.0 && alpha_c < 1.0) || !(alpha_l > 0.0 && alpha_l < 1.0))
        throw InvalidInputError("significance levels must lie in (0, 1)");
    if (counts.rows() != mu.rows() || counts.cols() != mu.cols()) throw InvalidInputError("mask inputs differ in shape");
    const Index k = counts.rows();
    Masks m{Matrix::Zero(k, k), Matrix::Zero(k, k)};
    for (Index a = 0; a < k; ++a) {
        for (Index b = a + 1; b < k; ++b) {
            const double mean = mu(a, b);
            if (!(mean > 0.0)) continue;
            const long c = std::lround(counts(a, b));
            if (poisson_upper_tail(c, mean) < alpha_c) m.a_c(a, b) = m.a_c(b, a) = 1.0;
            if (poisson_cdf(c, mean) < alpha_l) m.a_l(a, b) = m.a_l(b, a) = 1.0;
        }
    }
    return m;
}

Masks significance_masks(const TransactionLog& log, double alpha_c, double alpha_l) {
    return masks_from_counts(cooccurrence(log), bicm_expected(log), alpha_c, alpha_l);
}

Matrix second_order_cosine(const Matrix& cos_c) { return second_order(cos_c); }

Matrix substitute_measure(const TransactionLog& log, const Masks& masks, const Matrix& cos_c) {
    const Index k = log.products();
    if (masks.a_c.rows() != k || masks.a_l.rows() != k || cos_c.rows() != k)
        throw InvalidInputError("substitute_measure: inputs do not match the log");
    return substitute_from(masks, cos_c);
}

ProxyMatrices build_proxy(const TransactionLog& log, double alpha_c, double alpha_l, Path path) {
    if (path == Path::Dense) {
        const Matrix s(log.s());
        const Vector dp = s.rowwise().sum();
        const Vector dt = s.colwise().sum().transpose();
        return assemble(s * s.transpose(), bicm_from_degrees(dp, dt), complement_cosine_dense(s), alpha_c, alpha_l);
    }
    return assemble(cooccurrence(log), bicm_expected(log), complement_cosine_sparse(log), alpha_c, alpha_l);
}

Matrix row_normalize(const Matrix& w) {
    Matrix out = w;
    for (Index r = 0; r < out.rows(); ++r) {
        const double s = out.row(r).sum();
        if (s != 0.0) out.row(r) /= s;
    }
    return out;
}

}  // namespace csd::copurchase
