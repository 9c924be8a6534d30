#pragma once

#include "csd/model.hpp"

#include <Eigen/SparseCore>

#include <string>
#include <utility>
#include <vector>

namespace csd::copurchase {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Product x transaction incidence. `s` holds presence (0/1); `quantities`
/// keeps the raw amounts with the same sparsity.
class TransactionLog {
public:
    struct Entry {
        std::string product;
        std::string transaction;
        double quantity = 1.0;
    };

    /// Products and transactions are indexed in order of first appearance.
    /// Repeated (product, transaction) pairs accumulate quantity.
    static TransactionLog from_entries(const std::vector<Entry>& entries);

    /// Columns of a nonnegative dense matrix as transactions.
    static TransactionLog from_dense(const Matrix& quantities, std::vector<std::string> product_ids = {},
                                     std::vector<std::string> transaction_ids = {});

    const SparseMatrix& s() const noexcept { return s_; }
    const SparseMatrix& quantities() const noexcept { return q_; }
    const std::vector<std::string>& product_ids() const noexcept { return products_; }
    const std::vector<std::string>& transaction_ids() const noexcept { return transactions_; }
    Index products() const noexcept { return s_.rows(); }
    Index transactions() const noexcept { return s_.cols(); }

    /// Same log with product rows reordered: row r of the result is row perm[r].
    TransactionLog permute_products(const std::vector<Index>& perm) const;

private:
    TransactionLog(SparseMatrix q, std::vector<std::string> products, std::vector<std::string> transactions);

    SparseMatrix s_;
    SparseMatrix q_;
    std::vector<std::string> products_;
    std::vector<std::string> transactions_;
};

struct Degrees {
    Vector products;      // d_P, row sums of S
    Vector transactions;  // d_T, column sums of S
};

Degrees degree_diagonals(const TransactionLog& log);

/// Observed co-occurrence counts C = S S'.
Matrix cooccurrence(const TransactionLog& log);

/// Xi_ab / sqrt(Xi_aa Xi_bb) with Xi = D_P^-1 S D_T^-1 S' D_P^-1. Unit diagonal.
Matrix complement_cosine(const TransactionLog& log);

/// Expected co-occurrences under the bipartite configuration model:
/// mu_ab = d_a d_b (mean(d_t^2) - mean(d_t)) / ((1/K) (sum_t d_t)^2).
Matrix bicm_expected(const TransactionLog& log);

/// Poisson(mean) CDF at k; zero for k < 0.
double poisson_cdf(long k, double mean);

/// Upper tail P(X >= k) = 1 - F(k - 1).
double poisson_upper_tail(long k, double mean);

struct Masks {
    Matrix a_c;  // significantly more co-purchases than expected
    Matrix a_l;  // significantly fewer
};

/// a_c(a,b) = 1 iff 1 - F(c_ab - 1) < alpha_c; a_l(a,b) = 1 iff F(c_ab) < alpha_l.
/// Pairs with mu_ab = 0 are never flagged. Hollow and symmetric.
Masks significance_masks(const TransactionLog& log, double alpha_c, double alpha_l);
Masks masks_from_counts(const Matrix& counts, const Matrix& mu, double alpha_c, double alpha_l);

/// (C C')_ab / (sqrt(sum_k C_ak) sqrt(sum_k C_bk)) for C the complement cosine.
Matrix second_order_cosine(const Matrix& cos_c);

/// I{A_c'A_c > 0} o A_l o cos(theta_s), hollow.
Matrix substitute_measure(const TransactionLog& log, const Masks& masks, const Matrix& cos_c);

struct ProxyMatrices {
    Matrix w_c;
    Matrix w_s;
    Matrix a_c;
    Matrix a_l;
    Matrix mu;
    Matrix cos_c;  // before hollowing
    double alpha_c = 0.01;
    double alpha_l = 0.01;
};

enum class Path { Sparse, Dense };

/// w_c = A_c o cos(theta_c) and w_s as above, both hollow.
ProxyMatrices build_proxy(const TransactionLog& log, double alpha_c = 0.01, double alpha_l = 0.01,
                          Path path = Path::Sparse);

/// Rows rescaled to sum to one (zero rows stay zero).
Matrix row_normalize(const Matrix& w);

}  // namespace csd::copurchase
