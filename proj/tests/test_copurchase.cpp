#include "doctest.h"

#include "csd/copurchase.hpp"
#include "csd/errors.hpp"
#include "support.hpp"

#include <cmath>

using namespace csd;
using namespace csd::testing;
using namespace csd::copurchase;

namespace {

TransactionLog toy_log() {
    return TransactionLog::from_dense(toy_baskets(), {"milk", "bacon", "pasta"}, {"breakfast", "dinner", "weekly1", "weekly2"});
}

// Poisson CDF by direct summation of the pmf.
double poisson_cdf_sum(long k, double mean) {
    double term = std::exp(-mean), total = 0.0;
    for (long i = 0; i <= k; ++i) {
        total += term;
        term *= mean / static_cast<double>(i + 1);
    }
    return total;
}

// Entrywise evaluation of the complement cosine from its definition.
Matrix cosine_oracle(const Matrix& s) {
    const Index k = s.rows(), t = s.cols();
    Matrix xi = Matrix::Zero(k, k);
    Vector dp = s.rowwise().sum(), dt = s.colwise().sum().transpose();
    for (Index a = 0; a < k; ++a)
        for (Index b = 0; b < k; ++b)
            for (Index i = 0; i < t; ++i) xi(a, b) += s(a, i) * s(b, i) / (dp(a) * dt(i) * dp(b));
    Matrix out(k, k);
    for (Index a = 0; a < k; ++a)
        for (Index b = 0; b < k; ++b) out(a, b) = xi(a, b) / std::sqrt(xi(a, a) * xi(b, b));
    return out;
}

double mu_oracle(const Matrix& s, Index a, Index b) {
    const Index t = s.cols(), k = s.rows();
    double sum_d = 0.0, sum_d2 = 0.0;
    for (Index i = 0; i < t; ++i) {
        const double d = s.col(i).sum();
        sum_d += d;
        sum_d2 += d * d;
    }
    const double num = sum_d2 / t - sum_d / t;
    return s.row(a).sum() * s.row(b).sum() * num / (sum_d * sum_d / static_cast<double>(k));
}

Matrix random_incidence(std::mt19937_64& rng, Index k, Index t, double density) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix s = Matrix::Zero(k, t);
    for (Index i = 0; i < k; ++i)
        for (Index j = 0; j < t; ++j)
            if (u(rng) < density) s(i, j) = 1.0 + std::floor(3.0 * u(rng));
    for (Index i = 0; i < k; ++i) s(i, static_cast<Index>(rng() % static_cast<unsigned long>(t))) += 1.0;
    for (Index j = 0; j < t; ++j) s(static_cast<Index>(rng() % static_cast<unsigned long>(k)), j) += 1.0;
    return s;
}

void check_proxy_shape(const ProxyMatrices& p) {
    for (const Matrix* m : {&p.w_c, &p.w_s, &p.a_c, &p.a_l}) {
        CHECK(max_abs(*m - m->transpose()) <= 1e-12);
        CHECK(m->diagonal().isZero());
        CHECK(m->minCoeff() >= 0.0);
        CHECK(m->maxCoeff() <= 1.0 + 1e-12);
    }
    CHECK(p.cos_c.minCoeff() >= 0.0);
    CHECK(p.cos_c.maxCoeff() <= 1.0 + 1e-12);
}

}  // namespace

TEST_CASE("degrees of the toy incidence") {
    const Degrees d = degree_diagonals(toy_log());
    CHECK(d.products == Vector(Eigen::Vector3d(3, 4, 3)));
    CHECK(d.transactions == Vector(Eigen::Vector4d(2, 2, 3, 3)));
    CHECK(d.products.sum() == d.transactions.sum());
}

TEST_CASE("degrees of trivial logs") {
    const Degrees one = degree_diagonals(TransactionLog::from_dense(Matrix::Ones(4, 1)));
    CHECK(one.products == Vector::Ones(4));
    CHECK(one.transactions == Vector::Constant(1, 4.0));
    const Degrees id = degree_diagonals(TransactionLog::from_dense(Matrix::Identity(3, 3)));
    CHECK(id.products == Vector::Ones(3));
    CHECK(id.transactions == Vector::Ones(3));
}

TEST_CASE("log validation") {
    Matrix s = Matrix::Identity(3, 3);
    s(2, 2) = 0.0;
    CHECK_THROWS_AS(TransactionLog::from_dense(s), InvalidInputError);
    CHECK_THROWS_AS(TransactionLog::from_dense(Matrix::Ones(1, 3)), InvalidInputError);
    const auto log = TransactionLog::from_entries({{"a", "t1", 2.0}, {"b", "t1", 1.0}, {"a", "t2", 1.0}, {"a", "t1", 1.0}});
    CHECK(log.products() == 2);
    CHECK(log.transactions() == 2);
    CHECK(log.quantities().coeff(0, 0) == 3.0);
    CHECK(log.s().coeff(0, 0) == 1.0);
}

TEST_CASE("complement cosine") {
    Matrix s(3, 4);
    s << 1, 1, 0, 0,
         1, 1, 0, 0,
         0, 0, 1, 1;
    const Matrix c = complement_cosine(TransactionLog::from_dense(s));
    CHECK(c(0, 1) == doctest::Approx(1.0));
    CHECK(c(0, 2) == 0.0);
    CHECK(c.diagonal() == Vector::Ones(3));

    const Matrix toy = complement_cosine(toy_log());
    CHECK(max_abs(toy - cosine_oracle((toy_baskets().array() > 0).cast<double>())) <= 1e-12);
}

TEST_CASE("BiCM expectation") {
    const Matrix mu = bicm_expected(toy_log());
    CHECK(mu(0, 1) == doctest::Approx(1.44).epsilon(1e-12));
    CHECK(mu(1, 0) == mu(0, 1));
    CHECK(max_abs(bicm_expected(TransactionLog::from_dense(Matrix::Identity(3, 3)))) == 0.0);

    // Duplicating the log doubles every product degree and the edge total;
    // the closed form is invariant to that.
    const Matrix bin = (toy_baskets().array() > 0).cast<double>();
    Matrix twice(3, 8);
    twice << bin, bin;
    const Matrix mu2 = bicm_expected(TransactionLog::from_dense(twice));
    for (Index a = 0; a < 3; ++a)
        for (Index b = 0; b < 3; ++b) CHECK(mu2(a, b) == doctest::Approx(mu_oracle(twice, a, b)).epsilon(1e-12));
    CHECK(mu2(0, 1) == doctest::Approx(1.44).epsilon(1e-12));

    // Transaction order does not matter.
    Matrix shuffled(3, 4);
    shuffled << bin.col(3), bin.col(0), bin.col(2), bin.col(1);
    CHECK(max_abs(bicm_expected(TransactionLog::from_dense(shuffled)) - mu) <= 1e-12);
}

TEST_CASE("Poisson CDF against direct summation") {
    for (double mean : {0.3, 1.0, 5.0, 17.5}) {
        for (long k : {0L, 1L, 3L, 10L, 25L}) {
            CHECK(poisson_cdf(k, mean) == doctest::Approx(poisson_cdf_sum(k, mean)).epsilon(1e-12));
            if (k > 0) CHECK(poisson_upper_tail(k, mean) == doctest::Approx(1.0 - poisson_cdf_sum(k - 1, mean)).epsilon(1e-9));
        }
    }
    CHECK(poisson_cdf(-1, 2.0) == 0.0);
    CHECK(poisson_upper_tail(0, 2.0) == 1.0);
}

TEST_CASE("significance masks on hand cases") {
    Matrix counts = Matrix::Zero(2, 2), mu = Matrix::Zero(2, 2);
    counts(0, 1) = counts(1, 0) = 15.0;
    mu(0, 1) = mu(1, 0) = 5.0;
    const double tail = poisson_upper_tail(15, 5.0);
    CHECK(tail == doctest::Approx(1.0 - poisson_cdf_sum(14, 5.0)).epsilon(1e-9));
    CHECK(tail == doctest::Approx(1.4e-4).epsilon(0.1));
    Masks m = masks_from_counts(counts, mu, 0.01, 0.01);
    CHECK(m.a_c(0, 1) == 1.0);
    CHECK(m.a_l(0, 1) == 0.0);

    counts.setZero();
    m = masks_from_counts(counts, mu, 0.01, 0.01);
    CHECK(m.a_c(0, 1) == 0.0);
    CHECK(poisson_cdf(0, 5.0) == doctest::Approx(std::exp(-5.0)));
    CHECK(m.a_l(0, 1) == 1.0);
    CHECK(m.a_l(1, 0) == 1.0);

    // mu = 0 is never significant.
    mu.setZero();
    counts(0, 1) = counts(1, 0) = 9.0;
    m = masks_from_counts(counts, mu, 0.5, 0.5);
    CHECK(m.a_c.isZero());
    CHECK(m.a_l.isZero());
    CHECK_THROWS_AS(masks_from_counts(counts, mu, 0.0, 0.5), InvalidInputError);
}

TEST_CASE("substitute measure") {
    const TransactionLog log = toy_log();
    const Matrix cos_c = complement_cosine(log);
    Masks none{Matrix::Zero(3, 3), Matrix::Ones(3, 3) - Matrix::Identity(3, 3)};
    CHECK(substitute_measure(log, none, cos_c).isZero());

    // Goods 0 and 1 have identical complement rows: the pair reaches the
    // self-similarity of either good, the Cauchy-Schwarz ceiling.
    Matrix c(3, 3);
    c << 0.5, 0.5, 0.8,
         0.5, 0.5, 0.8,
         0.8, 0.8, 1.0;
    const Matrix cs = second_order_cosine(c);
    CHECK(cs(0, 1) == doctest::Approx(cs(0, 0)).epsilon(1e-14));
    CHECK(cs(0, 1) == doctest::Approx(cs(1, 1)).epsilon(1e-14));
}

TEST_CASE("substitute measure on a 5-product log matches the dense formula") {
    Matrix s(5, 10);
    s << 1, 1, 1, 0, 0, 1, 0, 1, 0, 0,
         1, 1, 0, 1, 0, 1, 0, 0, 1, 0,
         0, 0, 1, 1, 1, 0, 1, 0, 0, 1,
         0, 0, 0, 0, 1, 0, 1, 1, 1, 1,
         1, 0, 0, 0, 0, 0, 0, 0, 0, 1;
    const TransactionLog log = TransactionLog::from_dense(s);
    const Matrix cos_c = cosine_oracle(s);
    Masks masks{Matrix::Zero(5, 5), Matrix::Zero(5, 5)};
    masks.a_c(0, 1) = masks.a_c(1, 0) = 1;
    masks.a_c(1, 2) = masks.a_c(2, 1) = 1;
    masks.a_c(3, 4) = masks.a_c(4, 3) = 1;
    masks.a_l(0, 2) = masks.a_l(2, 0) = 1;
    masks.a_l(1, 3) = masks.a_l(3, 1) = 1;
    masks.a_l(2, 4) = masks.a_l(4, 2) = 1;

    Matrix oracle = Matrix::Zero(5, 5);
    for (Index a = 0; a < 5; ++a)
        for (Index b = 0; b < 5; ++b) {
            if (a == b) continue;
            double shared = 0.0, num = 0.0, ra = 0.0, rb = 0.0;
            for (Index k = 0; k < 5; ++k) {
                shared += masks.a_c(k, a) * masks.a_c(k, b);
                num += cos_c(a, k) * cos_c(b, k);
                ra += cos_c(a, k);
                rb += cos_c(b, k);
            }
            if (shared > 0 && masks.a_l(a, b) == 1) oracle(a, b) = num / std::sqrt(ra * rb);
        }
    const Matrix w = substitute_measure(log, masks, complement_cosine(log));
    CHECK(max_abs(w - oracle) <= 1e-12);
    CHECK(w(0, 2) > 0.0);  // share complement 1
}

TEST_CASE("proxy pipeline composition and invariants") {
    const ProxyMatrices p = build_proxy(toy_log());
    check_proxy_shape(p);
    CHECK(max_abs(p.mu - bicm_expected(toy_log())) == 0.0);
    CHECK(max_abs(p.cos_c - complement_cosine(toy_log())) == 0.0);
    const Masks m = significance_masks(toy_log(), 0.01, 0.01);
    CHECK(p.a_c == m.a_c);
    CHECK(p.a_l == m.a_l);

    // Nothing co-occurs: every transaction is a singleton.
    const ProxyMatrices empty = build_proxy(TransactionLog::from_dense(Matrix::Identity(4, 4)));
    CHECK(empty.w_c.isZero());
    CHECK(empty.w_s.isZero());
}

TEST_CASE("relabelling products permutes every output") {
    std::mt19937_64 rng(19);
    const Matrix s = random_incidence(rng, 12, 80, 0.15);
    const TransactionLog log = TransactionLog::from_dense(s);
    const std::vector<Index> perm{3, 7, 0, 11, 5, 1, 9, 2, 10, 4, 8, 6};
    const ProxyMatrices base = build_proxy(log, 0.05, 0.05);
    const ProxyMatrices moved = build_proxy(log.permute_products(perm), 0.05, 0.05);
    for (Index a = 0; a < 12; ++a)
        for (Index b = 0; b < 12; ++b) {
            CHECK(moved.w_c(a, b) == doctest::Approx(base.w_c(perm[a], perm[b])).epsilon(1e-12));
            CHECK(moved.w_s(a, b) == doctest::Approx(base.w_s(perm[a], perm[b])).epsilon(1e-12));
            CHECK(moved.mu(a, b) == doctest::Approx(base.mu(perm[a], perm[b])).epsilon(1e-12));
        }
}

TEST_CASE("sparse and dense paths agree on 50 x 200 logs") {
    std::mt19937_64 rng(50200);
    int flagged = 0;
    for (int rep = 0; rep < 5; ++rep) {
        const TransactionLog log = TransactionLog::from_dense(random_incidence(rng, 50, 200, 0.08));
        const ProxyMatrices sp = build_proxy(log, 0.05, 0.05, Path::Sparse);
        const ProxyMatrices de = build_proxy(log, 0.05, 0.05, Path::Dense);
        CHECK(max_abs(sp.cos_c - de.cos_c) <= 1e-10);
        CHECK(max_abs(sp.mu - de.mu) <= 1e-10);
        CHECK(max_abs(sp.w_c - de.w_c) <= 1e-10);
        CHECK(max_abs(sp.w_s - de.w_s) <= 1e-10);
        check_proxy_shape(sp);
        flagged += static_cast<int>(sp.a_c.sum() + sp.a_l.sum());
    }
    CHECK(flagged > 0);
}

TEST_CASE("row normalization") {
    Matrix w(2, 2);
    w << 0, 2, 0, 0;
    const Matrix r = row_normalize(w);
    CHECK(r(0, 1) == 1.0);
    CHECK(r.row(1).isZero());
}
