#include "doctest.h"

#include "csd/errors.hpp"
#include "csd/linalg.hpp"
#include "support.hpp"

#include <cmath>
#include <limits>

using namespace csd;
using namespace csd::testing;

namespace {

// Gaussian elimination with partial pivoting; independent of any SVD.
Index row_reduce_rank(Matrix a, double tol = 1e-9) {
    Index r = 0;
    for (Index c = 0; c < a.cols() && r < a.rows(); ++c) {
        Index piv = r;
        for (Index i = r + 1; i < a.rows(); ++i)
            if (std::abs(a(i, c)) > std::abs(a(piv, c))) piv = i;
        if (std::abs(a(piv, c)) <= tol) continue;
        a.row(r).swap(a.row(piv));
        for (Index i = r + 1; i < a.rows(); ++i) a.row(i) -= (a(i, c) / a(r, c)) * a.row(r);
        ++r;
    }
    return r;
}

void check_penrose(const Matrix& m, const Matrix& x) {
    const double s = std::max(1.0, max_abs(m)) * std::max(1.0, max_abs(x));
    CHECK(max_abs(m * x * m - m) <= 1e-8 * s * std::max(1.0, max_abs(m)));
    CHECK(max_abs(x * m * x - x) <= 1e-8 * s * std::max(1.0, max_abs(x)));
    CHECK(max_abs((m * x).transpose() - m * x) <= 1e-8 * s);
    CHECK(max_abs((x * m).transpose() - x * m) <= 1e-8 * s);
}

// Exhaustive NNLS: least squares on every support, keep the best feasible one.
double brute_force_nnls_objective(const Matrix& e, const Vector& f, Vector* fitted) {
    const Index n = e.cols();
    double best = std::numeric_limits<double>::infinity();
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
        std::vector<Index> cols;
        for (Index j = 0; j < n; ++j)
            if (mask & (1u << j)) cols.push_back(j);
        Vector fit = Vector::Zero(e.rows());
        if (!cols.empty()) {
            Matrix sub(e.rows(), static_cast<Index>(cols.size()));
            for (std::size_t i = 0; i < cols.size(); ++i) sub.col(static_cast<Index>(i)) = e.col(cols[i]);
            const Vector s = sub.completeOrthogonalDecomposition().solve(f);
            if ((s.array() < -1e-12).any()) continue;
            fit = sub * s;
        }
        const double obj = (fit - f).squaredNorm();
        if (obj < best) {
            best = obj;
            *fitted = fit;
        }
    }
    return best;
}

}  // namespace

TEST_CASE("pseudoinverse of identity and zero") {
    const auto id = linalg::pseudoinverse(Matrix::Identity(3, 3));
    CHECK(id.rank == 3);
    CHECK(max_abs(id.pinv - Matrix::Identity(3, 3)) < 1e-15);
    CHECK(id.nullspace_basis.cols() == 0);

    const auto zero = linalg::pseudoinverse(Matrix::Zero(2, 2));
    CHECK(zero.rank == 0);
    CHECK(max_abs(zero.pinv) == 0.0);
    CHECK(zero.nullspace_basis.cols() == 2);
}

TEST_CASE("pseudoinverse rejects bad input") {
    Matrix bad = Matrix::Identity(2, 2);
    bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(linalg::pseudoinverse(bad), InvalidInputError);
    CHECK_THROWS_AS(linalg::pseudoinverse(Matrix::Identity(2, 2), 0.0), InvalidInputError);
    CHECK_THROWS_AS(linalg::pseudoinverse(Matrix::Identity(2, 2), 1.0), InvalidInputError);
}

TEST_CASE("gram matrix of the toy baskets has the row-reduction rank") {
    const Matrix a = toy_baskets();
    const Index oracle = row_reduce_rank(a);
    CHECK(oracle == 2);
    const Matrix gram = a.transpose() * equicorrelated(3) * a;
    const auto res = linalg::pseudoinverse(gram);
    CHECK(res.rank == oracle);
    CHECK(res.nullspace_basis.cols() == 4 - oracle);
    CHECK(max_abs(gram * res.nullspace_basis) < 1e-10);
    check_penrose(gram, res.pinv);
}

TEST_CASE("projector with identity baskets returns the inverse") {
    std::mt19937_64 rng(11);
    const Matrix m = random_pd(rng, 4);
    const Matrix sigma = linalg::projector(ConsiderationSet::identity(4), InteractionMatrix(m));
    CHECK(max_abs(sigma - m.inverse()) < 1e-10);
}

TEST_CASE("projector reproduces the reference toy Sigma") {
    const InteractionMatrix m = InteractionMatrix::from_inverse(reference_m_inverse());
    const Matrix sigma = linalg::projector(ConsiderationSet(toy_baskets()), m);
    CHECK(max_abs(sigma - reference_sigma()) <= 5e-3);
    // Bacon turns from substitute to complement once choice is constrained.
    CHECK(reference_m_inverse()(0, 1) < 0.0);
    CHECK(sigma(0, 1) > 0.0);
    CHECK(sigma(1, 2) > 0.0);
}

TEST_CASE("projector with full-row-rank baskets collapses to the inverse") {
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 20; ++rep) {
        Matrix a = random_nonneg(rng, 3, 5, 0.3);
        if (row_reduce_rank(a) < 3) continue;
        const Matrix m = random_pd(rng, 3);
        CHECK(max_abs(linalg::projector(a, m) - m.inverse()) < 1e-8);
    }
}

TEST_CASE("projector rejects a non-PD interaction matrix") {
    Matrix m = Matrix::Identity(2, 2);
    m(1, 1) = -1.0;
    CHECK_THROWS_AS(linalg::projector(Matrix::Identity(2, 2), m), ModelAssumptionError);
    CHECK_THROWS_AS(InteractionMatrix{m}, ModelAssumptionError);
}

TEST_CASE("structural identities on random instances") {
    std::mt19937_64 rng(2024);
    for (int rep = 0; rep < 200; ++rep) {
        std::uniform_int_distribution<int> kd(2, 7), jd(1, 9);
        const Index k = kd(rng), j = jd(rng);
        const Matrix a = random_nonneg(rng, k, j);
        const Matrix m = random_pd(rng, k);
        const Matrix minv = m.inverse();

        const Matrix gram = a.transpose() * m * a;
        CHECK(linalg::min_eigenvalue(0.5 * (gram + gram.transpose())) >= -1e-10 * std::max(1.0, max_abs(gram)));

        const auto pr = linalg::pseudoinverse(gram);
        check_penrose(gram, pr.pinv);
        CHECK(pr.rank + pr.nullspace_basis.cols() == gram.cols());

        const Matrix sigma = linalg::projector(a, m);
        CHECK(max_abs(sigma - sigma.transpose()) <= 1e-10);
        CHECK(linalg::min_eigenvalue(sigma) >= -1e-10);

        const bool full_row_rank = row_reduce_rank(a) == k;
        if (full_row_rank) {
            const Matrix dual = minv * a * linalg::pinv(a.transpose() * minv * a) * a.transpose() * minv;
            CHECK(max_abs(sigma - dual) <= 1e-8);
            CHECK(max_abs(sigma - minv) <= 1e-8);
        }

        for (Index i = 0; i < k; ++i) CHECK(sigma(i, i) <= minv(i, i) + 1e-10);
    }
}

TEST_CASE("dual-metric projector differs from Sigma when rows are dependent") {
    // Pinned counterexample: the M^-1-metric form spans col(M^-1 A), not col(A).
    const Matrix a = toy_baskets();
    const Matrix m = equicorrelated(3);
    const Matrix minv = m.inverse();
    const Matrix sigma = linalg::projector(a, m);
    const Matrix dual = minv * a * linalg::pinv(a.transpose() * minv * a) * a.transpose() * minv;
    CHECK(max_abs(sigma - dual) == doctest::Approx(0.0899470899).epsilon(1e-6));
    // Sigma M is the M-orthogonal projector onto col(A).
    const Matrix proj = sigma * m;
    CHECK(max_abs(proj * proj - proj) < 1e-10);
    CHECK(max_abs(proj * a - a) < 1e-10);
}

TEST_CASE("nnls trivial cases") {
    Matrix design(3, 2);
    design << 1, 0, 1, 1, 0, 2;
    const Vector target = design * Vector(Eigen::Vector2d(1.0, 2.0));
    const auto sol = linalg::nnls(design, target);
    CHECK(sol.residual_norm <= 1e-10);
    CHECK((sol.z - Vector(Eigen::Vector2d(1.0, 2.0))).norm() < 1e-10);

    const auto clamp = linalg::nnls(Matrix::Identity(2, 2), Vector(Eigen::Vector2d(1.0, -1.0)),
                                    Matrix::Identity(2, 2));
    CHECK(clamp.z(0) == doctest::Approx(1.0));
    CHECK(clamp.z(1) == 0.0);
    CHECK(clamp.residual_norm == doctest::Approx(1.0));
    CHECK(clamp.active_set == std::vector<Index>{1});
}

TEST_CASE("nnls matches exhaustive support enumeration") {
    std::mt19937_64 rng(77);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int rep = 0; rep < 30; ++rep) {
        Matrix e(5, 8);
        for (Index i = 0; i < 5; ++i)
            for (Index j = 0; j < 8; ++j) e(i, j) = n(rng);
        Vector f(5);
        for (Index i = 0; i < 5; ++i) f(i) = n(rng);
        Vector oracle_fit;
        const double oracle = brute_force_nnls_objective(e, f, &oracle_fit);
        const auto sol = linalg::nnls(e, f);
        CHECK((sol.z.array() >= 0.0).all());
        CHECK(sol.residual_norm * sol.residual_norm == doctest::Approx(oracle).epsilon(1e-9));
        CHECK((e * sol.z - oracle_fit).norm() < 1e-8);
    }
}

TEST_CASE("nnls KKT conditions, plain and weighted") {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int rep = 0; rep < 200; ++rep) {
        std::uniform_int_distribution<int> rd(2, 8), cd(1, 10);
        const Index rows = rd(rng), cols = cd(rng);
        const Matrix e = random_nonneg(rng, rows, cols);
        Vector f(rows);
        for (Index i = 0; i < rows; ++i) f(i) = n(rng);
        const Matrix w = random_pd(rng, rows);
        for (int weighted = 0; weighted < 2; ++weighted) {
            const auto sol = weighted ? linalg::nnls(e, f, w) : linalg::nnls(e, f);
            CHECK((sol.z.array() >= 0.0).all());
            // gradient of 1/2 ||Ez - f||^2_W is E'W(Ez - f); KKT: >= 0 at zero, 0 elsewhere
            for (Index j = 0; j < cols; ++j) {
                if (sol.z(j) == 0.0)
                    CHECK(sol.gradient(j) >= -1e-8);
                else
                    CHECK(std::abs(sol.gradient(j)) <= 1e-8);
            }
        }
    }
}

TEST_CASE("nnls is deterministic and honours the iteration cap") {
    std::mt19937_64 rng(3);
    const Matrix e = random_nonneg(rng, 6, 9);
    const Vector f = random_uniform(rng, 6, -1.0, 1.0);
    const auto a = linalg::nnls(e, f);
    const auto b = linalg::nnls(e, f);
    CHECK(a.z == b.z);
    linalg::NnlsOptions opts;
    opts.max_iterations = 1;
    Vector far(6);
    far << 1, 2, 3, 4, 5, 6;
    bool threw = false;
    try {
        linalg::nnls(Matrix::Identity(6, 6), far, opts);
    } catch (const ConvergenceError& err) {
        threw = true;
        CHECK(err.best_iterate().size() == 6);
    }
    CHECK(threw);
}

TEST_CASE("weighted nnls accepts singular PSD weights and rejects indefinite ones") {
    Matrix w = Matrix::Zero(2, 2);
    w(0, 0) = 1.0;
    const auto sol = linalg::nnls(Matrix::Identity(2, 2), Vector(Eigen::Vector2d(2.0, 3.0)), w);
    CHECK(sol.z(0) == doctest::Approx(2.0));
    Matrix bad = Matrix::Identity(2, 2);
    bad(1, 1) = -1.0;
    CHECK_THROWS_AS(linalg::nnls(Matrix::Identity(2, 2), Vector::Ones(2), bad), InvalidInputError);
}

TEST_CASE("cone coverage") {
    const auto all = linalg::cone_coverage(ConsiderationSet::identity(3));
    CHECK(all == std::vector<bool>{true, true, true});
    CHECK_FALSE(linalg::lf_binds(ConsiderationSet::identity(3)));

    const auto toy = linalg::cone_coverage(ConsiderationSet(toy_baskets()));
    CHECK(toy == std::vector<bool>{false, false, false});
    CHECK(linalg::lf_binds(ConsiderationSet(toy_baskets())));

    Matrix tri(2, 2);
    tri << 1, 1, 0, 1;
    CHECK(linalg::cone_coverage(tri) == std::vector<bool>{true, false});
}
