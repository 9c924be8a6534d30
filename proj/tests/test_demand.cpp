#include "doctest.h"

#include "csd/demand.hpp"
#include "csd/errors.hpp"
#include "csd/linalg.hpp"
#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

using namespace csd;
using namespace csd::testing;
using demand::BindingMode;

namespace {

DemandPrimitives toy_primitives() {
    return DemandPrimitives(Vector::Constant(3, 2.0), -0.1, Vector::Ones(3));
}

double utility(const Matrix& a, const Matrix& m, const Vector& v, const Vector& z) {
    const Vector q = a * z;
    return q.dot(v) - 0.5 * q.dot(m * q);
}

// Coarse-to-fine lattice search over z >= 0, finishing at step 1e-3. Each
// level re-centres until the best point is the centre of its window.
Vector grid_maximize(const Matrix& a, const Matrix& m, const Vector& v, double upper) {
    const Index n = a.cols();
    Vector center = Vector::Constant(n, upper / 2.0);
    std::vector<double> steps{upper / 10.0};
    while (steps.back() / 4.0 > 1e-3) steps.push_back(steps.back() / 4.0);
    steps.push_back(1e-3);
    const int reach = 5;
    for (double step : steps) {
        for (int sweep = 0; sweep < 500; ++sweep) {
            Vector best = center;
            double best_u = utility(a, m, v, center);
            std::vector<int> idx(static_cast<std::size_t>(n), -reach);
            for (;;) {
                Vector z(n);
                bool ok = true;
                for (Index j = 0; j < n; ++j) {
                    z(j) = center(j) + step * idx[static_cast<std::size_t>(j)];
                    if (z(j) < -1e-12) ok = false;
                    z(j) = std::max(z(j), 0.0);
                }
                if (ok) {
                    const double u = utility(a, m, v, z);
                    if (u > best_u + 1e-15) {
                        best_u = u;
                        best = z;
                    }
                }
                Index j = 0;
                while (j < n && ++idx[static_cast<std::size_t>(j)] > reach) idx[static_cast<std::size_t>(j++)] = -reach;
                if (j == n) break;
            }
            if (best == center) break;
            center = best;
        }
    }
    return center;
}

}  // namespace

TEST_CASE("unconstrained demand on the worked example") {
    const auto r = demand::demand_unconstrained(InteractionMatrix(equicorrelated(3)), toy_primitives());
    for (Index k = 0; k < 3; ++k) CHECK(std::abs(r.q(k) - 1.58) <= 5e-3);
    CHECK(r.q(0) == doctest::Approx(1.9 / 1.2));
    CHECK(r.z.size() == 0);
}

TEST_CASE("unconstrained demand: identity M and random linear solve") {
    const Vector p = Vector::Constant(3, 2.0);
    const double phi = -0.5, c = 0.7;
    const DemandPrimitives prim(-phi * p + Vector::Constant(3, c), phi, p);
    const auto r = demand::demand_unconstrained(InteractionMatrix(Matrix::Identity(3, 3)), prim);
    CHECK((r.q - Vector::Constant(3, c)).norm() < 1e-12);

    std::mt19937_64 rng(8);
    const Matrix m = random_pd(rng, 4);
    const DemandPrimitives prim4(random_uniform(rng, 4, 1.0, 3.0), -0.3, random_uniform(rng, 4, 0.0, 2.0));
    const auto r4 = demand::demand_unconstrained(InteractionMatrix(m), prim4);
    CHECK((m * r4.q - prim4.net_utility()).norm() < 1e-10);
}

TEST_CASE("primitive validation") {
    CHECK_THROWS_AS(DemandPrimitives(Vector::Ones(2), 0.1, Vector::Zero(2)), ModelAssumptionError);
    CHECK_THROWS_AS(DemandPrimitives(Vector::Ones(2), -1.0, Vector::Constant(2, 2.0)), ModelAssumptionError);
    CHECK_THROWS_AS(DemandPrimitives(-Vector::Ones(2), -1.0, Vector::Zero(2)), ModelAssumptionError);
}

TEST_CASE("constrained demand on the worked example") {
    const ConsiderationSet a(toy_baskets());
    const InteractionMatrix m(equicorrelated(3));
    for (bool nn : {false, true}) {
        const auto r = demand::demand_constrained(a, m, toy_primitives(), nn);
        CHECK(std::abs(r.q(0) - 1.09) <= 5e-3);
        CHECK(std::abs(r.q(1) - 2.17) <= 5e-3);
        CHECK(std::abs(r.q(2) - 1.09) <= 5e-3);
        CHECK((a.matrix() * r.z - r.q).norm() < 1e-12);
        CHECK(r.binding_mode == BindingMode::LFOnly);
    }
}

TEST_CASE("identity baskets nest the unconstrained model") {
    const InteractionMatrix m(equicorrelated(3));
    const auto con = demand::demand_constrained(ConsiderationSet::identity(3), m, toy_primitives(), true);
    const auto unc = demand::demand_unconstrained(m, toy_primitives());
    CHECK((con.q - unc.q).norm() < 1e-12);
    CHECK(con.binding_mode == BindingMode::None);
}

TEST_CASE("NN-enforced demand maximizes utility over the basket grid") {
    std::mt19937_64 rng(41);
    int binding = 0;
    for (int rep = 0; rep < 6; ++rep) {
        Matrix am = random_nonneg(rng, 3, 4, 0.4);
        Matrix m = random_pd(rng, 3);
        m += 0.4 * Matrix::Ones(3, 3);
        const DemandPrimitives prim(random_uniform(rng, 3, 1.0, 3.0), -0.5, random_uniform(rng, 3, 0.0, 1.5));
        ConsiderationSet a = [&] {
            for (;;) {
                try {
                    return ConsiderationSet(am);
                } catch (const InvalidInputError&) {
                    am = random_nonneg(rng, 3, 4, 0.4);
                }
            }
        }();
        const auto r = demand::demand_constrained(a, InteractionMatrix(m), prim, true);
        if (r.binding_mode == BindingMode::NNOnly || r.binding_mode == BindingMode::NNAndLF) ++binding;
        const double upper = std::max(1.0, 2.0 * r.z.maxCoeff());
        const Vector zg = grid_maximize(a.matrix(), m, prim.net_utility(), upper);
        const double u_nn = utility(a.matrix(), m, prim.net_utility(), r.z);
        const double u_grid = utility(a.matrix(), m, prim.net_utility(), zg);
        CHECK(u_nn >= u_grid - 1e-9);
        // Worst-case utility loss from rounding the optimum to a 1e-3 lattice.
        const Matrix gram = a.matrix().transpose() * m * a.matrix();
        const double lattice_loss = 0.5 * gram.eigenvalues().real().maxCoeff() * 4.0 * 0.25e-6;
        CHECK(u_nn - u_grid <= lattice_loss);
        CHECK((a.matrix() * zg - r.q).norm() <= 2e-2);
        CHECK((r.q.array() >= -1e-10).all());
    }
    CHECK(binding > 0);
}

TEST_CASE("jacobian: identity baskets and reference toy Sigma") {
    std::mt19937_64 rng(2);
    const Matrix m = random_pd(rng, 3);
    const DemandPrimitives prim(Vector::Constant(3, 5.0), -0.2, Vector::Ones(3));
    if ((m.inverse() * prim.net_utility()).minCoeff() > 0.0) {
        const Matrix j = demand::jacobian(ConsiderationSet::identity(3), InteractionMatrix(m), prim);
        CHECK(max_abs(j - prim.phi * m.inverse()) < 1e-10);
    }

    const InteractionMatrix m_ref = InteractionMatrix::from_inverse(reference_m_inverse());
    const auto d = demand::demand_constrained(ConsiderationSet(toy_baskets()), m_ref, toy_primitives(), true);
    CHECK(std::none_of(d.lambda_active.begin(), d.lambda_active.end(), [](bool b) { return b; }));
    const Matrix j = demand::jacobian(ConsiderationSet(toy_baskets()), m_ref, toy_primitives());
    CHECK(max_abs(j - (-0.1) * reference_sigma()) <= 5e-4);
}

TEST_CASE("clamped basket: jacobian, wedge and finite differences") {
    Matrix m(2, 2);
    m << 1.0, 0.8, 0.8, 1.0;
    const InteractionMatrix im(m);
    const ConsiderationSet a = ConsiderationSet::identity(2);
    const DemandPrimitives prim(Vector(Eigen::Vector2d(1.1, 0.6)), -0.1, Vector::Ones(2));

    const auto d = demand::demand_constrained(a, im, prim, true);
    CHECK(d.lambda_active == std::vector<bool>{false, true});
    CHECK(d.binding_mode == BindingMode::NNOnly);
    CHECK(d.q(0) == doctest::Approx(1.0));
    CHECK(d.q(1) == 0.0);

    const Matrix j = demand::jacobian(a, im, prim);
    const double h = 1e-5;
    for (Index c = 0; c < 2; ++c) {
        Vector up = prim.prices, dn = prim.prices;
        up(c) += h;
        dn(c) -= h;
        const Vector fd = (demand::demand_constrained(a, im, DemandPrimitives(prim.delta, prim.phi, up), true).q -
                           demand::demand_constrained(a, im, DemandPrimitives(prim.delta, prim.phi, dn), true).q) /
                          (2.0 * h);
        for (Index r = 0; r < 2; ++r) CHECK(std::abs(fd(r) - j(r, c)) <= 1e-4 * std::max(1e-12, std::abs(prim.phi)));
    }

    const Vector wedge = demand::corner_wedge(a, im, prim);
    const auto free = demand::demand_constrained(a, im, prim, false);
    CHECK((wedge - (d.q - free.q)).norm() < 1e-14);
    CHECK(wedge.norm() > 0.1);
    // q_NN lies in col(A) and the multipliers are complementary to z.
    CHECK((a.matrix().transpose() * m * (d.q - a.matrix() * d.z)).norm() <= 1e-8);
    for (Index b = 0; b < 2; ++b) CHECK(std::abs(d.z(b) * d.multipliers(b)) <= 1e-10);
}

TEST_CASE("random clamped instances match finite differences") {
    std::mt19937_64 rng(1234);
    int tested = 0;
    for (int rep = 0; rep < 400 && tested < 20; ++rep) {
        Matrix am = random_nonneg(rng, 3, 4, 0.5);
        Matrix m = random_pd(rng, 3) + 0.6 * Matrix::Ones(3, 3);
        std::unique_ptr<ConsiderationSet> a;
        try {
            a = std::make_unique<ConsiderationSet>(am);
        } catch (const InvalidInputError&) {
            continue;
        }
        const DemandPrimitives prim(random_uniform(rng, 3, 1.0, 3.0), -0.5, random_uniform(rng, 3, 0.0, 1.5));
        const InteractionMatrix im(m);
        const auto d = demand::demand_constrained(*a, im, prim, true);
        if (std::count(d.lambda_active.begin(), d.lambda_active.end(), true) != 1) continue;
        // Skip instances sitting near a face change.
        const double mmax = d.multipliers.cwiseAbs().maxCoeff();
        bool clear = true;
        for (Index b = 0; b < d.z.size(); ++b)
            if (d.lambda_active[static_cast<std::size_t>(b)] && d.multipliers(b) < 1e-3 * std::max(1.0, mmax)) clear = false;
        if (!clear || d.q.minCoeff() < 1e-3) continue;
        ++tested;
        const Matrix j = demand::jacobian(*a, im, prim);
        const double h = 1e-5;
        for (Index c = 0; c < 3; ++c) {
            Vector up = prim.prices, dn = prim.prices;
            up(c) += h;
            dn(c) = std::max(0.0, dn(c) - h);
            const double span = up(c) - dn(c);
            const Vector fd = (demand::demand_constrained(*a, im, DemandPrimitives(prim.delta, prim.phi, up), true).q -
                               demand::demand_constrained(*a, im, DemandPrimitives(prim.delta, prim.phi, dn), true).q) /
                              span;
            CHECK((fd - j.col(c)).cwiseAbs().maxCoeff() <= 1e-4 * std::max(1.0, max_abs(j)));
        }
    }
    CHECK(tested > 0);
}

TEST_CASE("elasticities") {
    const DemandPrimitives prim(Vector::Constant(2, 2.0), -1.0, Vector::Ones(2));
    const Matrix e = demand::elasticity(ConsiderationSet::identity(2), InteractionMatrix(Matrix::Identity(2, 2)), prim);
    CHECK(e(0, 0) == doctest::Approx(-1.0));
    CHECK(e(1, 1) == doctest::Approx(-1.0));
    CHECK(e(0, 1) == doctest::Approx(0.0));

    const ConsiderationSet a(toy_baskets());
    const InteractionMatrix m(equicorrelated(3));
    const Matrix et = demand::elasticity(a, m, toy_primitives());
    const Matrix sigma = linalg::projector(a, m);
    const auto q = demand::demand_constrained(a, m, toy_primitives(), true).q;
    for (Index r = 0; r < 3; ++r)
        for (Index c = 0; c < 3; ++c) CHECK(et(r, c) == doctest::Approx(-0.1 * sigma(r, c) * 1.0 / q(r)).epsilon(1e-10));

    const DemandPrimitives doubled(Vector::Constant(3, 4.0), -0.1, Vector::Constant(3, 2.0));
    const Matrix e2 = demand::elasticity(a, m, doubled);
    for (Index r = 0; r < 3; ++r)
        for (Index c = 0; c < 3; ++c) CHECK((e2(r, c) > 0) == (et(r, c) > 0));
}

TEST_CASE("elasticity rejects zero demand") {
    Matrix m(2, 2);
    m << 1.0, 0.8, 0.8, 1.0;
    const DemandPrimitives prim(Vector(Eigen::Vector2d(1.1, 0.6)), -0.1, Vector::Ones(2));
    try {
        demand::elasticity(ConsiderationSet::identity(2), InteractionMatrix(m), prim);
        FAIL("expected DivisionDomainError");
    } catch (const DivisionDomainError& e) {
        CHECK(e.goods() == std::vector<int>{1});
    }
}

TEST_CASE("interior instances have a zero wedge") {
    const Vector w = demand::corner_wedge(ConsiderationSet(toy_baskets()), InteractionMatrix(equicorrelated(3)),
                                          toy_primitives());
    CHECK(w.norm() < 1e-10);
}

TEST_CASE("law of demand, uniqueness, and attenuation on random instances") {
    std::mt19937_64 rng(606);
    int done = 0;
    while (done < 100) {
        const Index k = 2 + static_cast<Index>(rng() % 4), j = 1 + static_cast<Index>(rng() % 7);
        std::unique_ptr<ConsiderationSet> a;
        try {
            a = std::make_unique<ConsiderationSet>(random_nonneg(rng, k, j));
        } catch (const InvalidInputError&) {
            continue;
        }
        ++done;
        const Matrix m = random_pd(rng, k);
        const InteractionMatrix im(m);
        const DemandPrimitives prim(random_uniform(rng, k, 2.0, 4.0), -0.5, random_uniform(rng, k, 0.5, 1.5));
        const Vector dp = random_uniform(rng, k, -0.4, 0.4);
        const DemandPrimitives moved(prim.delta, prim.phi, prim.prices + dp);
        for (bool nn : {false, true}) {
            const Vector q0 = demand::demand_constrained(*a, im, prim, nn).q;
            const Vector q1 = demand::demand_constrained(*a, im, moved, nn).q;
            CHECK(dp.dot(q1 - q0) <= 1e-8);
        }

        // q does not depend on the kernel component of z.
        const Matrix& am = a->matrix();
        const auto pr = linalg::pseudoinverse(am.transpose() * m * am);
        const auto free = demand::demand_constrained(*a, im, prim, false);
        if (pr.nullspace_basis.cols() > 0) {
            const Vector y = pr.nullspace_basis * random_uniform(rng, pr.nullspace_basis.cols(), -3.0, 3.0);
            CHECK((am * (free.z + y) - free.q).norm() <= 1e-10 * std::max(1.0, free.q.norm()));
        }

        // Sigma agrees with M^-1 exactly on directions M A v, and not elsewhere when A is short.
        const Matrix sigma = linalg::projector(am, m);
        const Vector along = m * am * random_uniform(rng, j, -1.0, 1.0);
        CHECK(((m.inverse() - sigma) * along).norm() <= 1e-10 * std::max(1.0, along.norm()));
        if (linalg::rank(am) < k) {
            // ker(A') is nonempty; Sigma annihilates it while M^-1 does not.
            const Matrix ker = linalg::pseudoinverse(am.transpose()).nullspace_basis;
            const Vector dpo = ker.col(0);
            CHECK(((m.inverse() - sigma) * dpo).norm() > 1e-8);
        }

        // Active-face own effects never exceed the full-face ones in magnitude.
        const Matrix jf = demand::jacobian(*a, im, prim);
        for (Index i = 0; i < k; ++i) CHECK(std::abs(jf(i, i)) <= std::abs(prim.phi * sigma(i, i)) + 1e-10);
    }
}
