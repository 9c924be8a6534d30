#pragma once

#include "csd/model.hpp"

#include <string>
#include <vector>

namespace csd::equilibrium {

/// Which goods share an owner. g is symmetric, hollow and 0/1 with
/// g(a, b) = 1 iff a and b belong to the same firm.
struct Ownership {
    Matrix g;
    std::vector<int> firm_of;

    static Ownership single_product(Index goods);
    static Ownership monopoly(Index goods);
    static Ownership from_firms(const std::vector<int>& firm_of);

    int firms() const;
    bool is_single_product() const;
    bool is_monopoly() const;
};

struct EquilibriumOutcome {
    Vector prices;
    Vector quantities;
    Vector good_profits;               // p_i q_i, marginal cost zero
    std::vector<double> firm_profits;  // indexed by firm id
    double aggregate_profit = 0.0;
    double consumer_surplus = 0.0;     // q'delta - 1/2 q'Mq
    Matrix multiplicity_basis;         // columns span ker(W); empty when unique
    double foc_residual = 0.0;         // ||Sigma delta + phi W p||_inf
    bool certified = true;             // false for partial multi-product ownership
    bool negative_prices = false;
    bool negative_quantities = false;
    std::vector<std::string> diagnostics;
};

/// Bertrand-Nash with one good per firm on a given Sigma:
/// p* = -(1/phi) (Omega + Sigma)^-1 Sigma delta.
EquilibriumOutcome bertrand_from_sigma(const Matrix& sigma, const Matrix& m, const Vector& delta, double phi);

/// Minimum-norm p* = -(1/phi) W^+ Sigma delta with W = Omega + Sigma + Sigma o G.
EquilibriumOutcome multiproduct_from_sigma(const Matrix& sigma, const Matrix& m, const Vector& delta, double phi,
                                           const Ownership& own);

EquilibriumOutcome bertrand_single_product(const ConsiderationSet& a, const InteractionMatrix& m,
                                           const Vector& delta, double phi);

EquilibriumOutcome multiproduct_equilibrium(const ConsiderationSet& a, const InteractionMatrix& m,
                                            const Vector& delta, double phi, const Ownership& own);

/// Monopoly optimum: q* = Sigma delta / 2, profit -(1/(4 phi)) delta'Sigma delta,
/// CS (3/8) delta'Sigma delta. Prices are the minimum-norm solution.
EquilibriumOutcome monopoly_closed_forms(const ConsiderationSet& a, const InteractionMatrix& m,
                                         const Vector& delta, double phi);
EquilibriumOutcome monopoly_from_sigma(const Matrix& sigma, const Matrix& m, const Vector& delta, double phi);

struct StockoutDelta {
    Vector dq;  // full length; entry `good` is the lost demand for the stocked-out good
    double d_profit = 0.0;
    double d_cs = 0.0;
};

/// Monopoly stock-out of `good`, evaluated on the partition of the original
/// Sigma. With x = sigma_ii delta_i^2 + 2 delta_i sigma_i'delta_-i:
/// dq_i = -(sigma_ii delta_i + sigma_i'delta_-i)/2, dq_-i = -sigma_i delta_i / 2,
/// dPi = x / (4 phi), dCS = -3x/8.
StockoutDelta stockout_delta(const ConsiderationSet& a, const InteractionMatrix& m, const Vector& delta,
                             double phi, Index good);
StockoutDelta stockout_from_sigma(const Matrix& sigma, const Vector& delta, double phi, Index good);

/// Sigma delta + phi W p, the stacked first-order conditions.
Vector foc_residual(const Matrix& sigma, const Vector& delta, double phi, const Ownership& own, const Vector& p);

/// Equilibrium when demand respects z >= 0 (consumer picks z minimizing
/// ||Az - M^-1 v||_M). Monopoly: the bundle is the M-projection of M^-1 delta / 2
/// onto cone(A), priced at p = (Mq - delta) / phi. Single-product: Gauss-Seidel
/// sweeps of local best responses (each firm hill-climbs its piecewise
/// quadratic profit), up to `max_rounds` sweeps; `certified` is set when no
/// firm has a profitable distant deviation either. Kinks in NN demand can
/// leave no pure equilibrium, in which case the sweeps cycle and
/// ConvergenceError is thrown. Other ownership: face iteration from the full
/// face until the face of the NN demand at the candidate prices repeats.
/// `face` lists the baskets bought at the optimum; sigma_face is their projector.
struct FaceEquilibrium {
    EquilibriumOutcome outcome;
    std::vector<Index> face;  // baskets kept
    Matrix sigma_face;
    int rounds = 0;
};
FaceEquilibrium nn_equilibrium(const Matrix& a, const Matrix& m, const Vector& delta, double phi,
                               const Ownership& own, int max_rounds = 500);

/// NN demand, profits and surplus at given prices; face and sigma_face as above.
FaceEquilibrium nn_outcome_at_prices(const Matrix& a, const Matrix& m, const Vector& delta, double phi,
                                     const Ownership& own, const Vector& prices);

}  // namespace csd::equilibrium
