#pragma once

#include "csd/model.hpp"

#include <vector>

namespace csd::demand {

enum class BindingMode { None, NNOnly, LFOnly, NNAndLF };

const char* to_string(BindingMode mode);

struct DemandResult {
    Vector q;
    Vector z;  // basket intensities; empty in unconstrained mode
    std::vector<bool> lambda_active;  // basket held at zero by a positive multiplier
    Vector multipliers;  // KKT multipliers A'M(q - Sigma v); empty unless NN enforced
    BindingMode binding_mode = BindingMode::None;
};

/// Minimizer of ||A z - target||_M over z >= 0, with the multipliers and
/// bound flags of its KKT system.
struct ConeProjection {
    Vector z;
    Vector q;
    Vector multipliers;
    std::vector<bool> bound;
};

/// Projects target onto cone(A) in the M-norm. A basket is bound when
/// z_j < 1e-10 max(z) and its multiplier is strictly positive.
ConeProjection project_to_cone(const Matrix& a, const Matrix& m, const Vector& target);

/// Baskets that are not bound; the face of cone(A) the solution lives on.
std::vector<Index> free_baskets(const ConeProjection& proj);

/// q = M^-1 (delta + phi p). Negative entries are reported as-is.
DemandResult demand_unconstrained(const InteractionMatrix& m, const DemandPrimitives& prim);

/// q = Sigma (delta + phi p) with minimum-norm z when enforce_nn is off;
/// otherwise z solves the M-weighted NNLS against Sigma (delta + phi p).
DemandResult demand_constrained(const ConsiderationSet& a, const InteractionMatrix& m,
                                const DemandPrimitives& prim, bool enforce_nn);

/// dq/dp = phi * Sigma on the active face (bound baskets dropped).
/// One-sided at corners: the derivative from inside the current face.
Matrix jacobian(const ConsiderationSet& a, const InteractionMatrix& m, const DemandPrimitives& prim);

/// Same, for raw inputs. `net_utility` is delta + phi p.
Matrix face_jacobian(const Matrix& a, const Matrix& m, double phi, const Vector& net_utility);

/// E(a, b) = J(a, b) p_b / q_a. Throws DivisionDomainError if any q_a <= 0.
Matrix elasticity(const ConsiderationSet& a, const InteractionMatrix& m, const DemandPrimitives& prim);

/// q_NN - q_free: the corner-solution adjustment A (A'MA)^+ lambda(p).
Vector corner_wedge(const ConsiderationSet& a, const InteractionMatrix& m, const DemandPrimitives& prim);

/// Quadratic utility z'A'v - 1/2 z'A'MAz of a basket choice.
double basket_utility(const Matrix& a, const Matrix& m, const Vector& net_utility, const Vector& z);

}  // namespace csd::demand
