#pragma once

#include "csd/model.hpp"

#include <vector>

namespace csd::linalg {

struct PseudoinverseResult {
    Matrix pinv;
    Index rank = 0;
    Matrix nullspace_basis;  // columns span ker(m)
    double tolerance_used = 0.0;
    Vector singular_values;
};

/// Moore-Penrose pseudoinverse via SVD. Singular values below
/// rel_tol * sigma_max are treated as exact zeros.
PseudoinverseResult pseudoinverse(const Matrix& m, double rel_tol = 1e-12);

/// Shorthand returning only the pseudoinverse matrix.
Matrix pinv(const Matrix& m, double rel_tol = 1e-12);

/// Rank under the same relative singular-value cutoff.
Index rank(const Matrix& m, double rel_tol = 1e-12);

double min_eigenvalue(const Matrix& symmetric);
bool is_symmetric(const Matrix& m, double rel_tol = 1e-10);

/// Symmetric square root of a PSD matrix; negative rounding noise in the
/// spectrum is clamped to zero.
Matrix symmetric_sqrt(const Matrix& psd);

/// Sigma = A (A'MA)^+ A'. Symmetrized on return.
Matrix projector(const ConsiderationSet& a, const InteractionMatrix& m);

/// Same for raw matrices; throws ModelAssumptionError if m is not
/// symmetric positive definite.
Matrix projector(const Matrix& a, const Matrix& m);

/// Sigma without any PD check, for callers that have already validated M
/// (e.g. grid searches over candidate inverses).
Matrix projector_unchecked(const Matrix& a, const Matrix& m);

struct NnlsOptions {
    int max_iterations = 0;    // 0 means 10 * cols
    double tolerance = 0.0;    // 0 means scale-aware default
};

struct NnlsSolution {
    Vector z;
    double residual_norm = 0.0;   // in the supplied weighted norm
    std::vector<Index> active_set;  // indices with z == 0
    int iterations = 0;
    Vector gradient;  // design' W (design z - target)
};

/// Lawson-Hanson active-set solver for min ||design z - target||^2, z >= 0.
NnlsSolution nnls(const Matrix& design, const Vector& target, const NnlsOptions& opts = {});

/// Weighted variant: min (design z - target)' W (design z - target), z >= 0,
/// with W symmetric PSD. Solved through the symmetric square root of W
/// (of W + 1e-12 I when W is singular).
NnlsSolution nnls(const Matrix& design, const Vector& target, const Matrix& weight,
                  const NnlsOptions& opts = {});

/// Entry k is true iff e_k lies in cone(A) (NNLS residual <= 1e-8).
std::vector<bool> cone_coverage(const Matrix& a);
std::vector<bool> cone_coverage(const ConsiderationSet& a);

/// True iff some standard basis vector is outside cone(A).
bool lf_binds(const ConsiderationSet& a);

}  // namespace csd::linalg
