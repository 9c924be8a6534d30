#include "csd/linalg.hpp"

#include "csd/errors.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>

namespace csd::linalg {

PseudoinverseResult pseudoinverse(const Matrix& m, double rel_tol) {
    if (!m.allFinite()) throw InvalidInputError("pseudoinverse: non-finite input");
    if (!(rel_tol > 0.0 && rel_tol < 1.0)) throw InvalidInputError("pseudoinverse: rel_tol must lie in (0, 1)");

    PseudoinverseResult out;
    if (m.size() == 0) {
        out.pinv = Matrix::Zero(m.cols(), m.rows());
        out.nullspace_basis = Matrix::Identity(m.cols(), m.cols());
        return out;
    }

    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vector& s = svd.singularValues();
    out.singular_values = s;
    const double smax = s.size() > 0 ? s(0) : 0.0;
    out.tolerance_used = rel_tol * smax;

    Index r = 0;
    while (r < s.size() && s(r) > out.tolerance_used && s(r) > 0.0) ++r;
    out.rank = r;

    const Matrix& u = svd.matrixU();
    const Matrix& v = svd.matrixV();
    out.pinv = Matrix::Zero(m.cols(), m.rows());
    for (Index i = 0; i < r; ++i) out.pinv.noalias() += (v.col(i) / s(i)) * u.col(i).transpose();
    out.nullspace_basis = v.rightCols(m.cols() - r);
    return out;
}

Matrix pinv(const Matrix& m, double rel_tol) { return pseudoinverse(m, rel_tol).pinv; }

Index rank(const Matrix& m, double rel_tol) {
    if (!m.allFinite()) throw InvalidInputError("rank: non-finite input");
    if (m.size() == 0) return 0;
    Eigen::JacobiSVD<Matrix> svd(m);
    const Vector& s = svd.singularValues();
    const double cut = rel_tol * s(0);
    Index r = 0;
    while (r < s.size() && s(r) > cut && s(r) > 0.0) ++r;
    return r;
}

double min_eigenvalue(const Matrix& symmetric) {
    if (symmetric.size() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetric, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericalError("eigenvalue decomposition failed");
    return es.eigenvalues()(0);
}

bool is_symmetric(const Matrix& m, double rel_tol) {
    if (m.rows() != m.cols()) return false;
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    return (m - m.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

Matrix symmetric_sqrt(const Matrix& psd) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (psd + psd.transpose()));
    if (es.info() != Eigen::Success) throw NumericalError("eigenvalue decomposition failed");
    Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

Matrix projector_unchecked(const Matrix& a, const Matrix& m) {
    if (a.rows() != m.rows()) throw InvalidInputError("projector: A and M row counts differ");
    const Matrix gram = a.transpose() * m * a;
    Matrix sigma = a * pinv(0.5 * (gram + gram.transpose())) * a.transpose();
    return 0.5 * (sigma + sigma.transpose());
}

Matrix projector(const Matrix& a, const Matrix& m) {
    if (!is_symmetric(m)) throw ModelAssumptionError("projector: M is not symmetric");
    const double floor = 1e-10 * m.trace() / static_cast<double>(std::max<Index>(1, m.rows()));
    if (!(min_eigenvalue(0.5 * (m + m.transpose())) > floor))
        throw ModelAssumptionError("projector: M is not positive definite");
    return projector_unchecked(a, m);
}

Matrix projector(const ConsiderationSet& a, const InteractionMatrix& m) {
    return projector_unchecked(a.matrix(), m.matrix());
}

namespace {

// Least squares restricted to the passive columns; minimum-norm when the
// passive block is rank deficient.
Vector passive_solve(const Matrix& e, const Vector& f, const std::vector<Index>& passive) {
    Matrix sub(e.rows(), static_cast<Index>(passive.size()));
    for (std::size_t i = 0; i < passive.size(); ++i) sub.col(static_cast<Index>(i)) = e.col(passive[i]);
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(sub);
    return cod.solve(f);
}

}  // namespace

NnlsSolution nnls(const Matrix& design, const Vector& target, const NnlsOptions& opts) {
    if (design.rows() != target.size()) throw InvalidInputError("nnls: dimension mismatch");
    if (!design.allFinite() || !target.allFinite()) throw InvalidInputError("nnls: non-finite input");

    const Index n = design.cols();
    const int cap = opts.max_iterations > 0 ? opts.max_iterations : static_cast<int>(std::max<Index>(10 * n, 10));
    const double scale = std::max(1.0, design.norm() * std::max(1.0, target.norm()));
    const double tol = opts.tolerance > 0.0 ? opts.tolerance : 1e-13 * scale;

    Vector z = Vector::Zero(n);
    std::vector<bool> passive(static_cast<std::size_t>(n), false);
    std::vector<bool> skip(static_cast<std::size_t>(n), false);
    Vector w = design.transpose() * (target - design * z);

    int iter = 0;
    for (;;) {
        Index t = -1;
        double best = tol;
        for (Index j = 0; j < n; ++j) {
            if (!passive[j] && !skip[j] && w(j) > best) {
                best = w(j);
                t = j;
            }
        }
        if (t < 0) break;
        if (++iter > cap) throw ConvergenceError("nnls: iteration cap exceeded", z, iter - 1);

        passive[t] = true;
        bool first_inner = true;
        for (;;) {
            std::vector<Index> pidx;
            for (Index j = 0; j < n; ++j)
                if (passive[j]) pidx.push_back(j);
            const Vector s_p = passive_solve(design, target, pidx);
            Vector s = Vector::Zero(n);
            for (std::size_t i = 0; i < pidx.size(); ++i) s(pidx[i]) = s_p(static_cast<Index>(i));

            bool feasible = true;
            for (Index j : pidx)
                if (s(j) <= 0.0) feasible = false;
            if (feasible) {
                z = s;
                break;
            }
            // The entering column cannot move off zero: rounding made w(t) look
            // positive. Drop it and bar it until z changes.
            if (first_inner && s(t) <= 0.0) {
                passive[t] = false;
                skip[t] = true;
                break;
            }
            first_inner = false;

            double alpha = std::numeric_limits<double>::infinity();
            for (Index j : pidx) {
                if (s(j) <= 0.0) alpha = std::min(alpha, z(j) / (z(j) - s(j)));
            }
            z += alpha * (s - z);
            for (Index j : pidx) {
                if (z(j) <= 1e-15 * std::max(1.0, z.cwiseAbs().maxCoeff())) {
                    z(j) = 0.0;
                    passive[j] = false;
                }
            }
            if (++iter > cap) throw ConvergenceError("nnls: iteration cap exceeded", z, iter - 1);
        }
        if (!skip[t]) std::fill(skip.begin(), skip.end(), false);
        w = design.transpose() * (target - design * z);
    }

    NnlsSolution out;
    out.z = z.cwiseMax(0.0);
    const Vector resid = design * out.z - target;
    out.residual_norm = resid.norm();
    out.gradient = design.transpose() * resid;
    out.iterations = iter;
    for (Index j = 0; j < n; ++j)
        if (out.z(j) == 0.0) out.active_set.push_back(j);
    return out;
}

NnlsSolution nnls(const Matrix& design, const Vector& target, const Matrix& weight, const NnlsOptions& opts) {
    if (weight.rows() != design.rows() || weight.cols() != design.rows())
        throw InvalidInputError("nnls: weight dimension mismatch");
    if (!is_symmetric(weight, 1e-8)) throw InvalidInputError("nnls: weight is not symmetric");

    Matrix w = 0.5 * (weight + weight.transpose());
    const double lo = min_eigenvalue(w);
    const double scale = std::max(1.0, w.diagonal().cwiseAbs().maxCoeff());
    if (lo < -1e-10 * scale) throw InvalidInputError("nnls: weight is not positive semi-definite");
    if (lo <= 1e-12 * scale) w += 1e-12 * Matrix::Identity(w.rows(), w.cols());

    const Matrix root = symmetric_sqrt(w);
    NnlsSolution out = nnls(root * design, root * target, opts);
    const Vector resid = design * out.z - target;
    out.residual_norm = std::sqrt(std::max(0.0, resid.dot(weight * resid)));
    out.gradient = design.transpose() * (weight * resid);
    return out;
}

std::vector<bool> cone_coverage(const Matrix& a) {
    if ((a.array() < 0.0).any()) throw InvalidInputError("cone_coverage: negative entries");
    // Cone membership is invariant to positive column scaling.
    Matrix unit = a;
    for (Index j = 0; j < unit.cols(); ++j) {
        const double nrm = unit.col(j).norm();
        if (nrm > 0.0) unit.col(j) /= nrm;
    }
    std::vector<bool> covered(static_cast<std::size_t>(a.rows()), false);
    for (Index k = 0; k < a.rows(); ++k) {
        const NnlsSolution sol = nnls(unit, Vector::Unit(a.rows(), k));
        covered[static_cast<std::size_t>(k)] = sol.residual_norm <= 1e-8;
    }
    return covered;
}

std::vector<bool> cone_coverage(const ConsiderationSet& a) { return cone_coverage(a.matrix()); }

bool lf_binds(const ConsiderationSet& a) {
    const auto cov = cone_coverage(a);
    return std::find(cov.begin(), cov.end(), false) != cov.end();
}

}  // namespace csd::linalg
