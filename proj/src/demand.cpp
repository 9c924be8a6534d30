#include "csd/demand.hpp"

#include "csd/errors.hpp"
#include "csd/linalg.hpp"

#include <algorithm>
#include <sstream>

namespace csd::demand {

const char* to_string(BindingMode mode) {
    switch (mode) {
        case BindingMode::None: return "none";
        case BindingMode::NNOnly: return "NN-only";
        case BindingMode::LFOnly: return "LF-only";
        case BindingMode::NNAndLF: return "NN-and-LF";
    }
    return "unknown";
}

namespace {

BindingMode classify(bool nn, bool lf) {
    if (nn && lf) return BindingMode::NNAndLF;
    if (nn) return BindingMode::NNOnly;
    if (lf) return BindingMode::LFOnly;
    return BindingMode::None;
}

}  // namespace

ConeProjection project_to_cone(const Matrix& a, const Matrix& m, const Vector& target) {
    const linalg::NnlsSolution sol = linalg::nnls(a, target, m);
    ConeProjection out;
    out.z = sol.z;
    out.q = a * sol.z;
    out.multipliers = sol.gradient;

    const double zmax = sol.z.size() > 0 ? sol.z.maxCoeff() : 0.0;
    const Vector pull = a.transpose() * (m * target);
    const double mu_tol = 1e-9 * std::max(1.0, pull.cwiseAbs().maxCoeff());
    out.bound.assign(static_cast<std::size_t>(a.cols()), false);
    for (Index j = 0; j < a.cols(); ++j) {
        const bool at_zero = sol.z(j) <= 1e-10 * zmax;
        out.bound[static_cast<std::size_t>(j)] = at_zero && out.multipliers(j) > mu_tol;
    }
    return out;
}

std::vector<Index> free_baskets(const ConeProjection& proj) {
    std::vector<Index> keep;
    for (std::size_t j = 0; j < proj.bound.size(); ++j)
        if (!proj.bound[j]) keep.push_back(static_cast<Index>(j));
    return keep;
}

DemandResult demand_unconstrained(const InteractionMatrix& m, const DemandPrimitives& prim) {
    if (m.size() != prim.size()) throw InvalidInputError("demand: M and primitives differ in size");
    DemandResult out;
    out.q = m.inverse() * prim.net_utility();
    out.binding_mode = BindingMode::None;
    return out;
}

DemandResult demand_constrained(const ConsiderationSet& a, const InteractionMatrix& m,
                                const DemandPrimitives& prim, bool enforce_nn) {
    if (a.goods() != m.size() || a.goods() != prim.size())
        throw InvalidInputError("demand: dimensions are not conformal");

    const Matrix& am = a.matrix();
    const Vector v = prim.net_utility();
    const Matrix gram_pinv = linalg::pinv(am.transpose() * m.matrix() * am);
    const Vector z_free = gram_pinv * (am.transpose() * v);
    const bool lf = linalg::lf_binds(a);

    DemandResult out;
    if (!enforce_nn) {
        out.z = z_free;
        out.q = am * z_free;
        out.lambda_active.assign(static_cast<std::size_t>(a.baskets()), false);
        out.binding_mode = classify(false, lf);
        return out;
    }

    const Vector target = am * z_free;
    const ConeProjection proj = project_to_cone(am, m.matrix(), target);
    out.z = proj.z;
    out.q = proj.q;
    out.multipliers = proj.multipliers;
    out.lambda_active = proj.bound;
    const bool nn = std::find(proj.bound.begin(), proj.bound.end(), true) != proj.bound.end();
    out.binding_mode = classify(nn, lf);
    return out;
}

Matrix face_jacobian(const Matrix& a, const Matrix& m, double phi, const Vector& net_utility) {
    const Matrix sigma = linalg::projector_unchecked(a, m);
    const ConeProjection proj = project_to_cone(a, m, sigma * net_utility);
    const std::vector<Index> keep = free_baskets(proj);
    if (keep.empty()) return Matrix::Zero(a.rows(), a.rows());
    if (static_cast<Index>(keep.size()) == a.cols()) return phi * sigma;
    Matrix face(a.rows(), static_cast<Index>(keep.size()));
    for (std::size_t c = 0; c < keep.size(); ++c) face.col(static_cast<Index>(c)) = a.col(keep[c]);
    return phi * linalg::projector_unchecked(face, m);
}

Matrix jacobian(const ConsiderationSet& a, const InteractionMatrix& m, const DemandPrimitives& prim) {
    if (a.goods() != m.size() || a.goods() != prim.size())
        throw InvalidInputError("jacobian: dimensions are not conformal");
    return face_jacobian(a.matrix(), m.matrix(), prim.phi, prim.net_utility());
}

Matrix elasticity(const ConsiderationSet& a, const InteractionMatrix& m, const DemandPrimitives& prim) {
    const DemandResult d = demand_constrained(a, m, prim, true);
    const double qscale = std::max(1.0, d.q.cwiseAbs().maxCoeff());
    std::vector<int> zero_goods;
    for (Index k = 0; k < d.q.size(); ++k)
        if (d.q(k) <= 1e-12 * qscale) zero_goods.push_back(static_cast<int>(k));
    if (!zero_goods.empty()) {
        std::ostringstream msg;
        msg << "elasticity undefined: zero demand for goods";
        for (int g : zero_goods) msg << ' ' << a.good_labels()[static_cast<std::size_t>(g)];
        throw DivisionDomainError(msg.str(), zero_goods);
    }
    const Matrix jac = jacobian(a, m, prim);
    Matrix e(jac.rows(), jac.cols());
    for (Index r = 0; r < jac.rows(); ++r)
        for (Index c = 0; c < jac.cols(); ++c) e(r, c) = jac(r, c) * prim.prices(c) / d.q(r);
    return e;
}

Vector corner_wedge(const ConsiderationSet& a, const InteractionMatrix& m, const DemandPrimitives& prim) {
    const DemandResult with_nn = demand_constrained(a, m, prim, true);
    const DemandResult without = demand_constrained(a, m, prim, false);
    return with_nn.q - without.q;
}

double basket_utility(const Matrix& a, const Matrix& m, const Vector& net_utility, const Vector& z) {
    const Vector q = a * z;
    return q.dot(net_utility) - 0.5 * q.dot(m * q);
}

}  // namespace csd::demand
