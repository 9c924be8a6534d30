#include "csd/equilibrium.hpp"

#include "csd/demand.hpp"
#include "csd/errors.hpp"
#include "csd/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

namespace csd::equilibrium {

Ownership Ownership::single_product(Index goods) {
    std::vector<int> firms(static_cast<std::size_t>(goods));
    for (Index k = 0; k < goods; ++k) firms[static_cast<std::size_t>(k)] = static_cast<int>(k);
    return from_firms(firms);
}

Ownership Ownership::monopoly(Index goods) {
    return from_firms(std::vector<int>(static_cast<std::size_t>(goods), 0));
}

Ownership Ownership::from_firms(const std::vector<int>& firm_of) {
    if (firm_of.empty()) throw InvalidInputError("ownership: no goods");
    // Relabel firms densely in order of first appearance.
    std::map<int, int> dense;
    Ownership own;
    for (int f : firm_of) {
        if (f < 0) throw InvalidInputError("ownership: negative firm id");
        auto it = dense.try_emplace(f, static_cast<int>(dense.size())).first;
        own.firm_of.push_back(it->second);
    }
    const Index k = static_cast<Index>(firm_of.size());
    own.g = Matrix::Zero(k, k);
    for (Index a = 0; a < k; ++a)
        for (Index b = 0; b < k; ++b)
            if (a != b && own.firm_of[static_cast<std::size_t>(a)] == own.firm_of[static_cast<std::size_t>(b)])
                own.g(a, b) = 1.0;
    return own;
}

int Ownership::firms() const {
    return firm_of.empty() ? 0 : *std::max_element(firm_of.begin(), firm_of.end()) + 1;
}

bool Ownership::is_single_product() const { return firms() == static_cast<int>(firm_of.size()); }

bool Ownership::is_monopoly() const { return firms() == 1; }

namespace {

void check_inputs(const Matrix& sigma, const Matrix& m, const Vector& delta, double phi) {
    if (sigma.rows() != sigma.cols() || sigma.rows() != delta.size() || m.rows() != delta.size())
        throw InvalidInputError("equilibrium: dimensions are not conformal");
    if (!(phi < 0.0)) throw ModelAssumptionError("equilibrium: phi must be negative");
    if (!sigma.allFinite() || !delta.allFinite()) throw InvalidInputError("equilibrium: non-finite input");
}

Matrix build_w(const Matrix& sigma, const Ownership& own) {
    Matrix w = sigma + sigma.cwiseProduct(own.g);
    w.diagonal() += sigma.diagonal();
    return w;
}

void fill_outcome(EquilibriumOutcome& out, const Matrix& sigma, const Matrix& m, const Vector& delta, double phi,
                  const Ownership& own) {
    out.quantities = sigma * (delta + phi * out.prices);
    out.good_profits = out.prices.cwiseProduct(out.quantities);
    out.firm_profits.assign(static_cast<std::size_t>(own.firms()), 0.0);
    for (Index k = 0; k < out.prices.size(); ++k)
        out.firm_profits[static_cast<std::size_t>(own.firm_of[static_cast<std::size_t>(k)])] += out.good_profits(k);
    out.aggregate_profit = out.good_profits.sum();
    out.consumer_surplus = out.quantities.dot(delta) - 0.5 * out.quantities.dot(m * out.quantities);
    out.foc_residual = foc_residual(sigma, delta, phi, own, out.prices).cwiseAbs().maxCoeff();

    const double pscale = std::max(1.0, out.prices.cwiseAbs().maxCoeff());
    const double qscale = std::max(1.0, out.quantities.cwiseAbs().maxCoeff());
    out.negative_prices = (out.prices.array() < -1e-12 * pscale).any();
    out.negative_quantities = (out.quantities.array() < -1e-12 * qscale).any();
    if (out.negative_prices) out.diagnostics.emplace_back("negative equilibrium price");
    if (out.negative_quantities) out.diagnostics.emplace_back("negative equilibrium quantity");
}

}  // namespace

Vector foc_residual(const Matrix& sigma, const Vector& delta, double phi, const Ownership& own, const Vector& p) {
    return sigma * delta + phi * (build_w(sigma, own) * p);
}

EquilibriumOutcome bertrand_from_sigma(const Matrix& sigma, const Matrix& m, const Vector& delta, double phi) {
    check_inputs(sigma, m, delta, phi);
    const double scale = std::max(1.0, sigma.cwiseAbs().maxCoeff());
    if ((sigma.diagonal().array() <= 1e-14 * scale).any())
        throw NumericalError("bertrand: Sigma has a non-positive diagonal entry");

    const Ownership own = Ownership::single_product(delta.size());
    const Matrix w = build_w(sigma, own);
    Eigen::JacobiSVD<Matrix> svd(w);
    const Vector& s = svd.singularValues();
    if (s(s.size() - 1) <= 1e-10 * s(0)) throw NumericalError("bertrand: Omega + Sigma is numerically singular");

    EquilibriumOutcome out;
    out.prices = -(1.0 / phi) * w.partialPivLu().solve(sigma * delta);
    out.multiplicity_basis = Matrix(delta.size(), 0);
    out.certified = true;
    fill_outcome(out, sigma, m, delta, phi, own);
    return out;
}

EquilibriumOutcome multiproduct_from_sigma(const Matrix& sigma, const Matrix& m, const Vector& delta, double phi,
                                           const Ownership& own) {
    check_inputs(sigma, m, delta, phi);
    if (own.g.rows() != delta.size()) throw InvalidInputError("ownership does not match the number of goods");
    const Matrix w = build_w(sigma, own);
    const auto pr = linalg::pseudoinverse(0.5 * (w + w.transpose()), 1e-10);

    EquilibriumOutcome out;
    out.prices = -(1.0 / phi) * pr.pinv * (sigma * delta);
    out.multiplicity_basis = pr.nullspace_basis;
    out.certified = own.is_single_product() || own.is_monopoly();
    if (!out.certified) out.diagnostics.emplace_back("partial multi-product ownership: minimum-norm FOC candidate, not certified");
    fill_outcome(out, sigma, m, delta, phi, own);
    return out;
}

EquilibriumOutcome bertrand_single_product(const ConsiderationSet& a, const InteractionMatrix& m,
                                           const Vector& delta, double phi) {
    return bertrand_from_sigma(linalg::projector(a, m), m.matrix(), delta, phi);
}

EquilibriumOutcome multiproduct_equilibrium(const ConsiderationSet& a, const InteractionMatrix& m,
                                            const Vector& delta, double phi, const Ownership& own) {
    return multiproduct_from_sigma(linalg::projector(a, m), m.matrix(), delta, phi, own);
}

EquilibriumOutcome monopoly_from_sigma(const Matrix& sigma, const Matrix& m, const Vector& delta, double phi) {
    check_inputs(sigma, m, delta, phi);
    const Ownership own = Ownership::monopoly(delta.size());
    const auto pr = linalg::pseudoinverse(sigma, 1e-10);

    EquilibriumOutcome out;
    out.prices = -(0.5 / phi) * (pr.pinv * (sigma * delta));
    out.multiplicity_basis = pr.nullspace_basis;
    fill_outcome(out, sigma, m, delta, phi, own);
    const double quad = delta.dot(sigma * delta);
    out.quantities = 0.5 * (sigma * delta);
    out.aggregate_profit = -quad / (4.0 * phi);
    out.consumer_surplus = 0.375 * quad;
    out.firm_profits.assign(1, out.aggregate_profit);
    return out;
}

EquilibriumOutcome monopoly_closed_forms(const ConsiderationSet& a, const InteractionMatrix& m,
                                         const Vector& delta, double phi) {
    return monopoly_from_sigma(linalg::projector(a, m), m.matrix(), delta, phi);
}

StockoutDelta stockout_from_sigma(const Matrix& sigma, const Vector& delta, double phi, Index good) {
    if (good < 0 || good >= delta.size()) throw InvalidInputError("stockout: good index out of range");
    if (sigma.rows() != delta.size() || sigma.cols() != delta.size())
        throw InvalidInputError("stockout: dimensions are not conformal");
    if (!(phi < 0.0)) throw ModelAssumptionError("stockout: phi must be negative");

    const double di = delta(good);
    const double s_ii = sigma(good, good);
    const double cross = sigma.row(good).dot(delta) - s_ii * di;  // sigma_i'delta_-i
    const double x = s_ii * di * di + 2.0 * di * cross;

    StockoutDelta out;
    out.dq = -0.5 * di * sigma.col(good);
    out.dq(good) = -0.5 * (s_ii * di + cross);
    out.d_profit = x / (4.0 * phi);
    out.d_cs = -0.375 * x;
    return out;
}

StockoutDelta stockout_delta(const ConsiderationSet& a, const InteractionMatrix& m, const Vector& delta,
                             double phi, Index good) {
    return stockout_from_sigma(linalg::projector(a, m), delta, phi, good);
}

namespace {

EquilibriumOutcome oligopoly(const Matrix& sigma, const Matrix& m, const Vector& delta, double phi,
                             const Ownership& own) {
    return own.is_single_product() ? bertrand_from_sigma(sigma, m, delta, phi)
                                   : multiproduct_from_sigma(sigma, m, delta, phi, own);
}

// A face can leave goods in no basket; their Sigma rows vanish and so does
// their demand at any price. Solve on the served goods and price the rest at 0.
EquilibriumOutcome served_equilibrium(const Matrix& sigma, const Matrix& m, const Vector& delta, double phi,
                                      const Ownership& own) {
    const double scale = std::max(1.0, sigma.cwiseAbs().maxCoeff());
    std::vector<Index> served;
    for (Index k = 0; k < sigma.rows(); ++k)
        if (sigma(k, k) > 1e-14 * scale) served.push_back(k);
    if (static_cast<Index>(served.size()) == sigma.rows()) return oligopoly(sigma, m, delta, phi, own);
    if (served.empty()) throw NumericalError("nn_equilibrium: no good has demand on the face");

    const Index n = static_cast<Index>(served.size());
    Matrix s_sub(n, n), m_sub(n, n);
    Vector d_sub(n);
    std::vector<int> firms(served.size());
    for (Index r = 0; r < n; ++r) {
        const Index gr = served[static_cast<std::size_t>(r)];
        d_sub(r) = delta(gr);
        firms[static_cast<std::size_t>(r)] = own.firm_of[static_cast<std::size_t>(gr)];
        for (Index c = 0; c < n; ++c) {
            s_sub(r, c) = sigma(gr, served[static_cast<std::size_t>(c)]);
            m_sub(r, c) = m(gr, served[static_cast<std::size_t>(c)]);
        }
    }
    const EquilibriumOutcome sub = oligopoly(s_sub, m_sub, d_sub, phi, Ownership::from_firms(firms));

    EquilibriumOutcome out;
    out.prices = Vector::Zero(sigma.rows());
    for (Index r = 0; r < n; ++r) out.prices(served[static_cast<std::size_t>(r)]) = sub.prices(r);
    out.multiplicity_basis = Matrix(sigma.rows(), 0);
    out.certified = sub.certified;
    out.diagnostics = sub.diagnostics;
    out.diagnostics.emplace_back(std::to_string(sigma.rows() - n) + " good(s) without demand on the face, priced at 0");
    fill_outcome(out, sigma, m, delta, phi, own);
    return out;
}

}  // namespace

namespace {

// Consumer side of the NN model for fixed (A, M): z(v) minimizes
// ||Az - M^-1 v||_M over z >= 0, solved as plain NNLS on M^1/2 A.
struct NnConsumer {
    const Matrix& a;
    const Matrix& m;
    Matrix root_a;    // M^1/2 A
    Matrix root_inv;  // M^-1/2

    NnConsumer(const Matrix& a_, const Matrix& m_) : a(a_), m(m_) {
        Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
        if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0)
            throw ModelAssumptionError("nn_equilibrium: M is not positive definite");
        const Vector ev = es.eigenvalues().cwiseSqrt();
        root_a = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose() * a;
        root_inv = es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
    }

    linalg::NnlsSolution solve(const Vector& v) const { return linalg::nnls(root_a, root_inv * v); }

    std::vector<Index> support(const Vector& z) const {
        std::vector<Index> s;
        const double zmax = z.size() ? z.maxCoeff() : 0.0;
        for (Index j = 0; j < z.size(); ++j)
            if (z(j) > 1e-10 * zmax && z(j) > 0.0) s.push_back(j);
        return s;
    }

    Matrix columns(const std::vector<Index>& s) const {
        Matrix out(a.rows(), static_cast<Index>(s.size()));
        for (std::size_t c = 0; c < s.size(); ++c) out.col(static_cast<Index>(c)) = a.col(s[c]);
        return out;
    }
};

// Demand of good i along its own price near t, moving in direction dir
// (+1 up, -1 down): q_i(tau) = q0 + b (tau - t) for |tau - t| <= step.
struct Piece {
    double t = 0.0;
    double q0 = 0.0;
    double b = 0.0;
    double step = 0.0;
};

Piece demand_piece(const NnConsumer& con, const Vector& delta, double phi, Vector p, Index i, double t, int dir) {
    Piece pc;
    pc.t = std::max(0.0, t + dir * 1e-9 * std::max(1.0, t));
    p(i) = pc.t;
    const Vector v = delta + phi * p;
    const std::vector<Index> s = con.support(con.solve(v).z);
    if (s.empty()) return pc;
    const Matrix as = con.columns(s);
    const Matrix gram = as.transpose() * con.m * as;
    Eigen::LDLT<Matrix> ldlt(0.5 * (gram + gram.transpose()));
    const Vector zs = ldlt.solve(as.transpose() * v);
    const Vector dzs = ldlt.solve(as.transpose().col(i) * (phi * dir));
    const Vector q = as * zs;
    const Vector dq = as * dzs;
    pc.q0 = q(i);
    pc.b = dir * dq(i);

    // Multipliers A'(Mq - v) of unused baskets and their slopes along dir.
    const Vector mu = con.a.transpose() * (con.m * q - v);
    Vector dv = Vector::Zero(v.size());
    dv(i) = phi * dir;
    const Vector dmu = con.a.transpose() * (con.m * dq - dv);
    // Slopes below these floors are rounding noise, e.g. from baskets that
    // are combinations of bought ones.
    const double z_floor = 1e-10 * std::max(1.0, dzs.cwiseAbs().maxCoeff());
    const double mu_floor = 1e-10 * std::max(1.0, dmu.cwiseAbs().maxCoeff());
    double step = std::numeric_limits<double>::infinity();
    std::vector<bool> in(static_cast<std::size_t>(con.a.cols()), false);
    for (std::size_t c = 0; c < s.size(); ++c) {
        in[static_cast<std::size_t>(s[c])] = true;
        const Index r = static_cast<Index>(c);
        if (dzs(r) < -z_floor) step = std::min(step, zs(r) / -dzs(r));
    }
    for (Index j = 0; j < con.a.cols(); ++j)
        if (!in[static_cast<std::size_t>(j)] && dmu(j) < -mu_floor) step = std::min(step, std::max(0.0, mu(j)) / -dmu(j));
    if (dir > 0 && pc.b < 0.0) step = std::min(step, -pc.q0 / pc.b);
    if (dir < 0) step = std::min(step, pc.t);
    pc.step = step;
    return pc;
}

double piece_profit(const Piece& pc, double tau) { return tau * (pc.q0 + pc.b * (tau - pc.t)); }

// Profit-maximizing tau on the piece, restricted to the side given by dir.
double piece_argmax(const Piece& pc, int dir) {
    const double lo = dir > 0 ? pc.t : pc.t - pc.step;
    const double hi = dir > 0 ? pc.t + pc.step : pc.t;
    if (pc.b < 0.0) return std::clamp((pc.b * pc.t - pc.q0) / (2.0 * pc.b), lo, hi);
    return piece_profit(pc, hi) >= piece_profit(pc, lo) ? hi : lo;
}

// Hill-climb firm i's profit from its current price along dir.
double climb(const NnConsumer& con, const Vector& delta, double phi, const Vector& p, Index i, int dir) {
    double t = p(i);
    for (int piece = 0; piece < 1000; ++piece) {
        const Piece pc = demand_piece(con, delta, phi, p, i, t, dir);
        if (pc.q0 <= 0.0) return t;
        const double slope = dir * (pc.q0 + pc.b * pc.t);  // d profit / d tau along dir
        if (slope <= 0.0) return t;
        if (!std::isfinite(pc.step)) throw NumericalError("nn_equilibrium: demand does not vanish as price rises");
        const double tau = piece_argmax(pc, dir);
        const double end = pc.t + dir * pc.step;
        if (std::abs(tau - end) > 1e-12 * std::max(1.0, end) || (dir < 0 && end <= 0.0)) return std::max(0.0, tau);
        t = end;
    }
    throw NumericalError("nn_equilibrium: too many demand pieces");
}

double local_best_response(const NnConsumer& con, const Vector& delta, double phi, const Vector& p, Index i) {
    const double up = climb(con, delta, phi, p, i, +1);
    if (up > p(i)) return up;
    return p(i) > 0.0 ? climb(con, delta, phi, p, i, -1) : p(i);
}

// Highest profit firm i can reach over all prices >= 0, rivals fixed.
double global_best_profit(const NnConsumer& con, const Vector& delta, double phi, const Vector& p, Index i) {
    double best = 0.0, t = 0.0;
    for (int piece = 0; piece < 1000; ++piece) {
        const Piece pc = demand_piece(con, delta, phi, p, i, t, +1);
        if (pc.q0 <= 0.0) return best;
        if (!std::isfinite(pc.step)) throw NumericalError("nn_equilibrium: demand does not vanish as price rises");
        best = std::max(best, piece_profit(pc, piece_argmax(pc, +1)));
        t = pc.t + pc.step;
    }
    throw NumericalError("nn_equilibrium: too many demand pieces");
}

FaceEquilibrium finish(const NnConsumer& con, const Vector& delta, double phi, const Ownership& own, Vector prices,
                       int rounds) {
    const linalg::NnlsSolution sol = con.solve(delta + phi * prices);
    FaceEquilibrium out;
    out.face = con.support(sol.z);
    out.sigma_face = out.face.empty() ? Matrix::Zero(con.a.rows(), con.a.rows())
                                      : linalg::projector_unchecked(con.columns(out.face), con.m);
    out.rounds = rounds;
    out.outcome.prices = std::move(prices);
    out.outcome.multiplicity_basis = Matrix(delta.size(), 0);
    fill_outcome(out.outcome, out.sigma_face, con.m, delta, phi, own);
    return out;
}

FaceEquilibrium nn_monopoly(const NnConsumer& con, const Vector& delta, double phi) {
    // Profit from bundle q in cone(A) is (delta'q - q'Mq) / -phi whatever
    // supporting prices are used, so the optimum projects M^-1 delta / 2.
    const Vector half = 0.5 * delta;
    const linalg::NnlsSolution sol = con.solve(half);
    const Vector q = con.a * sol.z;
    Vector prices = (con.m * q - delta) / phi;
    FaceEquilibrium out = finish(con, delta, phi, Ownership::monopoly(delta.size()), prices, 1);
    out.outcome.quantities = q;
    out.outcome.aggregate_profit = (delta.dot(q) - q.dot(con.m * q)) / -phi;
    out.outcome.firm_profits.assign(1, out.outcome.aggregate_profit);
    out.outcome.consumer_surplus = q.dot(delta) - 0.5 * q.dot(con.m * q);
    return out;
}

FaceEquilibrium nn_bertrand(const NnConsumer& con, const Vector& delta, double phi, int max_rounds) {
    const Index k = delta.size();
    const Ownership own = Ownership::single_product(k);
    Vector p = Vector::Zero(k);
    for (int round = 1; round <= max_rounds; ++round) {
        double change = 0.0;
        for (Index i = 0; i < k; ++i) {
            const double next = local_best_response(con, delta, phi, p, i);
            change = std::max(change, std::abs(next - p(i)));
            p(i) = next;
        }
        if (change <= 1e-11 * std::max(1.0, p.cwiseAbs().maxCoeff())) {
            FaceEquilibrium out = finish(con, delta, phi, own, p, round);
            // Local optimum of every firm; certify it as a Nash equilibrium
            // when no firm gains from a distant price either.
            for (Index i = 0; i < k && out.outcome.certified; ++i) {
                const double own_profit = out.outcome.good_profits(i);
                if (global_best_profit(con, delta, phi, p, i) > own_profit + 1e-9 * std::max(1.0, std::abs(own_profit)))
                    out.outcome.certified = false;
            }
            if (!out.outcome.certified) out.outcome.diagnostics.emplace_back("local equilibrium: some firm has a profitable distant deviation");
            return out;
        }
    }
    throw ConvergenceError("nn_equilibrium: best-response sweeps did not settle", p, max_rounds);
}

FaceEquilibrium nn_face_iteration(const Matrix& a, const Matrix& m, const Vector& delta, double phi,
                                  const Ownership& own, int max_rounds) {
    std::vector<Index> face(static_cast<std::size_t>(a.cols()));
    for (Index j = 0; j < a.cols(); ++j) face[static_cast<std::size_t>(j)] = j;
    const Matrix sigma_full = linalg::projector_unchecked(a, m);
    std::set<std::vector<Index>> seen;

    for (int round = 1; round <= max_rounds; ++round) {
        if (face.empty()) throw NumericalError("nn_equilibrium: every basket is bound");
        seen.insert(face);
        Matrix af(a.rows(), static_cast<Index>(face.size()));
        for (std::size_t c = 0; c < face.size(); ++c) af.col(static_cast<Index>(c)) = a.col(face[c]);
        const Matrix sigma = static_cast<Index>(face.size()) == a.cols() ? sigma_full : linalg::projector_unchecked(af, m);
        EquilibriumOutcome cand = served_equilibrium(sigma, m, delta, phi, own);

        const Vector v = delta + phi * cand.prices;
        const demand::ConeProjection proj = demand::project_to_cone(a, m, sigma_full * v);
        const std::vector<Index> next = demand::free_baskets(proj);
        if (next == face) {
            FaceEquilibrium out;
            out.outcome = std::move(cand);
            out.face = face;
            out.sigma_face = sigma;
            out.rounds = round;
            return out;
        }
        if (seen.count(next)) throw ConvergenceError("nn_equilibrium: active faces cycle", cand.prices, round);
        face = next;
    }
    throw ConvergenceError("nn_equilibrium: face iteration cap reached", Vector(), max_rounds);
}

}  // namespace

FaceEquilibrium nn_outcome_at_prices(const Matrix& a, const Matrix& m, const Vector& delta, double phi,
                                     const Ownership& own, const Vector& prices) {
    if (a.rows() != m.rows() || m.rows() != delta.size() || prices.size() != delta.size() || own.g.rows() != delta.size())
        throw InvalidInputError("nn_outcome_at_prices: dimensions are not conformal");
    if (!(phi < 0.0)) throw ModelAssumptionError("nn_outcome_at_prices: phi must be negative");
    return finish(NnConsumer(a, m), delta, phi, own, prices, 0);
}

FaceEquilibrium nn_equilibrium(const Matrix& a, const Matrix& m, const Vector& delta, double phi,
                               const Ownership& own, int max_rounds) {
    if (a.rows() != m.rows() || m.rows() != delta.size() || own.g.rows() != delta.size())
        throw InvalidInputError("nn_equilibrium: dimensions are not conformal");
    if (!(phi < 0.0)) throw ModelAssumptionError("nn_equilibrium: phi must be negative");
    if (!own.is_monopoly() && !own.is_single_product()) return nn_face_iteration(a, m, delta, phi, own, max_rounds);
    const NnConsumer con(a, m);
    if (own.is_monopoly()) return nn_monopoly(con, delta, phi);
    return nn_bertrand(con, delta, phi, max_rounds);
}

}  // namespace csd::equilibrium
