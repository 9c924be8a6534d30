#include "csd/estimate.hpp"

#include "csd/errors.hpp"
#include "csd/linalg.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace csd::estimate {

namespace {

Matrix hcat(const std::vector<const Matrix*>& blocks, Index rows) {
    Index cols = 0;
    for (const Matrix* b : blocks) cols += b->cols();
    Matrix out(rows, cols);
    Index c = 0;
    for (const Matrix* b : blocks) {
        out.middleCols(c, b->cols()) = *b;
        c += b->cols();
    }
    return out;
}

template <class T>
void append(std::vector<T>& a, const std::vector<T>& b) {
    a.insert(a.end(), b.begin(), b.end());
}

// Drops all-zero columns (constants after standardization).
void drop_zero_columns(Matrix& m, std::vector<std::string>& names) {
    std::vector<Index> keep;
    for (Index c = 0; c < m.cols(); ++c)
        if (m.col(c).cwiseAbs().maxCoeff() > 0.0) keep.push_back(c);
    if (static_cast<Index>(keep.size()) == m.cols()) return;
    Matrix out(m.rows(), static_cast<Index>(keep.size()));
    std::vector<std::string> n;
    for (std::size_t i = 0; i < keep.size(); ++i) {
        out.col(static_cast<Index>(i)) = m.col(keep[i]);
        n.push_back(names[static_cast<std::size_t>(keep[i])]);
    }
    m = std::move(out);
    names = std::move(n);
}

// Greedy in column order: a column is kept when it is not (numerically) in
// the span of the columns kept before it.
std::vector<std::string> drop_collinear(Matrix& m, std::vector<std::string>& names, double tol = 1e-8) {
    std::vector<Index> keep;
    std::vector<std::string> dropped;
    Matrix basis(m.rows(), 0);
    for (Index c = 0; c < m.cols(); ++c) {
        Vector v = m.col(c);
        const double norm = v.norm();
        if (basis.cols() > 0) {
            v -= basis * (basis.transpose() * v);
            v -= basis * (basis.transpose() * v);
        }
        if (norm > 0.0 && v.norm() > tol * norm) {
            basis.conservativeResize(Eigen::NoChange, basis.cols() + 1);
            basis.col(basis.cols() - 1) = v / v.norm();
            keep.push_back(c);
        } else {
            dropped.push_back(names[static_cast<std::size_t>(c)]);
        }
    }
    if (!dropped.empty()) {
        Matrix out(m.rows(), static_cast<Index>(keep.size()));
        std::vector<std::string> n;
        for (std::size_t i = 0; i < keep.size(); ++i) {
            out.col(static_cast<Index>(i)) = m.col(keep[i]);
            n.push_back(names[static_cast<std::size_t>(keep[i])]);
        }
        m = std::move(out);
        names = std::move(n);
    }
    return dropped;
}

std::vector<Index> present_goods(const MarketPanel& panel, const std::vector<Index>& rows) {
    std::vector<Index> g;
    g.reserve(rows.size());
    for (Index r : rows) g.push_back(panel.good[static_cast<std::size_t>(r)]);
    return g;
}

Matrix submatrix(const Matrix& m, const std::vector<Index>& idx) {
    const auto k = static_cast<Index>(idx.size());
    Matrix out(k, k);
    for (Index i = 0; i < k; ++i)
        for (Index j = 0; j < k; ++j) out(i, j) = m(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    return out;
}

// Baskets whose goods are all present; rows restricted to present goods.
Matrix market_baskets(const Matrix& a, const std::vector<Index>& present) {
    std::vector<char> in(static_cast<std::size_t>(a.rows()), 0);
    for (Index g : present) in[static_cast<std::size_t>(g)] = 1;
    std::vector<Index> cols;
    for (Index j = 0; j < a.cols(); ++j) {
        bool ok = true;
        for (Index k = 0; k < a.rows() && ok; ++k)
            if (a(k, j) != 0.0 && !in[static_cast<std::size_t>(k)]) ok = false;
        if (ok) cols.push_back(j);
    }
    Matrix out(static_cast<Index>(present.size()), static_cast<Index>(cols.size()));
    for (std::size_t i = 0; i < present.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j)
            out(static_cast<Index>(i), static_cast<Index>(j)) = a(present[i], cols[j]);
    return out;
}

Vector standardize_vec(const Vector& v, double& mean, double& sd) {
    const Standardized s = standardize(v);
    mean = s.mean(0);
    sd = s.sd(0);
    return s.values.col(0);
}

double normal_two_sided(double t) {
    if (!std::isfinite(t)) return std::isnan(t) ? std::numeric_limits<double>::quiet_NaN() : 0.0;
    static const boost::math::normal_distribution<double> nd;
    return 2.0 * boost::math::cdf(boost::math::complement(nd, std::abs(t)));
}

struct PcaBlock {
    Matrix scores;  // kept, standardized
    Matrix top_raw; // top components, unstandardized
    Index kept = 0;
    double top_share = 0.0;
};

PcaBlock design_pca(const MarketPanel& panel, const DesignOptions& opts) {
    Matrix input = opts.fe_in_pca ? hcat({&panel.x, &panel.fe}, panel.rows()) : panel.x;
    const Pca pca = pca_reduce(standardize(input).values, opts.variance_target, opts.top_components);
    PcaBlock out;
    out.kept = pca.kept;
    out.top_share = pca.top_share;
    out.scores = standardize(pca.scores.leftCols(pca.kept)).values;
    out.top_raw = pca.scores.leftCols(pca.top);
    return out;
}

}  // namespace

// ---------------------------------------------------------------- primitives

Standardized standardize(const Matrix& x) {
    Standardized s;
    const auto n = static_cast<double>(x.rows());
    if (x.rows() == 0) throw DataError("cannot standardize an empty design");
    s.mean = x.colwise().mean().transpose();
    s.sd.resize(x.cols());
    s.values.resize(x.rows(), x.cols());
    for (Index c = 0; c < x.cols(); ++c) {
        const Vector centred = x.col(c).array() - s.mean(c);
        const double sd = std::sqrt(centred.squaredNorm() / n);
        if (sd <= 1e-12 * (1.0 + std::abs(s.mean(c)))) {
            s.sd(c) = 0.0;
            s.values.col(c).setZero();
            s.constant_columns.push_back(c);
        } else {
            s.sd(c) = sd;
            s.values.col(c) = centred / sd;
        }
    }
    return s;
}

Matrix spatial_lag(const Matrix& w, const MarketPanel& panel, const Matrix& cols, int power) {
    const auto k = static_cast<Index>(panel.goods.size());
    if (w.rows() != k || w.cols() != k)
        throw DataError("proxy is " + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) + " but the panel has " +
                        std::to_string(k) + " goods");
    if (cols.rows() != panel.rows()) throw DataError("lag input rows differ from panel rows");
    if (power < 0) throw ConfigError("lag power must be nonnegative");
    Matrix out(cols.rows(), cols.cols());
    for (const auto& rows : panel.market_rows()) {
        if (rows.empty()) continue;
        const std::vector<Index> g = present_goods(panel, rows);
        const Matrix wm = submatrix(w, g);
        Matrix v(static_cast<Index>(rows.size()), cols.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) v.row(static_cast<Index>(i)) = cols.row(rows[i]);
        for (int j = 0; j < power; ++j) v = (wm * v).eval();
        for (std::size_t i = 0; i < rows.size(); ++i) out.row(rows[i]) = v.row(static_cast<Index>(i));
    }
    return out;
}

LagBlock spatial_lags(const Matrix& w, const MarketPanel& panel, const Matrix& cols,
                      const std::vector<std::string>& names, int j_max, bool standardize_output) {
    if (j_max < 0) throw ConfigError("j_max must be nonnegative");
    if (static_cast<Index>(names.size()) != cols.cols()) throw DataError("lag column names do not match columns");
    LagBlock out;
    out.values.resize(cols.rows(), cols.cols() * j_max);
    Matrix cur = cols;
    for (int j = 1; j <= j_max; ++j) {
        cur = spatial_lag(w, panel, cur, 1);
        const Standardized s = standardize(cur);
        out.values.middleCols((j - 1) * cols.cols(), cols.cols()) = standardize_output ? s.values : cur;
        for (Index c = 0; c < cols.cols(); ++c) {
            out.names.push_back("W" + std::to_string(j) + "*" + names[static_cast<std::size_t>(c)]);
            out.raw_sd.push_back(s.sd(c));
        }
    }
    return out;
}

Pca pca_reduce(const Matrix& x, double variance_target, Index top_components) {
    if (!(variance_target > 0.0 && variance_target <= 1.0)) throw ConfigError("variance_target must be in (0, 1]");
    if (x.rows() < 2 || x.cols() == 0) throw DataError("PCA needs at least two rows and one column");
    Pca p;
    p.mean = x.colwise().mean().transpose();
    const Matrix c = x.rowwise() - p.mean.transpose();
    const Matrix cov = (c.transpose() * c) / static_cast<double>(x.rows());
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    if (es.info() != Eigen::Success) throw NumericalError("PCA eigendecomposition failed");
    const Index k = x.cols();
    p.eigenvalues.resize(k);
    p.loadings.resize(k, k);
    for (Index i = 0; i < k; ++i) {
        p.eigenvalues(i) = std::max(0.0, es.eigenvalues()(k - 1 - i));
        p.loadings.col(i) = es.eigenvectors().col(k - 1 - i);
    }
    const double total = p.eigenvalues.sum();
    if (total <= 1e-14 * std::max(1.0, cov.diagonal().cwiseAbs().maxCoeff()))
        throw DataError("design is constant; nothing to decompose");
    double acc = 0.0;
    p.kept = k;
    for (Index i = 0; i < k; ++i) {
        acc += p.eigenvalues(i);
        if (acc >= variance_target * total * (1.0 - 1e-12)) {
            p.kept = i + 1;
            break;
        }
    }
    p.kept_share = p.eigenvalues.head(p.kept).sum() / total;
    p.top = std::min(top_components, p.kept);
    p.top_share = p.eigenvalues.head(std::min(top_components, k)).sum() / total;
    p.scores = c * p.loadings;
    return p;
}

// -------------------------------------------------------------------- design

Design build_design(const MarketPanel& panel, const Matrix& w, const DesignOptions& opts) {
    panel.validate();
    if (opts.j_max < 0) throw ConfigError("j_max must be nonnegative");
    const Index n = panel.rows();
    Design d;
    d.j_max = opts.j_max;
    d.y = standardize_vec(panel.quantity, d.y_mean, d.y_sd);
    if (d.y_sd == 0.0) throw DataError("quantities have no variation");
    for (Index r = 0; r < n; ++r) d.clusters.push_back(panel.market(r));

    const PcaBlock pc = design_pca(panel, opts);
    d.n_components_kept = pc.kept;
    d.top_share = pc.top_share;
    std::vector<std::string> pc_names;
    for (Index k = 0; k < pc.kept; ++k) pc_names.push_back("pc" + std::to_string(k + 1));

    // Exogenous block.
    const Matrix ones = Matrix::Ones(n, 1);
    const Matrix fe = standardize(panel.fe).values;
    std::vector<std::string> fe_names = panel.fe_names;
    Matrix fe_kept = fe;
    drop_zero_columns(fe_kept, fe_names);
    Matrix exog_lags(n, 0);
    std::vector<std::string> exog_lag_names;
    if (opts.lag_covariates && opts.j_max > 0) {
        LagBlock lb = spatial_lags(w, panel, pc.scores, pc_names, opts.j_max);
        exog_lags = lb.values;
        exog_lag_names = lb.names;
        drop_zero_columns(exog_lags, exog_lag_names);
    }
    d.exog = hcat({&ones, &fe_kept, &pc.scores, &exog_lags}, n);
    d.exog_names = {"const"};
    append(d.exog_names, fe_names);
    append(d.exog_names, pc_names);
    append(d.exog_names, exog_lag_names);
    d.dropped_exog = drop_collinear(d.exog, d.exog_names);

    // Endogenous block.
    double pmean = 0.0;
    const Vector p_std = standardize_vec(panel.price, pmean, d.price_sd);
    if (d.price_sd == 0.0) throw DataError("prices have no variation");
    const Index top = pc.top_raw.cols();
    Matrix p_int(n, top);
    for (Index k = 0; k < top; ++k) p_int.col(k) = panel.price.cwiseProduct(pc.top_raw.col(k));
    const Standardized p_int_s = standardize(p_int);
    LagBlock p_lags = spatial_lags(w, panel, panel.price, {"price"}, opts.j_max);
    d.endog = Matrix(n, 1 + top + opts.j_max);
    d.endog.col(0) = p_std;
    d.endog.middleCols(1, top) = p_int_s.values;
    d.endog.rightCols(opts.j_max) = p_lags.values;
    d.endog_names = {"price"};
    for (Index k = 0; k < top; ++k) d.endog_names.push_back("price*pc" + std::to_string(k + 1));
    append(d.endog_names, p_lags.names);
    d.price_col = 0;
    for (Index k = 0; k < top; ++k) d.eta_cols.push_back(1 + k);
    for (int j = 0; j < opts.j_max; ++j) {
        d.lag_price_cols.push_back(1 + top + j);
        d.lag_price_sd.push_back(p_lags.raw_sd[static_cast<std::size_t>(j)]);
    }

    // d(column)/d(own price), standardized columns.
    d.own_price_derivative = Matrix::Zero(n, d.endog.cols());
    d.own_price_derivative.col(0).setConstant(1.0 / d.price_sd);
    for (Index k = 0; k < top; ++k)
        if (p_int_s.sd(k) > 0.0) d.own_price_derivative.col(1 + k) = pc.top_raw.col(k) / p_int_s.sd(k);
    if (opts.j_max > 0) {
        for (const auto& rows : panel.market_rows()) {
            if (rows.empty()) continue;
            const Matrix wm = submatrix(w, present_goods(panel, rows));
            Matrix pw = Matrix::Identity(wm.rows(), wm.cols());
            for (int j = 1; j <= opts.j_max; ++j) {
                pw = (pw * wm).eval();
                const double sd = d.lag_price_sd[static_cast<std::size_t>(j - 1)];
                if (sd <= 0.0) continue;
                for (std::size_t i = 0; i < rows.size(); ++i)
                    d.own_price_derivative(rows[i], 1 + top + j - 1) = pw(static_cast<Index>(i), static_cast<Index>(i)) / sd;
            }
        }
    }

    // Excluded instruments.
    const Matrix z = standardize(panel.z).values;
    Matrix z_int(n, top);
    for (Index k = 0; k < top; ++k) z_int.col(k) = panel.z.col(0).cwiseProduct(pc.top_raw.col(k));
    const Matrix z_int_s = standardize(z_int).values;
    LagBlock z_lags = spatial_lags(w, panel, panel.z, panel.z_names, opts.j_max);
    d.instruments = hcat({&z, &z_int_s, &z_lags.values}, n);
    d.instrument_names = panel.z_names;
    for (Index k = 0; k < top; ++k) d.instrument_names.push_back(panel.z_names[0] + "*pc" + std::to_string(k + 1));
    append(d.instrument_names, z_lags.names);
    drop_zero_columns(d.instruments, d.instrument_names);
    return d;
}

Design build_sigma_design(const MarketPanel& panel, const std::vector<Matrix>& sigma, const DesignOptions& opts) {
    panel.validate();
    const auto markets = panel.market_rows();
    if (sigma.size() != markets.size()) throw DataError("need one sigma per market");
    for (std::size_t m = 0; m < markets.size(); ++m)
        if (sigma[m].rows() != static_cast<Index>(markets[m].size()) || sigma[m].cols() != sigma[m].rows())
            throw DataError("sigma for market " + std::to_string(m) + " does not match its goods");
    const Index n = panel.rows();
    auto apply = [&](const Matrix& cols) {
        Matrix out(n, cols.cols());
        for (std::size_t m = 0; m < markets.size(); ++m) {
            const auto& rows = markets[m];
            if (rows.empty()) continue;
            Matrix v(static_cast<Index>(rows.size()), cols.cols());
            for (std::size_t i = 0; i < rows.size(); ++i) v.row(static_cast<Index>(i)) = cols.row(rows[i]);
            v = (sigma[m] * v).eval();
            for (std::size_t i = 0; i < rows.size(); ++i) out.row(rows[i]) = v.row(static_cast<Index>(i));
        }
        return out;
    };

    Design d;
    d.y = standardize_vec(panel.quantity, d.y_mean, d.y_sd);
    if (d.y_sd == 0.0) throw DataError("quantities have no variation");
    for (Index r = 0; r < n; ++r) d.clusters.push_back(panel.market(r));
    const PcaBlock pc = design_pca(panel, opts);
    d.n_components_kept = pc.kept;
    d.top_share = pc.top_share;

    const Matrix ones = Matrix::Ones(n, 1);
    Matrix fe = standardize(panel.fe).values;
    std::vector<std::string> fe_names = panel.fe_names;
    drop_zero_columns(fe, fe_names);
    Matrix spc = standardize(apply(pc.scores)).values;
    std::vector<std::string> pc_names;
    for (Index k = 0; k < pc.kept; ++k) pc_names.push_back("S*pc" + std::to_string(k + 1));
    drop_zero_columns(spc, pc_names);
    d.exog = hcat({&ones, &fe, &spc}, n);
    d.exog_names = {"const"};
    append(d.exog_names, fe_names);
    append(d.exog_names, pc_names);
    d.dropped_exog = drop_collinear(d.exog, d.exog_names);

    const Index top = pc.top_raw.cols();
    Matrix praw(n, 1 + top);
    praw.col(0) = panel.price;
    for (Index k = 0; k < top; ++k) praw.col(1 + k) = panel.price.cwiseProduct(pc.top_raw.col(k));
    const Standardized ps = standardize(apply(praw));
    if (ps.sd(0) == 0.0) throw DataError("sigma-weighted prices have no variation");
    d.endog = ps.values;
    d.endog_names = {"S*price"};
    for (Index k = 0; k < top; ++k) d.endog_names.push_back("S*price*pc" + std::to_string(k + 1));
    d.price_col = 0;
    d.price_sd = ps.sd(0);
    for (Index k = 0; k < top; ++k) d.eta_cols.push_back(1 + k);

    d.own_price_derivative = Matrix::Zero(n, 1 + top);
    for (std::size_t m = 0; m < markets.size(); ++m)
        for (std::size_t i = 0; i < markets[m].size(); ++i) {
            const Index r = markets[m][i];
            const double s = sigma[m](static_cast<Index>(i), static_cast<Index>(i));
            d.own_price_derivative(r, 0) = s / ps.sd(0);
            for (Index k = 0; k < top; ++k)
                if (ps.sd(1 + k) > 0.0) d.own_price_derivative(r, 1 + k) = s * pc.top_raw(r, k) / ps.sd(1 + k);
        }

    const Matrix z = standardize(panel.z).values;
    const Matrix sz = standardize(apply(panel.z)).values;
    Matrix zint(n, top);
    for (Index k = 0; k < top; ++k) zint.col(k) = panel.z.col(0).cwiseProduct(pc.top_raw.col(k));
    const Matrix szint = standardize(apply(zint)).values;
    d.instruments = hcat({&z, &sz, &szint}, n);
    d.instrument_names = panel.z_names;
    for (const auto& s : panel.z_names) d.instrument_names.push_back("S*" + s);
    for (Index k = 0; k < top; ++k) d.instrument_names.push_back("S*" + panel.z_names[0] + "*pc" + std::to_string(k + 1));
    drop_zero_columns(d.instruments, d.instrument_names);
    return d;
}

// ---------------------------------------------------------------------- 2SLS

Vector FitResult::fitted_levels(const Design& d) const {
    return (d.y_mean + d.y_sd * fitted.array()).matrix();
}

FitResult tsls_fit(const Design& d) {
    const Index n = d.rows();
    const Index kx = d.exog.cols(), ky = d.endog.cols(), kz = d.instruments.cols();
    const Index k = kx + ky;
    if (d.exog.rows() != n || d.endog.rows() != n || d.instruments.rows() != n ||
        static_cast<Index>(d.clusters.size()) != n)
        throw DataError("design blocks differ in row count");
    if (!d.y.allFinite() || !d.exog.allFinite() || !d.endog.allFinite() || !d.instruments.allFinite())
        throw InvalidInputError("design contains non-finite values");
    if (kz < ky)
        throw IdentificationError("fewer excluded instruments (" + std::to_string(kz) + ") than endogenous columns (" +
                                      std::to_string(ky) + ")",
                                  d.endog_names);
    if (n <= k) throw InsufficientDataError("fewer observations than regressors");

    // First stage through an orthonormal basis of the instrument space.
    const Matrix zf = hcat({&d.exog, &d.instruments}, n);
    Eigen::ColPivHouseholderQR<Matrix> qz(zf);
    qz.setThreshold(1e-10);
    const Index rz = qz.rank();
    const Matrix q = qz.householderQ() * Matrix::Identity(n, rz);
    const Matrix endog_hat = q * (q.transpose() * d.endog);

    const Matrix xh = hcat({&d.exog, &endog_hat}, n);
    Eigen::ColPivHouseholderQR<Matrix> qx(xh);
    qx.setThreshold(1e-9);
    if (qx.rank() < k) {
        std::vector<std::string> bad;
        for (Index i = qx.rank(); i < k; ++i) {
            const Index c = qx.colsPermutation().indices()(i);
            bad.push_back(c < kx ? d.exog_names[static_cast<std::size_t>(c)] : d.endog_names[static_cast<std::size_t>(c - kx)]);
        }
        std::string msg = "first stage is rank deficient in:";
        for (const auto& b : bad) msg += " " + b;
        throw IdentificationError(msg, bad);
    }

    FitResult f;
    f.mode = "2sls";
    f.names = d.exog_names;
    append(f.names, d.endog_names);
    f.coef = qx.solve(d.y);
    const Matrix x = hcat({&d.exog, &d.endog}, n);
    f.fitted = x * f.coef;
    f.residuals = d.y - f.fitted;
    f.rss = f.residuals.squaredNorm();

    // Cluster-robust sandwich.
    const Matrix bread = (xh.transpose() * xh).ldlt().solve(Matrix::Identity(k, k));
    std::map<Index, Vector> scores;
    for (Index r = 0; r < n; ++r) {
        auto [it, fresh] = scores.try_emplace(d.clusters[static_cast<std::size_t>(r)], Vector::Zero(k));
        it->second += xh.row(r).transpose() * f.residuals(r);
    }
    const auto g = static_cast<Index>(scores.size());
    Matrix meat = Matrix::Zero(k, k);
    double c = 0.0;
    if (g > 1) {
        for (const auto& [id, s] : scores) meat += s * s.transpose();
        c = static_cast<double>(g) / static_cast<double>(g - 1) * static_cast<double>(n - 1) / static_cast<double>(n - k);
    } else {
        for (Index r = 0; r < n; ++r) meat += xh.row(r).transpose() * xh.row(r) * (f.residuals(r) * f.residuals(r));
        c = static_cast<double>(n) / static_cast<double>(n - k);
    }
    const Matrix v = c * bread * meat * bread;
    f.se = v.diagonal().cwiseMax(0.0).cwiseSqrt();
    f.t = f.coef.cwiseQuotient(f.se);
    f.p.resize(k);
    for (Index i = 0; i < k; ++i) f.p(i) = normal_two_sided(f.t(i));

    f.n_obs = n;
    f.n_params = k;
    f.n_clusters = g;
    f.n_instruments = kz;
    f.n_components_kept = d.n_components_kept;
    f.top_share = d.top_share;

    const double tss = (d.y.array() - d.y.mean()).matrix().squaredNorm();
    f.r2 = tss > 0.0 ? 1.0 - f.rss / tss : 0.0;
    f.adj_r2 = 1.0 - (1.0 - f.r2) * static_cast<double>(n - 1) / static_cast<double>(n - k);

    // Wald test of every slope against zero.
    std::vector<Index> slopes;
    for (Index i = 0; i < k; ++i)
        if (f.names[static_cast<std::size_t>(i)] != "const") slopes.push_back(i);
    const auto qn = static_cast<Index>(slopes.size());
    if (qn > 0) {
        Vector b(qn);
        Matrix vs(qn, qn);
        for (Index i = 0; i < qn; ++i) {
            b(i) = f.coef(slopes[static_cast<std::size_t>(i)]);
            for (Index j = 0; j < qn; ++j) vs(i, j) = v(slopes[static_cast<std::size_t>(i)], slopes[static_cast<std::size_t>(j)]);
        }
        f.wald_f = (b.transpose() * linalg::pinv(vs, 1e-12) * b)(0) / static_cast<double>(qn);
        f.wald_df1 = qn;
        f.wald_df2 = n - k;
        const boost::math::fisher_f_distribution<double> fd(static_cast<double>(qn), static_cast<double>(n - k));
        f.wald_p = std::isfinite(f.wald_f) ? boost::math::cdf(boost::math::complement(fd, std::max(0.0, f.wald_f))) : 0.0;
    }

    // Durbin-Wu-Hausman via the augmented regression on first-stage residuals.
    const Matrix vres = d.endog - endog_hat;
    std::vector<Index> live;
    for (Index j = 0; j < ky; ++j)
        if (vres.col(j).norm() > 1e-8 * std::max(1.0, d.endog.col(j).norm())) live.push_back(j);
    f.dwh_df = static_cast<Index>(live.size());
    if (!live.empty()) {
        Matrix va(n, static_cast<Index>(live.size()));
        for (std::size_t j = 0; j < live.size(); ++j) va.col(static_cast<Index>(j)) = vres.col(live[j]);
        const Matrix aug = hcat({&x, &va}, n);
        Eigen::ColPivHouseholderQR<Matrix> qa(aug);
        const Vector ba = qa.solve(d.y);
        const Index ka = aug.cols();
        const double s2 = (d.y - aug * ba).squaredNorm() / static_cast<double>(n - ka);
        const Matrix va_cov = s2 * (aug.transpose() * aug).ldlt().solve(Matrix::Identity(ka, ka));
        const auto nv = static_cast<Index>(live.size());
        const Vector dv = ba.tail(nv);
        const Matrix vv = va_cov.bottomRightCorner(nv, nv);
        f.dwh_chi2 = (dv.transpose() * linalg::pinv(vv, 1e-12) * dv)(0);
        const boost::math::chi_squared_distribution<double> cd(static_cast<double>(nv));
        f.dwh_p = std::isfinite(f.dwh_chi2) ? boost::math::cdf(boost::math::complement(cd, std::max(0.0, f.dwh_chi2))) : 0.0;
    }

    // Weakest first stage: F on the excluded instruments, per endogenous column.
    {
        Eigen::ColPivHouseholderQR<Matrix> qe(d.exog);
        f.first_stage_min_f = std::numeric_limits<double>::infinity();
        const double df2 = static_cast<double>(n - rz);
        const double df1 = static_cast<double>(rz - qe.rank());
        for (Index j = 0; j < ky; ++j) {
            const double rss_r = (d.endog.col(j) - d.exog * qe.solve(d.endog.col(j))).squaredNorm();
            const double rss_u = vres.col(j).squaredNorm();
            const double fj = df1 > 0 && rss_u > 0 ? ((rss_r - rss_u) / df1) / (rss_u / df2) : std::numeric_limits<double>::infinity();
            f.first_stage_min_f = std::min(f.first_stage_min_f, fj);
        }
    }

    // Structural quantities in level units.
    if (d.price_col >= 0) {
        const Index pc = kx + d.price_col;
        f.phi_bar_std = f.coef(pc);
        f.phi_bar = f.coef(pc) * d.y_sd / d.price_sd;
        f.phi_bar_se = f.se(pc) * d.y_sd / d.price_sd;
    }
    f.eta.resize(static_cast<Index>(d.eta_cols.size()));
    for (std::size_t i = 0; i < d.eta_cols.size(); ++i) f.eta(static_cast<Index>(i)) = f.coef(kx + d.eta_cols[i]);
    f.alpha = Vector::Zero(static_cast<Index>(d.lag_price_cols.size()));
    for (std::size_t j = 0; j < d.lag_price_cols.size(); ++j) {
        const double sd = d.lag_price_sd[j];
        const double gamma = sd > 0.0 ? f.coef(kx + d.lag_price_cols[j]) * d.y_sd / sd : 0.0;
        f.alpha(static_cast<Index>(j)) = f.phi_bar != 0.0 ? gamma / f.phi_bar : 0.0;
    }
    return f;
}

// ----------------------------------------------------------- control function

Matrix series_inverse(const Matrix& w, const Vector& alpha, double pd_floor) {
    if (w.rows() != w.cols()) throw DataError("proxy must be square");
    if (!(pd_floor > 0.0 && pd_floor < 1.0)) throw ConfigError("pd_floor must be in (0, 1)");
    const Index k = w.rows();
    Matrix s = Matrix::Identity(k, k);
    Matrix pw = Matrix::Identity(k, k);
    for (Index j = 0; j < alpha.size(); ++j) {
        pw = (pw * w).eval();
        if (std::isfinite(alpha(j))) s += alpha(j) * pw;
    }
    s = (0.5 * (s + s.transpose())).eval();
    const double md = s.diagonal().mean();
    const double target = pd_floor * std::max(md, 1e-12);
    const double lo = linalg::min_eigenvalue(s);
    if (lo < target) s.diagonal().array() += (target - lo) / (1.0 - pd_floor);
    return s;
}

Vector cone_correction(const Vector& q_levels, const MarketPanel& panel, const Matrix& a, const Matrix& m) {
    const auto k = static_cast<Index>(panel.goods.size());
    if (a.rows() != k || m.rows() != k || m.cols() != k) throw DataError("consideration set or M does not match panel goods");
    if (q_levels.size() != panel.rows()) throw DataError("quantity vector does not match panel rows");
    Vector r = Vector::Zero(panel.rows());
    for (const auto& rows : panel.market_rows()) {
        if (rows.empty()) continue;
        const std::vector<Index> g = present_goods(panel, rows);
        Vector qm(static_cast<Index>(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) qm(static_cast<Index>(i)) = q_levels(rows[i]);
        const Matrix am = market_baskets(a, g);
        Vector rm = qm;
        if (am.cols() > 0) {
            const Matrix mm = submatrix(m, g);
            const linalg::NnlsSolution sol = linalg::nnls(am, qm, mm);
            rm = qm - am * sol.z;
            if (rm.norm() <= 1e-10 * std::max(1.0, qm.norm())) rm.setZero();  // solver round-off
        }
        for (std::size_t i = 0; i < rows.size(); ++i) r(rows[i]) = rm(static_cast<Index>(i));
    }
    return r;
}

FitResult nn_control_function_fit(const Design& d, const MarketPanel& panel, const Matrix& w,
                                  const ConsiderationSet& a, const ControlFunctionOptions& opts) {
    if (opts.max_rounds < 1) throw ConfigError("max_rounds must be at least 1");
    if (a.goods() != static_cast<Index>(panel.goods.size()))
        throw DataError("consideration set covers " + std::to_string(a.goods()) + " goods, panel has " +
                        std::to_string(panel.goods.size()));

    auto correction = [&](const FitResult& f) {
        Vector alpha = f.alpha;
        if (!alpha.allFinite()) alpha.setZero();
        const Matrix m_inv = series_inverse(w, alpha, opts.pd_floor);
        const Matrix m = m_inv.ldlt().solve(Matrix::Identity(m_inv.rows(), m_inv.cols()));
        return cone_correction(f.fitted_levels(d), panel, a.matrix(), (0.5 * (m + m.transpose())).eval());
    };

    FitResult fit = tsls_fit(d);
    Vector r = correction(fit);
    std::vector<double> changes;
    bool converged = false;
    int round = 0;
    while (round < opts.max_rounds) {
        ++round;
        Design dd = d;
        dd.y = d.y + r / d.y_sd;
        FitResult next = tsls_fit(dd);
        const Vector r_next = correction(next);
        const double diff = (r_next - r).norm();
        const double scale = r_next.norm();
        const double change = diff == 0.0 ? 0.0 : (scale > 0.0 ? diff / scale : std::numeric_limits<double>::infinity());
        changes.push_back(change);
        fit = std::move(next);
        fit.correction = r;
        r = r_next;
        if (change < opts.tolerance) {
            converged = true;
            break;
        }
    }
    fit.mode = "nn_control_function";
    fit.rounds = round;
    fit.round_changes = changes;
    fit.converged = converged;
    if (!converged) {
        std::ostringstream s;
        s << "control function did not converge in " << round << " rounds; relative changes:";
        for (double c : changes) s << ' ' << c;
        fit.warning = s.str();
    }
    return fit;
}

// -------------------------------------------------------------------- LF grid

Matrix lf_sigma(const Matrix& m_inv, const Matrix& a, const std::vector<Index>& present) {
    const Matrix m = m_inv.ldlt().solve(Matrix::Identity(m_inv.rows(), m_inv.cols()));
    const Matrix mp = submatrix((0.5 * (m + m.transpose())).eval(), present);
    Matrix mp_inv = mp.ldlt().solve(Matrix::Identity(mp.rows(), mp.cols()));
    mp_inv = (0.5 * (mp_inv + mp_inv.transpose())).eval();
    const Matrix ap = market_baskets(a, present);
    if (ap.cols() == 0) return Matrix::Zero(mp.rows(), mp.cols());
    const Matrix inner = ap.transpose() * mp_inv * ap;
    Matrix s = mp_inv * ap * linalg::pinv((0.5 * (inner + inner.transpose())).eval()) * ap.transpose() * mp_inv;
    return (0.5 * (s + s.transpose())).eval();
}

std::vector<Matrix> lf_market_sigmas(const MarketPanel& panel, const Matrix& w, const Matrix& a, const Vector& alpha) {
    const auto k = static_cast<Index>(panel.goods.size());
    if (w.rows() != k || w.cols() != k || a.rows() != k) throw DataError("proxy or consideration set does not match panel goods");
    Matrix m_inv = Matrix::Identity(k, k);
    Matrix pw = Matrix::Identity(k, k);
    for (Index j = 0; j < alpha.size(); ++j) {
        pw = (pw * w).eval();
        m_inv += alpha(j) * pw;
    }
    m_inv = (0.5 * (m_inv + m_inv.transpose())).eval();
    if (linalg::min_eigenvalue(m_inv) <= 1e-10 * std::max(1.0, m_inv.diagonal().mean()))
        throw ModelAssumptionError("series inverse is not positive definite at this grid point");
    std::vector<Matrix> out;
    for (const auto& rows : panel.market_rows()) out.push_back(lf_sigma(m_inv, a, present_goods(panel, rows)));
    return out;
}

FitResult lf_grid_fit(const MarketPanel& panel, const Matrix& w, const ConsiderationSet& a,
                      const std::vector<Vector>& alpha_grid, const DesignOptions& opts) {
    if (alpha_grid.empty()) throw ConfigError("alpha grid is empty");
    std::vector<double> rss;
    FitResult best;
    double best_rss = std::numeric_limits<double>::infinity();
    std::size_t best_i = 0;
    std::string last_error;
    for (std::size_t i = 0; i < alpha_grid.size(); ++i) {
        try {
            const Design d = build_sigma_design(panel, lf_market_sigmas(panel, w, a.matrix(), alpha_grid[i]), opts);
            FitResult f = tsls_fit(d);
            rss.push_back(f.rss);
            if (f.rss < best_rss) {
                best_rss = f.rss;
                best = std::move(f);
                best_i = i;
            }
        } catch (const ModelAssumptionError& e) {
            rss.push_back(std::numeric_limits<double>::infinity());
            last_error = e.what();
        } catch (const IdentificationError& e) {
            rss.push_back(std::numeric_limits<double>::infinity());
            last_error = e.what();
        }
    }
    if (!std::isfinite(best_rss)) throw NumericalError("no grid point could be fitted: " + last_error);
    best.mode = "lf_grid";
    best.lf_alpha = alpha_grid[best_i];
    best.alpha = alpha_grid[best_i];
    best.grid_rss = std::move(rss);
    return best;
}

}  // namespace csd::estimate
