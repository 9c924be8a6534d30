#include "csd/estimate.hpp"

#include "csd/errors.hpp"

#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace csd::estimate {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double weighted_quantile(std::vector<std::pair<double, double>> vw, double pct) {
    if (vw.empty()) return kNaN;
    std::sort(vw.begin(), vw.end());
    double total = 0.0;
    for (const auto& [v, w] : vw) total += w;
    double acc = 0.0;
    for (const auto& [v, w] : vw) {
        acc += w;
        if (acc >= pct / 100.0 * total * (1.0 - 1e-12)) return v;
    }
    return vw.back().first;
}

}  // namespace

MarkupTable markups(const FitResult& fit, const Design& d, const MarketPanel& panel, const MarkupOptions& opts) {
    if (d.rows() != panel.rows()) throw DataError("design and panel differ in rows");
    const Index kx = d.exog.cols();
    if (fit.coef.size() != kx + d.endog.cols()) throw DataError("fit does not belong to this design");
    const Vector slope = d.y_sd * (d.own_price_derivative * fit.coef.tail(d.endog.cols()));
    return markups_from_slopes(slope, panel, opts);
}

MarkupTable markups_from_slopes(const Vector& own_slope, const MarketPanel& panel, const MarkupOptions& opts) {
    panel.validate();
    const Index n = panel.rows();
    if (own_slope.size() != n) throw DataError("one slope per panel row required");
    const auto nq = static_cast<Index>(panel.quarters.size());
    const auto ns = static_cast<Index>(panel.stores.size());

    // d ln P / d p_i within each market.
    Vector dlogp = Vector::Zero(n);
    if (opts.participation_elasticity != 0.0) {
        for (const auto& rows : panel.market_rows()) {
            if (rows.empty()) continue;
            double num = 0.0, den = 0.0;
            for (Index r : rows) {
                const double w = opts.revenue_weighted_index ? panel.revenue(r) : 1.0;
                num += w * panel.price(r);
                den += w;
            }
            const double idx = num / den;
            for (Index r : rows) {
                const double w = opts.revenue_weighted_index ? panel.revenue(r) : 1.0;
                dlogp(r) = (w / den) / idx;
            }
        }
    }

    MarkupTable t;
    t.own_slope = own_slope;
    t.elasticity.resize(n);
    t.lerner.resize(n);
    t.weight = Vector::Zero(n);
    t.excluded.assign(static_cast<std::size_t>(n), false);
    for (Index r = 0; r < n; ++r) {
        const double q = panel.quantity(r), p = panel.price(r);
        const double j_int = own_slope(r) + q * opts.participation_elasticity * dlogp(r);
        const double e = q > 0.0 ? j_int * p / q : kNaN;
        t.elasticity(r) = e;
        if (!(e < 0.0)) {
            t.excluded[static_cast<std::size_t>(r)] = true;
            t.lerner(r) = kNaN;
            std::ostringstream s;
            s << panel.goods[static_cast<std::size_t>(panel.good[static_cast<std::size_t>(r)])] << " at "
              << panel.stores[static_cast<std::size_t>(panel.store[static_cast<std::size_t>(r)])] << " in "
              << panel.quarters[static_cast<std::size_t>(panel.quarter[static_cast<std::size_t>(r)])]
              << ": own elasticity " << e << " is not negative";
            t.diagnostics.push_back(s.str());
        } else {
            t.lerner(r) = -1.0 / e;
        }
    }

    Vector qrev = Vector::Zero(nq);
    for (Index r = 0; r < n; ++r)
        if (!t.excluded[static_cast<std::size_t>(r)]) qrev(panel.quarter[static_cast<std::size_t>(r)]) += panel.revenue(r);
    for (Index r = 0; r < n; ++r)
        if (!t.excluded[static_cast<std::size_t>(r)] && qrev(panel.quarter[static_cast<std::size_t>(r)]) > 0.0)
            t.weight(r) = panel.revenue(r) / qrev(panel.quarter[static_cast<std::size_t>(r)]);

    t.mean = Vector::Constant(nq, kNaN);
    t.moving_average = Vector::Constant(nq, kNaN);
    t.percentile = Matrix::Constant(nq, static_cast<Index>(opts.percentiles.size()), kNaN);
    t.store_mean = Matrix::Constant(ns, nq, kNaN);
    std::vector<std::vector<std::pair<double, double>>> per_q(static_cast<std::size_t>(nq));
    Matrix sw = Matrix::Zero(ns, nq), swl = Matrix::Zero(ns, nq);
    for (Index r = 0; r < n; ++r) {
        if (t.excluded[static_cast<std::size_t>(r)]) continue;
        const Index q = panel.quarter[static_cast<std::size_t>(r)], s = panel.store[static_cast<std::size_t>(r)];
        per_q[static_cast<std::size_t>(q)].emplace_back(t.lerner(r), t.weight(r));
        sw(s, q) += panel.revenue(r);
        swl(s, q) += panel.revenue(r) * t.lerner(r);
    }
    for (Index q = 0; q < nq; ++q) {
        const auto& v = per_q[static_cast<std::size_t>(q)];
        if (v.empty()) continue;
        double m = 0.0;
        for (const auto& [l, w] : v) m += l * w;
        t.mean(q) = m;
        for (std::size_t k = 0; k < opts.percentiles.size(); ++k)
            t.percentile(q, static_cast<Index>(k)) = weighted_quantile(v, opts.percentiles[k]);
        for (Index s = 0; s < ns; ++s)
            if (sw(s, q) > 0.0) t.store_mean(s, q) = swl(s, q) / sw(s, q);
    }
    for (Index q = 3; q < nq; ++q) t.moving_average(q) = t.mean.segment(q - 3, 4).mean();
    return t;
}

MarkupIndices markup_indices(const MarkupTable& table, const MarketPanel& panel, int bins) {
    const auto nq = static_cast<Index>(panel.quarters.size());
    if (nq < 2) throw DataError("mark-up indices need at least two quarters");
    if (bins < 1) throw ConfigError("bins must be positive");
    const Index n = panel.rows();
    if (table.lerner.size() != n || table.weight.size() != n || table.excluded.size() != static_cast<std::size_t>(n))
        throw DataError("mark-up table does not match panel");
    if (panel.category.size() != panel.goods.size()) throw DataError("panel lacks per-good categories");

    using Item = std::pair<Index, Index>;  // (good, store)
    std::vector<std::map<Item, std::pair<double, double>>> byq(static_cast<std::size_t>(nq));  // item -> (L, weight)
    for (Index r = 0; r < n; ++r) {
        if (table.excluded[static_cast<std::size_t>(r)]) continue;
        byq[static_cast<std::size_t>(panel.quarter[static_cast<std::size_t>(r)])][{panel.good[static_cast<std::size_t>(r)], panel.store[static_cast<std::size_t>(r)]}] = {
            table.lerner(r), table.weight(r)};
    }

    MarkupIndices out;
    out.bins = bins;
    auto fixed_basket = [&](const std::map<Item, std::pair<double, double>>& base, std::size_t& dropped) {
        Vector series(nq);
        std::map<Item, char> outside;
        for (Index q = 0; q < nq; ++q) {
            double num = 0.0, den = 0.0;
            for (const auto& [item, lw] : byq[static_cast<std::size_t>(q)]) {
                auto it = base.find(item);
                if (it == base.end()) {
                    outside[item] = 1;
                    continue;
                }
                num += it->second.second * lw.first;
                den += it->second.second;
            }
            series(q) = den > 0.0 ? num / den : kNaN;
        }
        dropped = outside.size();
        return series;
    };
    out.laspeyres = fixed_basket(byq.front(), out.dropped_laspeyres);
    out.paasche = fixed_basket(byq.back(), out.dropped_paasche);

    // Within-l1 quantile bins per quarter.
    std::vector<std::map<Item, int>> bin(static_cast<std::size_t>(nq));
    for (Index q = 0; q < nq; ++q) {
        std::map<std::string, std::vector<std::pair<double, Item>>> cats;
        for (const auto& [item, lw] : byq[static_cast<std::size_t>(q)])
            cats[panel.category[static_cast<std::size_t>(item.first)][0]].emplace_back(lw.first, item);
        for (auto& [c, v] : cats) {
            std::sort(v.begin(), v.end());
            const auto m = v.size();
            for (std::size_t i = 0; i < m; ++i)
                bin[static_cast<std::size_t>(q)][v[i].second] = static_cast<int>(i * static_cast<std::size_t>(bins) / m);
        }
    }
    out.transition_counts = Matrix::Zero(bins, bins);
    out.persistence = Vector::Constant(nq, kNaN);
    for (Index q = 1; q < nq; ++q) {
        int stay = 0, total = 0;
        for (const auto& [item, b] : bin[static_cast<std::size_t>(q)]) {
            auto it = bin[static_cast<std::size_t>(q - 1)].find(item);
            if (it == bin[static_cast<std::size_t>(q - 1)].end()) continue;
            out.transition_counts(it->second, b) += 1.0;
            stay += it->second == b ? 1 : 0;
            ++total;
        }
        if (total > 0) out.persistence(q) = static_cast<double>(stay) / total;
    }
    out.transition = out.transition_counts;
    for (Index i = 0; i < bins; ++i) {
        const double s = out.transition.row(i).sum();
        if (s > 0.0) out.transition.row(i) /= s;
    }
    return out;
}

// -------------------------------------------------------------- participation

ParticipationData participation_data(const MarketPanel& panel, bool revenue_weighted) {
    panel.validate();
    const auto ns = static_cast<Index>(panel.stores.size()), nq = static_cast<Index>(panel.quarters.size());
    ParticipationData d;
    d.log_n.resize(ns, nq);
    d.log_p = Matrix::Constant(ns, nq, kNaN);
    d.instrument = Matrix::Constant(ns, nq, kNaN);
    for (Index s = 0; s < ns; ++s)
        for (Index q = 0; q < nq; ++q) d.log_n(s, q) = std::log(panel.transactions(s * nq + q));
    const auto markets = panel.market_rows();
    for (Index m = 0; m < panel.markets(); ++m) {
        const auto& rows = markets[static_cast<std::size_t>(m)];
        if (rows.empty()) continue;
        double wp = 0.0, wz = 0.0, ws = 0.0;
        for (Index r : rows) {
            const double w = revenue_weighted ? panel.revenue(r) : 1.0;
            wp += w * panel.price(r);
            wz += w * panel.z(r, 0);
            ws += w;
        }
        d.log_p(m / nq, m % nq) = std::log(wp / ws);
        d.instrument(m / nq, m % nq) = std::log(wz / ws);
    }
    return d;
}

namespace {

struct FdSample {
    Vector dy, dx, dz, trend;
};

FdSample fd_sample(const ParticipationData& d, int lag) {
    std::vector<double> dy, dx, dz, tr;
    for (Index s = 0; s < d.log_n.rows(); ++s)
        for (Index q = 1 + lag; q < d.log_n.cols(); ++q) {
            const double a = d.log_n(s, q) - d.log_n(s, q - 1);
            const double b = d.log_p(s, q) - d.log_p(s, q - 1);
            const double c = d.instrument(s, q - lag) - d.instrument(s, q - lag - 1);
            if (!std::isfinite(a) || !std::isfinite(b) || !std::isfinite(c)) continue;
            dy.push_back(a);
            dx.push_back(b);
            dz.push_back(c);
            tr.push_back(static_cast<double>(q));
        }
    FdSample out;
    out.dy = Eigen::Map<Vector>(dy.data(), static_cast<Index>(dy.size()));
    out.dx = Eigen::Map<Vector>(dx.data(), static_cast<Index>(dx.size()));
    out.dz = Eigen::Map<Vector>(dz.data(), static_cast<Index>(dz.size()));
    out.trend = Eigen::Map<Vector>(tr.data(), static_cast<Index>(tr.size()));
    return out;
}

Matrix controls(const FdSample& s) {
    Matrix w(s.dy.size(), 2);
    w.col(0).setOnes();
    w.col(1) = s.trend;
    return w;
}

double rss_on(const Matrix& x, const Vector& y) {
    Eigen::ColPivHouseholderQR<Matrix> qr(x);
    return (y - x * qr.solve(y)).squaredNorm();
}

// F statistic for adding dz to the controls, with its degrees of freedom.
double added_f(const FdSample& s, const Vector& y, double& df2) {
    const Matrix w = controls(s);
    Matrix wz(w.rows(), 3);
    wz << w, s.dz;
    Eigen::ColPivHouseholderQR<Matrix> qr(wz);
    df2 = static_cast<double>(s.dy.size() - qr.rank());
    const double ru = rss_on(wz, y), rr = rss_on(w, y);
    if (qr.rank() < 3) return kNaN;
    if (ru <= 1e-300) return rr > 1e-300 ? std::numeric_limits<double>::infinity() : kNaN;
    return (rr - ru) / (ru / df2);
}

}  // namespace

double anderson_rubin_p(const ParticipationData& data, double delta0, int lag) {
    const FdSample s = fd_sample(data, lag);
    if (s.dy.size() < 8) throw InsufficientDataError("fewer than 8 differenced observations");
    double df2 = 0.0;
    const double f = added_f(s, s.dy - delta0 * s.dx, df2);
    if (std::isnan(f)) return 1.0;
    if (!std::isfinite(f)) return 0.0;
    const boost::math::fisher_f_distribution<double> fd(1.0, df2);
    return boost::math::cdf(boost::math::complement(fd, std::max(0.0, f)));
}

ParticipationResult participation_elasticity(const ParticipationData& data, int max_lag) {
    if (data.log_n.rows() != data.log_p.rows() || data.log_n.cols() != data.log_p.cols() ||
        data.instrument.rows() != data.log_n.rows() || data.instrument.cols() != data.log_n.cols())
        throw DataError("participation series differ in shape");
    if (max_lag < 0) throw ConfigError("max_lag must be nonnegative");
    int best_lag = -1;
    double best_f = -1.0;
    Index most = 0;
    for (int lag = 0; lag <= max_lag; ++lag) {
        const FdSample s = fd_sample(data, lag);
        most = std::max(most, s.dy.size());
        if (s.dy.size() < 8) continue;
        double df2 = 0.0;
        const double f = added_f(s, s.dx, df2);
        if (std::isfinite(f) && f > best_f) {
            best_f = f;
            best_lag = lag;
        }
    }
    if (most < 8) throw InsufficientDataError("fewer than 8 differenced observations (" + std::to_string(most) + ")");
    if (best_lag < 0)
        throw IdentificationError("first-stage F is undefined: the price index does not vary", {"dlnP"});

    const FdSample s = fd_sample(data, best_lag);
    const Index n = s.dy.size();
    Matrix z(n, 3), x(n, 3);
    z << controls(s), s.dz;
    x << controls(s), s.dx;
    const Matrix zx = z.transpose() * x;
    Eigen::FullPivLU<Matrix> lu(zx);
    if (!lu.isInvertible()) throw IdentificationError("instrument does not move the price index", {"dlnP"});
    const Vector b = lu.solve(z.transpose() * s.dy);
    const Vector u = s.dy - x * b;
    Matrix meat = Matrix::Zero(3, 3);
    for (Index i = 0; i < n; ++i) meat += z.row(i).transpose() * z.row(i) * (u(i) * u(i));
    const Matrix zx_inv = lu.inverse();
    const Matrix v = zx_inv * meat * zx_inv.transpose() * (static_cast<double>(n) / static_cast<double>(n - 3));

    ParticipationResult r;
    r.delta = b(2);
    r.se = std::sqrt(std::max(0.0, v(2, 2)));
    r.lag = best_lag;
    r.n = n;
    r.first_stage_f = best_f;
    const boost::math::students_t_distribution<double> td(static_cast<double>(n - 3));
    if (r.se > 0.0)
        r.p_value = 2.0 * boost::math::cdf(boost::math::complement(td, std::abs(r.delta / r.se)));
    else
        r.p_value = r.delta == 0.0 ? 1.0 : 0.0;
    r.ar_p_value = anderson_rubin_p(data, 0.0, best_lag);
    return r;
}

ParticipationResult participation_elasticity(const MarketPanel& panel, bool revenue_weighted, int max_lag) {
    return participation_elasticity(participation_data(panel, revenue_weighted), max_lag);
}

}  // namespace csd::estimate
