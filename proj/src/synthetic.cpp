#include "csd/synthetic.hpp"

#include "csd/errors.hpp"
#include "csd/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

namespace csd::synthetic {

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint32_t tag) {
    std::seed_seq s{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag};
    return std::mt19937_64(s);
}

std::string label(const char* prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%03d", prefix, i);
    return buf;
}

}  // namespace

MarketSpec corner_free_fixture() {
    MarketSpec s;
    s.stores = 20;
    s.quarters = 16;
    return s;
}

MarketSpec corner_heavy_fixture() {
    MarketSpec s = corner_free_fixture();
    s.zero_share = 0.5;
    s.zero_shift = 2.5;
    return s;
}

estimate::DesignOptions fixture_design_options() {
    estimate::DesignOptions o;
    o.variance_target = 1.0;
    return o;
}

SyntheticMarket synthetic_market(const MarketSpec& spec, std::uint64_t seed) {
    if (spec.groups < 2 || spec.stores < 2 || spec.quarters < 2) throw ConfigError("need at least 2 groups, stores and quarters");
    if (!(spec.phi < 0.0)) throw ConfigError("phi must be negative");
    if (spec.corner_share < 0.0 || spec.pooled_share < 0.0 || spec.zero_share < 0.0 ||
        spec.corner_share + spec.pooled_share + spec.zero_share > 1.0 + 1e-12)
        throw ConfigError("corner_share, pooled_share and zero_share must be shares summing to at most 1");
    auto rng = stream(seed, 0x5a17);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    auto unif = [&](double lo, double hi) { return lo + (hi - lo) * ud(rng); };

    const int g = spec.groups, k = 2 * g;
    SyntheticMarket out;
    out.phi = spec.phi;
    out.alpha = Eigen::Map<const Vector>(spec.alpha.data(), static_cast<Index>(spec.alpha.size()));

    // Proxy: same l3 group 1, same l2 0.5, same l1 0.25.
    out.w = Matrix::Zero(k, k);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
            if (i == j) continue;
            const int gi = i / 2, gj = j / 2;
            out.w(i, j) = gi == gj ? 1.0 : (gi / 2 == gj / 2 ? 0.5 : (gi / 4 == gj / 4 ? 0.25 : 0.0));
        }
    out.w /= out.w.rowwise().sum().maxCoeff();
    out.m_inv = Matrix::Identity(k, k);
    Matrix pw = Matrix::Identity(k, k);
    for (double a : spec.alpha) {
        pw = (pw * out.w).eval();
        out.m_inv += a * pw;
    }
    out.m_inv = (0.5 * (out.m_inv + out.m_inv.transpose())).eval();
    if (linalg::min_eigenvalue(out.m_inv) <= 0.05) throw ConfigError("alpha makes M^-1 nearly singular");
    const Matrix m = out.m_inv.ldlt().solve(Matrix::Identity(k, k));
    const Matrix m_sym = 0.5 * (m + m.transpose());

    // Utilities linear in the category and private-label covariates.
    std::vector<double> b1(static_cast<std::size_t>(g)), b2(static_cast<std::size_t>(g)), b3(static_cast<std::size_t>(g));
    for (int i = 0; i < g; ++i) {
        b1[static_cast<std::size_t>(i)] = unif(-0.4, 0.4);
        b2[static_cast<std::size_t>(i)] = unif(-0.3, 0.3);
        b3[static_cast<std::size_t>(i)] = unif(-0.3, 0.3);
    }
    const double bpl = unif(-0.3, 0.3) + spec.corner_gap;
    out.delta.resize(k);
    Vector cost(k);
    for (int i = 0; i < k; ++i) {
        const int gi = i / 2;
        out.delta(i) = spec.base_utility + b1[static_cast<std::size_t>(gi / 4)] + b2[static_cast<std::size_t>(gi / 2)] +
                       b3[static_cast<std::size_t>(gi)] + (i % 2 ? bpl : 0.0);
        cost(i) = unif(1.5, 3.0);
    }

    // Consideration set by group type.
    std::vector<int> order(static_cast<std::size_t>(g));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const int n_pooled = static_cast<int>(std::lround(spec.pooled_share * g));
    const int n_corner = static_cast<int>(std::lround(spec.corner_share * g));
    const int n_zero = static_cast<int>(std::lround(spec.zero_share * g));
    std::vector<int> type(static_cast<std::size_t>(g), 0);  // 0 free, 1 corner, 2 pooled, 3 free with lowered utility
    for (int i = 0; i < g; ++i) {
        const int idx = order[static_cast<std::size_t>(i)];
        type[static_cast<std::size_t>(idx)] =
            i < n_pooled ? 2 : (i < n_pooled + n_corner ? 1 : (i < n_pooled + n_corner + n_zero ? 3 : 0));
        if (type[static_cast<std::size_t>(idx)] == 3) {
            out.delta(2 * idx) -= spec.zero_shift;
            out.delta(2 * idx + 1) -= spec.zero_shift;
        }
    }
    std::vector<Vector> cols;
    for (int gi = 0; gi < g; ++gi) {
        const int a = 2 * gi, b = a + 1;
        auto e = [&](int i) {
            Vector v = Vector::Zero(k);
            v(i) = 1.0;
            return v;
        };
        Vector both = Vector::Zero(k);
        both(a) = both(b) = 1.0;
        switch (type[static_cast<std::size_t>(gi)]) {
            case 0:
            case 3: cols.push_back(e(a)); cols.push_back(e(b)); break;
            case 1: cols.push_back(e(a)); cols.push_back(both); break;
            default: cols.push_back(both); break;
        }
    }
    out.a.resize(k, static_cast<Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) out.a.col(static_cast<Index>(j)) = cols[j];
    const bool identity = n_pooled == 0 && n_corner == 0;

    // Panel.
    estimate::MarketPanel& p = out.panel;
    for (int i = 0; i < k; ++i) {
        p.goods.push_back(label("g", i));
        const int gi = i / 2;
        p.category.push_back({label("L1-", gi / 4), label("L2-", gi / 2), label("L3-", gi)});
        p.private_label.push_back(i % 2 == 1);
    }
    for (int s = 0; s < spec.stores; ++s) p.stores.push_back(label("s", s));
    for (int q = 0; q < spec.quarters; ++q) {
        p.quarter_codes.push_back(2020 * 4 + q);
        p.quarters.push_back(estimate::quarter_label(2020 * 4 + q));
    }
    Matrix shock(g, spec.quarters);
    for (int gi = 0; gi < g; ++gi)
        for (int q = 0; q < spec.quarters; ++q) shock(gi, q) = spec.cost_sd * nd(rng);

    const Index rows = static_cast<Index>(k) * spec.stores * spec.quarters;
    p.quantity.resize(rows);
    p.price.resize(rows);
    p.revenue.resize(rows);
    p.transactions.resize(static_cast<Index>(spec.stores) * spec.quarters);
    out.unconstrained.resize(rows);
    Index r = 0, moved = 0;
    Matrix lf;
    if (spec.lf_sigma_form) {
        std::vector<Index> all(static_cast<std::size_t>(k));
        std::iota(all.begin(), all.end(), Index{0});
        lf = estimate::lf_sigma(out.m_inv, out.a, all);
    }
    for (int s = 0; s < spec.stores; ++s)
        for (int q = 0; q < spec.quarters; ++q) {
            const double n_tx = std::round(spec.transactions * std::exp(spec.traffic_sd * nd(rng)));
            p.transactions(static_cast<Index>(s) * spec.quarters + q) = std::max(1.0, n_tx);
            Vector price(k), xi(k);
            for (int i = 0; i < k; ++i) {
                xi(i) = spec.shock_sd * nd(rng);
                price(i) = std::max(0.05, 1.3 * cost(i) * std::exp(shock(i / 2, q)) + spec.endogeneity * xi(i) + 0.03 * nd(rng));
            }
            const Vector v = out.delta + spec.phi * price + xi;
            const Vector qu = out.m_inv * v;
            Vector qo;
            if (spec.lf_sigma_form)
                qo = lf * v;
            else if (identity && qu.minCoeff() >= 0.0)
                qo = qu;
            else
                qo = out.a * linalg::nnls(out.a, qu, m_sym).z;
            for (int i = 0; i < k; ++i) {
                p.good.push_back(i);
                p.store.push_back(s);
                p.quarter.push_back(q);
                out.unconstrained(r) = qu(i);
                if (std::abs(qo(i) - qu(i)) > 1e-9 * std::max(1.0, std::abs(qu(i)))) ++moved;
                p.quantity(r) = qo(i) + spec.noise_sd * nd(rng);
                p.price(r) = price(i);
                p.revenue(r) = std::max(0.0, p.quantity(r)) * price(i) * p.transactions(static_cast<Index>(s) * spec.quarters + q);
                ++r;
            }
        }
    out.corner_rows = static_cast<double>(moved) / static_cast<double>(rows);
    estimate::finalize_panel(p);
    return out;
}

std::vector<estimate::SaleRecord> synthetic_sales(const SyntheticMarket& market, double units, std::uint64_t seed) {
    if (!(units > 0.0)) throw ConfigError("units must be positive");
    auto rng = stream(seed, 0x5a1e);
    const estimate::MarketPanel& p = market.panel;
    const auto nq = static_cast<Index>(p.quarters.size());
    std::vector<estimate::SaleRecord> out;
    const auto markets = p.market_rows();
    for (Index mk = 0; mk < p.markets(); ++mk) {
        const auto& rows = markets[static_cast<std::size_t>(mk)];
        const Index s = mk / nq, q = mk % nq;
        const double n_tx = p.transactions(mk);
        Vector qm = Vector::Zero(market.a.rows());
        Vector price = Vector::Zero(market.a.rows());
        for (Index r : rows) {
            qm(p.good[static_cast<std::size_t>(r)]) = std::max(0.0, p.quantity(r));
            price(p.good[static_cast<std::size_t>(r)]) = p.price(r);
        }
        const Vector z = linalg::nnls(market.a, qm).z;
        std::vector<Index> baskets;
        for (Index j = 0; j < z.size(); ++j) {
            const auto c = static_cast<long>(std::lround(n_tx * z(j) / units));
            for (long t = 0; t < c; ++t) baskets.push_back(j);
        }
        std::shuffle(baskets.begin(), baskets.end(), rng);
        if (static_cast<double>(baskets.size()) > n_tx)
            throw ConfigError("units too small: " + std::to_string(baskets.size()) + " baskets exceed traffic " +
                              std::to_string(static_cast<long>(n_tx)) + " in market " + std::to_string(mk));
        const auto total = static_cast<long>(n_tx);
        const int code = p.quarter_codes[static_cast<std::size_t>(q)];
        for (long t = 0; t < total; ++t) {
            const int month = (code % 4) * 3 + static_cast<int>(t % 3) + 1;
            char date[32];
            std::snprintf(date, sizeof date, "%04d-%02d-%02d", code / 4, month, static_cast<int>(1 + t % 28));
            const std::string id = p.stores[static_cast<std::size_t>(s)] + "-" + p.quarters[static_cast<std::size_t>(q)] + "-" + std::to_string(t);
            if (t < static_cast<long>(baskets.size())) {
                const Index j = baskets[static_cast<std::size_t>(t)];
                for (Index gd = 0; gd < market.a.rows(); ++gd) {
                    if (market.a(gd, j) == 0.0) continue;
                    estimate::SaleRecord rec;
                    rec.transaction_id = id;
                    rec.store_id = p.stores[static_cast<std::size_t>(s)];
                    rec.date = date;
                    rec.product_id = p.goods[static_cast<std::size_t>(gd)];
                    rec.quantity = units * market.a(gd, j);
                    rec.unit_price = price(gd);
                    rec.gross_value = rec.quantity * rec.unit_price;
                    rec.discount = 0.0;
                    const auto& c = p.category[static_cast<std::size_t>(gd)];
                    rec.category_l1 = c[0];
                    rec.category_l2 = c[1];
                    rec.category_l3 = c[2];
                    rec.private_label = p.private_label[static_cast<std::size_t>(gd)];
                    out.push_back(std::move(rec));
                }
            } else {
                estimate::SaleRecord rec;
                rec.transaction_id = id;
                rec.store_id = p.stores[static_cast<std::size_t>(s)];
                rec.date = date;
                rec.product_id = "outside";
                rec.quantity = 1.0;
                rec.unit_price = 1.0;
                rec.gross_value = 1.0;
                rec.category_l1 = rec.category_l2 = rec.category_l3 = "other";
                out.push_back(std::move(rec));
            }
        }
    }
    return out;
}

estimate::ParticipationData synthetic_participation(double delta, double strength, double endogeneity, int stores,
                                                    int quarters, std::uint64_t seed) {
    if (stores < 1 || quarters < 3) throw ConfigError("need at least one store and three quarters");
    auto rng = stream(seed, 0x9a27);
    std::normal_distribution<double> nd(0.0, 1.0);
    estimate::ParticipationData d;
    d.log_n.resize(stores, quarters);
    d.log_p.resize(stores, quarters);
    d.instrument.resize(stores, quarters);
    Vector common(quarters);
    common(0) = 0.0;
    for (int t = 1; t < quarters; ++t) common(t) = common(t - 1) + 0.03 * nd(rng);
    for (int s = 0; s < stores; ++s) {
        d.log_n(s, 0) = std::log(1000.0) + 0.1 * nd(rng);
        d.log_p(s, 0) = std::log(2.0) + 0.05 * nd(rng);
        d.instrument(s, 0) = std::log(2.0) + 0.05 * nd(rng);
        for (int t = 1; t < quarters; ++t) {
            const double dz = common(t) - common(t - 1) + 0.03 * nd(rng);
            const double u = 0.02 * nd(rng);
            const double dp = strength * dz + endogeneity * u + 0.01 * nd(rng);
            d.instrument(s, t) = d.instrument(s, t - 1) + dz;
            d.log_p(s, t) = d.log_p(s, t - 1) + dp;
            d.log_n(s, t) = d.log_n(s, t - 1) + delta * dp + 0.005 + u;
        }
    }
    return d;
}

}  // namespace csd::synthetic
