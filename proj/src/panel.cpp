#include "csd/estimate.hpp"

#include "csd/errors.hpp"
#include "csd/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

namespace csd::estimate {

namespace {

const std::vector<std::string> kColumns = {
    "transaction_id", "store_id",   "date",       "product_id",  "quantity",    "unit_price",
    "gross_value",    "discount",   "category_l1", "category_l2", "category_l3", "private_label"};

bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    const char* b = s.data();
    const char* e = b + s.size();
    auto [ptr, ec] = std::from_chars(b, e, out);
    return ec == std::errc() && ptr == e && std::isfinite(out);
}

bool parse_date(const std::string& s, int& year, int& month) {
    if (s.size() < 10 || s[4] != '-' || s[7] != '-') return false;
    int day = 0;
    auto num = [&](std::size_t pos, std::size_t len, int& v) {
        auto [ptr, ec] = std::from_chars(s.data() + pos, s.data() + pos + len, v);
        return ec == std::errc() && ptr == s.data() + pos + len;
    };
    if (!num(0, 4, year) || !num(5, 2, month) || !num(8, 2, day)) return false;
    return month >= 1 && month <= 12 && day >= 1 && day <= 31;
}

template <class T>
Index index_of(const std::vector<T>& sorted, const T& v) {
    return static_cast<Index>(std::lower_bound(sorted.begin(), sorted.end(), v) - sorted.begin());
}

}  // namespace

SalesLog parse_sales_csv(const std::string& text, double max_reject_share) {
    const io::CsvTable t = io::parse_csv(text);
    if (t.header.empty()) throw DataError("transaction file is empty");
    std::vector<std::size_t> col(kColumns.size());
    for (std::size_t i = 0; i < kColumns.size(); ++i) {
        auto it = std::find(t.header.begin(), t.header.end(), kColumns[i]);
        if (it == t.header.end()) throw DataError("transaction file lacks column " + kColumns[i]);
        col[i] = static_cast<std::size_t>(it - t.header.begin());
    }
    if (t.rows.empty()) throw DataError("transaction file has no rows");

    SalesLog out;
    out.records.reserve(t.rows.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        SaleRecord rec;
        bool ok = row.size() == t.header.size();
        int y = 0, m = 0;
        if (ok) {
            rec.transaction_id = row[col[0]];
            rec.store_id = row[col[1]];
            rec.date = row[col[2]];
            rec.product_id = row[col[3]];
            rec.category_l1 = row[col[8]];
            rec.category_l2 = row[col[9]];
            rec.category_l3 = row[col[10]];
            const std::string& pl = row[col[11]];
            ok = !rec.transaction_id.empty() && !rec.store_id.empty() && !rec.product_id.empty() &&
                 parse_date(rec.date, y, m) && parse_double(row[col[4]], rec.quantity) && rec.quantity > 0.0 &&
                 parse_double(row[col[5]], rec.unit_price) && rec.unit_price >= 0.0 &&
                 parse_double(row[col[6]], rec.gross_value) && parse_double(row[col[7]], rec.discount) &&
                 (pl == "0" || pl == "1");
            rec.private_label = pl == "1";
        }
        if (ok)
            out.records.push_back(std::move(rec));
        else
            out.rejected_lines.push_back(t.line_numbers[r]);
    }
    const double share = static_cast<double>(out.rejected_lines.size()) / static_cast<double>(t.rows.size());
    if (share > max_reject_share) {
        std::ostringstream msg;
        msg << out.rejected_lines.size() << " of " << t.rows.size() << " rows rejected (lines";
        for (std::size_t i = 0; i < std::min<std::size_t>(10, out.rejected_lines.size()); ++i)
            msg << ' ' << out.rejected_lines[i];
        msg << (out.rejected_lines.size() > 10 ? " ...)" : ")");
        throw DataError(msg.str());
    }
    return out;
}

std::string sales_csv(const std::vector<SaleRecord>& records) {
    std::string out;
    for (std::size_t i = 0; i < kColumns.size(); ++i) out += (i ? "," : "") + kColumns[i];
    out += '\n';
    for (const SaleRecord& r : records) {
        out += io::csv_field(r.transaction_id) + ',' + io::csv_field(r.store_id) + ',' + r.date + ',' +
               io::csv_field(r.product_id) + ',' + io::format_number(r.quantity) + ',' +
               io::format_number(r.unit_price) + ',' + io::format_number(r.gross_value) + ',' +
               io::format_number(r.discount) + ',' + io::csv_field(r.category_l1) + ',' +
               io::csv_field(r.category_l2) + ',' + io::csv_field(r.category_l3) + ',' +
               (r.private_label ? "1" : "0") + '\n';
    }
    return out;
}

int quarter_of(const std::string& iso_date) {
    int y = 0, m = 0;
    if (!parse_date(iso_date, y, m)) throw DataError("malformed date: " + iso_date);
    return y * 4 + (m - 1) / 3;
}

int month_of(const std::string& iso_date) {
    int y = 0, m = 0;
    if (!parse_date(iso_date, y, m)) throw DataError("malformed date: " + iso_date);
    return y * 12 + (m - 1);
}

std::string quarter_label(int quarter) {
    return std::to_string(quarter / 4) + "Q" + std::to_string(quarter % 4 + 1);
}

copurchase::TransactionLog transaction_log(const SalesLog& log) {
    std::vector<copurchase::TransactionLog::Entry> entries;
    entries.reserve(log.records.size());
    for (const SaleRecord& r : log.records)
        entries.push_back({r.product_id, r.store_id + "/" + r.transaction_id, r.quantity});
    return copurchase::TransactionLog::from_entries(entries);
}

std::string Attrition::describe() const {
    std::ostringstream s;
    s << "input " << input_rows << ", fewer than minimum transactions " << few_transactions << ", zero price "
      << zero_price << ", no price variation " << no_price_variation << ", no competitor " << no_competitor
      << ", kept " << kept;
    return s.str();
}

Index MarketPanel::market(Index row) const {
    return store[static_cast<std::size_t>(row)] * static_cast<Index>(quarters.size()) +
           quarter[static_cast<std::size_t>(row)];
}

std::vector<std::vector<Index>> MarketPanel::market_rows() const {
    std::vector<std::vector<Index>> out(static_cast<std::size_t>(markets()));
    for (Index r = 0; r < rows(); ++r) out[static_cast<std::size_t>(market(r))].push_back(r);
    for (auto& v : out)
        std::sort(v.begin(), v.end(), [&](Index a, Index b) {
            return good[static_cast<std::size_t>(a)] < good[static_cast<std::size_t>(b)];
        });
    return out;
}

void MarketPanel::validate() const {
    const std::size_t n = good.size();
    if (n == 0) throw DataError("panel is empty");
    if (store.size() != n || quarter.size() != n || static_cast<std::size_t>(quantity.size()) != n ||
        static_cast<std::size_t>(price.size()) != n || static_cast<std::size_t>(revenue.size()) != n)
        throw DataError("panel row fields differ in length");
    if (category.size() != goods.size() || private_label.size() != goods.size())
        throw DataError("panel good attributes differ in length");
    if (transactions.size() != markets()) throw DataError("panel needs one transaction count per market");
    std::set<std::tuple<Index, Index, Index>> keys;
    for (std::size_t r = 0; r < n; ++r) {
        if (good[r] < 0 || good[r] >= static_cast<Index>(goods.size()) || store[r] < 0 ||
            store[r] >= static_cast<Index>(stores.size()) || quarter[r] < 0 ||
            quarter[r] >= static_cast<Index>(quarters.size()))
            throw DataError("panel row " + std::to_string(r) + " has an out-of-range key");
        if (!keys.emplace(good[r], store[r], quarter[r]).second)
            throw DataError("duplicate panel key (" + goods[static_cast<std::size_t>(good[r])] + ", " +
                            stores[static_cast<std::size_t>(store[r])] + ", " +
                            quarters[static_cast<std::size_t>(quarter[r])] + ")");
    }
    if (!quantity.allFinite() || !price.allFinite() || (price.array() <= 0.0).any())
        throw DataError("panel quantities and prices must be finite with positive prices");
    if ((transactions.array() <= 0.0).any()) throw DataError("every market needs a positive transaction count");
}

MarketPanel build_panel(const SalesLog& log, const PanelFilters& filters) {
    const auto& recs = log.records;
    Attrition att;
    att.input_rows = recs.size();
    std::vector<char> keep(recs.size(), 1);

    // Filter 1: transaction counts per product.
    std::unordered_map<std::string, std::set<std::string>> tx_per_product;
    for (const SaleRecord& r : recs) tx_per_product[r.product_id].insert(r.store_id + "/" + r.transaction_id);
    for (std::size_t i = 0; i < recs.size(); ++i)
        if (static_cast<int>(tx_per_product[recs[i].product_id].size()) < filters.min_transactions) {
            keep[i] = 0;
            ++att.few_transactions;
        }

    // Filter 2: any sale at zero price removes the product.
    if (filters.drop_zero_price) {
        std::set<std::string> zero;
        for (std::size_t i = 0; i < recs.size(); ++i)
            if (keep[i] && recs[i].unit_price <= 0.0) zero.insert(recs[i].product_id);
        for (std::size_t i = 0; i < recs.size(); ++i)
            if (keep[i] && zero.count(recs[i].product_id)) {
                keep[i] = 0;
                ++att.zero_price;
            }
    }

    // Filter 3: no price variation.
    if (filters.drop_constant_price) {
        std::unordered_map<std::string, std::pair<double, double>> range;
        for (std::size_t i = 0; i < recs.size(); ++i) {
            if (!keep[i]) continue;
            auto [it, fresh] = range.try_emplace(recs[i].product_id, recs[i].unit_price, recs[i].unit_price);
            if (!fresh) {
                it->second.first = std::min(it->second.first, recs[i].unit_price);
                it->second.second = std::max(it->second.second, recs[i].unit_price);
            }
        }
        for (std::size_t i = 0; i < recs.size(); ++i) {
            if (!keep[i]) continue;
            const auto& [lo, hi] = range[recs[i].product_id];
            if (hi - lo <= 1e-12 * std::max(1.0, hi)) {
                keep[i] = 0;
                ++att.no_price_variation;
            }
        }
    }

    // Filter 4: a same-l3 rival must be sold at another store that month.
    if (filters.require_competitor) {
        std::map<std::pair<std::string, int>, std::map<std::string, std::set<std::string>>> sold;
        for (std::size_t i = 0; i < recs.size(); ++i)
            if (keep[i]) sold[{recs[i].category_l3, month_of(recs[i].date)}][recs[i].store_id].insert(recs[i].product_id);
        std::vector<char> drop(recs.size(), 0);
        for (std::size_t i = 0; i < recs.size(); ++i) {
            if (!keep[i]) continue;
            const auto& by_store = sold[{recs[i].category_l3, month_of(recs[i].date)}];
            bool rival = false;
            for (const auto& [st, prods] : by_store) {
                if (st == recs[i].store_id) continue;
                if (prods.size() > 1 || (prods.size() == 1 && !prods.count(recs[i].product_id))) {
                    rival = true;
                    break;
                }
            }
            if (!rival) drop[i] = 1;
        }
        for (std::size_t i = 0; i < recs.size(); ++i)
            if (drop[i]) {
                keep[i] = 0;
                ++att.no_competitor;
            }
    }
    att.kept = static_cast<std::size_t>(std::count(keep.begin(), keep.end(), 1));
    if (att.kept == 0) throw DataError("panel is empty after filtering: " + att.describe());

    MarketPanel p;
    p.attrition = att;
    std::set<std::string> goods, stores;
    std::set<int> quarters;
    for (std::size_t i = 0; i < recs.size(); ++i)
        if (keep[i]) {
            goods.insert(recs[i].product_id);
            stores.insert(recs[i].store_id);
            quarters.insert(quarter_of(recs[i].date));
        }
    p.goods.assign(goods.begin(), goods.end());
    p.stores.assign(stores.begin(), stores.end());
    p.quarter_codes.assign(quarters.begin(), quarters.end());
    for (int q : p.quarter_codes) p.quarters.push_back(quarter_label(q));
    p.category.resize(p.goods.size());
    p.private_label.assign(p.goods.size(), false);
    std::vector<char> seen(p.goods.size(), 0);

    struct Cell {
        double units = 0.0, spend = 0.0, revenue = 0.0;
    };
    std::map<std::tuple<Index, Index, Index>, Cell> cells;
    for (std::size_t i = 0; i < recs.size(); ++i) {
        if (!keep[i]) continue;
        const SaleRecord& r = recs[i];
        const auto g = static_cast<std::size_t>(index_of(p.goods, r.product_id));
        if (!seen[g]) {
            p.category[g] = {r.category_l1, r.category_l2, r.category_l3};
            p.private_label[g] = r.private_label;
            seen[g] = 1;
        }
        Cell& c = cells[{static_cast<Index>(g), index_of(p.stores, r.store_id), index_of(p.quarter_codes, quarter_of(r.date))}];
        c.units += r.quantity;
        c.spend += r.quantity * r.unit_price;
        c.revenue += r.gross_value > 0.0 ? r.gross_value : r.quantity * r.unit_price;
    }

    // Store traffic counts every transaction of the raw log.
    p.transactions = Vector::Zero(p.markets());
    std::set<std::tuple<Index, Index, std::string>> tx;
    for (const SaleRecord& r : recs) {
        auto s = std::lower_bound(p.stores.begin(), p.stores.end(), r.store_id);
        auto q = std::lower_bound(p.quarter_codes.begin(), p.quarter_codes.end(), quarter_of(r.date));
        if (s == p.stores.end() || *s != r.store_id || q == p.quarter_codes.end() || *q != quarter_of(r.date)) continue;
        tx.emplace(s - p.stores.begin(), q - p.quarter_codes.begin(), r.transaction_id);
    }
    for (const auto& [s, q, id] : tx) p.transactions(s * static_cast<Index>(p.quarters.size()) + q) += 1.0;

    const auto n = static_cast<Index>(cells.size());
    p.quantity.resize(n);
    p.price.resize(n);
    p.revenue.resize(n);
    Index r = 0;
    for (const auto& [key, c] : cells) {
        const auto& [g, s, q] = key;
        p.good.push_back(g);
        p.store.push_back(s);
        p.quarter.push_back(q);
        const Index m = s * static_cast<Index>(p.quarters.size()) + q;
        p.quantity(r) = c.units / p.transactions(m);
        p.price(r) = c.spend / c.units;
        p.revenue(r) = c.revenue;
        ++r;
    }
    finalize_panel(p);
    return p;
}

void finalize_panel(MarketPanel& p) {
    p.validate();
    const Index n = p.rows();
    const auto nq = static_cast<Index>(p.quarters.size());

    // Covariates.
    std::vector<std::string> names;
    std::array<std::vector<std::string>, 3> levels;
    for (int l = 0; l < 3; ++l) {
        std::set<std::string> v;
        for (const auto& c : p.category) v.insert(c[static_cast<std::size_t>(l)]);
        levels[static_cast<std::size_t>(l)].assign(v.begin(), v.end());
        for (const auto& s : v) names.push_back("l" + std::to_string(l + 1) + "=" + s);
    }
    names.push_back("private_label");
    names.push_back("store_presence");
    const auto nx = static_cast<Index>(names.size());

    std::map<std::pair<Index, Index>, int> presence;  // (good, quarter) -> stores
    for (Index r = 0; r < n; ++r) ++presence[{p.good[static_cast<std::size_t>(r)], p.quarter[static_cast<std::size_t>(r)]}];

    p.x = Matrix::Zero(n, nx);
    for (Index r = 0; r < n; ++r) {
        const auto g = static_cast<std::size_t>(p.good[static_cast<std::size_t>(r)]);
        Index off = 0;
        for (std::size_t l = 0; l < 3; ++l) {
            p.x(r, off + index_of(levels[l], p.category[g][l])) = 1.0;
            off += static_cast<Index>(levels[l].size());
        }
        p.x(r, off) = p.private_label[g] ? 1.0 : 0.0;
        p.x(r, off + 1) = presence[{static_cast<Index>(g), p.quarter[static_cast<std::size_t>(r)]}];
    }
    p.x_names = names;

    // Fixed effects, first level dropped.
    const auto ns = static_cast<Index>(p.stores.size());
    p.fe = Matrix::Zero(n, (ns - 1) + (nq - 1));
    p.fe_names.clear();
    for (Index s = 1; s < ns; ++s) p.fe_names.push_back("store=" + p.stores[static_cast<std::size_t>(s)]);
    for (Index q = 1; q < nq; ++q) p.fe_names.push_back("quarter=" + p.quarters[static_cast<std::size_t>(q)]);
    for (Index r = 0; r < n; ++r) {
        const Index s = p.store[static_cast<std::size_t>(r)], q = p.quarter[static_cast<std::size_t>(r)];
        if (s > 0) p.fe(r, s - 1) = 1.0;
        if (q > 0) p.fe(r, (ns - 1) + q - 1) = 1.0;
    }

    // Instruments.
    std::map<std::tuple<Index, Index, Index>, Index> row_of;
    for (Index r = 0; r < n; ++r)
        row_of[{p.good[static_cast<std::size_t>(r)], p.store[static_cast<std::size_t>(r)], p.quarter[static_cast<std::size_t>(r)]}] = r;

    // (l3, quarter) -> rows
    std::map<std::pair<std::string, Index>, std::vector<Index>> by_l3;
    std::map<Index, std::vector<Index>> by_quarter;
    for (Index r = 0; r < n; ++r) {
        const auto g = static_cast<std::size_t>(p.good[static_cast<std::size_t>(r)]);
        by_l3[{p.category[g][2], p.quarter[static_cast<std::size_t>(r)]}].push_back(r);
        by_quarter[p.quarter[static_cast<std::size_t>(r)]].push_back(r);
    }
    Vector comp(n), counts[3];
    for (auto& c : counts) c = Vector::Zero(n);
    std::array<std::map<std::tuple<std::string, Index, Index>, int>, 3> cat_count;  // (cat, store, quarter)
    for (Index r = 0; r < n; ++r) {
        const auto g = static_cast<std::size_t>(p.good[static_cast<std::size_t>(r)]);
        for (std::size_t l = 0; l < 3; ++l)
            ++cat_count[l][{p.category[g][l], p.store[static_cast<std::size_t>(r)], p.quarter[static_cast<std::size_t>(r)]}];
    }
    for (Index r = 0; r < n; ++r) {
        const auto ur = static_cast<std::size_t>(r);
        const auto g = static_cast<std::size_t>(p.good[ur]);
        double sum = 0.0;
        int k = 0;
        for (Index o : by_l3[{p.category[g][2], p.quarter[ur]}]) {
            const auto uo = static_cast<std::size_t>(o);
            if (p.store[uo] == p.store[ur] || p.good[uo] == p.good[ur]) continue;
            sum += p.price(o);
            ++k;
        }
        if (k == 0)  // no same-l3 rival elsewhere: all other goods at other stores
            for (Index o : by_quarter[p.quarter[ur]]) {
                const auto uo = static_cast<std::size_t>(o);
                if (p.store[uo] == p.store[ur] || p.good[uo] == p.good[ur]) continue;
                sum += p.price(o);
                ++k;
            }
        if (k == 0) throw DataError("competitor price needs rival sales at another store in " + p.quarters[static_cast<std::size_t>(p.quarter[ur])]);
        comp(r) = sum / k;
        for (std::size_t l = 0; l < 3; ++l)
            counts[l](r) = cat_count[l][{p.category[g][l], p.store[ur], p.quarter[ur]}] - 1;
    }

    p.filled_lags = 0;
    auto lag = [&](const Vector& v) {
        Vector out(n);
        for (Index r = 0; r < n; ++r) {
            const auto ur = static_cast<std::size_t>(r);
            auto it = p.quarter[ur] > 0 ? row_of.find({p.good[ur], p.store[ur], p.quarter[ur] - 1}) : row_of.end();
            if (it == row_of.end()) {
                out(r) = v(r);
                ++p.filled_lags;
            } else {
                out(r) = v(it->second);
            }
        }
        return out;
    };
    p.z.resize(n, 8);
    p.z.col(0) = comp;
    p.z.col(1) = lag(comp);
    for (std::size_t l = 0; l < 3; ++l) {
        p.z.col(2 + static_cast<Index>(l)) = counts[l];
        p.z.col(5 + static_cast<Index>(l)) = lag(counts[l]);
    }
    p.z_names = {"comp_price", "comp_price_lag1", "comp_n_l1", "comp_n_l2", "comp_n_l3",
                 "comp_n_l1_lag1", "comp_n_l2_lag1", "comp_n_l3_lag1"};
}

ConsiderationSet observed_consideration_set(const SalesLog& log, const MarketPanel& panel) {
    std::map<std::string, std::map<Index, double>> tx;
    for (const SaleRecord& r : log.records) {
        auto it = std::lower_bound(panel.goods.begin(), panel.goods.end(), r.product_id);
        if (it == panel.goods.end() || *it != r.product_id) continue;
        tx[r.store_id + "/" + r.transaction_id][it - panel.goods.begin()] += r.quantity;
    }
    std::set<std::vector<std::pair<Index, double>>> unique;
    for (const auto& [id, basket] : tx) unique.emplace(basket.begin(), basket.end());
    Matrix a = Matrix::Zero(static_cast<Index>(panel.goods.size()), static_cast<Index>(unique.size()));
    Index c = 0;
    for (const auto& b : unique) {
        for (const auto& [g, q] : b) a(g, c) = q;
        ++c;
    }
    std::vector<std::string> labels;
    for (Index j = 0; j < a.cols(); ++j) labels.push_back("b" + std::to_string(j));
    return ConsiderationSet(a, panel.goods, std::move(labels));
}

}  // namespace csd::estimate
