#include "cli.hpp"

#include "csd/copurchase.hpp"
#include "csd/equilibrium.hpp"
#include "csd/errors.hpp"
#include "csd/estimate.hpp"
#include "csd/io.hpp"
#include "csd/simulate.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

namespace csd::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using io::format_number;

// ------------------------------------------------------------------ config

// Reads keys off a JSON object and rejects whatever is left unread.
class Keys {
public:
    Keys(json j, std::string scope) : j_(std::move(j)), scope_(std::move(scope)) {
        if (!j_.is_object()) throw ConfigError(scope_ + ": config must be a JSON object");
    }

    template <class T>
    T get(const std::string& key, T fallback) {
        seen_.insert(key);
        resolved_[key] = fallback;
        if (!j_.contains(key) || j_[key].is_null()) return fallback;
        try {
            T v = j_[key].get<T>();
            resolved_[key] = v;
            return v;
        } catch (const json::exception&) {
            throw ConfigError(scope_ + ": key '" + key + "' has the wrong type");
        }
    }

    json raw(const std::string& key) {
        seen_.insert(key);
        const json v = j_.contains(key) ? j_[key] : json();
        resolved_[key] = v;
        return v;
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw ConfigError(scope_ + ": unknown key '" + k + "'");
    }

    // Every key with its effective value; hashed for provenance.
    const json& resolved() const { return resolved_; }

private:
    json j_;
    std::string scope_;
    std::set<std::string> seen_;
    json resolved_ = json::object();
};

struct Context {
    std::string command;
    json config = json::object();
    fs::path base;  // relative paths resolve here
    fs::path out;
    std::optional<std::uint64_t> seed;
    int threads = 1;
    std::string hash;  // of the resolved config

    std::string path(const std::string& p) const {
        const fs::path q(p);
        return (q.is_absolute() ? q : base / q).string();
    }

    void finalize_hash(const json& resolved) {
        json h = {{"command", command}, {"config", resolved}};
        hash = io::sha256_hex(h.dump());
    }

    std::string provenance() const { return io::provenance_line(hash); }

    json stamp() const { return {{"version", io::version()}, {"config_sha256", hash}, {"command", command}}; }

    void write(const std::string& name, const std::string& contents) const {
        io::write_atomic((out / name).string(), contents);
    }
};

json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json vec_json(const Vector& v) {
    json a = json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(num(v(i)));
    return a;
}

Matrix json_matrix(const json& j, const std::string& what) {
    if (!j.is_array() || j.empty() || !j[0].is_array()) throw ConfigError(what + " must be a non-empty array of rows");
    Matrix m(static_cast<Index>(j.size()), static_cast<Index>(j[0].size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_array() || j[i].size() != j[0].size()) throw ConfigError(what + " rows differ in length");
        for (std::size_t k = 0; k < j[i].size(); ++k) {
            if (!j[i][k].is_number()) throw ConfigError(what + " must be numeric");
            m(static_cast<Index>(i), static_cast<Index>(k)) = j[i][k].get<double>();
        }
    }
    return m;
}

Vector json_vector(const json& j, const std::string& what) {
    if (!j.is_array() || j.empty()) throw ConfigError(what + " must be a non-empty array");
    Vector v(static_cast<Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw ConfigError(what + " must be numeric");
        v(static_cast<Index>(i)) = j[i].get<double>();
    }
    return v;
}

estimate::SalesLog read_sales(const Context& ctx, const std::string& key_path, double max_reject_share) {
    if (key_path.empty()) throw ConfigError(ctx.command + ": 'transactions' path is required");
    const std::string p = ctx.path(key_path);
    if (!fs::exists(p)) throw DataError("input file not found: " + p);
    return estimate::parse_sales_csv(io::read_file(p), max_reject_share);
}

// Drops leading "#" provenance lines.
std::string strip_comments(const std::string& text) {
    std::istringstream in(text);
    std::string line, out;
    while (std::getline(in, line))
        if (line.empty() || line[0] != '#') out += line + "\n";
    return out;
}

// Square labelled matrix as written by io::dense_csv.
std::pair<Matrix, std::vector<std::string>> read_labelled_matrix(const std::string& path) {
    if (!fs::exists(path)) throw DataError("input file not found: " + path);
    const io::CsvTable t = io::parse_csv(strip_comments(io::read_file(path)));
    const auto k = static_cast<Index>(t.rows.size());
    if (k == 0 || static_cast<Index>(t.header.size()) != k + 1) throw DataError(path + ": expected a square labelled matrix");
    Matrix m(k, k);
    std::vector<std::string> labels;
    for (Index i = 0; i < k; ++i) {
        const auto& row = t.rows[static_cast<std::size_t>(i)];
        if (static_cast<Index>(row.size()) != k + 1) throw DataError(path + ": ragged row " + std::to_string(i + 1));
        labels.push_back(row[0]);
        for (Index c = 0; c < k; ++c) {
            const std::string& cell = row[static_cast<std::size_t>(c + 1)];
            const auto [end, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), m(i, c));
            if (ec != std::errc() || end != cell.data() + cell.size())
                throw DataError(path + ": non-numeric entry in row " + std::to_string(i + 1));
        }
    }
    return {m, labels};
}

// Rows/columns of `m` (labelled `labels`) in the order of `goods`.
Matrix align(const Matrix& m, const std::vector<std::string>& labels, const std::vector<std::string>& goods,
             const std::string& what) {
    std::map<std::string, Index> at;
    for (std::size_t i = 0; i < labels.size(); ++i) at[labels[i]] = static_cast<Index>(i);
    std::vector<Index> idx;
    for (const auto& g : goods) {
        auto it = at.find(g);
        if (it == at.end()) throw DataError(what + " has no entry for panel good '" + g + "'");
        idx.push_back(it->second);
    }
    const auto k = static_cast<Index>(idx.size());
    Matrix out(k, k);
    for (Index i = 0; i < k; ++i)
        for (Index j = 0; j < k; ++j) out(i, j) = m(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    return out;
}

Matrix max_row_scaled(const Matrix& w) {
    const double s = w.rowwise().sum().maxCoeff();
    return s > 0.0 ? Matrix(w / s) : w;
}

// ---------------------------------------------------------------- simulate

int cmd_simulate(Context& ctx) {
    Keys k(ctx.config, "simulate");
    simulate::SimConfig c;
    c.n_draws = k.get("n_draws", c.n_draws);
    c.n_goods_base = k.get("n_goods_base", c.n_goods_base);
    c.n_baskets_base = k.get("n_baskets_base", c.n_baskets_base);
    c.max_extra_rows_cols = k.get("max_extra_rows_cols", c.max_extra_rows_cols);
    c.phi = k.get("phi", c.phi);
    c.proxy_mix = k.get("proxy_mix", c.proxy_mix);
    c.seed = k.get("seed", c.seed);
    c.zero_share = k.get("zero_share", c.zero_share);
    c.max_entry = k.get("max_entry", c.max_entry);
    c.m_rand_offdiag = k.get("m_rand_offdiag", c.m_rand_offdiag);
    c.delta_lo = k.get("delta_lo", c.delta_lo);
    c.delta_hi = k.get("delta_hi", c.delta_hi);
    c.proxy_scale = k.get("proxy_scale", c.proxy_scale);
    c.pd_floor = k.get("pd_floor", c.pd_floor);
    c.sign_threshold = k.get("sign_threshold", c.sign_threshold);
    c.max_failure_share = k.get("max_failure_share", c.max_failure_share);
    c.force_identity = k.get("force_identity", c.force_identity);
    const std::string pricing = k.get<std::string>("firm_pricing", "linear_foc");
    if (pricing == "linear_foc") c.firm_pricing = simulate::FirmPricing::LinearFoc;
    else if (pricing == "local_nash") c.firm_pricing = simulate::FirmPricing::LocalNash;
    else throw ConfigError("simulate: firm_pricing must be 'linear_foc' or 'local_nash'");
    const bool per_draw = k.get("write_draws", false);
    k.finish();
    if (ctx.seed) c.seed = *ctx.seed;
    c.threads = ctx.threads;
    c.validate();

    json resolved = k.resolved();
    resolved["seed"] = c.seed;
    ctx.finalize_hash(resolved);

    const simulate::StudyResult r = simulate::run_study(c);
    ctx.write("study.csv", simulate::study_csv(r, ctx.provenance()));
    ctx.write("study.json", simulate::study_json(r, ctx.hash));
    if (per_draw) {
        std::string nd = ctx.provenance();
        for (const auto& d : r.draws) nd += simulate::draw_ndjson(d);
        ctx.write("draws.ndjson", nd);
    }
    std::cout << "simulate: " << r.draws.size() << " draws, " << r.failures << " failures\n";
    for (const auto& row : r.rows)
        std::cout << "  " << row.metric << ": " << format_number(row.pct_draws) << "% " << row.relation << "\n";
    return 0;
}

// ------------------------------------------------------------------- proxy

int cmd_proxy(Context& ctx) {
    Keys k(ctx.config, "proxy");
    const std::string tx = k.get<std::string>("transactions", "");
    const double alpha_c = k.get("alpha_c", 0.01);
    const double alpha_l = k.get("alpha_l", 0.01);
    const std::string path = k.get<std::string>("path", "sparse");
    const double max_reject = k.get("max_reject_share", 0.001);
    k.finish();
    if (path != "sparse" && path != "dense") throw ConfigError("proxy: path must be 'sparse' or 'dense'");
    ctx.finalize_hash(k.resolved());

    const estimate::SalesLog sales = read_sales(ctx, tx, max_reject);
    if (sales.records.empty()) throw DataError("proxy: no transactions in input");
    const copurchase::TransactionLog log = estimate::transaction_log(sales);
    const copurchase::ProxyMatrices p = copurchase::build_proxy(log, alpha_c, alpha_l,
                                                                path == "dense" ? copurchase::Path::Dense : copurchase::Path::Sparse);
    const auto& labels = log.product_ids();
    ctx.write("w_c.txt", io::sparse_text(p.w_c, labels, ctx.provenance(), true));
    ctx.write("w_s.txt", io::sparse_text(p.w_s, labels, ctx.provenance(), true));
    ctx.write("w_c.csv", io::dense_csv(p.w_c, labels, ctx.provenance()));
    ctx.write("w_s.csv", io::dense_csv(p.w_s, labels, ctx.provenance()));
    ctx.write("mu.csv", io::dense_csv(p.mu, labels, ctx.provenance()));

    const Index kk = log.products();
    auto pairs = [&](const Matrix& m) {
        Index c = 0;
        for (Index i = 0; i < kk; ++i)
            for (Index j = i + 1; j < kk; ++j) c += m(i, j) != 0.0;
        return c;
    };
    const double all_pairs = kk > 1 ? static_cast<double>(kk * (kk - 1) / 2) : 1.0;
    json s = ctx.stamp();
    s["products"] = kk;
    s["transactions"] = log.transactions();
    s["rejected_lines"] = sales.rejected_lines;
    s["complement_pairs"] = pairs(p.a_c);
    s["substitute_pairs"] = pairs(p.a_l);
    s["w_c_density"] = static_cast<double>(pairs(p.w_c)) / all_pairs;
    s["w_s_density"] = static_cast<double>(pairs(p.w_s)) / all_pairs;
    ctx.write("proxy_summary.json", io::json_dump(s));
    std::cout << "proxy: " << kk << " products, " << log.transactions() << " transactions, " << pairs(p.a_c)
              << " complement and " << pairs(p.a_l) << " substitute pairs\n";
    return 0;
}

// ---------------------------------------------------------------- estimate

json fit_json(const estimate::FitResult& f) {
    json j;
    j["mode"] = f.mode;
    json coefs = json::array();
    for (std::size_t i = 0; i < f.names.size(); ++i) {
        const auto ii = static_cast<Index>(i);
        coefs.push_back({{"name", f.names[i]}, {"coef", num(f.coef(ii))}, {"se", num(f.se(ii))}, {"t", num(f.t(ii))},
                         {"p", num(f.p(ii))}});
    }
    j["coefficients"] = coefs;
    j["phi_bar"] = num(f.phi_bar);
    j["phi_bar_se"] = num(f.phi_bar_se);
    j["phi_bar_std"] = num(f.phi_bar_std);
    j["eta"] = vec_json(f.eta);
    j["alpha"] = vec_json(f.alpha);
    j["r2"] = num(f.r2);
    j["adj_r2"] = num(f.adj_r2);
    j["wald_f"] = num(f.wald_f);
    j["wald_df"] = {f.wald_df1, f.wald_df2};
    j["wald_p"] = num(f.wald_p);
    j["dwh_chi2"] = num(f.dwh_chi2);
    j["dwh_df"] = f.dwh_df;
    j["dwh_p"] = num(f.dwh_p);
    j["first_stage_min_f"] = num(f.first_stage_min_f);
    j["n_obs"] = f.n_obs;
    j["n_params"] = f.n_params;
    j["n_clusters"] = f.n_clusters;
    j["n_instruments"] = f.n_instruments;
    j["n_components_kept"] = f.n_components_kept;
    j["top_share"] = num(f.top_share);
    j["rss"] = num(f.rss);
    j["rounds"] = f.rounds;
    j["converged"] = f.converged;
    j["round_changes"] = f.round_changes;
    if (!f.warning.empty()) j["warning"] = f.warning;
    if (f.correction.size() > 0) {
        j["correction_norm"] = num(f.correction.norm());
        j["correction_residual"] = vec_json(f.correction);
    }
    if (f.lf_alpha.size() > 0) {
        j["lf_alpha"] = vec_json(f.lf_alpha);
        j["grid_rss"] = f.grid_rss;
    }
    return j;
}

json diagnostics_json(const estimate::FitResult& f) {
    return {{"adj_r2", num(f.adj_r2)},
            {"r2", num(f.r2)},
            {"wald_f", num(f.wald_f)},
            {"wald_df", {f.wald_df1, f.wald_df2}},
            {"wald_p", num(f.wald_p)},
            {"dwh_chi2", num(f.dwh_chi2)},
            {"dwh_df", f.dwh_df},
            {"dwh_p", num(f.dwh_p)},
            {"first_stage_min_f", num(f.first_stage_min_f)},
            {"n_obs", f.n_obs},
            {"n_params", f.n_params},
            {"n_clusters", f.n_clusters},
            {"n_instruments", f.n_instruments},
            {"n_components_kept", f.n_components_kept},
            {"top_share", num(f.top_share)},
            {"phi_bar", num(f.phi_bar)},
            {"phi_bar_se", num(f.phi_bar_se)},
            {"alpha", vec_json(f.alpha)},
            {"rounds", f.rounds},
            {"converged", f.converged}};
}

// Design restricted to `rows`, with exogenous columns that become constant
// or collinear on the subset removed.
estimate::Design subset_design(const estimate::Design& d, const std::vector<Index>& rows) {
    estimate::Design s = d;
    const auto n = static_cast<Index>(rows.size());
    auto take = [&](const Matrix& m) {
        Matrix out(n, m.cols());
        for (Index i = 0; i < n; ++i) out.row(i) = m.row(rows[static_cast<std::size_t>(i)]);
        return out;
    };
    s.y = take(d.y);
    s.endog = take(d.endog);
    s.instruments = take(d.instruments);
    s.own_price_derivative = take(d.own_price_derivative);
    s.clusters.clear();
    for (Index r : rows) s.clusters.push_back(d.clusters[static_cast<std::size_t>(r)]);
    const Matrix ex = take(d.exog);
    std::vector<Index> keep;
    Matrix basis(n, 0);
    for (Index c = 0; c < ex.cols(); ++c) {
        Vector v = ex.col(c);
        const double norm = v.norm();
        if (basis.cols() > 0) v -= basis * (basis.transpose() * v);
        if (norm > 0.0 && v.norm() > 1e-8 * norm) {
            basis.conservativeResize(Eigen::NoChange, basis.cols() + 1);
            basis.col(basis.cols() - 1) = v / v.norm();
            keep.push_back(c);
        }
    }
    s.exog.resize(n, static_cast<Index>(keep.size()));
    s.exog_names.clear();
    for (std::size_t i = 0; i < keep.size(); ++i) {
        s.exog.col(static_cast<Index>(i)) = ex.col(keep[i]);
        s.exog_names.push_back(d.exog_names[static_cast<std::size_t>(keep[i])]);
    }
    return s;
}

// Adjusted R^2 on the last quarter of a fit estimated on the others.
double holdout_adj_r2(const estimate::MarketPanel& panel, const estimate::Design& d) {
    const auto last = static_cast<Index>(panel.quarters.size()) - 1;
    std::vector<Index> train, test;
    for (Index r = 0; r < panel.rows(); ++r)
        (panel.quarter[static_cast<std::size_t>(r)] == last ? test : train).push_back(r);
    if (test.empty() || train.empty()) throw DataError("holdout selection needs at least two quarters");
    const estimate::Design dt = subset_design(d, train);
    const estimate::FitResult f = estimate::tsls_fit(dt);
    const estimate::Design dh = subset_design(d, test);
    // Coefficients map by name onto the holdout columns.
    std::map<std::string, double> coef;
    for (std::size_t i = 0; i < f.names.size(); ++i) coef[f.names[i]] = f.coef(static_cast<Index>(i));
    Vector pred = Vector::Zero(static_cast<Index>(test.size()));
    for (Index c = 0; c < d.exog.cols(); ++c) {
        auto it = coef.find(d.exog_names[static_cast<std::size_t>(c)]);
        if (it == coef.end()) continue;
        for (std::size_t i = 0; i < test.size(); ++i) pred(static_cast<Index>(i)) += it->second * d.exog(test[i], c);
    }
    for (Index c = 0; c < d.endog.cols(); ++c) {
        const double b = coef.at(d.endog_names[static_cast<std::size_t>(c)]);
        for (std::size_t i = 0; i < test.size(); ++i) pred(static_cast<Index>(i)) += b * d.endog(test[i], c);
    }
    const double rss = (dh.y - pred).squaredNorm();
    const double tss = (dh.y.array() - dh.y.mean()).matrix().squaredNorm();
    const auto nh = static_cast<double>(test.size());
    const auto kp = static_cast<double>(f.n_params);
    const double r2 = tss > 0.0 ? 1.0 - rss / tss : 0.0;
    return nh - kp > 0.0 ? 1.0 - (1.0 - r2) * (nh - 1.0) / (nh - kp) : r2;
}

std::string markup_csv(const estimate::MarkupTable& t, const estimate::MarketPanel& p, const std::string& prov) {
    std::string out = prov + "good,store,quarter,price,quantity,revenue,own_slope,elasticity,lerner,weight,excluded\n";
    for (Index r = 0; r < p.rows(); ++r) {
        const auto ur = static_cast<std::size_t>(r);
        out += io::csv_field(p.goods[static_cast<std::size_t>(p.good[ur])]) + ',' +
               io::csv_field(p.stores[static_cast<std::size_t>(p.store[ur])]) + ',' +
               p.quarters[static_cast<std::size_t>(p.quarter[ur])] + ',' + format_number(p.price(r)) + ',' +
               format_number(p.quantity(r)) + ',' + format_number(p.revenue(r)) + ',' + format_number(t.own_slope(r)) +
               ',' + format_number(t.elasticity(r)) + ',' + format_number(t.lerner(r)) + ',' +
               format_number(t.weight(r)) + ',' + (t.excluded[ur] ? "1" : "0") + '\n';
    }
    return out;
}

int cmd_estimate(Context& ctx) {
    Keys k(ctx.config, "estimate");
    const std::string tx = k.get<std::string>("transactions", "");
    const double max_reject = k.get("max_reject_share", 0.001);
    estimate::PanelFilters filters;
    filters.min_transactions = k.get("min_transactions", filters.min_transactions);
    filters.drop_zero_price = k.get("drop_zero_price", filters.drop_zero_price);
    filters.drop_constant_price = k.get("drop_constant_price", filters.drop_constant_price);
    filters.require_competitor = k.get("require_competitor", filters.require_competitor);
    const std::string proxy_choice = k.get<std::string>("proxy", "best");
    const std::string proxy_path = k.get<std::string>("proxy_path", "");
    const double alpha_c = k.get("alpha_c", 0.01);
    const double alpha_l = k.get("alpha_l", 0.01);
    estimate::DesignOptions dopt;
    dopt.j_max = k.get("j_max", dopt.j_max);
    dopt.variance_target = k.get("variance_target", dopt.variance_target);
    dopt.top_components = k.get<Index>("top_components", dopt.top_components);
    dopt.fe_in_pca = k.get("fe_in_pca", dopt.fe_in_pca);
    dopt.lag_covariates = k.get("lag_covariates", dopt.lag_covariates);
    estimate::ControlFunctionOptions cf;
    cf.max_rounds = k.get("max_rounds", cf.max_rounds);
    cf.tolerance = k.get("tolerance", cf.tolerance);
    cf.pd_floor = k.get("pd_floor", cf.pd_floor);
    const bool reduce = k.get("reduce_baskets", false);
    const bool participation = k.get("participation", true);
    estimate::MarkupOptions mopt;
    mopt.revenue_weighted_index = k.get("revenue_weighted_index", mopt.revenue_weighted_index);
    mopt.percentiles = k.get("percentiles", mopt.percentiles);
    const int bins = k.get("bins", 5);
    const int max_lag = k.get("participation_max_lag", 2);
    const json truth = k.raw("truth_phi");
    k.finish();
    if (proxy_choice != "best" && proxy_choice != "w_c" && proxy_choice != "w_s" && proxy_choice != "both")
        throw ConfigError("estimate: proxy must be one of best, w_c, w_s, both");
    if (!truth.is_null() && !truth.is_number()) throw ConfigError("estimate: truth_phi must be a number");
    ctx.finalize_hash(k.resolved());

    const estimate::SalesLog sales = read_sales(ctx, tx, max_reject);
    const estimate::MarketPanel panel = estimate::build_panel(sales, filters);

    // Candidate proxies over the panel goods.
    std::vector<std::pair<std::string, Matrix>> candidates;
    if (!proxy_path.empty()) {
        const auto [m, labels] = read_labelled_matrix(ctx.path(proxy_path));
        candidates.emplace_back("file", max_row_scaled(align(m, labels, panel.goods, "proxy file")));
    } else {
        const copurchase::TransactionLog log = estimate::transaction_log(sales);
        const copurchase::ProxyMatrices p = copurchase::build_proxy(log, alpha_c, alpha_l);
        const Matrix wc = max_row_scaled(align(p.w_c, log.product_ids(), panel.goods, "W(c)"));
        const Matrix ws = max_row_scaled(align(p.w_s, log.product_ids(), panel.goods, "W(s)"));
        if (proxy_choice == "w_c" || proxy_choice == "best") candidates.emplace_back("w_c", wc);
        if (proxy_choice == "w_s" || proxy_choice == "best") candidates.emplace_back("w_s", ws);
        if (proxy_choice == "both" || proxy_choice == "best") candidates.emplace_back("both", max_row_scaled(wc + ws));
    }
    json selection = json::array();
    std::size_t chosen = 0;
    if (candidates.size() > 1) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            double score = -std::numeric_limits<double>::infinity();
            std::string err;
            try {
                score = holdout_adj_r2(panel, estimate::build_design(panel, candidates[i].second, dopt));
            } catch (const Error& e) {
                err = e.what();
            }
            json row = {{"proxy", candidates[i].first}, {"holdout_adj_r2", num(score)}};
            if (!err.empty()) row["error"] = err;
            selection.push_back(row);
            if (score > best) {
                best = score;
                chosen = i;
            }
        }
    }
    const Matrix& w = candidates[chosen].second;

    const estimate::Design d = estimate::build_design(panel, w, dopt);
    const estimate::FitResult base = estimate::tsls_fit(d);
    ConsiderationSet a = estimate::observed_consideration_set(sales, panel);
    if (reduce) a = estimate::reduce_consideration_set(a.matrix(), panel.goods);
    const estimate::FitResult nn = estimate::nn_control_function_fit(d, panel, w, a, cf);

    json part = {{"enabled", participation}};
    if (participation) {
        try {
            const estimate::ParticipationResult pr =
                estimate::participation_elasticity(panel, mopt.revenue_weighted_index, max_lag);
            part.update({{"delta", num(pr.delta)},
                         {"se", num(pr.se)},
                         {"p_value", num(pr.p_value)},
                         {"ar_p_value", num(pr.ar_p_value)},
                         {"first_stage_f", num(pr.first_stage_f)},
                         {"lag", pr.lag},
                         {"n", pr.n}});
            mopt.participation_elasticity = std::isfinite(pr.delta) ? pr.delta : 0.0;
        } catch (const DataError& e) {
            part["unavailable"] = e.what();
        } catch (const IdentificationError& e) {
            part["unavailable"] = e.what();
        }
    }
    const estimate::MarkupTable mk = estimate::markups(nn, d, panel, mopt);
    const estimate::MarkupIndices ix = estimate::markup_indices(mk, panel, bins);

    // Fits and diagnostics.
    json jb = ctx.stamp();
    jb["fit"] = fit_json(base);
    ctx.write("fit_base.json", io::json_dump(jb));
    json jn = ctx.stamp();
    jn["fit"] = fit_json(nn);
    ctx.write("fit_nn.json", io::json_dump(jn));

    json diag = ctx.stamp();
    diag["base"] = diagnostics_json(base);
    diag["nn_corrected"] = diagnostics_json(nn);
    diag["panel"] = {{"goods", panel.goods.size()},
                     {"stores", panel.stores.size()},
                     {"quarters", panel.quarters.size()},
                     {"rows", panel.rows()},
                     {"filled_lags", panel.filled_lags},
                     {"rejected_lines", sales.rejected_lines.size()},
                     {"attrition",
                      {{"input_rows", panel.attrition.input_rows},
                       {"few_transactions", panel.attrition.few_transactions},
                       {"zero_price", panel.attrition.zero_price},
                       {"no_price_variation", panel.attrition.no_price_variation},
                       {"no_competitor", panel.attrition.no_competitor},
                       {"kept", panel.attrition.kept}}}};
    diag["design"] = {{"exogenous", d.exog_names},
                      {"endogenous", d.endog_names},
                      {"instruments", d.instrument_names},
                      {"dropped_exogenous", d.dropped_exog}};
    diag["proxy"] = {{"used", candidates[chosen].first}, {"selection", selection}};
    diag["consideration_set"] = {{"baskets", a.baskets()}, {"reduced", reduce}};
    diag["participation"] = part;
    diag["markup_indices"] = {{"dropped_laspeyres", ix.dropped_laspeyres}, {"dropped_paasche", ix.dropped_paasche}};
    std::size_t excluded = 0;
    for (bool e : mk.excluded) excluded += e;
    diag["markups"] = {{"excluded_rows", excluded}, {"diagnostics", mk.diagnostics}};
    if (truth.is_number()) {
        const double t = truth.get<double>();
        diag["truth_phi"] = t;
        diag["base"]["phi_error_in_se"] = num(std::abs(base.phi_bar - t) / base.phi_bar_se);
        diag["nn_corrected"]["phi_error_in_se"] = num(std::abs(nn.phi_bar - t) / nn.phi_bar_se);
    }
    ctx.write("diagnostics.json", io::json_dump(diag));

    // Mark-ups and plot data.
    const std::string prov = ctx.provenance();
    ctx.write("markups.csv", markup_csv(mk, panel, prov));

    const estimate::ParticipationData simple = estimate::participation_data(panel, false);
    const estimate::ParticipationData rev = estimate::participation_data(panel, true);
    std::string pi = prov + "store,quarter,log_transactions,log_price_index,log_price_index_revenue\n";
    for (Index s = 0; s < simple.log_n.rows(); ++s)
        for (Index q = 0; q < simple.log_n.cols(); ++q)
            pi += io::csv_field(panel.stores[static_cast<std::size_t>(s)]) + ',' + panel.quarters[static_cast<std::size_t>(q)] +
                  ',' + format_number(simple.log_n(s, q)) + ',' + format_number(simple.log_p(s, q)) + ',' +
                  format_number(rev.log_p(s, q)) + '\n';
    ctx.write("price_index.csv", pi);

    std::string means = prov + "quarter,mean,moving_average_4q\n";
    std::string pct = prov + "quarter";
    for (double p : mopt.percentiles) pct += ",p" + format_number(p);
    pct += '\n';
    std::string idx = prov + "quarter,laspeyres,paasche,persistence\n";
    for (std::size_t q = 0; q < panel.quarters.size(); ++q) {
        const auto qi = static_cast<Index>(q);
        means += panel.quarters[q] + ',' + format_number(mk.mean(qi)) + ',' + format_number(mk.moving_average(qi)) + '\n';
        pct += panel.quarters[q];
        for (Index c = 0; c < mk.percentile.cols(); ++c) pct += ',' + format_number(mk.percentile(qi, c));
        pct += '\n';
        idx += panel.quarters[q] + ',' + format_number(ix.laspeyres(qi)) + ',' + format_number(ix.paasche(qi)) + ',' +
               format_number(ix.persistence(qi)) + '\n';
    }
    ctx.write("markup_means.csv", means);
    ctx.write("markup_percentiles.csv", pct);
    ctx.write("markup_indices.csv", idx);

    std::string tr = prov + "from_bin";
    for (int b = 0; b < bins; ++b) tr += ",to_" + std::to_string(b);
    tr += ",count\n";
    for (Index i = 0; i < ix.transition.rows(); ++i) {
        tr += std::to_string(i);
        for (Index j = 0; j < ix.transition.cols(); ++j) tr += ',' + format_number(ix.transition(i, j));
        tr += ',' + format_number(ix.transition_counts.row(i).sum()) + '\n';
    }
    ctx.write("markup_transitions.csv", tr);

    std::string sm = prov + "store";
    for (const auto& q : panel.quarters) sm += ',' + q;
    sm += '\n';
    for (Index s = 0; s < mk.store_mean.rows(); ++s) {
        sm += io::csv_field(panel.stores[static_cast<std::size_t>(s)]);
        for (Index q = 0; q < mk.store_mean.cols(); ++q) sm += ',' + format_number(mk.store_mean(s, q));
        sm += '\n';
    }
    ctx.write("store_markups.csv", sm);

    std::cout << "estimate: " << panel.rows() << " rows, proxy " << candidates[chosen].first << "\n"
              << "  base phi " << format_number(base.phi_bar) << " (se " << format_number(base.phi_bar_se) << ")\n"
              << "  nn   phi " << format_number(nn.phi_bar) << " (se " << format_number(nn.phi_bar_se) << "), rounds "
              << nn.rounds << (nn.converged ? "" : ", not converged") << "\n";
    if (!nn.warning.empty()) std::cerr << "warning: " << nn.warning << "\n";
    return 0;
}

// ---------------------------------------------------------- counterfactual

json outcome_json(const equilibrium::EquilibriumOutcome& o) {
    return {{"prices", vec_json(o.prices)},
            {"quantities", vec_json(o.quantities)},
            {"good_profits", vec_json(o.good_profits)},
            {"firm_profits", o.firm_profits},
            {"aggregate_profit", num(o.aggregate_profit)},
            {"consumer_surplus", num(o.consumer_surplus)},
            {"foc_residual", num(o.foc_residual)},
            {"unique", o.multiplicity_basis.cols() == 0},
            {"certified", o.certified},
            {"diagnostics", o.diagnostics}};
}

int cmd_counterfactual(Context& ctx) {
    Keys k(ctx.config, "counterfactual");
    // Defaults: the three-good milk/bacon/pasta instance.
    json ja = k.raw("a");
    json jm = k.raw("m");
    json jmi = k.raw("m_inverse");
    json jd = k.raw("delta");
    const double phi = k.get("phi", -0.1);
    std::vector<std::string> goods = k.get<std::vector<std::string>>("goods", {});
    const json own = k.raw("ownership");
    const std::vector<std::string> stockouts = k.get<std::vector<std::string>>("stockouts", {});
    k.finish();
    ctx.finalize_hash(k.resolved());

    Matrix a(3, 4);
    a << 2, 0, 1, 2, 2, 2, 2, 4, 0, 2, 1, 2;
    if (!ja.is_null()) a = json_matrix(ja, "a");
    const Index kk = a.rows();
    Matrix m = 0.1 * Matrix::Ones(kk, kk) + 0.9 * Matrix::Identity(kk, kk);
    if (!jm.is_null() && !jmi.is_null()) throw ConfigError("counterfactual: give m or m_inverse, not both");
    if (!jm.is_null()) m = json_matrix(jm, "m");
    if (!jmi.is_null()) m = InteractionMatrix::from_inverse(json_matrix(jmi, "m_inverse")).matrix();
    Vector delta = Vector::Constant(kk, 2.0);
    if (!jd.is_null()) delta = json_vector(jd, "delta");
    if (goods.empty()) {
        if (kk == 3 && ja.is_null()) goods = {"milk", "bacon", "pasta"};
        else
            for (Index i = 0; i < kk; ++i) goods.push_back("g" + std::to_string(i));
    }
    if (static_cast<Index>(goods.size()) != kk || m.rows() != kk || m.cols() != kk || delta.size() != kk)
        throw ConfigError("counterfactual: a, m, delta and goods disagree in size");
    if (!(phi < 0.0)) throw ConfigError("counterfactual: phi must be negative");

    std::vector<std::string> basket_ids;
    for (Index j = 0; j < a.cols(); ++j) basket_ids.push_back("b" + std::to_string(j));
    const ConsiderationSet cs(a, goods, basket_ids);
    const InteractionMatrix im(m);

    equilibrium::Ownership o = equilibrium::Ownership::single_product(kk);
    std::string own_name = "bertrand";
    if (own.is_string()) {
        own_name = own.get<std::string>();
        if (own_name == "monopoly") o = equilibrium::Ownership::monopoly(kk);
        else if (own_name != "bertrand") throw ConfigError("counterfactual: ownership must be bertrand, monopoly or a firm list");
    } else if (own.is_array()) {
        std::vector<int> firms;
        for (const auto& f : own) {
            if (!f.is_number_integer()) throw ConfigError("counterfactual: firm ids must be integers");
            firms.push_back(f.get<int>());
        }
        if (static_cast<Index>(firms.size()) != kk) throw ConfigError("counterfactual: one firm id per good");
        o = equilibrium::Ownership::from_firms(firms);
        own_name = "firms";
    } else if (!own.is_null()) {
        throw ConfigError("counterfactual: ownership must be bertrand, monopoly or a firm list");
    }

    json out = ctx.stamp();
    out["goods"] = goods;
    out["phi"] = phi;
    out["ownership"] = own_name;
    const auto eq = o.is_monopoly() ? equilibrium::monopoly_closed_forms(cs, im, delta, phi)
                                    : equilibrium::multiproduct_equilibrium(cs, im, delta, phi, o);
    out["equilibrium"] = outcome_json(eq);
    out["bertrand"] = outcome_json(equilibrium::bertrand_single_product(cs, im, delta, phi));
    const auto mono = equilibrium::monopoly_closed_forms(cs, im, delta, phi);
    out["monopoly"] = outcome_json(mono);

    std::cout << "counterfactual (" << own_name << ")\n  prices:";
    for (Index i = 0; i < kk; ++i) std::cout << ' ' << goods[static_cast<std::size_t>(i)] << '=' << format_number(eq.prices(i));
    std::cout << "\n  quantities:";
    for (Index i = 0; i < kk; ++i) std::cout << ' ' << format_number(eq.quantities(i));
    std::cout << "\n  monopoly q* = Sigma delta / 2:";
    for (Index i = 0; i < kk; ++i) std::cout << ' ' << format_number(mono.quantities(i));
    std::cout << '\n';

    json so = json::array();
    bool ratio_ok = true;
    for (const auto& g : stockouts) {
        auto it = std::find(goods.begin(), goods.end(), g);
        if (it == goods.end()) throw DataError("counterfactual: unknown good id '" + g + "'");
        const auto i = static_cast<Index>(it - goods.begin());
        const auto s = equilibrium::stockout_delta(cs, im, delta, phi, i);
        const double target = -1.5 * phi;
        const double ratio = s.d_profit != 0.0 ? s.d_cs / s.d_profit : std::numeric_limits<double>::quiet_NaN();
        const bool ok = s.d_profit == 0.0 ? s.d_cs == 0.0 : std::abs(ratio - target) <= 1e-9 * std::max(1.0, std::abs(target));
        ratio_ok = ratio_ok && ok;
        so.push_back({{"good", g},
                      {"d_profit", num(s.d_profit)},
                      {"d_cs", num(s.d_cs)},
                      {"d_q", vec_json(s.dq)},
                      {"ratio_dcs_dprofit", num(ratio)},
                      {"expected_ratio", target},
                      {"ratio_holds", ok}});
        std::cout << "  monopoly stock-out " << g << ": dPi " << format_number(s.d_profit) << ", dCS " << format_number(s.d_cs)
                  << ", dCS/dPi " << format_number(ratio) << " (expected " << format_number(target) << ")"
                  << (ok ? "" : " MISMATCH") << '\n';
    }
    out["stockouts"] = so;
    ctx.write("counterfactual.json", io::json_dump(out));
    if (!ratio_ok) {
        std::cerr << "counterfactual: stock-out ratio check failed\n";
        return 2;
    }
    return 0;
}

// ------------------------------------------------------------------ screen

int cmd_screen(Context& ctx) {
    Keys k(ctx.config, "screen");
    const std::string tx = k.get<std::string>("transactions", "");
    const double conf = k.get("confidence", 0.95);
    const double threshold = k.get("threshold", 0.001);
    const double max_reject = k.get("max_reject_share", 0.001);
    k.finish();
    if (!(conf > 0.0 && conf < 1.0)) throw ConfigError("screen: confidence must lie in (0, 1)");
    ctx.finalize_hash(k.resolved());

    const estimate::SalesLog sales = read_sales(ctx, tx, max_reject);
    if (sales.records.empty()) throw DataError("screen: no transactions in input");
    const copurchase::TransactionLog log = estimate::transaction_log(sales);
    const auto verdicts = estimate::singleton_screen(log, conf, threshold);
    std::string s = ctx.provenance() + "product,appearances,singletons,upper_bound,never_singleton\n";
    std::size_t never = 0;
    for (const auto& v : verdicts) {
        s += io::csv_field(v.product) + ',' + std::to_string(v.appearances) + ',' + std::to_string(v.singletons) + ',' +
             format_number(v.upper) + ',' + (v.never_singleton ? "1" : "0") + '\n';
        never += v.never_singleton;
    }
    ctx.write("singleton_screen.csv", s);

    const Matrix baskets = estimate::unique_baskets(log);
    const ConsiderationSet red = estimate::reduce_consideration_set(baskets, log.product_ids());
    std::string r = ctx.provenance() + "product";
    for (const auto& b : red.basket_labels()) r += ',' + io::csv_field(b);
    r += '\n';
    for (Index g = 0; g < red.goods(); ++g) {
        r += io::csv_field(red.good_labels()[static_cast<std::size_t>(g)]);
        for (Index j = 0; j < red.baskets(); ++j) r += ',' + format_number(red.matrix()(g, j));
        r += '\n';
    }
    ctx.write("reduced_baskets.csv", r);

    json sum = ctx.stamp();
    sum["products"] = log.products();
    sum["transactions"] = log.transactions();
    sum["unique_baskets"] = baskets.cols();
    sum["reduced_baskets"] = red.baskets();
    sum["never_singleton"] = never;
    sum["confidence"] = conf;
    sum["threshold"] = threshold;
    ctx.write("screen_summary.json", io::json_dump(sum));
    std::cout << "screen: " << log.products() << " products, " << never << " never-singleton, " << baskets.cols()
              << " unique baskets reduced to " << red.baskets() << '\n';
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"Consideration-set demand toolkit"};
    app.set_version_flag("--version", std::string(io::version()));
    std::string command, config_path, out_dir = "out";
    std::int64_t seed = -1;
    int threads = 1;
    std::vector<std::string> overrides;
    app.add_option("command", command, "simulate | proxy | estimate | counterfactual | screen")
        ->required()
        ->check(CLI::IsMember({"simulate", "proxy", "estimate", "counterfactual", "screen"}));
    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--seed", seed, "random seed (simulate)");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
    app.add_option("--set", overrides, "config override key=value (value parsed as JSON, else a string)");

    std::vector<std::string> rev(args.rbegin(), args.rend());
    if (!rev.empty()) rev.pop_back();  // program name
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        Context ctx;
        ctx.command = command;
        ctx.threads = threads;
        ctx.out = out_dir;
        if (seed >= 0) ctx.seed = static_cast<std::uint64_t>(seed);
        if (!config_path.empty()) {
            if (!fs::exists(config_path)) throw ConfigError("config file not found: " + config_path);
            try {
                ctx.config = json::parse(io::read_file(config_path));
            } catch (const json::parse_error& e) {
                throw ConfigError(std::string("config is not valid JSON: ") + e.what());
            }
            ctx.base = fs::absolute(config_path).parent_path();
        } else {
            ctx.base = fs::current_path();
        }
        if (!ctx.config.is_object()) throw ConfigError("config must be a JSON object");
        for (const auto& o : overrides) {
            const auto eq = o.find('=');
            if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + o + "'");
            const std::string key = o.substr(0, eq), value = o.substr(eq + 1);
            try {
                ctx.config[key] = json::parse(value);
            } catch (const json::parse_error&) {
                ctx.config[key] = value;
            }
        }
        fs::create_directories(ctx.out);
        if (command == "simulate") return cmd_simulate(ctx);
        if (command == "proxy") return cmd_proxy(ctx);
        if (command == "estimate") return cmd_estimate(ctx);
        if (command == "counterfactual") return cmd_counterfactual(ctx);
        return cmd_screen(ctx);
    } catch (const IdentificationError& e) {
        std::cerr << "error: " << e.what() << "\n  offending columns:";
        for (const auto& c : e.columns()) std::cerr << ' ' << c;
        std::cerr << '\n';
        return 1;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace csd::cli
