#pragma once

#include "csd/copurchase.hpp"
#include "csd/model.hpp"

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace csd::estimate {

// ---------------------------------------------------------------- raw data

/// One line of the transaction CSV.
struct SaleRecord {
    std::string transaction_id;
    std::string store_id;
    std::string date;  // ISO-8601 YYYY-MM-DD
    std::string product_id;
    double quantity = 0.0;
    double unit_price = 0.0;
    double gross_value = 0.0;
    double discount = 0.0;
    std::string category_l1, category_l2, category_l3;
    bool private_label = false;
};

struct SalesLog {
    std::vector<SaleRecord> records;
    std::vector<std::size_t> rejected_lines;  // 1-based source lines
};

/// Parses the transaction CSV (header required, any column order). Rows that
/// fail to parse are skipped and listed; more than `max_reject_share` of
/// rows rejected throws DataError naming the first offending lines.
SalesLog parse_sales_csv(const std::string& text, double max_reject_share = 0.001);

std::string sales_csv(const std::vector<SaleRecord>& records);

/// Calendar quarter as year * 4 + (quarter - 1). Throws DataError on a
/// malformed date.
int quarter_of(const std::string& iso_date);
/// year * 12 + (month - 1)
int month_of(const std::string& iso_date);
std::string quarter_label(int quarter);

/// Incidence of the log: products x transactions with quantities.
copurchase::TransactionLog transaction_log(const SalesLog& log);

// ------------------------------------------------------------------- panel

struct PanelFilters {
    int min_transactions = 100;       // products seen in fewer transactions are dropped
    bool drop_zero_price = true;      // products ever sold at price 0
    bool drop_constant_price = true;  // products without price variation
    bool require_competitor = true;   // product-store-months without a same-l3 rival sold elsewhere
};

/// Log rows removed by each filter, in application order.
struct Attrition {
    std::size_t input_rows = 0;
    std::size_t few_transactions = 0;
    std::size_t zero_price = 0;
    std::size_t no_price_variation = 0;
    std::size_t no_competitor = 0;
    std::size_t kept = 0;

    std::string describe() const;
};

/// One row per (good, store, quarter). Quantities are units per store-quarter
/// transaction. Market index = store * quarters + quarter.
struct MarketPanel {
    std::vector<std::string> goods, stores, quarters;
    std::vector<int> quarter_codes;  // quarter_of() value per quarter label
    std::vector<std::array<std::string, 3>> category;  // per good
    std::vector<bool> private_label;                    // per good

    std::vector<Index> good, store, quarter;  // per row
    Vector quantity;
    Vector price;
    Vector revenue;
    Vector transactions;  // per market; store traffic N

    Matrix x;  // covariates (category dummies, private label, store presence)
    std::vector<std::string> x_names;
    Matrix fe;  // store and quarter dummies, first level dropped
    std::vector<std::string> fe_names;
    Matrix z;  // excluded instruments
    std::vector<std::string> z_names;
    std::size_t filled_lags = 0;  // lag cells filled with the current value

    Attrition attrition;

    Index rows() const noexcept { return static_cast<Index>(good.size()); }
    Index markets() const noexcept { return static_cast<Index>(stores.size() * quarters.size()); }
    Index market(Index row) const;
    /// Rows of each market, ordered by good index.
    std::vector<std::vector<Index>> market_rows() const;

    /// Throws DataError on duplicate keys, size mismatches or bad values.
    void validate() const;
};

/// Filters, aggregates, normalizes by store traffic and computes instruments.
MarketPanel build_panel(const SalesLog& log, const PanelFilters& filters = {});

/// Fills x, fe and z from the row fields, categories and private-label flags.
/// Competitor price = mean price of other goods in the same l3 category at
/// other stores in the same quarter; lag = previous quarter at the same store
/// (filled with the current value when absent). Competitor counts = other
/// goods of the same category in the same store-quarter, at each level.
void finalize_panel(MarketPanel& panel);

/// Unique baskets of the log restricted to panel goods, as columns.
ConsiderationSet observed_consideration_set(const SalesLog& log, const MarketPanel& panel);

// ------------------------------------------------------- design primitives

struct Standardized {
    Matrix values;
    Vector mean;
    Vector sd;  // population sd; zero for constant columns
    std::vector<Index> constant_columns;
};

/// Column-wise centring and scaling to unit population variance. Constant
/// columns become zero.
Standardized standardize(const Matrix& x);

/// W^j x per market with rows and columns of absent goods zeroed.
/// `w` is K x K over panel goods; `cols` has one row per panel row.
Matrix spatial_lag(const Matrix& w, const MarketPanel& panel, const Matrix& cols, int power);

struct LagBlock {
    Matrix values;
    std::vector<std::string> names;
    std::vector<double> raw_sd;  // per column, before standardization
};

/// Columns W^j x for j = 1..j_max, standardized after multiplication unless
/// `standardize_output` is false.
LagBlock spatial_lags(const Matrix& w, const MarketPanel& panel, const Matrix& cols,
                      const std::vector<std::string>& names, int j_max, bool standardize_output = true);

struct Pca {
    Matrix scores;     // n x p, all components, descending variance
    Matrix loadings;   // p x p, columns are components
    Vector eigenvalues;
    Vector mean;
    Index kept = 0;    // smallest prefix reaching the target
    Index top = 0;     // components flagged for price interactions
    double kept_share = 0.0;
    double top_share = 0.0;
};

Pca pca_reduce(const Matrix& x, double variance_target = 0.9, Index top_components = 10);

// ------------------------------------------------------------------ design

struct DesignOptions {
    int j_max = 2;
    double variance_target = 0.9;
    Index top_components = 10;
    bool fe_in_pca = false;        // store/quarter dummies also enter the PCA input
    bool lag_covariates = true;    // include W^j PC columns
};

/// Standardized regression problem. Column order in a fit: exog then endog.
struct Design {
    Vector y;
    Matrix exog, endog, instruments;
    std::vector<std::string> exog_names, endog_names, instrument_names;
    std::vector<Index> clusters;
    std::vector<std::string> dropped_exog;  // collinear with earlier exogenous columns

    double y_mean = 0.0, y_sd = 1.0;
    double price_sd = 1.0;
    Index price_col = -1;                 // within endog
    std::vector<Index> lag_price_cols;    // within endog, j = 1..
    std::vector<double> lag_price_sd;
    std::vector<Index> eta_cols;          // within endog
    Matrix own_price_derivative;          // n x endog: d(column)/d(own price), standardized columns

    Index n_components_kept = 0;
    double top_share = 0.0;
    int j_max = 0;

    Index rows() const noexcept { return y.size(); }
};

/// Intercept, store/quarter dummies, kept PC scores and their lags as
/// exogenous; price, price x top PCs and W^j price as endogenous; Z, the
/// competitor price x top PCs and W^j Z as excluded instruments. Everything
/// but the intercept standardized. Clusters are markets.
Design build_design(const MarketPanel& panel, const Matrix& w, const DesignOptions& opts = {});

/// Same layout with every market's covariate, price and instrument vectors
/// premultiplied by sigma[m] (the LF construction). No W lags.
Design build_sigma_design(const MarketPanel& panel, const std::vector<Matrix>& sigma, const DesignOptions& opts = {});

// ------------------------------------------------------------------- fits

struct FitResult {
    std::string mode;  // "2sls", "nn_control_function", "lf_grid"
    std::vector<std::string> names;
    Vector coef, se, t, p;

    double phi_bar = 0.0;     // average own-price slope, level units
    double phi_bar_se = 0.0;
    double phi_bar_std = 0.0; // standardized coefficient
    Vector eta;               // price x PC coefficients, standardized
    Vector alpha;             // spatial coefficients alpha_j = gamma_j / phi_bar

    double r2 = 0.0, adj_r2 = 0.0;
    double wald_f = 0.0, wald_p = 1.0;
    Index wald_df1 = 0, wald_df2 = 0;
    double dwh_chi2 = 0.0, dwh_p = 1.0;
    Index dwh_df = 0;
    double first_stage_min_f = 0.0;

    Index n_obs = 0, n_params = 0, n_clusters = 0, n_instruments = 0;
    Index n_components_kept = 0;
    double top_share = 0.0;
    double rss = 0.0;

    Vector fitted;     // standardized, structural (actual regressors)
    Vector residuals;  // standardized
    Vector correction; // control-function r in quantity units; empty otherwise

    int rounds = 0;
    bool converged = true;
    std::vector<double> round_changes;
    std::string warning;

    Vector lf_alpha;            // selected grid point
    std::vector<double> grid_rss;

    /// Fitted quantities in level units.
    Vector fitted_levels(const Design& d) const;
};

/// Two-stage least squares with cluster-robust covariance. Throws
/// IdentificationError naming the deficient columns when the first stage
/// cannot separate them.
FitResult tsls_fit(const Design& d);

struct ControlFunctionOptions {
    int max_rounds = 10;
    double tolerance = 1e-6;
    double pd_floor = 0.05;  // loading of the recovered M^-1
};

/// M^-1 = I + sum_j alpha_j W^j, symmetrized and loaded so its smallest
/// eigenvalue is at least pd_floor times its mean diagonal.
Matrix series_inverse(const Matrix& w, const Vector& alpha, double pd_floor);

/// r = q - A argmin_{z >= 0} ||A z - q||_M per market, with M the principal
/// submatrix of m over present goods and A the baskets buyable there.
Vector cone_correction(const Vector& q_levels, const MarketPanel& panel, const Matrix& a, const Matrix& m);

FitResult nn_control_function_fit(const Design& d, const MarketPanel& panel, const Matrix& w,
                                  const ConsiderationSet& a, const ControlFunctionOptions& opts = {});

/// M^-1 A (A'M^-1 A)^+ A' M^-1 for the goods in `present`.
Matrix lf_sigma(const Matrix& m_inv, const Matrix& a, const std::vector<Index>& present);

/// Per-market sigma for M^-1 = I + sum_j alpha_j W^j.
std::vector<Matrix> lf_market_sigmas(const MarketPanel& panel, const Matrix& w, const Matrix& a, const Vector& alpha);

/// Grid search over alpha (each point alpha_1..alpha_J, alpha_0 = 1); picks
/// the smallest second-stage residual sum of squares.
FitResult lf_grid_fit(const MarketPanel& panel, const Matrix& w, const ConsiderationSet& a,
                      const std::vector<Vector>& alpha_grid, const DesignOptions& opts = {});

// ---------------------------------------------------------------- mark-ups

struct MarkupOptions {
    double participation_elasticity = 0.0;  // delta in d ln N / d ln P
    bool revenue_weighted_index = false;    // price index behind eta^N
    std::vector<double> percentiles{10, 25, 50, 75, 90};
};

struct MarkupTable {
    // per panel row
    Vector own_slope;    // dq/dp, level units, before the participation term
    Vector elasticity;   // intensive-margin own elasticity
    Vector lerner;       // NaN for excluded rows
    Vector weight;       // revenue share within the quarter; 0 if excluded
    std::vector<bool> excluded;
    std::vector<std::string> diagnostics;

    // per quarter
    Vector mean;
    Vector moving_average;  // trailing four quarters; NaN for the first three
    Matrix percentile;      // quarters x percentiles, revenue-weighted
    Matrix store_mean;      // stores x quarters; NaN where a store has no rows
};

/// Lerner index L = -1/e_ii under single-product pricing. Rows with a
/// nonnegative own elasticity are excluded and listed.
MarkupTable markups(const FitResult& fit, const Design& d, const MarketPanel& panel, const MarkupOptions& opts = {});

/// Core used by markups(): slopes in level units per panel row.
MarkupTable markups_from_slopes(const Vector& own_slope, const MarketPanel& panel, const MarkupOptions& opts = {});

struct MarkupIndices {
    Vector laspeyres, paasche;           // per quarter
    std::size_t dropped_laspeyres = 0;   // items absent in the base quarter
    std::size_t dropped_paasche = 0;
    Matrix transition;                   // bins x bins, rows sum to 1 where observed
    Matrix transition_counts;
    Vector persistence;                  // per quarter from the second: share staying in bin
    int bins = 5;
};

/// Items are (good, store) pairs. Bins are within-l1-category quantiles
/// recomputed every quarter.
MarkupIndices markup_indices(const MarkupTable& table, const MarketPanel& panel, int bins = 5);

// ---------------------------------------------------------- participation

/// Store x quarter series behind the participation regression.
struct ParticipationData {
    Matrix log_n;        // stores x quarters
    Matrix log_p;        // price index
    Matrix instrument;   // competitor price index
};

ParticipationData participation_data(const MarketPanel& panel, bool revenue_weighted);

struct ParticipationResult {
    double delta = 0.0;
    double se = 0.0;       // heteroskedasticity-robust (HC1)
    double p_value = 1.0;
    double ar_p_value = 1.0;  // Anderson-Rubin test of delta = 0
    double first_stage_f = 0.0;
    int lag = 0;
    Index n = 0;
};

/// First-difference IV: d ln N = delta d ln P + trend + error, instrument d
/// competitor index at lag 0, 1 or 2 (highest first-stage F wins).
ParticipationResult participation_elasticity(const ParticipationData& data, int max_lag = 2);
ParticipationResult participation_elasticity(const MarketPanel& panel, bool revenue_weighted, int max_lag = 2);

/// Anderson-Rubin p-value for H0: delta = delta0 at the given lag.
double anderson_rubin_p(const ParticipationData& data, double delta0, int lag);

// ----------------------------------------------------------------- screen

/// One-sided Jeffreys upper credible bound on a binomial rate.
double jeffreys_upper(long successes, long trials, double confidence);

struct SingletonVerdict {
    std::string product;
    long appearances = 0;
    long singletons = 0;
    double upper = 1.0;
    bool never_singleton = false;
};

std::vector<SingletonVerdict> singleton_screen(const copurchase::TransactionLog& log, double confidence = 0.95,
                                               double threshold = 0.001);

/// Distinct quantity columns of the log (goods x unique baskets).
Matrix unique_baskets(const copurchase::TransactionLog& log);

/// Drops baskets rebuildable from a kept basket plus singleton baskets.
ConsiderationSet reduce_consideration_set(const Matrix& baskets, std::vector<std::string> good_labels = {});
ConsiderationSet reduce_consideration_set(const copurchase::TransactionLog& log);

}  // namespace csd::estimate
