#pragma once

#include "csd/estimate.hpp"

#include <cstdint>
#include <vector>

namespace csd::synthetic {

/// Panel data generated from the demand model with known truth. Goods come
/// in l3 groups of two (an "a" good and a private-label "b" good); groups
/// pair into l2 categories and those into l1 categories.
struct MarketSpec {
    int groups = 8;
    int stores = 4;
    int quarters = 12;
    double phi = -0.4;
    double base_utility = 4.0;
    std::vector<double> alpha{-0.3};  // M^-1 = I + sum_j alpha_j W^j
    double endogeneity = 0.6;         // price loading on the own demand shock
    double shock_sd = 0.15;           // demand shock, utility units
    double noise_sd = 0.02;           // measurement noise on quantities
    double cost_sd = 0.15;            // (group, quarter) log cost shock shared by stores
    double transactions = 500.0;      // store traffic per quarter
    double traffic_sd = 0.0;          // log traffic noise per store-quarter
    double corner_share = 0.0;        // groups whose b good is sold only with a
    double pooled_share = 0.0;        // groups sold only as the joint basket
    double zero_share = 0.0;          // free groups whose utility is lowered by zero_shift
    double zero_shift = 0.0;          // so latent demand often falls below zero
    double corner_gap = 0.0;          // added to the private-label utility; corner groups bind more often
    bool lf_sigma_form = false;         // demand Sigma (delta + phi p) with the LF sigma, no cone
};

/// 16 goods, 20 stores, 16 quarters (n = 5120), no binding corners.
MarketSpec corner_free_fixture();
/// As corner_free_fixture with half the l3 groups pushed below zero demand.
MarketSpec corner_heavy_fixture();
/// Design settings the fixtures are fitted with (all PCA components kept).
estimate::DesignOptions fixture_design_options();

struct SyntheticMarket {
    estimate::MarketPanel panel;
    Matrix w;      // K x K proxy, hollow, max row sum 1
    Matrix m_inv;  // true M^-1
    Matrix a;      // consideration set
    Vector delta;
    double phi = 0.0;
    Vector alpha;
    Vector unconstrained;      // per row, quantity before the cone
    double corner_rows = 0.0;  // share of rows moved by the cone
};

SyntheticMarket synthetic_market(const MarketSpec& spec, std::uint64_t seed);

/// Transactions that aggregate back to the panel: each transaction buys
/// `units` copies of one basket; traffic is padded with purchases of a
/// constant-price outside product that the panel filters remove. Throws
/// ConfigError when a market needs more baskets than its traffic.
std::vector<estimate::SaleRecord> synthetic_sales(const SyntheticMarket& market, double units, std::uint64_t seed);

/// Store x quarter participation series with true elasticity `delta`. The
/// price index responds to the instrument with loading `strength` and to the
/// participation shock with loading `endogeneity`.
estimate::ParticipationData synthetic_participation(double delta, double strength, double endogeneity, int stores,
                                                    int quarters, std::uint64_t seed);

}  // namespace csd::synthetic
