#pragma once

#include "csd/model.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace csd::simulate {

/// How single-product firms set prices under NN demand. Pure Bertrand
/// equilibria need not exist once demand has kinks, so the default prices off
/// the linear first-order conditions of the full consideration set and lets
/// consumers buy NN demand at those prices. LocalNash runs the local
/// best-response solver and counts non-convergent draws as failures.
enum class FirmPricing { LinearFoc, LocalNash };

struct SimConfig {
    int n_draws = 1000;
    int n_goods_base = 10;
    int n_baskets_base = 51;
    int max_extra_rows_cols = 10;
    double phi = -0.5;
    double proxy_mix = 0.5;
    std::uint64_t seed = 20240601;

    // Laws the study leaves open; overridable.
    double zero_share = 0.7;        // share of zero entries in the base A
    int max_entry = 2;              // nonzero entries uniform on {1..max_entry}
    double m_rand_offdiag = 0.15;   // M_rand off-diagonals ~ U(-x, x), unit diagonal
    double delta_lo = 1.0;
    double delta_hi = 3.0;
    double proxy_scale = 0.5;       // M_proxy = I + proxy_scale * C / max row sum of C
    double pd_floor = 0.05;         // min eigenvalue >= pd_floor * mean diagonal
    double sign_threshold = 1e-9;   // |J_ab| above this classifies a pair
    double max_failure_share = 0.01;
    bool force_identity = false;    // A = I: constraint switched off
    FirmPricing firm_pricing = FirmPricing::LinearFoc;
    int threads = 1;

    void validate() const;
};

using Rng = std::mt19937_64;

/// Independent stream for draw `index`, identical in serial and parallel runs.
Rng draw_stream(std::uint64_t seed, std::uint64_t index);

ConsiderationSet draw_consideration_set(Rng& rng, const SimConfig& cfg);

/// proxy_mix * M_proxy + (1 - proxy_mix) * M_rand, loaded to min eigenvalue
/// >= pd_floor * mean diagonal. M_proxy = I + proxy_scale * C / max_row_sum(C),
/// C the hollow second-order cosine of the baskets read as transactions.
InteractionMatrix draw_interaction_matrix(Rng& rng, const ConsiderationSet& a, const SimConfig& cfg);

struct ModelMetrics {
    double own_effect = 0.0;     // mean diagonal of the Jacobian
    double cross_effect = 0.0;   // mean off-diagonal
    double subst_effect = 0.0;   // mean of positive off-diagonals (0 if none)
    double compl_effect = 0.0;   // mean of negative off-diagonals (0 if none)
    double n_substitutes = 0.0;  // per good
    double n_complements = 0.0;  // per good
    double consumer_surplus = 0.0;
    double profit = 0.0;
    double demand = 0.0;         // sum of quantities
    bool face_reduced = false;   // NN removed baskets at the optimum
};

struct DrawMetrics {
    std::uint64_t index = 0;
    bool ok = true;
    std::string failure;
    Index goods = 0;
    Index baskets = 0;
    Index rank = 0;
    Index missing_basis_vectors = 0;
    bool full_row_rank = false;
    // [constrained, unconstrained] x [firm, monopoly]
    ModelMetrics firm_con, firm_unc, mono_con, mono_unc;
};

DrawMetrics run_draw(const SimConfig& cfg, std::uint64_t index);

struct StudyRow {
    std::string metric;
    double constrained = 0.0;
    double unconstrained = 0.0;
    std::string relation;  // "<", ">", "< (abs.)", "> (abs.)"
    double pct_draws = 0.0;
    double reference_pct = 0.0;
    double band = 0.0;     // allowed deviation in percentage points
    bool required_all = false;
};

struct StudyResult {
    std::vector<StudyRow> rows;
    std::vector<DrawMetrics> draws;
    int failures = 0;
    int full_rank_draws = 0;
    double mean_goods = 0.0, mean_baskets = 0.0, mean_rank = 0.0, mean_missing = 0.0;
    double monopoly_beats_firm_pct = 0.0;   // reported only
    double full_rank_own_gap = 0.0;         // mean |own_con - own_unc| on full-rank draws
    double reduced_rank_own_gap = 0.0;
    std::vector<StudyRow> full_rank_rows;   // same table on the full-rank sub-sample
};

/// Runs every draw and aggregates the constrained-vs-unconstrained comparison. Throws
/// NumericalError when more than max_failure_share of draws fail.
StudyResult run_study(const SimConfig& cfg);

/// Fixed-order reduction of draws into table rows.
std::vector<StudyRow> aggregate(const std::vector<DrawMetrics>& draws);

std::string study_csv(const StudyResult& r, const std::string& provenance);
std::string study_json(const StudyResult& r, const std::string& config_hash);
std::string draw_ndjson(const DrawMetrics& d);

}  // namespace csd::simulate
