#include "doctest.h"

#include "csd/errors.hpp"
#include "csd/linalg.hpp"
#include "csd/simulate.hpp"
#include "support.hpp"

#include <json.hpp>

#include <cmath>
#include <sstream>

using namespace csd;
using namespace csd::simulate;

namespace {

SimConfig small(int draws) {
    SimConfig cfg;
    cfg.n_draws = draws;
    return cfg;
}

void check_same(const ModelMetrics& x, const ModelMetrics& y) {
    CHECK(x.own_effect == y.own_effect);
    CHECK(x.cross_effect == y.cross_effect);
    CHECK(x.subst_effect == y.subst_effect);
    CHECK(x.compl_effect == y.compl_effect);
    CHECK(x.n_substitutes == y.n_substitutes);
    CHECK(x.n_complements == y.n_complements);
    CHECK(x.consumer_surplus == y.consumer_surplus);
    CHECK(x.profit == y.profit);
    CHECK(x.demand == y.demand);
}

}  // namespace

TEST_CASE("config validation") {
    SimConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.proxy_mix = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = SimConfig{};
    cfg.n_draws = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = SimConfig{};
    cfg.phi = 0.2;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("draw streams are reproducible and distinct") {
    Rng a = draw_stream(7, 3), b = draw_stream(7, 3), c = draw_stream(7, 4), d = draw_stream(8, 3);
    const auto x = a();
    CHECK(x == b());
    CHECK(x != c());
    CHECK(x != d());
}

TEST_CASE("consideration sets: determinism and invariants") {
    const SimConfig cfg;
    Rng r1 = draw_stream(cfg.seed, 11), r2 = draw_stream(cfg.seed, 11);
    const ConsiderationSet a1 = draw_consideration_set(r1, cfg);
    const ConsiderationSet a2 = draw_consideration_set(r2, cfg);
    REQUIRE(a1.goods() == a2.goods());
    REQUIRE(a1.baskets() == a2.baskets());
    CHECK(a1.matrix() == a2.matrix());

    // Construction itself enforces the invariants; also check integrality
    // and the rank the combination steps must preserve.
    for (std::uint64_t i = 0; i < 200; ++i) {
        Rng rng = draw_stream(cfg.seed, i);
        const ConsiderationSet a = draw_consideration_set(rng, cfg);
        CHECK(a.goods() >= cfg.n_goods_base);
        CHECK(a.goods() <= cfg.n_goods_base + cfg.max_extra_rows_cols);
        CHECK(a.baskets() >= cfg.n_baskets_base);
        CHECK(a.baskets() <= cfg.n_baskets_base + cfg.max_extra_rows_cols);
        CHECK((a.matrix().array() == a.matrix().array().round()).all());
        CHECK(linalg::rank(a.matrix()) <= cfg.n_goods_base);
    }
}

TEST_CASE("consideration set dimensions over 1000 draws") {
    const SimConfig cfg;
    double goods = 0.0, baskets = 0.0, rank = 0.0;
    for (std::uint64_t i = 0; i < 1000; ++i) {
        Rng rng = draw_stream(cfg.seed, i);
        const ConsiderationSet a = draw_consideration_set(rng, cfg);
        goods += static_cast<double>(a.goods());
        baskets += static_cast<double>(a.baskets());
        rank += static_cast<double>(linalg::rank(a.matrix()));
    }
    CHECK(std::abs(goods / 1000.0 - 14.8) <= 1.0);
    CHECK(std::abs(baskets / 1000.0 - 55.5) <= 2.0);
    CHECK(std::abs(rank / 1000.0 - 10.0) <= 0.1);
}

TEST_CASE("interaction matrices are positive definite with the loading floor") {
    const SimConfig cfg;
    for (std::uint64_t i = 0; i < 200; ++i) {
        Rng rng = draw_stream(cfg.seed, i);
        const ConsiderationSet a = draw_consideration_set(rng, cfg);
        const InteractionMatrix m = draw_interaction_matrix(rng, a, cfg);
        CHECK(m.min_eigenvalue() > 0.0);
        CHECK(m.min_eigenvalue() >= cfg.pd_floor * m.matrix().diagonal().mean() * (1.0 - 1e-9));
        CHECK(linalg::is_symmetric(m.matrix()));
    }
}

TEST_CASE("proxy_mix = 0 ignores the baskets") {
    SimConfig cfg;
    cfg.proxy_mix = 0.0;
    std::mt19937_64 gen(5);
    const Matrix a1 = testing::random_nonneg(gen, 6, 9, 0.5);
    const Matrix a2 = testing::random_nonneg(gen, 6, 14, 0.3);
    Rng r1 = draw_stream(1, 1), r2 = draw_stream(1, 1);
    const InteractionMatrix m1 = draw_interaction_matrix(r1, ConsiderationSet(a1), cfg);
    const InteractionMatrix m2 = draw_interaction_matrix(r2, ConsiderationSet(a2), cfg);
    CHECK(m1.matrix() == m2.matrix());
}

TEST_CASE("proxy_mix = 1 on the toy baskets gives an all-substitutes M") {
    SimConfig cfg;
    cfg.proxy_mix = 1.0;
    Rng rng = draw_stream(1, 1);
    const InteractionMatrix m = draw_interaction_matrix(rng, ConsiderationSet(testing::toy_baskets()), cfg);
    for (Index r = 0; r < 3; ++r)
        for (Index c = 0; c < 3; ++c)
            if (r != c) {
                CHECK(m.matrix()(r, c) > 0.0);
                CHECK(m.inverse()(r, c) < 0.0);
            }
}

TEST_CASE("monopoly profit never rises under the basket constraint") {
    // cone(A) lies in the nonnegative orthant, so the constrained monopolist
    // optimizes over a subset of the unconstrained one's bundles.
    const SimConfig cfg;
    for (std::uint64_t i = 0; i < 150; ++i) {
        const DrawMetrics d = run_draw(cfg, i);
        REQUIRE(d.ok);
        CHECK(d.mono_con.profit <= d.mono_unc.profit * (1.0 + 1e-9) + 1e-12);
    }
}

TEST_CASE("reduced-rank draws attenuate own-price effects") {
    const SimConfig cfg;
    for (std::uint64_t i = 0; i < 150; ++i) {
        const DrawMetrics d = run_draw(cfg, i);
        REQUIRE(d.ok);
        if (d.full_row_rank) {
            CHECK(std::abs(d.mono_con.own_effect) <= std::abs(d.mono_unc.own_effect) + 1e-12);
        } else {
            CHECK(std::abs(d.mono_con.own_effect) < std::abs(d.mono_unc.own_effect));
        }
    }
}

TEST_CASE("forcing A = I makes both choice models coincide") {
    SimConfig cfg = small(30);
    cfg.force_identity = true;
    for (std::uint64_t i = 0; i < 30; ++i) {
        const DrawMetrics d = run_draw(cfg, i);
        REQUIRE(d.ok);
        check_same(d.mono_con, d.mono_unc);
        check_same(d.firm_con, d.firm_unc);
    }
    const StudyResult r = run_study(cfg);
    for (const StudyRow& row : r.rows) {
        CHECK(row.constrained == row.unconstrained);
        CHECK(row.pct_draws == 0.0);
    }
}

TEST_CASE("study is deterministic and thread-count independent") {
    SimConfig cfg = small(40);
    const StudyResult a = run_study(cfg);
    cfg.threads = 3;
    const StudyResult b = run_study(cfg);
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        CHECK(a.rows[i].constrained == b.rows[i].constrained);
        CHECK(a.rows[i].unconstrained == b.rows[i].unconstrained);
        CHECK(a.rows[i].pct_draws == b.rows[i].pct_draws);
    }
    CHECK(study_csv(a, "#\n") == study_csv(b, "#\n"));
}

TEST_CASE("aggregate counts relations over successful draws only") {
    std::vector<DrawMetrics> draws(4);
    for (int i = 0; i < 4; ++i) {
        draws[static_cast<std::size_t>(i)].mono_con.own_effect = -0.3;
        draws[static_cast<std::size_t>(i)].mono_unc.own_effect = i < 3 ? -0.5 : -0.3;
    }
    draws[0].ok = false;
    const auto rows = aggregate(draws);
    REQUIRE(rows[0].metric == "avg own-price effect");
    // draws 1, 2 hold; draw 3 ties
    CHECK(rows[0].pct_draws == doctest::Approx(100.0 * 2.0 / 3.0));
    CHECK(rows[0].constrained == doctest::Approx(-0.3));
    CHECK(rows[0].unconstrained == doctest::Approx((-0.5 - 0.5 - 0.3) / 3.0));
}

TEST_CASE("too many solver failures abort the study") {
    SimConfig cfg = small(20);
    cfg.firm_pricing = FirmPricing::LocalNash;
    cfg.max_failure_share = 0.0;
    int fails = 0;
    for (std::uint64_t i = 0; i < 20; ++i) fails += run_draw(cfg, i).ok ? 0 : 1;
    REQUIRE(fails > 0);
    CHECK_THROWS_AS(run_study(cfg), NumericalError);
}

TEST_CASE("study emitters") {
    const StudyResult r = run_study(small(25));
    const std::string csv = study_csv(r, "# prov\n");
    std::istringstream in(csv);
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == 2 + 2 * static_cast<int>(r.rows.size()));
    CHECK(csv.rfind("# prov\n", 0) == 0);

    const auto j = nlohmann::json::parse(study_json(r, "abc"));
    CHECK(j["config_sha256"] == "abc");
    CHECK(j["rows"].size() == r.rows.size());
    CHECK(j["draws"] == 25);

    const std::string nd = draw_ndjson(r.draws[0]);
    CHECK(nd.back() == '\n');
    CHECK(nd.find('\n') == nd.size() - 1);
    const auto dj = nlohmann::json::parse(nd);
    CHECK(dj["index"] == 0);
    CHECK(dj.contains("monopoly_constrained"));
}
