#include "csd/simulate.hpp"

#include "csd/copurchase.hpp"
#include "csd/equilibrium.hpp"
#include "csd/errors.hpp"
#include "csd/io.hpp"
#include "csd/linalg.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <set>
#include <sstream>
#include <thread>

namespace csd::simulate {

void SimConfig::validate() const {
    auto need = [](bool ok, const char* what) {
        if (!ok) throw ConfigError(std::string("simulate: ") + what);
    };
    need(n_draws >= 1, "n_draws must be >= 1");
    need(n_goods_base >= 2, "n_goods_base must be >= 2");
    need(n_baskets_base >= 1, "n_baskets_base must be >= 1");
    need(max_extra_rows_cols >= 0, "max_extra_rows_cols must be >= 0");
    need(phi < 0.0 && std::isfinite(phi), "phi must be negative");
    need(proxy_mix >= 0.0 && proxy_mix <= 1.0, "proxy_mix must lie in [0, 1]");
    need(zero_share >= 0.0 && zero_share < 1.0, "zero_share must lie in [0, 1)");
    need(max_entry >= 1, "max_entry must be >= 1");
    need(m_rand_offdiag >= 0.0, "m_rand_offdiag must be >= 0");
    need(delta_lo > 0.0 && delta_hi >= delta_lo, "delta range must be positive and ordered");
    need(proxy_scale >= 0.0, "proxy_scale must be >= 0");
    need(pd_floor > 0.0 && pd_floor < 1.0, "pd_floor must lie in (0, 1)");
    need(sign_threshold >= 0.0, "sign_threshold must be >= 0");
    need(max_failure_share >= 0.0 && max_failure_share <= 1.0, "max_failure_share must lie in [0, 1]");
    need(threads >= 1, "threads must be >= 1");
}

Rng draw_stream(std::uint64_t seed, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x5eedu};
    return Rng(seq);
}

namespace {

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

double uniform(Rng& rng, double lo, double hi) {
    return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
}

bool zero_vec(const Vector& v) { return (v.array() == 0.0).all(); }

// Nonnegative integer combination of two distinct pool members.
Vector combination(Rng& rng, const std::vector<Vector>& pool) {
    const int n = static_cast<int>(pool.size());
    const int i = uniform_int(rng, 0, n - 1);
    int j = n > 1 ? uniform_int(rng, 0, n - 2) : i;
    if (n > 1 && j >= i) ++j;
    Vector v = static_cast<double>(uniform_int(rng, 1, 2)) * pool[static_cast<std::size_t>(i)];
    if (j != i) v += static_cast<double>(uniform_int(rng, 1, 2)) * pool[static_cast<std::size_t>(j)];
    return v;
}

// Replaces zero or repeated rows (by_rows) or columns with combinations of
// the good ones. Returns false if the loop budget runs out.
bool repair(Rng& rng, Matrix& a, bool by_rows) {
    const Index n = by_rows ? a.rows() : a.cols();
    auto get = [&](Index i) -> Vector { return by_rows ? Vector(a.row(i).transpose()) : Vector(a.col(i)); };
    for (int attempt = 0; attempt < 50; ++attempt) {
        std::vector<Index> bad;
        std::vector<Vector> good;
        std::set<std::vector<double>> seen;
        for (Index i = 0; i < n; ++i) {
            const Vector v = get(i);
            std::vector<double> key(v.data(), v.data() + v.size());
            if (zero_vec(v) || !seen.insert(key).second) bad.push_back(i);
            else good.push_back(v);
        }
        if (bad.empty()) return true;
        if (good.empty()) return false;
        for (Index i : bad) {
            const Vector v = combination(rng, good);
            if (by_rows) a.row(i) = v.transpose();
            else a.col(i) = v;
        }
    }
    return false;
}

// Appends `count` rows (or columns) built as combinations of existing ones,
// redrawing duplicates a bounded number of times.
void append(Rng& rng, Matrix& a, int count, bool rows) {
    for (int added = 0; added < count; ++added) {
        std::vector<Vector> pool;
        const Index n = rows ? a.rows() : a.cols();
        for (Index i = 0; i < n; ++i) pool.push_back(rows ? Vector(a.row(i).transpose()) : Vector(a.col(i)));
        for (int attempt = 0; attempt < 20; ++attempt) {
            const Vector v = combination(rng, pool);
            bool dup = false;
            for (const Vector& p : pool) dup = dup || p == v;
            if (dup) continue;
            if (rows) {
                a.conservativeResize(a.rows() + 1, Eigen::NoChange);
                a.row(a.rows() - 1) = v.transpose();
            } else {
                a.conservativeResize(Eigen::NoChange, a.cols() + 1);
                a.col(a.cols() - 1) = v;
            }
            break;
        }
    }
}

}  // namespace

ConsiderationSet draw_consideration_set(Rng& rng, const SimConfig& cfg) {
    const int extra_rows = uniform_int(rng, 0, cfg.max_extra_rows_cols);
    const int extra_cols = uniform_int(rng, 0, cfg.max_extra_rows_cols);
    double zero_share = cfg.zero_share;
    std::bernoulli_distribution is_zero(zero_share);
    for (int round = 0;; ++round) {
        Matrix a(cfg.n_goods_base, cfg.n_baskets_base);
        for (Index c = 0; c < a.cols(); ++c)
            for (Index r = 0; r < a.rows(); ++r)
                a(r, c) = is_zero(rng) ? 0.0 : static_cast<double>(uniform_int(rng, 1, cfg.max_entry));
        if (repair(rng, a, true) && repair(rng, a, false)) {
            append(rng, a, extra_rows, true);
            append(rng, a, extra_cols, false);
            // Appended rows can make two columns equal.
            if (repair(rng, a, false) && repair(rng, a, true)) return ConsiderationSet(std::move(a));
        }
        if (round >= 10) {
            zero_share *= 0.8;
            is_zero = std::bernoulli_distribution(zero_share);
        }
        if (round > 100) throw NumericalError("draw_consideration_set: could not build a valid matrix");
    }
}

InteractionMatrix draw_interaction_matrix(Rng& rng, const ConsiderationSet& a, const SimConfig& cfg) {
    const Index k = a.goods();
    Matrix rand = Matrix::Identity(k, k);
    for (Index r = 0; r < k; ++r)
        for (Index c = r + 1; c < k; ++c) rand(r, c) = rand(c, r) = uniform(rng, -cfg.m_rand_offdiag, cfg.m_rand_offdiag);

    Matrix proxy = Matrix::Identity(k, k);
    if (cfg.proxy_mix > 0.0 && cfg.proxy_scale > 0.0) {
        const auto log = copurchase::TransactionLog::from_dense(a.matrix());
        Matrix cs = copurchase::second_order_cosine(copurchase::complement_cosine(log));
        cs.diagonal().setZero();
        const double row_max = cs.rowwise().sum().maxCoeff();
        if (row_max > 0.0) proxy += (cfg.proxy_scale / row_max) * cs;
    }

    Matrix m = cfg.proxy_mix * proxy + (1.0 - cfg.proxy_mix) * rand;
    m = (0.5 * (m + m.transpose())).eval();
    const double lmin = linalg::min_eigenvalue(m);
    const double md = m.diagonal().mean();
    if (lmin < cfg.pd_floor * md) m.diagonal().array() += (cfg.pd_floor * md - lmin) / (1.0 - cfg.pd_floor);
    return InteractionMatrix(m);
}

namespace {

ModelMetrics metrics_of(const equilibrium::FaceEquilibrium& fe, double phi, double threshold, Index all_baskets) {
    ModelMetrics out;
    const Matrix j = phi * fe.sigma_face;
    const Index k = j.rows();
    out.own_effect = j.diagonal().mean();
    double off = 0.0, pos = 0.0, neg = 0.0;
    long npos = 0, nneg = 0;
    for (Index a = 0; a < k; ++a)
        for (Index b = 0; b < k; ++b) {
            if (a == b) continue;
            off += j(a, b);
            if (j(a, b) > threshold) { pos += j(a, b); ++npos; }
            else if (j(a, b) < -threshold) { neg += j(a, b); ++nneg; }
        }
    const double pairs = static_cast<double>(k * (k - 1));
    out.cross_effect = pairs > 0 ? off / pairs : 0.0;
    out.subst_effect = npos ? pos / static_cast<double>(npos) : 0.0;
    out.compl_effect = nneg ? neg / static_cast<double>(nneg) : 0.0;
    out.n_substitutes = static_cast<double>(npos) / static_cast<double>(k);
    out.n_complements = static_cast<double>(nneg) / static_cast<double>(k);
    out.consumer_surplus = fe.outcome.consumer_surplus;
    out.profit = fe.outcome.aggregate_profit;
    out.demand = fe.outcome.quantities.sum();
    out.face_reduced = static_cast<Index>(fe.face.size()) < all_baskets;
    return out;
}

}  // namespace

DrawMetrics run_draw(const SimConfig& cfg, std::uint64_t index) {
    DrawMetrics d;
    d.index = index;
    try {
        Rng rng = draw_stream(cfg.seed, index);
        const ConsiderationSet drawn = draw_consideration_set(rng, cfg);
        const InteractionMatrix m = draw_interaction_matrix(rng, drawn, cfg);
        const Index k = drawn.goods();
        Vector delta(k);
        for (Index i = 0; i < k; ++i) delta(i) = uniform(rng, cfg.delta_lo, cfg.delta_hi);

        const Matrix ident = Matrix::Identity(k, k);
        const Matrix& a = cfg.force_identity ? ident : drawn.matrix();
        d.goods = k;
        d.baskets = a.cols();
        d.rank = linalg::rank(a);
        d.full_row_rank = d.rank == k;
        const std::vector<bool> cov = linalg::cone_coverage(a);
        d.missing_basis_vectors = static_cast<Index>(std::count(cov.begin(), cov.end(), false));

        using equilibrium::Ownership;
        const Ownership firm = Ownership::single_product(k);
        const Ownership mono = Ownership::monopoly(k);
        const Matrix& mm = m.matrix();
        const double th = cfg.sign_threshold;
        auto firm_model = [&](const Matrix& basket_set, const Matrix& sigma_full) {
            if (cfg.firm_pricing == FirmPricing::LocalNash)
                return equilibrium::nn_equilibrium(basket_set, mm, delta, cfg.phi, firm);
            const Vector prices = equilibrium::bertrand_from_sigma(sigma_full, mm, delta, cfg.phi).prices;
            return equilibrium::nn_outcome_at_prices(basket_set, mm, delta, cfg.phi, firm, prices);
        };
        const Matrix sigma_con = cfg.force_identity ? m.inverse() : linalg::projector_unchecked(a, mm);
        d.firm_con = metrics_of(firm_model(a, sigma_con), cfg.phi, th, a.cols());
        d.mono_con = metrics_of(equilibrium::nn_equilibrium(a, mm, delta, cfg.phi, mono), cfg.phi, th, a.cols());
        d.firm_unc = metrics_of(firm_model(ident, m.inverse()), cfg.phi, th, k);
        d.mono_unc = metrics_of(equilibrium::nn_equilibrium(ident, mm, delta, cfg.phi, mono), cfg.phi, th, k);
    } catch (const Error& e) {
        d.ok = false;
        d.failure = e.what();
    }
    return d;
}

namespace {

enum class Rel { Less, Greater, LessAbs, GreaterAbs };

struct RowSpec {
    const char* metric;
    Rel rel;
    double ModelMetrics::*field;
    bool monopoly;
    double reference_pct;
    double band;
    bool all;
};

// Effect rows are read at the monopoly optimum.
const RowSpec kRows[] = {
    {"avg own-price effect", Rel::LessAbs, &ModelMetrics::own_effect, true, 100.0, 0.0, true},
    {"avg cross-price effect", Rel::Less, &ModelMetrics::cross_effect, true, 100.0, 0.0, true},
    {"avg substitution effect", Rel::Greater, &ModelMetrics::subst_effect, true, 65.7, 8.0, false},
    {"avg complementary effect", Rel::GreaterAbs, &ModelMetrics::compl_effect, true, 92.4, 5.0, false},
    {"number of substitutes", Rel::Less, &ModelMetrics::n_substitutes, true, 76.6, 8.0, false},
    {"number of complements", Rel::Greater, &ModelMetrics::n_complements, true, 73.1, 8.0, false},
    {"firm consumer surplus", Rel::Less, &ModelMetrics::consumer_surplus, false, 95.6, 5.0, false},
    {"monopoly consumer surplus", Rel::Less, &ModelMetrics::consumer_surplus, true, 95.7, 5.0, false},
    {"firm aggregate profit", Rel::Less, &ModelMetrics::profit, false, 62.2, 8.0, false},
    {"monopoly aggregate profit", Rel::Less, &ModelMetrics::profit, true, 99.4, 5.0, false},
    {"firm aggregate demand", Rel::Less, &ModelMetrics::demand, false, 94.2, 5.0, false},
    {"monopoly aggregate demand", Rel::Less, &ModelMetrics::demand, true, 95.6, 5.0, false},
};

const char* rel_name(Rel r) {
    switch (r) {
        case Rel::Less: return "<";
        case Rel::Greater: return ">";
        case Rel::LessAbs: return "< (abs.)";
        case Rel::GreaterAbs: return "> (abs.)";
    }
    return "?";
}

// Strict relations with a relative tie band, so rounding noise between
// identical models does not count as a difference.
bool holds(Rel r, double con, double unc) {
    if (r == Rel::LessAbs || r == Rel::GreaterAbs) {
        con = std::abs(con);
        unc = std::abs(unc);
    }
    const double tie = 1e-9 * std::max(std::abs(con), std::abs(unc)) + 1e-12;
    if (r == Rel::Less || r == Rel::LessAbs) return con < unc - tie;
    return con > unc + tie;
}

}  // namespace

std::vector<StudyRow> aggregate(const std::vector<DrawMetrics>& draws) {
    std::vector<StudyRow> rows;
    for (const RowSpec& spec : kRows) {
        StudyRow row;
        row.metric = spec.metric;
        row.relation = rel_name(spec.rel);
        row.reference_pct = spec.reference_pct;
        row.band = spec.band;
        row.required_all = spec.all;
        double con = 0.0, unc = 0.0;
        long n = 0, hit = 0;
        for (const DrawMetrics& d : draws) {
            if (!d.ok) continue;
            const ModelMetrics& c = spec.monopoly ? d.mono_con : d.firm_con;
            const ModelMetrics& u = spec.monopoly ? d.mono_unc : d.firm_unc;
            con += c.*spec.field;
            unc += u.*spec.field;
            hit += holds(spec.rel, c.*spec.field, u.*spec.field) ? 1 : 0;
            ++n;
        }
        if (n > 0) {
            row.constrained = con / static_cast<double>(n);
            row.unconstrained = unc / static_cast<double>(n);
            row.pct_draws = 100.0 * static_cast<double>(hit) / static_cast<double>(n);
        }
        rows.push_back(row);
    }
    return rows;
}

StudyResult run_study(const SimConfig& cfg) {
    cfg.validate();
    StudyResult r;
    r.draws.resize(static_cast<std::size_t>(cfg.n_draws));
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int i = next++; i < cfg.n_draws; i = next++)
            r.draws[static_cast<std::size_t>(i)] = run_draw(cfg, static_cast<std::uint64_t>(i));
    };
    const int nthreads = std::min(cfg.threads, cfg.n_draws);
    if (nthreads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }

    std::vector<DrawMetrics> full;
    double gap_full = 0.0, gap_red = 0.0, mono_beats = 0.0;
    int n_ok = 0;
    for (const DrawMetrics& d : r.draws) {
        if (!d.ok) {
            ++r.failures;
            continue;
        }
        ++n_ok;
        r.mean_goods += static_cast<double>(d.goods);
        r.mean_baskets += static_cast<double>(d.baskets);
        r.mean_rank += static_cast<double>(d.rank);
        r.mean_missing += static_cast<double>(d.missing_basis_vectors);
        mono_beats += d.mono_con.profit >= d.firm_con.profit ? 1.0 : 0.0;
        const double gap = std::abs(d.mono_con.own_effect - d.mono_unc.own_effect);
        if (d.full_row_rank) {
            full.push_back(d);
            gap_full += gap;
        } else {
            gap_red += gap;
        }
    }
    if (static_cast<double>(r.failures) > cfg.max_failure_share * cfg.n_draws) {
        std::ostringstream msg;
        msg << "run_study: " << r.failures << " of " << cfg.n_draws << " draws failed";
        for (const DrawMetrics& d : r.draws)
            if (!d.ok) {
                msg << " (first: draw " << d.index << ": " << d.failure << ")";
                break;
            }
        throw NumericalError(msg.str());
    }
    if (n_ok > 0) {
        const double n = n_ok;
        r.mean_goods /= n;
        r.mean_baskets /= n;
        r.mean_rank /= n;
        r.mean_missing /= n;
        r.monopoly_beats_firm_pct = 100.0 * mono_beats / n;
    }
    r.full_rank_draws = static_cast<int>(full.size());
    if (!full.empty()) r.full_rank_own_gap = gap_full / static_cast<double>(full.size());
    if (n_ok > r.full_rank_draws) r.reduced_rank_own_gap = gap_red / static_cast<double>(n_ok - r.full_rank_draws);
    r.rows = aggregate(r.draws);
    r.full_rank_rows = aggregate(full);
    return r;
}

std::string study_csv(const StudyResult& r, const std::string& provenance) {
    using io::csv_field;
    using io::format_number;
    std::string out = provenance;
    out += "sample,metric,constrained,unconstrained,relation,pct_draws,reference_pct,band\n";
    auto emit = [&](const char* sample, const std::vector<StudyRow>& rows) {
        for (const StudyRow& row : rows) {
            out += std::string(sample) + ',' + csv_field(row.metric) + ',' + format_number(row.constrained) + ',' +
                   format_number(row.unconstrained) + ',' + csv_field(row.relation) + ',' +
                   format_number(row.pct_draws) + ',' + format_number(row.reference_pct) + ',' +
                   format_number(row.band) + '\n';
        }
    };
    emit("all", r.rows);
    emit("full_rank", r.full_rank_rows);
    return out;
}

namespace {

nlohmann::json rows_json(const std::vector<StudyRow>& rows) {
    nlohmann::json arr = nlohmann::json::array();
    for (const StudyRow& row : rows)
        arr.push_back({{"metric", row.metric},
                       {"constrained", row.constrained},
                       {"unconstrained", row.unconstrained},
                       {"relation", row.relation},
                       {"pct_draws", row.pct_draws},
                       {"reference_pct", row.reference_pct},
                       {"band", row.band},
                       {"required_all", row.required_all}});
    return arr;
}

nlohmann::json model_json(const ModelMetrics& m) {
    return {{"own_effect", m.own_effect},       {"cross_effect", m.cross_effect},
            {"subst_effect", m.subst_effect},   {"compl_effect", m.compl_effect},
            {"n_substitutes", m.n_substitutes}, {"n_complements", m.n_complements},
            {"consumer_surplus", m.consumer_surplus}, {"profit", m.profit},
            {"demand", m.demand},               {"face_reduced", m.face_reduced}};
}

}  // namespace

std::string study_json(const StudyResult& r, const std::string& config_hash) {
    nlohmann::json j;
    j["version"] = io::version();
    j["config_sha256"] = config_hash;
    j["draws"] = r.draws.size();
    j["failures"] = r.failures;
    j["full_rank_draws"] = r.full_rank_draws;
    j["mean_goods"] = r.mean_goods;
    j["mean_baskets"] = r.mean_baskets;
    j["mean_rank"] = r.mean_rank;
    j["mean_missing_basis_vectors"] = r.mean_missing;
    j["monopoly_profit_ge_firm_pct"] = r.monopoly_beats_firm_pct;
    j["full_rank_own_effect_gap"] = r.full_rank_own_gap;
    j["reduced_rank_own_effect_gap"] = r.reduced_rank_own_gap;
    j["rows"] = rows_json(r.rows);
    j["full_rank_rows"] = rows_json(r.full_rank_rows);
    return io::json_dump(std::move(j));
}

std::string draw_ndjson(const DrawMetrics& d) {
    nlohmann::json j;
    j["index"] = d.index;
    j["ok"] = d.ok;
    if (!d.ok) j["failure"] = d.failure;
    j["goods"] = d.goods;
    j["baskets"] = d.baskets;
    j["rank"] = d.rank;
    j["missing_basis_vectors"] = d.missing_basis_vectors;
    j["full_row_rank"] = d.full_row_rank;
    if (d.ok) {
        j["firm_constrained"] = model_json(d.firm_con);
        j["firm_unconstrained"] = model_json(d.firm_unc);
        j["monopoly_constrained"] = model_json(d.mono_con);
        j["monopoly_unconstrained"] = model_json(d.mono_unc);
    }
    return j.dump() + "\n";
}

}  // namespace csd::simulate
