#include "csd/estimate.hpp"

#include "csd/errors.hpp"

#include <boost/math/special_functions/beta.hpp>

#include <map>
#include <set>

namespace csd::estimate {

double jeffreys_upper(long successes, long trials, double confidence) {
    if (trials < 0 || successes < 0 || successes > trials) throw InvalidInputError("need 0 <= successes <= trials");
    if (!(confidence > 0.0 && confidence < 1.0)) throw InvalidInputError("confidence must be in (0, 1)");
    if (successes == trials) return 1.0;
    return boost::math::ibeta_inv(static_cast<double>(successes) + 0.5, static_cast<double>(trials - successes) + 0.5,
                                  confidence);
}

std::vector<SingletonVerdict> singleton_screen(const copurchase::TransactionLog& log, double confidence,
                                               double threshold) {
    const auto& s = log.s();
    std::vector<long> appear(static_cast<std::size_t>(log.products()), 0), alone(static_cast<std::size_t>(log.products()), 0);
    for (Index t = 0; t < s.outerSize(); ++t) {
        long nnz = 0;
        Index last = -1;
        for (copurchase::SparseMatrix::InnerIterator it(s, t); it; ++it) {
            ++appear[static_cast<std::size_t>(it.row())];
            ++nnz;
            last = it.row();
        }
        if (nnz == 1) ++alone[static_cast<std::size_t>(last)];
    }
    std::vector<SingletonVerdict> out;
    for (Index k = 0; k < log.products(); ++k) {
        SingletonVerdict v;
        v.product = log.product_ids()[static_cast<std::size_t>(k)];
        v.appearances = appear[static_cast<std::size_t>(k)];
        v.singletons = alone[static_cast<std::size_t>(k)];
        v.upper = jeffreys_upper(v.singletons, v.appearances, confidence);
        v.never_singleton = v.singletons == 0 && v.upper < threshold;
        out.push_back(std::move(v));
    }
    return out;
}

Matrix unique_baskets(const copurchase::TransactionLog& log) {
    const auto& q = log.quantities();
    std::set<std::vector<std::pair<Index, double>>> seen;
    std::vector<std::vector<std::pair<Index, double>>> order;
    for (Index t = 0; t < q.outerSize(); ++t) {
        std::vector<std::pair<Index, double>> b;
        for (copurchase::SparseMatrix::InnerIterator it(q, t); it; ++it) b.emplace_back(it.row(), it.value());
        std::sort(b.begin(), b.end());
        if (seen.insert(b).second) order.push_back(std::move(b));
    }
    Matrix a = Matrix::Zero(log.products(), static_cast<Index>(order.size()));
    for (std::size_t j = 0; j < order.size(); ++j)
        for (const auto& [r, v] : order[j]) a(r, static_cast<Index>(j)) = v;
    return a;
}

ConsiderationSet reduce_consideration_set(const Matrix& baskets, std::vector<std::string> good_labels) {
    const Index k = baskets.rows();
    if (k == 0 || baskets.cols() == 0) throw InvalidInputError("no baskets to reduce");
    if (good_labels.empty())
        for (Index g = 0; g < k; ++g) good_labels.push_back("g" + std::to_string(g));

    // Distinct columns only.
    std::vector<Index> cols;
    {
        std::set<std::vector<double>> seen;
        for (Index j = 0; j < baskets.cols(); ++j) {
            std::vector<double> v(baskets.col(j).data(), baskets.col(j).data() + k);
            if (seen.insert(v).second) cols.push_back(j);
        }
    }

    std::vector<char> singleton(static_cast<std::size_t>(k), 0);
    for (Index j : cols) {
        Index nnz = 0, at = -1;
        for (Index g = 0; g < k; ++g)
            if (baskets(g, j) != 0.0) {
                ++nnz;
                at = g;
            }
        if (nnz == 1) singleton[static_cast<std::size_t>(at)] = 1;
    }

    // Group by the non-singleton remainder.
    std::map<std::vector<double>, std::vector<Index>> groups;
    std::vector<std::vector<double>> group_order;
    for (Index j : cols) {
        std::vector<double> rest(static_cast<std::size_t>(k), 0.0);
        bool any = false;
        for (Index g = 0; g < k; ++g)
            if (!singleton[static_cast<std::size_t>(g)] && baskets(g, j) != 0.0) {
                rest[static_cast<std::size_t>(g)] = baskets(g, j);
                any = true;
            }
        if (!any) continue;  // rebuilt from singletons
        auto [it, fresh] = groups.try_emplace(rest);
        if (fresh) group_order.push_back(rest);
        it->second.push_back(j);
    }

    // j is redundant when j = i + nonnegative singleton amounts with a
    // strictly smaller singleton support for i.
    auto redundant = [&](Index j, Index i) {
        bool strict = false;
        for (Index g = 0; g < k; ++g) {
            if (!singleton[static_cast<std::size_t>(g)]) continue;
            const double a = baskets(g, i), b = baskets(g, j);
            if (a != 0.0 && b == 0.0) return false;
            if (a > b) return false;
            if (a == 0.0 && b != 0.0) strict = true;
        }
        return strict;
    };

    std::vector<Index> kept;
    for (const auto& rest : group_order) {
        const auto& members = groups[rest];
        for (Index j : members) {
            bool drop = false;
            for (Index i : members)
                if (i != j && redundant(j, i)) {
                    drop = true;
                    break;
                }
            if (!drop) kept.push_back(j);
        }
    }

    std::vector<Index> singles;
    for (Index g = 0; g < k; ++g)
        if (singleton[static_cast<std::size_t>(g)]) singles.push_back(g);
    Matrix a = Matrix::Zero(k, static_cast<Index>(singles.size() + kept.size()));
    std::vector<std::string> labels;
    Index c = 0;
    for (Index g : singles) {
        a(g, c++) = 1.0;
        labels.push_back("single:" + good_labels[static_cast<std::size_t>(g)]);
    }
    for (Index j : kept) {
        a.col(c++) = baskets.col(j);
        labels.push_back("b" + std::to_string(j));
    }
    return ConsiderationSet(a, std::move(good_labels), std::move(labels));
}

ConsiderationSet reduce_consideration_set(const copurchase::TransactionLog& log) {
    return reduce_consideration_set(unique_baskets(log), log.product_ids());
}

}  // namespace csd::estimate
