#pragma once

#include "aglsc/dense.hpp"
#include "aglsc/error.hpp"
#include "aglsc/ingest.hpp"
#include "aglsc/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace aglsc::eval {

struct RankedList {
    Index user = -1;
    std::vector<Index> items;
    std::vector<double> scores;
    // Set when fewer than K candidates were available.
    bool short_list = false;
};

// Top-K non-excluded items by descending score, ties by ascending item id.
// `exclude` must be sorted.
inline RankedList rank_items(std::span<const double> scores, std::span<const Index> exclude, Index k,
                             Index user = -1) {
    if (k < 1) throw ConfigError("rank_items: K must be at least 1");
    RankedList out;
    out.user = user;
    std::vector<Index> cand;
    cand.reserve(scores.size());
    auto ex = exclude.begin();
    for (Index i = 0; i < static_cast<Index>(scores.size()); ++i) {
        while (ex != exclude.end() && *ex < i) ++ex;
        if (ex != exclude.end() && *ex == i) continue;
        cand.push_back(i);
    }
    const auto better = [&](Index a, Index b) { return scores[a] != scores[b] ? scores[a] > scores[b] : a < b; };
    const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), cand.size());
    out.short_list = take < static_cast<std::size_t>(k);
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end(), better);
    out.items.assign(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take));
    for (Index i : out.items) out.scores.push_back(scores[i]);
    return out;
}

// |top-K ∩ relevant| / |relevant|; nullopt when nothing is relevant.
// `relevant` must be sorted.
inline std::optional<double> recall_at_k(const RankedList& ranked, std::span<const Index> relevant) {
    if (relevant.empty()) return std::nullopt;
    std::size_t hits = 0;
    for (Index i : ranked.items)
        if (std::binary_search(relevant.begin(), relevant.end(), i)) ++hits;
    return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

// Binary-relevance NDCG over the first K positions.
inline std::optional<double> ndcg_at_k(const RankedList& ranked, std::span<const Index> relevant, Index k) {
    if (relevant.empty()) return std::nullopt;
    double dcg = 0.0;
    const auto n = std::min<std::size_t>(ranked.items.size(), static_cast<std::size_t>(k));
    for (std::size_t pos = 0; pos < n; ++pos)
        if (std::binary_search(relevant.begin(), relevant.end(), ranked.items[pos]))
            dcg += 1.0 / std::log2(static_cast<double>(pos) + 2.0);
    double idcg = 0.0;
    const auto ideal = std::min<std::size_t>(relevant.size(), static_cast<std::size_t>(k));
    for (std::size_t pos = 0; pos < ideal; ++pos) idcg += 1.0 / std::log2(static_cast<double>(pos) + 2.0);
    return dcg / idcg;
}

struct MetricReport {
    std::vector<Index> ks;
    std::map<Index, double> recall;
    std::map<Index, double> ndcg;
    std::size_t users_evaluated = 0;
    // Per evaluated user, NDCG at each K (same order as ks).
    std::vector<Index> users;
    std::vector<std::vector<double>> user_ndcg;
};

// Scores for a block of users (rows) over all items.
using ScoreFn = std::function<DenseMatrix(std::span<const Index> users)>;

// Mean Recall@K / NDCG@K over users with at least one relevant item.
// Rows of `exclude` and `relevant` are item sets per user.
inline MetricReport evaluate(const ScoreFn& score, const SparseMatrix& exclude, const SparseMatrix& relevant,
                             std::vector<Index> ks, Index block = 256) {
    if (ks.empty()) throw ConfigError("evaluate: no K values");
    std::sort(ks.begin(), ks.end());
    ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
    const Index kmax = ks.back();
    MetricReport rep;
    rep.ks = ks;
    for (Index k : ks) rep.recall[k] = rep.ndcg[k] = 0.0;

    std::vector<Index> eval_users;
    for (Index u = 0; u < relevant.rows(); ++u)
        if (relevant.row_nnz(u) > 0) eval_users.push_back(u);
    if (eval_users.empty()) throw DatasetError("evaluate: no users with test interactions");

    std::map<Index, double> recall_sum;
    std::map<Index, double> ndcg_sum;
    for (std::size_t start = 0; start < eval_users.size(); start += static_cast<std::size_t>(block)) {
        const auto end = std::min(eval_users.size(), start + static_cast<std::size_t>(block));
        const std::span<const Index> users(eval_users.data() + start, end - start);
        const DenseMatrix s = score(users);
        detail::require_shape(s.rows() == static_cast<Index>(users.size()) && s.cols() == relevant.cols(),
                              "evaluate", "score block " + shape_str(s));
        for (std::size_t r = 0; r < users.size(); ++r) {
            const Index u = users[r];
            const auto ranked = rank_items(std::span<const double>(s.row(static_cast<Index>(r)).data(), s.cols()),
                                           exclude.row_cols(u), kmax, u);
            const auto rel = relevant.row_cols(u);
            std::vector<double> per_k;
            for (Index k : ks) {
                RankedList cut = ranked;
                if (static_cast<Index>(cut.items.size()) > k) {
                    cut.items.resize(static_cast<std::size_t>(k));
                    cut.scores.resize(static_cast<std::size_t>(k));
                }
                recall_sum[k] += *recall_at_k(cut, rel);
                const double nd = *ndcg_at_k(cut, rel, k);
                ndcg_sum[k] += nd;
                per_k.push_back(nd);
            }
            rep.users.push_back(u);
            rep.user_ndcg.push_back(std::move(per_k));
        }
    }
    rep.users_evaluated = eval_users.size();
    const auto n = static_cast<double>(eval_users.size());
    for (Index k : ks) {
        rep.recall[k] = recall_sum[k] / n;
        rep.ndcg[k] = ndcg_sum[k] / n;
    }
    return rep;
}

inline MetricReport evaluate(const DenseMatrix& scores, const SparseMatrix& exclude, const SparseMatrix& relevant,
                             std::vector<Index> ks) {
    return evaluate(
        [&](std::span<const Index> users) {
            DenseMatrix out(static_cast<Index>(users.size()), scores.cols());
            for (std::size_t r = 0; r < users.size(); ++r) out.row(static_cast<Index>(r)) = scores.row(users[r]);
            return out;
        },
        exclude, relevant, std::move(ks));
}

struct GroupRow {
    int group = 0;
    std::size_t user_count = 0;
    std::optional<double> ndcg;
    std::size_t min_degree = 0;
    std::size_t max_degree = 0;
};

// Mean NDCG@k per sparsity group; `report` must contain k.
inline std::vector<GroupRow> sparsity_report(const MetricReport& report, const ingest::SparsityGroups& groups,
                                             Index k = 20) {
    const auto kpos = std::find(report.ks.begin(), report.ks.end(), k);
    if (kpos == report.ks.end()) throw ConfigError("sparsity_report: K=" + std::to_string(k) + " not in report");
    const auto ki = static_cast<std::size_t>(kpos - report.ks.begin());
    std::vector<GroupRow> rows(static_cast<std::size_t>(groups.n_groups));
    std::vector<double> sums(rows.size(), 0.0);
    for (std::size_t g = 0; g < rows.size(); ++g) {
        rows[g].group = static_cast<int>(g);
        rows[g].min_degree = groups.degree_range[g].first;
        rows[g].max_degree = groups.degree_range[g].second;
    }
    for (std::size_t i = 0; i < report.users.size(); ++i) {
        const int g = groups.group_of_user.at(static_cast<std::size_t>(report.users[i]));
        if (g < 0) continue;
        ++rows[static_cast<std::size_t>(g)].user_count;
        sums[static_cast<std::size_t>(g)] += report.user_ndcg[i][ki];
    }
    for (std::size_t g = 0; g < rows.size(); ++g)
        if (rows[g].user_count > 0) rows[g].ndcg = sums[g] / static_cast<double>(rows[g].user_count);
    return rows;
}

// ---------------------------------------------------------------------------
// Serialization

inline std::string fmt_real(double v, int precision = 6) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << v;
    return os.str();
}

// Column header, e.g. "R@20,N@20,R@40,N@40".
inline std::string report_csv(const MetricReport& rep) {
    std::ostringstream os;
    os << "users";
    for (Index k : rep.ks) os << ",R@" << k << ",N@" << k;
    os << '\n' << rep.users_evaluated;
    for (Index k : rep.ks) os << ',' << fmt_real(rep.recall.at(k), 8) << ',' << fmt_real(rep.ndcg.at(k), 8);
    os << '\n';
    return os.str();
}

inline std::string report_table(const MetricReport& rep) {
    std::ostringstream os;
    os << std::left << std::setw(8) << "metric";
    for (Index k : rep.ks) os << std::setw(10) << ("R@" + std::to_string(k)) << std::setw(10) << ("N@" + std::to_string(k));
    os << "\n" << std::setw(8) << "value";
    for (Index k : rep.ks) os << std::setw(10) << fmt_real(rep.recall.at(k), 4) << std::setw(10) << fmt_real(rep.ndcg.at(k), 4);
    os << "\n(" << rep.users_evaluated << " test users)\n";
    return os.str();
}

inline std::string sparsity_csv(const std::vector<GroupRow>& rows) {
    std::ostringstream os;
    os << "group_id,user_count,ndcg20\n";
    for (const auto& r : rows) {
        os << r.group << ',' << r.user_count << ',';
        if (r.ndcg) os << fmt_real(*r.ndcg, 8);
        os << '\n';
    }
    return os.str();
}

// Writes the |users| x |items| block of `score` (raw ids resolved through the
// maps) as CSV with a header row of item keys.
inline void export_heatmap(const ScoreFn& score, const ingest::IdMap& user_ids, const ingest::IdMap& item_ids,
                           const std::vector<std::string>& users, const std::vector<std::string>& items,
                           const std::string& path) {
    std::vector<std::string> unknown;
    std::vector<Index> u_idx;
    std::vector<Index> i_idx;
    for (const auto& u : users) {
        if (auto i = user_ids.find(u)) u_idx.push_back(*i);
        else unknown.push_back("user " + u);
    }
    for (const auto& it : items) {
        if (auto i = item_ids.find(it)) i_idx.push_back(*i);
        else unknown.push_back("item " + it);
    }
    if (!unknown.empty()) {
        std::string msg = "export_heatmap: unknown ids:";
        for (const auto& s : unknown) msg += " " + s;
        throw ConfigError(msg);
    }
    const DenseMatrix s = score(u_idx);
    std::ofstream os(path);
    if (!os) throw IoError("cannot write heatmap '" + path + "'");
    os << "user";
    for (const auto& it : items) os << ',' << it;
    os << '\n';
    os << std::setprecision(17);
    for (std::size_t r = 0; r < users.size(); ++r) {
        os << users[r];
        for (Index c : i_idx) os << ',' << s(static_cast<Index>(r), c);
        os << '\n';
    }
}

}  // namespace aglsc::eval
