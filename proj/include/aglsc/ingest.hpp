#pragma once

#include "aglsc/error.hpp"
#include "aglsc/log.hpp"
#include "aglsc/rng.hpp"
#include "aglsc/sparse.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace aglsc::ingest {

enum class Format { TsvRating, CsvRating, PairList };

inline std::optional<Format> parse_format(std::string_view s) {
    if (s == "tsv-rating") return Format::TsvRating;
    if (s == "csv-rating") return Format::CsvRating;
    if (s == "pair-list") return Format::PairList;
    return std::nullopt;
}

inline std::string format_name(Format f) {
    switch (f) {
        case Format::TsvRating: return "tsv-rating";
        case Format::CsvRating: return "csv-rating";
        case Format::PairList: return "pair-list";
    }
    return "?";
}

enum class Split : std::uint8_t { Train, Test };

inline std::string_view split_name(Split s) { return s == Split::Train ? "train" : "test"; }

// Raw key <-> contiguous index, assigned in first-seen order.
class IdMap {
public:
    Index intern(const std::string& key) {
        auto [it, inserted] = index_.try_emplace(key, static_cast<Index>(keys_.size()));
        if (inserted) keys_.push_back(key);
        return it->second;
    }

    std::optional<Index> find(const std::string& key) const {
        const auto it = index_.find(key);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    const std::string& key(Index i) const { return keys_.at(static_cast<std::size_t>(i)); }
    Index size() const noexcept { return static_cast<Index>(keys_.size()); }
    const std::vector<std::string>& keys() const noexcept { return keys_; }

private:
    std::vector<std::string> keys_;
    std::unordered_map<std::string, Index> index_;
};

struct Interaction {
    Index user;
    Index item;
    Split split = Split::Train;

    bool operator==(const Interaction&) const = default;
};

struct InteractionSet {
    IdMap users;
    IdMap items;
    std::vector<Interaction> pairs;

    Index num_users() const noexcept { return users.size(); }
    Index num_items() const noexcept { return items.size(); }

    std::size_t count(Split s) const {
        return static_cast<std::size_t>(
            std::count_if(pairs.begin(), pairs.end(), [s](const Interaction& p) { return p.split == s; }));
    }
};

struct DatasetStats {
    Index users = 0;
    Index items = 0;
    std::size_t interactions = 0;
    double density = 0.0;
};

inline DatasetStats stats(const InteractionSet& data) {
    DatasetStats s;
    s.users = data.num_users();
    s.items = data.num_items();
    s.interactions = data.pairs.size();
    if (s.users > 0 && s.items > 0)
        s.density = static_cast<double>(s.interactions) / (static_cast<double>(s.users) * static_cast<double>(s.items));
    return s;
}

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line, Format fmt) {
    std::vector<std::string_view> out;
    if (fmt == Format::PairList) {
        std::size_t i = 0;
        while (i < line.size()) {
            while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
            if (i >= line.size()) break;
            std::size_t j = i;
            while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
            out.push_back(line.substr(i, j - i));
            i = j;
        }
        return out;
    }
    const char sep = fmt == Format::TsvRating ? '\t' : ',';
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(sep, start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\r' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

inline std::optional<double> parse_real(std::string_view s) {
    s = trim(s);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

}  // namespace detail

// Parses one interaction log. Ratings >= threshold become positives;
// duplicate (user, item) pairs collapse to one. Every pair starts tagged train.
inline InteractionSet load_interactions(std::istream& in, Format fmt, double rating_threshold = 1.0) {
    InteractionSet data;
    std::unordered_set<std::uint64_t> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string_view view = detail::trim(line);
        if (view.empty()) continue;
        const auto fields = detail::split_fields(view, fmt);
        const std::size_t need = fmt == Format::PairList ? 2 : 3;
        if (fields.size() < need)
            throw ParseError("expected at least " + std::to_string(need) + " fields, got " +
                                 std::to_string(fields.size()),
                             lineno);
        const auto user = std::string(detail::trim(fields[0]));
        const auto item = std::string(detail::trim(fields[1]));
        if (user.empty() || item.empty()) throw ParseError("empty user or item field", lineno);
        if (fmt != Format::PairList) {
            const auto rating = detail::parse_real(fields[2]);
            if (!rating) {
                if (fmt == Format::CsvRating && lineno == 1) continue;  // header row
                throw ParseError("rating '" + std::string(fields[2]) + "' is not a number", lineno);
            }
            if (*rating < rating_threshold) continue;
        }
        const Index u = data.users.intern(user);
        const Index i = data.items.intern(item);
        const auto key = (static_cast<std::uint64_t>(u) << 32) | static_cast<std::uint64_t>(i);
        if (seen.insert(key).second) data.pairs.push_back({u, i, Split::Train});
    }
    if (data.pairs.empty()) throw DatasetError("no interactions loaded (empty file or everything below threshold)");
    return data;
}

inline InteractionSet load_interactions(const std::string& path, Format fmt, double rating_threshold = 1.0) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset '" + path + "'");
    try {
        return load_interactions(in, fmt, rating_threshold);
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what(), e.line());
    }
}

// Pair indices grouped by user, in the order they appear in `data.pairs`.
inline std::vector<std::vector<std::size_t>> pairs_by_user(const InteractionSet& data) {
    std::vector<std::vector<std::size_t>> by(static_cast<std::size_t>(data.num_users()));
    for (std::size_t k = 0; k < data.pairs.size(); ++k) by[static_cast<std::size_t>(data.pairs[k].user)].push_back(k);
    return by;
}

// Per-user random holdout: floor(test_fraction * degree) pairs go to test
// unless that leaves fewer than min_train_per_user in train, in which case the
// user stays train-only. Test pairs whose item has no train interaction are
// removed from the set.
inline InteractionSet split(const InteractionSet& data, double test_fraction, Rng& rng,
                            std::size_t min_train_per_user = 1) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw ConfigError("split: test fraction must lie in (0, 1)");
    InteractionSet out = data;
    for (auto& p : out.pairs) p.split = Split::Train;
    auto by_user = pairs_by_user(out);
    for (auto& idx : by_user) {
        const std::size_t degree = idx.size();
        const auto n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(degree)));
        rng.shuffle(idx.begin(), idx.end());
        if (n_test == 0 || degree - n_test < min_train_per_user) continue;
        for (std::size_t k = 0; k < n_test; ++k) out.pairs[idx[k]].split = Split::Test;
    }

    std::vector<char> item_in_train(static_cast<std::size_t>(out.num_items()), 0);
    for (const auto& p : out.pairs)
        if (p.split == Split::Train) item_in_train[static_cast<std::size_t>(p.item)] = 1;
    const auto before = out.pairs.size();
    std::erase_if(out.pairs, [&](const Interaction& p) {
        return p.split == Split::Test && !item_in_train[static_cast<std::size_t>(p.item)];
    });
    if (const auto dropped = before - out.pairs.size(); dropped > 0)
        log_warn("dropped " + std::to_string(dropped) + " test interaction(s) on items absent from train");
    return out;
}

// The split used by the pipeline: a dedicated stream derived from `seed`.
inline InteractionSet split_seeded(const InteractionSet& data, double test_fraction, std::uint64_t seed,
                                   std::size_t min_train_per_user = 1) {
    Rng rng = Rng(seed).fork(0x73706c6974);
    return split(data, test_fraction, rng, min_train_per_user);
}

// Binary M x N matrix of the pairs carrying `which`.
inline SparseMatrix build_matrix(const InteractionSet& data, Split which) {
    std::vector<Triplet> t;
    for (const auto& p : data.pairs)
        if (p.split == which) t.push_back({p.user, p.item, 1.0});
    return SparseMatrix::from_triplets(data.num_users(), data.num_items(), std::move(t));
}

// Split manifest: one `user item split` row per pair, raw ids, in pair order.
// Re-reading it reproduces the same contiguous ids.
inline void write_split_manifest(const InteractionSet& data, std::ostream& os) {
    for (const auto& p : data.pairs)
        os << data.users.key(p.user) << '\t' << data.items.key(p.item) << '\t' << split_name(p.split) << '\n';
}

inline InteractionSet read_split_manifest(std::istream& in) {
    InteractionSet data;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto view = detail::trim(line);
        if (view.empty()) continue;
        const auto f = detail::split_fields(view, Format::PairList);
        if (f.size() != 3) throw ParseError("expected 'user item split'", lineno);
        Split s;
        if (f[2] == "train") s = Split::Train;
        else if (f[2] == "test") s = Split::Test;
        else throw ParseError("unknown split '" + std::string(f[2]) + "'", lineno);
        data.pairs.push_back({data.users.intern(std::string(f[0])), data.items.intern(std::string(f[1])), s});
    }
    if (data.pairs.empty()) throw DatasetError("split manifest is empty");
    return data;
}

struct SparsityGroups {
    // Group id per user; -1 for users without test interactions.
    std::vector<int> group_of_user;
    int n_groups = 0;
    // Inclusive train-degree range per group.
    std::vector<std::pair<std::size_t, std::size_t>> degree_range;
};

// Buckets test users into n_groups train-degree quantiles. Equal degrees
// always share a group; empty groups are merged away, so n_groups in the
// result may be smaller than requested.
inline SparsityGroups sparsity_groups(const InteractionSet& data, int n_groups) {
    if (n_groups < 2) throw ConfigError("sparsity_groups: need at least 2 groups");
    const auto n_users = static_cast<std::size_t>(data.num_users());
    std::vector<std::size_t> train_deg(n_users, 0);
    std::vector<char> has_test(n_users, 0);
    for (const auto& p : data.pairs) {
        if (p.split == Split::Train) ++train_deg[static_cast<std::size_t>(p.user)];
        else has_test[static_cast<std::size_t>(p.user)] = 1;
    }
    std::vector<std::size_t> users;
    for (std::size_t u = 0; u < n_users; ++u)
        if (has_test[u]) users.push_back(u);
    std::stable_sort(users.begin(), users.end(),
                     [&](std::size_t a, std::size_t b) { return train_deg[a] < train_deg[b]; });

    SparsityGroups out;
    out.group_of_user.assign(n_users, -1);
    const std::size_t n = users.size();
    if (n == 0) return out;

    // Quantile slot by rank; a degree inherits the slot of its first occurrence.
    std::vector<int> slot(n);
    for (std::size_t r = 0; r < n; ++r) {
        if (r > 0 && train_deg[users[r]] == train_deg[users[r - 1]]) slot[r] = slot[r - 1];
        else slot[r] = static_cast<int>((r * static_cast<std::size_t>(n_groups)) / n);
    }
    int current = -1;
    int last_slot = -1;
    for (std::size_t r = 0; r < n; ++r) {
        if (slot[r] != last_slot) {
            ++current;
            last_slot = slot[r];
            out.degree_range.emplace_back(train_deg[users[r]], train_deg[users[r]]);
        }
        out.degree_range.back().second = train_deg[users[r]];
        out.group_of_user[users[r]] = current;
    }
    out.n_groups = current + 1;
    return out;
}

}  // namespace aglsc::ingest
