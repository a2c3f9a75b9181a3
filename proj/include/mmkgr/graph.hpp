#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace mmkgr {

using EntityId = std::int32_t;
using RelationId = std::int32_t;

struct Triplet {
    EntityId head = 0;
    RelationId relation = 0;
    EntityId tail = 0;

    friend bool operator==(const Triplet&, const Triplet&) = default;
    friend auto operator<=>(const Triplet&, const Triplet&) = default;
};

// Dense first-seen string interning for entity and relation names.
class Vocab {
public:
    std::int32_t add_or_get(const std::string& name) {
        auto it = index_.find(name);
        if (it != index_.end()) return it->second;
        const auto id = static_cast<std::int32_t>(names_.size());
        names_.push_back(name);
        index_.emplace(name, id);
        return id;
    }

    std::int32_t get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end())
            throw std::out_of_range("vocab: unknown name '" + name + "'");
        return it->second;
    }

    bool contains(const std::string& name) const { return index_.count(name) > 0; }
    const std::string& name(std::int32_t id) const { return names_.at(static_cast<std::size_t>(id)); }
    std::int32_t size() const { return static_cast<std::int32_t>(names_.size()); }

    void dump_tsv(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("vocab: cannot write " + path);
        for (std::size_t i = 0; i < names_.size(); ++i) out << names_[i] << '\t' << i << '\n';
    }

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, std::int32_t> index_;
};

// One triplet per line: head<TAB>relation<TAB>tail. Ids are assigned in
// first-seen order; duplicates are kept here and collapsed by set semantics
// at split construction.
inline std::vector<Triplet> load_triplets(const std::string& path, Vocab& entities,
                                          Vocab& relations) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("triplets: cannot open " + path);
    std::vector<Triplet> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos ||
            line.find('\t', t2 + 1) != std::string::npos) {
            throw std::runtime_error("triplets: malformed line " + std::to_string(line_no) +
                                     " in " + path + " (expected head<TAB>relation<TAB>tail)");
        }
        const std::string h = line.substr(0, t1);
        const std::string r = line.substr(t1 + 1, t2 - t1 - 1);
        const std::string t = line.substr(t2 + 1);
        if (h.empty() || r.empty() || t.empty())
            throw std::runtime_error("triplets: empty field on line " + std::to_string(line_no) +
                                     " in " + path);
        out.push_back({entities.add_or_get(h), relations.add_or_get(r), entities.add_or_get(t)});
    }
    if (out.empty()) throw std::runtime_error("triplets: no triplets in " + path);
    return out;
}

struct Action {
    RelationId relation = 0;
    EntityId tail = 0;

    friend bool operator==(const Action&, const Action&) = default;
};

// Ordered candidate actions for one step. STOP (a NO_OP self-loop) is always
// present at index 0 so the policy distribution is over a homogeneous list.
struct ActionSpace {
    std::vector<Action> actions;

    int size() const { return static_cast<int>(actions.size()); }
};

// Immutable after build; relation id layout is
//   [0, base_count)                original relations
//   [base_count, 2*base_count)     inverses, when enabled
//   last id                        NO_OP (the STOP self-loop label)
class KnowledgeGraph {
public:
    KnowledgeGraph() = default;

    static KnowledgeGraph build(const std::vector<Triplet>& triplets, EntityId entity_count,
                                RelationId base_relation_count, bool add_inverses) {
        KnowledgeGraph g;
        g.entity_count_ = entity_count;
        g.base_relation_count_ = base_relation_count;
        g.has_inverses_ = add_inverses;
        g.adjacency_.assign(static_cast<std::size_t>(entity_count), {});
        for (const Triplet& t : triplets) {
            if (t.head < 0 || t.head >= entity_count || t.tail < 0 || t.tail >= entity_count)
                throw std::out_of_range("graph: entity id outside vocabulary");
            if (t.relation < 0 || t.relation >= base_relation_count)
                throw std::out_of_range("graph: relation id outside vocabulary");
            g.adjacency_[static_cast<std::size_t>(t.head)].push_back({t.relation, t.tail});
            if (add_inverses)
                g.adjacency_[static_cast<std::size_t>(t.tail)].push_back(
                    {g.inverse_unchecked(t.relation), t.head});
        }
        for (auto& edges : g.adjacency_) {
            std::sort(edges.begin(), edges.end(), [](const Action& a, const Action& b) {
                return std::tie(a.relation, a.tail) < std::tie(b.relation, b.tail);
            });
            edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
        }
        return g;
    }

    EntityId entity_count() const { return entity_count_; }
    RelationId base_relation_count() const { return base_relation_count_; }
    bool has_inverses() const { return has_inverses_; }

    // Total relation ids including inverses and NO_OP; embedding tables are
    // sized by this.
    RelationId relation_count() const {
        return has_inverses_ ? 2 * base_relation_count_ + 1 : base_relation_count_ + 1;
    }

    RelationId no_op() const { return relation_count() - 1; }

    RelationId inverse(RelationId r) const {
        if (r == no_op()) return r;
        if (!has_inverses_) throw std::logic_error("graph: inverses not enabled");
        return inverse_unchecked(r);
    }

    const std::vector<Action>& outgoing(EntityId e) const {
        return adjacency_.at(static_cast<std::size_t>(e));
    }

    int out_degree(EntityId e) const { return static_cast<int>(outgoing(e).size()); }

    bool has_edge(EntityId h, RelationId r, EntityId t) const {
        const auto& edges = outgoing(h);
        return std::binary_search(edges.begin(), edges.end(), Action{r, t},
                                  [](const Action& a, const Action& b) {
                                      return std::tie(a.relation, a.tail) <
                                             std::tie(b.relation, b.tail);
                                  });
    }

    // True when some path of at most max_hops edges links src to dst.
    bool reachable_within(EntityId src, EntityId dst, int max_hops) const {
        if (src == dst) return true;
        std::vector<int> dist(static_cast<std::size_t>(entity_count_), -1);
        std::deque<EntityId> queue{src};
        dist[static_cast<std::size_t>(src)] = 0;
        while (!queue.empty()) {
            const EntityId e = queue.front();
            queue.pop_front();
            const int d = dist[static_cast<std::size_t>(e)];
            if (d >= max_hops) continue;
            for (const Action& a : outgoing(e)) {
                if (dist[static_cast<std::size_t>(a.tail)] != -1) continue;
                if (a.tail == dst) return true;
                dist[static_cast<std::size_t>(a.tail)] = d + 1;
                queue.push_back(a.tail);
            }
        }
        return false;
    }

private:
    RelationId inverse_unchecked(RelationId r) const {
        return r < base_relation_count_ ? r + base_relation_count_ : r - base_relation_count_;
    }

    EntityId entity_count_ = 0;
    RelationId base_relation_count_ = 0;
    bool has_inverses_ = false;
    std::vector<std::vector<Action>> adjacency_;
};

// Candidate actions at entity `e`: STOP first, then outgoing edges in
// adjacency order. When out-degree exceeds max_actions the edges kept are
// those whose tails have the highest out-degree (ties to the smaller entity
// id). With mask_direct set, the edge asserting the query itself is dropped
// at every step; training rollouts on train queries use this, evaluation
// never does. Masking only the first step is not enough: one STOP re-opens
// the direct edge and the policy converges on that shortcut instead of a
// witness path.
inline ActionSpace valid_actions(const KnowledgeGraph& graph, EntityId e, int max_actions,
                                 const Triplet& query, int step, bool mask_direct) {
    (void)step;
    ActionSpace space;
    space.actions.push_back({graph.no_op(), e});
    std::vector<Action> edges;
    for (const Action& a : graph.outgoing(e)) {
        if (mask_direct && e == query.head && a.relation == query.relation &&
            a.tail == query.tail)
            continue;
        edges.push_back(a);
    }
    if (max_actions > 0 && static_cast<int>(edges.size()) > max_actions) {
        std::vector<Action> ranked = edges;
        std::stable_sort(ranked.begin(), ranked.end(), [&](const Action& a, const Action& b) {
            const int da = graph.out_degree(a.tail);
            const int db = graph.out_degree(b.tail);
            if (da != db) return da > db;
            return std::tie(a.tail, a.relation) < std::tie(b.tail, b.relation);
        });
        ranked.resize(static_cast<std::size_t>(max_actions));
        std::set<std::pair<RelationId, EntityId>> keep;
        for (const Action& a : ranked) keep.emplace(a.relation, a.tail);
        std::vector<Action> kept;
        for (const Action& a : edges)
            if (keep.count({a.relation, a.tail})) kept.push_back(a);
        edges = std::move(kept);
    }
    space.actions.insert(space.actions.end(), edges.begin(), edges.end());
    return space;
}

struct DatasetSplit {
    std::vector<Triplet> train;
    std::vector<Triplet> valid;
    std::vector<Triplet> test;
};

inline void dedup_sorted(std::vector<Triplet>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
}

inline void validate_disjoint(const DatasetSplit& split) {
    std::set<Triplet> train(split.train.begin(), split.train.end());
    for (const Triplet& t : split.valid)
        if (train.count(t))
            throw std::runtime_error("dataset: triplet present in both train and valid");
    std::set<Triplet> valid(split.valid.begin(), split.valid.end());
    for (const Triplet& t : split.test)
        if (train.count(t) || valid.count(t))
            throw std::runtime_error("dataset: triplet present in test and another split");
}

inline void write_triplets_tsv(const std::string& path, const std::vector<Triplet>& triplets,
                               const Vocab& entities, const Vocab& relations) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("triplets: cannot write " + path);
    for (const Triplet& t : triplets)
        out << entities.name(t.head) << '\t' << relations.name(t.relation) << '\t'
            << entities.name(t.tail) << '\n';
}

} // namespace mmkgr
