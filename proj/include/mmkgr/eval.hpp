#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmkgr/ablation.hpp"
#include "mmkgr/agent.hpp"
#include "mmkgr/env.hpp"
#include "mmkgr/graph.hpp"

namespace mmkgr {

struct BeamConfig {
    int width = 100;

    void validate() const {
        if (width < 1) throw std::invalid_argument("beam: width must be >= 1");
    }
};

struct BeamEntry {
    EntityId entity = 0;
    std::vector<Action> path;       // the T actions taken
    std::vector<double> step_probs; // per-step action probabilities
    double log_prob = 0.0;

    double probability() const { return std::exp(log_prob); }
};

struct BeamResult {
    // Unique final entities, best path each, sorted by probability with ties
    // to the smaller entity id.
    std::vector<BeamEntry> ranked;
    // Every surviving path at the final step; used for probability mass.
    std::vector<BeamEntry> paths;

    double mass_on(EntityId e) const {
        double m = 0.0;
        for (const BeamEntry& p : paths)
            if (p.entity == e) m += p.probability();
        return m;
    }
};

// Breadth-limited expansion of partial paths by cumulative policy
// probability. Evaluation never masks the direct edge.
inline BeamResult beam_search(Model& m, const KnowledgeGraph& graph, const Triplet& query,
                              const EpisodeConfig& episode, const ModelWiring& wiring,
                              const BeamConfig& beam, bool pooled_z = false) {
    beam.validate();
    EpisodeConfig cfg = episode;
    cfg.mask_direct = false;

    struct Item {
        EpisodeState state;
        HistoryState hist;
        BeamEntry entry;
    };

    Tape t;
    std::vector<Item> items;
    {
        Item root;
        root.state = episode_reset(graph, query);
        root.hist = m.history.bootstrap(t, m.table, graph.no_op(), query.head);
        root.entry.entity = query.head;
        items.push_back(std::move(root));
    }

    for (int step = 0; step < cfg.max_steps; ++step) {
        struct Candidate {
            int parent;
            int action;
            double log_prob;
            double step_prob;
        };
        std::vector<Candidate> pool;
        std::vector<StepEval> evals;
        evals.reserve(items.size());
        for (std::size_t i = 0; i < items.size(); ++i) {
            StepEval ev = policy_step(t, m, graph, items[i].state, items[i].hist, cfg, wiring,
                                      pooled_z);
            const Tensor& row = t.val(ev.probs);
            for (int a = 0; a < ev.space.size(); ++a)
                pool.push_back({static_cast<int>(i), a,
                                items[i].entry.log_prob + std::log(row.at(0, a)), row.at(0, a)});
            evals.push_back(std::move(ev));
        }
        std::stable_sort(pool.begin(), pool.end(),
                         [](const Candidate& a, const Candidate& b) {
                             return a.log_prob > b.log_prob;
                         });
        if (static_cast<int>(pool.size()) > beam.width)
            pool.resize(static_cast<std::size_t>(beam.width));

        std::vector<Item> next;
        next.reserve(pool.size());
        for (const Candidate& c : pool) {
            const Item& parent = items[static_cast<std::size_t>(c.parent)];
            const StepEval& ev = evals[static_cast<std::size_t>(c.parent)];
            const Action& act = ev.space.actions[static_cast<std::size_t>(c.action)];
            Item child;
            child.state = episode_step(graph, parent.state, ev.space, c.action, cfg);
            child.hist = m.history.encode(t, m.table, parent.hist, act.relation, act.tail);
            child.entry = parent.entry;
            child.entry.entity = child.state.current;
            child.entry.path.push_back(act);
            child.entry.step_probs.push_back(c.step_prob);
            child.entry.log_prob = c.log_prob;
            next.push_back(std::move(child));
        }
        items = std::move(next);
    }

    BeamResult result;
    result.paths.reserve(items.size());
    for (Item& item : items) result.paths.push_back(std::move(item.entry));

    std::map<EntityId, const BeamEntry*> best;
    for (const BeamEntry& p : result.paths) {
        auto it = best.find(p.entity);
        if (it == best.end() || p.log_prob > it->second->log_prob) best[p.entity] = &p;
    }
    for (const auto& [entity, entry] : best) result.ranked.push_back(*entry);
    std::stable_sort(result.ranked.begin(), result.ranked.end(),
                     [](const BeamEntry& a, const BeamEntry& b) {
                         if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                         return a.entity < b.entity;
                     });
    return result;
}

// Known-true tails per (source, relation) over every split; the filtered
// setting removes these (minus the query's own answer) before ranking.
using KnownTails = std::map<std::pair<EntityId, RelationId>, std::set<EntityId>>;

inline KnownTails build_known_tails(const DatasetSplit& split, const KnowledgeGraph& graph) {
    KnownTails known;
    auto add = [&](const Triplet& t) {
        known[{t.head, t.relation}].insert(t.tail);
        if (graph.has_inverses()) known[{t.tail, graph.inverse(t.relation)}].insert(t.head);
    };
    for (const Triplet& t : split.train) add(t);
    for (const Triplet& t : split.valid) add(t);
    for (const Triplet& t : split.test) add(t);
    return known;
}

// 1-based rank of the target in a ranked entity list after dropping other
// known-true answers. nullopt when the target never surfaced.
inline std::optional<int> filtered_rank(const std::vector<BeamEntry>& ranked,
                                        const std::set<EntityId>& known_others,
                                        EntityId target) {
    int rank = 0;
    for (const BeamEntry& e : ranked) {
        if (e.entity != target && known_others.count(e.entity)) continue;
        ++rank;
        if (e.entity == target) return rank;
    }
    return std::nullopt;
}

struct EntityLinkMetrics {
    double mrr = 0.0; // percent
    double hits1 = 0.0, hits5 = 0.0, hits10 = 0.0; // percent
    int query_count = 0;
    std::vector<std::optional<int>> ranks;
};

inline EntityLinkMetrics metrics_from_ranks(const std::vector<std::optional<int>>& ranks) {
    EntityLinkMetrics out;
    out.ranks = ranks;
    out.query_count = static_cast<int>(ranks.size());
    if (ranks.empty()) return out;
    double rr = 0.0;
    int h1 = 0, h5 = 0, h10 = 0;
    for (const auto& r : ranks) {
        if (!r) continue;
        rr += 1.0 / static_cast<double>(*r);
        h1 += *r <= 1 ? 1 : 0;
        h5 += *r <= 5 ? 1 : 0;
        h10 += *r <= 10 ? 1 : 0;
    }
    const double n = static_cast<double>(ranks.size());
    out.mrr = 100.0 * rr / n;
    out.hits1 = 100.0 * h1 / n;
    out.hits5 = 100.0 * h5 / n;
    out.hits10 = 100.0 * h10 / n;
    return out;
}

// Beam-ranked link prediction over an explicit query list (tail queries;
// callers append inverse head queries when wanted).
inline EntityLinkMetrics entity_link_prediction(Model& m, const KnowledgeGraph& graph,
                                                const std::vector<Triplet>& queries,
                                                const KnownTails& known,
                                                const EpisodeConfig& episode,
                                                const ModelWiring& wiring,
                                                const BeamConfig& beam,
                                                bool pooled_z = false) {
    std::vector<std::optional<int>> ranks;
    ranks.reserve(queries.size());
    for (const Triplet& q : queries) {
        BeamResult result = beam_search(m, graph, q, episode, wiring, beam, pooled_z);
        std::set<EntityId> others;
        auto it = known.find({q.head, q.relation});
        if (it != known.end()) {
            others = it->second;
            others.erase(q.tail);
        }
        ranks.push_back(filtered_rank(result.ranked, others, q.tail));
    }
    return metrics_from_ranks(ranks);
}

// Average precision of a ranked candidate list against a true set.
inline double average_precision(const std::vector<RelationId>& ranked,
                                const std::set<RelationId>& truth) {
    if (truth.empty()) throw std::invalid_argument("average precision: empty truth set");
    int hits = 0;
    double acc = 0.0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        if (!truth.count(ranked[i])) continue;
        ++hits;
        acc += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
    return acc / static_cast<double>(truth.size());
}

struct RelationLinkMetrics {
    double map_overall = 0.0; // percent
    std::map<RelationId, double> map_per_relation; // percent, keyed by the test relation
};

// Relation prediction for (e_s, ?, e_d): every base relation is scored by
// the probability mass its beam assigns to e_d, candidates are ranked, and
// average precision is taken against all known-true relations of the pair.
inline RelationLinkMetrics relation_link_prediction(Model& m, const KnowledgeGraph& graph,
                                                    const std::vector<Triplet>& test_triplets,
                                                    const DatasetSplit& split,
                                                    const EpisodeConfig& episode,
                                                    const ModelWiring& wiring,
                                                    const BeamConfig& beam,
                                                    bool pooled_z = false) {
    std::map<std::pair<EntityId, EntityId>, std::set<RelationId>> truth;
    for (const auto* part : {&split.train, &split.valid, &split.test})
        for (const Triplet& t : *part) truth[{t.head, t.tail}].insert(t.relation);

    RelationLinkMetrics out;
    std::map<RelationId, std::pair<double, int>> grouped;
    double total = 0.0;
    for (const Triplet& q : test_triplets) {
        std::vector<std::pair<double, RelationId>> scored;
        for (RelationId r = 0; r < graph.base_relation_count(); ++r) {
            BeamResult result =
                beam_search(m, graph, {q.head, r, q.tail}, episode, wiring, beam, pooled_z);
            scored.push_back({result.mass_on(q.tail), r});
        }
        std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        std::vector<RelationId> ranked;
        ranked.reserve(scored.size());
        for (const auto& [mass, r] : scored) ranked.push_back(r);
        const double ap = average_precision(ranked, truth.at({q.head, q.tail}));
        total += ap;
        auto& bucket = grouped[q.relation];
        bucket.first += ap;
        bucket.second += 1;
    }
    if (!test_triplets.empty())
        out.map_overall = 100.0 * total / static_cast<double>(test_triplets.size());
    for (const auto& [rel, bucket] : grouped)
        out.map_per_relation[rel] = 100.0 * bucket.first / static_cast<double>(bucket.second);
    return out;
}

struct HopBreakdown {
    int successes = 0;
    std::map<int, double> percent_by_hops; // over successful greedy decodes

    double share(int k) const {
        auto it = percent_by_hops.find(k);
        return it == percent_by_hops.end() ? 0.0 : it->second;
    }
};

// Greedy decode per query; among the successful ones, the distribution of
// the non-STOP hop count.
inline HopBreakdown per_hop_breakdown(Model& m, const KnowledgeGraph& graph,
                                      const std::vector<Triplet>& queries,
                                      const EpisodeConfig& episode, const ModelWiring& wiring,
                                      bool pooled_z = false) {
    EpisodeConfig cfg = episode;
    cfg.mask_direct = false;
    std::map<int, int> counts;
    int successes = 0;
    for (const Triplet& q : queries) {
        Tape t;
        EpisodeRun run = run_episode(t, m, graph, q, cfg, wiring, greedy_selector(), pooled_z);
        if (!run.record.success) continue;
        ++successes;
        counts[run.record.hops] += 1;
    }
    HopBreakdown out;
    out.successes = successes;
    for (const auto& [k, c] : counts)
        out.percent_by_hops[k] = 100.0 * static_cast<double>(c) / static_cast<double>(successes);
    return out;
}

} // namespace mmkgr
