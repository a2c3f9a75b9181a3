#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmkgr/graph.hpp"
#include "mmkgr/rng.hpp"

namespace mmkgr {

enum class ModalitySignal { None, Text, Image, Both };

inline ModalitySignal modality_signal_from_string(const std::string& s) {
    if (s == "none") return ModalitySignal::None;
    if (s == "text") return ModalitySignal::Text;
    if (s == "image") return ModalitySignal::Image;
    if (s == "both") return ModalitySignal::Both;
    throw std::invalid_argument("modality signal: unknown mode '" + s +
                                "' (expected none|text|image|both)");
}

inline std::string to_string(ModalitySignal m) {
    switch (m) {
        case ModalitySignal::None: return "none";
        case ModalitySignal::Text: return "text";
        case ModalitySignal::Image: return "image";
        case ModalitySignal::Both: return "both";
    }
    return "none";
}

// Desk-scale generator: plants compositional rules r_q = r_1 . r_2 [. r_3],
// surrounds them with distractor edges over disjoint noise relations, and
// attaches per-entity text/image vectors. Held-out queries (e_s, r_q, e_d)
// are answerable only by composing a planted rule body present in train.
// decoys_per_query > 0 additionally gives each instance alternative tails
// reachable through the same body relations, so structure alone cannot pick
// the answer and only the modality signal disambiguates.
struct SyntheticSpec {
    int entity_count = 200;
    int noise_relations = 5;
    int branching = 5;               // distractor out-edges per entity
    std::vector<int> rule_hops = {2}; // body length per planted rule (2 or 3)
    double distractor_ratio = 0.25;  // share of entities reserved as distractor targets
    int decoys_per_query = 0;
    ModalitySignal modality = ModalitySignal::Both;
    int text_dim = 16;
    int image_dim = 16;
    double noise_scale = 0.1;
    double signal_scale = 1.0;
    double valid_fraction = 0.1;
    double test_fraction = 0.2;
    std::uint64_t seed = 0;
};

struct SyntheticData {
    Vocab entities;
    Vocab relations; // base relations only; inverses are a graph-build concern
    DatasetSplit split;
    std::vector<std::vector<double>> text;
    std::vector<std::vector<double>> image;
    std::vector<RelationId> rule_heads;
};

namespace detail {

struct RuleInstance {
    EntityId source;
    std::vector<EntityId> middles;
    EntityId tail;
    std::vector<EntityId> decoys;
};

} // namespace detail

inline SyntheticData generate_synthetic_mkg(const SyntheticSpec& spec) {
    if (spec.entity_count < 12) throw std::invalid_argument("synthetic: entity_count too small");
    if (spec.rule_hops.empty()) throw std::invalid_argument("synthetic: no rules requested");
    for (int h : spec.rule_hops)
        if (h < 2 || h > 3)
            throw std::invalid_argument("synthetic: rule body length must be 2 or 3");
    if (spec.noise_relations < 1)
        throw std::invalid_argument("synthetic: need at least one noise relation");

    const int pool_size = std::max(
        2, static_cast<int>(spec.distractor_ratio * static_cast<double>(spec.entity_count)));
    if (pool_size < spec.branching)
        throw std::invalid_argument(
            "synthetic: infeasible spec, branching " + std::to_string(spec.branching) +
            " exceeds the distractor pool of " + std::to_string(pool_size));

    const int n_rules = static_cast<int>(spec.rule_hops.size());
    int per_instance = 0;
    for (int h : spec.rule_hops) per_instance += 1 + (h - 1) + 1 + spec.decoys_per_query;
    const int chain_budget = spec.entity_count - pool_size;
    const int instances_per_rule = chain_budget / per_instance;
    if (instances_per_rule < 5)
        throw std::invalid_argument("synthetic: infeasible spec, entity budget supports only " +
                                    std::to_string(instances_per_rule) +
                                    " instances per rule (need >= 5)");

    SyntheticData data;
    Rng rng(derive_seed(spec.seed, "synthetic"));

    // Relations: rule heads and bodies first, then the noise vocabulary.
    std::vector<std::vector<RelationId>> rule_bodies;
    for (int r = 0; r < n_rules; ++r) {
        data.rule_heads.push_back(data.relations.add_or_get("rule" + std::to_string(r) + "_q"));
        std::vector<RelationId> body;
        for (int b = 0; b < spec.rule_hops[static_cast<std::size_t>(r)]; ++b)
            body.push_back(
                data.relations.add_or_get("rule" + std::to_string(r) + "_b" + std::to_string(b)));
        rule_bodies.push_back(std::move(body));
    }
    std::vector<RelationId> noise_rels;
    for (int j = 0; j < spec.noise_relations; ++j)
        noise_rels.push_back(data.relations.add_or_get("noise" + std::to_string(j)));

    for (int e = 0; e < spec.entity_count; ++e) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "e%04d", e);
        data.entities.add_or_get(buf);
    }

    // Entity layout: rule chains first, distractor pool last.
    EntityId next = 0;
    std::vector<std::vector<detail::RuleInstance>> instances(static_cast<std::size_t>(n_rules));
    for (int r = 0; r < n_rules; ++r) {
        const int hops = spec.rule_hops[static_cast<std::size_t>(r)];
        for (int i = 0; i < instances_per_rule; ++i) {
            detail::RuleInstance inst;
            inst.source = next++;
            for (int h = 0; h < hops - 1; ++h) inst.middles.push_back(next++);
            inst.tail = next++;
            for (int d = 0; d < spec.decoys_per_query; ++d) inst.decoys.push_back(next++);
            instances[static_cast<std::size_t>(r)].push_back(inst);
        }
    }
    std::vector<EntityId> pool;
    for (; next < spec.entity_count; ++next) pool.push_back(next);

    std::vector<Triplet> train;
    std::vector<Triplet> valid;
    std::vector<Triplet> test;
    std::vector<char> on_correct_path(static_cast<std::size_t>(spec.entity_count), 0);

    for (int r = 0; r < n_rules; ++r) {
        const auto& body = rule_bodies[static_cast<std::size_t>(r)];
        for (const auto& inst : instances[static_cast<std::size_t>(r)]) {
            EntityId from = inst.source;
            on_correct_path[static_cast<std::size_t>(inst.source)] = 1;
            for (std::size_t h = 0; h < inst.middles.size(); ++h) {
                train.push_back({from, body[h], inst.middles[h]});
                on_correct_path[static_cast<std::size_t>(inst.middles[h])] = 1;
                from = inst.middles[h];
            }
            train.push_back({from, body.back(), inst.tail});
            on_correct_path[static_cast<std::size_t>(inst.tail)] = 1;
            for (EntityId decoy : inst.decoys) train.push_back({from, body.back(), decoy});
        }
    }

    // Distractor edges: every entity points at `branching` distinct pool
    // entities through noise relations, which cannot complete a rule body.
    for (EntityId e = 0; e < spec.entity_count; ++e) {
        std::set<EntityId> targets;
        int guard = 0;
        while (static_cast<int>(targets.size()) < spec.branching) {
            EntityId to = pool[static_cast<std::size_t>(rng.uniform_int(
                static_cast<int>(pool.size())))];
            if (to == e && static_cast<int>(pool.size()) > spec.branching) {
                if (++guard > 10000)
                    throw std::logic_error("synthetic: distractor sampling stalled");
                continue;
            }
            targets.insert(to);
        }
        for (EntityId to : targets)
            train.push_back(
                {e, noise_rels[static_cast<std::size_t>(rng.uniform_int(spec.noise_relations))],
                 to});
    }

    // Direct (e_s, r_q, e_d) edges: train instances keep theirs in train;
    // held-out instances contribute the query triplet to valid/test only.
    for (int r = 0; r < n_rules; ++r) {
        auto order = instances[static_cast<std::size_t>(r)];
        rng.shuffle(order);
        const int n = static_cast<int>(order.size());
        const int n_test = std::max(1, static_cast<int>(spec.test_fraction * n));
        const int n_valid = std::max(1, static_cast<int>(spec.valid_fraction * n));
        if (n_test + n_valid >= n)
            throw std::invalid_argument("synthetic: infeasible spec, no train instances left");
        for (int i = 0; i < n; ++i) {
            const Triplet direct{order[static_cast<std::size_t>(i)].source,
                                 data.rule_heads[static_cast<std::size_t>(r)],
                                 order[static_cast<std::size_t>(i)].tail};
            if (i < n_test)
                test.push_back(direct);
            else if (i < n_test + n_valid)
                valid.push_back(direct);
            else
                train.push_back(direct);
        }
    }

    dedup_sorted(train);
    dedup_sorted(valid);
    dedup_sorted(test);
    data.split = {train, valid, test};
    validate_disjoint(data.split);

    // Features: i.i.d. noise everywhere; entities on correct paths carry an
    // added unit signal direction in the modalities the mode selects.
    std::vector<double> text_dir(static_cast<std::size_t>(spec.text_dim), 0.0);
    std::vector<double> image_dir(static_cast<std::size_t>(spec.image_dim), 0.0);
    auto unit = [&rng](std::vector<double>& v) {
        double sq = 0.0;
        for (auto& x : v) {
            x = rng.normal();
            sq += x * x;
        }
        const double norm = std::sqrt(sq);
        for (auto& x : v) x /= norm;
    };
    unit(text_dir);
    unit(image_dir);
    const bool text_signal =
        spec.modality == ModalitySignal::Text || spec.modality == ModalitySignal::Both;
    const bool image_signal =
        spec.modality == ModalitySignal::Image || spec.modality == ModalitySignal::Both;
    data.text.resize(static_cast<std::size_t>(spec.entity_count));
    data.image.resize(static_cast<std::size_t>(spec.entity_count));
    for (EntityId e = 0; e < spec.entity_count; ++e) {
        auto& ft = data.text[static_cast<std::size_t>(e)];
        auto& fi = data.image[static_cast<std::size_t>(e)];
        ft.resize(static_cast<std::size_t>(spec.text_dim));
        fi.resize(static_cast<std::size_t>(spec.image_dim));
        for (auto& v : ft) v = rng.normal(0.0, spec.noise_scale);
        for (auto& v : fi) v = rng.normal(0.0, spec.noise_scale);
        if (on_correct_path[static_cast<std::size_t>(e)]) {
            if (text_signal)
                for (int j = 0; j < spec.text_dim; ++j)
                    ft[static_cast<std::size_t>(j)] +=
                        spec.signal_scale * text_dir[static_cast<std::size_t>(j)];
            if (image_signal)
                for (int j = 0; j < spec.image_dim; ++j)
                    fi[static_cast<std::size_t>(j)] +=
                        spec.signal_scale * image_dir[static_cast<std::size_t>(j)];
        }
    }

    // Post-generation verification on the base (inverse-free) graph: every
    // held-out query has a body witness, the composed body reaches exactly
    // the planted tail plus declared decoys, and no direct shortcut leaked.
    KnowledgeGraph graph = KnowledgeGraph::build(train, spec.entity_count,
                                                 data.relations.size(), false);
    for (int r = 0; r < n_rules; ++r) {
        const auto& body = rule_bodies[static_cast<std::size_t>(r)];
        for (const auto& inst : instances[static_cast<std::size_t>(r)]) {
            std::set<EntityId> frontier{inst.source};
            for (RelationId rel : body) {
                std::set<EntityId> nxt;
                for (EntityId e : frontier)
                    for (const Action& a : graph.outgoing(e))
                        if (a.relation == rel) nxt.insert(a.tail);
                frontier = std::move(nxt);
            }
            std::set<EntityId> expect{inst.tail};
            expect.insert(inst.decoys.begin(), inst.decoys.end());
            if (frontier != expect)
                throw std::logic_error("synthetic: rule composition mismatch at source " +
                                       std::to_string(inst.source));
            if (!graph.reachable_within(inst.source, inst.tail, 3))
                throw std::logic_error("synthetic: tail unreachable within 3 hops");
        }
    }
    for (const Triplet& q : test)
        if (graph.has_edge(q.head, q.relation, q.tail))
            throw std::logic_error("synthetic: held-out query leaked into train graph");

    return data;
}

} // namespace mmkgr
