#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>

#include "mmkgr/eval.hpp"
#include "toy_oracle.hpp"

using namespace mmkgr;
using mmkgr::testing::ToyWorld;

namespace {

BeamEntry entry(EntityId e, double prob) {
    BeamEntry b;
    b.entity = e;
    b.log_prob = std::log(prob);
    return b;
}

} // namespace

TEST_CASE("beam width one equals the greedy rollout", "[eval]") {
    ToyWorld w = ToyWorld::create(31);
    BeamConfig beam;
    beam.width = 1;
    BeamResult result = beam_search(w.model, w.graph, w.query, w.episode, w.wiring, beam);
    REQUIRE(result.paths.size() == 1);

    Tape t;
    EpisodeRun greedy = run_episode(t, w.model, w.graph, w.query, w.episode, w.wiring,
                                    greedy_selector());
    REQUIRE(result.paths[0].entity == greedy.record.final_entity);
    REQUIRE(result.paths[0].log_prob ==
            Catch::Approx(t.val(greedy.log_prob_sum).item()).margin(1e-12));
}

TEST_CASE("path probabilities multiply to the reported score", "[eval]") {
    ToyWorld w = ToyWorld::create(32);
    BeamConfig beam;
    beam.width = 50;
    BeamResult result = beam_search(w.model, w.graph, w.query, w.episode, w.wiring, beam);
    for (const BeamEntry& p : result.paths) {
        double prod = 1.0;
        for (double sp : p.step_probs) prod *= sp;
        REQUIRE(p.probability() == Catch::Approx(prod).margin(1e-12));
    }
}

TEST_CASE("exhaustive beam reproduces the enumeration ranking exactly", "[eval]") {
    ToyWorld w = ToyWorld::create(33, 3); // T=3 widens the path tree a bit
    auto paths = testing::enumerate_paths(w.model, w.graph, w.query, w.episode, w.wiring);
    REQUIRE(paths.size() <= 500);

    std::map<EntityId, double> best;
    for (const auto& p : paths) {
        auto it = best.find(p.record.final_entity);
        if (it == best.end() || p.probability > it->second)
            best[p.record.final_entity] = p.probability;
    }
    std::vector<std::pair<EntityId, double>> oracle(best.begin(), best.end());
    std::stable_sort(oracle.begin(), oracle.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    BeamConfig beam;
    beam.width = 1000;
    BeamResult result = beam_search(w.model, w.graph, w.query, w.episode, w.wiring, beam);
    REQUIRE(result.ranked.size() == oracle.size());
    REQUIRE(result.paths.size() == paths.size());
    for (std::size_t i = 0; i < oracle.size(); ++i) {
        REQUIRE(result.ranked[i].entity == oracle[i].first);
        REQUIRE(result.ranked[i].probability() ==
                Catch::Approx(oracle[i].second).margin(1e-12));
    }
}

TEST_CASE("filtered rank skips other known answers, never the target", "[eval]") {
    std::vector<BeamEntry> ranked{entry(2, 0.5), entry(4, 0.3), entry(7, 0.2)};
    REQUIRE(filtered_rank(ranked, {4}, 7) == 2);
    REQUIRE(filtered_rank(ranked, {}, 7) == 3);
    REQUIRE(filtered_rank(ranked, {2, 4}, 7) == 1);
    REQUIRE(filtered_rank(ranked, {}, 9) == std::nullopt);
    // The target itself is never filtered even if listed as known.
    REQUIRE(filtered_rank(ranked, {4, 7}, 7) == 2);
}

TEST_CASE("filtered rank matches a naive recount on random lists", "[eval]") {
    Rng rng(41);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<BeamEntry> ranked;
        const int n = 1 + rng.uniform_int(12);
        std::vector<EntityId> ids(20);
        for (int i = 0; i < 20; ++i) ids[static_cast<std::size_t>(i)] = i;
        rng.shuffle(ids);
        double prob = 1.0;
        for (int i = 0; i < n; ++i) {
            prob *= 0.8;
            ranked.push_back(entry(ids[static_cast<std::size_t>(i)], prob));
        }
        std::set<EntityId> known;
        for (int i = 0; i < 5; ++i)
            known.insert(static_cast<EntityId>(rng.uniform_int(20)));
        const EntityId target = static_cast<EntityId>(rng.uniform_int(20));

        int naive = 0;
        std::optional<int> naive_rank;
        for (const BeamEntry& e : ranked) {
            if (e.entity == target) {
                naive_rank = ++naive;
                break;
            }
            if (!known.count(e.entity)) ++naive;
        }
        std::set<EntityId> others = known;
        others.erase(target);
        REQUIRE(filtered_rank(ranked, others, target) == naive_rank);
    }
}

TEST_CASE("metrics match the hand-computed five-query fixture", "[eval]") {
    // Ranks: 1, 1 (after filtering), 2 (after filtering), unfound, 2.
    std::vector<std::optional<int>> ranks;
    ranks.push_back(filtered_rank({entry(3, .5), entry(1, .3), entry(2, .2)}, {}, 3));
    ranks.push_back(filtered_rank({entry(1, .6), entry(5, .3), entry(2, .1)}, {1}, 5));
    ranks.push_back(filtered_rank({entry(2, .5), entry(4, .3), entry(7, .2)}, {4}, 7));
    ranks.push_back(filtered_rank({entry(1, .5), entry(2, .3), entry(3, .2)}, {}, 9));
    ranks.push_back(filtered_rank({entry(4, .6), entry(0, .4)}, {}, 0));
    REQUIRE(ranks == std::vector<std::optional<int>>{1, 1, 2, std::nullopt, 2});

    EntityLinkMetrics metrics = metrics_from_ranks(ranks);
    REQUIRE(metrics.mrr == Catch::Approx(60.0).margin(1e-12));
    REQUIRE(metrics.hits1 == Catch::Approx(40.0).margin(1e-12));
    REQUIRE(metrics.hits5 == Catch::Approx(80.0).margin(1e-12));
    REQUIRE(metrics.hits10 == Catch::Approx(80.0).margin(1e-12));
}

TEST_CASE("perfect and hopeless rank lists hit the metric extremes", "[eval]") {
    std::vector<std::optional<int>> perfect(4, std::optional<int>(1));
    EntityLinkMetrics top = metrics_from_ranks(perfect);
    REQUIRE(top.mrr == 100.0);
    REQUIRE(top.hits1 == 100.0);

    std::vector<std::optional<int>> none(4, std::nullopt);
    EntityLinkMetrics bottom = metrics_from_ranks(none);
    REQUIRE(bottom.mrr == 0.0);
    REQUIRE(bottom.hits10 == 0.0);
}

TEST_CASE("hits are monotone in N", "[eval]") {
    Rng rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::optional<int>> ranks;
        for (int i = 0; i < 15; ++i) {
            if (rng.uniform01() < 0.2)
                ranks.push_back(std::nullopt);
            else
                ranks.push_back(1 + rng.uniform_int(15));
        }
        EntityLinkMetrics m = metrics_from_ranks(ranks);
        REQUIRE(m.hits1 <= m.hits5);
        REQUIRE(m.hits5 <= m.hits10);
        REQUIRE(m.hits1 / 100.0 <= m.mrr / 100.0 + 1e-12);
    }
}

TEST_CASE("average precision handles the textbook cases", "[eval]") {
    REQUIRE(average_precision({3}, {3}) == 1.0);
    REQUIRE(average_precision({1, 3}, {3}) == 0.5);
    REQUIRE(average_precision({2, 0, 1}, {2, 1}) ==
            Catch::Approx((1.0 + 2.0 / 3.0) / 2.0).margin(1e-12));
    REQUIRE(average_precision({0, 1}, {5}) == 0.0);
    REQUIRE_THROWS(average_precision({0}, {}));
}

TEST_CASE("relation prediction ranks by beam mass and matches a manual recount", "[eval]") {
    ToyWorld w = ToyWorld::create(34);
    DatasetSplit split;
    split.train = {{0, 0, 1}, {1, 0, 2}};
    split.test = {{0, 1, 2}};
    BeamConfig beam;
    beam.width = 64;

    RelationLinkMetrics metrics = relation_link_prediction(
        w.model, w.graph, split.test, split, w.episode, w.wiring, beam);

    // Manual: score each candidate relation by enumerated mass on the tail.
    std::vector<std::pair<double, RelationId>> scored;
    for (RelationId r = 0; r < w.graph.base_relation_count(); ++r) {
        double mass = 0.0;
        for (const auto& p : testing::enumerate_paths(w.model, w.graph, {0, r, 2}, w.episode,
                                                      w.wiring))
            if (p.record.final_entity == 2) mass += p.probability;
        scored.push_back({mass, r});
    }
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<RelationId> ranked;
    for (const auto& [mass, r] : scored) ranked.push_back(r);
    const double want = 100.0 * average_precision(ranked, {1});
    REQUIRE(metrics.map_overall == Catch::Approx(want).margin(1e-9));
    REQUIRE(metrics.map_per_relation.at(1) == Catch::Approx(want).margin(1e-9));
}

TEST_CASE("known tails cover both directions when inverses exist", "[eval]") {
    KnowledgeGraph g = KnowledgeGraph::build({{0, 0, 1}}, 2, 1, true);
    DatasetSplit split;
    split.train = {{0, 0, 1}};
    KnownTails known = build_known_tails(split, g);
    REQUIRE(known.at({0, 0}).count(1) == 1);
    REQUIRE(known.at({1, g.inverse(0)}).count(0) == 1);
}

TEST_CASE("hop breakdown covers only successes and sums to one hundred", "[eval]") {
    ToyWorld w = ToyWorld::create(35);
    // Nudge the policy toward the two-hop success path so the greedy decode
    // succeeds per construction: force it by training-free weight surgery is
    // overkill; instead evaluate on a query answered trivially.
    std::vector<Triplet> queries{{0, 1, 2}, {0, 0, 1}};
    HopBreakdown hops = per_hop_breakdown(w.model, w.graph, queries, w.episode, w.wiring);
    double sum = 0.0;
    for (const auto& [k, pct] : hops.percent_by_hops) {
        REQUIRE(k >= 0);
        REQUIRE(k <= w.episode.max_steps);
        sum += pct;
    }
    if (hops.successes > 0) REQUIRE(sum == Catch::Approx(100.0).margin(1e-9));
}

TEST_CASE("structural-only wiring skips fusion in the policy step", "[eval]") {
    ToyWorld w = ToyWorld::create(36);
    WiredVariant oskgr = apply_ablation(Ablation::Oskgr, RewardWeights{});
    FusionTrace trace;
    Tape t;
    EpisodeState st = episode_reset(w.graph, w.query);
    HistoryState h = w.model.history.bootstrap(t, w.model.table, w.graph.no_op(), 0);
    policy_step(t, w.model, w.graph, st, h, w.episode, oskgr.wiring, false, &trace);
    REQUIRE(trace.projection_evals == 0);
    REQUIRE(trace.bilinear_evals == 0);
    REQUIRE(trace.attention_gate_evals == 0);
    REQUIRE(trace.filtration_evals == 0);

    FusionTrace full_trace;
    policy_step(t, w.model, w.graph, st, h, w.episode, ModelWiring{}, false, &full_trace);
    REQUIRE(full_trace.projection_evals == 1);
}

TEST_CASE("ablation table wires weights as documented", "[eval]") {
    RewardWeights base{0.1, 0.8, 0.1};
    WiredVariant ds = apply_ablation(Ablation::Dskgr, base);
    REQUIRE(ds.reward.weights.destination == Catch::Approx(1.0 / 9.0).margin(1e-12));
    REQUIRE(ds.reward.weights.distance == Catch::Approx(8.0 / 9.0).margin(1e-12));
    REQUIRE(ds.reward.weights.diversity == 0.0);

    WiredVariant dv = apply_ablation(Ablation::Dvkgr, base);
    REQUIRE(dv.reward.weights.destination == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(dv.reward.weights.diversity == Catch::Approx(0.5).margin(1e-12));

    WiredVariant de = apply_ablation(Ablation::Dekgr, base);
    REQUIRE(de.reward.weights.destination == 1.0);

    REQUIRE(apply_ablation(Ablation::Stkgr, base).wiring.zero_image);
    REQUIRE(apply_ablation(Ablation::Sikgr, base).wiring.zero_text);
    REQUIRE(apply_ablation(Ablation::Fakgr, base).wiring.fusion_variant ==
            FusionVariant::AttentionOnly);
    REQUIRE(apply_ablation(Ablation::Fgkgr, base).wiring.fusion_variant ==
            FusionVariant::FiltrationOnly);
    REQUIRE_FALSE(apply_ablation(Ablation::Oskgr, base).wiring.use_fusion);
    REQUIRE(apply_ablation(Ablation::Zokgr, base).reward.zero_one_only);
    REQUIRE_THROWS(ablation_from_string("NOPE"));
}
