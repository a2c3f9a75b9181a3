#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmkgr/ablation.hpp"
#include "mmkgr/env.hpp"
#include "mmkgr/features.hpp"
#include "mmkgr/fusion.hpp"
#include "mmkgr/graph.hpp"
#include "mmkgr/optim.hpp"
#include "mmkgr/reward.hpp"
#include "mmkgr/rng.hpp"
#include "mmkgr/tape.hpp"

namespace mmkgr {

struct ModelDims {
    int d_s = 200; // entity/relation/history embedding width
    int d_t = 1000;
    int d_i = 128;
    int d_x = 400;
    int d = 200; // attention projection width
    int j = 200; // joint bilinear width
};

// Everything the policy gradient trains: embeddings, history LSTM, fusion
// network, policy head, and the structural-only projection used when fusion
// is bypassed. The triplet scorer is deliberately not here; it stays frozen.
struct Model {
    ModelDims dims;
    StructuralTable table;
    ModalStore modal;
    HistoryEncoder history;
    FusionParameters fusion;
    Parameter policy_w2;      // [j x 2*d_s]
    Parameter struct_proj;    // [3*d_s x j], structural-only wiring

    static Model create(EntityId entity_count, RelationId relation_count, const ModelDims& dims,
                        std::uint64_t seed) {
        Rng rng(derive_seed(seed, "model-init"));
        Model m;
        m.dims = dims;
        m.table = StructuralTable::random(entity_count, relation_count, dims.d_s, rng);
        m.modal = ModalStore::create(entity_count, dims.d_t, dims.d_i, dims.d_x, rng);
        m.history = HistoryEncoder::create(dims.d_s, rng);
        m.fusion = FusionParameters::create(dims.d_x, 3 * dims.d_s, dims.d, dims.j, rng);
        // Zero-initialized policy head: the starting distribution is exactly
        // uniform over each action space.
        m.policy_w2 = Parameter("policy.w2", Tensor(dims.j, 2 * dims.d_s));
        Tensor sp(3 * dims.d_s, dims.j);
        const double scale = 1.0 / std::sqrt(static_cast<double>(3 * dims.d_s));
        for (auto& v : sp.data()) v = rng.normal(0.0, scale);
        m.struct_proj = Parameter("policy.struct_proj", std::move(sp));
        return m;
    }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out;
        for (Parameter* p : table.parameters()) out.push_back(p);
        for (Parameter* p : modal.parameters()) out.push_back(p);
        for (Parameter* p : history.parameters()) out.push_back(p);
        for (Parameter* p : fusion.parameters()) out.push_back(p);
        out.push_back(&policy_w2);
        out.push_back(&struct_proj);
        return out;
    }
};

struct StepEval {
    ActionSpace space;
    Tape::Id probs = 0; // [1 x m], row-aligned with space.actions
};

// One policy evaluation (Eq.-17 head): logit_i = <A_t[i], W2 ReLU(z_i)>.
// z_i is the fused row for candidate i (or the pooled row broadcast when
// pooled_z is set, or the projected structural row when fusion is bypassed).
inline StepEval policy_step(Tape& t, Model& m, const KnowledgeGraph& graph,
                            const EpisodeState& state, const HistoryState& hist,
                            const EpisodeConfig& cfg, const ModelWiring& wiring,
                            bool pooled_z = false, FusionTrace* trace = nullptr) {
    StepEval ev;
    ev.space = episode_actions(graph, state, cfg);
    const int m_count = ev.space.size();
    std::vector<int> rel_ids;
    std::vector<EntityId> candidates;
    rel_ids.reserve(static_cast<std::size_t>(m_count));
    candidates.reserve(static_cast<std::size_t>(m_count));
    for (const Action& a : ev.space.actions) {
        rel_ids.push_back(a.relation);
        candidates.push_back(a.tail);
    }

    Tape::Id action_emb = t.concat_cols(
        t.gather_rows(m.table.relations, rel_ids),
        t.gather_rows(m.table.entities, std::vector<int>(candidates.begin(), candidates.end())));
    Tape::Id y = build_structural_rows(t, m.table, hist, state.query.relation, candidates);

    Tape::Id z;
    if (wiring.use_fusion) {
        Tape::Id x = build_aux_rows(t, m.modal, candidates, wiring.zero_text, wiring.zero_image);
        FusedFeatures fused = fuse(t, y, x, m.fusion, wiring.fusion_variant, trace);
        z = pooled_z ? t.repeat_rows(fused.pooled, m_count) : fused.z_rows;
    } else {
        z = t.matmul(y, t.param(m.struct_proj));
    }
    Tape::Id mapped = t.matmul(t.relu(z), t.param(m.policy_w2)); // [m x 2*d_s]
    Tape::Id logits = t.row_sum(t.hadamard(action_emb, mapped)); // [m x 1]
    ev.probs = t.softmax_rows(t.reshape(logits, 1, m_count));
    return ev;
}

// Picks an action index from the step distribution. Receives the probability
// row and the step index; implementations are sampling, argmax, or forced
// replay.
using ActionSelector = std::function<int(const std::vector<double>&, int)>;

inline ActionSelector sampling_selector(Rng& rng) {
    return [&rng](const std::vector<double>& probs, int) { return rng.categorical(probs); };
}

inline ActionSelector greedy_selector() {
    return [](const std::vector<double>& probs, int) {
        int best = 0;
        for (std::size_t i = 1; i < probs.size(); ++i)
            if (probs[i] > probs[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
        return best;
    };
}

inline ActionSelector forced_selector(std::vector<int> actions) {
    return [actions = std::move(actions)](const std::vector<double>&, int step) {
        return actions.at(static_cast<std::size_t>(step));
    };
}

struct RolloutRecord {
    Triplet query;
    std::vector<int> action_indices;
    std::vector<double> log_probs; // log of the distribution entry at sampling time
    std::vector<RelationId> relations_taken; // non-STOP only
    EntityId final_entity = 0;
    int hops = 0;
    bool success = false;
    double dest = 0.0, dist = 0.0, div = 0.0, total = 0.0;
};

struct EpisodeRun {
    RolloutRecord record;
    Tape::Id log_prob_sum = 0; // sum over the T selected log-probabilities
    Tape::Id entropy_sum = 0;  // sum of step entropies
};

// Unrolls exactly T selections on the caller's tape. Rewards are attached by
// score_rollout afterwards so evaluation can reuse the same unroll.
inline EpisodeRun run_episode(Tape& t, Model& m, const KnowledgeGraph& graph,
                              const Triplet& query, const EpisodeConfig& cfg,
                              const ModelWiring& wiring, const ActionSelector& select,
                              bool pooled_z = false) {
    EpisodeRun run;
    run.record.query = query;
    EpisodeState state = episode_reset(graph, query);
    HistoryState hist = m.history.bootstrap(t, m.table, graph.no_op(), query.head);
    Tape::Id log_sum = t.constant(Tensor::scalar(0.0));
    Tape::Id ent_sum = t.constant(Tensor::scalar(0.0));
    for (int step = 0; step < cfg.max_steps; ++step) {
        StepEval ev = policy_step(t, m, graph, state, hist, cfg, wiring, pooled_z);
        const Tensor& row = t.val(ev.probs);
        std::vector<double> probs(row.data());
        const int idx = select(probs, step);
        if (idx < 0 || idx >= ev.space.size())
            throw std::out_of_range("rollout: selector returned index " + std::to_string(idx) +
                                    " for an action space of " + std::to_string(ev.space.size()));
        Tape::Id pick = t.log_op(t.element(ev.probs, 0, idx));
        log_sum = t.add(log_sum, pick);
        ent_sum = t.add(ent_sum, t.scale(t.row_sum(t.xlogx(ev.probs)), -1.0));

        run.record.action_indices.push_back(idx);
        run.record.log_probs.push_back(std::log(probs[static_cast<std::size_t>(idx)]));
        const Action& act = ev.space.actions[static_cast<std::size_t>(idx)];
        if (act.relation != graph.no_op()) run.record.relations_taken.push_back(act.relation);
        state = episode_step(graph, state, ev.space, idx, cfg);
        hist = m.history.encode(t, m.table, hist, act.relation, act.tail);
    }
    run.record.final_entity = state.current;
    run.record.hops = state.hops;
    run.record.success = state.current == query.tail;
    run.log_prob_sum = log_sum;
    run.entropy_sum = ent_sum;
    return run;
}

// Terminal reward. The distance component is granted only when the rollout
// actually reached the target: paying 1/k for stopping anywhere after one
// hop would make "one hop then STOP" beat every correct multi-hop path at
// the default weights. Diversity is computed against the memory as of now,
// before this rollout is recorded.
inline void score_rollout(RolloutRecord& rec, const TripletScorer& scorer,
                          const PathMemory& memory, const StructuralTable& table,
                          const RewardScheme& scheme) {
    rec.dest = destination_reward(rec.final_entity, rec.query, scorer);
    rec.dist = rec.success ? distance_reward(rec.hops) : 0.0;
    rec.div = memory.diversity_reward(rec.query, path_embedding(rec.relations_taken, table));
    if (scheme.zero_one_only)
        rec.total = rec.success ? 1.0 : 0.0;
    else
        rec.total = total_reward(rec.dest, rec.dist, rec.div, scheme.weights);
}

struct TrainConfig {
    int epochs = 50;     // E
    int batch_size = 128; // N
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double baseline_decay = 0.95;
    double entropy_coef = 0.0;
    int rollouts_per_query = 1;
    bool pooled_z = false;
    bool train_inverse_queries = false;
    std::vector<RelationId> train_relations; // empty = every relation
    std::uint64_t seed = 0;
    EpisodeConfig episode; // mask_direct is forced on for training rollouts

    void validate() const {
        if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
        if (rollouts_per_query < 1)
            throw std::invalid_argument("train: rollouts_per_query must be >= 1");
        if (episode.max_steps < 1) throw std::invalid_argument("train: T must be >= 1");
    }
};

struct EpochStats {
    int epoch = 0;
    double mean_reward = 0.0;
    double success_rate = 0.0;
    double valid_hits1 = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> epochs;
    int best_epoch = -1;
    double best_valid_hits1 = 0.0;
    double baseline = 0.0;
};

// Fraction of queries whose greedy decode ends on the labeled tail. This is
// the trainer's per-epoch validation signal; ranking metrics live in the
// evaluation harness.
inline double greedy_success_rate(Model& m, const KnowledgeGraph& graph,
                                  const std::vector<Triplet>& queries,
                                  const EpisodeConfig& episode, const ModelWiring& wiring,
                                  bool pooled_z = false) {
    if (queries.empty()) return 0.0;
    EpisodeConfig cfg = episode;
    cfg.mask_direct = false;
    int hits = 0;
    for (const Triplet& q : queries) {
        Tape t;
        EpisodeRun run = run_episode(t, m, graph, q, cfg, wiring, greedy_selector(), pooled_z);
        hits += run.record.success ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(queries.size());
}

namespace detail {

struct PendingRollout {
    std::unique_ptr<Tape> tape;
    Tape::Id log_prob_sum;
    Tape::Id entropy_sum;
    RolloutRecord record;
};

} // namespace detail

// REINFORCE batch update: accumulates -(R - b) grad log pi (plus the optional
// entropy bonus) averaged over the batch, then takes one optimizer step.
// Returns the mean total reward of the batch.
inline double reinforce_update(std::vector<detail::PendingRollout>& batch, Optimizer& opt,
                               double baseline, double entropy_coef) {
    if (batch.empty()) throw std::invalid_argument("reinforce: empty batch");
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    double mean_reward = 0.0;
    for (auto& pending : batch) {
        const double advantage = pending.record.total - baseline;
        Tape& t = *pending.tape;
        Tape::Id loss = t.scale(pending.log_prob_sum, -advantage);
        if (entropy_coef != 0.0)
            loss = t.add(loss, t.scale(pending.entropy_sum, -entropy_coef));
        if (!t.val(loss).all_finite())
            throw std::domain_error("reinforce: non-finite loss on query (" +
                                    std::to_string(pending.record.query.head) + "," +
                                    std::to_string(pending.record.query.relation) + ") reward " +
                                    std::to_string(pending.record.total));
        t.backward(loss, inv_n);
        mean_reward += pending.record.total * inv_n;
    }
    opt.step();
    return mean_reward;
}

// Expands the train split into the rollout query list for one epoch.
inline std::vector<Triplet> training_queries(const KnowledgeGraph& graph,
                                             const std::vector<Triplet>& train,
                                             const TrainConfig& cfg) {
    std::vector<Triplet> queries;
    auto wanted = [&](RelationId r) {
        if (cfg.train_relations.empty()) return true;
        for (RelationId keep : cfg.train_relations)
            if (keep == r) return true;
        return false;
    };
    for (const Triplet& t : train) {
        if (wanted(t.relation)) queries.push_back(t);
        if (cfg.train_inverse_queries && graph.has_inverses()) {
            const Triplet inv{t.tail, graph.inverse(t.relation), t.head};
            if (wanted(inv.relation)) queries.push_back(inv);
        }
    }
    if (queries.empty()) throw std::invalid_argument("train: no training queries after filtering");
    return queries;
}

// E epochs of shuffled rollouts in batches of N. The path memory fills with
// successful training paths and persists across epochs; the scorer is never
// updated here.
inline TrainResult train(Model& m, const KnowledgeGraph& graph, const DatasetSplit& split,
                         const TripletScorer& scorer, PathMemory& memory,
                         const WiredVariant& variant, const TrainConfig& cfg) {
    cfg.validate();
    auto params = m.parameters();
    Optimizer opt(params, cfg.optimizer, cfg.learning_rate);
    opt.zero_grad();

    EpisodeConfig train_episode = cfg.episode;
    train_episode.mask_direct = true;

    const std::vector<Triplet> base_queries = training_queries(graph, split.train, cfg);

    TrainResult result;
    double baseline = 0.0;
    std::map<std::string, Tensor> best_values;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rollout_rng(derive_seed(cfg.seed, "rollout", static_cast<std::uint64_t>(epoch)));
        // A query's rollouts stay adjacent so they share a batch; with
        // batch_size == rollouts_per_query the advantage signal of a rare
        // success is not diluted across unrelated queries.
        std::vector<Triplet> shuffled = base_queries;
        rollout_rng.shuffle(shuffled);
        std::vector<Triplet> queries;
        queries.reserve(shuffled.size() * static_cast<std::size_t>(cfg.rollouts_per_query));
        for (const Triplet& q : shuffled)
            for (int r = 0; r < cfg.rollouts_per_query; ++r) queries.push_back(q);

        double epoch_reward = 0.0;
        int epoch_success = 0;
        int done = 0;
        std::vector<detail::PendingRollout> batch;
        for (const Triplet& query : queries) {
            detail::PendingRollout pending;
            pending.tape = std::make_unique<Tape>();
            EpisodeRun run = run_episode(*pending.tape, m, graph, query, train_episode,
                                         variant.wiring, sampling_selector(rollout_rng),
                                         cfg.pooled_z);
            pending.record = std::move(run.record);
            pending.log_prob_sum = run.log_prob_sum;
            pending.entropy_sum = run.entropy_sum;
            score_rollout(pending.record, scorer, memory, m.table, variant.reward);
            memory.update(query, path_embedding(pending.record.relations_taken, m.table),
                          pending.record.success);
            epoch_reward += pending.record.total;
            epoch_success += pending.record.success ? 1 : 0;
            ++done;
            batch.push_back(std::move(pending));
            if (static_cast<int>(batch.size()) == cfg.batch_size ||
                done == static_cast<int>(queries.size())) {
                const double batch_mean = reinforce_update(batch, opt, baseline, cfg.entropy_coef);
                baseline = cfg.baseline_decay * baseline +
                           (1.0 - cfg.baseline_decay) * batch_mean;
                batch.clear();
            }
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.mean_reward = epoch_reward / static_cast<double>(queries.size());
        stats.success_rate =
            static_cast<double>(epoch_success) / static_cast<double>(queries.size());
        stats.valid_hits1 = greedy_success_rate(m, graph, split.valid, cfg.episode,
                                                variant.wiring, cfg.pooled_z);
        result.epochs.push_back(stats);

        if (result.best_epoch < 0 || stats.valid_hits1 > result.best_valid_hits1) {
            result.best_epoch = epoch;
            result.best_valid_hits1 = stats.valid_hits1;
            best_values.clear();
            for (Parameter* p : params) best_values.emplace(p->name, p->value);
        }
    }

    // Leave the model at its best-validation parameters.
    if (!best_values.empty())
        for (Parameter* p : params) p->value = best_values.at(p->name);
    result.baseline = baseline;
    return result;
}

} // namespace mmkgr
