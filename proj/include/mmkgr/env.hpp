#pragma once

#include <stdexcept>
#include <string>

#include "mmkgr/graph.hpp"

namespace mmkgr {

struct EpisodeConfig {
    int max_steps = 4;   // T
    int max_actions = 200;
    bool mask_direct = false; // training rollouts only; evaluation never masks
};

// Symbolic MDP state. Episodes always unroll to exactly T selections; STOP
// self-loops pad early termination. `hops` counts non-STOP transitions and
// is the k consumed by the distance reward.
struct EpisodeState {
    EntityId current = 0;
    Triplet query;
    int step = 0;
    int hops = 0;
};

inline EpisodeState episode_reset(const KnowledgeGraph& graph, const Triplet& query) {
    if (query.head < 0 || query.head >= graph.entity_count())
        throw std::out_of_range("episode: source entity " + std::to_string(query.head) +
                                " outside graph");
    if (query.relation < 0 || query.relation >= graph.relation_count())
        throw std::out_of_range("episode: query relation " + std::to_string(query.relation) +
                                " outside graph");
    return {query.head, query, 0, 0};
}

inline ActionSpace episode_actions(const KnowledgeGraph& graph, const EpisodeState& state,
                                   const EpisodeConfig& cfg) {
    return valid_actions(graph, state.current, cfg.max_actions, state.query, state.step,
                         cfg.mask_direct);
}

inline EpisodeState episode_step(const KnowledgeGraph& graph, const EpisodeState& state,
                                 const ActionSpace& space, int action_index,
                                 const EpisodeConfig& cfg) {
    if (state.step >= cfg.max_steps)
        throw std::logic_error("episode: step past the fixed unroll length");
    if (action_index < 0 || action_index >= space.size())
        throw std::out_of_range("episode: action index " + std::to_string(action_index) +
                                " outside action space of size " + std::to_string(space.size()));
    const Action& a = space.actions[static_cast<std::size_t>(action_index)];
    EpisodeState next = state;
    next.current = a.tail;
    next.step = state.step + 1;
    if (a.relation != graph.no_op()) next.hops = state.hops + 1;
    return next;
}

inline bool episode_terminal(const EpisodeState& state, const EpisodeConfig& cfg) {
    return state.step == cfg.max_steps;
}

} // namespace mmkgr
