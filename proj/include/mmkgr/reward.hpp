#pragma once

#include <cmath>
#include <deque>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mmkgr/features.hpp"
#include "mmkgr/graph.hpp"
#include "mmkgr/rng.hpp"
#include "mmkgr/tensor.hpp"

namespace mmkgr {

// Squashed plausibility of a triplet, used to shape the terminal reward when
// the target is missed. Implementations stay frozen during policy training.
class TripletScorer {
public:
    virtual ~TripletScorer() = default;
    virtual double score(const Triplet& t) const = 0;
};

// Diagonal bilinear scorer: sigma(<emb(h) * emb(r), emb(t)>) with its own
// embedding tables, trained by binary cross-entropy against sampled
// corruptions.
class BilinearScorer : public TripletScorer {
public:
    BilinearScorer(EntityId entity_count, RelationId relation_count, int dim, Rng& rng)
        : entities_("scorer.entities", init(entity_count, dim, rng)),
          relations_("scorer.relations", init(relation_count, dim, rng)) {}

    double score(const Triplet& t) const override {
        const Tensor& e = entities_.value;
        const Tensor& r = relations_.value;
        double dot = 0.0;
        for (int j = 0; j < e.cols(); ++j)
            dot += e.at(t.head, j) * r.at(t.relation, j) * e.at(t.tail, j);
        return sigmoid(dot);
    }

    std::vector<Parameter*> parameters() { return {&entities_, &relations_}; }

    // One BCE SGD pass per epoch over positives plus sampled tail/head
    // corruptions. Returns the mean loss of the final epoch.
    double train(const std::vector<Triplet>& positives, int negatives_per_positive, int epochs,
                 double lr, Rng& rng) {
        if (positives.empty()) throw std::invalid_argument("scorer: empty training set");
        Tensor& ent = entities_.value;
        Tensor& rel = relations_.value;
        const int dim = ent.cols();
        std::vector<int> order(positives.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        double epoch_loss = 0.0;
        for (int epoch = 0; epoch < epochs; ++epoch) {
            rng.shuffle(order);
            epoch_loss = 0.0;
            int examples = 0;
            for (int idx : order) {
                const Triplet& pos = positives[static_cast<std::size_t>(idx)];
                epoch_loss += sgd_example(pos, 1.0, lr, dim, ent, rel);
                ++examples;
                for (int n = 0; n < negatives_per_positive; ++n) {
                    Triplet neg = pos;
                    if (rng.uniform01() < 0.5)
                        neg.head = static_cast<EntityId>(rng.uniform_int(ent.rows()));
                    else
                        neg.tail = static_cast<EntityId>(rng.uniform_int(ent.rows()));
                    epoch_loss += sgd_example(neg, 0.0, lr, dim, ent, rel);
                    ++examples;
                }
            }
            epoch_loss /= static_cast<double>(examples);
        }
        return epoch_loss;
    }

private:
    static Tensor init(int rows, int cols, Rng& rng) {
        Tensor t(rows, cols);
        const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
        for (auto& v : t.data()) v = rng.normal(0.0, scale);
        return t;
    }

    static double sigmoid(double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
    }

    double sgd_example(const Triplet& t, double label, double lr, int dim, Tensor& ent,
                       Tensor& rel) {
        double dot = 0.0;
        for (int j = 0; j < dim; ++j)
            dot += ent.at(t.head, j) * rel.at(t.relation, j) * ent.at(t.tail, j);
        const double p = sigmoid(dot);
        const double g = p - label; // d(BCE)/d(logit)
        for (int j = 0; j < dim; ++j) {
            const double h = ent.at(t.head, j);
            const double r = rel.at(t.relation, j);
            const double tl = ent.at(t.tail, j);
            ent.at(t.head, j) -= lr * g * r * tl;
            rel.at(t.relation, j) -= lr * g * h * tl;
            ent.at(t.tail, j) -= lr * g * h * r;
        }
        const double eps = 1e-12;
        return label > 0.5 ? -std::log(p + eps) : -std::log(1.0 - p + eps);
    }

    Parameter entities_;
    Parameter relations_;
};

struct ScorerConfig {
    int dim = 64;
    int epochs = 100;
    int negatives_per_positive = 4;
    double learning_rate = 0.05;
};

inline BilinearScorer train_scorer(const std::vector<Triplet>& positives, EntityId entity_count,
                                   RelationId relation_count, const ScorerConfig& cfg,
                                   std::uint64_t seed) {
    Rng rng(seed);
    BilinearScorer scorer(entity_count, relation_count, cfg.dim, rng);
    scorer.train(positives, cfg.negatives_per_positive, cfg.epochs, cfg.learning_rate, rng);
    return scorer;
}

struct RewardWeights {
    double destination = 0.1;
    double distance = 0.8;
    double diversity = 0.1;

    void validate() const {
        if (destination < 0.0 || distance < 0.0 || diversity < 0.0)
            throw std::invalid_argument("reward weights: negative component");
        const double sum = destination + distance + diversity;
        if (std::abs(sum - 1.0) > 1e-9)
            throw std::invalid_argument("reward weights: sum " + std::to_string(sum) +
                                        " != 1");
    }
};

inline double destination_reward(EntityId e_final, const Triplet& query,
                                 const TripletScorer& scorer) {
    if (e_final == query.tail) return 1.0;
    return scorer.score({query.head, query.relation, e_final});
}

// 1/k up to the 3-hop threshold, -1/k^2 past it. k = 0 (an all-STOP rollout)
// earns neither bonus nor penalty.
inline double distance_reward(int k) {
    if (k <= 0) return 0.0;
    if (k <= 3) return 1.0 / static_cast<double>(k);
    return -1.0 / static_cast<double>(k) / static_cast<double>(k);
}

inline double total_reward(double dest, double dist, double div, const RewardWeights& w) {
    return w.destination * dest + w.distance * dist + w.diversity * div;
}

// Mean of the traversed non-STOP relation embeddings; order-free by
// construction. Uses the current table values, detached from any tape.
inline std::vector<double> path_embedding(const std::vector<RelationId>& relations,
                                          const StructuralTable& table) {
    std::vector<double> p(static_cast<std::size_t>(table.dim()), 0.0);
    if (relations.empty()) return p;
    for (RelationId r : relations)
        for (int j = 0; j < table.dim(); ++j)
            p[static_cast<std::size_t>(j)] += table.relations.value.at(r, j);
    for (double& v : p) v /= static_cast<double>(relations.size());
    return p;
}

// Per-query ring buffers of successful path embeddings; the diversity term
// compares a fresh path against them through a Gaussian kernel. Populated
// during training only, never consulted by evaluation.
class PathMemory {
public:
    explicit PathMemory(double bandwidth = 3.0, int capacity = 100)
        : bandwidth_(bandwidth), capacity_(capacity) {
        if (bandwidth <= 0.0) throw std::invalid_argument("path memory: bandwidth must be > 0");
        if (capacity <= 0) throw std::invalid_argument("path memory: capacity must be > 0");
    }

    double bandwidth() const { return bandwidth_; }

    int count(const Triplet& query) const {
        auto it = store_.find(key(query));
        return it == store_.end() ? 0 : static_cast<int>(it->second.size());
    }

    // 0 with nothing stored, otherwise -(1/V) sum_i exp(-|p - p_i| / (2 u^2)).
    // The exponent uses the unsquared norm.
    double diversity_reward(const Triplet& query, const std::vector<double>& p) const {
        auto it = store_.find(key(query));
        if (it == store_.end() || it->second.empty()) return 0.0;
        const auto& paths = it->second;
        double acc = 0.0;
        for (const auto& stored : paths) {
            double sq = 0.0;
            for (std::size_t j = 0; j < p.size(); ++j) {
                const double d = p[j] - stored[j];
                sq += d * d;
            }
            acc += std::exp(-std::sqrt(sq) / (2.0 * bandwidth_ * bandwidth_));
        }
        return -acc / static_cast<double>(paths.size());
    }

    // Appends only successful rollouts; oldest entries beyond capacity fall
    // off.
    void update(const Triplet& query, const std::vector<double>& p, bool succeeded) {
        if (!succeeded) return;
        auto& paths = store_[key(query)];
        paths.push_back(p);
        while (static_cast<int>(paths.size()) > capacity_) paths.pop_front();
    }

    void clear() { store_.clear(); }

private:
    static std::pair<EntityId, RelationId> key(const Triplet& query) {
        return {query.head, query.relation};
    }

    double bandwidth_;
    int capacity_;
    std::map<std::pair<EntityId, RelationId>, std::deque<std::vector<double>>> store_;
};

} // namespace mmkgr
