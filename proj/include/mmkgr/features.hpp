#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmkgr/graph.hpp"
#include "mmkgr/rng.hpp"
#include "mmkgr/tape.hpp"
#include "mmkgr/tensor.hpp"

namespace mmkgr {

// Entity and relation embeddings, rows indexed by id. The relation table
// covers inverses and the NO_OP row.
struct StructuralTable {
    Parameter entities;
    Parameter relations;

    int dim() const { return entities.value.cols(); }
    std::vector<Parameter*> parameters() { return {&entities, &relations}; }

    static StructuralTable random(EntityId entity_count, RelationId relation_count, int d_s,
                                  Rng& rng) {
        const double bound = 6.0 / std::sqrt(static_cast<double>(d_s));
        Tensor e(entity_count, d_s);
        Tensor r(relation_count, d_s);
        for (auto& v : e.data()) v = rng.uniform(-bound, bound);
        for (auto& v : r.data()) v = rng.uniform(-bound, bound);
        return {Parameter("struct.entities", std::move(e)),
                Parameter("struct.relations", std::move(r))};
    }
};

struct TranseConfig {
    int dim = 200;
    int epochs = 100;
    double margin = 1.0;
    double learning_rate = 0.01;
};

namespace detail {

inline void l2_normalize_rows(Tensor& t) {
    for (int i = 0; i < t.rows(); ++i) {
        double sq = 0.0;
        for (int j = 0; j < t.cols(); ++j) sq += t.at(i, j) * t.at(i, j);
        const double norm = std::sqrt(sq);
        if (norm > 0.0)
            for (int j = 0; j < t.cols(); ++j) t.at(i, j) /= norm;
    }
}

inline double transe_sq_dist(const Tensor& ent, const Tensor& rel, const Triplet& t) {
    double sq = 0.0;
    for (int j = 0; j < ent.cols(); ++j) {
        const double d = ent.at(t.head, j) + rel.at(t.relation, j) - ent.at(t.tail, j);
        sq += d * d;
    }
    return sq;
}

} // namespace detail

// Margin-ranking TransE over the (already inverse-augmented, when enabled)
// training edges. Entity rows are L2-normalized once per epoch. The NO_OP
// row never occurs in edges and keeps its random init.
inline StructuralTable pretrain_transe(const std::vector<Triplet>& edges, EntityId entity_count,
                                       RelationId relation_count, const TranseConfig& cfg,
                                       std::uint64_t seed) {
    if (edges.empty()) throw std::invalid_argument("transe: empty training edge set");
    Rng rng(seed);
    StructuralTable table = StructuralTable::random(entity_count, relation_count, cfg.dim, rng);
    Tensor& ent = table.entities.value;
    Tensor& rel = table.relations.value;
    detail::l2_normalize_rows(ent);

    std::vector<int> order(edges.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (int idx : order) {
            const Triplet& pos = edges[static_cast<std::size_t>(idx)];
            Triplet neg = pos;
            if (rng.uniform01() < 0.5)
                neg.head = static_cast<EntityId>(rng.uniform_int(entity_count));
            else
                neg.tail = static_cast<EntityId>(rng.uniform_int(entity_count));
            const double d_pos = detail::transe_sq_dist(ent, rel, pos);
            const double d_neg = detail::transe_sq_dist(ent, rel, neg);
            if (cfg.margin + d_pos - d_neg <= 0.0) continue;
            for (int j = 0; j < cfg.dim; ++j) {
                const double gp = 2.0 * (ent.at(pos.head, j) + rel.at(pos.relation, j) -
                                         ent.at(pos.tail, j));
                ent.at(pos.head, j) -= cfg.learning_rate * gp;
                rel.at(pos.relation, j) -= cfg.learning_rate * gp;
                ent.at(pos.tail, j) += cfg.learning_rate * gp;
                const double gn = 2.0 * (ent.at(neg.head, j) + rel.at(neg.relation, j) -
                                         ent.at(neg.tail, j));
                ent.at(neg.head, j) += cfg.learning_rate * gn;
                rel.at(neg.relation, j) -= cfg.learning_rate * gn;
                ent.at(neg.tail, j) -= cfg.learning_rate * gn;
            }
        }
        detail::l2_normalize_rows(ent);
    }
    return table;
}

inline double transe_margin_loss(const StructuralTable& table, const std::vector<Triplet>& edges,
                                 double margin, std::uint64_t seed) {
    Rng rng(seed);
    double total = 0.0;
    for (const Triplet& pos : edges) {
        Triplet neg = pos;
        if (rng.uniform01() < 0.5)
            neg.head = static_cast<EntityId>(rng.uniform_int(table.entities.value.rows()));
        else
            neg.tail = static_cast<EntityId>(rng.uniform_int(table.entities.value.rows()));
        const double d_pos = detail::transe_sq_dist(table.entities.value, table.relations.value, pos);
        const double d_neg = detail::transe_sq_dist(table.entities.value, table.relations.value, neg);
        total += std::max(0.0, margin + d_pos - d_neg);
    }
    return total / static_cast<double>(edges.size());
}

// Per-entity auxiliary vectors. Entities with no supplied vector get zeros
// and a missing flag; the zero input also zeroes the projection gradient, so
// missing rows never contribute to parameter updates.
struct ModalStore {
    int text_dim = 0;
    int image_dim = 0;
    std::vector<std::vector<double>> text;
    std::vector<std::vector<double>> image;
    std::vector<char> text_missing;
    std::vector<char> image_missing;

    Parameter w_text;  // [d_t x d_x/2]
    Parameter w_image; // [d_i x d_x/2]

    static ModalStore create(EntityId entity_count, int d_t, int d_i, int d_x, Rng& rng) {
        if (d_x % 2 != 0) throw std::invalid_argument("modal store: d_x must be even");
        ModalStore s;
        s.text_dim = d_t;
        s.image_dim = d_i;
        s.text.assign(static_cast<std::size_t>(entity_count), std::vector<double>(d_t, 0.0));
        s.image.assign(static_cast<std::size_t>(entity_count), std::vector<double>(d_i, 0.0));
        s.text_missing.assign(static_cast<std::size_t>(entity_count), 1);
        s.image_missing.assign(static_cast<std::size_t>(entity_count), 1);
        const double st = 1.0 / std::sqrt(static_cast<double>(d_t));
        const double si = 1.0 / std::sqrt(static_cast<double>(d_i));
        Tensor wt(d_t, d_x / 2);
        Tensor wi(d_i, d_x / 2);
        for (auto& v : wt.data()) v = rng.normal(0.0, st);
        for (auto& v : wi.data()) v = rng.normal(0.0, si);
        s.w_text = Parameter("modal.w_text", std::move(wt));
        s.w_image = Parameter("modal.w_image", std::move(wi));
        return s;
    }

    int aux_dim() const { return w_text.value.cols() + w_image.value.cols(); }
    std::vector<Parameter*> parameters() { return {&w_text, &w_image}; }

    void set_text(EntityId e, std::vector<double> v) {
        if (static_cast<int>(v.size()) != text_dim)
            throw std::invalid_argument("modal store: text vector has dimension " +
                                        std::to_string(v.size()) + ", expected " +
                                        std::to_string(text_dim));
        text[static_cast<std::size_t>(e)] = std::move(v);
        text_missing[static_cast<std::size_t>(e)] = 0;
    }

    void set_image(EntityId e, std::vector<double> v) {
        if (static_cast<int>(v.size()) != image_dim)
            throw std::invalid_argument("modal store: image vector has dimension " +
                                        std::to_string(v.size()) + ", expected " +
                                        std::to_string(image_dim));
        image[static_cast<std::size_t>(e)] = std::move(v);
        image_missing[static_cast<std::size_t>(e)] = 0;
    }

    int missing_text_count() const {
        int n = 0;
        for (char c : text_missing) n += c;
        return n;
    }
    int missing_image_count() const {
        int n = 0;
        for (char c : image_missing) n += c;
        return n;
    }
};

// Feature file: one line per entity, `name v1 v2 ... vd`, space separated.
// Names absent from the vocabulary are skipped (feature dumps routinely
// cover more entities than one graph). Returns the number of rows loaded.
inline int load_feature_file(const std::string& path, const Vocab& entities, ModalStore& store,
                             bool is_text) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("features: cannot open " + path);
    const int want = is_text ? store.text_dim : store.image_dim;
    std::string line;
    int line_no = 0;
    int loaded = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string name;
        ss >> name;
        std::vector<double> vals;
        double v;
        while (ss >> v) vals.push_back(v);
        if (static_cast<int>(vals.size()) != want)
            throw std::runtime_error("features: line " + std::to_string(line_no) + " in " + path +
                                     " has " + std::to_string(vals.size()) +
                                     " values, expected " + std::to_string(want));
        if (!entities.contains(name)) continue;
        const EntityId id = entities.get(name);
        if (is_text)
            store.set_text(id, std::move(vals));
        else
            store.set_image(id, std::move(vals));
        ++loaded;
    }
    return loaded;
}

inline void write_feature_file(const std::string& path, const Vocab& entities,
                               const std::vector<std::vector<double>>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("features: cannot write " + path);
    out.precision(17);
    for (std::int32_t e = 0; e < entities.size(); ++e) {
        out << entities.name(e);
        for (double v : rows[static_cast<std::size_t>(e)]) out << ' ' << v;
        out << '\n';
    }
}

// Reasoning-path history: an LSTM over (relation, entity) embedding pairs,
// bootstrapped from (NO_OP, e_s) at episode start.
struct HistoryState {
    Tape::Id h = 0;
    Tape::Id c = 0;
    int step = 0;
};

struct HistoryEncoder {
    LstmParams lstm; // input 2*d_s, hidden d_s

    static HistoryEncoder create(int d_s, Rng& rng) {
        HistoryEncoder enc;
        const double scale = 1.0 / std::sqrt(static_cast<double>(2 * d_s));
        Tensor w(2 * d_s, 4 * d_s);
        Tensor u(d_s, 4 * d_s);
        for (auto& v : w.data()) v = rng.normal(0.0, scale);
        for (auto& v : u.data()) v = rng.normal(0.0, scale);
        enc.lstm.w_input = Parameter("history.w_input", std::move(w));
        enc.lstm.w_hidden = Parameter("history.w_hidden", std::move(u));
        enc.lstm.bias = Parameter("history.bias", Tensor(1, 4 * d_s));
        return enc;
    }

    std::vector<Parameter*> parameters() { return lstm.parameters(); }

    HistoryState bootstrap(Tape& t, StructuralTable& table, RelationId no_op, EntityId e_s) {
        const int d_s = table.dim();
        LstmState zero{t.constant(Tensor(1, d_s)), t.constant(Tensor(1, d_s))};
        LstmState s = lstm_step(t, step_input(t, table, no_op, e_s), zero, lstm);
        return {s.h, s.c, 0};
    }

    HistoryState encode(Tape& t, StructuralTable& table, const HistoryState& prev,
                        RelationId r_taken, EntityId e_reached) {
        LstmState s = lstm_step(t, step_input(t, table, r_taken, e_reached), {prev.h, prev.c},
                                lstm);
        return {s.h, s.c, prev.step + 1};
    }

private:
    static Tape::Id step_input(Tape& t, StructuralTable& table, RelationId r, EntityId e) {
        return t.concat_cols(t.gather_rows(table.relations, {r}),
                             t.gather_rows(table.entities, {e}));
    }
};

// Y matrix: row i = [embedding(e_i); h_t; embedding(r_q)], shape m x 3*d_s.
// Row order follows the candidate order exactly.
inline Tape::Id build_structural_rows(Tape& t, StructuralTable& table, const HistoryState& hist,
                                      RelationId r_q, const std::vector<EntityId>& candidates) {
    if (candidates.empty()) throw std::invalid_argument("structural rows: no candidates");
    const int m = static_cast<int>(candidates.size());
    std::vector<int> ids(candidates.begin(), candidates.end());
    Tape::Id e_rows = t.gather_rows(table.entities, ids);
    Tape::Id h_rows = t.repeat_rows(hist.h, m);
    Tape::Id q_rows = t.repeat_rows(t.gather_rows(table.relations, {r_q}), m);
    return t.concat_cols(e_rows, t.concat_cols(h_rows, q_rows));
}

// X matrix: row i = [f_t(e_i) W_t ; f_i(e_i) W_i], shape m x d_x. Zeroing a
// modality (ablations) feeds a zero input block, which also kills the
// corresponding projection gradient.
inline Tape::Id build_aux_rows(Tape& t, ModalStore& store,
                               const std::vector<EntityId>& candidates, bool zero_text = false,
                               bool zero_image = false) {
    const int m = static_cast<int>(candidates.size());
    Tensor ft(m, store.text_dim);
    Tensor fi(m, store.image_dim);
    for (int i = 0; i < m; ++i) {
        const auto e = static_cast<std::size_t>(candidates[static_cast<std::size_t>(i)]);
        if (!zero_text)
            for (int j = 0; j < store.text_dim; ++j) ft.at(i, j) = store.text[e][static_cast<std::size_t>(j)];
        if (!zero_image)
            for (int j = 0; j < store.image_dim; ++j) fi.at(i, j) = store.image[e][static_cast<std::size_t>(j)];
    }
    return t.concat_cols(t.matmul(t.constant(std::move(ft)), t.param(store.w_text)),
                         t.matmul(t.constant(std::move(fi)), t.param(store.w_image)));
}

} // namespace mmkgr
