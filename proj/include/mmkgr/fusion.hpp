#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmkgr/rng.hpp"
#include "mmkgr/tape.hpp"
#include "mmkgr/tensor.hpp"

namespace mmkgr {

// Wiring variants of the gate-attention network. AttentionOnly drops the
// irrelevance-filtration gate and feeds the attended features through
// directly; FiltrationOnly drops the attention path and gates the bilinear
// join of Q and K instead.
enum class FusionVariant { Full, AttentionOnly, FiltrationOnly };

struct FusionParameters {
    Parameter w_q;        // [d_x x d]
    Parameter w_k;        // [d_y x d]
    Parameter w_v;        // [d_y x d]
    Parameter w_k_left;   // [d x j]
    Parameter w_q_left;   // [d x j]
    Parameter w_v_right;  // [d x j]
    Parameter w_q_right;  // [d x j]
    Parameter w_merge;    // [j x d]
    Parameter w_gate;     // [d x 1]
    Parameter w_filter;   // [j x 1]

    int joint_dim() const { return w_k_left.value.cols(); }

    static FusionParameters create(int d_x, int d_y, int d, int j, Rng& rng) {
        auto mat = [&rng](const char* name, int r, int c) {
            Tensor t(r, c);
            const double scale = 1.0 / std::sqrt(static_cast<double>(r));
            for (auto& v : t.data()) v = rng.normal(0.0, scale);
            return Parameter(name, std::move(t));
        };
        FusionParameters p;
        p.w_q = mat("fusion.w_q", d_x, d);
        p.w_k = mat("fusion.w_k", d_y, d);
        p.w_v = mat("fusion.w_v", d_y, d);
        p.w_k_left = mat("fusion.w_k_left", d, j);
        p.w_q_left = mat("fusion.w_q_left", d, j);
        p.w_v_right = mat("fusion.w_v_right", d, j);
        p.w_q_right = mat("fusion.w_q_right", d, j);
        p.w_merge = mat("fusion.w_merge", j, d);
        p.w_gate = mat("fusion.w_gate", d, 1);
        p.w_filter = mat("fusion.w_filter", j, 1);
        return p;
    }

    std::vector<Parameter*> parameters() {
        return {&w_q, &w_k, &w_v, &w_k_left, &w_q_left, &w_v_right, &w_q_right,
                &w_merge, &w_gate, &w_filter};
    }
};

// Counts which stages ran, for asserting variant wiring.
struct FusionTrace {
    int projection_evals = 0;
    int bilinear_evals = 0;
    int attention_gate_evals = 0;
    int filtration_evals = 0;
};

struct QkvIds {
    Tape::Id q;
    Tape::Id k;
    Tape::Id v;
};

struct BilinearIds {
    Tape::Id left;  // B^l
    Tape::Id right; // B^r
};

struct AttentionIds {
    Tape::Id weights_dist; // G_s, each row a distribution over feature axes
    Tape::Id scores;       // a = G_s w_gate, one scalar per candidate
};

struct FilteredIds {
    Tape::Id gate;   // G_f, one (0,1) scalar per candidate row
    Tape::Id z_rows; // Z, m x j
    Tape::Id pooled; // mean of Z rows, 1 x j
};

struct FusedFeatures {
    Tape::Id z_rows = 0;
    Tape::Id pooled = 0;
    // Intermediate stages, kept for diagnostics and tests. Ids are only
    // meaningful for stages the active variant evaluated.
    Tape::Id q = 0, k = 0, v = 0;
    Tape::Id bilinear_left = 0, bilinear_right = 0;
    Tape::Id filtration_gate_values = 0; // g_t
    Tape::Id attention_dist = 0;         // G_s
    Tape::Id attention_scores = 0;       // a
    Tape::Id attended = 0;               // V hat
    Tape::Id relevance_gate = 0;         // G_f
};

inline QkvIds project_qkv(Tape& t, Tape::Id x, Tape::Id y, FusionParameters& p,
                          FusionTrace* trace = nullptr) {
    if (trace) ++trace->projection_evals;
    return {t.matmul(x, t.param(p.w_q)), t.matmul(y, t.param(p.w_k)),
            t.matmul(y, t.param(p.w_v))};
}

inline BilinearIds bilinear_joint(Tape& t, const QkvIds& qkv, FusionParameters& p,
                                  FusionTrace* trace = nullptr) {
    if (trace) ++trace->bilinear_evals;
    Tape::Id left = t.hadamard(t.matmul(qkv.k, t.param(p.w_k_left)),
                               t.matmul(qkv.q, t.param(p.w_q_left)));
    Tape::Id right = t.hadamard(t.matmul(qkv.v, t.param(p.w_v_right)),
                                t.matmul(qkv.q, t.param(p.w_q_right)));
    return {left, right};
}

inline Tape::Id filtration_gate(Tape& t, Tape::Id bilinear_left, FusionParameters& p) {
    return t.sigmoid(t.matmul(bilinear_left, t.param(p.w_merge)));
}

// (g ⊙ K) ⊙ ((1-g) ⊙ Q), row-softmaxed over the feature axis, then reduced
// to one attention score per candidate.
inline AttentionIds gated_attention(Tape& t, Tape::Id gate, Tape::Id k, Tape::Id q,
                                    FusionParameters& p, FusionTrace* trace = nullptr) {
    if (trace) ++trace->attention_gate_evals;
    Tape::Id pre = t.hadamard(t.hadamard(gate, k), t.hadamard(t.affine(gate, -1.0, 1.0), q));
    Tape::Id dist = t.softmax_rows(pre);
    return {dist, t.matmul(dist, t.param(p.w_gate))};
}

inline Tape::Id attend(Tape& t, Tape::Id scores, Tape::Id bilinear_right) {
    return t.scale_rows(bilinear_right, scores);
}

// Column sums of the attended features; the pooled form of the accumulation.
inline Tape::Id attended_pooled(Tape& t, Tape::Id attended) {
    return t.affine(t.mean_rows(attended), static_cast<double>(t.val(attended).rows()), 0.0);
}

namespace detail {

// Irrelevance-filtration core on an arbitrary feature matrix u [m x j]:
// per-row scalar gate sigma(u_i w_filter), output row G_f[i] * u_i.
inline FilteredIds filter_features(Tape& t, Tape::Id features, FusionParameters& p,
                                   FusionTrace* trace) {
    if (trace) ++trace->filtration_evals;
    Tape::Id gate = t.sigmoid(t.matmul(features, t.param(p.w_filter)));
    Tape::Id z = t.scale_rows(features, gate);
    return {gate, z, t.mean_rows(z)};
}

} // namespace detail

inline FilteredIds irrelevance_filter(Tape& t, Tape::Id bilinear_right, Tape::Id attended,
                                      FusionParameters& p, FusionTrace* trace = nullptr) {
    return detail::filter_features(t, t.hadamard(bilinear_right, attended), p, trace);
}

// Full gate-attention pipeline from aligned structural rows Y [m x d_y] and
// auxiliary rows X [m x d_x] to complementary features Z [m x j].
inline FusedFeatures fuse(Tape& t, Tape::Id y, Tape::Id x, FusionParameters& p,
                          FusionVariant variant = FusionVariant::Full,
                          FusionTrace* trace = nullptr) {
    FusedFeatures out;
    QkvIds qkv = project_qkv(t, x, y, p, trace);
    out.q = qkv.q;
    out.k = qkv.k;
    out.v = qkv.v;
    BilinearIds joint = bilinear_joint(t, qkv, p, trace);
    out.bilinear_left = joint.left;
    out.bilinear_right = joint.right;

    if (variant == FusionVariant::FiltrationOnly) {
        FilteredIds f = detail::filter_features(t, joint.left, p, trace);
        out.relevance_gate = f.gate;
        out.z_rows = f.z_rows;
        out.pooled = f.pooled;
        return out;
    }

    out.filtration_gate_values = filtration_gate(t, joint.left, p);
    AttentionIds att = gated_attention(t, out.filtration_gate_values, qkv.k, qkv.q, p, trace);
    out.attention_dist = att.weights_dist;
    out.attention_scores = att.scores;
    out.attended = attend(t, att.scores, joint.right);

    if (variant == FusionVariant::AttentionOnly) {
        out.z_rows = out.attended;
        out.pooled = t.mean_rows(out.attended);
        return out;
    }

    FilteredIds f = irrelevance_filter(t, joint.right, out.attended, p, trace);
    out.relevance_gate = f.gate;
    out.z_rows = f.z_rows;
    out.pooled = f.pooled;
    return out;
}

} // namespace mmkgr
