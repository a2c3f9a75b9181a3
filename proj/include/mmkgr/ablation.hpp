#pragma once

#include <stdexcept>
#include <string>

#include "mmkgr/fusion.hpp"
#include "mmkgr/reward.hpp"

namespace mmkgr {

// Model and reward variants from the ablation matrix. Exactly one is active
// per run.
enum class Ablation {
    Full,
    Oskgr, // structural features only; fusion bypassed entirely
    Stkgr, // image features zeroed
    Sikgr, // text features zeroed
    Fakgr, // irrelevance filtration removed
    Fgkgr, // attention stage removed, filtration applied to the K/Q join
    Dekgr, // destination reward only
    Dskgr, // destination + distance rewards
    Dvkgr, // destination + diversity rewards
    Zokgr  // bare 0/1 terminal reward
};

inline Ablation ablation_from_string(const std::string& s) {
    if (s == "FULL") return Ablation::Full;
    if (s == "OSKGR") return Ablation::Oskgr;
    if (s == "STKGR") return Ablation::Stkgr;
    if (s == "SIKGR") return Ablation::Sikgr;
    if (s == "FAKGR") return Ablation::Fakgr;
    if (s == "FGKGR") return Ablation::Fgkgr;
    if (s == "DEKGR") return Ablation::Dekgr;
    if (s == "DSKGR") return Ablation::Dskgr;
    if (s == "DVKGR") return Ablation::Dvkgr;
    if (s == "ZOKGR") return Ablation::Zokgr;
    throw std::invalid_argument("ablation: unknown variant '" + s + "'");
}

inline std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::Full: return "FULL";
        case Ablation::Oskgr: return "OSKGR";
        case Ablation::Stkgr: return "STKGR";
        case Ablation::Sikgr: return "SIKGR";
        case Ablation::Fakgr: return "FAKGR";
        case Ablation::Fgkgr: return "FGKGR";
        case Ablation::Dekgr: return "DEKGR";
        case Ablation::Dskgr: return "DSKGR";
        case Ablation::Dvkgr: return "DVKGR";
        case Ablation::Zokgr: return "ZOKGR";
    }
    return "FULL";
}

// How the policy consumes features under a variant.
struct ModelWiring {
    bool use_fusion = true;
    bool zero_text = false;
    bool zero_image = false;
    FusionVariant fusion_variant = FusionVariant::Full;
};

// How the terminal reward is assembled under a variant.
struct RewardScheme {
    RewardWeights weights;
    bool zero_one_only = false;
};

struct WiredVariant {
    ModelWiring wiring;
    RewardScheme reward;
};

// Maps a variant onto feature wiring and (renormalized) reward weights.
inline WiredVariant apply_ablation(Ablation variant, const RewardWeights& base) {
    base.validate();
    WiredVariant out;
    out.reward.weights = base;
    switch (variant) {
        case Ablation::Full: break;
        case Ablation::Oskgr: out.wiring.use_fusion = false; break;
        case Ablation::Stkgr: out.wiring.zero_image = true; break;
        case Ablation::Sikgr: out.wiring.zero_text = true; break;
        case Ablation::Fakgr: out.wiring.fusion_variant = FusionVariant::AttentionOnly; break;
        case Ablation::Fgkgr: out.wiring.fusion_variant = FusionVariant::FiltrationOnly; break;
        case Ablation::Dekgr: out.reward.weights = {1.0, 0.0, 0.0}; break;
        case Ablation::Dskgr: {
            const double s = base.destination + base.distance;
            out.reward.weights = {base.destination / s, base.distance / s, 0.0};
            break;
        }
        case Ablation::Dvkgr: {
            const double s = base.destination + base.diversity;
            out.reward.weights = {base.destination / s, 0.0, base.diversity / s};
            break;
        }
        case Ablation::Zokgr: out.reward.zero_one_only = true; break;
    }
    out.reward.weights.validate();
    return out;
}

} // namespace mmkgr
