#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmkgr/checkpoint.hpp"
#include "mmkgr/config.hpp"

namespace mmkgr {
namespace fs = std::filesystem;

struct LoadedDataset {
    Vocab entities;
    Vocab relations; // base relations; inverses and NO_OP live in the graph layout
    DatasetSplit split;
    KnowledgeGraph graph;
    std::vector<std::vector<double>> text;
    std::vector<std::vector<double>> image;
    std::vector<char> text_present;
    std::vector<char> image_present;
};

inline LoadedDataset load_dataset(const RunConfig& cfg) {
    LoadedDataset d;
    if (cfg.use_synthetic) {
        SyntheticData synth = generate_synthetic_mkg(cfg.synthetic);
        d.entities = std::move(synth.entities);
        d.relations = std::move(synth.relations);
        d.split = std::move(synth.split);
        d.text = std::move(synth.text);
        d.image = std::move(synth.image);
        d.text_present.assign(static_cast<std::size_t>(d.entities.size()), 1);
        d.image_present.assign(static_cast<std::size_t>(d.entities.size()), 1);
    } else {
        d.split.train = load_triplets(cfg.train_path, d.entities, d.relations);
        d.split.valid = load_triplets(cfg.valid_path, d.entities, d.relations);
        d.split.test = load_triplets(cfg.test_path, d.entities, d.relations);
        dedup_sorted(d.split.train);
        dedup_sorted(d.split.valid);
        dedup_sorted(d.split.test);
        validate_disjoint(d.split);
        d.text.assign(static_cast<std::size_t>(d.entities.size()), {});
        d.image.assign(static_cast<std::size_t>(d.entities.size()), {});
        d.text_present.assign(static_cast<std::size_t>(d.entities.size()), 0);
        d.image_present.assign(static_cast<std::size_t>(d.entities.size()), 0);
    }
    d.graph = KnowledgeGraph::build(d.split.train, d.entities.size(), d.relations.size(),
                                    cfg.add_inverses);
    return d;
}

inline Model make_model(const RunConfig& cfg, const LoadedDataset& d) {
    Model m = Model::create(d.entities.size(), d.graph.relation_count(), cfg.dims, cfg.seed);
    if (cfg.use_synthetic) {
        for (EntityId e = 0; e < d.entities.size(); ++e) {
            m.modal.set_text(e, d.text[static_cast<std::size_t>(e)]);
            m.modal.set_image(e, d.image[static_cast<std::size_t>(e)]);
        }
    } else {
        if (!cfg.text_features_path.empty() && fs::exists(cfg.text_features_path))
            load_feature_file(cfg.text_features_path, d.entities, m.modal, true);
        if (!cfg.image_features_path.empty() && fs::exists(cfg.image_features_path))
            load_feature_file(cfg.image_features_path, d.entities, m.modal, false);
    }
    return m;
}

// Training edges in graph semantics: the train split plus inverse edges when
// the graph carries them. TransE and the scorer both see this list.
inline std::vector<Triplet> augmented_train_edges(const LoadedDataset& d) {
    std::vector<Triplet> edges = d.split.train;
    if (d.graph.has_inverses()) {
        const std::size_t n = edges.size();
        edges.reserve(2 * n);
        for (std::size_t i = 0; i < n; ++i)
            edges.push_back({edges[i].tail, d.graph.inverse(edges[i].relation), edges[i].head});
    }
    return edges;
}

struct PretrainedParts {
    StructuralTable table;
    BilinearScorer scorer;
};

inline PretrainedParts run_pretrain(const RunConfig& cfg, const LoadedDataset& d) {
    const std::vector<Triplet> edges = augmented_train_edges(d);
    TranseConfig transe = cfg.transe;
    transe.dim = cfg.dims.d_s;
    StructuralTable table = pretrain_transe(edges, d.entities.size(), d.graph.relation_count(),
                                            transe, derive_seed(cfg.seed, "transe"));
    Rng scorer_rng(derive_seed(cfg.seed, "scorer"));
    BilinearScorer scorer(d.entities.size(), d.graph.relation_count(), cfg.scorer.dim,
                          scorer_rng);
    scorer.train(edges, cfg.scorer.negatives_per_positive, cfg.scorer.epochs,
                 cfg.scorer.learning_rate, scorer_rng);
    return {std::move(table), std::move(scorer)};
}

inline std::uint64_t fnv1a64_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("hash: cannot open " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string git_describe() {
    FILE* pipe = popen("git describe --always --dirty 2>/dev/null", "r");
    if (!pipe) return "unknown";
    char buf[256];
    std::string out;
    while (fgets(buf, sizeof(buf), pipe)) out += buf;
    pclose(pipe);
    while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
    return out.empty() ? "unknown" : out;
}

// Run directories are named by config hash and seed; an existing directory
// is never reused, reruns get a -rN suffix.
inline fs::path prepare_run_dir(const RunConfig& cfg, const std::string& command) {
    std::string root = cfg.output_root;
    if (const char* env = std::getenv("MMKGR_RUN_DIR"); env && *env) root = env;
    const std::string hash = hex64(fnv1a64(cfg.to_json().dump())).substr(0, 12);
    std::string base = command + "-" + hash + "-s" + std::to_string(cfg.seed);
    fs::path dir = fs::path(root) / base;
    for (int n = 2; fs::exists(dir); ++n) dir = fs::path(root) / (base + "-r" + std::to_string(n));
    fs::create_directories(dir);
    return dir;
}

inline void write_manifest(const fs::path& dir, const RunConfig& cfg, const std::string& command,
                           const std::vector<fs::path>& artifacts) {
    nlohmann::json m;
    m["command"] = command;
    m["seed"] = cfg.seed;
    m["config"] = cfg.to_json();
    m["git"] = git_describe();
    auto& files = m["artifacts"] = nlohmann::json::object();
    for (const fs::path& p : artifacts)
        files[p.filename().string()] = hex64(fnv1a64_file(p));
    std::ofstream out(dir / "manifest.json");
    out << m.dump(2) << '\n';
}

inline RunConfig config_from_manifest(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("manifest: cannot open " + manifest_path);
    nlohmann::json m = nlohmann::json::parse(in);
    RunConfig cfg = RunConfig::from_json(m.at("config"));
    cfg.validate();
    return cfg;
}

struct CommandResult {
    fs::path run_dir;
};

inline CommandResult cmd_synth(const RunConfig& cfg) {
    if (!cfg.use_synthetic)
        throw std::invalid_argument("synth: config selects a file dataset; nothing to generate");
    SyntheticData data = generate_synthetic_mkg(cfg.synthetic);
    const fs::path dir = prepare_run_dir(cfg, "synth");
    write_triplets_tsv((dir / "train.txt").string(), data.split.train, data.entities,
                       data.relations);
    write_triplets_tsv((dir / "valid.txt").string(), data.split.valid, data.entities,
                       data.relations);
    write_triplets_tsv((dir / "test.txt").string(), data.split.test, data.entities,
                       data.relations);
    data.entities.dump_tsv((dir / "entities.tsv").string());
    data.relations.dump_tsv((dir / "relations.tsv").string());
    write_feature_file((dir / "text_features.txt").string(), data.entities, data.text);
    write_feature_file((dir / "image_features.txt").string(), data.entities, data.image);
    write_manifest(dir, cfg, "synth",
                   {dir / "train.txt", dir / "valid.txt", dir / "test.txt",
                    dir / "entities.tsv", dir / "relations.tsv", dir / "text_features.txt",
                    dir / "image_features.txt"});
    return {dir};
}

inline CommandResult cmd_pretrain(const RunConfig& cfg) {
    LoadedDataset d = load_dataset(cfg);
    PretrainedParts parts = run_pretrain(cfg, d);
    const fs::path dir = prepare_run_dir(cfg, "pretrain");
    std::vector<Parameter*> params = parts.table.parameters();
    for (Parameter* p : parts.scorer.parameters()) params.push_back(p);
    nlohmann::json extra = {{"entity_count", d.entities.size()},
                            {"relation_count", d.graph.relation_count()},
                            {"d_s", cfg.dims.d_s},
                            {"scorer_dim", cfg.scorer.dim}};
    checkpoint::save_params((dir / "pretrain").string(), params, extra);
    write_manifest(dir, cfg, "pretrain", {dir / "pretrain.json", dir / "pretrain.bin"});
    return {dir};
}

namespace detail {

inline std::vector<RelationId> resolve_train_relations(const RunConfig& cfg,
                                                       const LoadedDataset& d) {
    std::vector<RelationId> ids;
    for (const std::string& name : cfg.train_relation_names) {
        if (!d.relations.contains(name))
            throw std::invalid_argument("config: train.relations entry '" + name +
                                        "' is not a known relation");
        ids.push_back(d.relations.get(name));
    }
    return ids;
}

struct TrainedRun {
    Model model;
    BilinearScorer scorer;
    TrainResult result;
    WiredVariant variant;
};

inline TrainedRun train_in_memory(const RunConfig& cfg, const LoadedDataset& d) {
    Model model = make_model(cfg, d);
    std::optional<BilinearScorer> scorer;
    if (!cfg.pretrained.empty()) {
        checkpoint::Loaded loaded = checkpoint::load(cfg.pretrained);
        checkpoint::restore(loaded, model.table.parameters());
        const int scorer_dim = loaded.extra.value("scorer_dim", cfg.scorer.dim);
        Rng tmp(0);
        scorer.emplace(d.entities.size(), d.graph.relation_count(), scorer_dim, tmp);
        checkpoint::restore(loaded, scorer->parameters());
    } else {
        PretrainedParts parts = run_pretrain(cfg, d);
        model.table.entities.value = parts.table.entities.value;
        model.table.relations.value = parts.table.relations.value;
        scorer.emplace(std::move(parts.scorer));
    }

    WiredVariant variant = apply_ablation(cfg.ablation, cfg.reward_weights);
    PathMemory memory(cfg.memory_bandwidth, cfg.memory_capacity);
    TrainConfig tc = cfg.train;
    tc.train_relations = resolve_train_relations(cfg, d);
    TrainResult result = train(model, d.graph, d.split, *scorer, memory, variant, tc);
    return {std::move(model), std::move(*scorer), std::move(result), variant};
}

inline void write_epochs_csv(const fs::path& path, const TrainResult& result) {
    std::ofstream out(path);
    out << "epoch,mean_reward,success_rate,valid_hits1\n";
    char buf[128];
    for (const EpochStats& e : result.epochs) {
        std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g\n", e.epoch, e.mean_reward,
                      e.success_rate, e.valid_hits1);
        out << buf;
    }
}

inline std::vector<fs::path> write_train_artifacts(const fs::path& dir, const RunConfig& cfg,
                                                   const LoadedDataset& d, TrainedRun& run) {
    nlohmann::json extra = {{"entity_count", d.entities.size()},
                            {"relation_count", d.graph.relation_count()},
                            {"dims",
                             {{"d_s", cfg.dims.d_s},
                              {"d_t", cfg.dims.d_t},
                              {"d_i", cfg.dims.d_i},
                              {"d_x", cfg.dims.d_x},
                              {"d", cfg.dims.d},
                              {"j", cfg.dims.j}}},
                            {"ablation", to_string(cfg.ablation)}};
    checkpoint::save_params((dir / "model").string(), run.model.parameters(), extra);
    checkpoint::save_params((dir / "scorer").string(), run.scorer.parameters(),
                            {{"scorer_dim", cfg.scorer.dim}});
    write_epochs_csv(dir / "epochs.csv", run.result);
    nlohmann::json state = {{"epochs_run", run.result.epochs.size()},
                            {"best_epoch", run.result.best_epoch},
                            {"best_valid_hits1", run.result.best_valid_hits1},
                            {"baseline", run.result.baseline},
                            {"seed", cfg.seed}};
    std::ofstream st(dir / "train_state.json");
    st << state.dump(2) << '\n';
    return {dir / "model.json", dir / "model.bin", dir / "scorer.json", dir / "scorer.bin",
            dir / "epochs.csv", dir / "train_state.json"};
}

struct EvalOutputs {
    EntityLinkMetrics tail;
    std::optional<EntityLinkMetrics> head;
    RelationLinkMetrics relation;
    HopBreakdown hops;
    nlohmann::json report;
};

inline nlohmann::json entity_metrics_json(const EntityLinkMetrics& m) {
    return {{"mrr", m.mrr},
            {"hits1", m.hits1},
            {"hits5", m.hits5},
            {"hits10", m.hits10},
            {"queries", m.query_count}};
}

inline EvalOutputs evaluate_in_memory(const RunConfig& cfg, const LoadedDataset& d, Model& model) {
    const WiredVariant variant = apply_ablation(cfg.ablation, cfg.reward_weights);
    const KnownTails known = build_known_tails(d.split, d.graph);

    EvalOutputs out;
    out.tail = entity_link_prediction(model, d.graph, d.split.test, known, cfg.episode,
                                      variant.wiring, cfg.beam, cfg.train.pooled_z);
    if (cfg.eval_head_queries && d.graph.has_inverses()) {
        std::vector<Triplet> head_queries;
        head_queries.reserve(d.split.test.size());
        for (const Triplet& t : d.split.test)
            head_queries.push_back({t.tail, d.graph.inverse(t.relation), t.head});
        out.head = entity_link_prediction(model, d.graph, head_queries, known, cfg.episode,
                                          variant.wiring, cfg.beam, cfg.train.pooled_z);
    }
    out.relation = relation_link_prediction(model, d.graph, d.split.test, d.split, cfg.episode,
                                            variant.wiring, cfg.beam, cfg.train.pooled_z);
    out.hops = per_hop_breakdown(model, d.graph, d.split.test, cfg.episode, variant.wiring,
                                 cfg.train.pooled_z);

    out.report["entity"]["tail"] = entity_metrics_json(out.tail);
    if (out.head) out.report["entity"]["head"] = entity_metrics_json(*out.head);
    out.report["relation"]["map_overall"] = out.relation.map_overall;
    auto& per = out.report["relation"]["per_relation"] = nlohmann::json::object();
    for (const auto& [rel, v] : out.relation.map_per_relation) per[d.relations.name(rel)] = v;
    out.report["hops"]["successes"] = out.hops.successes;
    auto& hop = out.report["hops"]["percent"] = nlohmann::json::object();
    for (const auto& [k, v] : out.hops.percent_by_hops) hop[std::to_string(k)] = v;
    out.report["ablation"] = to_string(cfg.ablation);
    return out;
}

inline void write_metrics(const fs::path& dir, const EvalOutputs& out) {
    std::ofstream js(dir / "metrics.json");
    js << out.report.dump(2) << '\n';
    std::ofstream csv(dir / "metrics.csv");
    csv << "metric,value\n";
    char buf[128];
    auto row = [&](const std::string& name, double v) {
        std::snprintf(buf, sizeof(buf), "%s,%.10g\n", name.c_str(), v);
        csv << buf;
    };
    row("mrr_tail", out.tail.mrr);
    row("hits1_tail", out.tail.hits1);
    row("hits5_tail", out.tail.hits5);
    row("hits10_tail", out.tail.hits10);
    if (out.head) {
        row("mrr_head", out.head->mrr);
        row("hits1_head", out.head->hits1);
        row("hits5_head", out.head->hits5);
        row("hits10_head", out.head->hits10);
    }
    row("map_overall", out.relation.map_overall);
    for (const auto& [k, v] : out.hops.percent_by_hops) row("hop_" + std::to_string(k), v);
}

} // namespace detail

inline CommandResult cmd_train(const RunConfig& cfg) {
    LoadedDataset d = load_dataset(cfg);
    detail::TrainedRun run = detail::train_in_memory(cfg, d);
    const fs::path dir = prepare_run_dir(cfg, "train");
    std::vector<fs::path> artifacts = detail::write_train_artifacts(dir, cfg, d, run);
    write_manifest(dir, cfg, "train", artifacts);
    return {dir};
}

inline CommandResult cmd_eval(const RunConfig& cfg) {
    if (cfg.checkpoint.empty())
        throw std::invalid_argument("eval: config.checkpoint is required");
    if (!fs::exists(cfg.checkpoint + ".json"))
        throw std::invalid_argument("eval: checkpoint '" + cfg.checkpoint + "' not found");
    LoadedDataset d = load_dataset(cfg);
    Model model = make_model(cfg, d);
    checkpoint::Loaded loaded = checkpoint::load(cfg.checkpoint);
    checkpoint::restore(loaded, model.parameters());
    detail::EvalOutputs out = detail::evaluate_in_memory(cfg, d, model);
    const fs::path dir = prepare_run_dir(cfg, "eval");
    detail::write_metrics(dir, out);
    write_manifest(dir, cfg, "eval", {dir / "metrics.json", dir / "metrics.csv"});
    return {dir};
}

// Trains and evaluates each variant with the same seed and dataset, then
// emits a comparison table.
inline CommandResult cmd_ablate(const RunConfig& cfg, const std::vector<Ablation>& variants) {
    if (variants.empty()) throw std::invalid_argument("ablate: no variants listed");
    LoadedDataset d = load_dataset(cfg);
    const fs::path dir = prepare_run_dir(cfg, "ablate");
    std::vector<fs::path> artifacts;
    std::ostringstream table;
    table << "variant,mrr,hits1,hits5,hits10,map,best_valid_hits1\n";
    for (Ablation variant : variants) {
        RunConfig sub = cfg;
        sub.ablation = variant;
        detail::TrainedRun run = detail::train_in_memory(sub, d);
        const fs::path subdir = dir / to_string(variant);
        fs::create_directories(subdir);
        std::vector<fs::path> sub_art = detail::write_train_artifacts(subdir, sub, d, run);
        detail::EvalOutputs out = detail::evaluate_in_memory(sub, d, run.model);
        detail::write_metrics(subdir, out);
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                      to_string(variant).c_str(), out.tail.mrr, out.tail.hits1, out.tail.hits5,
                      out.tail.hits10, out.relation.map_overall,
                      100.0 * run.result.best_valid_hits1);
        table << buf;
        artifacts.push_back(subdir / "metrics.json");
        artifacts.push_back(subdir / "metrics.csv");
    }
    std::ofstream cmp(dir / "comparison.csv");
    cmp << table.str();
    artifacts.push_back(dir / "comparison.csv");
    write_manifest(dir, cfg, "ablate", artifacts);
    return {dir};
}

} // namespace mmkgr
