#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmkgr/ablation.hpp"
#include "mmkgr/agent.hpp"
#include "mmkgr/eval.hpp"
#include "mmkgr/features.hpp"
#include "mmkgr/reward.hpp"
#include "mmkgr/synthetic.hpp"

namespace mmkgr {

// Resolved run configuration. One JSON file, any field overridable with
// --section.key=value flags; the fully resolved form is what gets hashed
// into the run directory name and echoed into the manifest.
struct RunConfig {
    std::uint64_t seed = 0;
    std::string output_root = "runs";
    Ablation ablation = Ablation::Full;

    // Dataset: either a synthetic spec or file paths. `dir` expands to the
    // standard file names emitted by the synth command.
    bool use_synthetic = true;
    SyntheticSpec synthetic;
    std::string dataset_dir;
    std::string train_path, valid_path, test_path;
    std::string text_features_path, image_features_path;
    bool add_inverses = true;

    ModelDims dims;

    EpisodeConfig episode; // T, max_actions

    RewardWeights reward_weights;
    double memory_bandwidth = 3.0; // u
    int memory_capacity = 100;

    TranseConfig transe;
    ScorerConfig scorer;

    TrainConfig train;
    std::vector<std::string> train_relation_names;

    BeamConfig beam;
    bool eval_head_queries = false;

    std::string pretrained; // checkpoint stem from the pretrain command
    std::string checkpoint; // model checkpoint stem, consumed by eval

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    void validate() const;
};

namespace detail {

template <typename T>
T field(const nlohmann::json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw std::invalid_argument("config: field '" + key + "' has the wrong type");
    }
}

} // namespace detail

inline nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["output_root"] = output_root;
    j["ablation"] = to_string(ablation);
    j["dataset"] = {
        {"synthetic", use_synthetic},
        {"dir", dataset_dir},
        {"train", train_path},
        {"valid", valid_path},
        {"test", test_path},
        {"text_features", text_features_path},
        {"image_features", image_features_path},
        {"add_inverses", add_inverses},
    };
    j["synth"] = {
        {"entity_count", synthetic.entity_count},
        {"noise_relations", synthetic.noise_relations},
        {"branching", synthetic.branching},
        {"rule_hops", synthetic.rule_hops},
        {"distractor_ratio", synthetic.distractor_ratio},
        {"decoys_per_query", synthetic.decoys_per_query},
        {"modality", to_string(synthetic.modality)},
        {"text_dim", synthetic.text_dim},
        {"image_dim", synthetic.image_dim},
        {"noise_scale", synthetic.noise_scale},
        {"signal_scale", synthetic.signal_scale},
        {"valid_fraction", synthetic.valid_fraction},
        {"test_fraction", synthetic.test_fraction},
    };
    j["dims"] = {{"d_s", dims.d_s}, {"d_t", dims.d_t}, {"d_i", dims.d_i},
                 {"d_x", dims.d_x}, {"d", dims.d},     {"j", dims.j}};
    j["episode"] = {{"T", episode.max_steps}, {"max_actions", episode.max_actions}};
    j["reward"] = {{"lambda1", reward_weights.destination},
                   {"lambda2", reward_weights.distance},
                   {"lambda3", reward_weights.diversity},
                   {"bandwidth", memory_bandwidth},
                   {"memory_capacity", memory_capacity}};
    j["transe"] = {{"epochs", transe.epochs},
                   {"margin", transe.margin},
                   {"lr", transe.learning_rate}};
    j["scorer"] = {{"dim", scorer.dim},
                   {"epochs", scorer.epochs},
                   {"negatives", scorer.negatives_per_positive},
                   {"lr", scorer.learning_rate}};
    j["train"] = {{"epochs", train.epochs},
                  {"batch_size", train.batch_size},
                  {"lr", train.learning_rate},
                  {"optimizer", train.optimizer == OptimizerKind::Adam ? "adam" : "sgd"},
                  {"baseline_decay", train.baseline_decay},
                  {"entropy_coef", train.entropy_coef},
                  {"rollouts_per_query", train.rollouts_per_query},
                  {"pooled_z", train.pooled_z},
                  {"inverse_queries", train.train_inverse_queries},
                  {"relations", train_relation_names}};
    j["eval"] = {{"beam_width", beam.width}, {"head_queries", eval_head_queries}};
    j["pretrained"] = pretrained;
    j["checkpoint"] = checkpoint;
    return j;
}

inline RunConfig RunConfig::from_json(const nlohmann::json& j) {
    using detail::field;
    RunConfig c;
    c.seed = field<std::uint64_t>(j, "seed", 0);
    c.output_root = field<std::string>(j, "output_root", "runs");
    c.ablation = ablation_from_string(field<std::string>(j, "ablation", "FULL"));

    const nlohmann::json dataset = j.value("dataset", nlohmann::json::object());
    c.use_synthetic = field<bool>(dataset, "synthetic", true);
    c.dataset_dir = field<std::string>(dataset, "dir", "");
    c.train_path = field<std::string>(dataset, "train", "");
    c.valid_path = field<std::string>(dataset, "valid", "");
    c.test_path = field<std::string>(dataset, "test", "");
    c.text_features_path = field<std::string>(dataset, "text_features", "");
    c.image_features_path = field<std::string>(dataset, "image_features", "");
    c.add_inverses = field<bool>(dataset, "add_inverses", true);
    if (!c.dataset_dir.empty()) {
        namespace fs = std::filesystem;
        const fs::path dir(c.dataset_dir);
        c.use_synthetic = false;
        if (c.train_path.empty()) c.train_path = (dir / "train.txt").string();
        if (c.valid_path.empty()) c.valid_path = (dir / "valid.txt").string();
        if (c.test_path.empty()) c.test_path = (dir / "test.txt").string();
        if (c.text_features_path.empty())
            c.text_features_path = (dir / "text_features.txt").string();
        if (c.image_features_path.empty())
            c.image_features_path = (dir / "image_features.txt").string();
    }

    const nlohmann::json synth = j.value("synth", nlohmann::json::object());
    c.synthetic.entity_count = field<int>(synth, "entity_count", 200);
    c.synthetic.noise_relations = field<int>(synth, "noise_relations", 5);
    c.synthetic.branching = field<int>(synth, "branching", 5);
    c.synthetic.rule_hops = field<std::vector<int>>(synth, "rule_hops", {2});
    c.synthetic.distractor_ratio = field<double>(synth, "distractor_ratio", 0.25);
    c.synthetic.decoys_per_query = field<int>(synth, "decoys_per_query", 0);
    c.synthetic.modality =
        modality_signal_from_string(field<std::string>(synth, "modality", "both"));
    c.synthetic.text_dim = field<int>(synth, "text_dim", 16);
    c.synthetic.image_dim = field<int>(synth, "image_dim", 16);
    c.synthetic.noise_scale = field<double>(synth, "noise_scale", 0.1);
    c.synthetic.signal_scale = field<double>(synth, "signal_scale", 1.0);
    c.synthetic.valid_fraction = field<double>(synth, "valid_fraction", 0.1);
    c.synthetic.test_fraction = field<double>(synth, "test_fraction", 0.2);
    c.synthetic.seed = c.seed;

    const nlohmann::json dims = j.value("dims", nlohmann::json::object());
    c.dims.d_s = field<int>(dims, "d_s", 200);
    c.dims.d_t = field<int>(dims, "d_t", 1000);
    c.dims.d_i = field<int>(dims, "d_i", 128);
    c.dims.d_x = field<int>(dims, "d_x", 400);
    c.dims.d = field<int>(dims, "d", 200);
    c.dims.j = field<int>(dims, "j", 200);
    if (c.use_synthetic) {
        c.dims.d_t = c.synthetic.text_dim;
        c.dims.d_i = c.synthetic.image_dim;
    }

    const nlohmann::json episode = j.value("episode", nlohmann::json::object());
    c.episode.max_steps = field<int>(episode, "T", 4);
    c.episode.max_actions = field<int>(episode, "max_actions", 200);

    const nlohmann::json reward = j.value("reward", nlohmann::json::object());
    c.reward_weights.destination = field<double>(reward, "lambda1", 0.1);
    c.reward_weights.distance = field<double>(reward, "lambda2", 0.8);
    c.reward_weights.diversity = field<double>(reward, "lambda3", 0.1);
    c.memory_bandwidth = field<double>(reward, "bandwidth", 3.0);
    c.memory_capacity = field<int>(reward, "memory_capacity", 100);

    const nlohmann::json transe = j.value("transe", nlohmann::json::object());
    c.transe.dim = c.dims.d_s;
    c.transe.epochs = field<int>(transe, "epochs", 100);
    c.transe.margin = field<double>(transe, "margin", 1.0);
    c.transe.learning_rate = field<double>(transe, "lr", 0.01);

    const nlohmann::json scorer = j.value("scorer", nlohmann::json::object());
    c.scorer.dim = field<int>(scorer, "dim", 64);
    c.scorer.epochs = field<int>(scorer, "epochs", 100);
    c.scorer.negatives_per_positive = field<int>(scorer, "negatives", 4);
    c.scorer.learning_rate = field<double>(scorer, "lr", 0.05);

    const nlohmann::json train = j.value("train", nlohmann::json::object());
    c.train.epochs = field<int>(train, "epochs", 50);
    c.train.batch_size = field<int>(train, "batch_size", 128);
    c.train.learning_rate = field<double>(train, "lr", 1e-3);
    c.train.optimizer = optimizer_kind_from_string(field<std::string>(train, "optimizer", "adam"));
    c.train.baseline_decay = field<double>(train, "baseline_decay", 0.95);
    c.train.entropy_coef = field<double>(train, "entropy_coef", 0.0);
    c.train.rollouts_per_query = field<int>(train, "rollouts_per_query", 1);
    c.train.pooled_z = field<bool>(train, "pooled_z", false);
    c.train.train_inverse_queries = field<bool>(train, "inverse_queries", false);
    c.train_relation_names = field<std::vector<std::string>>(train, "relations", {});
    c.train.seed = c.seed;
    c.train.episode = c.episode;

    const nlohmann::json eval = j.value("eval", nlohmann::json::object());
    c.beam.width = field<int>(eval, "beam_width", 100);
    c.eval_head_queries = field<bool>(eval, "head_queries", false);

    c.pretrained = field<std::string>(j, "pretrained", "");
    c.checkpoint = field<std::string>(j, "checkpoint", "");
    return c;
}

inline void RunConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v <= 0) throw std::invalid_argument(std::string("config: ") + name +
                                                " must be positive, got " + std::to_string(v));
    };
    positive(dims.d_s, "dims.d_s");
    positive(dims.d_t, "dims.d_t");
    positive(dims.d_i, "dims.d_i");
    positive(dims.d_x, "dims.d_x");
    positive(dims.d, "dims.d");
    positive(dims.j, "dims.j");
    if (dims.d_x % 2 != 0)
        throw std::invalid_argument("config: dims.d_x must be even, got " +
                                    std::to_string(dims.d_x));
    positive(episode.max_steps, "episode.T");
    positive(train.epochs, "train.epochs");
    positive(train.batch_size, "train.batch_size");
    positive(train.rollouts_per_query, "train.rollouts_per_query");
    positive(beam.width, "eval.beam_width");
    positive(memory_capacity, "reward.memory_capacity");
    if (memory_bandwidth <= 0.0)
        throw std::invalid_argument("config: reward.bandwidth must be positive");
    try {
        reward_weights.validate();
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument("config: reward.lambda1/2/3 invalid: " +
                                    std::string(e.what()));
    }
    if (!use_synthetic) {
        namespace fs = std::filesystem;
        for (const auto& [path, name] :
             {std::pair{train_path, "dataset.train"}, {valid_path, "dataset.valid"},
              {test_path, "dataset.test"}}) {
            if (path.empty())
                throw std::invalid_argument("config: " + std::string(name) +
                                            " is required for file datasets");
            if (!fs::exists(path))
                throw std::invalid_argument("config: " + std::string(name) + " file '" + path +
                                            "' does not exist");
        }
    }
}

// Loads a config file (optional), then applies --key=value overrides where
// the key is a dotted path into the JSON document. Values parse as JSON when
// possible and fall back to strings.
inline RunConfig load_config(const std::string& config_path,
                             const std::vector<std::string>& overrides) {
    nlohmann::json j = nlohmann::json::object();
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw std::runtime_error("config: cannot open " + config_path);
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("config: " + config_path + " is not valid JSON: " +
                                     e.what());
        }
    }
    for (const std::string& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: override '" + kv + "' is not key=value");
        std::string key = kv.substr(0, eq);
        const std::string value = kv.substr(eq + 1);
        for (auto& ch : key)
            if (ch == '.') ch = '/';
        nlohmann::json parsed;
        try {
            parsed = nlohmann::json::parse(value);
        } catch (const nlohmann::json::exception&) {
            parsed = value;
        }
        j[nlohmann::json::json_pointer("/" + key)] = parsed;
    }
    RunConfig c = RunConfig::from_json(j);
    c.validate();
    return c;
}

} // namespace mmkgr
