// mmkgr: synthetic-MKG generation, pretraining, REINFORCE training, and
// beam-search evaluation over multi-modal knowledge graphs.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unistd.h>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mmkgr/commands.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string manifest_path;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON config file");
    cmd->add_option("--manifest", args.manifest_path,
                    "rerun from a previous run's manifest.json (overrides --config)");
    cmd->add_option("--set", args.overrides,
                    "config override as key=value (dotted keys, e.g. train.epochs=10)");
    cmd->allow_extras();
}

// Bare --section.key=value extras are treated as overrides too.
void collect_extras(CLI::App* cmd, CommonArgs& args) {
    for (std::string tok : cmd->remaining()) {
        if (tok.rfind("--", 0) == 0) tok = tok.substr(2);
        if (tok.find('=') == std::string::npos)
            throw CLI::ParseError("unrecognized argument: " + tok, CLI::ExitCodes::ArgumentMismatch);
        args.overrides.push_back(tok);
    }
}

mmkgr::RunConfig resolve_config(const CommonArgs& args) {
    if (!args.manifest_path.empty()) {
        mmkgr::RunConfig cfg = mmkgr::config_from_manifest(args.manifest_path);
        if (args.overrides.empty()) return cfg;
        // Re-apply overrides on top of the manifest's config by writing it
        // out and reusing the normal load path.
        const std::string tmp = (std::filesystem::temp_directory_path() /
                                 ("mmkgr-manifest-cfg-" + std::to_string(getpid()) + ".json"))
                                    .string();
        {
            std::ofstream out(tmp);
            out << cfg.to_json().dump();
        }
        mmkgr::RunConfig patched = mmkgr::load_config(tmp, args.overrides);
        std::remove(tmp.c_str());
        return patched;
    }
    return mmkgr::load_config(args.config_path, args.overrides);
}

std::vector<mmkgr::Ablation> parse_variants(const std::string& csv) {
    std::vector<mmkgr::Ablation> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(mmkgr::ablation_from_string(item));
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-hop multi-modal knowledge graph reasoning"};
    app.require_subcommand(1);

    CommonArgs synth_args, pretrain_args, train_args, eval_args, ablate_args;
    std::string variants_csv =
        "FULL,OSKGR,STKGR,SIKGR,FAKGR,FGKGR,DEKGR,DSKGR,DVKGR,ZOKGR";

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic multi-modal KG");
    add_common(synth, synth_args);
    CLI::App* pretrain =
        app.add_subcommand("pretrain", "pretrain structural embeddings and the triplet scorer");
    add_common(pretrain, pretrain_args);
    CLI::App* train = app.add_subcommand("train", "train the reasoning agent");
    add_common(train, train_args);
    CLI::App* eval = app.add_subcommand("eval", "evaluate a trained checkpoint");
    add_common(eval, eval_args);
    CLI::App* ablate = app.add_subcommand("ablate", "train and compare ablation variants");
    add_common(ablate, ablate_args);
    ablate->add_option("--variants", variants_csv, "comma-separated variant list");

    CLI11_PARSE(app, argc, argv);

    try {
        mmkgr::CommandResult result;
        if (synth->parsed()) {
            collect_extras(synth, synth_args);
            result = mmkgr::cmd_synth(resolve_config(synth_args));
        } else if (pretrain->parsed()) {
            collect_extras(pretrain, pretrain_args);
            result = mmkgr::cmd_pretrain(resolve_config(pretrain_args));
        } else if (train->parsed()) {
            collect_extras(train, train_args);
            result = mmkgr::cmd_train(resolve_config(train_args));
        } else if (eval->parsed()) {
            collect_extras(eval, eval_args);
            result = mmkgr::cmd_eval(resolve_config(eval_args));
        } else if (ablate->parsed()) {
            collect_extras(ablate, ablate_args);
            result = mmkgr::cmd_ablate(resolve_config(ablate_args), parse_variants(variants_csv));
        }
        std::cout << result.run_dir.string() << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
