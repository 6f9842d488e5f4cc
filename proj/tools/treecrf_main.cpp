#include <CLI11.hpp>
#include <iostream>
#include <map>
#include <string>

#include "treecrf/commands.hpp"

namespace {

const char* const kFlagKeys[] = {"model",  "input",   "output",       "gold",   "train",
                                 "dev",    "evalparams", "embeddings", "decode", "stage",
                                 "loss",   "binarize", "preterminals", "seed",   "threads"};

void add_common_options(CLI::App* cmd, std::string& config_path,
                        std::map<std::string, std::string>& overrides) {
    cmd->add_option("--config", config_path, "config file (key = value lines)");
    for (const char* key : kFlagKeys) {
        std::string name = std::string("--") + key;
        cmd->add_option_function<std::string>(
            name, [key, &overrides](const std::string& v) { overrides[key] = v; });
    }
    cmd->add_option_function<std::vector<std::string>>(
        "--set", [&overrides](const std::vector<std::string>& pairs) {
            for (const std::string& p : pairs) {
                std::size_t eq = p.find('=');
                if (eq == std::string::npos)
                    throw CLI::ValidationError("--set", "expected key=value, got '" + p + "'");
                overrides[p.substr(0, eq)] = p.substr(eq + 1);
            }
        },
        "extra config overrides as key=value");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-stage CRF constituency parser"};
    app.require_subcommand(1);

    std::string config_path;
    std::map<std::string, std::string> overrides;

    CLI::App* c_train = app.add_subcommand("train", "train a model on bracketed trees");
    CLI::App* c_parse = app.add_subcommand("parse", "parse sentences with a trained model");
    CLI::App* c_eval = app.add_subcommand("evaluate", "score predicted trees against gold trees");
    CLI::App* c_bench = app.add_subcommand("bench", "measure parsing and decoding throughput");
    CLI::App* c_check = app.add_subcommand("selfcheck", "run the oracle cross-check suite");
    for (CLI::App* cmd : {c_train, c_parse, c_eval, c_bench, c_check})
        add_common_options(cmd, config_path, overrides);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return treecrf::kExitUsage;
    }

    treecrf::RunConfig cfg;
    try {
        cfg = treecrf::resolve_config(config_path, overrides);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return treecrf::kExitUsage;
    }

    if (app.got_subcommand(c_train)) return treecrf::cmd_train(cfg, std::cout, std::cerr);
    if (app.got_subcommand(c_parse)) return treecrf::cmd_parse(cfg, std::cout, std::cerr);
    if (app.got_subcommand(c_eval)) return treecrf::cmd_evaluate(cfg, std::cout, std::cerr);
    if (app.got_subcommand(c_bench)) return treecrf::cmd_bench(cfg, std::cout, std::cerr);
    if (app.got_subcommand(c_check)) return treecrf::cmd_selfcheck(cfg, std::cout, std::cerr);
    return treecrf::kExitUsage;
}
