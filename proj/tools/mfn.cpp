// mfn <synth|train|predict|evaluate|gradcheck> --config <path> [--key value ...]
//
// Exit codes: 0 success, 1 validation/config error, 2 runtime/numeric error.

#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "mfn/commands.hpp"
#include "mfn/error.hpp"
#include "gradcheck_entry.hpp"

namespace {

std::string key_help() {
    std::string s = "Config keys (defaults in brackets):\n";
    for (const auto& k : mfn::config_keys())
        s += "  " + std::string(k.key) + " [" + k.default_value + "]  " + k.help + "\n";
    return s;
}

} // namespace

int main(int argc, char** argv) {
    using Command = int (*)(const mfn::RunConfig&, std::ostream&);
    const std::map<std::string, Command> commands = {{"synth", mfn::cmd_synth},
                                                     {"train", mfn::cmd_train},
                                                     {"predict", mfn::cmd_predict},
                                                     {"evaluate", mfn::cmd_evaluate},
                                                     {"gradcheck", nullptr}};

    CLI::App app{"Dense semantic labeling of multimodal aerial tiles"};
    app.footer(key_help());
    app.allow_extras();
    std::string command, config_path;
    app.add_option("command", command, "synth | train | predict | evaluate | gradcheck")
        ->required()
        ->check(CLI::IsMember({"synth", "train", "predict", "evaluate", "gradcheck"}));
    app.add_option("--config", config_path, "key = value config file");
    bool dump = false;
    app.add_flag("--print-config", dump, "print the effective config and exit");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        mfn::RunConfig cfg = config_path.empty() ? mfn::RunConfig{} : mfn::load_config(config_path);
        mfn::apply_overrides(cfg, app.remaining());
        if (dump) {
            std::cout << mfn::serialize_config(cfg);
            return 0;
        }
        // Finite differences need double precision; see gradcheck_entry.cpp.
        if (command == "gradcheck") return run_gradcheck_f64(mfn::serialize_config(cfg), std::cout);
        return commands.at(command)(cfg, std::cout);
    } catch (const mfn::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const mfn::ArgumentError& e) {
        std::cerr << "invalid argument: " << e.what() << "\n";
        return 1;
    } catch (const mfn::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
