#include "gradcheck_entry.hpp"

#include <iostream>

#include "mfn/commands.hpp"

int run_gradcheck_f64(const std::string& config_text, std::ostream& out) {
    try {
        return mfn::cmd_gradcheck(mfn::parse_config(config_text), out);
    } catch (const mfn::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const mfn::ArgumentError& e) {
        std::cerr << "invalid argument: " << e.what() << "\n";
        return 1;
    }
}
