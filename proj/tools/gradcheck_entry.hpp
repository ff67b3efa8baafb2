#pragma once

#include <iosfwd>
#include <string>

// Runs cmd_gradcheck of the double-precision library on a serialized config.
int run_gradcheck_f64(const std::string& config_text, std::ostream& out);
