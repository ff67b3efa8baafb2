#pragma once

#include <map>
#include <string>
#include <vector>

namespace mfn {

enum class KeyKind { integer, real, text, flag, list };

struct KeyInfo {
    const char* key;
    KeyKind kind;
    const char* default_value;
    const char* help;
};

/// Every accepted key, in serialization order.
const std::vector<KeyInfo>& config_keys();

/// Flat key=value settings shared by all commands. Holds every documented key;
/// values are validated against the key's kind when set.
class RunConfig {
public:
    RunConfig(); // all defaults

    void set(const std::string& key, const std::string& value);
    const std::string& get(const std::string& key) const;

    long long integer(const std::string& key) const;
    double real(const std::string& key) const;
    bool flag(const std::string& key) const;
    std::vector<std::string> list(const std::string& key) const;
    const std::string& text(const std::string& key) const { return get(key); }

    bool operator==(const RunConfig&) const = default;

private:
    std::map<std::string, std::string> values_;
};

/// `key = value` lines; `#` starts a comment; blank lines ignored. Unknown keys
/// and malformed values raise ConfigError naming the line.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::string& path);
/// Applies `--key value` (or `--key=value`) pairs in order.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& args);
/// All keys in documented order, one `key = value` per line.
std::string serialize_config(const RunConfig& cfg);

} // namespace mfn
