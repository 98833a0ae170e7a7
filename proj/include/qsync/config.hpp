#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "qsync/closure.hpp"
#include "qsync/correlation.hpp"
#include "qsync/kalman.hpp"
#include "qsync/simulator.hpp"

namespace qsync {

// Everything the pipeline needs, as parsed from one config file.
struct NetworkConfig {
    StarSetup star;
    HistogramParams histogram;
    FilterParams filter;
    ClosureParams closure;
    bool rolling = true;

    void validate() const;
    int n_users() const { return static_cast<int>(star.users.size()); }
    int user_index(const std::string& label) const;  // -1 if unknown
};

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Flat sectioned key=value text. Sections: [source], [splitter], [histogram],
// [filter], [closure] and one [user <LABEL>] per user. Unknown sections or
// keys and out-of-range values raise ConfigError naming file, line and key.
NetworkConfig parse_config(const std::string& text, const std::string& source_name,
                           const std::vector<std::string>& overrides = {});
NetworkConfig read_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides = {});

// Canonical dump of the resolved configuration (also the set of valid keys).
std::string config_echo(const NetworkConfig& cfg);

}  // namespace qsync
