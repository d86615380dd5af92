#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace kolmo {

struct ExperimentDescriptor {
    std::string name;
    std::string summary;
    std::string config_keys; // sections consulted beyond the common ones
    std::string artifacts;
};

std::vector<ExperimentDescriptor> list_experiments();

// Runs one experiment from a parsed, schema-checked config. Artifacts are
// staged in memory and flushed atomically (tmp + rename), manifest last, so a
// failed run leaves no partial output. Returns the manifest.
nlohmann::json run_experiment(nlohmann::json config,
                              const std::string& out_dir_override = "",
                              std::optional<std::uint64_t> seed_override = {});

// Applies one "key.path=value" override onto the config (CLI --set).
void apply_override(nlohmann::json& config, const std::string& assignment);

} // namespace kolmo
