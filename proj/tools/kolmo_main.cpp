#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "kolmo/errors.hpp"
#include "kolmo/experiments.hpp"

namespace {

int do_list() {
    std::printf("%-20s %-52s %s\n", "experiment", "summary", "artifacts");
    for (const auto& d : kolmo::list_experiments())
        std::printf("%-20s %-52s %s\n", d.name.c_str(), d.summary.c_str(),
                    d.artifacts.c_str());
    return 0;
}

int do_run(const std::string& config_path, const std::vector<std::string>& overrides,
           const std::string& out_dir, bool have_seed, std::uint64_t seed) {
    std::ifstream is(config_path);
    if (!is) {
        std::fprintf(stderr, "error: cannot open config '%s'\n", config_path.c_str());
        return 2;
    }
    nlohmann::json config;
    try {
        config = nlohmann::json::parse(is);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: config parse failed: %s\n", e.what());
        return 2;
    }
    try {
        for (const auto& ov : overrides) kolmo::apply_override(config, ov);
        std::optional<std::uint64_t> seed_opt;
        if (have_seed) seed_opt = seed;
        const nlohmann::json manifest = kolmo::run_experiment(config, out_dir, seed_opt);
        std::printf("experiment %s: wrote %zu artifacts to %s\n",
                    manifest.at("experiment").get<std::string>().c_str(),
                    manifest.at("outputs").size(),
                    manifest.at("config").at("out_dir").get<std::string>().c_str());
        return 0;
    } catch (const kolmo::config_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Degenerate diffusion density experiments"};
    app.require_subcommand(1);

    auto* list_cmd = app.add_subcommand("list", "List available experiments");

    std::string config_path;
    std::string out_dir;
    std::vector<std::string> overrides;
    std::uint64_t seed = 0;
    auto* run_cmd = app.add_subcommand("run", "Run an experiment from a config file");
    run_cmd->add_option("--config", config_path, "JSON experiment config")->required();
    run_cmd->add_option("--set", overrides, "Override config values, key.path=value");
    auto* seed_opt = run_cmd->add_option("--seed", seed, "Override the RNG seed");
    run_cmd->add_option("--out", out_dir, "Output directory (default: config, then $KOLMO_OUT_DIR)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    if (list_cmd->parsed()) return do_list();
    return do_run(config_path, overrides, out_dir, seed_opt->count() > 0, seed);
}
