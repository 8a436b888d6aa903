#include <iostream>

#include <CLI11.hpp>

#include "bspde/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Backward stochastic parabolic solver and certification harness"};
    app.require_subcommand(1);

    bspde::RunOptions run;
    std::optional<int> jobs;
    std::optional<std::uint64_t> seed;
    auto* cmd_run = app.add_subcommand("run", "Run the scenarios of a config file");
    cmd_run->add_option("config", run.config, "Config file")->required();
    cmd_run->add_option("--jobs", jobs, "Scenarios run concurrently");
    cmd_run->add_option("--seed", seed, "Seed for every scenario (overrides the config)");
    cmd_run->add_option("--out", run.out, "Output directory (default runs/<config stem>)");
    cmd_run->add_flag("--force", run.force, "Replace a non-empty output directory");

    bool json = false;
    std::optional<std::string> catalog;
    auto* cmd_list = app.add_subcommand("list", "List scenarios");
    cmd_list->add_flag("--json", json, "JSON array output");
    cmd_list->add_option("--catalog", catalog, "List the scenarios of this config file instead of the bundled catalog");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    if (*cmd_run) {
        run.jobs = jobs;
        run.seed = seed;
        return bspde::cmd_run(run, std::cout, std::cerr);
    }
    std::optional<std::filesystem::path> file;
    if (catalog) file = *catalog;
    return bspde::cmd_list(json, file, std::cout, std::cerr);
}
