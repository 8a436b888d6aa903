#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bspde/verify.hpp"

namespace bspde {

/// Parsed run configuration.
///
/// Schema (one file, `#` or `;` comments):
///
///     [run]
///     seed = 7            optional global seed
///     jobs = 2            optional concurrency limit
///
///     [scenario:<id>]     one section per scenario, run in file order
///     base = <catalog id> defaults to <id> when <id> is in the catalog
///     kind = <kind>       required when there is no base
///     <field> = <value>   overrides; lists are comma separated
///     tol.<check> = <x>   per-check tolerance override
struct RunConfig {
    std::string source;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
    std::vector<ScenarioSpec> scenarios;
};

/// Throws invalid_input with a "source:line: " prefix on any schema violation.
RunConfig parse_config(std::istream& in, const std::string& source, const std::vector<ScenarioSpec>& catalog);
RunConfig load_config(const std::filesystem::path& file, const std::vector<ScenarioSpec>& catalog);

nlohmann::json to_json(const ScenarioSpec& spec);

struct RunOptions {
    std::filesystem::path config;
    std::optional<int> jobs;
    std::optional<std::uint64_t> seed;
    /// Empty: runs/<config stem>.
    std::filesystem::path out;
    bool force = false;
};

/// Exit status: 0 all pass, 1 any fail, 2 configuration or output-directory error.
int cmd_run(const RunOptions& options, std::ostream& out, std::ostream& err);

/// Bundled catalog, or the scenarios of a config file when `catalog_file` is set.
int cmd_list(bool json, const std::optional<std::filesystem::path>& catalog_file, std::ostream& out, std::ostream& err);

}  // namespace bspde
