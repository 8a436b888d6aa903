#include "bspde/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <thread>

namespace bspde {

namespace {

namespace fs = std::filesystem;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& v) {
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size()) throw std::invalid_argument("expected a number, got '" + v + "'");
    return x;
}

long long parse_integer(const std::string& v) {
    char* end = nullptr;
    const long long x = std::strtoll(v.c_str(), &end, 10);
    if (v.empty() || end != v.c_str() + v.size()) throw std::invalid_argument("expected an integer, got '" + v + "'");
    return x;
}

int parse_int(const std::string& v) {
    const long long x = parse_integer(v);
    if (x < INT32_MIN || x > INT32_MAX) throw std::invalid_argument("integer out of range: '" + v + "'");
    return static_cast<int>(x);
}

std::uint64_t parse_seed(const std::string& v) {
    const long long x = parse_integer(v);
    if (x < 0) throw std::invalid_argument("seed must be non-negative");
    return static_cast<std::uint64_t>(x);
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream s(v);
    std::string item;
    while (std::getline(s, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <class T, class F>
std::vector<T> parse_list(const std::string& v, F parse) {
    std::vector<T> out;
    for (const std::string& item : split_list(v)) out.push_back(parse(item));
    if (out.empty()) throw std::invalid_argument("list is empty");
    return out;
}

using Setter = std::function<void(ScenarioSpec&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> m;
        m["description"] = [](ScenarioSpec& s, const std::string& v) { s.description = v; };
        m["oracle"] = [](ScenarioSpec& s, const std::string& v) {
            const auto p = parse_provenance(v);
            if (!p) throw std::invalid_argument("oracle must be theorem, identity or computed");
            s.oracle = *p;
        };
        m["T"] = [](ScenarioSpec& s, const std::string& v) { s.horizon = parse_double(v); };
        m["horizon"] = m["T"];
        m["steps"] = [](ScenarioSpec& s, const std::string& v) { s.steps = parse_int(v); };
        m["points"] = [](ScenarioSpec& s, const std::string& v) { s.points = parse_int(v); };
        m["interior"] = [](ScenarioSpec& s, const std::string& v) { s.interior = parse_double(v); };
        m["amplitude"] = [](ScenarioSpec& s, const std::string& v) { s.amplitude = parse_double(v); };
        m["diffusion"] = [](ScenarioSpec& s, const std::string& v) { s.diffusion = parse_double(v); };
        m["lambda"] = [](ScenarioSpec& s, const std::string& v) { s.lambda = parse_double(v); };
        m["Lambda"] = [](ScenarioSpec& s, const std::string& v) { s.Lambda = parse_double(v); };
        m["paths"] = [](ScenarioSpec& s, const std::string& v) { s.paths = parse_int(v); };
        m["seed"] = [](ScenarioSpec& s, const std::string& v) { s.seed = parse_seed(v); };
        m["checks"] = [](ScenarioSpec& s, const std::string& v) { s.checks = split_list(v); };
        m["targets"] = [](ScenarioSpec& s, const std::string& v) { s.targets = split_list(v); };
        m["steps_sweep"] = [](ScenarioSpec& s, const std::string& v) { s.steps_sweep = parse_list<int>(v, parse_int); };
        m["points_sweep"] = [](ScenarioSpec& s, const std::string& v) { s.points_sweep = parse_list<int>(v, parse_int); };
        m["h_sweep"] = [](ScenarioSpec& s, const std::string& v) { s.h_sweep = parse_list<int>(v, parse_int); };
        m["dt_sweep"] = [](ScenarioSpec& s, const std::string& v) { s.dt_sweep = parse_list<int>(v, parse_int); };
        m["paths_sweep"] = [](ScenarioSpec& s, const std::string& v) { s.paths_sweep = parse_list<int>(v, parse_int); };
        m["kernel_dims"] = [](ScenarioSpec& s, const std::string& v) { s.kernel_dims = parse_list<int>(v, parse_int); };
        m["kappas"] = [](ScenarioSpec& s, const std::string& v) { s.kappas = parse_list<double>(v, parse_double); };
        m["betas"] = [](ScenarioSpec& s, const std::string& v) { s.betas = parse_list<double>(v, parse_double); };
        m["taus"] = [](ScenarioSpec& s, const std::string& v) { s.taus = parse_list<double>(v, parse_double); };
        m["alphas"] = [](ScenarioSpec& s, const std::string& v) { s.alphas = parse_list<double>(v, parse_double); };
        m["epsilons"] = [](ScenarioSpec& s, const std::string& v) { s.epsilons = parse_list<double>(v, parse_double); };
        m["alpha"] = [](ScenarioSpec& s, const std::string& v) { s.alpha = parse_double(v); };
        m["theta"] = [](ScenarioSpec& s, const std::string& v) { s.theta = parse_double(v); };
        return m;
    }();
    return table;
}

struct Entry {
    std::string key;
    std::string value;
    int line = 0;
};

struct Section {
    std::string id;
    int line = 0;
    std::vector<Entry> entries;
};

[[noreturn]] void schema_error(const std::string& source, int line, const std::string& what) {
    throw Error(ErrorCode::invalid_input, source + ":" + std::to_string(line) + ": " + what);
}

const Entry* find_entry(const Section& s, const std::string& key) {
    for (const Entry& e : s.entries) {
        if (e.key == key) return &e;
    }
    return nullptr;
}

/// Whole-word occurrence of `word` in `text`.
bool mentions(const std::string& text, const std::string& word) {
    auto part = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
    for (auto pos = text.find(word); pos != std::string::npos; pos = text.find(word, pos + 1)) {
        const bool left = pos == 0 || !part(text[pos - 1]);
        const bool right = pos + word.size() == text.size() || !part(text[pos + word.size()]);
        if (left && right) return true;
    }
    return false;
}

ScenarioSpec build_spec(const Section& sec, const std::string& source, const std::vector<ScenarioSpec>& catalog,
                        std::optional<std::uint64_t> run_seed) {
    ScenarioSpec spec;
    if (const Entry* base = find_entry(sec, "base")) {
        const auto found = find_scenario(catalog, base->value);
        if (!found) schema_error(source, base->line, "unknown base scenario '" + base->value + "'");
        spec = *found;
    } else if (const auto found = find_scenario(catalog, sec.id)) {
        spec = *found;
    } else if (!find_entry(sec, "kind")) {
        schema_error(source, sec.line, "scenario '" + sec.id + "' is not in the catalog; give base or kind");
    }
    if (const Entry* kind = find_entry(sec, "kind")) {
        const auto k = parse_scenario_kind(kind->value);
        if (!k) schema_error(source, kind->line, "unknown kind '" + kind->value + "'");
        spec.kind = *k;
    }
    spec.id = sec.id;
    if (run_seed && !find_entry(sec, "seed")) spec.seed = *run_seed;
    for (const Entry& e : sec.entries) {
        if (e.key == "base" || e.key == "kind") continue;
        try {
            if (e.key.rfind("tol.", 0) == 0) {
                const std::string check = e.key.substr(4);
                if (std::find(known_checks().begin(), known_checks().end(), check) == known_checks().end())
                    schema_error(source, e.line, "tolerance for unknown check '" + check + "'");
                spec.tolerances[check] = parse_double(e.value);
                continue;
            }
            const auto it = setters().find(e.key);
            if (it == setters().end()) schema_error(source, e.line, "unknown key '" + e.key + "'");
            it->second(spec, e.value);
        } catch (const std::invalid_argument& x) {
            schema_error(source, e.line, e.key + ": " + x.what());
        }
    }
    try {
        spec.validate();
    } catch (const Error& x) {
        // Anchor to the key that set the offending field when one is named in the message.
        int line = sec.line;
        const std::string msg = x.what();
        for (const Entry& e : sec.entries) {
            if (mentions(msg, e.key)) line = e.line;
        }
        schema_error(source, line, x.message());
    }
    return spec;
}

bool valid_id(const std::string& id) {
    if (id.empty() || id == "." || id == "..") return false;
    return std::all_of(id.begin(), id.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.'; });
}

std::string utc_now() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

void write_text(const fs::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::binary);
    out << text;
    if (!out) throw Error(ErrorCode::io_error, "cannot write " + file.string());
}

/// Artifacts of one scenario in its own directory; returns paths relative to the run root.
std::vector<std::string> write_scenario(const fs::path& root, const std::string& id, const ScenarioOutput& result) {
    const fs::path dir = root / id;
    fs::create_directories(dir);
    std::vector<std::string> written;
    write_text(dir / "verdicts.json", result.verdicts.to_json().dump(2) + "\n");
    written.push_back(id + "/verdicts.json");
    for (const auto& [name, table] : result.tables) {
        std::ostringstream csv;
        table.write_csv(csv);
        write_text(dir / (name + ".csv"), csv.str());
        written.push_back(id + "/" + name + ".csv");
    }
    for (const auto& [name, text] : result.files) {
        write_text(dir / name, text);
        written.push_back(id + "/" + name);
    }
    return written;
}

}  // namespace

RunConfig parse_config(std::istream& in, const std::string& source, const std::vector<ScenarioSpec>& catalog) {
    RunConfig cfg;
    cfg.source = source;
    std::vector<Section> sections;
    bool in_run = false;
    bool run_seen = false;
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') schema_error(source, number, "unterminated section header");
            const std::string name = trim(t.substr(1, t.size() - 2));
            if (name == "run") {
                if (run_seen) schema_error(source, number, "duplicate [run] section");
                run_seen = true;
                in_run = true;
                continue;
            }
            if (name.rfind("scenario:", 0) != 0) schema_error(source, number, "unknown section '" + name + "'; expected [run] or [scenario:<id>]");
            const std::string id = trim(name.substr(9));
            if (!valid_id(id)) schema_error(source, number, "scenario id '" + id + "' must use letters, digits, '_', '-' or '.'");
            for (const Section& s : sections) {
                if (s.id == id) schema_error(source, number, "duplicate scenario '" + id + "' (first at line " + std::to_string(s.line) + ")");
            }
            sections.push_back({id, number, {}});
            in_run = false;
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) schema_error(source, number, "expected key = value");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty()) schema_error(source, number, "empty key");
        if (in_run) {
            try {
                if (key == "seed") {
                    cfg.seed = parse_seed(value);
                } else if (key == "jobs") {
                    cfg.jobs = parse_int(value);
                    if (*cfg.jobs < 1) throw std::invalid_argument("jobs must be at least 1");
                } else {
                    schema_error(source, number, "unknown key '" + key + "' in [run]");
                }
            } catch (const std::invalid_argument& x) {
                schema_error(source, number, key + ": " + x.what());
            }
            continue;
        }
        if (sections.empty()) schema_error(source, number, "key outside a section");
        Section& sec = sections.back();
        if (find_entry(sec, key)) schema_error(source, number, "duplicate key '" + key + "'");
        sec.entries.push_back({key, value, number});
    }
    for (const Section& s : sections) cfg.scenarios.push_back(build_spec(s, source, catalog, cfg.seed));
    return cfg;
}

RunConfig load_config(const fs::path& file, const std::vector<ScenarioSpec>& catalog) {
    std::ifstream in(file);
    if (!in) throw Error(ErrorCode::io_error, "cannot read config " + file.string());
    return parse_config(in, file.string(), catalog);
}

nlohmann::json to_json(const ScenarioSpec& s) {
    nlohmann::json j = {{"id", s.id},
                        {"description", s.description},
                        {"kind", to_string(s.kind)},
                        {"oracle", to_string(s.oracle)},
                        {"T", s.horizon},
                        {"steps", s.steps},
                        {"points", s.points},
                        {"interior", s.interior},
                        {"amplitude", s.amplitude},
                        {"paths", s.paths},
                        {"seed", s.seed},
                        {"checks", s.checks},
                        {"tolerances", s.tolerances},
                        {"targets", s.targets},
                        {"steps_sweep", s.steps_sweep},
                        {"points_sweep", s.points_sweep},
                        {"kappas", s.kappas},
                        {"betas", s.betas},
                        {"taus", s.taus},
                        {"alphas", s.alphas},
                        {"epsilons", s.epsilons},
                        {"h_sweep", s.h_sweep},
                        {"dt_sweep", s.dt_sweep},
                        {"paths_sweep", s.paths_sweep},
                        {"kernel_dims", s.kernel_dims},
                        {"alpha", s.alpha},
                        {"theta", s.theta}};
    if (s.diffusion) j["diffusion"] = *s.diffusion;
    if (s.lambda) j["lambda"] = *s.lambda;
    if (s.Lambda) j["Lambda"] = *s.Lambda;
    return j;
}

int cmd_run(const RunOptions& options, std::ostream& out, std::ostream& err) {
    const std::vector<ScenarioSpec> catalog = default_catalog();
    RunConfig cfg;
    try {
        cfg = load_config(options.config, catalog);
    } catch (const Error& e) {
        err << "error: " << e.message() << "\n";
        return 2;
    }
    if (options.seed) {
        cfg.seed = options.seed;
        for (ScenarioSpec& s : cfg.scenarios) s.seed = *options.seed;
    }
    const int jobs = options.jobs.value_or(cfg.jobs.value_or(1));
    if (jobs < 1) {
        err << "error: --jobs must be at least 1\n";
        return 2;
    }
    const fs::path root = options.out.empty() ? fs::path("runs") / options.config.stem() : options.out;
    std::error_code ec;
    if (fs::exists(root, ec) && !fs::is_empty(root, ec)) {
        if (!options.force) {
            err << "error: output directory " << root.string() << " is not empty; pass --force to replace it\n";
            return 2;
        }
        fs::remove_all(root, ec);
    }
    fs::create_directories(root, ec);
    if (ec) {
        err << "error: cannot create " << root.string() << ": " << ec.message() << "\n";
        return 2;
    }

    nlohmann::json manifest = {{"config", options.config.string()},
                               {"output_directory", root.string()},
                               {"seed", cfg.seed ? nlohmann::json(*cfg.seed) : nlohmann::json(nullptr)},
                               {"jobs", jobs},
                               {"started_at", utc_now()},
                               {"status", "running"},
                               {"scenarios", nlohmann::json::array()},
                               {"artifacts", nlohmann::json::array()}};
    for (const ScenarioSpec& s : cfg.scenarios) manifest["scenarios"].push_back(to_json(s));
    try {
        write_text(root / "manifest.json", manifest.dump(2) + "\n");
    } catch (const Error& e) {
        err << "error: " << e.message() << "\n";
        return 2;
    }

    const std::size_t n = cfg.scenarios.size();
    std::vector<ScenarioOutput> results(n);
    std::vector<std::vector<std::string>> artifacts(n);
    std::vector<std::string> write_errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            const ScenarioSpec& spec = cfg.scenarios[i];
            try {
                results[i] = run_scenario(spec, catalog);
            } catch (const std::exception& e) {
                results[i].verdicts.add(Verdict::judge("run.error", NAN, {"scenario completes", Provenance::identity, 0.0},
                                                       {{"error", e.what()}}));
            }
            try {
                artifacts[i] = write_scenario(root, spec.id, results[i]);
            } catch (const std::exception& e) {
                write_errors[i] = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(jobs), std::max<std::size_t>(n, 1));
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (std::thread& t : pool) t.join();

    VerdictBundle all;
    nlohmann::json summary = nlohmann::json::array();
    for (std::size_t i = 0; i < n; ++i) {
        const ScenarioSpec& spec = cfg.scenarios[i];
        out << "== " << spec.id << " ==\n";
        results[i].verdicts.print_table(out);
        all.add(results[i].verdicts, spec.id);
        summary.push_back({{"id", spec.id}, {"failed", results[i].verdicts.any_fail()}});
        for (const std::string& a : artifacts[i]) manifest["artifacts"].push_back(a);
        if (!write_errors[i].empty()) err << "error: " << spec.id << ": " << write_errors[i] << "\n";
    }
    bool io_failed = std::any_of(write_errors.begin(), write_errors.end(), [](const std::string& s) { return !s.empty(); });
    try {
        write_text(root / "verdicts.json", all.to_json().dump(2) + "\n");
        manifest["artifacts"].push_back("verdicts.json");
    } catch (const Error& e) {
        err << "error: " << e.message() << "\n";
        io_failed = true;
    }
    const bool failed = all.any_fail() || io_failed;
    out << n << " scenarios: " << all.count(VerdictStatus::pass) << " pass, " << all.count(VerdictStatus::fail) << " fail, "
        << all.count(VerdictStatus::advisory) << " advisory\n";
    manifest["status"] = failed ? "failed" : "passed";
    manifest["finished_at"] = utc_now();
    manifest["results"] = summary;
    try {
        write_text(root / "manifest.json", manifest.dump(2) + "\n");
    } catch (const Error& e) {
        err << "error: " << e.message() << "\n";
    }
    return failed ? 1 : 0;
}

int cmd_list(bool json, const std::optional<fs::path>& catalog_file, std::ostream& out, std::ostream& err) {
    std::vector<ScenarioSpec> specs = default_catalog();
    if (catalog_file) {
        try {
            specs = load_config(*catalog_file, specs).scenarios;
        } catch (const Error& e) {
            err << "error: " << e.message() << "\n";
            return 2;
        }
    }
    if (json) {
        nlohmann::json arr = nlohmann::json::array();
        for (const ScenarioSpec& s : specs) {
            arr.push_back({{"id", s.id}, {"kind", to_string(s.kind)}, {"oracle", to_string(s.oracle)}, {"description", s.description}});
        }
        out << arr.dump(2) << "\n";
        return 0;
    }
    std::size_t width = 0;
    for (const ScenarioSpec& s : specs) width = std::max(width, s.id.size());
    for (const ScenarioSpec& s : specs) {
        out << std::left << std::setw(static_cast<int>(width)) << s.id << "  " << std::setw(8) << to_string(s.oracle) << "  "
            << s.description << "\n";
    }
    return 0;
}

}  // namespace bspde
