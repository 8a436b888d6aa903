#include <chrono>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "bspde/verify.hpp"

using namespace bspde;

namespace {

using Clock = std::chrono::steady_clock;

struct Timed {
    ScenarioOutput output;
    double seconds = 0.0;
};

double since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

ScenarioSpec catalog_spec(const std::string& id) {
    const auto s = find_scenario(default_catalog(), id);
    if (!s) throw Error(ErrorCode::invalid_input, "missing catalog scenario " + id);
    return *s;
}

/// Each full catalog scenario runs at most once.
class Runs {
public:
    const Timed& get(const std::string& id) {
        auto it = cache_.find(id);
        if (it == cache_.end()) it = cache_.emplace(id, run(catalog_spec(id))).first;
        return it->second;
    }

    static Timed run(const ScenarioSpec& spec) {
        const auto start = Clock::now();
        Timed t;
        t.output = run_scenario(spec);
        t.seconds = since(start);
        return t;
    }

private:
    std::map<std::string, Timed> cache_;
};

bool matches(const std::string& id, const std::string& prefix) {
    return id == prefix || (id.size() > prefix.size() && id.compare(0, prefix.size(), prefix) == 0 && id[prefix.size()] == '.');
}

/// Verdicts whose id matches one of the prefixes, or every verdict when none are given.
struct Selection {
    int checked = 0;
    std::vector<std::string> failed;

    void take(const VerdictBundle& b, const std::vector<std::string>& prefixes, const std::string& label = {}) {
        for (const Verdict& v : b.verdicts) {
            bool hit = prefixes.empty();
            for (const std::string& p : prefixes) hit = hit || matches(v.check_id, p);
            if (!hit || v.status == VerdictStatus::advisory) continue;
            ++checked;
            if (v.status == VerdictStatus::fail) failed.push_back((label.empty() ? "" : label + ".") + v.check_id);
        }
    }
};

struct Outcome {
    bool pass = false;
    std::string detail;
};

Outcome judge(const Selection& s, double seconds, double budget) {
    std::ostringstream d;
    d << s.checked << " checks, " << s.failed.size() << " failed, " << std::fixed << std::setprecision(1) << seconds << " s";
    if (budget > 0.0) d << " (budget " << budget << " s)";
    for (std::size_t i = 0; i < s.failed.size() && i < 4; ++i) d << (i == 0 ? ": " : ", ") << s.failed[i];
    if (s.failed.size() > 4) d << ", ...";
    const bool in_time = budget <= 0.0 || seconds <= budget;
    if (!in_time) d << "; over budget";
    return {s.checked > 0 && s.failed.empty() && in_time, d.str()};
}

const std::vector<std::string> kLinear{"heat_quadratic", "sin_decay", "transport_decay", "constant_source", "stochastic_sinWT",
                                       "variable_a_sin"};

struct Criterion {
    int number;
    std::string name;
    std::function<Outcome(Runs&)> run;
};

std::vector<Criterion> criteria() {
    return {
        {1, "kernel normalization",
         [](Runs&) {
             KernelSuiteParams p;
             p.estimates = false;
             const auto start = Clock::now();
             const VerdictBundle b = run_kernel_suite(p);
             Selection s;
             for (const Verdict& v : b.verdicts) {
                 if (v.check_id.ends_with(".normalization") || v.check_id.ends_with(".derivative_mass")) s.take(VerdictBundle{{v}}, {});
             }
             return judge(s, since(start), 10.0);
         }},
        {2, "fundamental-solution identities",
         [](Runs&) {
             KernelSuiteParams p;
             p.estimates = false;
             const auto start = Clock::now();
             const VerdictBundle b = run_kernel_suite(p);
             Selection s;
             for (const Verdict& v : b.verdicts) {
                 if (v.check_id.ends_with(".fundamental_identities") || v.check_id.ends_with(".chapman_kolmogorov"))
                     s.take(VerdictBundle{{v}}, {});
             }
             return judge(s, since(start), 5.0);
         }},
        {3, "kernel estimate suite",
         [](Runs& r) {
             const Timed& t = r.get("kernel_suite");
             Selection s;
             s.take(t.output.verdicts, {});
             return judge(s, t.seconds, 120.0);
         }},
        {4, "deterministic closed forms",
         [](Runs&) {
             Selection s;
             double seconds = 0.0;
             for (const char* id : {"heat_quadratic", "sin_decay", "transport_decay", "constant_source"}) {
                 ScenarioSpec spec = catalog_spec(id);
                 spec.checks = {"closed_form"};
                 const Timed t = Runs::run(spec);
                 seconds += t.seconds;
                 s.take(t.output.verdicts, {"closed_form", "solve", "spec"}, id);
             }
             return judge(s, seconds, 60.0);
         }},
        {5, "stochastic closed form",
         [](Runs&) {
             ScenarioSpec spec = catalog_spec("stochastic_sinWT");
             spec.checks = {"closed_form"};
             const Timed t = Runs::run(spec);
             Selection s;
             s.take(t.output.verdicts, {"closed_form", "solve", "spec"});
             return judge(s, t.seconds, 180.0);
         }},
        {6, "residual certification",
         [](Runs& r) {
             Selection s;
             double seconds = 0.0;
             for (const std::string& id : kLinear) {
                 const Timed& t = r.get(id);
                 seconds += t.seconds;
                 s.take(t.output.verdicts, {"residual", "solve", "spec"}, id);
             }
             const Timed& sl = r.get("semilinear_mode");
             s.take(sl.output.verdicts, {"residual", "solve", "spec"}, "semilinear_mode");
             const Timed& self = r.get("residual_self_test");
             s.take(self.output.verdicts, {}, "residual_self_test");
             return judge(s, seconds + sl.seconds + self.seconds, 0.0);
         }},
        {7, "a priori estimate",
         [](Runs& r) {
             const Timed& t = r.get("apriori_study");
             Selection s;
             s.take(t.output.verdicts, {});
             return judge(s, t.seconds, 0.0);
         }},
        {8, "interpolation and product inequalities",
         [](Runs& r) {
             Selection s;
             double seconds = 0.0;
             for (const std::string& id : {"heat_quadratic", "sin_decay", "transport_decay", "constant_source", "stochastic_sinWT",
                                           "variable_a_sin", "semilinear_mode"}) {
                 const Timed& t = r.get(id);
                 seconds += t.seconds;
                 s.take(t.output.verdicts, {"interpolation"}, id);
             }
             return judge(s, seconds, 0.0);
         }},
        {9, "time continuity",
         [](Runs& r) {
             const Timed& t = r.get("time_shift_sweep");
             Selection s;
             s.take(t.output.verdicts, {});
             return judge(s, t.seconds, 0.0);
         }},
        {10, "variable coefficients",
         [](Runs& r) {
             const Timed& t = r.get("variable_a_sin");
             Selection s;
             s.take(t.output.verdicts, {"fd_oracle", "localization", "solve", "spec"});
             return judge(s, t.seconds, 0.0);
         }},
        {11, "semilinear contraction",
         [](Runs& r) {
             const Timed& mode = r.get("semilinear_mode");
             const Timed& sweep = r.get("beta_sweep");
             Selection s;
             s.take(mode.output.verdicts, {"closed_form", "contraction", "solve", "spec"}, "semilinear_mode");
             s.take(sweep.output.verdicts, {}, "beta_sweep");
             return judge(s, mode.seconds + sweep.seconds, 0.0);
         }},
        {12, "regression cross-validation",
         [](Runs& r) {
             const Timed& t = r.get("bsde_regression");
             Selection s;
             s.take(t.output.verdicts, {});
             return judge(s, t.seconds, 0.0);
         }},
    };
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria 1-12"};
    std::vector<int> only;
    app.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 12));
    CLI11_PARSE(app, argc, argv);
    const std::set<int> selected(only.begin(), only.end());

    Runs runs;
    int failures = 0;
    for (const Criterion& c : criteria()) {
        if (!selected.empty() && selected.count(c.number) == 0) continue;
        Outcome o;
        try {
            o = c.run(runs);
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        if (!o.pass) ++failures;
        std::cout << "criterion " << std::setw(2) << c.number << "  " << std::left << std::setw(40) << c.name << std::right
                  << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
