// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "agcl/data.hpp"
#include "agcl/trainer.hpp"
#include "verify.hpp"

using namespace agcl;
using agcl::cli::CheckResult;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, bool pass, const std::string &summary, double secs) {
    std::printf("criterion %d: %s  %s  (%.1fs)\n", id, pass ? "PASS" : "FAIL", summary.c_str(), secs);
    std::fflush(stdout);
    failures += pass ? 0 : 1;
}

std::string describe(const std::vector<CheckResult> &checks) {
    std::string s;
    char buf[160];
    for (const auto &c : checks) {
        std::snprintf(buf, sizeof buf, "%s%s worst=%.3g tol=%.1g", s.empty() ? "" : "; ",
                      c.name.c_str(), c.worst, c.tolerance);
        s += buf;
        if (!c.passed)
            s += " [" + c.detail + "]";
    }
    return s;
}

bool all_passed(const std::vector<CheckResult> &checks) {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult &c) { return c.passed; });
}

template <class F>
void timed_checks(int id, double limit, F &&run) {
    const auto t0 = Clock::now();
    const std::vector<CheckResult> checks = run();
    const double secs = seconds_since(t0);
    std::string summary = describe(checks);
    if (limit > 0) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "; runtime limit %.0fs", limit);
        summary += buf;
    }
    report(id, all_passed(checks) && (limit <= 0 || secs < limit), summary, secs);
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string list(const std::vector<double> &v) {
    std::string s;
    char buf[32];
    for (double x : v) {
        std::snprintf(buf, sizeof buf, "%s%.4f", s.empty() ? "" : " ", x);
        s += buf;
    }
    return s;
}

// Final validation DSC of one 500-step run on the reference synthetic dataset.
double run_arm(const std::vector<Sample> &data, std::uint64_t seed, bool semi,
               NegativeSelection selection, double &secs) {
    TrainConfig c;
    c.seed = seed;
    c.iterations = 500;
    c.eval_interval = 500;
    c.enable_reg = c.enable_pl = c.enable_rw = semi;
    c.selection = selection;
    const auto t0 = Clock::now();
    const TrainResult r = train(c, data);
    secs = seconds_since(t0);
    return r.history.back().val.dsc;
}

void semi_supervised_criteria() {
    const auto t0 = Clock::now();
    const std::vector<Sample> data = generate(DatasetSpec{});
    std::vector<double> full, sup, random_sel;
    double worst_full = 0, worst_sup = 0, worst_random = 0, secs = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        full.push_back(run_arm(data, seed, true, NegativeSelection::affinity, secs));
        worst_full = std::max(worst_full, secs);
        sup.push_back(run_arm(data, seed, false, NegativeSelection::affinity, secs));
        worst_sup = std::max(worst_sup, secs);
        random_sel.push_back(run_arm(data, seed, true, NegativeSelection::random, secs));
        worst_random = std::max(worst_random, secs);
        std::printf("  seed %llu: full %.4f  supervised-only %.4f  random-negatives %.4f\n",
                    static_cast<unsigned long long>(seed), full.back(), sup.back(),
                    random_sel.back());
        std::fflush(stdout);
    }
    const double total = seconds_since(t0);

    const double gain = median(full) - median(sup);
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "median DSC full %.4f vs supervised-only %.4f, gain %+.4f (need >= +0.03); "
                  "full [%s] sup [%s]; slowest seed %.0fs (limit 600s)",
                  median(full), median(sup), gain, list(full).c_str(), list(sup).c_str(),
                  std::max(worst_full, worst_sup));
    report(7, gain >= 0.03 && std::max(worst_full, worst_sup) < 600, buf, total);

    const double diff = median(full) - median(random_sel);
    std::snprintf(buf, sizeof buf,
                  "median DSC affinity+nuclear %.4f vs random negatives %.4f, diff %+.4f "
                  "(need >= 0); random [%s]; supervised-only median %.4f for reference; "
                  "slowest seed %.0fs",
                  median(full), median(random_sel), diff, list(random_sel).c_str(), median(sup),
                  worst_random);
    report(8, diff >= 0.0, buf, total);
}

void determinism_criterion() {
    const auto t0 = Clock::now();
    DatasetSpec spec;
    spec.count = 40;
    const std::vector<Sample> data = generate(spec);
    TrainConfig c;
    c.val_count = 8;
    c.seed = 11;
    c.eval_interval = 10;
    c.iterations = 20;
    const auto full_a = encode_state(train(c, data).state);
    const auto full_b = encode_state(train(c, data).state);
    const bool same = full_a == full_b;

    c.iterations = 10;
    TrainState mid = decode_state(encode_state(train(c, data).state));
    c.iterations = 20;
    const bool resumed = encode_state(train(c, data, {}, &mid).state) == full_a;

    const CheckResult formats = cli::check_formats(11);
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "replay bit-identical: %s; 10+10 resume == 20 steps: %s; format round trips: %s",
                  same ? "yes" : "no", resumed ? "yes" : "no", formats.passed ? "yes" : "no");
    report(9, same && resumed && formats.passed, buf, seconds_since(t0));
}

} // namespace

int main() {
    const std::uint64_t seed = 20240601;
    timed_checks(1, 5, [&] { return std::vector{cli::check_contrastive_gradient(seed)}; });
    timed_checks(2, 60, [&] { return std::vector{cli::check_objective_gradient(seed, 120)}; });
    timed_checks(3, 30, [&] {
        return std::vector{cli::check_spectral(seed, 200), cli::check_prox(seed, 40)};
    });
    timed_checks(4, 0, [&] { return std::vector{cli::check_kernel(seed)}; });
    timed_checks(5, 0, [&] { return std::vector{cli::check_entropy(seed)}; });
    timed_checks(6, 0, [&] { return std::vector{cli::check_metrics(seed)}; });
    semi_supervised_criteria();
    determinism_criterion();
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
