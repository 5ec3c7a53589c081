#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace agcl::cli {

struct CheckResult {
    std::string name;
    bool passed = false;
    double worst = 0.0;     // worst observed error (or count of mismatches)
    double tolerance = 0.0;
    std::string detail;     // inputs of the first failing case, empty on success
};

/// The built-in oracle suite: FD gradients, spectral oracles, kernel PSD, entropy and
/// ranking, metric brute force, file-format round trips. Deterministic in `seed`.
std::vector<CheckResult> run_verification(std::uint64_t seed);

CheckResult check_contrastive_gradient(std::uint64_t seed);
/// Central differences on `coordinates` student parameters, double precision, 8x8 inputs.
CheckResult check_objective_gradient(std::uint64_t seed, std::size_t coordinates);
CheckResult check_spectral(std::uint64_t seed, int count);
CheckResult check_prox(std::uint64_t seed, int count);
CheckResult check_kernel(std::uint64_t seed);
CheckResult check_entropy(std::uint64_t seed);
CheckResult check_metrics(std::uint64_t seed);
CheckResult check_formats(std::uint64_t seed);

std::string format_report(const std::vector<CheckResult> &results);

} // namespace agcl::cli
