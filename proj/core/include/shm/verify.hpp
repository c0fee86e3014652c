#pragma once

// Verification suites behind `shm verify` and the acceptance runner. One
// suite per acceptance criterion, each self-timed and pinned to its stated
// tolerance. Suites return a result instead of asserting so the CLI and the
// acceptance binary can both print one pass/fail line per criterion.

#include <string>
#include <vector>

#include "shm/matrix.hpp"

namespace shm {

struct SuiteResult {
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0;
};

struct VerifyOptions {
    bool inject_fault = false;  // scan suite: perturb one output, must turn the suite red
    int threads = 1;
    bool quick = false;  // reduced budgets for unit-test scale runs (not the acceptance gate)
    std::string out_dir;  // when set, suites drop their CSV artifacts here
    std::uint64_t seed = 20240917;
};

// Suite names in acceptance-criterion order (1-based index == criterion number).
const std::vector<std::string>& verify_suite_names();

// Additional smoke suites, runnable by name but outside the criterion set.
const std::vector<std::string>& extra_verify_suite_names();

SuiteResult run_verify_suite(const std::string& name, const VerifyOptions& opts);
std::vector<SuiteResult> run_all_verify_suites(const VerifyOptions& opts);

}  // namespace shm
