// Acceptance runner: executes the verification suites at full budget, one
// per criterion, and prints one pass/fail line each. With --criterion N it
// runs a single criterion (used by ctest); with no arguments it runs all.

#include <cstdio>
#include <cstring>
#include <string>

#include "shm/verify.hpp"

int main(int argc, char** argv) {
    int only = 0;
    std::string out_dir = "acceptance_out";
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
            only = std::atoi(argv[++i]);
        } else if (std::strcmp(argv[i], "--out") == 0 && i + 1 < argc) {
            out_dir = argv[++i];
        } else {
            std::fprintf(stderr, "usage: %s [--criterion N] [--out DIR]\n", argv[0]);
            return 2;
        }
    }

    shm::VerifyOptions opts;
    opts.quick = false;
    opts.threads = 1;

    const auto& names = shm::verify_suite_names();
    if (only < 0 || only > static_cast<int>(names.size())) {
        std::fprintf(stderr, "criterion out of range (1..%zu)\n", names.size());
        return 2;
    }

    bool all_pass = true;
    for (std::size_t i = 0; i < names.size(); ++i) {
        int n = static_cast<int>(i) + 1;
        if (only != 0 && n != only) continue;
        shm::SuiteResult r = shm::run_verify_suite(names[i], opts);
        std::printf("[%s] criterion %2d (%s): %s (%.2fs)\n", r.pass ? "PASS" : "FAIL", n,
                    r.name.c_str(), r.detail.c_str(), r.seconds);
        std::fflush(stdout);
        all_pass = all_pass && r.pass;
    }
    return all_pass ? 0 : 1;
}
