// Acceptance battery: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <cstdio>
#include <cstdlib>

#include "validation.hpp"

int main(int argc, char** argv) {
    qtazrp::validation::Options o;
    if (argc > 1) o.samples = std::atol(argv[1]);
    if (const char* w = std::getenv("QTAZRP_WORKERS")) o.workers = static_cast<unsigned>(std::atoi(w));
    std::setvbuf(stdout, nullptr, _IONBF, 0);
    const auto results = qtazrp::validation::run_all(o, [](const qtazrp::validation::CheckResult& r) {
        std::printf("%s  [%2d] %s: %s (%.1fs)\n", r.pass ? "PASS" : "FAIL", r.id, r.name.c_str(), r.detail.c_str(), r.seconds);
    });
    int failed = 0;
    for (const auto& r : results) failed += !r.pass;
    std::printf("%d/%zu criteria passed\n", static_cast<int>(results.size()) - failed, results.size());
    return failed ? 1 : 0;
}
