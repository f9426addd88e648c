#pragma once

#include <string>
#include <vector>

#include "gft/grad_check.hpp"

namespace gft {

struct GradSuiteCase {
    std::string name;
    double tolerance = 1e-4;
    double max_rel_err = 0.0;
    bool pass = false;
};

struct GradSuiteResult {
    std::vector<GradSuiteCase> cases;
    double seconds = 0.0;

    bool all_pass() const {
        for (const auto& c : cases)
            if (!c.pass) return false;
        return !cases.empty();
    }
};

// Finite-difference gradient checks in 64-bit mode for every differentiable
// op and for the composite units (gated attention, SA, GA, fusion, and a full
// one-layer model). Selector: tensor | attention | fusion | model | all.
GradSuiteResult run_gradcheck_suite(const std::string& selector = "all");

}  // namespace gft
