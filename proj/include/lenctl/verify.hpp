#pragma once

#include <string>
#include <vector>

namespace lenctl {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

// Fast analytic property suite: encoding identities, norm preservation,
// shift statistics, curriculum shape, RoPE relative-position identity,
// causality, softmax normalization.
std::vector<CheckResult> run_property_checks();

// 64-bit central-difference checks for every tape op plus a two-layer
// end-to-end model that includes the injection and scaling path.
std::vector<CheckResult> run_gradient_checks();

// Prints one line per check; returns the failure count.
int report_checks(const std::vector<CheckResult>& checks);

} // namespace lenctl
