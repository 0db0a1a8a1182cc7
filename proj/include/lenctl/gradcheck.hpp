#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lenctl/tape.hpp"

namespace lenctl {

// Central-difference gradient checking in double precision. The builder is
// invoked with fresh input leaves each evaluation and must return a scalar
// loss id; the analytic gradients from one backward() pass are compared
// element by element against (f(x+h) - f(x-h)) / 2h.
struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst; // "input i, element j"
    bool pass(double tol = 1e-4) const { return max_rel_err < tol; }
};

inline GradCheckResult gradcheck(
    const std::function<Tape<double>::Id(Tape<double>&, const std::vector<Tape<double>::Id>&)>&
        build,
    std::vector<Tensor<double>> inputs, double h = 1e-5) {
    auto eval = [&](const std::vector<Tensor<double>>& ins) {
        Tape<double> tape;
        std::vector<Tape<double>::Id> ids;
        ids.reserve(ins.size());
        for (const auto& t : ins) ids.push_back(tape.input(t, true));
        return tape.value(build(tape, ids))[0];
    };

    std::vector<std::vector<double>> analytic;
    {
        Tape<double> tape;
        std::vector<Tape<double>::Id> ids;
        for (const auto& t : inputs) ids.push_back(tape.input(t, true));
        const auto loss = build(tape, ids);
        tape.backward(loss);
        for (auto id : ids) {
            auto g = tape.grad(id);
            analytic.emplace_back(g.begin(), g.end());
        }
    }

    GradCheckResult result;
    for (size_t i = 0; i < inputs.size(); ++i) {
        for (size_t j = 0; j < inputs[i].data.size(); ++j) {
            const double orig = inputs[i].data[j];
            inputs[i].data[j] = orig + h;
            const double fp = eval(inputs);
            inputs[i].data[j] = orig - h;
            const double fm = eval(inputs);
            inputs[i].data[j] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[i][j];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-4});
            const double rel = std::abs(a - numeric) / denom;
            if (rel > result.max_rel_err) {
                result.max_rel_err = rel;
                result.worst = "input " + std::to_string(i) + ", element " + std::to_string(j);
            }
        }
    }
    return result;
}

} // namespace lenctl
