#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace lenctl {

// Reverse-countdown positional encodings. A plan describes, for one
// prompt+response sequence, which sinusoid index each position receives:
// counting down toward the response end so that the final response token
// (EOS) sits at index 1 + shift.
enum class EncodingMode { LDPE, ORPE, NONE };

const char* to_string(EncodingMode m);
EncodingMode encoding_mode_from_string(const std::string& s);

struct CountdownPlan {
    EncodingMode mode = EncodingMode::NONE;
    int n = 0;     // prompt length in tokens
    int L = 1;     // total sequence length in tokens
    int shift = 0; // non-negative countdown shift (upper-bound training only)

    void validate() const; // throws std::invalid_argument on violation
};

struct CurriculumSchedule {
    double sigma0 = 0.1;
    double sigma_max = 256.0;
    int total_steps = 1;
    int max_shift = 256;

    void validate() const;
};

// Row-major double matrix; the reference (non-autodiff) route for the
// encoding algebra. The 32-bit in-graph route in tape.hpp is checked
// against this one.
struct MatrixD {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    MatrixD() = default;
    MatrixD(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}
    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
};

// Interleaved sin/cos sinusoid row: component 2k = sin(i / 10000^(2k/d)),
// component 2k+1 = cos(i / 10000^(2k/d)). Requires even d >= 2, i >= 0.
std::vector<double> sinusoidal_row(long long i, int d);

// Per-position countdown indices, 1-based positions. nullopt marks a
// position that receives no encoding (ORPE prompt region, or all of NONE).
std::vector<std::optional<long long>> countdown_indices(const CountdownPlan& plan);

// round(|N(0, sigma^2)|) clamped to [0, max_shift]. sigma = 0 returns 0.
int sample_shift(double sigma, int max_shift, std::mt19937_64& rng);

// sigma_t = sigma0 * exp((t/T) * ln(sigma_max/sigma0)), 0 <= t <= T.
double curriculum_sigma(int t, const CurriculumSchedule& schedule);

double frobenius_norm(const MatrixD& m);

// R' = R * (|E|_F / |R|_F). Throws on a zero-norm R or E.
MatrixD scale_encoding(const MatrixD& R, const MatrixD& E);

// Encoding matrix for a plan: sinusoid rows where the plan gives an index,
// zero rows elsewhere.
MatrixD build_encoding_matrix(const CountdownPlan& plan, int d);

// E_hat = E + scale_encoding(build_encoding_matrix(plan, d), E).
// Mode NONE returns E unchanged and never touches the scaler.
MatrixD inject(const MatrixD& E, const CountdownPlan& plan, int d);

} // namespace lenctl
