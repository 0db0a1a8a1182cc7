#include "lenctl/encoding.hpp"

#include <cmath>
#include <stdexcept>

namespace lenctl {

const char* to_string(EncodingMode m) {
    switch (m) {
        case EncodingMode::LDPE: return "ldpe";
        case EncodingMode::ORPE: return "orpe";
        case EncodingMode::NONE: return "none";
    }
    return "none";
}

EncodingMode encoding_mode_from_string(const std::string& s) {
    if (s == "ldpe" || s == "LDPE") return EncodingMode::LDPE;
    if (s == "orpe" || s == "ORPE") return EncodingMode::ORPE;
    if (s == "none" || s == "NONE") return EncodingMode::NONE;
    throw std::invalid_argument("unknown encoding mode: " + s);
}

void CountdownPlan::validate() const {
    if (L < 1) throw std::invalid_argument("invalid plan: L must be >= 1");
    if (n < 0) throw std::invalid_argument("invalid plan: n must be >= 0");
    if (n > L) throw std::invalid_argument("invalid plan: prompt length exceeds sequence length");
    if (shift < 0) throw std::invalid_argument("invalid plan: negative shift");
    if (mode == EncodingMode::ORPE && n >= L)
        throw std::invalid_argument("invalid plan: ORPE requires a response region (n < L)");
}

void CurriculumSchedule::validate() const {
    if (sigma0 <= 0.0) throw std::invalid_argument("invalid schedule: sigma0 must be positive");
    if (sigma_max < sigma0)
        throw std::invalid_argument("invalid schedule: sigma_max must be >= sigma0");
    if (total_steps < 1) throw std::invalid_argument("invalid schedule: total_steps must be >= 1");
    if (max_shift < 1) throw std::invalid_argument("invalid schedule: max_shift must be >= 1");
}

std::vector<double> sinusoidal_row(long long i, int d) {
    if (d < 2 || d % 2 != 0)
        throw std::invalid_argument("invalid dimension: sinusoid width must be even and >= 2");
    if (i < 0) throw std::invalid_argument("sinusoid index must be non-negative");
    std::vector<double> row(static_cast<size_t>(d));
    const double pos = static_cast<double>(i);
    for (int k = 0; 2 * k < d; ++k) {
        const double angle = pos / std::pow(10000.0, (2.0 * k) / d);
        row[2 * k] = std::sin(angle);
        row[2 * k + 1] = std::cos(angle);
    }
    return row;
}

std::vector<std::optional<long long>> countdown_indices(const CountdownPlan& plan) {
    plan.validate();
    std::vector<std::optional<long long>> idx(static_cast<size_t>(plan.L));
    if (plan.mode == EncodingMode::NONE) return idx;
    const int first = plan.mode == EncodingMode::ORPE ? plan.n + 1 : 1;
    for (int i = first; i <= plan.L; ++i) {
        idx[i - 1] = static_cast<long long>(plan.L + 1) - i + plan.shift;
    }
    return idx;
}

int sample_shift(double sigma, int max_shift, std::mt19937_64& rng) {
    if (sigma < 0.0) throw std::invalid_argument("shift sigma must be non-negative");
    if (max_shift < 0) throw std::invalid_argument("max_shift must be non-negative");
    if (sigma == 0.0) return 0;
    std::normal_distribution<double> normal(0.0, sigma);
    const double z = std::abs(normal(rng));
    const long long rounded = std::llround(z);
    if (rounded > max_shift) return max_shift;
    return static_cast<int>(rounded);
}

double curriculum_sigma(int t, const CurriculumSchedule& schedule) {
    schedule.validate();
    if (t < 0 || t > schedule.total_steps)
        throw std::out_of_range("curriculum step outside [0, total_steps]");
    // endpoints are analytically forced; return them without rounding slop
    if (t == 0) return schedule.sigma0;
    if (t == schedule.total_steps) return schedule.sigma_max;
    const double frac = static_cast<double>(t) / schedule.total_steps;
    return schedule.sigma0 * std::exp(frac * std::log(schedule.sigma_max / schedule.sigma0));
}

double frobenius_norm(const MatrixD& m) {
    double s = 0.0;
    for (double v : m.data) s += v * v;
    return std::sqrt(s);
}

MatrixD scale_encoding(const MatrixD& R, const MatrixD& E) {
    if (R.rows != E.rows || R.cols != E.cols)
        throw std::invalid_argument("scale_encoding: shape mismatch");
    const double rn = frobenius_norm(R);
    if (rn == 0.0) throw std::invalid_argument("degenerate encoding: zero Frobenius norm");
    const double en = frobenius_norm(E);
    if (en == 0.0) throw std::invalid_argument("degenerate embedding: zero Frobenius norm");
    MatrixD out = R;
    const double factor = en / rn;
    for (double& v : out.data) v *= factor;
    return out;
}

MatrixD build_encoding_matrix(const CountdownPlan& plan, int d) {
    const auto idx = countdown_indices(plan);
    MatrixD R(plan.L, d);
    for (int r = 0; r < plan.L; ++r) {
        if (!idx[r]) continue;
        const auto row = sinusoidal_row(*idx[r], d);
        for (int c = 0; c < d; ++c) R.at(r, c) = row[c];
    }
    return R;
}

MatrixD inject(const MatrixD& E, const CountdownPlan& plan, int d) {
    plan.validate();
    if (E.rows != plan.L || E.cols != d)
        throw std::invalid_argument("inject: embedding shape does not match plan");
    if (plan.mode == EncodingMode::NONE) return E;
    const MatrixD scaled = scale_encoding(build_encoding_matrix(plan, d), E);
    MatrixD out = E;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += scaled.data[i];
    return out;
}

} // namespace lenctl
