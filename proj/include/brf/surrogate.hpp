#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace brf {

/// Double-Gaussian pseudo-derivative of the Heaviside:
///   gain * ((1 + h) N(v; 0, sigma) - h N(v; 0, scale * sigma))
/// gain < 1 damps the pseudo-derivative, as ALIF trainers usually do to keep
/// BPTT over long sequences from exploding.
struct SurrogateSpec {
    double h = 0.15;
    double sigma = 0.5;
    double scale = 6.0;
    double gain = 1.0;

    void validate() const {
        if (!(sigma > 0.0) || !(scale > 1.0) || !(h >= 0.0 && h < 1.0)) {
            throw std::invalid_argument("surrogate requires sigma > 0, scale > 1 and 0 <= h < 1");
        }
        if (!(gain > 0.0) || !std::isfinite(gain)) throw std::invalid_argument("surrogate gain must be positive");
    }
};

inline double gaussian_density(double v, double sigma) {
    const double z = v / sigma;
    return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

inline double surrogate_derivative(double v, const SurrogateSpec& s) {
    return s.gain * ((1.0 + s.h) * gaussian_density(v, s.sigma) - s.h * gaussian_density(v, s.scale * s.sigma));
}

/// Antiderivative of surrogate_derivative, 0 at -inf and gain at +inf.
/// Used as a smooth stand-in for the Heaviside when checking gradients.
inline double surrogate_step(double v, const SurrogateSpec& s) {
    const auto cdf = [](double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); };
    return s.gain * ((1.0 + s.h) * cdf(v / s.sigma) - s.h * cdf(v / (s.scale * s.sigma)));
}

}  // namespace brf
