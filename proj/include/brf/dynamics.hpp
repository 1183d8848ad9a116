#pragma once

// Single-neuron step functions and stability formulas for resonate-and-fire
// (RF / BRF), adaptive LIF and leaky-integrator neurons.
//
// Everything here is a pure function of its arguments. The network module
// applies these component-wise over [neurons x batch] arrays, so the scalar
// forms below are the reference semantics for the whole library.

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace brf::dynamics {

/// Raised when (omega, delta) leaves the region where the discretized
/// resonator has a real divergence boundary, i.e. delta * omega >= 1.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

inline constexpr double kDefaultDelta = 0.01;
inline constexpr double kDefaultThreshold = 1.0;
inline constexpr double kDefaultRefractoryDecay = 0.9;

struct ResonatorFlags {
    bool refractory_period = true;
    bool smooth_reset = true;
    bool divergence_boundary = true;
    // Original RF reset (Re u -> 0, Im u -> 1 on a spike). Not part of BRF.
    bool hard_reset = false;

    static constexpr ResonatorFlags brf() { return {true, true, true, false}; }
    static constexpr ResonatorFlags vanilla() { return {false, false, false, false}; }

    /// True when the refractory accumulator q has to be tracked at all.
    constexpr bool tracks_refractory() const { return refractory_period || smooth_reset; }

    friend constexpr bool operator==(const ResonatorFlags&, const ResonatorFlags&) = default;
};

/// Per-neuron parameters of a resonator population plus the shared step.
struct ResonatorParams {
    std::vector<double> omega;
    std::vector<double> b_offset;
    double delta = kDefaultDelta;

    std::size_t size() const { return omega.size(); }
    /// Throws DomainError if any invariant (omega > 0, delta*omega < 1,
    /// b_offset >= 0, matching sizes) is violated.
    void validate() const;
};

struct NeuronState {
    double u_re = 0.0;
    double u_im = 0.0;
    double q = 0.0;

    double amplitude() const { return std::hypot(u_re, u_im); }
};

struct SpikeOutcome {
    std::uint8_t z = 0;
    constexpr bool fired() const { return z != 0; }
};

struct ALIFParams {
    double alpha = 0.95;  // membrane decay
    double rho = 0.99;    // adaptation decay
    double beta = 1.8;    // adaptation strength
    double b0 = 1.0;      // base threshold
};

struct ALIFState {
    double u = 0.0;
    double eta = 0.0;
    std::uint8_t z_prev = 0;  // spike emitted at the previous step
};

/// theta = b0 + beta eta.
constexpr double alif_threshold(const ALIFParams& p, double eta) { return p.b0 + p.beta * eta; }

/// ds^t / ds^{t-1} of the (Re u, Im u) pair, row-major.
struct Jacobian2x2 {
    double a00, a01, a10, a11;

    double operator()(int row, int col) const {
        if (row == 0) return col == 0 ? a00 : a01;
        return col == 0 ? a10 : a11;
    }
};

/// Heaviside step with Theta(0) = 1.
constexpr double heaviside(double v) { return v >= 0.0 ? 1.0 : 0.0; }

/// Dampening at which the discretized resonator has spectral radius one:
/// p(omega) = (-1 + sqrt(1 - (delta*omega)^2)) / delta.
inline double divergence_boundary(double omega, double delta) {
    const double x = delta * omega;
    if (!(delta > 0.0) || !(omega >= 0.0) || !(x < 1.0)) {
        throw DomainError("divergence boundary undefined for omega=" + std::to_string(omega) +
                          ", delta=" + std::to_string(delta) + " (requires 0 <= delta*omega < 1)");
    }
    return (-1.0 + std::sqrt(1.0 - x * x)) / delta;
}

std::vector<double> divergence_boundary(const std::vector<double>& omega, double delta);

/// d p(omega) / d omega.
inline double divergence_boundary_slope(double omega, double delta) {
    const double x = delta * omega;
    return -x / std::sqrt(1.0 - x * x);
}

/// Dampening before the smooth-reset term. With the divergence boundary off
/// the offset is read directly as the magnitude of the dampening (b = -b').
inline double base_dampening(double omega, double b_offset, double delta, ResonatorFlags flags) {
    return flags.divergence_boundary ? divergence_boundary(omega, delta) - b_offset : -b_offset;
}

/// b(t) given a precomputed base_dampening and the previous refractory value.
constexpr double dampening_from_base(double base, double q_prev, ResonatorFlags flags) {
    return flags.smooth_reset ? base - q_prev : base;
}

inline double effective_dampening(double omega, double b_offset, double delta, double q,
                                  ResonatorFlags flags) {
    return dampening_from_base(base_dampening(omega, b_offset, delta, flags), q, flags);
}

std::vector<double> effective_dampening(const ResonatorParams& params, const std::vector<double>& q,
                                        ResonatorFlags flags);

/// Intermediate values of one resonator step. The network keeps these for
/// the backward pass.
struct ResonatorUpdate {
    double u_re, u_im, q;  // state after the step (post reset)
    double z;              // spike value, {0, 1} unless a relaxed spike function is used
    double dampening;      // b^t
    double threshold;      // theta^t
    double u_re_pre;       // Re u^t before any hard reset
    double u_im_pre;
};

/// One Euler step in the order b^t, u^t, theta^t, z^t, q^t. The dampening and
/// threshold both read q^{t-1}; q^t uses the same-step spike z^t. `spike_fn`
/// maps the threshold-centred potential to z; the Heaviside gives the
/// production neuron.
template <class SpikeFn>
inline ResonatorUpdate resonator_update(double u_re, double u_im, double q, double omega, double base_b,
                                        double delta, ResonatorFlags flags, double x, double theta_c,
                                        double gamma, SpikeFn&& spike_fn) {
    ResonatorUpdate r{};
    r.dampening = dampening_from_base(base_b, q, flags);
    r.u_re_pre = u_re + delta * (r.dampening * u_re - omega * u_im + x);
    r.u_im_pre = u_im + delta * (omega * u_re + r.dampening * u_im);
    r.threshold = flags.refractory_period ? theta_c + q : theta_c;
    r.z = spike_fn(r.u_re_pre - r.threshold);
    r.q = flags.tracks_refractory() ? gamma * q + r.z : 0.0;
    if (flags.hard_reset) {
        r.u_re = r.u_re_pre * (1.0 - r.z);
        r.u_im = r.u_im_pre * (1.0 - r.z) + r.z;
    } else {
        r.u_re = r.u_re_pre;
        r.u_im = r.u_im_pre;
    }
    return r;
}

struct ResonatorStepResult {
    NeuronState state;
    SpikeOutcome spike;
    double dampening;
    double threshold;
};

inline ResonatorStepResult resonator_step(const NeuronState& s, double omega, double b_offset, double delta,
                                          ResonatorFlags flags, double x,
                                          double theta_c = kDefaultThreshold,
                                          double gamma = kDefaultRefractoryDecay) {
    const auto r = resonator_update(s.u_re, s.u_im, s.q, omega, base_dampening(omega, b_offset, delta, flags),
                                    delta, flags, x, theta_c, gamma, heaviside);
    return {{r.u_re, r.u_im, r.q}, {static_cast<std::uint8_t>(r.z)}, r.dampening, r.threshold};
}

inline ResonatorStepResult resonator_step(const NeuronState& s, const ResonatorParams& params, std::size_t i,
                                          ResonatorFlags flags, double x,
                                          double theta_c = kDefaultThreshold,
                                          double gamma = kDefaultRefractoryDecay) {
    return resonator_step(s, params.omega.at(i), params.b_offset.at(i), params.delta, flags, x, theta_c, gamma);
}

struct ALIFUpdate {
    double u, eta, theta, z;
};

/// Decay-form ALIF with soft reset by the previous threshold:
///   u^t     = alpha u^{t-1} + (1 - alpha) x - z^{t-1} theta^{t-1}
///   eta^t   = rho eta^{t-1} + (1 - rho) z^{t-1}
///   theta^t = b0 + beta eta^t,  z^t = H(u^t - theta^t)
/// The leak is evaluated as x + alpha (u - x).
template <class SpikeFn>
inline ALIFUpdate alif_update(double u, double eta, double z_prev, const ALIFParams& p, double x,
                              SpikeFn&& spike_fn) {
    ALIFUpdate r{};
    // skip the reset term without a spike so an infinite threshold stays harmless
    r.u = x + p.alpha * (u - x) - (z_prev != 0.0 ? z_prev * alif_threshold(p, eta) : 0.0);
    r.eta = p.rho * eta + (1.0 - p.rho) * z_prev;
    r.theta = alif_threshold(p, r.eta);
    r.z = spike_fn(r.u - r.theta);
    return r;
}

struct ALIFStepResult {
    ALIFState state;
    SpikeOutcome spike;
    double theta;
};

inline ALIFStepResult alif_step(const ALIFState& s, const ALIFParams& p, double x) {
    const auto r = alif_update(s.u, s.eta, s.z_prev, p, x, heaviside);
    const auto z = static_cast<std::uint8_t>(r.z);
    return {{r.u, r.eta, z}, {z}, r.theta};
}

/// Leaky-integrator readout membrane.
/// Evaluated as x + decay (y - x), which equals decay y + (1 - decay) x.
constexpr double li_step(double y, double decay, double x) { return x + decay * (y - x); }

constexpr Jacobian2x2 state_jacobian(double b, double omega, double delta) {
    return {1.0 + delta * b, -delta * omega, delta * omega, 1.0 + delta * b};
}

/// |1 + delta b + i delta omega|, the common modulus of both eigenvalues.
inline double spectral_radius(double b, double omega, double delta) {
    return std::hypot(1.0 + delta * b, delta * omega);
}

}  // namespace brf::dynamics
