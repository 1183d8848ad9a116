#include "brf/dynamics.hpp"

namespace brf::dynamics {

void ResonatorParams::validate() const {
    if (omega.size() != b_offset.size()) {
        throw DomainError("omega and b_offset sizes differ");
    }
    if (!(delta > 0.0) || !std::isfinite(delta)) {
        throw DomainError("delta must be positive and finite");
    }
    for (std::size_t i = 0; i < omega.size(); ++i) {
        if (!(omega[i] > 0.0)) {
            throw DomainError("omega[" + std::to_string(i) + "] must be positive");
        }
        if (!(delta * omega[i] < 1.0)) {
            throw DomainError("delta*omega[" + std::to_string(i) + "] must be < 1");
        }
        if (!(b_offset[i] >= 0.0)) {
            throw DomainError("b_offset[" + std::to_string(i) + "] must be non-negative");
        }
    }
}

std::vector<double> divergence_boundary(const std::vector<double>& omega, double delta) {
    std::vector<double> out(omega.size());
    for (std::size_t i = 0; i < omega.size(); ++i) {
        out[i] = divergence_boundary(omega[i], delta);
    }
    return out;
}

std::vector<double> effective_dampening(const ResonatorParams& params, const std::vector<double>& q,
                                        ResonatorFlags flags) {
    if (q.size() != params.size()) {
        throw DomainError("refractory vector size does not match neuron count");
    }
    std::vector<double> out(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        out[i] = effective_dampening(params.omega[i], params.b_offset[i], params.delta, q[i], flags);
    }
    return out;
}

}  // namespace brf::dynamics
