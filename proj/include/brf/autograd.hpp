#pragma once

// Reverse-mode BPTT over a cached Trajectory, Adam, and the feasibility
// projection that keeps resonator parameters below the divergence boundary.

#include <string>
#include <vector>

#include "json.hpp"

#include "brf/network.hpp"
#include "brf/surrogate.hpp"

namespace brf {

struct BackwardOptions {
    // Extra adjoint injected on the final hidden state (n_hidden x B each).
    // Empty means zero. For ALIF only terminal_u_re is used.
    Matrix terminal_u_re;
    Matrix terminal_u_im;
    bool record_adjoint_norms = false;
};

struct BackwardResult {
    GradientSet grads;
    // Euclidean norm of dL/ds^t over all neurons and samples, t = 0..T-1.
    std::vector<double> adjoint_norms;
};

/// Gradients of the loss whose logit gradient is `dlogits` (n_out x B). The
/// per-sample contributions are summed, so a batch-mean loss gradient yields
/// batch-averaged parameter gradients.
BackwardResult backward(const NetworkConfig& config, const WeightSet& weights, const Trajectory& trajectory,
                        const Matrix& dlogits, const BackwardOptions& options = {});

/// Global L2 norm over every gradient entry.
double gradient_norm(const GradientSet& grads);
/// Rescales so the global norm is at most max_norm. Returns the pre-clip norm.
double clip_gradients(GradientSet& grads, double max_norm);

struct AdamConfig {
    double lr = 0.075;
    // Learning rate for per-neuron parameter vectors; negative means "same as lr".
    double lr_neuron = -1.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamConfig config;
    WeightSet m;
    WeightSet v;
    long step = 0;

    static AdamState zeros_like(const WeightSet& weights, AdamConfig config);
    nlohmann::json to_json() const;
    static AdamState from_json(const nlohmann::json& j);
};

/// One bias-corrected Adam update, in place.
void adam_step(WeightSet& weights, const GradientSet& grads, AdamState& state);

struct ProjectionSpec {
    double omega_floor = 0.1;
    double margin = 0.01;
};

/// Clamps b_offset >= 0, omega into [omega_floor, (1 - margin) / delta] and
/// ALIF beta >= 0. Idempotent; leaves everything else untouched.
void project_params(WeightSet& weights, const NetworkConfig& config, const ProjectionSpec& spec = {});

// ---------------------------------------------------------------------------
// Finite-difference checks against the surrogate-relaxed forward pass.

struct GradCheckReport {
    std::string name;
    double max_rel_error = 0.0;
    std::string worst_parameter;
    long worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t entries_checked = 0;
};

/// Compares backward() on the relaxed forward pass against central
/// differences of the same loss for every parameter entry. Relative error is
/// |a - n| / max(|a|, |n|, 1e-6).
GradCheckReport gradient_check(const NetworkConfig& config, const WeightSet& weights, const SequenceBatch& batch,
                               double step = 1e-5);

struct GradCheckCase {
    std::string name;
    NetworkConfig config;
};

/// RF, RF+RP, RF+RP+SR, BRF, RF with hard reset, and ALIF on two-neuron,
/// five-step networks.
std::vector<GradCheckCase> default_gradcheck_cases();

/// Builds random weights and inputs for the case and runs gradient_check.
GradCheckReport run_gradcheck_case(const GradCheckCase& c, std::uint64_t seed);

}  // namespace brf
