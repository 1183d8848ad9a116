#pragma once

// Loss-landscape slices along filter-normalized random directions, phase maps
// of the linearised resonator, and adjoint-norm probes through time.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "brf/data.hpp"
#include "brf/network.hpp"

namespace brf::analysis {

inline constexpr const char* kLandscapeFormat = "brf-landscape/1";
inline constexpr const char* kPhaseFormat = "brf-phase/1";
inline constexpr const char* kGradflowFormat = "brf-gradflow/1";
inline constexpr const char* kTraceFormat = "brf-trace/1";

// ---------------------------------------------------------------------------
// landscape

/// Directions for the input and recurrent weights only.
struct Directions {
    Matrix eta_in, eta_rec;
    Matrix xi_in, xi_rec;
};

/// Standard normal draw, then every row rescaled to the norm of the same row
/// of `reference`. Rows that are zero in the reference stay zero.
Matrix filter_normalized(const Matrix& reference, std::mt19937_64& rng);

/// eta and xi are drawn independently from one seeded stream.
Directions filter_normalized_directions(const WeightSet& theta, std::uint64_t seed);

struct GridSpec {
    int points = 51;
    double lo = -1.0;
    double hi = 1.0;

    std::vector<double> axis() const;
};

struct LandscapeOptions {
    GridSpec grid{};
    std::uint64_t direction_seed = 0;
    int threads = 0;  // 0: hardware concurrency
    int batch_size = 256;
};

struct LandscapeGrid {
    std::vector<double> alphas;
    std::vector<double> betas;
    Matrix losses;  // losses(i, j) at (alphas[i], betas[j]); +inf where evaluation failed
    double center_loss = 0.0;
    Directions directions;
};

/// Mean cross-entropy over the whole dataset; +inf when a final hidden state is not finite.
double dataset_loss(const NetworkConfig& config, const WeightSet& weights, const data::SequenceDataset& ds,
                    int batch_size = 256);

/// Loss at theta + alpha eta + beta xi, perturbing W_in and W_rec only.
WeightSet perturbed(const WeightSet& theta, const Directions& d, double alpha, double beta);

LandscapeGrid scan_landscape(const NetworkConfig& config, const WeightSet& theta, const data::SequenceDataset& ds,
                             const LandscapeOptions& options);
LandscapeGrid scan_landscape(const NetworkConfig& config, const WeightSet& theta, const Directions& directions,
                             const data::SequenceDataset& ds, const LandscapeOptions& options);

struct Roughness {
    double total_variation = 0.0;   // mean |difference| over 4-neighbour pairs
    double basin_width = 0.0;       // largest radius around the centre with loss <= 2x centre loss
    double convexity_violation = 0.0;  // share of interior cells with negative Hessian determinant
    double coverage = 1.0;          // share of finite cells
    bool complete = true;
};

Roughness roughness_metrics(const std::vector<double>& alphas, const std::vector<double>& betas,
                            const Matrix& losses);
Roughness roughness_metrics(const LandscapeGrid& grid);

// ---------------------------------------------------------------------------
// phase map

struct PhaseMap {
    double delta = 0.0;
    std::vector<double> omegas;  // cell-centred
    std::vector<double> bs;      // cell-centred
    Matrix radius;               // radius(i, j) at (bs[i], omegas[j])
    std::vector<double> boundary;         // p(omega_j)
    std::vector<double> boundary_radius;  // spectral radius at (p(omega_j), omega_j)

    bool divergent(int i, int j) const { return radius(i, j) > 1.0; }
};

/// Only omega with delta * omega < 1 have a real boundary; larger omega get NaN there.
PhaseMap phase_scan(double delta, double omega_lo, double omega_hi, double b_lo, double b_hi, int omega_points,
                    int b_points);

// ---------------------------------------------------------------------------
// single neuron

enum class Stimulus { Pulse, Constant, Sinusoid, None };

struct SimulationSpec {
    double omega = 10.0;
    // Either a raw dampening b (flags without DB) or an offset below p(omega).
    std::optional<double> b;
    double b_offset = 0.0;
    dynamics::ResonatorFlags flags{};
    double delta = dynamics::kDefaultDelta;
    double theta_c = dynamics::kDefaultThreshold;
    double gamma = dynamics::kDefaultRefractoryDecay;
    int steps = 500;
    Stimulus stimulus = Stimulus::Pulse;
    double amplitude = 1.0;
    int pulse_steps = 1;
    double stimulus_omega = 10.0;
};

struct NeuronTrace {
    std::vector<double> input, u_re, u_im, amplitude, threshold, dampening;
    std::vector<int> z;
};

/// Throws dynamics::DomainError with the boundary value in the message when
/// the parameters are outside the model's domain.
NeuronTrace simulate_neuron(const SimulationSpec& spec);

std::string to_string(Stimulus s);
Stimulus stimulus_from_string(const std::string& s);

// ---------------------------------------------------------------------------
// gradient flow

enum class ProbeMode { Spiking, Subthreshold };

struct GradNormTrace {
    ProbeMode mode = ProbeMode::Spiking;
    std::vector<double> norms;  // adjoint norm of the hidden state, t = 0..T-1
};

/// Single-sample forward and backward. Spiking mode backpropagates the
/// cross-entropy of `batch.labels`. Subthreshold mode sets theta_c = +inf and,
/// since no spikes reach the readout, seeds a unit-norm adjoint on the final
/// hidden state instead.
GradNormTrace gradient_norm_probe(const NetworkConfig& config, const WeightSet& weights, const SequenceBatch& sample,
                                  ProbeMode mode);

std::string to_string(ProbeMode mode);
ProbeMode probe_mode_from_string(const std::string& s);

// ---------------------------------------------------------------------------
// artifacts

/// 64-bit FNV-1a of the file contents, as 16 hex digits.
std::string fnv1a_file(const std::filesystem::path& path);

/// alpha,beta,loss (inf for failed cells)
std::string landscape_csv(const LandscapeGrid& grid);
/// omega,b,spectral_radius,divergent,boundary_b
std::string phase_csv(const PhaseMap& map);
/// t,adjoint_norm
std::string gradflow_csv(const GradNormTrace& trace);
/// t,input,u_re,u_im,abs_u,theta,b,z
std::string trace_csv(const NeuronTrace& trace);

void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace brf::analysis
