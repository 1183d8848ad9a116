#pragma once

// Single recurrent hidden layer of spiking neurons with a leaky-integrator
// readout. The forward unroll is batched: every per-timestep array is
// [rows x batch] with one column per sample.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "brf/dynamics.hpp"
#include "brf/surrogate.hpp"

namespace brf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class NeuronKind { Resonator, ALIF };
enum class ReadoutReduction { Mean, Last };

/// Heaviside for training and evaluation; Relaxed swaps in surrogate_step so
/// the forward pass is differentiable and can be checked numerically.
enum class SpikeFunction { Heaviside, Relaxed };

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

struct InitSpec {
    Range omega{5.0, 10.0};
    Range b_offset{0.1, 1.0};
    double readout_decay = 0.99;
    Range alif_alpha{0.9, 0.98};
    Range alif_rho{0.95, 0.995};
    double alif_beta = 1.8;
};

struct NetworkConfig {
    int n_in = 1;
    int n_hidden = 64;
    int n_out = 2;
    NeuronKind kind = NeuronKind::Resonator;
    dynamics::ResonatorFlags flags = dynamics::ResonatorFlags::brf();
    double delta = dynamics::kDefaultDelta;
    double theta_c = dynamics::kDefaultThreshold;  // also the ALIF base threshold b0
    double gamma = dynamics::kDefaultRefractoryDecay;
    ReadoutReduction readout = ReadoutReduction::Mean;
    SurrogateSpec surrogate{};
    // When false, q is treated as a constant during the backward pass.
    bool backprop_refractory = true;
    InitSpec init{};
    std::uint64_t seed = 0;

    void validate() const;
};

/// Trainable parameters. Vectors belonging to the other neuron kind are
/// empty. Decays are stored pre-sigmoid ("raw").
struct WeightSet {
    Matrix w_in;    // n_hidden x n_in
    Matrix w_rec;   // n_hidden x n_hidden
    Matrix w_out;   // n_out x n_hidden
    Vector omega;
    Vector b_offset;
    Vector alif_alpha_raw;
    Vector alif_rho_raw;
    Vector alif_beta;
    Vector readout_decay_raw;

    template <class Self, class F>
    static void visit(Self& self, F&& f) {
        f("w_in", self.w_in);
        f("w_rec", self.w_rec);
        f("w_out", self.w_out);
        f("omega", self.omega);
        f("b_offset", self.b_offset);
        f("alif_alpha_raw", self.alif_alpha_raw);
        f("alif_rho_raw", self.alif_rho_raw);
        f("alif_beta", self.alif_beta);
        f("readout_decay_raw", self.readout_decay_raw);
    }
    template <class F> void for_each(F&& f) { visit(*this, f); }
    template <class F> void for_each(F&& f) const { visit(*this, f); }

    /// Same shapes, all zero.
    WeightSet zeros_like() const;
    std::size_t parameter_count() const;
    bool all_finite() const;
    bool operator==(const WeightSet& other) const;

    Vector readout_decay() const;
    Vector alif_alpha() const;
    Vector alif_rho() const;
};

using GradientSet = WeightSet;

double sigmoid(double x);
double logit(double p);

/// Inputs for one batch: steps[t] is n_in x B.
struct SequenceBatch {
    std::vector<Matrix> steps;
    std::vector<int> labels;

    int length() const { return static_cast<int>(steps.size()); }
    int batch_size() const { return steps.empty() ? 0 : static_cast<int>(steps.front().cols()); }
};

/// Cached per-timestep quantities from a forward unroll. Index t holds the
/// values after step t+1; the initial state is all zeros and not stored.
/// For ALIF the membrane lives in u_re and the adaptation variable in eta.
struct Trajectory {
    NeuronKind kind = NeuronKind::Resonator;
    SpikeFunction spike_function = SpikeFunction::Heaviside;
    std::vector<Matrix> inputs;
    std::vector<Matrix> u_re;
    std::vector<Matrix> u_im;
    std::vector<Matrix> u_re_pre;  // only with hard reset
    std::vector<Matrix> u_im_pre;  // only with hard reset
    std::vector<Matrix> q;
    std::vector<Matrix> eta;
    std::vector<Matrix> net_input;  // ALIF only
    std::vector<Matrix> z;
    std::vector<Matrix> y;
    Matrix logits;  // n_out x B
    std::uint64_t spike_total = 0;  // z > 0.5 over the whole unroll, kept even without history

    int length() const { return static_cast<int>(z.size()); }
    int batch_size() const { return static_cast<int>(logits.cols()); }

    /// Resonator state of one neuron of one sample after step t.
    dynamics::NeuronState state(int t, int neuron, int sample) const;
};

struct SpikeCounts {
    std::uint64_t total = 0;
    std::vector<std::uint64_t> per_neuron;
};

/// Xavier-uniform bound sqrt(6 / (fan_in + fan_out)).
double xavier_bound(int fan_in, int fan_out);

WeightSet init_network(const NetworkConfig& config);

/// With keep_history = false only the final step is retained (enough for
/// logits and spike totals, not for backward).
Trajectory forward(const NetworkConfig& config, const WeightSet& weights, const SequenceBatch& batch,
                   SpikeFunction spike_function = SpikeFunction::Heaviside, bool keep_history = true);

SpikeCounts count_spikes(const Trajectory& trajectory);

/// Effective dampening b^t of every neuron at step t (resonator kind only).
Matrix effective_dampening_at(const NetworkConfig& config, const WeightSet& weights,
                              const Trajectory& trajectory, int t);

/// Mean softmax cross-entropy and its gradient with respect to the logits
/// (already divided by the batch size).
struct LossResult {
    double loss = 0.0;
    Matrix grad;
    int correct = 0;
};
LossResult softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels);

/// Checkpoint file: JSON document tagged with kCheckpointFormat.
inline constexpr const char* kCheckpointFormat = "brf-checkpoint/1";

struct Checkpoint {
    NetworkConfig config;
    WeightSet weights;
    nlohmann::json optimizer;  // serialized AdamState, null when absent
    int epoch = 0;
};

nlohmann::json config_to_json(const NetworkConfig& config);
NetworkConfig config_from_json(const nlohmann::json& j);
nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string to_string(NeuronKind kind);
NeuronKind neuron_kind_from_string(const std::string& s);
std::string to_string(ReadoutReduction r);
ReadoutReduction readout_from_string(const std::string& s);
/// "brf", "none", or a '+'-joined subset of rp, sr, db, hr.
std::string flags_to_string(dynamics::ResonatorFlags flags);
dynamics::ResonatorFlags flags_from_string(const std::string& s);

}  // namespace brf
