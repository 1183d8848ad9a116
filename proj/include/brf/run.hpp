#pragma once

// Experiment runs: flat TOML config, task loading, the training loop and the
// run-directory layout (config.toml, metrics.csv, timing.csv, checkpoints/,
// summary.json, version.txt).

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "brf/autograd.hpp"
#include "brf/data.hpp"
#include "brf/network.hpp"

namespace brf::run {

// Exit codes: 1 usage, 2 data, 3 numerical. data::DataError maps to 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr const char* kMetricsFormat = "brf-metrics/1";
inline constexpr const char* kSummaryFormat = "brf-summary/1";
inline constexpr const char* kMetricsHeader = "epoch,train_loss,train_acc,val_acc,test_acc,mean_spikes_per_neuron_per_step";

std::string version_string();

/// Stops glibc from returning trajectory memory to the OS after every batch;
/// the page faults otherwise cost about a quarter of training time.
void configure_allocator();

struct RunConfig {
    std::string task = "synthetic";  // synthetic | smnist | psmnist
    std::string model = "brf";       // brf | rf | alif
    std::string flags;               // resonator flags; empty means the model's default
    int hidden = 64;
    int epochs = 0;  // 0: 10 for synthetic, 20 for MNIST
    int batch_size = 32;
    int eval_batch_size = 256;
    double lr = 0.075;
    double lr_neuron = -1.0;
    double grad_clip = 0.0;  // 0 disables
    double delta = 0.01;
    double gamma = 0.9;
    double theta_c = 1.0;
    std::string readout = "mean";
    double readout_decay = 0.99;
    double surrogate_h = 0.15;
    double surrogate_sigma = 0.5;
    double surrogate_scale = 6.0;
    double surrogate_gain = 1.0;
    double omega_lo = 5.0;
    double omega_hi = 10.0;
    double b_offset_lo = 0.1;
    double b_offset_hi = 1.0;
    double alif_alpha_lo = 0.9;
    double alif_alpha_hi = 0.98;
    double alif_rho_lo = 0.95;
    double alif_rho_hi = 0.995;
    double alif_beta = 1.8;
    bool backprop_refractory = true;
    long seed = 0;

    // data
    std::string data_dir;   // empty: $BRF_DATA_DIR
    long data_seed = 0;      // subset selection for MNIST, sample draw for synthetic
    int train_subset = 0;   // 0: whole training file
    int val_size = -1;      // -1: last 10 % of the training samples
    int test_subset = 0;
    long permutation_seed = static_cast<long>(data::kDefaultPermutationSeed);
    int syn_classes = 4;
    int syn_T = 250;
    int syn_train = 2048;
    int syn_test = 512;
    double syn_noise = 0.1;
    double syn_omega_lo = 5.0;
    double syn_omega_hi = 10.0;

    /// Fills task-dependent defaults (epochs, flags) and checks values.
    RunConfig resolved() const;
    bool operator==(const RunConfig&) const = default;
};

std::vector<std::string> config_keys();
/// Sets one key from its textual value. Throws UsageError on unknown keys or bad values.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& config, const std::string& key);

std::string config_to_toml(const RunConfig& config);
RunConfig config_from_toml(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

struct TaskData {
    data::SequenceDataset train;
    data::SequenceDataset val;
    data::SequenceDataset test;
};

TaskData load_task(const RunConfig& config);
NetworkConfig network_config(const RunConfig& config, int n_in, int n_out);

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
    double spikes_per_neuron_step = 0.0;
};

EvalResult evaluate(const NetworkConfig& config, const WeightSet& weights, const data::SequenceDataset& ds,
                    int batch_size, const std::vector<std::size_t>* indices = nullptr);

struct EpochMetrics {
    int epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;
    double test_acc = 0.0;
    double spikes = 0.0;
    double seconds = 0.0;
};

struct TrainResult {
    std::vector<EpochMetrics> epochs;
    WeightSet weights;
    int first_val50_epoch = -1;
};

/// Trains one model and writes the run directory `out`. Progress goes to `log` when non-null.
TrainResult train(const RunConfig& config, const TaskData& data, const std::filesystem::path& out,
                  std::ostream* log = nullptr);

/// Repeats train() with seeds seed, seed+1, ... in out/seed_<k> and writes
/// out/aggregate.csv. With runs == 1 the run directory is `out` itself.
std::vector<TrainResult> train_runs(const RunConfig& config, const std::filesystem::path& out, int runs,
                                    std::ostream* log = nullptr);

std::string metrics_csv(const std::vector<EpochMetrics>& epochs);
/// epoch plus <metric>_mean and <metric>_std (sample std) for every metric.
std::string aggregate_csv(const std::vector<std::vector<EpochMetrics>>& runs);

}  // namespace brf::run
