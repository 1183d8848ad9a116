#pragma once

// Sequence datasets: MNIST from IDX files (raw or gzipped), its pixel-by-pixel
// and permuted streams, and a synthetic sinusoid classification task.

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "brf/network.hpp"

namespace brf::data {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct MnistImages {
    int rows = 0;
    int cols = 0;
    std::vector<std::uint8_t> pixels;  // image-major, row-major inside an image
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    int pixels_per_image() const { return rows * cols; }
};

/// Reads an image file (magic 0x803) and a label file (magic 0x801). gzip
/// input is detected and inflated transparently.
MnistImages load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Looks for {train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz] under root.
MnistImages load_mnist(const std::filesystem::path& root, const std::string& split);

struct SequenceDataset {
    int T = 0;
    int n_in = 0;
    int n_classes = 0;
    std::string split;
    // values[(i * T + t) * n_in + j]
    std::vector<double> values;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    double at(std::size_t i, int t, int j = 0) const {
        return values[(i * static_cast<std::size_t>(T) + t) * n_in + j];
    }
    void validate() const;
};

/// One pixel per step, row-major, scaled to [0, 1]. Pixel (r, c) lands at t = 28r + c.
SequenceDataset to_sequential(const MnistImages& images, std::string split);

constexpr std::uint64_t kDefaultPermutationSeed = 92;

struct PermutationSpec {
    std::uint64_t seed = kDefaultPermutationSeed;
    std::vector<int> permutation;  // output step t reads input step permutation[t]

    static PermutationSpec make(std::uint64_t seed = kDefaultPermutationSeed, int n = 784);
    static PermutationSpec identity(int n = 784);
    PermutationSpec inverse() const;
    bool is_bijection() const;
};

SequenceDataset permute(const SequenceDataset& ds, const PermutationSpec& spec);

struct SyntheticSpec {
    std::uint64_t seed = 0;
    int n_classes = 4;
    int T = 250;
    int n_train = 2048;
    int n_test = 512;
    double noise = 0.1;
    double delta = 0.01;
    // Angular frequencies are spread over this range (rad per unit time).
    double omega_lo = 5.0;
    double omega_hi = 10.0;
};

/// Cell-centred angular frequencies, one per class.
std::vector<double> class_frequencies(const SyntheticSpec& spec);

/// Class k: sin(omega_k t delta + phi) + noise * clamp(N(0, 1), -3, 3), random phase
/// phi, labels cycling through the classes. Returns (train, test).
std::pair<SequenceDataset, SequenceDataset> synthetic_resonance_task(const SyntheticSpec& spec);

/// Moves the last n samples into a second dataset named `tail_name`.
std::pair<SequenceDataset, SequenceDataset> split_tail(const SequenceDataset& ds, std::size_t n,
                                                       const std::string& tail_name = "val");

SequenceDataset subset(const SequenceDataset& ds, const std::vector<std::size_t>& indices);

/// First n indices of a seeded shuffle of [0, ds.size()).
std::vector<std::size_t> seeded_subset_indices(std::size_t size, std::size_t n, std::uint64_t seed);

/// Packs samples indices[begin, end) into time-major n_in x B matrices.
SequenceBatch make_batch(const SequenceDataset& ds, const std::vector<std::size_t>& indices, std::size_t begin,
                         std::size_t end);

std::vector<std::size_t> iota_indices(std::size_t n);

}  // namespace brf::data
