#include "brf/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <zlib.h>

namespace brf::data {

namespace {

// gzread passes uncompressed files through unchanged.
class GzFile {
public:
    explicit GzFile(const std::filesystem::path& p) : path_(p.string()), f_(gzopen(path_.c_str(), "rb")) {
        if (!f_) throw DataError("cannot open " + path_);
    }
    ~GzFile() { gzclose(f_); }
    GzFile(const GzFile&) = delete;
    GzFile& operator=(const GzFile&) = delete;

    void read(void* dst, std::size_t n, const char* what) {
        auto* out = static_cast<unsigned char*>(dst);
        while (n > 0) {
            const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
            const int got = gzread(f_, out, chunk);
            if (got <= 0) throw DataError(path_ + ": truncated while reading " + what);
            out += got;
            n -= static_cast<std::size_t>(got);
        }
    }

    std::uint32_t be32(const char* what) {
        unsigned char b[4];
        read(b, 4, what);
        return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
    }

    const std::string& path() const { return path_; }

private:
    std::string path_;
    gzFile f_;
};

std::filesystem::path find_file(const std::filesystem::path& root, const std::string& stem) {
    for (const auto& name : {stem, stem + ".gz"}) {
        if (std::filesystem::exists(root / name)) return root / name;
    }
    throw DataError("no " + stem + "[.gz] under " + root.string());
}

}  // namespace

MnistImages load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
    MnistImages out;
    GzFile fi(images);
    if (const auto m = fi.be32("magic"); m != 0x803)
        throw DataError(fi.path() + ": bad magic " + std::to_string(m) + " (expected 2051)");
    const std::uint32_t n_img = fi.be32("count");
    out.rows = static_cast<int>(fi.be32("rows"));
    out.cols = static_cast<int>(fi.be32("cols"));
    if (out.rows <= 0 || out.cols <= 0 || out.rows > 4096 || out.cols > 4096)
        throw DataError(fi.path() + ": implausible image size");

    GzFile fl(labels);
    if (const auto m = fl.be32("magic"); m != 0x801)
        throw DataError(fl.path() + ": bad magic " + std::to_string(m) + " (expected 2049)");
    const std::uint32_t n_lab = fl.be32("count");
    if (n_img != n_lab)
        throw DataError("image/label count mismatch: " + std::to_string(n_img) + " vs " + std::to_string(n_lab));

    out.pixels.resize(std::size_t{n_img} * out.rows * out.cols);
    fi.read(out.pixels.data(), out.pixels.size(), "pixels");
    std::vector<std::uint8_t> raw(n_lab);
    fl.read(raw.data(), raw.size(), "labels");
    out.labels.assign(raw.begin(), raw.end());
    return out;
}

MnistImages load_mnist(const std::filesystem::path& root, const std::string& split) {
    std::string prefix;
    if (split == "train") prefix = "train";
    else if (split == "test") prefix = "t10k";
    else throw DataError("unknown MNIST split '" + split + "'");
    return load_mnist_idx(find_file(root, prefix + "-images-idx3-ubyte"), find_file(root, prefix + "-labels-idx1-ubyte"));
}

void SequenceDataset::validate() const {
    if (T <= 0 || n_in <= 0 || n_classes < 2) throw DataError("dataset '" + split + "': bad metadata");
    if (values.size() != labels.size() * static_cast<std::size_t>(T) * n_in)
        throw DataError("dataset '" + split + "': value count does not match T * n_in * size");
    for (int y : labels)
        if (y < 0 || y >= n_classes) throw DataError("dataset '" + split + "': label out of range");
}

SequenceDataset to_sequential(const MnistImages& images, std::string split) {
    SequenceDataset ds;
    ds.T = images.pixels_per_image();
    ds.n_in = 1;
    ds.n_classes = 10;
    ds.split = std::move(split);
    ds.labels = images.labels;
    ds.values.resize(images.pixels.size());
    std::transform(images.pixels.begin(), images.pixels.end(), ds.values.begin(),
                   [](std::uint8_t p) { return p / 255.0; });
    ds.validate();
    return ds;
}

PermutationSpec PermutationSpec::make(std::uint64_t seed, int n) {
    PermutationSpec s = identity(n);
    s.seed = seed;
    std::mt19937_64 rng(seed);
    std::shuffle(s.permutation.begin(), s.permutation.end(), rng);
    return s;
}

PermutationSpec PermutationSpec::identity(int n) {
    PermutationSpec s;
    s.permutation.resize(n);
    std::iota(s.permutation.begin(), s.permutation.end(), 0);
    return s;
}

PermutationSpec PermutationSpec::inverse() const {
    PermutationSpec s = *this;
    for (std::size_t t = 0; t < permutation.size(); ++t) s.permutation[permutation[t]] = static_cast<int>(t);
    return s;
}

bool PermutationSpec::is_bijection() const {
    auto sorted = permutation;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t k = 0; k < sorted.size(); ++k)
        if (sorted[k] != static_cast<int>(k)) return false;
    return true;
}

SequenceDataset permute(const SequenceDataset& ds, const PermutationSpec& spec) {
    if (static_cast<int>(spec.permutation.size()) != ds.T)
        throw DataError("permutation length " + std::to_string(spec.permutation.size()) + " != sequence length " +
                        std::to_string(ds.T));
    if (!spec.is_bijection()) throw DataError("permutation is not a bijection");
    SequenceDataset out = ds;
    for (std::size_t i = 0; i < ds.size(); ++i)
        for (int t = 0; t < ds.T; ++t)
            for (int j = 0; j < ds.n_in; ++j)
                out.values[(i * ds.T + t) * ds.n_in + j] = ds.at(i, spec.permutation[t], j);
    return out;
}

std::vector<double> class_frequencies(const SyntheticSpec& spec) {
    std::vector<double> w(spec.n_classes);
    const double step = (spec.omega_hi - spec.omega_lo) / spec.n_classes;
    for (int k = 0; k < spec.n_classes; ++k) w[k] = spec.omega_lo + (k + 0.5) * step;
    return w;
}

std::pair<SequenceDataset, SequenceDataset> synthetic_resonance_task(const SyntheticSpec& spec) {
    if (spec.n_classes < 2) throw DataError("synthetic task needs at least 2 classes");
    if (spec.T < 50) throw DataError("synthetic task needs T >= 50");
    if (spec.n_train < 0 || spec.n_test < 0 || spec.noise < 0 || !(spec.delta > 0) ||
        !(spec.omega_hi > spec.omega_lo) || !(spec.omega_lo > 0))
        throw DataError("bad synthetic task parameters");

    const auto omega = class_frequencies(spec);
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::normal_distribution<double> gauss(0.0, 1.0);

    auto make = [&](int n, const char* name) {
        SequenceDataset ds;
        ds.T = spec.T;
        ds.n_in = 1;
        ds.n_classes = spec.n_classes;
        ds.split = name;
        ds.values.resize(static_cast<std::size_t>(n) * spec.T);
        ds.labels.resize(n);
        for (int i = 0; i < n; ++i) {
            const int k = i % spec.n_classes;
            const double phi = phase(rng);
            ds.labels[i] = k;
            for (int t = 0; t < spec.T; ++t) {
                double v = std::sin(omega[k] * t * spec.delta + phi);
                if (spec.noise > 0) v += spec.noise * std::clamp(gauss(rng), -3.0, 3.0);
                ds.values[static_cast<std::size_t>(i) * spec.T + t] = v;
            }
        }
        return ds;
    };
    auto train = make(spec.n_train, "train");
    auto test = make(spec.n_test, "test");
    return {std::move(train), std::move(test)};
}

std::pair<SequenceDataset, SequenceDataset> split_tail(const SequenceDataset& ds, std::size_t n,
                                                       const std::string& tail_name) {
    if (n > ds.size()) throw DataError("cannot split off more samples than the dataset holds");
    const std::size_t head = ds.size() - n;
    const std::size_t stride = static_cast<std::size_t>(ds.T) * ds.n_in;
    SequenceDataset a = ds, b = ds;
    a.values.assign(ds.values.begin(), ds.values.begin() + head * stride);
    a.labels.assign(ds.labels.begin(), ds.labels.begin() + head);
    b.values.assign(ds.values.begin() + head * stride, ds.values.end());
    b.labels.assign(ds.labels.begin() + head, ds.labels.end());
    b.split = tail_name;
    return {std::move(a), std::move(b)};
}

SequenceDataset subset(const SequenceDataset& ds, const std::vector<std::size_t>& indices) {
    SequenceDataset out = ds;
    const std::size_t stride = static_cast<std::size_t>(ds.T) * ds.n_in;
    out.values.resize(indices.size() * stride);
    out.labels.resize(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (indices[k] >= ds.size()) throw DataError("subset index out of range");
        std::copy_n(ds.values.begin() + indices[k] * stride, stride, out.values.begin() + k * stride);
        out.labels[k] = ds.labels[indices[k]];
    }
    return out;
}

std::vector<std::size_t> iota_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

std::vector<std::size_t> seeded_subset_indices(std::size_t size, std::size_t n, std::uint64_t seed) {
    auto v = iota_indices(size);
    std::mt19937_64 rng(seed);
    std::shuffle(v.begin(), v.end(), rng);
    v.resize(std::min(n, size));
    return v;
}

SequenceBatch make_batch(const SequenceDataset& ds, const std::vector<std::size_t>& indices, std::size_t begin,
                         std::size_t end) {
    if (begin > end || end > indices.size()) throw DataError("batch range out of bounds");
    const Eigen::Index B = static_cast<Eigen::Index>(end - begin);
    SequenceBatch batch;
    batch.steps.assign(ds.T, Matrix(ds.n_in, B));
    batch.labels.resize(B);
    for (Eigen::Index b = 0; b < B; ++b) {
        const std::size_t i = indices[begin + b];
        batch.labels[b] = ds.labels[i];
        for (int t = 0; t < ds.T; ++t)
            for (int j = 0; j < ds.n_in; ++j) batch.steps[t](j, b) = ds.at(i, t, j);
    }
    return batch;
}

}  // namespace brf::data
