#include "brf/analysis.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <thread>

#include "brf/autograd.hpp"

namespace brf::analysis {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string num(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

Matrix filter_normalized(const Matrix& reference, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix d(reference.rows(), reference.cols());
    // row-major draw order so the stream does not depend on storage order
    for (Eigen::Index i = 0; i < d.rows(); ++i)
        for (Eigen::Index j = 0; j < d.cols(); ++j) d(i, j) = n(rng);
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
        const double target = reference.row(i).norm();
        const double have = d.row(i).norm();
        if (target == 0.0 || have == 0.0) d.row(i).setZero();
        else d.row(i) *= target / have;
    }
    return d;
}

Directions filter_normalized_directions(const WeightSet& theta, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Directions d;
    d.eta_in = filter_normalized(theta.w_in, rng);
    d.eta_rec = filter_normalized(theta.w_rec, rng);
    d.xi_in = filter_normalized(theta.w_in, rng);
    d.xi_rec = filter_normalized(theta.w_rec, rng);
    return d;
}

std::vector<double> GridSpec::axis() const {
    if (points < 1) throw std::invalid_argument("grid needs at least one point");
    if (points == 1) return {0.5 * (lo + hi)};
    std::vector<double> a(points);
    for (int k = 0; k < points; ++k) a[k] = lo + (hi - lo) * k / (points - 1);
    // exact zero at the centre of symmetric grids
    if (points % 2 == 1 && lo == -hi) a[points / 2] = 0.0;
    return a;
}

double dataset_loss(const NetworkConfig& config, const WeightSet& w, const data::SequenceDataset& ds,
                    int batch_size) {
    const auto idx = data::iota_indices(ds.size());
    double total = 0.0;
    for (std::size_t s = 0; s < idx.size(); s += batch_size) {
        const std::size_t e = std::min(idx.size(), s + static_cast<std::size_t>(batch_size));
        const auto batch = data::make_batch(ds, idx, s, e);
        const auto tr = forward(config, w, batch, SpikeFunction::Heaviside, false);
        // a NaN membrane never crosses threshold, so it would otherwise look like silence
        if (!tr.u_re.back().allFinite()) return kInf;
        total += softmax_cross_entropy(tr.logits, batch.labels).loss * static_cast<double>(e - s);
    }
    return total / static_cast<double>(idx.size());
}

WeightSet perturbed(const WeightSet& theta, const Directions& d, double alpha, double beta) {
    WeightSet w = theta;
    w.w_in += alpha * d.eta_in + beta * d.xi_in;
    w.w_rec += alpha * d.eta_rec + beta * d.xi_rec;
    return w;
}

LandscapeGrid scan_landscape(const NetworkConfig& config, const WeightSet& theta, const data::SequenceDataset& ds,
                             const LandscapeOptions& options) {
    return scan_landscape(config, theta, filter_normalized_directions(theta, options.direction_seed), ds, options);
}

LandscapeGrid scan_landscape(const NetworkConfig& config, const WeightSet& theta, const Directions& directions,
                             const data::SequenceDataset& ds, const LandscapeOptions& options) {
    if (ds.size() == 0) throw data::DataError("landscape needs a non-empty dataset");
    LandscapeGrid g;
    g.alphas = options.grid.axis();
    g.betas = options.grid.axis();
    g.directions = directions;
    const auto na = static_cast<Eigen::Index>(g.alphas.size());
    const auto nb = static_cast<Eigen::Index>(g.betas.size());
    g.losses = Matrix::Constant(na, nb, kInf);

    std::atomic<Eigen::Index> next{0};
    auto worker = [&] {
        for (Eigen::Index k = next++; k < na * nb; k = next++) {
            const Eigen::Index i = k / nb, j = k % nb;
            double loss = kInf;
            try {
                loss = dataset_loss(config, perturbed(theta, directions, g.alphas[i], g.betas[j]), ds,
                                    options.batch_size);
            } catch (const std::exception&) {
            }
            g.losses(i, j) = std::isfinite(loss) ? loss : kInf;
        }
    };
    int n_threads = options.threads > 0 ? options.threads : static_cast<int>(std::thread::hardware_concurrency());
    n_threads = std::max(1, std::min<int>(n_threads, static_cast<int>(na * nb)));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    g.center_loss = dataset_loss(config, theta, ds, options.batch_size);
    return g;
}

Roughness roughness_metrics(const std::vector<double>& alphas, const std::vector<double>& betas,
                            const Matrix& f) {
    const auto na = f.rows(), nb = f.cols();
    if (na != static_cast<Eigen::Index>(alphas.size()) || nb != static_cast<Eigen::Index>(betas.size()))
        throw std::invalid_argument("roughness: axis lengths do not match the grid");
    Roughness r;
    const auto fin = [&](Eigen::Index i, Eigen::Index j) { return std::isfinite(f(i, j)); };

    Eigen::Index finite = 0;
    for (Eigen::Index k = 0; k < f.size(); ++k) finite += std::isfinite(f.data()[k]);
    r.coverage = static_cast<double>(finite) / static_cast<double>(f.size());
    r.complete = finite == f.size();

    double tv = 0.0;
    long pairs = 0;
    for (Eigen::Index i = 0; i < na; ++i)
        for (Eigen::Index j = 0; j < nb; ++j) {
            if (!fin(i, j)) continue;
            if (i + 1 < na && fin(i + 1, j)) tv += std::abs(f(i + 1, j) - f(i, j)), ++pairs;
            if (j + 1 < nb && fin(i, j + 1)) tv += std::abs(f(i, j + 1) - f(i, j)), ++pairs;
        }
    r.total_variation = pairs ? tv / pairs : 0.0;

    long interior = 0, violations = 0;
    for (Eigen::Index i = 1; i + 1 < na; ++i)
        for (Eigen::Index j = 1; j + 1 < nb; ++j) {
            bool ok = true;
            for (int di = -1; di <= 1 && ok; ++di)
                for (int dj = -1; dj <= 1; ++dj) ok = ok && fin(i + di, j + dj);
            if (!ok) continue;
            const double ha = 0.5 * (alphas[i + 1] - alphas[i - 1]);
            const double hb = 0.5 * (betas[j + 1] - betas[j - 1]);
            const double faa = (f(i + 1, j) - 2 * f(i, j) + f(i - 1, j)) / (ha * ha);
            const double fbb = (f(i, j + 1) - 2 * f(i, j) + f(i, j - 1)) / (hb * hb);
            const double fab = (f(i + 1, j + 1) - f(i + 1, j - 1) - f(i - 1, j + 1) + f(i - 1, j - 1)) / (4 * ha * hb);
            ++interior;
            if (faa * fbb - fab * fab < 0) ++violations;
        }
    r.convexity_violation = interior ? static_cast<double>(violations) / interior : 0.0;

    // centre: the cell closest to (0, 0)
    Eigen::Index ci = 0, cj = 0;
    for (Eigen::Index i = 0; i < na; ++i)
        if (std::abs(alphas[i]) < std::abs(alphas[ci])) ci = i;
    for (Eigen::Index j = 0; j < nb; ++j)
        if (std::abs(betas[j]) < std::abs(betas[cj])) cj = j;
    const double limit = 2.0 * f(ci, cj);
    double nearest_bad = kInf, farthest = 0.0;
    for (Eigen::Index i = 0; i < na; ++i)
        for (Eigen::Index j = 0; j < nb; ++j) {
            const double d = std::hypot(alphas[i] - alphas[ci], betas[j] - betas[cj]);
            farthest = std::max(farthest, d);
            if (!(f(i, j) <= limit)) nearest_bad = std::min(nearest_bad, d);
        }
    if (std::isinf(nearest_bad)) {
        r.basin_width = farthest;
    } else {
        double w = 0.0;
        for (Eigen::Index i = 0; i < na; ++i)
            for (Eigen::Index j = 0; j < nb; ++j) {
                const double d = std::hypot(alphas[i] - alphas[ci], betas[j] - betas[cj]);
                if (d < nearest_bad) w = std::max(w, d);
            }
        r.basin_width = w;
    }
    return r;
}

Roughness roughness_metrics(const LandscapeGrid& grid) {
    return roughness_metrics(grid.alphas, grid.betas, grid.losses);
}

PhaseMap phase_scan(double delta, double omega_lo, double omega_hi, double b_lo, double b_hi, int omega_points,
                    int b_points) {
    if (!(delta > 0)) throw dynamics::DomainError("phase scan needs delta > 0");
    if (omega_points < 1 || b_points < 1 || !(omega_hi > omega_lo) || !(b_hi > b_lo))
        throw std::invalid_argument("phase scan: empty range or resolution");
    PhaseMap m;
    m.delta = delta;
    for (int j = 0; j < omega_points; ++j) m.omegas.push_back(omega_lo + (omega_hi - omega_lo) * (j + 0.5) / omega_points);
    for (int i = 0; i < b_points; ++i) m.bs.push_back(b_lo + (b_hi - b_lo) * (i + 0.5) / b_points);
    m.radius.resize(b_points, omega_points);
    for (int i = 0; i < b_points; ++i)
        for (int j = 0; j < omega_points; ++j) m.radius(i, j) = dynamics::spectral_radius(m.bs[i], m.omegas[j], delta);
    for (double w : m.omegas) {
        if (delta * std::abs(w) < 1.0) {
            const double p = dynamics::divergence_boundary(std::abs(w), delta);
            m.boundary.push_back(p);
            m.boundary_radius.push_back(dynamics::spectral_radius(p, w, delta));
        } else {
            m.boundary.push_back(std::numeric_limits<double>::quiet_NaN());
            m.boundary_radius.push_back(std::numeric_limits<double>::quiet_NaN());
        }
    }
    return m;
}

NeuronTrace simulate_neuron(const SimulationSpec& s) {
    if (s.steps < 1) throw std::invalid_argument("simulation needs at least one step");
    if (!(s.delta > 0)) throw dynamics::DomainError("delta must be positive");
    auto flags = s.flags;
    double base = 0.0;
    if (s.b) {
        flags.divergence_boundary = false;
        base = *s.b;
    } else {
        if (flags.divergence_boundary) {
            if (!(s.omega >= 0) || !(s.delta * s.omega < 1)) {
                char buf[160];
                std::snprintf(buf, sizeof buf,
                              "omega = %g with delta = %g has no divergence boundary (needs 0 <= delta omega < 1, "
                              "i.e. omega < %g)",
                              s.omega, s.delta, 1.0 / s.delta);
                throw dynamics::DomainError(buf);
            }
            if (s.b_offset < 0) {
                char buf[160];
                std::snprintf(buf, sizeof buf,
                              "b_offset = %g would put b above the boundary p(%g) = %.10g; it must be >= 0",
                              s.b_offset, s.omega, dynamics::divergence_boundary(s.omega, s.delta));
                throw dynamics::DomainError(buf);
            }
        }
        base = dynamics::base_dampening(s.omega, s.b_offset, s.delta, flags);
    }

    NeuronTrace tr;
    double ur = 0.0, ui = 0.0, q = 0.0;
    for (int t = 0; t < s.steps; ++t) {
        double x = 0.0;
        switch (s.stimulus) {
            case Stimulus::Pulse: x = t < s.pulse_steps ? s.amplitude : 0.0; break;
            case Stimulus::Constant: x = s.amplitude; break;
            case Stimulus::Sinusoid: x = s.amplitude * std::sin(s.stimulus_omega * t * s.delta); break;
            case Stimulus::None: break;
        }
        const auto r = dynamics::resonator_update(ur, ui, q, s.omega, base, s.delta, flags, x, s.theta_c, s.gamma,
                                                  dynamics::heaviside);
        ur = r.u_re;
        ui = r.u_im;
        q = r.q;
        tr.input.push_back(x);
        tr.u_re.push_back(ur);
        tr.u_im.push_back(ui);
        tr.amplitude.push_back(std::hypot(ur, ui));
        tr.threshold.push_back(r.threshold);
        tr.dampening.push_back(r.dampening);
        tr.z.push_back(static_cast<int>(r.z));
    }
    return tr;
}

std::string to_string(Stimulus s) {
    switch (s) {
        case Stimulus::Pulse: return "pulse";
        case Stimulus::Constant: return "constant";
        case Stimulus::Sinusoid: return "sinusoid";
        case Stimulus::None: return "none";
    }
    return "?";
}

Stimulus stimulus_from_string(const std::string& s) {
    for (auto k : {Stimulus::Pulse, Stimulus::Constant, Stimulus::Sinusoid, Stimulus::None})
        if (to_string(k) == s) return k;
    throw std::invalid_argument("stimulus must be pulse, constant, sinusoid or none, got '" + s + "'");
}

std::string to_string(ProbeMode mode) { return mode == ProbeMode::Spiking ? "spiking" : "subthreshold"; }

ProbeMode probe_mode_from_string(const std::string& s) {
    if (s == "spiking") return ProbeMode::Spiking;
    if (s == "subthreshold") return ProbeMode::Subthreshold;
    throw std::invalid_argument("probe mode must be spiking or subthreshold, got '" + s + "'");
}

GradNormTrace gradient_norm_probe(const NetworkConfig& config, const WeightSet& w, const SequenceBatch& sample,
                                  ProbeMode mode) {
    if (sample.batch_size() != 1) throw ShapeError("gradient probe takes a single sample");
    NetworkConfig c = config;
    BackwardOptions opt;
    opt.record_adjoint_norms = true;
    Matrix dlogits;
    const auto tr0 = [&] {
        if (mode == ProbeMode::Subthreshold) c.theta_c = kInf;
        return forward(c, w, sample);
    }();
    if (mode == ProbeMode::Subthreshold) {
        dlogits = Matrix::Zero(c.n_out, 1);
        const bool resonator = c.kind == NeuronKind::Resonator;
        const double v = 1.0 / std::sqrt((resonator ? 2.0 : 1.0) * c.n_hidden);
        opt.terminal_u_re = Matrix::Constant(c.n_hidden, 1, v);
        if (resonator) opt.terminal_u_im = Matrix::Constant(c.n_hidden, 1, v);
    } else {
        if (sample.labels.size() != 1) throw ShapeError("spiking probe needs the sample label");
        dlogits = softmax_cross_entropy(tr0.logits, sample.labels).grad;
    }
    GradNormTrace g;
    g.mode = mode;
    g.norms = backward(c, w, tr0, dlogits, opt).adjoint_norms;
    return g;
}

std::string fnv1a_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (f.read(buf, sizeof buf) || f.gcount() > 0) {
        for (std::streamsize k = 0; k < f.gcount(); ++k) {
            h ^= static_cast<unsigned char>(buf[k]);
            h *= 0x100000001b3ULL;
        }
    }
    char out[17];
    std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
    return out;
}

std::string landscape_csv(const LandscapeGrid& g) {
    std::string s = "alpha,beta,loss\n";
    for (std::size_t i = 0; i < g.alphas.size(); ++i)
        for (std::size_t j = 0; j < g.betas.size(); ++j)
            s += num(g.alphas[i]) + "," + num(g.betas[j]) + "," + num(g.losses(i, j)) + "\n";
    return s;
}

std::string phase_csv(const PhaseMap& m) {
    std::string s = "omega,b,spectral_radius,divergent,boundary_b\n";
    for (std::size_t j = 0; j < m.omegas.size(); ++j)
        for (std::size_t i = 0; i < m.bs.size(); ++i)
            s += num(m.omegas[j]) + "," + num(m.bs[i]) + "," + num(m.radius(i, j)) + "," +
                 (m.divergent(i, j) ? "1" : "0") + "," + num(m.boundary[j]) + "\n";
    return s;
}

std::string gradflow_csv(const GradNormTrace& g) {
    std::string s = "t,adjoint_norm\n";
    for (std::size_t t = 0; t < g.norms.size(); ++t) s += std::to_string(t) + "," + num(g.norms[t]) + "\n";
    return s;
}

std::string trace_csv(const NeuronTrace& tr) {
    std::string s = "t,input,u_re,u_im,abs_u,theta,b,z\n";
    for (std::size_t t = 0; t < tr.u_re.size(); ++t)
        s += std::to_string(t) + "," + num(tr.input[t]) + "," + num(tr.u_re[t]) + "," + num(tr.u_im[t]) + "," +
             num(tr.amplitude[t]) + "," + num(tr.threshold[t]) + "," + num(tr.dampening[t]) + "," +
             std::to_string(tr.z[t]) + "\n";
    return s;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    f << text;
    if (!f) throw std::runtime_error("cannot write " + path.string());
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

}  // namespace brf::analysis
