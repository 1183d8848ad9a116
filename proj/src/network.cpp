#include "brf/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "brf/spike_ops.hpp"

namespace brf {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

Matrix uniform_matrix(std::mt19937_64& rng, int rows, int cols, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix m(rows, cols);
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = dist(rng);
    }
    return m;
}

Vector uniform_vector(std::mt19937_64& rng, int n, Range range) {
    std::uniform_real_distribution<double> dist(range.lo, range.hi);
    Vector v(n);
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = dist(rng);
    return v;
}

nlohmann::json number_to_json(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

double number_from_json(const nlohmann::json& j) {
    if (j.is_number()) return j.get<double>();
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    return std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double logit(double p) { return std::log(p / (1.0 - p)); }

double xavier_bound(int fan_in, int fan_out) { return std::sqrt(6.0 / (fan_in + fan_out)); }

void NetworkConfig::validate() const {
    require(n_in >= 1 && n_hidden >= 1 && n_out >= 1, "network dimensions must be >= 1");
    if (!(delta > 0.0)) throw dynamics::DomainError("delta must be positive");
    surrogate.validate();
    if (kind == NeuronKind::Resonator) {
        if (!(init.omega.lo > 0.0) || init.omega.hi < init.omega.lo) {
            throw dynamics::DomainError("omega init range must satisfy 0 < lo <= hi");
        }
        if (!(delta * init.omega.hi < 1.0)) {
            throw dynamics::DomainError("omega init range violates delta*omega < 1 (delta=" +
                                        std::to_string(delta) + ", omega_hi=" +
                                        std::to_string(init.omega.hi) + ")");
        }
        if (!(init.b_offset.lo >= 0.0) || init.b_offset.hi < init.b_offset.lo) {
            throw dynamics::DomainError("b_offset init range must satisfy 0 <= lo <= hi");
        }
    } else {
        const auto in_unit = [](Range r) { return r.lo > 0.0 && r.hi < 1.0 && r.lo <= r.hi; };
        if (!in_unit(init.alif_alpha) || !in_unit(init.alif_rho)) {
            throw dynamics::DomainError("ALIF decay ranges must lie inside (0, 1)");
        }
        if (!(init.alif_beta >= 0.0)) throw dynamics::DomainError("ALIF beta must be >= 0");
    }
    if (!(init.readout_decay > 0.0 && init.readout_decay < 1.0)) {
        throw dynamics::DomainError("readout decay must lie inside (0, 1)");
    }
}

WeightSet WeightSet::zeros_like() const {
    WeightSet z = *this;
    z.for_each([](const char*, auto& m) { m.setZero(); });
    return z;
}

std::size_t WeightSet::parameter_count() const {
    std::size_t n = 0;
    for_each([&](const char*, const auto& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
}

bool WeightSet::all_finite() const {
    bool ok = true;
    for_each([&](const char*, const auto& m) { ok = ok && m.allFinite(); });
    return ok;
}

bool WeightSet::operator==(const WeightSet& o) const {
    const auto same = [](const auto& a, const auto& b) {
        return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
    };
    return same(w_in, o.w_in) && same(w_rec, o.w_rec) && same(w_out, o.w_out) && same(omega, o.omega) &&
           same(b_offset, o.b_offset) && same(alif_alpha_raw, o.alif_alpha_raw) &&
           same(alif_rho_raw, o.alif_rho_raw) && same(alif_beta, o.alif_beta) &&
           same(readout_decay_raw, o.readout_decay_raw);
}

Vector WeightSet::readout_decay() const { return readout_decay_raw.unaryExpr(&sigmoid); }
Vector WeightSet::alif_alpha() const { return alif_alpha_raw.unaryExpr(&sigmoid); }
Vector WeightSet::alif_rho() const { return alif_rho_raw.unaryExpr(&sigmoid); }

dynamics::NeuronState Trajectory::state(int t, int neuron, int sample) const {
    dynamics::NeuronState s;
    s.u_re = u_re.at(t)(neuron, sample);
    if (!u_im.empty()) s.u_im = u_im.at(t)(neuron, sample);
    if (!q.empty()) s.q = q.at(t)(neuron, sample);
    return s;
}

WeightSet init_network(const NetworkConfig& config) {
    config.validate();
    std::mt19937_64 rng(config.seed);
    const int n_in = config.n_in, n_h = config.n_hidden, n_out = config.n_out;
    WeightSet w;
    w.w_in = uniform_matrix(rng, n_h, n_in, xavier_bound(n_in, n_h));
    w.w_rec = uniform_matrix(rng, n_h, n_h, xavier_bound(n_h, n_h));
    w.w_out = uniform_matrix(rng, n_out, n_h, xavier_bound(n_h, n_out));
    if (config.kind == NeuronKind::Resonator) {
        w.omega = uniform_vector(rng, n_h, config.init.omega);
        w.b_offset = uniform_vector(rng, n_h, config.init.b_offset);
    } else {
        w.alif_alpha_raw = uniform_vector(rng, n_h, config.init.alif_alpha).unaryExpr(&logit);
        w.alif_rho_raw = uniform_vector(rng, n_h, config.init.alif_rho).unaryExpr(&logit);
        w.alif_beta = Vector::Constant(n_h, config.init.alif_beta);
    }
    w.readout_decay_raw = Vector::Constant(n_out, logit(config.init.readout_decay));
    return w;
}

namespace {

void check_shapes(const NetworkConfig& config, const WeightSet& w, const SequenceBatch& batch) {
    const int n_h = config.n_hidden;
    require(w.w_in.rows() == n_h && w.w_in.cols() == config.n_in, "w_in shape mismatch");
    require(w.w_rec.rows() == n_h && w.w_rec.cols() == n_h, "w_rec shape mismatch");
    require(w.w_out.rows() == config.n_out && w.w_out.cols() == n_h, "w_out shape mismatch");
    require(w.readout_decay_raw.size() == config.n_out, "readout decay shape mismatch");
    if (config.kind == NeuronKind::Resonator) {
        require(w.omega.size() == n_h && w.b_offset.size() == n_h, "resonator parameter shape mismatch");
    } else {
        require(w.alif_alpha_raw.size() == n_h && w.alif_rho_raw.size() == n_h && w.alif_beta.size() == n_h,
                "ALIF parameter shape mismatch");
    }
    require(batch.length() >= 1, "empty sequence batch");
    const auto b = batch.steps.front().cols();
    require(b >= 1, "empty batch");
    for (const auto& s : batch.steps) {
        require(s.rows() == config.n_in && s.cols() == b, "input step shape mismatch: expected " +
                                                              std::to_string(config.n_in) + " x " +
                                                              std::to_string(b));
    }
    if (!batch.labels.empty()) require(static_cast<Eigen::Index>(batch.labels.size()) == b, "label count mismatch");
}

}  // namespace

Trajectory forward(const NetworkConfig& config, const WeightSet& w, const SequenceBatch& batch,
                   SpikeFunction spike_function, bool keep_history) {
    check_shapes(config, w, batch);
    const int T = batch.length();
    const Eigen::Index B = batch.batch_size();
    const int n_h = config.n_hidden;
    const bool relaxed = spike_function == SpikeFunction::Relaxed;
    const auto& surrogate = config.surrogate;
    const auto spike_fn = [&](double v) {
        return relaxed ? surrogate_step(v, surrogate) : dynamics::heaviside(v);
    };

    Trajectory tr;
    tr.kind = config.kind;
    tr.spike_function = spike_function;
    if (keep_history) tr.inputs = batch.steps;
    tr.z.reserve(T);
    tr.y.reserve(T);
    tr.u_re.reserve(T);

    const Vector decay = w.readout_decay();
    const auto flags = config.flags;
    const bool resonator = config.kind == NeuronKind::Resonator;

    Vector base_b, alpha, rho;
    if (resonator) {
        base_b.resize(n_h);
        for (int i = 0; i < n_h; ++i) {
            base_b(i) = dynamics::base_dampening(w.omega(i), w.b_offset(i), config.delta, flags);
        }
        tr.u_im.reserve(T);
        if (flags.tracks_refractory()) tr.q.reserve(T);
    } else {
        alpha = w.alif_alpha();
        rho = w.alif_rho();
        tr.eta.reserve(T);
        tr.net_input.reserve(T);
    }

    Matrix zero_h = Matrix::Zero(n_h, B);
    Matrix y_prev = Matrix::Zero(config.n_out, B);
    Matrix y_sum = Matrix::Zero(config.n_out, B);

    for (int t = 0; t < T; ++t) {
        const Matrix& z_prev = t == 0 ? zero_h : tr.z.back();
        Matrix x = w.w_in * batch.steps[t];
        if (t > 0) add_product(w.w_rec, z_prev, x, relaxed);

        Matrix z(n_h, B);
        if (resonator) {
            const Matrix& ur_prev = t == 0 ? zero_h : tr.u_re.back();
            const Matrix& ui_prev = t == 0 ? zero_h : tr.u_im.back();
            const Matrix& q_prev = (t == 0 || !flags.tracks_refractory()) ? zero_h : tr.q.back();
            Matrix ur(n_h, B), ui(n_h, B), q(n_h, B), ur_pre, ui_pre;
            if (flags.hard_reset) {
                ur_pre.resize(n_h, B);
                ui_pre.resize(n_h, B);
            }
            for (Eigen::Index b = 0; b < B; ++b) {
                for (int i = 0; i < n_h; ++i) {
                    const auto r = dynamics::resonator_update(ur_prev(i, b), ui_prev(i, b), q_prev(i, b),
                                                              w.omega(i), base_b(i), config.delta, flags,
                                                              x(i, b), config.theta_c, config.gamma, spike_fn);
                    ur(i, b) = r.u_re;
                    ui(i, b) = r.u_im;
                    q(i, b) = r.q;
                    z(i, b) = r.z;
                    if (flags.hard_reset) {
                        ur_pre(i, b) = r.u_re_pre;
                        ui_pre(i, b) = r.u_im_pre;
                    }
                }
            }
            tr.u_re.push_back(std::move(ur));
            tr.u_im.push_back(std::move(ui));
            if (flags.tracks_refractory()) tr.q.push_back(std::move(q));
            if (flags.hard_reset) {
                tr.u_re_pre.push_back(std::move(ur_pre));
                tr.u_im_pre.push_back(std::move(ui_pre));
            }
        } else {
            const Matrix& u_prev = t == 0 ? zero_h : tr.u_re.back();
            const Matrix& eta_prev = t == 0 ? zero_h : tr.eta.back();
            Matrix u(n_h, B), eta(n_h, B);
            for (Eigen::Index b = 0; b < B; ++b) {
                for (int i = 0; i < n_h; ++i) {
                    const dynamics::ALIFParams p{alpha(i), rho(i), w.alif_beta(i), config.theta_c};
                    const auto r = dynamics::alif_update(u_prev(i, b), eta_prev(i, b), z_prev(i, b), p, x(i, b),
                                                         spike_fn);
                    u(i, b) = r.u;
                    eta(i, b) = r.eta;
                    z(i, b) = r.z;
                }
            }
            tr.u_re.push_back(std::move(u));
            tr.eta.push_back(std::move(eta));
            tr.net_input.push_back(std::move(x));
        }

        Matrix drive = Matrix::Zero(config.n_out, B);
        add_product(w.w_out, z, drive, relaxed);
        Matrix y(config.n_out, B);
        for (Eigen::Index b = 0; b < B; ++b) {
            for (int k = 0; k < config.n_out; ++k) {
                y(k, b) = dynamics::li_step(y_prev(k, b), decay(k), drive(k, b));
            }
        }
        y_sum += y;
        y_prev = y;
        tr.spike_total += static_cast<std::uint64_t>((z.array() > 0.5).count());
        tr.z.push_back(std::move(z));
        tr.y.push_back(std::move(y));
        if (!keep_history) {
            for (auto* v : {&tr.u_re, &tr.u_im, &tr.u_re_pre, &tr.u_im_pre, &tr.q, &tr.eta, &tr.net_input, &tr.z, &tr.y})
                if (v->size() > 1) v->erase(v->begin());
        }
    }

    tr.logits = config.readout == ReadoutReduction::Mean ? Matrix(y_sum / static_cast<double>(T)) : y_prev;
    return tr;
}

SpikeCounts count_spikes(const Trajectory& trajectory) {
    SpikeCounts c;
    if (trajectory.z.empty()) return c;
    const auto n_h = trajectory.z.front().rows();
    c.per_neuron.assign(static_cast<std::size_t>(n_h), 0);
    for (const auto& z : trajectory.z) {
        for (Eigen::Index b = 0; b < z.cols(); ++b) {
            for (Eigen::Index i = 0; i < n_h; ++i) {
                if (z(i, b) >= 0.5) ++c.per_neuron[static_cast<std::size_t>(i)];
            }
        }
    }
    for (auto n : c.per_neuron) c.total += n;
    return c;
}

Matrix effective_dampening_at(const NetworkConfig& config, const WeightSet& w, const Trajectory& tr, int t) {
    require(config.kind == NeuronKind::Resonator, "effective dampening is defined for resonators only");
    const auto n_h = config.n_hidden;
    const auto B = tr.batch_size();
    Matrix b(n_h, B);
    for (Eigen::Index s = 0; s < B; ++s) {
        for (int i = 0; i < n_h; ++i) {
            const double q_prev = (t == 0 || tr.q.empty()) ? 0.0 : tr.q[t - 1](i, s);
            b(i, s) = dynamics::effective_dampening(w.omega(i), w.b_offset(i), config.delta, q_prev, config.flags);
        }
    }
    return b;
}

LossResult softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels) {
    require(static_cast<Eigen::Index>(labels.size()) == logits.cols(), "label count does not match logits");
    LossResult r;
    r.grad.resize(logits.rows(), logits.cols());
    const double inv_b = 1.0 / static_cast<double>(logits.cols());
    double total = 0.0;
    for (Eigen::Index b = 0; b < logits.cols(); ++b) {
        const int label = labels[static_cast<std::size_t>(b)];
        require(label >= 0 && label < logits.rows(), "label out of range");
        const auto col = logits.col(b);
        const double m = col.maxCoeff();
        double sum = 0.0;
        for (Eigen::Index k = 0; k < col.size(); ++k) sum += std::exp(col(k) - m);
        const double log_z = m + std::log(sum);
        total += log_z - col(label);
        Eigen::Index arg = 0;
        col.maxCoeff(&arg);
        if (arg == label) ++r.correct;
        for (Eigen::Index k = 0; k < col.size(); ++k) {
            r.grad(k, b) = (std::exp(col(k) - log_z) - (k == label ? 1.0 : 0.0)) * inv_b;
        }
    }
    r.loss = total * inv_b;
    return r;
}

std::string to_string(NeuronKind kind) { return kind == NeuronKind::Resonator ? "resonator" : "alif"; }

NeuronKind neuron_kind_from_string(const std::string& s) {
    if (s == "resonator" || s == "brf" || s == "rf") return NeuronKind::Resonator;
    if (s == "alif") return NeuronKind::ALIF;
    throw std::invalid_argument("unknown neuron kind '" + s + "'");
}

std::string to_string(ReadoutReduction r) { return r == ReadoutReduction::Mean ? "mean" : "last"; }

ReadoutReduction readout_from_string(const std::string& s) {
    if (s == "mean") return ReadoutReduction::Mean;
    if (s == "last") return ReadoutReduction::Last;
    throw std::invalid_argument("unknown readout reduction '" + s + "'");
}

std::string flags_to_string(dynamics::ResonatorFlags f) {
    if (f == dynamics::ResonatorFlags::brf()) return "brf";
    std::string out;
    const auto add = [&](bool on, const char* name) {
        if (!on) return;
        if (!out.empty()) out += '+';
        out += name;
    };
    add(f.refractory_period, "rp");
    add(f.smooth_reset, "sr");
    add(f.divergence_boundary, "db");
    add(f.hard_reset, "hr");
    return out.empty() ? "none" : out;
}

dynamics::ResonatorFlags flags_from_string(const std::string& s) {
    if (s == "brf") return dynamics::ResonatorFlags::brf();
    dynamics::ResonatorFlags f = dynamics::ResonatorFlags::vanilla();
    if (s == "none" || s.empty()) return f;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, '+')) {
        if (tok == "rp") f.refractory_period = true;
        else if (tok == "sr") f.smooth_reset = true;
        else if (tok == "db") f.divergence_boundary = true;
        else if (tok == "hr") f.hard_reset = true;
        else throw std::invalid_argument("unknown resonator flag '" + tok + "' (expected rp, sr, db, hr)");
    }
    return f;
}

nlohmann::json matrix_to_json(const Matrix& m) {
    std::vector<double> data(m.data(), m.data() + m.size());
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw ShapeError("matrix payload size mismatch");
    return Eigen::Map<const Matrix>(data.data(), rows, cols);
}

nlohmann::json config_to_json(const NetworkConfig& c) {
    const auto range = [](Range r) { return nlohmann::json::array({r.lo, r.hi}); };
    return {
        {"n_in", c.n_in},
        {"n_hidden", c.n_hidden},
        {"n_out", c.n_out},
        {"kind", to_string(c.kind)},
        {"flags", flags_to_string(c.flags)},
        {"delta", c.delta},
        {"theta_c", number_to_json(c.theta_c)},
        {"gamma", c.gamma},
        {"readout", to_string(c.readout)},
        {"surrogate", {{"h", c.surrogate.h}, {"sigma", c.surrogate.sigma}, {"scale", c.surrogate.scale}, {"gain", c.surrogate.gain}}},
        {"backprop_refractory", c.backprop_refractory},
        {"init",
         {{"omega", range(c.init.omega)},
          {"b_offset", range(c.init.b_offset)},
          {"readout_decay", c.init.readout_decay},
          {"alif_alpha", range(c.init.alif_alpha)},
          {"alif_rho", range(c.init.alif_rho)},
          {"alif_beta", c.init.alif_beta}}},
        {"seed", c.seed},
    };
}

NetworkConfig config_from_json(const nlohmann::json& j) {
    const auto range = [](const nlohmann::json& a) { return Range{a.at(0).get<double>(), a.at(1).get<double>()}; };
    NetworkConfig c;
    c.n_in = j.at("n_in").get<int>();
    c.n_hidden = j.at("n_hidden").get<int>();
    c.n_out = j.at("n_out").get<int>();
    c.kind = neuron_kind_from_string(j.at("kind").get<std::string>());
    c.flags = flags_from_string(j.at("flags").get<std::string>());
    c.delta = j.at("delta").get<double>();
    c.theta_c = number_from_json(j.at("theta_c"));
    c.gamma = j.at("gamma").get<double>();
    c.readout = readout_from_string(j.at("readout").get<std::string>());
    const auto& s = j.at("surrogate");
    c.surrogate = {s.at("h").get<double>(), s.at("sigma").get<double>(), s.at("scale").get<double>(),
                   s.value("gain", 1.0)};
    c.backprop_refractory = j.at("backprop_refractory").get<bool>();
    const auto& init = j.at("init");
    c.init.omega = range(init.at("omega"));
    c.init.b_offset = range(init.at("b_offset"));
    c.init.readout_decay = init.at("readout_decay").get<double>();
    c.init.alif_alpha = range(init.at("alif_alpha"));
    c.init.alif_rho = range(init.at("alif_rho"));
    c.init.alif_beta = init.at("alif_beta").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    nlohmann::json weights;
    ck.weights.for_each([&](const char* name, const auto& m) { weights[name] = matrix_to_json(m); });
    nlohmann::json doc = {
        {"format", kCheckpointFormat},
        {"config", config_to_json(ck.config)},
        {"seed", ck.config.seed},
        {"epoch", ck.epoch},
        {"weights", weights},
        {"optimizer", ck.optimizer},
    };
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out << doc.dump();
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("checkpoint " + path.string() + " is not valid JSON: " + e.what());
    }
    if (doc.value("format", "") != kCheckpointFormat) {
        throw std::runtime_error("checkpoint " + path.string() + " has unsupported format tag '" +
                                 doc.value("format", "") + "'");
    }
    Checkpoint ck;
    ck.config = config_from_json(doc.at("config"));
    ck.epoch = doc.at("epoch").get<int>();
    ck.optimizer = doc.at("optimizer");
    const auto& weights = doc.at("weights");
    ck.weights.for_each([&](const char* name, auto& m) {
        const Matrix loaded = matrix_from_json(weights.at(name));
        if constexpr (std::is_same_v<std::decay_t<decltype(m)>, Vector>) {
            m = Eigen::Map<const Vector>(loaded.data(), loaded.size());
        } else {
            m = loaded;
        }
    });
    return ck;
}

}  // namespace brf
