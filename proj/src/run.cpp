#include "brf/run.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <random>
#include <sstream>
#include <variant>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#define TOML_EXCEPTIONS 1
#include "toml.hpp"

#ifndef BRF_VERSION
#define BRF_VERSION "0.0.0"
#endif
#ifndef BRF_GIT_DESCRIBE
#define BRF_GIT_DESCRIBE "unknown"
#endif

namespace brf::run {

namespace fs = std::filesystem;

std::string version_string() { return std::string("brf ") + BRF_VERSION + " (" + BRF_GIT_DESCRIBE + ")"; }

void configure_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 256 << 20);
#endif
}

namespace {

using Field = std::variant<std::string RunConfig::*, int RunConfig::*, long RunConfig::*, double RunConfig::*,
                           bool RunConfig::*>;

const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> f{
        {"task", &RunConfig::task},
        {"model", &RunConfig::model},
        {"flags", &RunConfig::flags},
        {"hidden", &RunConfig::hidden},
        {"epochs", &RunConfig::epochs},
        {"batch_size", &RunConfig::batch_size},
        {"eval_batch_size", &RunConfig::eval_batch_size},
        {"lr", &RunConfig::lr},
        {"lr_neuron", &RunConfig::lr_neuron},
        {"grad_clip", &RunConfig::grad_clip},
        {"delta", &RunConfig::delta},
        {"gamma", &RunConfig::gamma},
        {"theta_c", &RunConfig::theta_c},
        {"readout", &RunConfig::readout},
        {"readout_decay", &RunConfig::readout_decay},
        {"surrogate_h", &RunConfig::surrogate_h},
        {"surrogate_sigma", &RunConfig::surrogate_sigma},
        {"surrogate_scale", &RunConfig::surrogate_scale},
        {"surrogate_gain", &RunConfig::surrogate_gain},
        {"omega_lo", &RunConfig::omega_lo},
        {"omega_hi", &RunConfig::omega_hi},
        {"b_offset_lo", &RunConfig::b_offset_lo},
        {"b_offset_hi", &RunConfig::b_offset_hi},
        {"alif_alpha_lo", &RunConfig::alif_alpha_lo},
        {"alif_alpha_hi", &RunConfig::alif_alpha_hi},
        {"alif_rho_lo", &RunConfig::alif_rho_lo},
        {"alif_rho_hi", &RunConfig::alif_rho_hi},
        {"alif_beta", &RunConfig::alif_beta},
        {"backprop_refractory", &RunConfig::backprop_refractory},
        {"seed", &RunConfig::seed},
        {"data_dir", &RunConfig::data_dir},
        {"data_seed", &RunConfig::data_seed},
        {"train_subset", &RunConfig::train_subset},
        {"val_size", &RunConfig::val_size},
        {"test_subset", &RunConfig::test_subset},
        {"permutation_seed", &RunConfig::permutation_seed},
        {"syn_classes", &RunConfig::syn_classes},
        {"syn_T", &RunConfig::syn_T},
        {"syn_train", &RunConfig::syn_train},
        {"syn_test", &RunConfig::syn_test},
        {"syn_noise", &RunConfig::syn_noise},
        {"syn_omega_lo", &RunConfig::syn_omega_lo},
        {"syn_omega_hi", &RunConfig::syn_omega_hi},
    };
    return f;
}

const Field& field(const std::string& key) {
    for (const auto& [k, f] : fields())
        if (k == key) return f;
    throw UsageError("unknown config key '" + key + "'");
}

std::string num(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

template <class T>
T parse_integer(const std::string& key, const std::string& s) {
    std::size_t used = 0;
    long long v = 0;
    try {
        v = std::stoll(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty()) throw UsageError("config key '" + key + "' expects an integer, got '" + s + "'");
    return static_cast<T>(v);
}

double parse_double(const std::string& key, const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size())
        throw UsageError("config key '" + key + "' expects a number, got '" + s + "'");
    return v;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    f << text;
    if (!f) throw std::runtime_error("cannot write " + p.string());
}

double elapsed(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& [k, f] : fields()) keys.push_back(k);
    return keys;
}

void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
    std::visit(
        [&](auto member) {
            using T = std::remove_reference_t<decltype(c.*member)>;
            if constexpr (std::is_same_v<T, std::string>) c.*member = value;
            else if constexpr (std::is_same_v<T, bool>) {
                if (value == "true" || value == "1") c.*member = true;
                else if (value == "false" || value == "0") c.*member = false;
                else throw UsageError("config key '" + key + "' expects true or false, got '" + value + "'");
            } else if constexpr (std::is_same_v<T, double>) c.*member = parse_double(key, value);
            else c.*member = parse_integer<T>(key, value);
        },
        field(key));
}

std::string get_config_value(const RunConfig& c, const std::string& key) {
    return std::visit(
        [&](auto member) -> std::string {
            using T = std::remove_cvref_t<decltype(c.*member)>;
            if constexpr (std::is_same_v<T, std::string>) return c.*member;
            else if constexpr (std::is_same_v<T, bool>) return c.*member ? "true" : "false";
            else if constexpr (std::is_same_v<T, double>) return num(c.*member);
            else return std::to_string(c.*member);
        },
        field(key));
}

std::string config_to_toml(const RunConfig& c) {
    std::ostringstream os;
    os << "# " << version_string() << "\n";
    for (const auto& [key, f] : fields()) {
        std::visit(
            [&](auto member) {
                using T = std::remove_cvref_t<decltype(c.*member)>;
                os << key << " = ";
                if constexpr (std::is_same_v<T, std::string>) os << toml::value<std::string>(c.*member);
                else if constexpr (std::is_same_v<T, bool>) os << (c.*member ? "true" : "false");
                else if constexpr (std::is_same_v<T, double>) {
                    const double v = c.*member;
                    if (std::isnan(v)) os << "nan";
                    else if (std::isinf(v)) os << (v > 0 ? "inf" : "-inf");
                    else {
                        char buf[40];
                        std::snprintf(buf, sizeof buf, "%.17g", v);
                        std::string s = buf;
                        if (s.find_first_of(".eE") == std::string::npos) s += ".0";
                        os << s;
                    }
                } else os << c.*member;
                os << "\n";
            },
            f);
    }
    return os.str();
}

RunConfig config_from_toml(const std::string& text) {
    toml::table tbl;
    try {
        tbl = toml::parse(text);
    } catch (const toml::parse_error& e) {
        std::ostringstream os;
        os << "config parse error: " << e.description() << " at line " << e.source().begin.line;
        throw UsageError(os.str());
    }
    RunConfig c;
    for (const auto& [k, node] : tbl) {
        const std::string key(k.str());
        std::visit(
            [&](auto member) {
                using T = std::remove_cvref_t<decltype(c.*member)>;
                std::optional<T> v;
                if constexpr (std::is_same_v<T, double>) {
                    if (auto d = node.value<double>()) v = *d;  // integers convert too
                } else if constexpr (std::is_same_v<T, std::string> || std::is_same_v<T, bool>) {
                    if (auto d = node.value_exact<T>()) v = *d;
                } else {
                    if (auto d = node.value_exact<std::int64_t>()) v = static_cast<T>(*d);
                }
                if (!v) throw UsageError("config key '" + key + "' has the wrong type");
                c.*member = *v;
            },
            field(key));
    }
    return c;
}

RunConfig load_config(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw UsageError("cannot read config " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return config_from_toml(ss.str());
}

RunConfig RunConfig::resolved() const {
    RunConfig c = *this;
    if (c.task != "synthetic" && c.task != "smnist" && c.task != "psmnist")
        throw UsageError("task must be synthetic, smnist or psmnist");
    if (c.epochs == 0) c.epochs = c.task == "synthetic" ? 10 : 20;
    if (c.model == "brf") {
        if (c.flags.empty()) c.flags = "brf";
        if (flags_from_string(c.flags) != dynamics::ResonatorFlags::brf())
            throw UsageError("model brf always uses all three mechanisms; use --model rf --flags ... for ablations");
    } else if (c.model == "rf") {
        if (c.flags.empty()) c.flags = "none";
    } else if (c.model == "alif") {
        c.flags = "none";
    } else {
        throw UsageError("model must be brf, rf or alif");
    }
    try {
        (void)flags_from_string(c.flags);
        (void)readout_from_string(c.readout);
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
    if (c.epochs < 0 || c.hidden < 1 || c.batch_size < 1 || c.eval_batch_size < 1)
        throw UsageError("epochs, hidden and batch sizes must be positive");
    if (!(c.lr > 0)) throw UsageError("lr must be positive");
    return c;
}

NetworkConfig network_config(const RunConfig& rc, int n_in, int n_out) {
    NetworkConfig c;
    c.n_in = n_in;
    c.n_hidden = rc.hidden;
    c.n_out = n_out;
    c.kind = rc.model == "alif" ? NeuronKind::ALIF : NeuronKind::Resonator;
    c.flags = rc.model == "alif" ? dynamics::ResonatorFlags{} : flags_from_string(rc.flags);
    c.delta = rc.delta;
    c.theta_c = rc.theta_c;
    c.gamma = rc.gamma;
    c.readout = readout_from_string(rc.readout);
    c.surrogate = {rc.surrogate_h, rc.surrogate_sigma, rc.surrogate_scale, rc.surrogate_gain};
    c.backprop_refractory = rc.backprop_refractory;
    c.init.omega = {rc.omega_lo, rc.omega_hi};
    c.init.b_offset = {rc.b_offset_lo, rc.b_offset_hi};
    c.init.readout_decay = rc.readout_decay;
    c.init.alif_alpha = {rc.alif_alpha_lo, rc.alif_alpha_hi};
    c.init.alif_rho = {rc.alif_rho_lo, rc.alif_rho_hi};
    c.init.alif_beta = rc.alif_beta;
    c.seed = static_cast<std::uint64_t>(rc.seed);
    try {
        c.validate();
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
    return c;
}

TaskData load_task(const RunConfig& rc) {
    TaskData d;
    auto carve_val = [&](data::SequenceDataset& train) {
        const std::size_t n_val = rc.val_size >= 0 ? static_cast<std::size_t>(rc.val_size) : train.size() / 10;
        auto [head, tail] = data::split_tail(train, n_val);
        train = std::move(head);
        d.val = std::move(tail);
    };

    if (rc.task == "synthetic") {
        data::SyntheticSpec s;
        s.seed = static_cast<std::uint64_t>(rc.data_seed);
        s.n_classes = rc.syn_classes;
        s.T = rc.syn_T;
        s.n_train = rc.syn_train;
        s.n_test = rc.syn_test;
        s.noise = rc.syn_noise;
        s.delta = rc.delta;
        s.omega_lo = rc.syn_omega_lo;
        s.omega_hi = rc.syn_omega_hi;
        std::tie(d.train, d.test) = data::synthetic_resonance_task(s);
        carve_val(d.train);
        return d;
    }

    std::string root = rc.data_dir;
    if (root.empty()) {
        if (const char* env = std::getenv("BRF_DATA_DIR")) root = env;
    }
    if (root.empty()) throw data::DataError("no dataset root: set BRF_DATA_DIR or data_dir");

    d.train = data::to_sequential(data::load_mnist(root, "train"), "train");
    d.test = data::to_sequential(data::load_mnist(root, "test"), "test");
    const auto seed = static_cast<std::uint64_t>(rc.data_seed);
    if (rc.train_subset > 0)
        d.train = data::subset(d.train, data::seeded_subset_indices(d.train.size(), rc.train_subset, seed));
    if (rc.test_subset > 0)
        d.test = data::subset(d.test, data::seeded_subset_indices(d.test.size(), rc.test_subset, seed + 1));
    carve_val(d.train);
    if (rc.task == "psmnist") {
        const auto p = data::PermutationSpec::make(static_cast<std::uint64_t>(rc.permutation_seed), d.train.T);
        d.train = data::permute(d.train, p);
        d.val = data::permute(d.val, p);
        d.test = data::permute(d.test, p);
    }
    return d;
}

EvalResult evaluate(const NetworkConfig& config, const WeightSet& w, const data::SequenceDataset& ds,
                    int batch_size, const std::vector<std::size_t>* indices) {
    const auto all = indices ? *indices : data::iota_indices(ds.size());
    EvalResult r;
    if (all.empty()) {
        r.loss = r.accuracy = r.spikes_per_neuron_step = std::numeric_limits<double>::quiet_NaN();
        return r;
    }
    double loss = 0.0;
    long correct = 0;
    std::uint64_t spikes = 0;
    for (std::size_t s = 0; s < all.size(); s += batch_size) {
        const std::size_t e = std::min(all.size(), s + batch_size);
        const auto batch = data::make_batch(ds, all, s, e);
        const auto tr = forward(config, w, batch, SpikeFunction::Heaviside, false);
        const auto l = softmax_cross_entropy(tr.logits, batch.labels);
        loss += l.loss * static_cast<double>(e - s);
        correct += l.correct;
        spikes += tr.spike_total;
    }
    const double n = static_cast<double>(all.size());
    r.loss = loss / n;
    r.accuracy = correct / n;
    r.spikes_per_neuron_step = static_cast<double>(spikes) / (n * config.n_hidden * ds.T);
    return r;
}

std::string metrics_csv(const std::vector<EpochMetrics>& epochs) {
    std::string s = std::string(kMetricsHeader) + "\n";
    for (const auto& m : epochs)
        s += std::to_string(m.epoch) + "," + num(m.train_loss) + "," + num(m.train_acc) + "," + num(m.val_acc) + "," +
             num(m.test_acc) + "," + num(m.spikes) + "\n";
    return s;
}

std::string aggregate_csv(const std::vector<std::vector<EpochMetrics>>& runs) {
    static const std::vector<std::pair<const char*, double EpochMetrics::*>> cols{
        {"train_loss", &EpochMetrics::train_loss},
        {"train_acc", &EpochMetrics::train_acc},
        {"val_acc", &EpochMetrics::val_acc},
        {"test_acc", &EpochMetrics::test_acc},
        {"mean_spikes_per_neuron_per_step", &EpochMetrics::spikes}};
    std::string s = "epoch,runs";
    for (const auto& [name, _] : cols) s += std::string(",") + name + "_mean," + name + "_std";
    s += "\n";
    std::size_t n_epochs = 0;
    for (const auto& r : runs) n_epochs = std::max(n_epochs, r.size());
    for (std::size_t e = 0; e < n_epochs; ++e) {
        std::vector<const EpochMetrics*> rows;
        for (const auto& r : runs)
            if (e < r.size()) rows.push_back(&r[e]);
        s += std::to_string(rows.front()->epoch) + "," + std::to_string(rows.size());
        for (const auto& [name, member] : cols) {
            double mean = 0.0;
            for (auto* m : rows) mean += m->*member;
            mean /= rows.size();
            double var = 0.0;
            for (auto* m : rows) var += (m->*member - mean) * (m->*member - mean);
            const double sd = rows.size() > 1 ? std::sqrt(var / (rows.size() - 1)) : 0.0;
            s += "," + num(mean) + "," + num(sd);
        }
        s += "\n";
    }
    return s;
}

TrainResult train(const RunConfig& config, const TaskData& data, const fs::path& out, std::ostream* log) {
    const RunConfig rc = config.resolved();
    data.train.validate();
    if (data.train.size() == 0) throw data::DataError("empty training set");
    const NetworkConfig net = network_config(rc, data.train.n_in, data.train.n_classes);

    fs::create_directories(out / "checkpoints");
    write_file(out / "config.toml", config_to_toml(rc));
    write_file(out / "version.txt", version_string() + "\n" + kMetricsFormat + "\n" + kSummaryFormat + "\n" +
                                        kCheckpointFormat + "\n");

    TrainResult result;
    WeightSet w = init_network(net);
    AdamState adam = AdamState::zeros_like(w, {rc.lr, rc.lr_neuron});
    std::mt19937_64 rng(static_cast<std::uint64_t>(rc.seed) ^ 0x5DEECE66DULL);
    auto order = data::iota_indices(data.train.size());
    std::string timing = "epoch,seconds\n";
    const auto start = std::chrono::steady_clock::now();

    for (int epoch = 1; epoch <= rc.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        long correct = 0;
        int batch_index = 0;
        for (std::size_t s = 0; s < order.size(); s += rc.batch_size, ++batch_index) {
            const std::size_t e = std::min(order.size(), s + rc.batch_size);
            const auto batch = data::make_batch(data.train, order, s, e);
            const auto tr = forward(net, w, batch);
            const auto l = softmax_cross_entropy(tr.logits, batch.labels);
            if (!std::isfinite(l.loss))
                throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(batch_index));
            auto g = backward(net, w, tr, l.grad).grads;
            if (!g.all_finite())
                throw NumericalError("non-finite gradient at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(batch_index));
            clip_gradients(g, rc.grad_clip);
            adam_step(w, g, adam);
            project_params(w, net);
            loss_sum += l.loss * static_cast<double>(e - s);
            correct += l.correct;
        }

        EpochMetrics m;
        m.epoch = epoch;
        m.train_loss = loss_sum / order.size();
        m.train_acc = static_cast<double>(correct) / order.size();
        const auto val = evaluate(net, w, data.val, rc.eval_batch_size);
        const auto test = evaluate(net, w, data.test, rc.eval_batch_size);
        m.val_acc = val.accuracy;
        m.test_acc = test.accuracy;
        m.spikes = test.spikes_per_neuron_step;
        m.seconds = elapsed(t0);
        result.epochs.push_back(m);

        write_file(out / "metrics.csv", metrics_csv(result.epochs));
        timing += std::to_string(epoch) + "," + num(m.seconds) + "\n";
        write_file(out / "timing.csv", timing);
        const Checkpoint ck{net, w, adam.to_json(), epoch};
        save_checkpoint(out / "checkpoints" / "latest.json", ck);
        if (result.first_val50_epoch < 0 && m.val_acc >= 0.5) {
            result.first_val50_epoch = epoch;
            save_checkpoint(out / "checkpoints" / "first_val50.json", ck);
        }
        if (log) {
            *log << rc.model << "[" << rc.flags << "] seed " << rc.seed << " epoch " << epoch << "/" << rc.epochs
                 << "  loss " << num(m.train_loss) << "  train " << num(m.train_acc) << "  val " << num(m.val_acc)
                 << "  test " << num(m.test_acc) << "  spikes " << num(m.spikes) << "  (" << num(m.seconds)
                 << " s)" << std::endl;
        }
    }

    nlohmann::json summary{
        {"format", kSummaryFormat},
        {"metrics_format", kMetricsFormat},
        {"checkpoint_format", kCheckpointFormat},
        {"version", version_string()},
        {"task", rc.task},
        {"model", rc.model},
        {"flags", rc.flags},
        {"seed", rc.seed},
        {"data_seed", rc.data_seed},
        {"epochs", rc.epochs},
        {"parameters", w.parameter_count()},
        {"train_samples", data.train.size()},
        {"val_samples", data.val.size()},
        {"test_samples", data.test.size()},
        {"first_val50_epoch", result.first_val50_epoch},
        {"total_seconds", elapsed(start)},
    };
    if (!result.epochs.empty()) {
        const auto& f = result.epochs.back();
        summary["final"] = {{"train_loss", f.train_loss}, {"train_acc", f.train_acc},
                            {"val_acc", f.val_acc},       {"test_acc", f.test_acc},
                            {"mean_spikes_per_neuron_per_step", f.spikes}};
        double best = 0.0;
        for (const auto& e : result.epochs) best = std::max(best, e.test_acc);
        summary["best_test_acc"] = best;
    }
    write_file(out / "summary.json", summary.dump(2) + "\n");
    result.weights = std::move(w);
    return result;
}

std::vector<TrainResult> train_runs(const RunConfig& config, const fs::path& out, int runs, std::ostream* log) {
    if (runs < 1) throw UsageError("--runs must be at least 1");
    const RunConfig rc = config.resolved();
    const TaskData data = load_task(rc);
    std::vector<TrainResult> results;
    std::vector<std::vector<EpochMetrics>> curves;
    for (int k = 0; k < runs; ++k) {
        RunConfig c = rc;
        c.seed = rc.seed + k;
        const fs::path dir = runs == 1 ? out : out / ("seed_" + std::to_string(c.seed));
        results.push_back(train(c, data, dir, log));
        curves.push_back(results.back().epochs);
    }
    if (runs > 1) {
        fs::create_directories(out);
        write_file(out / "aggregate.csv", aggregate_csv(curves));
    }
    return results;
}

}  // namespace brf::run
