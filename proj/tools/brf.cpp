// brf: train networks and produce the CSV/JSON artifacts consumed by the plotting scripts.
// Exit codes: 0 ok, 1 usage, 2 data, 3 numerical failure.

#include <cmath>
#include <iostream>
#include <limits>
#include <optional>

#include "CLI11.hpp"

#include "brf/analysis.hpp"
#include "brf/run.hpp"

using namespace brf;
namespace fs = std::filesystem;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

nlohmann::json base_sidecar(const char* format) {
    return {{"format", format}, {"version", run::version_string()}};
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
    std::string config;
    std::string out = "runs/latest";
    int runs = 1;
    std::vector<std::string> sets;
    // shortcuts for the most common keys
    std::optional<std::string> task, model, flags, data_dir;
    std::optional<int> epochs, hidden, batch_size;
    std::optional<double> lr;
    std::optional<long> seed;
};

int cmd_train(const TrainArgs& a) {
    run::RunConfig rc = a.config.empty() ? run::RunConfig{} : run::load_config(a.config);
    auto put = [&](const char* key, const auto& v) {
        if (!v) return;
        if constexpr (std::is_same_v<std::decay_t<decltype(*v)>, std::string>) run::set_config_value(rc, key, *v);
        else run::set_config_value(rc, key, std::to_string(*v));
    };
    put("task", a.task);
    put("model", a.model);
    put("flags", a.flags);
    put("data_dir", a.data_dir);
    put("epochs", a.epochs);
    put("hidden", a.hidden);
    put("batch_size", a.batch_size);
    if (a.lr) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", *a.lr);
        run::set_config_value(rc, "lr", buf);
    }
    put("seed", a.seed);
    for (const auto& kv : a.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw run::UsageError("--set expects key=value, got '" + kv + "'");
        run::set_config_value(rc, kv.substr(0, eq), kv.substr(eq + 1));
    }
    const auto results = run::train_runs(rc, a.out, a.runs, &std::cerr);
    for (const auto& r : results) {
        if (!r.epochs.empty())
            std::cout << "test_acc " << r.epochs.back().test_acc << "\n";
    }
    return 0;
}

// --- simulate --------------------------------------------------------------

struct SimulateArgs {
    analysis::SimulationSpec spec;
    std::optional<double> b;
    std::string flags = "none";
    std::string stimulus = "pulse";
    std::string out = "trace.csv";
};

int cmd_simulate(SimulateArgs a) {
    a.spec.b = a.b;
    a.spec.flags = flags_from_string(a.flags);
    a.spec.stimulus = analysis::stimulus_from_string(a.stimulus);
    const auto tr = analysis::simulate_neuron(a.spec);
    const fs::path out = a.out;
    analysis::write_text(out, analysis::trace_csv(tr));
    auto meta = base_sidecar(analysis::kTraceFormat);
    const auto& s = a.spec;
    const double b0 = s.b ? *s.b : dynamics::base_dampening(s.omega, s.b_offset, s.delta, s.flags);
    meta.update({{"omega", s.omega},
                 {"b", b0},
                 {"b_offset", s.b ? nlohmann::json() : nlohmann::json(s.b_offset)},
                 {"flags", a.flags},
                 {"delta", s.delta},
                 {"theta_c", std::isinf(s.theta_c) ? nlohmann::json("inf") : nlohmann::json(s.theta_c)},
                 {"gamma", s.gamma},
                 {"steps", s.steps},
                 {"stimulus", a.stimulus},
                 {"amplitude", s.amplitude},
                 {"pulse_steps", s.pulse_steps},
                 {"stimulus_omega", s.stimulus_omega},
                 {"spectral_radius", dynamics::spectral_radius(b0, s.omega, s.delta)}});
    analysis::write_json(fs::path(out).replace_extension(".json"), meta);
    std::cout << "spectral_radius " << dynamics::spectral_radius(b0, s.omega, s.delta) << "\n";
    return 0;
}

// --- landscape -------------------------------------------------------------

struct LandscapeArgs {
    std::string checkpoint;
    std::string config;  // default: config.toml of the run that wrote the checkpoint
    int points = 51;
    double range = 1.0;
    int subset = 256;
    long subset_seed = 0;
    long direction_seed = 0;
    int threads = 0;
    std::string out = "landscape";
};

fs::path run_config_for(const fs::path& checkpoint, const std::string& explicit_config) {
    if (!explicit_config.empty()) return explicit_config;
    const auto guess = checkpoint.parent_path().parent_path() / "config.toml";
    if (!fs::exists(guess)) throw run::UsageError("no --config given and " + guess.string() + " does not exist");
    return guess;
}

int cmd_landscape(const LandscapeArgs& a) {
    const auto ck = load_checkpoint(a.checkpoint);
    const auto rc = run::load_config(run_config_for(a.checkpoint, a.config)).resolved();
    const auto task = run::load_task(rc);
    const auto idx = data::seeded_subset_indices(task.train.size(), a.subset, a.subset_seed);
    const auto ds = data::subset(task.train, idx);

    analysis::LandscapeOptions opt;
    opt.grid = {a.points, -a.range, a.range};
    opt.direction_seed = a.direction_seed;
    opt.threads = a.threads;
    const auto g = analysis::scan_landscape(ck.config, ck.weights, ds, opt);
    const auto r = analysis::roughness_metrics(g);

    const fs::path out = a.out;
    analysis::write_text(out / "landscape.csv", analysis::landscape_csv(g));
    auto meta = base_sidecar(analysis::kLandscapeFormat);
    meta.update({{"checkpoint", a.checkpoint},
                 {"checkpoint_hash", analysis::fnv1a_file(a.checkpoint)},
                 {"checkpoint_epoch", ck.epoch},
                 {"model", to_string(ck.config.kind)},
                 {"flags", flags_to_string(ck.config.flags)},
                 {"split", "train"},
                 {"subset_size", ds.size()},
                 {"subset_seed", a.subset_seed},
                 {"direction_seed", a.direction_seed},
                 {"perturbed", {"w_in", "w_rec"}},
                 {"grid", {{"points", a.points}, {"lo", -a.range}, {"hi", a.range}}},
                 {"center_loss", g.center_loss},
                 {"roughness",
                  {{"total_variation", r.total_variation},
                   {"basin_width", r.basin_width},
                   {"convexity_violation", r.convexity_violation},
                   {"coverage", r.coverage},
                   {"complete", r.complete}}}});
    analysis::write_json(out / "landscape.json", meta);
    std::cout << "center_loss " << g.center_loss << "\ntotal_variation " << r.total_variation
              << "\nconvexity_violation " << r.convexity_violation << "\nbasin_width " << r.basin_width << "\n";
    return 0;
}

// --- phase -----------------------------------------------------------------

struct PhaseArgs {
    double delta = 0.01;
    double omega_lo = 0.0, omega_hi = 100.0;
    double b_lo = -5.0, b_hi = 1.0;
    int omega_points = 200, b_points = 200;
    std::string out = "phase";
};

int cmd_phase(const PhaseArgs& a) {
    const auto m = analysis::phase_scan(a.delta, a.omega_lo, a.omega_hi, a.b_lo, a.b_hi, a.omega_points, a.b_points);
    const fs::path out = a.out;
    analysis::write_text(out / "phase.csv", analysis::phase_csv(m));
    auto meta = base_sidecar(analysis::kPhaseFormat);
    meta.update({{"delta", a.delta},
                 {"omega", {{"lo", a.omega_lo}, {"hi", a.omega_hi}, {"points", a.omega_points}}},
                 {"b", {{"lo", a.b_lo}, {"hi", a.b_hi}, {"points", a.b_points}}},
                 {"grid", "cell-centred"}});
    analysis::write_json(out / "phase.json", meta);
    return 0;
}

// --- gradflow --------------------------------------------------------------

struct GradflowArgs {
    std::string checkpoint;
    std::string config;
    std::string mode = "subthreshold";
    std::string input = "pulse";  // pulse | sample
    int sample = 0;
    int steps = 500;
    // network built on the spot when no checkpoint is given
    int hidden = 1;
    double omega = 10.0;
    double b_offset = 0.0;
    std::string flags = "brf";
    long seed = 0;
    std::string out = "gradflow";
};

int cmd_gradflow(const GradflowArgs& a) {
    NetworkConfig c;
    WeightSet w;
    std::string source;
    SequenceBatch batch;
    if (!a.checkpoint.empty()) {
        const auto ck = load_checkpoint(a.checkpoint);
        c = ck.config;
        w = ck.weights;
        source = a.checkpoint;
    } else {
        c.n_in = 1;
        c.n_hidden = a.hidden;
        c.n_out = 2;
        c.flags = flags_from_string(a.flags);
        c.init.omega = {a.omega, a.omega};
        c.init.b_offset = {a.b_offset, a.b_offset};
        c.seed = static_cast<std::uint64_t>(a.seed);
        w = init_network(c);
        source = "init";
    }
    if (a.input == "sample") {
        if (a.checkpoint.empty()) throw run::UsageError("--input sample needs --checkpoint");
        const auto rc = run::load_config(run_config_for(a.checkpoint, a.config)).resolved();
        const auto task = run::load_task(rc);
        if (a.sample < 0 || static_cast<std::size_t>(a.sample) >= task.test.size())
            throw run::UsageError("--sample out of range");
        batch = data::make_batch(task.test, {static_cast<std::size_t>(a.sample)}, 0, 1);
    } else if (a.input == "pulse") {
        batch.steps.assign(a.steps, Matrix::Zero(c.n_in, 1));
        batch.steps[0].setOnes();
        batch.labels = {0};
    } else {
        throw run::UsageError("--input must be pulse or sample");
    }
    const auto mode = analysis::probe_mode_from_string(a.mode);
    const auto g = analysis::gradient_norm_probe(c, w, batch, mode);
    for (double v : g.norms)
        if (!std::isfinite(v)) throw run::NumericalError("non-finite adjoint norm");
    const fs::path out = a.out;
    analysis::write_text(out / "gradflow.csv", analysis::gradflow_csv(g));
    auto meta = base_sidecar(analysis::kGradflowFormat);
    meta.update({{"source", source},
                 {"checkpoint_hash", a.checkpoint.empty() ? "" : analysis::fnv1a_file(a.checkpoint)},
                 {"mode", a.mode},
                 {"input", a.input},
                 {"steps", batch.length()},
                 {"model", to_string(c.kind)},
                 {"flags", flags_to_string(c.flags)}});
    if (a.input == "sample") meta["sample"] = a.sample;
    analysis::write_json(out / "gradflow.json", meta);
    if (!g.norms.empty()) std::cout << "first/last " << g.norms.front() / g.norms.back() << "\n";
    return 0;
}

// --- gradcheck -------------------------------------------------------------

int cmd_gradcheck(int seeds, double tol) {
    double worst = 0.0;
    for (const auto& c : default_gradcheck_cases()) {
        double case_worst = 0.0;
        for (int s = 1; s <= seeds; ++s) case_worst = std::max(case_worst, run_gradcheck_case(c, s).max_rel_error);
        std::cout << c.name << " max_rel_error " << case_worst << "\n";
        worst = std::max(worst, case_worst);
    }
    std::cout << "max_rel_error " << worst << "\n";
    return worst < tol ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    run::configure_allocator();
    CLI::App app{"Balanced resonate-and-fire networks: training and analysis"};
    app.require_subcommand(1);
    app.set_version_flag("--version", run::version_string());

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "train a recurrent spiking network");
    train->add_option("--config", ta.config, "TOML config file");
    train->add_option("--out", ta.out, "run directory")->capture_default_str();
    train->add_option("--runs", ta.runs, "repeat with seeds seed, seed+1, ...")->check(CLI::PositiveNumber);
    train->add_option("--set", ta.sets, "override any config key: key=value");
    train->add_option("--task", ta.task, "synthetic, smnist or psmnist");
    train->add_option("--model", ta.model, "brf, rf or alif");
    train->add_option("--flags", ta.flags, "resonator flags for rf: none or rp+sr+db+hr subsets");
    train->add_option("--data-dir", ta.data_dir, "MNIST directory (default $BRF_DATA_DIR)");
    train->add_option("--epochs", ta.epochs);
    train->add_option("--hidden", ta.hidden);
    train->add_option("--batch-size", ta.batch_size);
    train->add_option("--lr", ta.lr);
    train->add_option("--seed", ta.seed);

    SimulateArgs sa;
    auto* sim = app.add_subcommand("simulate", "single-neuron trace");
    sim->add_option("--omega", sa.spec.omega)->capture_default_str();
    sim->add_option("--b", sa.b, "raw dampening b (ignores the divergence boundary)");
    sim->add_option("--b-offset", sa.spec.b_offset, "offset below p(omega) when flags include db")->capture_default_str();
    sim->add_option("--flags", sa.flags)->capture_default_str();
    sim->add_option("--delta", sa.spec.delta)->capture_default_str();
    sim->add_option("--theta-c", sa.spec.theta_c, "threshold, inf for no spikes")->capture_default_str();
    sim->add_option("--gamma", sa.spec.gamma)->capture_default_str();
    sim->add_option("--steps", sa.spec.steps)->capture_default_str();
    sim->add_option("--stimulus", sa.stimulus, "pulse, constant, sinusoid or none")->capture_default_str();
    sim->add_option("--amplitude", sa.spec.amplitude)->capture_default_str();
    sim->add_option("--pulse-steps", sa.spec.pulse_steps)->capture_default_str();
    sim->add_option("--stimulus-omega", sa.spec.stimulus_omega)->capture_default_str();
    sim->add_option("--out", sa.out, "trace CSV; a .json sidecar is written next to it")->capture_default_str();

    LandscapeArgs la;
    auto* land = app.add_subcommand("landscape", "loss landscape around a checkpoint");
    land->add_option("--checkpoint", la.checkpoint)->required();
    land->add_option("--config", la.config, "run config (default: the checkpoint's run directory)");
    land->add_option("--points", la.points, "grid points per axis")->capture_default_str();
    land->add_option("--range", la.range, "grid covers [-range, range]^2")->capture_default_str();
    land->add_option("--subset", la.subset, "training samples evaluated per cell")->capture_default_str();
    land->add_option("--subset-seed", la.subset_seed)->capture_default_str();
    land->add_option("--direction-seed", la.direction_seed)->capture_default_str();
    land->add_option("--threads", la.threads, "0 = all cores")->capture_default_str();
    land->add_option("--out", la.out)->capture_default_str();

    PhaseArgs pa;
    auto* phase = app.add_subcommand("phase", "spectral radius over (omega, b)");
    phase->add_option("--delta", pa.delta)->capture_default_str();
    phase->add_option("--omega-lo", pa.omega_lo)->capture_default_str();
    phase->add_option("--omega-hi", pa.omega_hi)->capture_default_str();
    phase->add_option("--b-lo", pa.b_lo)->capture_default_str();
    phase->add_option("--b-hi", pa.b_hi)->capture_default_str();
    phase->add_option("--omega-points", pa.omega_points)->capture_default_str();
    phase->add_option("--b-points", pa.b_points)->capture_default_str();
    phase->add_option("--out", pa.out)->capture_default_str();

    GradflowArgs ga;
    auto* gf = app.add_subcommand("gradflow", "hidden-state adjoint norm through time");
    gf->add_option("--checkpoint", ga.checkpoint);
    gf->add_option("--config", ga.config);
    gf->add_option("--mode", ga.mode, "spiking or subthreshold")->capture_default_str();
    gf->add_option("--input", ga.input, "pulse or sample")->capture_default_str();
    gf->add_option("--sample", ga.sample, "test-set index for --input sample")->capture_default_str();
    gf->add_option("--steps", ga.steps, "length of the pulse input")->capture_default_str();
    gf->add_option("--hidden", ga.hidden)->capture_default_str();
    gf->add_option("--omega", ga.omega)->capture_default_str();
    gf->add_option("--b-offset", ga.b_offset)->capture_default_str();
    gf->add_option("--flags", ga.flags)->capture_default_str();
    gf->add_option("--seed", ga.seed)->capture_default_str();
    gf->add_option("--out", ga.out)->capture_default_str();

    int gc_seeds = 3;
    double gc_tol = 1e-4;
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every neuron variant");
    gc->add_option("--seeds", gc_seeds)->capture_default_str();
    gc->add_option("--tol", gc_tol)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*train) return cmd_train(ta);
        if (*sim) return cmd_simulate(sa);
        if (*land) return cmd_landscape(la);
        if (*phase) return cmd_phase(pa);
        if (*gf) return cmd_gradflow(ga);
        if (*gc) return cmd_gradcheck(gc_seeds, gc_tol);
    } catch (const run::UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const dynamics::DomainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const data::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const run::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
