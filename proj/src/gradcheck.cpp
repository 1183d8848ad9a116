#include <algorithm>
#include <cmath>
#include <random>

#include "brf/autograd.hpp"

namespace brf {

namespace {

double relaxed_loss(const NetworkConfig& config, const WeightSet& weights, const SequenceBatch& batch) {
    const auto tr = forward(config, weights, batch, SpikeFunction::Relaxed);
    return softmax_cross_entropy(tr.logits, batch.labels).loss;
}

}  // namespace

GradCheckReport gradient_check(const NetworkConfig& config, const WeightSet& weights, const SequenceBatch& batch,
                               double step) {
    const auto tr = forward(config, weights, batch, SpikeFunction::Relaxed);
    const auto loss = softmax_cross_entropy(tr.logits, batch.labels);
    const auto analytic = backward(config, weights, tr, loss.grad).grads;

    GradCheckReport report;
    WeightSet probe = weights;
    // Walk parameters of `probe` and the matching gradient arrays in lockstep.
    std::vector<std::pair<std::string, Eigen::Map<const Eigen::VectorXd>>> grads_flat;
    analytic.for_each([&](const char* name, const auto& m) {
        grads_flat.emplace_back(name, Eigen::Map<const Eigen::VectorXd>(m.data(), m.size()));
    });
    std::size_t k = 0;
    probe.for_each([&](const char* name, auto& m) {
        const auto& g = grads_flat[k++].second;
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            double* p = m.data() + i;
            const double orig = *p;
            *p = orig + step;
            const double up = relaxed_loss(config, probe, batch);
            *p = orig - step;
            const double down = relaxed_loss(config, probe, batch);
            *p = orig;
            const double numeric = (up - down) / (2.0 * step);
            const double a = g(i);
            const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
            ++report.entries_checked;
            if (report.worst_index < 0 || err > report.max_rel_error) {
                report.max_rel_error = err;
                report.worst_parameter = name;
                report.worst_index = i;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    });
    return report;
}

std::vector<GradCheckCase> default_gradcheck_cases() {
    NetworkConfig base;
    base.n_in = 2;
    base.n_hidden = 2;
    base.n_out = 2;
    base.theta_c = 0.3;
    base.init.omega = {5.0, 30.0};
    base.init.b_offset = {0.1, 1.0};
    base.init.readout_decay = 0.8;

    using dynamics::ResonatorFlags;
    std::vector<GradCheckCase> cases;
    const auto resonator = [&](const char* name, ResonatorFlags flags) {
        NetworkConfig c = base;
        c.flags = flags;
        cases.push_back({name, c});
    };
    resonator("RF", ResonatorFlags::vanilla());
    resonator("RF+RP", {true, false, false, false});
    resonator("RF+RP+SR", {true, true, false, false});
    resonator("BRF", ResonatorFlags::brf());
    resonator("RF+HR", {false, false, false, true});

    NetworkConfig alif = base;
    alif.kind = NeuronKind::ALIF;
    alif.init.alif_alpha = {0.5, 0.9};
    alif.init.alif_rho = {0.5, 0.9};
    alif.init.alif_beta = 0.5;
    cases.push_back({"ALIF", alif});
    return cases;
}

GradCheckReport run_gradcheck_case(const GradCheckCase& c, std::uint64_t seed) {
    NetworkConfig config = c.config;
    config.seed = seed;
    WeightSet w = init_network(config);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> normal(0.0, 1.0);
    // Larger-than-Xavier weights so the relaxed spike path carries signal.
    w.w_in *= 6.0;
    w.w_rec *= 3.0;
    w.w_out *= 3.0;

    constexpr int kSteps = 5;
    constexpr int kBatch = 2;
    SequenceBatch batch;
    for (int t = 0; t < kSteps; ++t) {
        Matrix step(config.n_in, kBatch);
        for (Eigen::Index j = 0; j < step.size(); ++j) step.data()[j] = 4.0 * normal(rng);
        batch.steps.push_back(step);
    }
    for (int b = 0; b < kBatch; ++b) batch.labels.push_back(b % config.n_out);

    auto report = gradient_check(config, w, batch);
    report.name = c.name;
    return report;
}

}  // namespace brf
