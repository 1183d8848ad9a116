#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <unistd.h>

#include "doctest.h"

#include "brf/analysis.hpp"

using namespace brf;
using namespace brf::analysis;
using doctest::Approx;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Small {
    NetworkConfig config;
    WeightSet w;
    data::SequenceDataset ds;
};

Small small_problem() {
    Small s;
    data::SyntheticSpec spec;
    spec.n_train = 12;
    spec.n_test = 0;
    spec.T = 60;
    s.ds = data::synthetic_resonance_task(spec).first;
    s.config.n_in = 1;
    s.config.n_hidden = 8;
    s.config.n_out = 4;
    s.config.seed = 3;
    s.w = init_network(s.config);
    s.w.w_in *= 30.0;
    return s;
}

std::vector<double> axis(int n, double lo, double hi) { return GridSpec{n, lo, hi}.axis(); }

SequenceBatch pulse(int T) {
    SequenceBatch b;
    b.steps.assign(T, Matrix::Zero(1, 1));
    b.steps[0](0, 0) = 1.0;
    b.labels = {0};
    return b;
}

NetworkConfig single_neuron(double omega, double b_offset) {
    NetworkConfig c;
    c.n_in = 1;
    c.n_hidden = 1;
    c.n_out = 2;
    c.init.omega = {omega, omega};
    c.init.b_offset = {b_offset, b_offset};
    return c;
}

}  // namespace

TEST_CASE("filter-normalized directions") {
    NetworkConfig c;
    c.n_in = 3;
    c.n_hidden = 20;
    auto theta = init_network(c);
    theta.w_rec.row(4).setZero();
    const auto d = filter_normalized_directions(theta, 11);
    for (Eigen::Index i = 0; i < theta.w_rec.rows(); ++i) {
        CHECK(d.eta_rec.row(i).norm() == Approx(theta.w_rec.row(i).norm()).epsilon(1e-12));
        CHECK(d.xi_rec.row(i).norm() == Approx(theta.w_rec.row(i).norm()).epsilon(1e-12));
        CHECK(d.eta_in.row(i).norm() == Approx(theta.w_in.row(i).norm()).epsilon(1e-12));
    }
    CHECK(d.eta_rec.row(4).isZero(0.0));
    CHECK(d.eta_rec != d.xi_rec);

    const auto again = filter_normalized_directions(theta, 11);
    CHECK(again.eta_rec == d.eta_rec);
    CHECK(again.xi_in == d.xi_in);

    WeightSet twice = theta;
    twice.w_in *= 2.0;
    twice.w_rec *= 2.0;
    const auto d2 = filter_normalized_directions(twice, 11);
    for (Eigen::Index i = 0; i < theta.w_rec.rows(); ++i)
        CHECK(d2.eta_rec.row(i).norm() == Approx(2.0 * d.eta_rec.row(i).norm()).epsilon(1e-12));

    std::mt19937_64 r1(1), r2(2);
    const Matrix ref = Matrix::Ones(256, 256);
    const Matrix a = filter_normalized(ref, r1), b = filter_normalized(ref, r2);
    const double cosine = (a.array() * b.array()).sum() / (a.norm() * b.norm());
    CHECK(std::abs(cosine) < 0.1);
}

TEST_CASE("grid axis") {
    const auto a = GridSpec{}.axis();
    CHECK(a.size() == 51);
    CHECK(a.front() == -1.0);
    CHECK(a.back() == 1.0);
    CHECK(a[25] == 0.0);
    CHECK(a[1] == Approx(-0.96));
    CHECK(a[49] == Approx(0.96));
    for (std::size_t k = 1; k < a.size(); ++k) CHECK(a[k] - a[k - 1] == Approx(0.04));
}

TEST_CASE("landscape scan") {
    const auto s = small_problem();
    LandscapeOptions opt;
    opt.grid = {5, -1.0, 1.0};
    opt.direction_seed = 4;
    opt.threads = 1;
    opt.batch_size = 5;
    const auto g = scan_landscape(s.config, s.w, s.ds, opt);
    CHECK(g.losses.rows() == 5);
    CHECK(g.losses.cols() == 5);
    CHECK(g.losses.allFinite());
    CHECK(std::abs(g.losses(2, 2) - dataset_loss(s.config, s.w, s.ds)) <= 1e-12);
    CHECK(g.losses(2, 2) == g.center_loss);
    CHECK(g.losses.maxCoeff() > g.losses.minCoeff());

    SUBCASE("threads do not change the grid") {
        auto o = opt;
        o.threads = 3;
        CHECK(scan_landscape(s.config, s.w, s.ds, o).losses == g.losses);
    }
    SUBCASE("negated directions mirror the grid") {
        Directions neg = g.directions;
        neg.eta_in = -neg.eta_in;
        neg.eta_rec = -neg.eta_rec;
        neg.xi_in = -neg.xi_in;
        neg.xi_rec = -neg.xi_rec;
        const auto m = scan_landscape(s.config, s.w, neg, s.ds, opt);
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j) CHECK(m.losses(i, j) == g.losses(4 - i, 4 - j));
    }
    SUBCASE("only input and recurrent weights move") {
        const auto p = perturbed(s.w, g.directions, 0.3, -0.7);
        CHECK(p.w_out == s.w.w_out);
        CHECK(p.omega == s.w.omega);
        CHECK(p.b_offset == s.w.b_offset);
        CHECK(p.w_in != s.w.w_in);
        CHECK(p.w_rec != s.w.w_rec);
    }
    SUBCASE("failed cells become +inf") {
        Directions bad = g.directions;
        bad.eta_in(0, 0) = std::numeric_limits<double>::quiet_NaN();
        const auto b = scan_landscape(s.config, s.w, bad, s.ds, opt);
        CHECK(std::isfinite(b.center_loss));
        for (Eigen::Index k = 0; k < b.losses.size(); ++k) CHECK(b.losses.data()[k] == kInf);
    }
}

TEST_CASE("roughness metrics") {
    const auto a = axis(21, -1, 1);
    SUBCASE("constant") {
        const auto r = roughness_metrics(a, a, Matrix::Constant(21, 21, 3.0));
        CHECK(r.total_variation == 0.0);
        CHECK(r.convexity_violation == 0.0);
        CHECK(r.coverage == 1.0);
        CHECK(r.complete);
        CHECK(r.basin_width == Approx(std::sqrt(2.0)));
    }
    SUBCASE("paraboloid") {
        Matrix f(21, 21);
        for (int i = 0; i < 21; ++i)
            for (int j = 0; j < 21; ++j) f(i, j) = 1.0 + a[i] * a[i] + a[j] * a[j] + 0.5 * a[i] * a[j];
        const auto r = roughness_metrics(a, a, f);
        CHECK(r.convexity_violation == 0.0);
        // loss doubles at radius 0.95; the widest grid radius inside is 0.1 sqrt(81 + 9)
        Matrix g(21, 21);
        for (int i = 0; i < 21; ++i)
            for (int j = 0; j < 21; ++j) g(i, j) = 1.0 + (a[i] * a[i] + a[j] * a[j]) / (0.95 * 0.95);
        CHECK(roughness_metrics(a, a, g).basin_width == Approx(0.1 * std::sqrt(90.0)));
    }
    SUBCASE("saddle violates everywhere") {
        Matrix f(21, 21);
        for (int i = 0; i < 21; ++i)
            for (int j = 0; j < 21; ++j) f(i, j) = 5.0 + a[i] * a[i] - a[j] * a[j];
        CHECK(roughness_metrics(a, a, f).convexity_violation == 1.0);
    }
    SUBCASE("checkerboard") {
        const double amp = 0.7;
        Matrix f(21, 21);
        for (int i = 0; i < 21; ++i)
            for (int j = 0; j < 21; ++j) f(i, j) = ((i + j) % 2 ? amp : -amp) + 10.0;
        CHECK(roughness_metrics(a, a, f).total_variation == Approx(2 * amp));
    }
    SUBCASE("infinite cells") {
        Matrix f = Matrix::Constant(21, 21, 1.0);
        f(0, 0) = kInf;
        f(20, 3) = kInf;
        const auto r = roughness_metrics(a, a, f);
        CHECK_FALSE(r.complete);
        CHECK(r.coverage == Approx(1.0 - 2.0 / 441));
        CHECK(r.total_variation == 0.0);
        CHECK(r.convexity_violation == 0.0);
        CHECK(std::isfinite(r.basin_width));
        CHECK(r.basin_width < std::sqrt(2.0));
    }
    SUBCASE("shape mismatch") {
        CHECK_THROWS(roughness_metrics(axis(5, -1, 1), a, Matrix::Zero(21, 21)));
    }
}

TEST_CASE("phase map") {
    CHECK(dynamics::spectral_radius(-0.3, 10.0, 0.01) > 1.0);
    CHECK(dynamics::spectral_radius(-1.0, 10.0, 0.01) < 1.0);

    const auto m = phase_scan(0.01, 0.0, 100.0, -5.0, 1.0, 200, 120);
    CHECK(m.omegas.size() == 200);
    CHECK(m.bs.size() == 120);
    CHECK(m.omegas.front() > 0.0);
    CHECK(m.omegas.back() < 100.0);
    for (std::size_t j = 0; j < m.omegas.size(); ++j) {
        CHECK(m.boundary[j] == dynamics::divergence_boundary(m.omegas[j], 0.01));
        CHECK(std::abs(m.boundary_radius[j] - 1.0) < 1e-9);
        for (std::size_t i = 0; i < m.bs.size(); ++i) {
            CHECK(m.divergent(i, j) == (m.radius(i, j) > 1.0));
            CHECK(m.divergent(i, j) == (m.bs[i] > m.boundary[j]));
        }
    }

    const double p = dynamics::divergence_boundary(10.0, 0.01);
    for (int k = 1; k <= 100; ++k) {
        const double eps = k * 1e-7;
        CHECK(dynamics::spectral_radius(p + eps, 10.0, 0.01) > 1.0);
        CHECK(dynamics::spectral_radius(p - eps, 10.0, 0.01) < 1.0);
    }

    const auto wide = phase_scan(0.01, 0.0, 200.0, -1.0, 1.0, 4, 2);
    CHECK(std::isnan(wide.boundary.back()));
    CHECK_THROWS(phase_scan(0.0, 0.0, 1.0, -1.0, 1.0, 2, 2));
}

TEST_CASE("gradient norm probe") {
    SUBCASE("boundary neuron keeps the adjoint norm") {
        const auto c = single_neuron(10.0, 0.0);
        const auto g = gradient_norm_probe(c, init_network(c), pulse(200), ProbeMode::Subthreshold);
        CHECK(g.norms.size() == 200);
        for (double v : g.norms) CHECK(v == Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("b = -1 decays by the spectral radius") {
        const double p = dynamics::divergence_boundary(10.0, 0.01);
        const auto c = single_neuron(10.0, 1.0 + p);
        const auto g = gradient_norm_probe(c, init_network(c), pulse(100), ProbeMode::Subthreshold);
        for (std::size_t t = 1; t < g.norms.size(); ++t)
            CHECK(g.norms[t - 1] / g.norms[t] == Approx(0.9950377).epsilon(1e-7));
    }
    SUBCASE("random parameters follow the law") {
        std::mt19937_64 rng(5);
        std::uniform_real_distribution<double> w(0.5, 99.0), off(0.0, 2.0);
        for (int k = 0; k < 10; ++k) {
            const double omega = w(rng), b_off = off(rng);
            const auto c = single_neuron(omega, b_off);
            const auto g = gradient_norm_probe(c, init_network(c), pulse(50), ProbeMode::Subthreshold);
            const double r =
                dynamics::spectral_radius(dynamics::divergence_boundary(omega, 0.01) - b_off, omega, 0.01);
            for (std::size_t t = 1; t < g.norms.size(); ++t)
                CHECK(g.norms[t - 1] / g.norms[t] == Approx(r).epsilon(1e-6));
        }
    }
    SUBCASE("spiking mode on a small network") {
        const auto s = small_problem();
        const auto batch = data::make_batch(s.ds, {0}, 0, 1);
        const auto g = gradient_norm_probe(s.config, s.w, batch, ProbeMode::Spiking);
        CHECK(g.norms.size() == 60);
        for (double v : g.norms) {
            CHECK(v >= 0.0);
            CHECK(std::isfinite(v));
        }
        CHECK_THROWS_AS(gradient_norm_probe(s.config, s.w, data::make_batch(s.ds, {0, 1}, 0, 2), ProbeMode::Spiking),
                        ShapeError);
    }
    SUBCASE("ALIF subthreshold") {
        auto c = single_neuron(10.0, 0.0);
        c.kind = NeuronKind::ALIF;
        const auto g = gradient_norm_probe(c, init_network(c), pulse(30), ProbeMode::Subthreshold);
        for (double v : g.norms) CHECK(v >= 0.0);
        CHECK(g.norms.front() < g.norms.back());
    }
    CHECK(probe_mode_from_string(to_string(ProbeMode::Subthreshold)) == ProbeMode::Subthreshold);
    CHECK_THROWS(probe_mode_from_string("loud"));
}

TEST_CASE("artifacts") {
    const auto dir = std::filesystem::temp_directory_path() / ("brf-analysis-" + std::to_string(::getpid()));
    write_text(dir / "empty", "");
    write_text(dir / "a", "a");
    CHECK(fnv1a_file(dir / "empty") == "cbf29ce484222325");
    CHECK(fnv1a_file(dir / "a") == "af63dc4c8601ec8c");
    std::filesystem::remove_all(dir);

    LandscapeGrid g;
    g.alphas = {-1, 1};
    g.betas = {-1, 0, 1};
    g.losses = Matrix::Constant(2, 3, 0.5);
    g.losses(1, 2) = kInf;
    const auto csv = landscape_csv(g);
    CHECK(csv.rfind("alpha,beta,loss\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
    CHECK(csv.find("1,1,inf\n") != std::string::npos);

    const auto m = phase_scan(0.01, 0.0, 100.0, -2.0, 1.0, 3, 2);
    std::istringstream in(phase_csv(m));
    std::string line;
    std::getline(in, line);
    CHECK(line == "omega,b,spectral_radius,divergent,boundary_b");
    int rows = 0;
    while (std::getline(in, line)) {
        double omega, b, r, p;
        int div;
        char c;
        std::istringstream row(line);
        row >> omega >> c >> b >> c >> r >> c >> div >> c >> p;
        CHECK(p == doctest::Approx(dynamics::divergence_boundary(omega, 0.01)).epsilon(1e-15));
        CHECK(div == (b > p));
        ++rows;
    }
    CHECK(rows == 6);

    GradNormTrace t;
    t.norms = {1.0, 0.5};
    CHECK(gradflow_csv(t) == "t,adjoint_norm\n0,1\n1,0.5\n");
}

TEST_CASE("single-neuron simulation") {
    SimulationSpec s;
    s.theta_c = kInf;
    s.steps = 400;
    SUBCASE("b = -0.3 grows, b = -1 decays, each by the spectral radius") {
        for (double b : {-0.3, -1.0}) {
            s.b = b;
            const auto tr = simulate_neuron(s);
            const double r = dynamics::spectral_radius(b, 10.0, 0.01);
            for (int t = 1; t < s.steps; ++t) {
                if (b > -0.5) CHECK(tr.amplitude[t] > tr.amplitude[t - 1]);
                else CHECK(tr.amplitude[t] < tr.amplitude[t - 1]);
                CHECK(tr.amplitude[t] / tr.amplitude[t - 1] == Approx(r).epsilon(1e-12));
            }
        }
    }
    SUBCASE("no stimulus stays at rest") {
        s.stimulus = Stimulus::None;
        s.b = -0.3;
        const auto tr = simulate_neuron(s);
        for (int t = 0; t < s.steps; ++t) {
            CHECK(tr.u_re[t] == 0.0);
            CHECK(tr.u_im[t] == 0.0);
            CHECK(tr.z[t] == 0);
        }
    }
    SUBCASE("spiking with BRF flags") {
        s.flags = dynamics::ResonatorFlags::brf();
        s.theta_c = 0.05;
        s.stimulus = Stimulus::Sinusoid;
        s.b_offset = 0.5;
        const auto tr = simulate_neuron(s);
        CHECK(std::accumulate(tr.z.begin(), tr.z.end(), 0) > 0);
        for (int t = 0; t < s.steps; ++t) CHECK(tr.dampening[t] <= dynamics::divergence_boundary(10.0, 0.01));
        CHECK(trace_csv(tr).rfind("t,input,u_re,u_im,abs_u,theta,b,z\n", 0) == 0);
    }
    SUBCASE("domain errors name the boundary") {
        s.flags = dynamics::ResonatorFlags::brf();
        s.b_offset = -0.1;
        CHECK_THROWS_WITH_AS(simulate_neuron(s), doctest::Contains("-0.5012562893"), dynamics::DomainError);
        s.b_offset = 0.0;
        s.omega = 150.0;
        CHECK_THROWS_WITH_AS(simulate_neuron(s), doctest::Contains("omega < 100"), dynamics::DomainError);
    }
    CHECK(stimulus_from_string("sinusoid") == Stimulus::Sinusoid);
    CHECK_THROWS(stimulus_from_string("noise"));
}
