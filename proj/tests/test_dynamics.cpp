#include <complex>
#include <limits>
#include <random>

#include "doctest.h"

#include "brf/dynamics.hpp"

using namespace brf::dynamics;
using doctest::Approx;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

TEST_CASE("divergence boundary values") {
    // Reference values from a 30-digit evaluation of the closed form.
    CHECK(divergence_boundary(10.0, 0.01) == Approx(-0.501256289338004526).epsilon(1e-14));
    CHECK(divergence_boundary(1e-9, 0.01) == Approx(0.0).epsilon(1e-12));
    CHECK(std::abs(divergence_boundary(1e-9, 0.01)) < 1e-12);
    CHECK_THROWS_AS(divergence_boundary(150.0, 0.01), DomainError);
    CHECK_THROWS_AS(divergence_boundary(100.0, 0.01), DomainError);
}

TEST_CASE("divergence boundary is negative and decreasing in omega") {
    double prev = 0.0;
    for (double w = 0.5; w < 99.0; w += 0.5) {
        const double p = divergence_boundary(w, 0.01);
        CHECK(p < 0.0);
        CHECK(p < prev);
        prev = p;
    }
}

TEST_CASE("boundary slope matches finite differences") {
    for (double w : {1.0, 10.0, 50.0, 90.0}) {
        const double h = 1e-6;
        const double fd = (divergence_boundary(w + h, 0.01) - divergence_boundary(w - h, 0.01)) / (2 * h);
        CHECK(divergence_boundary_slope(w, 0.01) == Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("effective dampening across flag combinations") {
    const auto brf = ResonatorFlags::brf();
    CHECK(effective_dampening(10.0, 0.1, 0.01, 0.0, brf) == Approx(-0.601256289338004527).epsilon(1e-14));
    CHECK(effective_dampening(10.0, 0.1, 0.01, 1.0, brf) == Approx(-1.601256289338004527).epsilon(1e-14));

    ResonatorFlags db_only{false, false, true, false};
    CHECK(effective_dampening(10.0, 0.1, 0.01, 1.0, db_only) == Approx(-0.601256289338004527).epsilon(1e-14));

    CHECK(effective_dampening(10.0, 0.3, 0.01, 0.0, ResonatorFlags::vanilla()) == -0.3);
    ResonatorFlags sr_only{false, true, false, false};
    CHECK(effective_dampening(10.0, 0.3, 0.01, 0.5, sr_only) == Approx(-0.8));

    CHECK_THROWS_AS(effective_dampening(150.0, 0.1, 0.01, 0.0, brf), DomainError);
    // Without the boundary the omega range is not consulted.
    CHECK_NOTHROW(effective_dampening(150.0, 0.1, 0.01, 0.0, ResonatorFlags::vanilla()));
}

TEST_CASE("effective dampening never exceeds the boundary with the boundary on") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> w(0.1, 99.0), off(0.0, 2.0), q(0.0, 5.0);
    for (int k = 0; k < 500; ++k) {
        const double omega = w(rng);
        for (bool sr : {false, true}) {
            ResonatorFlags f{true, sr, true, false};
            CHECK(effective_dampening(omega, off(rng), 0.01, q(rng), f) <= divergence_boundary(omega, 0.01));
        }
    }
}

TEST_CASE("vector forms") {
    ResonatorParams p{{10.0, 20.0}, {0.1, 0.2}, 0.01};
    CHECK_NOTHROW(p.validate());
    const auto b = effective_dampening(p, {0.0, 0.5}, ResonatorFlags::brf());
    CHECK(b[0] == Approx(divergence_boundary(10.0, 0.01) - 0.1));
    CHECK(b[1] == Approx(divergence_boundary(20.0, 0.01) - 0.2 - 0.5));
    CHECK(divergence_boundary(p.omega, 0.01).size() == 2);

    ResonatorParams bad = p;
    bad.b_offset[1] = -0.1;
    CHECK_THROWS_AS(bad.validate(), DomainError);
    bad = p;
    bad.omega[0] = 100.0;
    CHECK_THROWS_AS(bad.validate(), DomainError);
    bad = p;
    bad.omega[0] = 0.0;
    CHECK_THROWS_AS(bad.validate(), DomainError);
    CHECK_THROWS_AS(effective_dampening(p, {0.0}, ResonatorFlags::brf()), DomainError);
}

TEST_CASE("resonator step examples") {
    const auto brf = ResonatorFlags::brf();
    SUBCASE("zero state is a fixed point") {
        const auto r = resonator_step({0, 0, 0}, 10.0, 0.1, 0.01, brf, 0.0);
        CHECK(r.state.u_re == 0.0);
        CHECK(r.state.u_im == 0.0);
        CHECK(r.state.q == 0.0);
        CHECK(r.spike.z == 0);
    }
    SUBCASE("one subthreshold step from (1, 0, 0)") {
        const auto r = resonator_step({1, 0, 0}, 10.0, 0.1, 0.01, brf, 0.0, 1.0, 0.9);
        CHECK(r.state.u_re == Approx(0.993987437106619955).epsilon(1e-14));
        CHECK(r.state.u_im == Approx(0.1).epsilon(1e-14));
        CHECK(r.spike.z == 0);
        CHECK(r.state.q == 0.0);
    }
    SUBCASE("refractory threshold suppresses a spike") {
        // delta*x = 1.2 puts Re u at exactly 1.2 from rest; q_prev = 0.5 raises theta to 1.5.
        ResonatorFlags rp_only{true, false, false, false};
        const auto r = resonator_step({0, 0, 0.5}, 10.0, 0.0, 0.01, rp_only, 120.0, 1.0, 0.9);
        CHECK(r.state.u_re == Approx(1.2));
        CHECK(r.threshold == Approx(1.5));
        CHECK(r.spike.z == 0);
        CHECK(r.state.q == Approx(0.45));
    }
    SUBCASE("spike increments q by one") {
        const auto r = resonator_step({0, 0, 0}, 10.0, 0.0, 0.01, brf, 120.0, 1.0, 0.9);
        CHECK(r.state.u_re == Approx(1.2));
        CHECK(r.spike.z == 1);
        CHECK(r.state.q == 1.0);
    }
    SUBCASE("heaviside fires on threshold touch") {
        CHECK(heaviside(0.0) == 1.0);
        CHECK(heaviside(-1e-300) == 0.0);
    }
    SUBCASE("hard reset sets (0, 1)") {
        ResonatorFlags hr{false, false, false, true};
        const auto r = resonator_step({0, 0, 0}, 10.0, 0.1, 0.01, hr, 120.0);
        CHECK(r.spike.z == 1);
        CHECK(r.state.u_re == 0.0);
        CHECK(r.state.u_im == 1.0);
    }
    SUBCASE("q stays zero without refractory or smooth reset") {
        const auto r = resonator_step({0, 0, 0}, 10.0, 0.1, 0.01, ResonatorFlags::vanilla(), 120.0);
        CHECK(r.spike.z == 1);
        CHECK(r.state.q == 0.0);
    }
}

TEST_CASE("vanilla RF matches a complex-arithmetic oracle") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> w(1.0, 90.0), off(0.0, 2.0), inp(-3.0, 3.0);
    for (int trial = 0; trial < 20; ++trial) {
        const double omega = w(rng), b_off = off(rng), delta = 0.01;
        std::complex<double> u{0.0, 0.0};
        NeuronState s;
        double max_err = 0.0;
        for (int t = 0; t < 100; ++t) {
            const double x = inp(rng);
            u = u + delta * (std::complex<double>(-b_off, omega) * u + x);
            s = resonator_step(s, omega, b_off, delta, ResonatorFlags::vanilla(), x, kInf).state;
            max_err = std::max({max_err, std::abs(s.u_re - u.real()), std::abs(s.u_im - u.imag())});
        }
        CHECK(max_err < 1e-12);
    }
}

TEST_CASE("refractory accumulator stays non-negative") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> inp(-50.0, 300.0);
    for (auto f : {ResonatorFlags::brf(), ResonatorFlags{true, false, false, false},
                   ResonatorFlags{false, true, true, false}}) {
        NeuronState s;
        for (int t = 0; t < 2000; ++t) {
            s = resonator_step(s, 20.0, 0.2, 0.01, f, inp(rng)).state;
            REQUIRE(s.q >= 0.0);
        }
    }
}

TEST_CASE("smooth reset keeps the per-step radius at or below one") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> inp(-50.0, 300.0);
    const auto f = ResonatorFlags::brf();
    NeuronState s;
    for (int t = 0; t < 2000; ++t) {
        const auto r = resonator_step(s, 35.0, 0.05, 0.01, f, inp(rng));
        CHECK(r.dampening <= divergence_boundary(35.0, 0.01));
        CHECK(spectral_radius(r.dampening, 35.0, 0.01) <= 1.0 + 1e-15);
        s = r.state;
    }
}

TEST_CASE("free oscillation amplitude follows r^T") {
    const double omega = 10.0, delta = 0.01;
    for (double b : {-0.3, -1.0}) {
        const double r = spectral_radius(b, omega, delta);
        NeuronState s{1.0, 0.0, 0.0};
        for (int t = 1; t <= 500; ++t) {
            const double before = s.amplitude();
            // Vanilla flags read b' directly as -b.
            s = resonator_step(s, omega, -b, delta, ResonatorFlags::vanilla(), 0.0, kInf).state;
            CHECK(s.amplitude() == Approx(std::pow(r, t)).epsilon(1e-9));
            if (b == -0.3) CHECK(s.amplitude() > before);
            else CHECK(s.amplitude() < before);
        }
    }
}

TEST_CASE("state jacobian") {
    const auto J = state_jacobian(-1.0, 10.0, 0.01);
    CHECK(J(0, 0) == Approx(0.99));
    CHECK(J(0, 1) == Approx(-0.1));
    CHECK(J(1, 0) == Approx(0.1));
    CHECK(J(1, 1) == Approx(0.99));
    const auto I = state_jacobian(-3.0, 40.0, 0.0);
    CHECK(I(0, 0) == 1.0);
    CHECK(I(1, 1) == 1.0);
    CHECK(I(0, 1) == 0.0);
    CHECK(I(1, 0) == 0.0);

    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-5, 5);
    for (int k = 0; k < 100; ++k) {
        const auto Jr = state_jacobian(u(rng), u(rng) * 10, std::abs(u(rng)) / 10);
        CHECK(Jr(0, 1) == -Jr(1, 0));
        CHECK(Jr(0, 0) == Jr(1, 1));
    }
}

TEST_CASE("jacobian is a scaled rotation") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(-1, 1), w(0.1, 99.0), bb(-5.0, 0.5);
    for (int k = 0; k < 1000; ++k) {
        const double b = bb(rng), omega = w(rng), delta = 0.01;
        const auto J = state_jacobian(b, omega, delta);
        const double v0 = u(rng), v1 = u(rng);
        const double j0 = J(0, 0) * v0 + J(0, 1) * v1;
        const double j1 = J(1, 0) * v0 + J(1, 1) * v1;
        const double lhs = std::hypot(j0, j1);
        const double rhs = spectral_radius(b, omega, delta) * std::hypot(v0, v1);
        CHECK(std::abs(lhs - rhs) <= 1e-12 * rhs);
    }
}

TEST_CASE("spectral radius examples") {
    CHECK(spectral_radius(-0.3, 10.0, 0.01) == Approx(1.00200249500687372).epsilon(1e-14));
    CHECK(spectral_radius(-1.0, 10.0, 0.01) == Approx(0.995037687728459861).epsilon(1e-14));
    CHECK(spectral_radius(divergence_boundary(10.0, 0.01), 10.0, 0.01) == Approx(1.0).epsilon(1e-15));
}

TEST_CASE("boundary round trip over random (omega, delta)") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> ud(1e-4, 0.5), ux(0.0, 1.0);
    double worst = 0.0;
    for (int k = 0; k < 1000; ++k) {
        const double delta = ud(rng);
        const double omega = std::max(1e-9, ux(rng) * (1.0 - 1e-9) / delta);
        worst = std::max(worst, std::abs(spectral_radius(divergence_boundary(omega, delta), omega, delta) - 1.0));
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("ALIF step") {
    SUBCASE("zero state is a fixed point") {
        const auto r = alif_step({}, {0.9, 0.95, 1.8, 1.0}, 0.0);
        CHECK(r.state.u == 0.0);
        CHECK(r.state.eta == 0.0);
        CHECK(r.spike.z == 0);
    }
    SUBCASE("threshold touch fires") {
        const auto r = alif_step({}, {0.9, 0.95, 0.0, 1.0}, 10.0);
        CHECK(r.state.u == 1.0);
        CHECK(r.spike.z == 1);
    }
    SUBCASE("soft reset subtracts the previous threshold") {
        const ALIFParams p{0.9, 0.95, 0.0, 1.0};
        const auto r1 = alif_step({}, p, 20.0);
        REQUIRE(r1.spike.z == 1);
        const auto r2 = alif_step(r1.state, p, 0.0);
        CHECK(r2.state.u == Approx(0.9 * r1.state.u - 1.0));
    }
    SUBCASE("adaptive threshold rises while spiking") {
        const ALIFParams p{0.5, 0.9, 1.8, 1.0};
        ALIFState s;
        double prev_theta = -1.0;
        int spikes = 0;
        for (int t = 0; t < 10; ++t) {
            const auto r = alif_step(s, p, 1000.0);
            if (r.spike.fired()) {
                if (spikes > 0) CHECK(r.theta > prev_theta);
                prev_theta = r.theta;
                ++spikes;
            }
            s = r.state;
        }
        CHECK(spikes >= 2);
    }
}

TEST_CASE("leaky integrator") {
    CHECK(li_step(0.0, 0.9, 0.0) == 0.0);
    CHECK(li_step(1.0, 0.9, 0.0) == 0.9);
    double y = 0.0;
    for (int t = 0; t < 1000; ++t) y = li_step(y, 0.9, 3.5);
    CHECK(std::abs(y - 3.5) < 1e-6);
}
