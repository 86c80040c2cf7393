// Tests for the split-step GPE integrator: grid validation, exactness of the
// driven fixed point, loss/decay rates, norm conservation, second-order
// convergence in dt, absorbing boundaries, noise determinism, the linearized
// propagator, and the full transcritical steady-state pipeline.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <vector>

#include "polsim/core_model.hpp"
#include "polsim/gpe_engine.hpp"
#include "polsim/units.hpp"

using namespace polsim;
using units::hbar;
using cd = std::complex<double>;

namespace {

PolaritonParams paper_params() {
    PolaritonParams p;
    p.m_star = 2.75e-35;
    p.hbar_omega0 = 1473.36;
    p.hbar_gamma = 47.0;
    p.hbar_g = 3.0e-4;
    p.hbar_omega_p = 1473.85;
    return p;
}

SimGrid make_grid(int n, double length, const PolaritonParams& p, double dt_scale = 1.0) {
    SimGrid g;
    g.n_points = n;
    g.length = length;
    g.x0 = 0;
    g.dt = SimGrid::stable_dt(length / n, p, 0.4) * dt_scale;
    return g;
}

// Exact homogeneous branch state for a uniform drive hbar*F at carrier k:
// the EOS root n gives |A|^2, the complex phase follows from the stationarity
// condition (g n - delta_eff - i gamma/2) A = -F/hbar.
Eigen::ArrayXcd branch_state(const SimGrid& grid, const PolaritonParams& p, double hbarF,
                             double k, double n) {
    cd denom(p.g() * n - p.delta_eff(hbar * k / p.mass()), -0.5 * p.gamma());
    cd A = -(hbarF / hbar) / denom;
    Eigen::ArrayXd xs = grid.x();
    Eigen::ArrayXcd psi(grid.n_points);
    for (int i = 0; i < grid.n_points; ++i) psi[i] = A * std::polar(1.0, k * xs[i]);
    return psi;
}

DriveTerm uniform_pump(const SimGrid& grid, double hbarF, double k) {
    DriveTerm d;
    d.kind = DriveTerm::Kind::pump;
    d.envelope = Eigen::ArrayXd::Ones(grid.n_points);
    d.k = k;
    d.amplitude = hbarF;
    return d;
}

double max_rel_density_err(const Eigen::ArrayXcd& psi, double n_ref) {
    return ((psi.abs2() - n_ref).abs() / n_ref).maxCoeff();
}

}  // namespace

TEST_CASE("grid: validation, spacing, and the stability bound") {
    PolaritonParams p = paper_params();

    SimGrid g = make_grid(256, 100.0, p);
    CHECK(g.dx() == doctest::Approx(100.0 / 256));
    CHECK_NOTHROW(g.validate(p));

    // [TRIVIAL] stable_dt is the documented formula
    CHECK(SimGrid::stable_dt(0.5, p, 1.0) ==
          doctest::Approx(0.25 * p.mass() / (M_PI * hbar)));

    SimGrid bad = g;
    bad.n_points = 300;  // not a power of two
    CHECK_THROWS_AS(bad.validate(p), ValidationError);

    bad = g;
    bad.dt = SimGrid::stable_dt(g.dx(), p, 1.0) * 1.5;
    CHECK_THROWS_AS(bad.validate(p), ValidationError);

    bad = g;
    bad.dt = -1;
    CHECK_THROWS_AS(bad.validate(p), ValidationError);

    // x covers [x0, x0 + L), k is in standard FFT order
    Eigen::ArrayXd xs = g.x();
    CHECK(xs[0] == doctest::Approx(0.0));
    CHECK(xs[g.n_points - 1] == doctest::Approx(g.length - g.dx()));
    Eigen::ArrayXd ks = g.k();
    CHECK(ks[0] == 0.0);
    CHECK(ks[1] == doctest::Approx(2 * M_PI / g.length));
    CHECK(ks[g.n_points - 1] == doctest::Approx(-2 * M_PI / g.length));
}

TEST_CASE("numeric helpers: gradient order, unwrap, median") {
    const int n = 128;
    const double L = 10.0, dx = L / n;

    // periodic 4th-order gradient: error on sin(2 pi x / L) drops ~16x per
    // mesh doubling
    auto grad_err = [&](int m) {
        double h = L / m;
        Eigen::ArrayXd f(m), ref(m);
        for (int i = 0; i < m; ++i) {
            double x = i * h;
            f[i] = std::sin(2 * M_PI * x / L);
            ref[i] = 2 * M_PI / L * std::cos(2 * M_PI * x / L);
        }
        return (numeric::gradient_4th_periodic(f, h) - ref).abs().maxCoeff();
    };
    double e1 = grad_err(64), e2 = grad_err(128);
    CHECK(e1 / e2 > 12.0);

    // one-sided variant agrees with the periodic one away from the edges
    Eigen::ArrayXd f(n);
    for (int i = 0; i < n; ++i) f[i] = std::cos(3.0 * i * dx / L);
    Eigen::ArrayXd a = numeric::gradient_4th_periodic(f, dx);
    Eigen::ArrayXd b = numeric::gradient_4th_onesided(f, dx);
    for (int i = 4; i < n - 4; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));

    // unwrap reconstructs a linear phase of slope k from its wrapped values
    double k = 2.3;
    Eigen::ArrayXd wrapped(n), lin(n);
    for (int i = 0; i < n; ++i) {
        lin[i] = k * i * dx;
        wrapped[i] = std::arg(std::polar(1.0, lin[i]));
    }
    Eigen::ArrayXd un = numeric::unwrap_phase(wrapped);
    for (int i = 0; i < n; ++i) CHECK(un[i] == doctest::Approx(lin[i]).epsilon(1e-12));

    CHECK(numeric::median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(numeric::median({4.0, 1.0, 2.0, 3.0}) == doctest::Approx(2.5));
    CHECK_THROWS_AS(numeric::median({}), ValidationError);
}

TEST_CASE("absorbing mask: zero margin, interior, and edge values") {
    PolaritonParams p = paper_params();
    SimGrid g = make_grid(256, 100.0, p);

    Eigen::ArrayXd zero = absorbing_mask(g, 0.0, 1.0);
    CHECK(zero.abs().maxCoeff() == 0.0);  // [TRIVIAL]

    Eigen::ArrayXd mask = absorbing_mask(g, 20.0, 0.7);
    Eigen::ArrayXd xs = g.x();
    for (int i = 0; i < g.n_points; ++i) {
        if (xs[i] > 20.0 && xs[i] < 80.0)
            CHECK(mask[i] == 0.0);
        else
            CHECK(mask[i] <= 0.7 + 1e-15);
    }
    CHECK(mask[0] == doctest::Approx(0.7));           // full strength at the edge
    CHECK(mask.maxCoeff() == doctest::Approx(0.7));
    CHECK_THROWS_AS(absorbing_mask(g, -1.0, 1.0), ValidationError);
}

TEST_CASE("engine: zero drive and zero field is a fixed point") {
    PolaritonParams p = paper_params();
    SimGrid g = make_grid(128, 50.0, p);
    GpeEngine eng(g, p, Eigen::ArrayXd::Zero(g.n_points), Eigen::ArrayXd::Zero(g.n_points), {});
    FieldState s{Eigen::ArrayXcd::Zero(g.n_points), 0.0};
    eng.advance(s, 200);
    CHECK(s.psi.abs().maxCoeff() == 0.0);
    CHECK(s.t == doctest::Approx(200 * g.dt));
}

TEST_CASE("engine: uniform drive at k = 0, analytic branch is a discrete fixed point") {
    PolaritonParams p = paper_params();
    SimGrid g = make_grid(256, 100.0, p);

    double F = amplitude_above_turning_point(0.0, p, 0.9);  // 90% above the fold
    double n_up = upper_branch_density(F, 0.0, p);

    GpeEngine eng(g, p, Eigen::ArrayXd::Zero(g.n_points), Eigen::ArrayXd::Zero(g.n_points),
                  {uniform_pump(g, F, 0.0)}, n_up);
    FieldState s{branch_state(g, p, F, 0.0, n_up), 0.0};
    eng.advance(s, std::lround(20.0 / g.dt));
    CHECK(max_rel_density_err(s.psi, n_up) < 1e-10);

    // a 5% amplitude kick relaxes back onto the same branch
    FieldState kicked{branch_state(g, p, F, 0.0, n_up) * 1.05, 0.0};
    eng.advance(kicked, std::lround(700.0 / g.dt));
    CHECK(max_rel_density_err(kicked.psi, n_up) < 1e-8);
}

TEST_CASE("engine: uniform drive at finite k matches the EOS root to 1e-6") {
    PolaritonParams p = paper_params();
    SimGrid g = make_grid(256, 100.0, p, 0.5);
    double k = 8.0 * 2.0 * M_PI / g.length;  // commensurate carrier
    double v = hbar * k / p.mass();

    double F = amplitude_above_turning_point(v, p, 0.9);
    double n_up = upper_branch_density(F, v, p);

    GpeEngine eng(g, p, Eigen::ArrayXd::Zero(g.n_points), Eigen::ArrayXd::Zero(g.n_points),
                  {uniform_pump(g, F, k)}, n_up);
    FieldState s{branch_state(g, p, F, k, n_up), 0.0};
    eng.advance(s, std::lround(50.0 / g.dt));
    CHECK(max_rel_density_err(s.psi, n_up) < 1e-6);
}

TEST_CASE("engine: undriven modulus decays as exp(-gamma t / 2)") {
    PolaritonParams p = paper_params();
    SimGrid g = make_grid(256, 100.0, p);
    double k = 8.0 * 2.0 * M_PI / g.length;

    Eigen::ArrayXd xs = g.x();
    Eigen::ArrayXcd psi0(g.n_points);
    for (int i = 0; i < g.n_points; ++i) psi0[i] = std::polar(25.0, k * xs[i]);

    GpeEngine eng(g, p, Eigen::ArrayXd::Zero(g.n_points), Eigen::ArrayXd::Zero(g.n_points), {});
    FieldState s{psi0, 0.0};
    double t_end = 5.0 / p.gamma();
    long steps = std::lround(t_end / g.dt);
    eng.advance(s, steps);

    double expected = 25.0 * std::exp(-0.5 * p.gamma() * steps * g.dt);
    for (int i = 0; i < g.n_points; ++i)
        CHECK(std::abs(s.psi[i]) == doctest::Approx(expected).epsilon(1e-4));
}

TEST_CASE("engine: gamma = 0, no drive conserves the norm to 1e-10 over 1000 steps") {
    PolaritonParams p = paper_params();
    p.hbar_gamma = 0.0;
    SimGrid g = make_grid(256, 100.0, p);

    Eigen::ArrayXd xs = g.x();
    Eigen::ArrayXcd psi0(g.n_points);
    for (int i = 0; i < g.n_points; ++i)
        psi0[i] = 30.0 * std::exp(-0.5 * std::pow((xs[i] - 50.0) / 6.0, 2)) *
                  std::polar(1.0, 0.4 * xs[i]);

    GpeEngine eng(g, p, Eigen::ArrayXd::Zero(g.n_points), Eigen::ArrayXd::Zero(g.n_points), {});
    FieldState s{psi0, 0.0};
    double norm0 = psi0.abs2().sum() * g.dx();
    eng.advance(s, 1000);
    double norm1 = s.psi.abs2().sum() * g.dx();
    CHECK(std::abs(norm1 - norm0) / norm0 < 1e-10);
}

TEST_CASE("engine: dt halving shows second-order convergence") {
    PolaritonParams p = paper_params();
    SimGrid g = make_grid(256, 100.0, p);
    double k = 8.0 * 2.0 * M_PI / g.length;
    double v = hbar * k / p.mass();
    double F = amplitude_above_turning_point(v, p, 0.9);

    Eigen::ArrayXd xs = g.x();
    Eigen::ArrayXcd psi0(g.n_points);
    for (int i = 0; i < g.n_points; ++i)
        psi0[i] = 20.0 * std::exp(-0.5 * std::pow((xs[i] - 30.0) / 8.0, 2)) *
                      std::polar(1.0, k * xs[i]) +
                  10.0 * std::polar(1.0, k * xs[i]);

    DriveTerm probe = make_probe_drive(g, 60.0, 6.0, 3.0 * 2.0 * M_PI / g.length, 0.4,
                                       0.05 * F, 1.0);
    auto run = [&](double dt, long steps) {
        SimGrid gg = g;
        gg.dt = dt;
        GpeEngine eng(gg, p, Eigen::ArrayXd::Zero(g.n_points),
                      Eigen::ArrayXd::Zero(g.n_points), {uniform_pump(g, F, k), probe});
        FieldState s{psi0, 0.0};
        eng.advance(s, steps);
        return s.psi;
    };

    double dt0 = 0.0032;
    Eigen::ArrayXcd c0 = run(dt0, 640);
    Eigen::ArrayXcd c1 = run(dt0 / 2, 1280);
    Eigen::ArrayXcd c2 = run(dt0 / 4, 2560);  // reference

    double e0 = std::sqrt((c0 - c2).abs2().sum());
    double e1 = std::sqrt((c1 - c2).abs2().sum());
    double ratio = e0 / e1;  // Richardson: 5 for a clean 2nd-order scheme
    CHECK(ratio > 3.5);
    CHECK(ratio < 7.0);
}

TEST_CASE("engine: advance equals repeated single steps") {
    PolaritonParams p = paper_params();
    SimGrid g = make_grid(128, 50.0, p);
    double k = 4.0 * 2.0 * M_PI / g.length;
    double F = amplitude_above_turning_point(0.0, p, 0.9);

    Eigen::ArrayXd xs = g.x();
    Eigen::ArrayXcd psi0(g.n_points);
    for (int i = 0; i < g.n_points; ++i)
        psi0[i] = 15.0 * std::polar(1.0, k * xs[i]) + cd(1.0, -0.5);

    GpeEngine e1(g, p, Eigen::ArrayXd::Zero(g.n_points), Eigen::ArrayXd::Zero(g.n_points),
                 {uniform_pump(g, F, k)});
    GpeEngine e2(g, p, Eigen::ArrayXd::Zero(g.n_points), Eigen::ArrayXd::Zero(g.n_points),
                 {uniform_pump(g, F, k)});
    FieldState a{psi0, 0.0}, b{psi0, 0.0};
    e1.advance(a, 100);
    for (int i = 0; i < 100; ++i) e2.step(b);

    double scale = std::sqrt(psi0.abs2().maxCoeff());
    CHECK((a.psi - b.psi).abs().maxCoeff() / scale < 1e-12);
    CHECK(a.t == doctest::Approx(b.t));
}

TEST_CASE("engine: the blowup guard fires") {
    PolaritonParams p = paper_params();
    SimGrid g = make_grid(128, 50.0, p);
    GpeEngine eng(g, p, Eigen::ArrayXd::Zero(g.n_points), Eigen::ArrayXd::Zero(g.n_points),
                  {}, 1.0);
    FieldState s{Eigen::ArrayXcd::Constant(g.n_points, cd(1e6, 0)), 0.0};
    CHECK_THROWS_AS(eng.step(s), NumericalBlowup);
}

TEST_CASE("absorbing boundary: wavepacket reflection below 1e-3") {
    // nearly free particle: negligible loss and interaction, a packet launched
    // at the right absorber must not come back
    PolaritonParams p = paper_params();
    p.hbar_gamma = 1e-6;
    p.hbar_g = 1e-12;
    p.hbar_omega_p = p.hbar_omega0;  // no detuning phase
    SimGrid g = make_grid(1024, 400.0, p);

    double k0 = 0.8;
    double vg = hbar * k0 / p.mass();  // ~3 um/ps
    Eigen::ArrayXd xs = g.x();
    Eigen::ArrayXcd psi0(g.n_points);
    for (int i = 0; i < g.n_points; ++i)
        psi0[i] = std::exp(-0.5 * std::pow((xs[i] - 200.0) / 8.0, 2)) *
                  std::polar(1.0, k0 * xs[i]);

    Eigen::ArrayXd mask = absorbing_mask(g, 50.0, 1.0);
    GpeEngine eng(g, p, Eigen::ArrayXd::Zero(g.n_points), mask, {});
    FieldState s{psi0, 0.0};

    // reach the absorber (~150 um away) and give any reflection time to
    // return into the interior window
    double t_end = 2.2 * 150.0 / vg;
    eng.advance(s, std::lround(t_end / g.dt));

    double back = 0;
    for (int i = 0; i < g.n_points; ++i)
        if (xs[i] > 100.0 && xs[i] < 300.0) back = std::max(back, std::abs(s.psi[i]));
    CHECK(back < 1e-3);
}

TEST_CASE("noise runs are deterministic per seed") {
    PolaritonParams p = paper_params();
    SimGrid g = make_grid(128, 50.0, p);
    double k = 4.0 * 2.0 * M_PI / g.length;
    double F = amplitude_above_turning_point(hbar * k / p.mass(), p, 0.9);
    double n_up = upper_branch_density(F, hbar * k / p.mass(), p);

    BackgroundState bg;
    bg.grid = g;
    bg.params = p;
    bg.pump.k_up = k;
    bg.pump.k_down = k + 2.0 * M_PI / g.length;
    bg.pump.x_switch = g.length + 10.0;  // upstream drive covers the whole box
    bg.pump.F_up = F;
    bg.pump.F_down = 0;
    bg.pump.omega_p = p.omega_p();
    bg.defect.width = 1.0;
    bg.psi0 = branch_state(g, p, F, k, n_up);
    bg.n0 = bg.psi0.abs2();
    bg.absorb_rate = Eigen::ArrayXd::Zero(g.n_points);

    DriveTerm nz = make_noise_drive(1e-4 * std::sqrt(n_up), 1234);
    FieldHistory h1 = run_with_noise(bg, nz, 1.0, 0.1, 0.5);
    FieldHistory h2 = run_with_noise(bg, nz, 1.0, 0.1, 0.5);
    CHECK((h1.frames - h2.frames).cwiseAbs().maxCoeff() == 0.0);
    CHECK(h1.times.size() >= 9);
    CHECK(h1.dt_record == doctest::Approx(0.1).epsilon(0.1));
    CHECK(h1.frames.cwiseAbs().maxCoeff() > 0.0);  // noise actually injected

    DriveTerm nz2 = make_noise_drive(1e-4 * std::sqrt(n_up), 99);
    FieldHistory h3 = run_with_noise(bg, nz2, 1.0, 0.1, 0.5);
    CHECK((h1.frames - h3.frames).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("probe below the upstream gap is rejected") {
    PolaritonParams p = paper_params();
    SimGrid g = make_grid(128, 50.0, p);

    BackgroundState bg;
    bg.grid = g;
    bg.params = p;
    bg.pump.k_up = 0.1;
    bg.pump.k_down = 0.2;
    bg.pump.x_switch = 25.0;
    bg.pump.F_up = 1.0;
    bg.pump.omega_p = p.omega_p();
    bg.defect.width = 1.0;
    bg.psi0 = Eigen::ArrayXcd::Zero(g.n_points);
    bg.n0 = Eigen::ArrayXd::Zero(g.n_points);
    bg.absorb_rate = Eigen::ArrayXd::Zero(g.n_points);

    // a gapped upstream plateau: delta_eff < 0 makes both factors positive
    PolaritonParams pg = p;
    pg.hbar_omega_p = pg.hbar_omega0 - 0.1;
    bg.up_plateau = local_hydro(100.0, 0.0, pg);
    bg.up_plateau_valid = true;
    REQUIRE(bg.up_plateau.gap() > 0);

    DriveTerm probe = make_probe_drive(g, 25.0, 5.0, 0.3, 0.5 * bg.up_plateau.gap(), 0.01, 5.0);
    CHECK_THROWS_AS(run_with_probe(bg, probe, 1.0, 1.0, 0.5), ProbeInGap);
}

TEST_CASE("linearized propagator matches the full GPE for a weak probe") {
    PolaritonParams p = paper_params();
    double kbase = 8.0 * 2.0 * M_PI / 100.0;
    double v = hbar * kbase / p.mass();
    double F = amplitude_above_turning_point(v, p, 0.9);
    double n_up = upper_branch_density(F, v, p);

    // The two integrators discretize the same continuum flow to second order
    // with different error constants, so their difference must itself shrink
    // as dt^2. No absorbing mask: a raw-field absorber re-shapes the
    // background, which the frozen-background linearization cannot represent.
    Eigen::ArrayXcd a_final;  // linearized response at the finest dt
    auto rel_diff = [&](double dt_scale, Eigen::ArrayXcd* keep_lin) {
        SimGrid g = make_grid(256, 100.0, p, dt_scale);
        double k = 8.0 * 2.0 * M_PI / g.length;
        Eigen::ArrayXcd psi0 = branch_state(g, p, F, k, n_up);
        Eigen::ArrayXd mask = Eigen::ArrayXd::Zero(g.n_points);
        DriveTerm probe = make_probe_drive(g, 50.0, 6.0, 5.0 * 2.0 * M_PI / g.length, 0.35,
                                           1e-4 * F, 5.0);

        GpeEngine full(g, p, Eigen::ArrayXd::Zero(g.n_points), mask,
                       {uniform_pump(g, F, k), probe}, n_up);
        FieldState s{psi0, 0.0};
        long steps = std::lround(30.0 / g.dt);
        full.advance(s, steps);
        Eigen::ArrayXcd dpsi_full = s.psi - psi0;

        BackgroundState bg;
        bg.grid = g;
        bg.params = p;
        bg.defect.width = 1.0;
        bg.psi0 = psi0;
        bg.n0 = psi0.abs2();
        bg.absorb_rate = mask;
        LinearizedEngine lin(bg, p.gamma(), mask, probe);
        FieldState a{Eigen::ArrayXcd::Zero(g.n_points), 0.0};
        lin.advance(a, steps);
        if (keep_lin) *keep_lin = a.psi;

        double denom = std::sqrt(dpsi_full.abs2().sum());
        REQUIRE(denom > 0);
        return std::sqrt((a.psi - dpsi_full).abs2().sum()) / denom;
    };

    double r1 = rel_diff(0.5, nullptr);
    double r2 = rel_diff(0.25, &a_final);
    CHECK(r2 < 4e-3);            // close at the finest step
    CHECK(r1 / r2 > 3.2);        // and converging at second order
    CHECK(r1 / r2 < 4.8);

    // exact linearity of the linearized engine
    {
        SimGrid g = make_grid(256, 100.0, p, 0.25);
        double k = 8.0 * 2.0 * M_PI / g.length;
        BackgroundState bg;
        bg.grid = g;
        bg.params = p;
        bg.defect.width = 1.0;
        bg.psi0 = branch_state(g, p, F, k, n_up);
        bg.n0 = bg.psi0.abs2();
        bg.absorb_rate = Eigen::ArrayXd::Zero(g.n_points);
        DriveTerm probe2 = make_probe_drive(g, 50.0, 6.0, 5.0 * 2.0 * M_PI / g.length, 0.35,
                                            2e-4 * F, 5.0);
        LinearizedEngine lin2(bg, p.gamma(), bg.absorb_rate, probe2);
        FieldState a2{Eigen::ArrayXcd::Zero(g.n_points), 0.0};
        lin2.advance(a2, std::lround(30.0 / g.dt));
        CHECK((a2.psi - 2.0 * a_final).abs().maxCoeff() / a_final.abs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("step free function matches the engine") {
    PolaritonParams p = paper_params();
    SimGrid g = make_grid(128, 50.0, p);
    double k = 4.0 * 2.0 * M_PI / g.length;
    double F = amplitude_above_turning_point(0.0, p, 0.9);

    Eigen::ArrayXd xs = g.x();
    Eigen::ArrayXcd psi0(g.n_points);
    for (int i = 0; i < g.n_points; ++i) psi0[i] = 10.0 * std::polar(1.0, k * xs[i]);

    std::vector<DriveTerm> drives = {uniform_pump(g, F, k)};
    FieldState out = step({psi0, 0.0}, drives, Eigen::ArrayXd::Zero(g.n_points), g, p);

    GpeEngine eng(g, p, Eigen::ArrayXd::Zero(g.n_points), Eigen::ArrayXd::Zero(g.n_points),
                  drives);
    FieldState ref{psi0, 0.0};
    eng.step(ref);
    CHECK((out.psi - ref.psi).abs().maxCoeff() == 0.0);
    CHECK(out.t == ref.t);
}

TEST_CASE("find_steady_state: transcritical flow with horizon and plateaus") {
    PolaritonParams p = paper_params();
    SimGrid g = make_grid(1024, 400.0, p);

    PumpProfile pump;
    pump.k_up = 0.27;
    pump.k_down = 0.539;
    pump.x_switch = 200.0;
    pump.omega_p = p.omega_p();
    double v_up = hbar * pump.k_up / p.mass();
    double v_down = hbar * pump.k_down / p.mass();
    pump.F_up = amplitude_above_turning_point(v_up, p, 8e-4);
    SupportCalibration cal = calibrate_downstream_support(v_down, p, 0.81);
    pump.F_down = cal.F;

    DefectPotential defect;
    defect.depth = -0.85;
    defect.width = 0.75;
    defect.center = 205.0;

    SteadyStateOptions opts;
    opts.absorb_margin = 40.0;
    BackgroundState bg = find_steady_state(g, p, pump, defect, 1e-6, 2500.0, opts);

    CHECK(bg.residual < 1e-6);
    REQUIRE(bg.horizon_x.has_value());
    CHECK(bg.horizon_crossings == 1);
    CHECK(std::abs(*bg.horizon_x - pump.x_switch) < 8.0);

    // plateau medians against the analytic branch values
    CHECK(bg.up_plateau_valid);
    CHECK(bg.down_plateau_valid);
    double n_up = upper_branch_density(pump.F_up, v_up, p);
    CHECK(bg.up_plateau.n0 == doctest::Approx(n_up).epsilon(0.02));
    CHECK(bg.up_plateau.v0 == doctest::Approx(v_up).epsilon(0.02));
    CHECK(bg.down_plateau.n0 == doctest::Approx(cal.n0).epsilon(0.03));
    CHECK(bg.down_plateau.v0 == doctest::Approx(v_down).epsilon(0.02));

    // upstream subsonic, downstream supersonic
    CHECK(std::abs(bg.up_plateau.v0) < bg.up_plateau.c_B);
    CHECK(std::abs(bg.down_plateau.v0) > bg.down_plateau.c_B);
    CHECK(bg.down_plateau.c_B == doctest::Approx(cal.c_B).epsilon(0.03));

    // both plateaus sit just above their folds: tiny (possibly negative)
    // rest-gap squared
    CHECK(std::abs(bg.up_plateau.gap2) < 5e-3);
    CHECK(std::abs(bg.down_plateau.gap2) < 5e-3);

    // profile arrays are consistent with the plateau summaries
    Eigen::ArrayXd xs = g.x();
    for (int i = 0; i < g.n_points; ++i) {
        if (xs[i] > 100.0 && xs[i] < 150.0) {
            CHECK(bg.n0[i] == doctest::Approx(bg.up_plateau.n0).epsilon(0.05));
            CHECK(bg.c_B[i] == doctest::Approx(bg.up_plateau.c_B).epsilon(0.05));
        }
    }
}

TEST_CASE("find_steady_state: subsonic flow reports no horizon") {
    PolaritonParams p = paper_params();
    SimGrid g = make_grid(512, 200.0, p);

    PumpProfile pump;
    pump.k_up = 0.05;
    pump.k_down = 0.10;  // v ~ 0.4 um/ps, far below c_B ~ 1.5
    pump.x_switch = 100.0;
    pump.omega_p = p.omega_p();
    double v_up = hbar * pump.k_up / p.mass();
    double v_down = hbar * pump.k_down / p.mass();
    pump.F_up = amplitude_above_turning_point(v_up, p, 1.0);
    pump.F_down = amplitude_above_turning_point(v_down, p, 1.0);

    DefectPotential defect;
    defect.depth = 0.0;
    defect.width = 1.0;
    defect.center = 105.0;

    SteadyStateOptions opts;
    opts.absorb_margin = 30.0;
    opts.require_horizon = false;
    BackgroundState bg = find_steady_state(g, p, pump, defect, 1e-6, 1500.0, opts);
    CHECK(!bg.horizon_x.has_value());
    CHECK(bg.horizon_crossings == 0);

    opts.require_horizon = true;
    CHECK_THROWS_AS(find_steady_state(g, p, pump, defect, 1e-6, 1500.0, opts),
                    NotTranscritical);
}
