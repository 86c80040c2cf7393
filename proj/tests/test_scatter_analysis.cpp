// Tests for the scattering-analysis module: windowed space-time spectra
// (plane-wave placement, Parseval, carrier demodulation), the matched
// least-squares channel extraction (exact recovery, sub-bin trace
// separation, loss-decayed kernels), probe-sweep structure on the small
// transcritical background (regimes, dn/dn* ordering, linear response,
// worker determinism), the gamma -> 0 pseudo-unitary flux balance, the
// sweep frequency grid, and the Breit-Wigner fit with its guards.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <random>
#include <utility>
#include <vector>

#include "polsim/core_model.hpp"
#include "polsim/errors.hpp"
#include "polsim/gpe_engine.hpp"
#include "polsim/scatter_analysis.hpp"
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

// ---------------------------------------------------------------------------
// Synthetic histories: the exact linear model the windowed analysis assumes.
// ---------------------------------------------------------------------------

// One plane-wave trace amp * e^{-kappa (x - x0)} * e^{i(k x - omega t)}; with
// vtrace = true the carrier is e^{i(-k x + omega t)} under the same envelope
// (the v component of a Bogoliubov mode decays with its u partner).
struct SyntheticTrace {
    cd amp;
    double k = 0;
    double omega = 0;
    double kappa = 0;
    bool vtrace = false;
};

FieldHistory synthetic_history(int nx, double length, int nt, double dt,
                               const std::vector<SyntheticTrace>& traces,
                               double probe_amplitude = 1.0) {
    FieldHistory h;
    h.grid.n_points = nx;
    h.grid.length = length;
    h.grid.x0 = 0;
    h.grid.dt = dt;
    h.dt_record = dt;
    h.probe_amplitude = probe_amplitude;
    h.frames.setZero(nt, nx);
    h.times.resize(nt);
    Eigen::ArrayXd x = h.grid.x();
    for (int s = 0; s < nt; ++s) {
        h.times[s] = s * dt;
        for (int j = 0; j < nx; ++j) {
            cd acc(0, 0);
            for (const SyntheticTrace& tr : traces) {
                double ph = tr.vtrace ? -tr.k * x[j] + tr.omega * h.times[s]
                                      : tr.k * x[j] - tr.omega * h.times[s];
                acc += tr.amp * std::exp(-tr.kappa * x[j]) * std::polar(1.0, ph);
            }
            h.frames(s, j) = acc;
        }
    }
    return h;
}

Channel make_channel(ChannelLabel label, double k, double vg, Side side,
                     Direction dir, int norm_sign = +1) {
    Channel ch;
    ch.label = label;
    ch.k = k;
    ch.norm_sign = norm_sign;
    ch.group_velocity = vg;
    ch.side = side;
    ch.direction = dir;
    return ch;
}

// Hann-window average of e^{-kappa x} over the analysis window: the scale the
// extraction reports for a decaying trace (reduces to 1 at kappa = 0).
double hann_envelope_average(int nw, double dx, double kappa) {
    double num = 0, den = 0;
    for (int j = 0; j < nw; ++j) {
        double w = 0.5 * (1.0 - std::cos(2.0 * M_PI * j / (nw - 1)));
        num += w * std::exp(-kappa * j * dx);
        den += w;
    }
    return num / den;
}

// ---------------------------------------------------------------------------
// Shared heavy fixture: the small transcritical background with defect, as in
// the BdG tests. Built once; probe runs dominate the suite runtime.
// ---------------------------------------------------------------------------

BackgroundState transcritical_background(double defect_depth, double up_offset,
                                         double c_target, double min_offset) {
    PolaritonParams p = paper_params();
    SimGrid g;
    g.n_points = 1024;
    g.length = 400.0;
    g.x0 = 0;
    g.dt = SimGrid::stable_dt(g.dx(), p);

    PumpProfile pump;
    pump.k_up = 0.27;
    pump.k_down = 0.539;
    pump.x_switch = 200.0;
    pump.omega_p = p.omega_p();
    pump.F_up = amplitude_above_turning_point(hbar * pump.k_up / p.mass(), p, up_offset);
    pump.F_down =
        calibrate_downstream_support(hbar * pump.k_down / p.mass(), p, c_target, min_offset).F;

    DefectPotential defect;
    defect.depth = defect_depth;
    defect.width = 0.75;
    defect.center = 205.0;

    SteadyStateOptions opts;
    opts.absorb_margin = 40.0;
    opts.require_horizon = (defect_depth != 0.0);
    return find_steady_state(g, p, pump, defect, 1e-6, 2500.0, opts);
}

const BackgroundState& horizon_background() {
    static const BackgroundState bg = transcritical_background(-0.85, 8e-4, 0.81, 2e-3);
    return bg;
}

std::vector<double> mev_grid(std::initializer_list<double> hws) {
    std::vector<double> g;
    for (double hw : hws) g.push_back(hw / hbar);
    return g;
}

}  // namespace

// ---------------------------------------------------------------------------
// Windowed space-time spectra
// ---------------------------------------------------------------------------

TEST_CASE("windowed spectrum places on-bin plane waves at unit scale") {
    const int nx = 256, nt = 96;
    const double length = 256.0, dt = 1.5;
    const double dk = 2.0 * M_PI / length;
    const double dw = 2.0 * M_PI / (nt * dt);
    const double k0 = 20 * dk, w0 = 11 * dw;

    // u trace at (+k, +omega), v trace at (-k, -omega), in one history
    FieldHistory h = synthetic_history(
        nx, length, nt, dt,
        {{cd(0.75, 0.0), k0, w0, 0.0, false}, {cd(0.0, 0.30), k0, w0, 0.0, true}});
    SpectrumMap map = windowed_spectrum(h, {-1.0, length + 1.0}, Side::upstream);

    REQUIRE(map.k_axis.size() == nx);
    REQUIRE(map.omega_axis.size() == nt);
    CHECK(map.k_axis[nx / 2] == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(map.dk() == doctest::Approx(dk).epsilon(1e-12));
    CHECK(map.domega() == doctest::Approx(dw).epsilon(1e-12));
    CHECK(map.dx == doctest::Approx(1.0));
    CHECK(map.dt == doctest::Approx(dt));
    CHECK(map.x_left == doctest::Approx(0.0));

    const int ck = nx / 2 + 20, rw = nt / 2 + 11;
    CHECK(map.amplitude(rw, ck) == doctest::Approx(0.75).epsilon(1e-10));
    CHECK(map.amplitude(nt / 2 - 11, nx / 2 - 20) == doctest::Approx(0.30).epsilon(1e-10));

    // the Hann kernel's one-bin shoulders carry exactly the stated lobe ratio
    CHECK(map.amplitude(rw, ck + 1) ==
          doctest::Approx(0.75 * map.lobe_ratio_k).epsilon(1e-10));
    CHECK(map.amplitude(rw + 1, ck) ==
          doctest::Approx(0.75 * map.lobe_ratio_omega).epsilon(1e-10));

    // beyond the main lobes only far-sidelobe leakage remains
    double off_peak = 0;
    for (int r = 0; r < nt; ++r)
        for (int c = 0; c < nx; ++c) {
            bool near_u = std::abs(r - rw) <= 2 && std::abs(c - ck) <= 2;
            bool near_v = std::abs(r - (nt / 2 - 11)) <= 2 && std::abs(c - (nx / 2 - 20)) <= 2;
            if (!near_u && !near_v) off_peak = std::max(off_peak, map.amplitude(r, c));
        }
    CHECK(off_peak < 5e-3 * 0.75);
}

TEST_CASE("windowed spectrum divides by the probe amplitude") {
    FieldHistory h = synthetic_history(128, 128.0, 32, 1.0,
                                       {{cd(0.4, 0.0), 10 * 2.0 * M_PI / 128.0,
                                         5 * 2.0 * M_PI / 32.0, 0.0, false}},
                                       0.5);
    SpectrumMap map = windowed_spectrum(h, {-1.0, 129.0}, Side::upstream);
    CHECK(map.amplitude.maxCoeff() == doctest::Approx(0.8).epsilon(1e-10));
}

TEST_CASE("windowed spectrum satisfies Parseval with its stated normalization") {
    const int nx = 160, nt = 48;
    FieldHistory h = synthetic_history(nx, 80.0, nt, 0.7, {});
    std::mt19937 rng(321);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int s = 0; s < nt; ++s)
        for (int j = 0; j < nx; ++j) h.frames(s, j) = cd(gauss(rng), gauss(rng));

    SpectrumMap map = windowed_spectrum(h, {-1.0, 81.0}, Side::downstream, 0.31);

    // sum |DFT|^2 = Nt Nx sum |windowed samples|^2; the demodulation phase
    // has unit modulus so it drops out of both sides
    double lhs = 0;
    for (int r = 0; r < nt; ++r)
        for (int c = 0; c < nx; ++c) lhs += std::norm(map.coeffs(r, c) * map.normalization);
    double rhs = 0;
    for (int s = 0; s < nt; ++s)
        for (int j = 0; j < nx; ++j) {
            double wx = 0.5 * (1.0 - std::cos(2.0 * M_PI * j / (nx - 1)));
            double wt = 0.5 * (1.0 - std::cos(2.0 * M_PI * s / (nt - 1)));
            rhs += std::norm(h.frames(s, j) * wx * wt);
        }
    rhs *= static_cast<double>(nt) * nx;
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("carrier demodulation relocates the condensate carrier to k = 0") {
    const int nx = 256, nt = 32;
    const double length = 256.0, kc = 12 * 2.0 * M_PI / length;
    const double k0 = 5 * 2.0 * M_PI / length, w0 = 6 * 2.0 * M_PI / 32.0;
    // fluctuation riding the carrier: e^{i kc x} * e^{i(k0 x - w0 t)}
    FieldHistory h =
        synthetic_history(nx, length, nt, 1.0, {{cd(1.0, 0.0), kc + k0, w0, 0.0, false}});
    SpectrumMap demod = windowed_spectrum(h, {-1.0, length + 1.0}, Side::upstream, kc);
    int rw = nt / 2 + 6, ck = nx / 2 + 5;
    CHECK(demod.amplitude(rw, ck) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("windowed spectrum rejects degenerate analysis regions") {
    FieldHistory h = synthetic_history(256, 256.0, 16, 1.0, {});
    CHECK_THROWS_AS(windowed_spectrum(h, {10.0, 40.0}, Side::upstream), RegionTooNarrow);
    FieldHistory short_h = synthetic_history(256, 256.0, 6, 1.0, {});
    CHECK_THROWS_AS(windowed_spectrum(short_h, {-1.0, 257.0}, Side::upstream),
                    RegionTooNarrow);
}

// ---------------------------------------------------------------------------
// Matched least-squares channel extraction
// ---------------------------------------------------------------------------

TEST_CASE("extraction recovers off-bin amplitudes and phases exactly") {
    const int nx = 256, nt = 128;
    const double length = 256.0, dt = 1.0;
    const double dk = 2.0 * M_PI / length, dw = 2.0 * M_PI / (nt * dt);
    const double k1 = 20.37 * dk, w0 = 16.3 * dw;
    const cd a_u = 0.8 * std::polar(1.0, 0.7), a_v = 0.3 * std::polar(1.0, -1.2);

    FieldHistory h = synthetic_history(
        nx, length, nt, dt, {{a_u, k1, w0, 0.0, false}, {a_v, k1, w0, 0.0, true}});
    SpectrumMap map = windowed_spectrum(h, {-1.0, length + 1.0}, Side::upstream);

    ChannelSet cs;
    cs.omega = w0;
    cs.regime = FrequencyRegime::hawking_window;
    cs.channels = {make_channel(ChannelLabel::in, k1, 2.0, Side::upstream,
                                Direction::incoming)};
    ChannelAmplitudes amps;
    extract_channel_amplitudes(map, cs, w0, 0.0, amps);

    const ChannelRecord* u = amps.find(ChannelLabel::in, false);
    const ChannelRecord* v = amps.find(ChannelLabel::in, true);
    REQUIRE(u != nullptr);
    REQUIRE(v != nullptr);
    CHECK(u->present);
    CHECK(v->present);
    CHECK(std::abs(u->amplitude - a_u) < 1e-9);
    CHECK(std::abs(v->amplitude - a_v) < 1e-9);
    CHECK(std::abs(u->k_measured - k1) < 0.5 * dk);

    // HR is in the upstream label set but absent from the channel set
    const ChannelRecord* hr = amps.find(ChannelLabel::HR, false);
    REQUIRE(hr != nullptr);
    CHECK_FALSE(hr->present);
    CHECK(std::isnan(amps.abs_of(ChannelLabel::HR)));
}

TEST_CASE("extraction separates traces well under one spectral bin apart") {
    // down and dn sit 1.7 bins apart with a 50x amplitude contrast: a box
    // reader blends them; the joint least squares on exact kernels must not.
    const int nx = 384, nt = 96;
    const double length = 384.0, dt = 1.2;
    const double dk = 2.0 * M_PI / length, dw = 2.0 * M_PI / (nt * dt);
    const double k_down = 30 * dk, k_dn = k_down + 1.7 * dk, w0 = 12.4 * dw;

    for (double gamma : {0.0, 0.02}) {
        CAPTURE(gamma);
        const double vg_down = 2.5, vg_dn = 1.1;
        const double kap_down = gamma / (2.0 * vg_down), kap_dn = gamma / (2.0 * vg_dn);
        FieldHistory h = synthetic_history(nx, length, nt, dt,
                                           {{cd(1.0, 0.0), k_down, w0, kap_down, false},
                                            {cd(0.02, 0.0), k_dn, w0, kap_dn, false}});
        SpectrumMap map = windowed_spectrum(h, {-1.0, length + 1.0}, Side::downstream);

        ChannelSet cs;
        cs.omega = w0;
        cs.regime = FrequencyRegime::hawking_window;
        cs.channels = {
            make_channel(ChannelLabel::down, k_down, vg_down, Side::downstream,
                         Direction::outgoing),
            make_channel(ChannelLabel::dn, k_dn, vg_dn, Side::downstream,
                         Direction::outgoing, -1)};
        ChannelAmplitudes amps;
        extract_channel_amplitudes(map, cs, w0, gamma, amps);

        const double env_down = hann_envelope_average(nx, 1.0, kap_down);
        const double env_dn = hann_envelope_average(nx, 1.0, kap_dn);
        CHECK(amps.abs_of(ChannelLabel::down) ==
              doctest::Approx(1.0 * env_down).epsilon(1e-6));
        CHECK(amps.abs_of(ChannelLabel::dn) ==
              doctest::Approx(0.02 * env_dn).epsilon(1e-4));
    }
}

TEST_CASE("extraction reports the window-averaged scale of decayed traces") {
    const int nx = 256, nt = 64;
    const double length = 256.0, dt = 1.0;
    const double dk = 2.0 * M_PI / length, dw = 2.0 * M_PI / (nt * dt);
    const double w0 = 9.6 * dw, gamma = 0.05;

    // in decays toward +x (vg > 0); HR grows toward +x (vg < 0, it decays
    // away from the horizon on the right edge of the window); both rates stay
    // under the extraction's 6 e-foldings-per-window cap
    const double vg_in = 2.0, vg_hr = -1.4;
    const double kap_in = gamma / (2.0 * vg_in), kap_hr = gamma / (2.0 * vg_hr);
    const double k_in = 18 * dk, k_hr = -11.3 * dk;
    FieldHistory h = synthetic_history(nx, length, nt, dt,
                                       {{cd(0.6, 0.0), k_in, w0, kap_in, false},
                                        {cd(0.05, 0.0), k_hr, w0, kap_hr, false}});
    SpectrumMap map = windowed_spectrum(h, {-1.0, length + 1.0}, Side::upstream);

    ChannelSet cs;
    cs.omega = w0;
    cs.regime = FrequencyRegime::hawking_window;
    cs.channels = {
        make_channel(ChannelLabel::in, k_in, vg_in, Side::upstream, Direction::incoming),
        make_channel(ChannelLabel::HR, k_hr, vg_hr, Side::upstream, Direction::outgoing)};
    ChannelAmplitudes amps;
    extract_channel_amplitudes(map, cs, w0, gamma, amps);

    const double env_in = hann_envelope_average(nx, 1.0, kap_in);
    const double env_hr = hann_envelope_average(nx, 1.0, kap_hr);
    CHECK(env_in < 1.0);
    CHECK(env_hr > 1.0);
    CHECK(amps.abs_of(ChannelLabel::in) == doctest::Approx(0.6 * env_in).epsilon(1e-8));
    CHECK(amps.abs_of(ChannelLabel::HR) == doctest::Approx(0.05 * env_hr).epsilon(1e-6));
}

TEST_CASE("extraction rejects channels off the spectral grid") {
    const int nx = 128, nt = 32;
    FieldHistory h = synthetic_history(nx, 128.0, nt, 1.0, {});
    SpectrumMap map = windowed_spectrum(h, {-1.0, 129.0}, Side::upstream);

    ChannelSet cs;
    cs.omega = 1.0;
    cs.channels = {make_channel(ChannelLabel::in, 2.0 * M_PI / 1.9, 2.0, Side::upstream,
                                Direction::incoming)};  // beyond Nyquist
    ChannelAmplitudes amps;
    CHECK_THROWS_AS(extract_channel_amplitudes(map, cs, 1.0, 0.0, amps), ChannelOffGrid);

    ChannelSet cs2;
    cs2.omega = 50.0;  // far beyond the time axis
    cs2.channels = {make_channel(ChannelLabel::in, 0.5, 2.0, Side::upstream,
                                 Direction::incoming)};
    CHECK_THROWS_AS(extract_channel_amplitudes(map, cs2, 50.0, 0.0, amps), ChannelOffGrid);
}

// ---------------------------------------------------------------------------
// Probe sweeps on the transcritical background
// ---------------------------------------------------------------------------

TEST_CASE("probe sweep resolves the Hawking window structure") {
    const BackgroundState& bg = horizon_background();
    REQUIRE(bg.horizon_x.has_value());
    FrequencyWindow fw = frequency_window(bg.up_plateau, bg.down_plateau);
    REQUIRE(hbar * fw.omega_max > 0.2);
    REQUIRE(hbar * fw.omega_max < 0.3);

    // two in-window points, one above the window, one far off any grid (gap)
    std::vector<double> grid = mev_grid({0.06, 0.10, 0.30, 100.0});
    ProbeSpec probe;
    SweepOptions opts;
    ScatterSweepResult sr = run_sweep(bg, grid, probe, opts);
    REQUIRE(sr.points.size() == 4);

    for (int i : {0, 1}) {
        const SweepPoint& pt = sr.points[i];
        CAPTURE(hbar * pt.omega_pr);
        REQUIRE_FALSE(pt.gap);
        CHECK(pt.regime == FrequencyRegime::hawking_window);

        // all six channel traces present and positive inside the window
        for (ChannelLabel lb :
             {ChannelLabel::in, ChannelLabel::HR, ChannelLabel::down, ChannelLabel::dn}) {
            CAPTURE(to_string(lb));
            double a = pt.amplitudes.abs_of(lb);
            CHECK(std::isfinite(a));
            CHECK(a > 0.0);
        }
        CHECK(sr.T_down[i] > 0.0);
        CHECK(sr.T_dn[i] > 0.0);
        CHECK(sr.R_HR[i] >= 0.0);

        // the probe lands on the in branch: refined peak within one bin
        const ChannelRecord* rin = pt.amplitudes.find(ChannelLabel::in);
        REQUIRE(rin != nullptr);
        CHECK(std::abs(rin->k_measured - rin->k_channel) < pt.amplitudes.dk_up);

        // the negative-norm transmitted mode has |v| > |u|: its conjugate
        // trace carries the dominant weight (paper: "the dn* trace is
        // generically stronger than dn itself")
        CHECK(pt.amplitudes.abs_of(ChannelLabel::dn, true) >=
              pt.amplitudes.abs_of(ChannelLabel::dn));
    }

    // above the window dn closes: the S-matrix degenerates to a two-port
    // beam splitter dominated by transmission
    const SweepPoint& hi = sr.points[2];
    REQUIRE_FALSE(hi.gap);
    CHECK(hi.regime == FrequencyRegime::above_window);
    const ChannelRecord* dn_hi = hi.amplitudes.find(ChannelLabel::dn);
    REQUIRE(dn_hi != nullptr);
    CHECK_FALSE(dn_hi->present);
    CHECK(std::isnan(sr.T_dn[2]));
    CHECK(sr.T_down[2] > 0.0);
    CHECK(sr.R_HR[2] < sr.T_down[2]);

    // the absurd frequency cannot be analyzed on this grid: recorded as a
    // gap entry, not an exception out of the sweep
    const SweepPoint& gap = sr.points[3];
    CHECK(gap.gap);
    CHECK_FALSE(gap.gap_reason.empty());
    CHECK(std::isnan(sr.T_down[3]));

    SUBCASE("response is linear in the probe amplitude") {
        std::vector<double> one = mev_grid({0.10});
        ProbeSpec strong;
        strong.amplitude = 10.0 * (1e-3 * bg.pump.F_up);
        ScatterSweepResult weak = run_sweep(bg, one, probe, opts);
        ScatterSweepResult ten = run_sweep(bg, one, strong, opts);
        REQUIRE_FALSE(weak.points[0].gap);
        REQUIRE_FALSE(ten.points[0].gap);
        CHECK(ten.T_down[0] == doctest::Approx(weak.T_down[0]).epsilon(0.02));
        CHECK(ten.R_HR[0] == doctest::Approx(weak.R_HR[0]).epsilon(0.02));
        CHECK(ten.T_dn[0] == doctest::Approx(weak.T_dn[0]).epsilon(0.02));
    }
}

TEST_CASE("sweep points are independent of the worker count") {
    const BackgroundState& bg = horizon_background();
    std::vector<double> grid = mev_grid({0.10, 0.30});
    ProbeSpec probe;
    SweepOptions serial, threaded;
    serial.workers = 1;
    threaded.workers = 3;
    ScatterSweepResult a = run_sweep(bg, grid, probe, serial);
    ScatterSweepResult b = run_sweep(bg, grid, probe, threaded);
    REQUIRE(a.points.size() == b.points.size());
    for (size_t i = 0; i < a.points.size(); ++i) {
        REQUIRE_FALSE(a.points[i].gap);
        REQUIRE_FALSE(b.points[i].gap);
        CHECK(a.T_down[i] == b.T_down[i]);
        CHECK(a.R_HR[i] == b.R_HR[i]);
        for (const ChannelRecord& ra : a.points[i].amplitudes.records) {
            const ChannelRecord* rb = b.points[i].amplitudes.find(ra.label, ra.conjugate);
            REQUIRE(rb != nullptr);
            CHECK(ra.present == rb->present);
            if (ra.present) CHECK(ra.amplitude == rb->amplitude);
        }
    }
}

TEST_CASE("gamma -> 0 sweeps satisfy the pseudo-unitary flux balance") {
    const BackgroundState& bg = horizon_background();
    std::vector<double> grid = mev_grid({0.20, 0.30});
    ProbeSpec probe;
    SweepOptions opts;
    opts.linearized_lossless = true;
    ScatterSweepResult sr = run_sweep(bg, grid, probe, opts);

    // 0.20 meV: three-port window point; 0.30 meV: two-port above the window
    for (size_t i = 0; i < sr.points.size(); ++i) {
        const SweepPoint& pt = sr.points[i];
        CAPTURE(hbar * pt.omega_pr);
        REQUIRE_FALSE(pt.gap);
        ChannelSet cs = channel_map(pt.omega_pr, bg.up_plateau, bg.down_plateau);
        EnergyBalance eb =
            energy_balance_check(pt.amplitudes, cs, bg.up_plateau, bg.down_plateau, 0.0);
        CHECK(eb.influx > 0.0);
        CHECK(eb.loss_fraction == 0.0);
        CHECK(std::abs(eb.imbalance) < 0.05);

        bool has_dn = false;
        for (const auto& [label, flux] : eb.contributions) {
            if (label == ChannelLabel::dn) {
                has_dn = true;
                // negative-norm flux counts against the ledger: its growth is
                // what the positive-norm side must overcompensate (Eq. 8)
                CHECK(flux < 0.0);
            }
        }
        CHECK(has_dn == (pt.regime == FrequencyRegime::hawking_window));
    }
}

// ---------------------------------------------------------------------------
// Sweep frequency grid
// ---------------------------------------------------------------------------

TEST_CASE("sweep grid densifies around the expected resonance") {
    FrequencyWindow fw;
    fw.omega_min = 0.0;
    fw.omega_max = 0.40;
    const double qnm = 0.42, gamma = 0.02;
    std::vector<double> grid = sweep_omega_grid(fw, qnm, gamma, 40, 1.5, 0.06);

    REQUIRE(grid.size() > 40);
    CHECK(grid.front() == doctest::Approx(0.06));  // floor wins over 1.05 w_min
    CHECK(grid.back() == doctest::Approx(1.5 * qnm));
    for (size_t i = 0; i + 1 < grid.size(); ++i) CHECK(grid[i] < grid[i + 1]);

    // triple sampling density inside the resonance band vs. a control band
    auto count_in = [&](double lo, double hi) {
        int n = 0;
        for (double w : grid)
            if (w >= lo && w <= hi) ++n;
        return n;
    };
    double band = 2.0 * gamma;
    CHECK(count_in(qnm - band, qnm + band) >= 2 * count_in(0.2 - band, 0.2 + band));

    CHECK_THROWS_AS(sweep_omega_grid(fw, 0.01, gamma, 40, 1.5, 0.06), ValidationError);
}

// ---------------------------------------------------------------------------
// Breit-Wigner fit
// ---------------------------------------------------------------------------

namespace {

Eigen::ArrayXd fit_band(double lo, double hi, int n) {
    return Eigen::ArrayXd::LinSpaced(n, lo, hi);
}

Eigen::ArrayXcd bw_signal(const Eigen::ArrayXd& w, double Omega, double Gamma, cd tbg,
                          cd alpha) {
    Eigen::ArrayXcd t(w.size());
    for (int i = 0; i < w.size(); ++i)
        t[i] = tbg + alpha / cd(w[i] - Omega, 0.5 * Gamma);
    return t;
}

}  // namespace

TEST_CASE("Breit-Wigner fit recovers a synthetic resonance from magnitudes") {
    const double Omega = 0.45, Gamma = 0.07;
    // alpha = i (Gamma/2) h makes t(Omega) - t_bg = +h: a peak of height h
    const cd tbg(0.06, 0.0), alpha = cd(0.0, 0.5 * Gamma) * cd(0.08, 0.0);
    Eigen::ArrayXd w = fit_band(Omega - 6 * Gamma, Omega + 6 * Gamma, 80);
    Eigen::ArrayXd t_abs = bw_signal(w, Omega, Gamma, tbg, alpha).abs();

    BreitWignerFit fit = breit_wigner_fit(w, t_abs);
    CHECK(fit.magnitude_only);
    CHECK(fit.n_points == 80);
    CHECK(fit.Omega_qnm == doctest::Approx(Omega).epsilon(1e-4));
    CHECK(fit.Gamma_qnm == doctest::Approx(Gamma).epsilon(1e-3));
    CHECK(fit.residual < 1e-6);
    CHECK(fit.covariance_diag.size() == 5);
}

TEST_CASE("Breit-Wigner fit recovers phase and flags the pi slip") {
    const double Omega = 0.61, Gamma = 0.05;
    const cd tbg(0.04, -0.02), alpha(0.003, 0.0015);
    Eigen::ArrayXd w = fit_band(Omega - 7 * Gamma, Omega + 7 * Gamma, 120);
    Eigen::ArrayXcd t = bw_signal(w, Omega, Gamma, tbg, alpha);

    BreitWignerFit fit = breit_wigner_fit(w, t);
    CHECK_FALSE(fit.magnitude_only);
    CHECK(fit.Omega_qnm == doctest::Approx(Omega).epsilon(1e-6));
    CHECK(fit.Gamma_qnm == doctest::Approx(Gamma).epsilon(1e-5));
    CHECK(std::abs(fit.t_bg - tbg) < 1e-5);
    CHECK(std::abs(fit.alpha - alpha) < 1e-5);
    CHECK(fit.residual < 1e-8);
    CHECK(fit.phase_slip_pi);
}

TEST_CASE("Breit-Wigner fit guards against unresolvable peaks") {
    const double Omega = 0.45, Gamma = 0.07;
    const cd tbg(0.06, 0.0), alpha(0.0, -0.003);

    // too few samples
    Eigen::ArrayXd w5 = fit_band(Omega - 5 * Gamma, Omega + 5 * Gamma, 5);
    Eigen::ArrayXd y5 = bw_signal(w5, Omega, Gamma, tbg, alpha).abs();
    CHECK_THROWS_AS(breit_wigner_fit(w5, y5), PeakNotResolved);

    // peak outside the sampled band: no 1.5-linewidth margin on the left
    Eigen::ArrayXd wout = fit_band(Omega + 1.0 * Gamma, Omega + 9 * Gamma, 60);
    Eigen::ArrayXd yout = bw_signal(wout, Omega, Gamma, tbg, alpha).abs();
    CHECK_THROWS_AS(breit_wigner_fit(wout, yout), PeakNotResolved);

    // non-monotonic frequency samples
    Eigen::ArrayXd wbad = fit_band(Omega - 5 * Gamma, Omega + 5 * Gamma, 40);
    std::swap(wbad[10], wbad[11]);
    Eigen::ArrayXd ybad = bw_signal(wbad, Omega, Gamma, tbg, alpha).abs();
    CHECK_THROWS_AS(breit_wigner_fit(wbad, ybad), ValidationError);
}
