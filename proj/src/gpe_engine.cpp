#include "polsim/gpe_engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <mutex>
#include <random>
#include <sstream>

#include <fftw3.h>

#include "polsim/errors.hpp"
#include "polsim/units.hpp"

namespace polsim {

using std::complex;
using cd = complex<double>;

namespace {

constexpr double kPi = 3.14159265358979323846;

// FFTW plan creation/destruction is not thread-safe; executions on distinct
// buffers are.
std::mutex& fftw_mutex() { return polsim::numeric::fftw_plan_mutex(); }

// phi1(z) = (e^z - 1)/z given e^z precomputed; series for small |z|.
cd phi1_from_exp(cd z, cd ez) {
    if (std::abs(z) < 1e-4) return 1.0 + z * (0.5 + z / 6.0);
    return (ez - 1.0) / z;
}

// Raised-cosine turn-on from `start` to 1 over ramp_time.
double ramp_factor(double t, double ramp_time, double start) {
    if (ramp_time <= 0 || t >= ramp_time) return 1.0;
    if (t <= 0) return start;
    double r = 0.5 * (1.0 - std::cos(kPi * t / ramp_time));
    return start + (1.0 - start) * r;
}

}  // namespace

// ---------------------------------------------------------------------------
// SimGrid
// ---------------------------------------------------------------------------

Eigen::ArrayXd SimGrid::x() const {
    Eigen::ArrayXd out(n_points);
    double h = dx();
    for (int i = 0; i < n_points; ++i) out[i] = x0 + i * h;
    return out;
}

Eigen::ArrayXd SimGrid::k() const {
    Eigen::ArrayXd out(n_points);
    double dk = 2.0 * kPi / length;
    for (int i = 0; i < n_points; ++i) out[i] = dk * (i < n_points / 2 ? i : i - n_points);
    return out;
}

double SimGrid::stable_dt(double dx, const PolaritonParams& params, double safety) {
    return safety * dx * dx * params.mass() / (kPi * units::hbar);
}

void SimGrid::validate(const PolaritonParams& params) const {
    if (n_points < 8 || (n_points & (n_points - 1)) != 0)
        throw ValidationError("n_points", "must be a power of two >= 8");
    if (!(length > 0)) throw ValidationError("length", "must be positive");
    if (!(dt > 0)) throw ValidationError("dt", "must be positive");
    double dt_max = stable_dt(dx(), params, 1.0);
    if (dt > dt_max * (1.0 + 1e-9)) {
        std::ostringstream os;
        os << "dt = " << dt << " ps exceeds the kinetic-phase bound dx^2 m*/(pi hbar) = "
           << dt_max << " ps";
        throw ValidationError("dt", os.str());
    }
}

// ---------------------------------------------------------------------------
// Drives, masks, potentials
// ---------------------------------------------------------------------------

std::vector<DriveTerm> make_pump_drives(const SimGrid& grid, const PumpProfile& pump) {
    pump.validate();
    Eigen::ArrayXd xs = grid.x();
    std::vector<DriveTerm> out;

    DriveTerm up;
    up.kind = DriveTerm::Kind::pump;
    up.envelope = (xs < pump.x_switch).cast<double>();
    up.k = pump.k_up;
    up.amplitude = pump.F_up;
    out.push_back(std::move(up));

    if (pump.F_down != 0) {
        DriveTerm down;
        down.kind = DriveTerm::Kind::pump;
        down.envelope = (xs >= pump.x_switch).cast<double>();
        down.k = pump.k_down;
        down.amplitude = pump.F_down;
        // keep the drive phase continuous at the switch
        down.phase = (pump.k_up - pump.k_down) * pump.x_switch;
        out.push_back(std::move(down));
    }
    return out;
}

DriveTerm make_probe_drive(const SimGrid& grid, double center, double width, double k_pr,
                           double omega_pr, double amplitude, double ramp_time) {
    if (!(width > 0)) throw ValidationError("probe.width", "must be positive");
    DriveTerm pr;
    pr.kind = DriveTerm::Kind::probe;
    Eigen::ArrayXd xs = grid.x();
    pr.envelope = (-((xs - center) / width).square()).exp();
    pr.k = k_pr;
    pr.omega = omega_pr;
    pr.amplitude = amplitude;
    pr.ramp_time = ramp_time;
    return pr;
}

DriveTerm make_noise_drive(double amplitude_per_step, uint64_t seed) {
    DriveTerm nz;
    nz.kind = DriveTerm::Kind::white_noise;
    nz.amplitude = amplitude_per_step;
    nz.seed = seed;
    return nz;
}

Eigen::ArrayXd absorbing_mask(const SimGrid& grid, double margin, double strength) {
    if (margin < 0) throw ValidationError("absorb.margin", "must be non-negative");
    if (strength < 0) throw ValidationError("absorb.strength", "must be non-negative");
    Eigen::ArrayXd out = Eigen::ArrayXd::Zero(grid.n_points);
    if (margin <= 0 || strength <= 0) return out;
    double h = grid.dx();
    double left = grid.x0 + margin;
    double right = grid.x0 + grid.length - margin;
    for (int i = 0; i < grid.n_points; ++i) {
        double x = grid.x0 + i * h;
        double s = 0;  // depth into the absorbing layer, 0..1
        if (x < left)
            s = (left - x) / margin;
        else if (x > right)
            s = (x - right) / margin;
        if (s > 0) {
            double c = std::sin(0.5 * kPi * std::min(s, 1.0));
            out[i] = strength * c * c;
        }
    }
    return out;
}

Eigen::ArrayXd defect_profile(const SimGrid& grid, const DefectPotential& defect) {
    defect.validate();
    Eigen::ArrayXd out(grid.n_points);
    double h = grid.dx();
    for (int i = 0; i < grid.n_points; ++i) out[i] = defect.value(grid.x0 + i * h);
    return out;
}

// ---------------------------------------------------------------------------
// GpeEngine
// ---------------------------------------------------------------------------

struct GpeEngine::Impl {
    int n = 0;
    double dt = 0;
    double g = 0;        // interaction [um/ps]
    double blowup_n = 0; // density guard threshold (0 = finite check only)

    Eigen::ArrayXcd kin_half, kin_full;  // kinetic phases, 1/N folded in
    Eigen::ArrayXcd sigma;               // static local coefficient [1/ps]
    Eigen::ArrayXcd estat;               // exp(-i sigma dt)

    struct Drive {
        Eigen::ArrayXcd f;  // amplitude * envelope * e^{i(kx+phase)} / hbar
        double omega = 0;
        double ramp_time = 0;
        double ramp_start = 0;
        cd w_step;  // e^{-i omega dt}
    };
    std::vector<Drive> drives;

    struct Noise {
        Eigen::ArrayXd env;  // empty = uniform
        double amp = 0;
        std::mt19937_64 rng;
    };
    std::vector<Noise> noises;

    fftw_complex* buf = nullptr;
    fftw_plan fwd = nullptr, bwd = nullptr;

    ~Impl() {
        std::lock_guard<std::mutex> lk(fftw_mutex());
        if (fwd) fftw_destroy_plan(fwd);
        if (bwd) fftw_destroy_plan(bwd);
        if (buf) fftw_free(buf);
    }

    cd* b() { return reinterpret_cast<cd*>(buf); }

    void kinetic(const Eigen::ArrayXcd& phase) {
        fftw_execute(fwd);
        cd* p = b();
        for (int i = 0; i < n; ++i) p[i] *= phase[i];
        fftw_execute(bwd);
    }

    // Exact local update over [t, t+dt] with the density frozen at t.
    void local_step(double t) {
        cd* p = b();
        double tm = t + 0.5 * dt;
        // per-drive scalars for this step
        static thread_local std::vector<cd> carrier;
        carrier.resize(drives.size());
        for (size_t j = 0; j < drives.size(); ++j) {
            const Drive& d = drives[j];
            double r = ramp_factor(tm, d.ramp_time, d.ramp_start);
            carrier[j] = std::polar(r, -d.omega * t);
        }
        for (int i = 0; i < n; ++i) {
            double dens = std::norm(p[i]);
            double gph = g * dens * dt;
            cd e_frozen = estat[i] * cd(std::cos(gph), -std::sin(gph));
            cd drv(0, 0);    // accumulated phi1 drive integrals
            cd f_tot(0, 0);  // instantaneous total drive, for the density slope
            for (size_t j = 0; j < drives.size(); ++j) {
                const Drive& d = drives[j];
                cd fj = d.f[i];
                if (fj == cd(0, 0)) continue;
                cd fc = fj * carrier[j];
                f_tot += fc;
                cd lam = sigma[i] + g * dens;
                cd z = cd(0, 1) * (lam - d.omega) * dt;
                cd ez = d.w_step / e_frozen;  // e^{i(lam-omega)dt}
                drv += cd(0, -1) * fc * dt * phi1_from_exp(z, ez);
            }
            // Midpoint density for the nonlinear phase: n(s) changes during
            // the local substep as dn/ds = 2 Im(sigma) n + 2 Im(conj(phi) f);
            // evaluating the phase at n + (dt/2) dn/ds keeps the splitting
            // second order with loss while leaving the driven steady state
            // (where dn/ds = 0) an exact fixed point.
            double dn0 = 2.0 * sigma[i].imag() * dens +
                         2.0 * (std::conj(p[i]) * f_tot).imag();
            double ph_mid = g * (dens + 0.5 * dt * dn0) * dt;
            cd prop = estat[i] * cd(std::cos(ph_mid), -std::sin(ph_mid));
            p[i] = prop * p[i] + e_frozen * drv;
        }
        for (auto& nz : noises) {
            for (int i = 0; i < n; ++i) {
                // Box-Muller; std::normal_distribution is not portable across
                // implementations, this is
                double u1 = std::generate_canonical<double, 53>(nz.rng);
                double u2 = std::generate_canonical<double, 53>(nz.rng);
                double r = std::sqrt(-std::log(std::max(u1, 1e-300)));
                cd xi = std::polar(r, 2.0 * kPi * u2);  // unit complex Gaussian
                double e = nz.env.size() ? nz.env[i] : 1.0;
                p[i] += nz.amp * e * xi;
            }
        }
    }

    void check_health(double t) const {
        const cd* p = const_cast<Impl*>(this)->b();
        double mx = 0;
        for (int i = 0; i < n; ++i) mx = std::max(mx, std::norm(p[i]));
        if (!std::isfinite(mx) || (blowup_n > 0 && mx > 1e3 * blowup_n)) {
            std::ostringstream os;
            os << "field blew up at t = " << t << " ps (max density " << mx << ")";
            throw NumericalBlowup(os.str());
        }
    }
};

GpeEngine::GpeEngine(const SimGrid& grid, const PolaritonParams& params,
                     const Eigen::ArrayXd& potential, const Eigen::ArrayXd& absorb_rate,
                     std::vector<DriveTerm> drives, double density_scale)
    : impl_(std::make_unique<Impl>()), grid_(grid) {
    grid.validate(params);
    params.validate();
    if (potential.size() != grid.n_points)
        throw ValidationError("potential", "size does not match the grid");
    if (absorb_rate.size() != grid.n_points)
        throw ValidationError("absorb_rate", "size does not match the grid");

    Impl& im = *impl_;
    im.n = grid.n_points;
    im.dt = grid.dt;
    im.g = params.g();
    im.blowup_n = density_scale;

    double m = params.mass();
    Eigen::ArrayXd k = grid.k();
    im.kin_half.resize(im.n);
    im.kin_full.resize(im.n);
    for (int i = 0; i < im.n; ++i) {
        double wk = units::hbar * k[i] * k[i] / (2.0 * m);  // [1/ps]
        im.kin_half[i] = std::polar(1.0 / im.n, -0.5 * wk * im.dt);
        im.kin_full[i] = std::polar(1.0 / im.n, -wk * im.dt);
    }

    double delta0 = params.delta0();  // omega_p - omega0
    im.sigma.resize(im.n);
    im.estat.resize(im.n);
    for (int i = 0; i < im.n; ++i) {
        im.sigma[i] = cd(-delta0 + potential[i] / units::hbar,
                         -(0.5 * params.gamma() + absorb_rate[i]));
        im.estat[i] = std::exp(cd(0, -1) * im.sigma[i] * im.dt);
    }

    Eigen::ArrayXd xs = grid.x();
    for (auto& d : drives) {
        if (d.kind == DriveTerm::Kind::white_noise) {
            Impl::Noise nz;
            nz.env = d.envelope;
            if (nz.env.size() && nz.env.size() != im.n)
                throw ValidationError("drive.envelope", "size does not match the grid");
            nz.amp = d.amplitude;
            nz.rng.seed(d.seed);
            im.noises.push_back(std::move(nz));
            continue;
        }
        if (d.envelope.size() != im.n)
            throw ValidationError("drive.envelope", "size does not match the grid");
        Impl::Drive dr;
        dr.f.resize(im.n);
        for (int i = 0; i < im.n; ++i)
            dr.f[i] = d.amplitude / units::hbar * d.envelope[i] *
                      std::polar(1.0, d.k * xs[i] + d.phase);
        dr.omega = d.omega;
        dr.ramp_time = d.ramp_time;
        dr.ramp_start = d.ramp_start;
        dr.w_step = std::polar(1.0, -d.omega * im.dt);
        im.drives.push_back(std::move(dr));
    }

    im.buf = fftw_alloc_complex(im.n);
    {
        std::lock_guard<std::mutex> lk(fftw_mutex());
        im.fwd = fftw_plan_dft_1d(im.n, im.buf, im.buf, FFTW_FORWARD, FFTW_ESTIMATE);
        im.bwd = fftw_plan_dft_1d(im.n, im.buf, im.buf, FFTW_BACKWARD, FFTW_ESTIMATE);
    }
    if (!im.fwd || !im.bwd) throw Error("could not create FFT plans");
}

GpeEngine::~GpeEngine() = default;

void GpeEngine::step(FieldState& state) {
    Impl& im = *impl_;
    if (state.psi.size() != im.n) throw ValidationError("psi", "size does not match the grid");
    std::memcpy(im.buf, state.psi.data(), sizeof(cd) * im.n);
    im.kinetic(im.kin_half);
    im.local_step(state.t);
    im.kinetic(im.kin_half);
    im.check_health(state.t);
    std::memcpy(state.psi.data(), im.buf, sizeof(cd) * im.n);
    state.t += im.dt;
}

void GpeEngine::advance(FieldState& state, long n_steps) {
    if (n_steps <= 0) return;
    Impl& im = *impl_;
    if (state.psi.size() != im.n) throw ValidationError("psi", "size does not match the grid");
    std::memcpy(im.buf, state.psi.data(), sizeof(cd) * im.n);
    double t = state.t;
    im.kinetic(im.kin_half);
    for (long s = 0; s < n_steps; ++s) {
        im.local_step(t);
        t += im.dt;
        im.kinetic(s + 1 < n_steps ? im.kin_full : im.kin_half);
        if ((s & 63) == 0) im.check_health(t);
    }
    im.check_health(t);
    std::memcpy(state.psi.data(), im.buf, sizeof(cd) * im.n);
    state.t = t;
}

FieldState step(const FieldState& state, const std::vector<DriveTerm>& drives,
                const Eigen::ArrayXd& potential, const SimGrid& grid,
                const PolaritonParams& params) {
    GpeEngine eng(grid, params, potential, Eigen::ArrayXd::Zero(grid.n_points), drives);
    FieldState out = state;
    eng.step(out);
    return out;
}

// ---------------------------------------------------------------------------
// Steady state
// ---------------------------------------------------------------------------

namespace {

// Exact homogeneous branch amplitude for drive hbar*F e^{i theta} at carrier k:
// A = -(F/hbar) e^{i theta} / ((g n - delta_eff) - i gamma/2) for an EOS root n.
cd branch_amplitude(double hbarF, double theta, double n, double v,
                    const PolaritonParams& p) {
    if (hbarF == 0 || n <= 0) return cd(0, 0);
    cd denom(p.g() * n - p.delta_eff(v), -0.5 * p.gamma());
    return -(hbarF / units::hbar) * std::polar(1.0, theta) / denom;
}

}  // namespace

BackgroundState find_steady_state(const SimGrid& grid, const PolaritonParams& params,
                                  const PumpProfile& pump, const DefectPotential& defect,
                                  double tol, double t_max, const SteadyStateOptions& opts) {
    grid.validate(params);
    params.validate();
    pump.validate();
    if (!(tol > 0)) throw ValidationError("tol", "must be positive");
    if (!(t_max > 0)) throw ValidationError("t_max", "must be positive");

    Eigen::ArrayXd potential = defect_profile(grid, defect);
    Eigen::ArrayXd absorb = absorbing_mask(grid, opts.absorb_margin, opts.absorb_strength);

    double m = params.mass();
    double v_up = units::hbar * pump.k_up / m;
    double v_down = units::hbar * pump.k_down / m;

    // seed both homogeneous branch solutions and blend at the switch
    auto pick_root = [](const std::vector<double>& roots, bool upper) {
        if (roots.empty()) return 0.0;
        return upper ? roots.back() : roots.front();
    };
    std::vector<double> up_roots = equation_of_state_roots(pump.F_up, v_up, params);
    double n_up = pick_root(up_roots, true);
    cd a_up = branch_amplitude(pump.F_up, 0.0, n_up, v_up, params);

    double n_down = 0;
    cd a_down(0, 0);
    if (pump.F_down != 0) {
        std::vector<double> down_roots = equation_of_state_roots(pump.F_down, v_down, params);
        n_down = pick_root(down_roots, opts.downstream_upper_branch);
        a_down = branch_amplitude(pump.F_down, (pump.k_up - pump.k_down) * pump.x_switch,
                                  n_down, v_down, params);
    }

    Eigen::ArrayXd xs = grid.x();
    FieldState state;
    state.psi.resize(grid.n_points);
    for (int i = 0; i < grid.n_points; ++i) {
        double blend = 0.5 * (1.0 + std::tanh(0.5 * (xs[i] - pump.x_switch)));
        state.psi[i] = (1.0 - blend) * a_up * std::polar(1.0, pump.k_up * xs[i]) +
                       blend * a_down * std::polar(1.0, pump.k_down * xs[i]);
    }
    state.t = 0;

    std::vector<DriveTerm> drives = make_pump_drives(grid, pump);
    if (opts.ramp_time > 0) {
        for (auto& d : drives) {
            d.ramp_time = opts.ramp_time;
            d.ramp_start = opts.ramp_start;
        }
    }

    // sponge sources: inside the absorbing layers the loss acts on
    // psi - psi_ref with psi_ref the local branch state (see BackgroundState)
    std::vector<DriveTerm> sponge;
    auto add_sponge = [&](cd amp, double k_ref, bool left_of_switch) {
        if (amp == cd(0, 0)) return;
        DriveTerm sp;
        sp.kind = DriveTerm::Kind::pump;
        sp.envelope = Eigen::ArrayXd::Zero(grid.n_points);
        bool any = false;
        for (int i = 0; i < grid.n_points; ++i) {
            bool side = left_of_switch ? xs[i] < pump.x_switch : xs[i] >= pump.x_switch;
            if (absorb[i] > 0 && side) {
                sp.envelope[i] = absorb[i];
                any = true;
            }
        }
        if (!any) return;
        sp.k = k_ref;
        sp.amplitude = units::hbar * std::abs(amp);
        sp.phase = std::arg(amp) + 0.5 * kPi;  // +i Gamma psi_ref
        sponge.push_back(std::move(sp));
    };
    add_sponge(a_up, pump.k_up, true);
    add_sponge(a_down, pump.k_down, false);
    for (const auto& sp : sponge) drives.push_back(sp);

    GpeEngine engine(grid, params, potential, absorb, drives, std::max(n_up, n_down));

    double check = opts.check_interval > 0 ? opts.check_interval : 10.0 / params.gamma();
    long steps_per_check = std::max<long>(1, std::lround(check / grid.dt));
    double delta_t = steps_per_check * grid.dt;

    double residual = std::numeric_limits<double>::infinity();
    Eigen::ArrayXcd prev;
    while (true) {
        prev = state.psi;
        engine.advance(state, steps_per_check);
        double num = std::sqrt((state.psi - prev).abs2().sum());
        double den = std::sqrt(prev.abs2().sum());
        residual = den > 0 ? num / (den * delta_t) : num / delta_t;
        if (state.t > opts.ramp_time && residual < tol) break;
        if (state.t >= t_max) {
            std::ostringstream os;
            os << "steady state not reached by t_max = " << t_max << " ps (residual "
               << residual << " /ps, tol " << tol << " /ps)";
            throw NoConvergence(os.str());
        }
    }

    BackgroundState bg;
    bg.grid = grid;
    bg.params = params;
    bg.pump = pump;
    bg.defect = defect;
    bg.psi0 = state.psi;
    bg.residual = residual;
    bg.t_converged = state.t;
    bg.absorb_rate = absorb;
    bg.absorb_margin = opts.absorb_margin;
    bg.sponge_drives = sponge;

    int N = grid.n_points;
    double h = grid.dx();
    bg.n0 = bg.psi0.abs2();
    Eigen::ArrayXd phase(N);
    for (int i = 0; i < N; ++i) phase[i] = std::arg(bg.psi0[i]);
    phase = numeric::unwrap_phase(phase);
    bg.v0 = (units::hbar / m) * numeric::gradient_4th_onesided(phase, h);

    bg.c_B.resize(N);
    bg.m_det.resize(N);
    double g = params.g();
    for (int i = 0; i < N; ++i) {
        double delta_x = params.delta_eff(bg.v0[i]);
        double A = 2.0 * g * bg.n0[i] - delta_x;
        double R = (g * bg.n0[i] - delta_x) * (3.0 * g * bg.n0[i] - delta_x);
        bg.c_B[i] = A > 0 ? std::sqrt(units::hbar * A / m) : 0.0;
        bg.m_det[i] = (A > 0 && R > 0) ? m * std::sqrt(R) / A : 0.0;
    }

    // horizon: sub- to supersonic crossings of |v0| - c_B away from the absorbers
    double pad = 10.0;
    double lo = grid.x0 + opts.absorb_margin + pad;
    double hi = grid.x0 + grid.length - opts.absorb_margin - pad;
    int best = -1;
    double best_dist = std::numeric_limits<double>::infinity();
    for (int i = 0; i + 1 < N; ++i) {
        double xa = xs[i], xb = xs[i + 1];
        if (xa < lo || xb > hi) continue;
        double sa = std::abs(bg.v0[i]) - bg.c_B[i];
        double sb = std::abs(bg.v0[i + 1]) - bg.c_B[i + 1];
        if (sa <= 0 && sb > 0) {
            ++bg.horizon_crossings;
            double xc = xa + h * sa / (sa - sb);
            double dist = std::abs(xc - pump.x_switch);
            if (dist < best_dist) {
                best_dist = dist;
                best = i;
                bg.horizon_x = xc;
            }
        }
    }
    (void)best;
    if (!bg.horizon_x && opts.require_horizon)
        throw NotTranscritical("flow has no sub- to supersonic crossing outside the absorbers");

    // plateau hydrodynamics from window medians; the downstream window starts
    // well past the defect because the plateau heals from the horizon over
    // several tens of microns
    double up_lo = grid.x0 + opts.absorb_margin + 20.0;
    double up_hi = pump.x_switch - 25.0;
    double dn_lo = std::max(pump.x_switch, defect.center) + 40.0;
    double dn_hi = grid.x0 + grid.length - opts.absorb_margin - 5.0;
    if (!(up_lo < up_hi) || !(dn_lo < dn_hi))
        throw ValidationError("grid", "domain too short for plateau analysis windows");
    bg.upstream_window = {up_lo, up_hi};
    bg.downstream_window = {dn_lo, dn_hi};

    // A region that collapsed to the lower branch (or was never pumped, as in
    // the no-support configuration) has no Bogoliubov description: keep the
    // medians, flag the plateau invalid instead of propagating the error.
    auto window_hydro = [&](double wlo, double whi, bool& valid) {
        std::vector<double> ns, vs;
        for (int i = 0; i < N; ++i) {
            if (xs[i] >= wlo && xs[i] <= whi) {
                ns.push_back(bg.n0[i]);
                vs.push_back(bg.v0[i]);
            }
        }
        if (ns.empty()) throw ValidationError("grid", "empty plateau window");
        double med_n = numeric::median(std::move(ns));
        double med_v = numeric::median(std::move(vs));
        try {
            LocalHydro h = local_hydro_clamped(med_n, med_v, params);
            valid = true;
            return h;
        } catch (const GappedRegionError&) {
            valid = false;
            LocalHydro h;
            h.n0 = med_n;
            h.v0 = med_v;
            h.delta_eff = params.delta_eff(med_v);
            h.m_star = params.mass();
            return h;
        }
    };
    bg.up_plateau = window_hydro(up_lo, up_hi, bg.up_plateau_valid);
    bg.down_plateau = window_hydro(dn_lo, dn_hi, bg.down_plateau_valid);

    return bg;
}

// ---------------------------------------------------------------------------
// Recorded histories
// ---------------------------------------------------------------------------

namespace {

FieldHistory record_run(GpeEngine& engine, FieldState& state, const Eigen::ArrayXcd& psi0,
                        double record_time, double record_stride, const SimGrid& grid,
                        double omega_p) {
    long stride_steps = std::max<long>(1, std::lround(record_stride / grid.dt));
    double dt_rec = stride_steps * grid.dt;
    long n_frames = static_cast<long>(std::floor(record_time / dt_rec)) + 1;

    FieldHistory hist;
    hist.grid = grid;
    hist.dt_record = dt_rec;
    hist.omega_p = omega_p;
    hist.frames.resize(n_frames, grid.n_points);
    hist.times.resize(n_frames);
    for (long f = 0; f < n_frames; ++f) {
        if (f > 0) engine.advance(state, stride_steps);
        hist.times[f] = state.t;
        for (int i = 0; i < grid.n_points; ++i) hist.frames(f, i) = state.psi[i] - psi0[i];
    }
    return hist;
}

}  // namespace

FieldHistory run_with_noise(const BackgroundState& bg, const DriveTerm& noise,
                            double duration, double record_stride, double warmup) {
    if (noise.kind != DriveTerm::Kind::white_noise)
        throw ValidationError("noise", "drive must have kind white_noise");
    std::vector<DriveTerm> drives = make_pump_drives(bg.grid, bg.pump);
    for (const auto& sp : bg.sponge_drives) drives.push_back(sp);
    drives.push_back(noise);
    GpeEngine engine(bg.grid, bg.params, defect_profile(bg.grid, bg.defect), bg.absorb_rate,
                     drives, bg.n0.maxCoeff());
    FieldState state{bg.psi0, 0.0};
    if (warmup > 0)
        engine.advance(state, std::max<long>(1, std::lround(warmup / bg.grid.dt)));
    FieldHistory hist =
        record_run(engine, state, bg.psi0, duration, record_stride, bg.grid, bg.params.omega_p());
    return hist;
}

FieldHistory run_with_probe(const BackgroundState& bg, const DriveTerm& probe,
                            double relax_time, double record_time, double record_stride) {
    if (probe.kind != DriveTerm::Kind::probe)
        throw ValidationError("probe", "drive must have kind probe");
    double omega_min = bg.up_plateau_valid ? bg.up_plateau.gap() : 0.0;
    if (probe.omega < omega_min) {
        std::ostringstream os;
        os << "probe frequency " << probe.omega << " /ps lies inside the upstream gap (omega_min "
           << omega_min << " /ps)";
        throw ProbeInGap(os.str());
    }
    std::vector<DriveTerm> drives = make_pump_drives(bg.grid, bg.pump);
    for (const auto& sp : bg.sponge_drives) drives.push_back(sp);
    drives.push_back(probe);
    GpeEngine engine(bg.grid, bg.params, defect_profile(bg.grid, bg.defect), bg.absorb_rate,
                     drives, bg.n0.maxCoeff());
    FieldState state{bg.psi0, 0.0};
    if (relax_time > 0)
        engine.advance(state, std::max<long>(1, std::lround(relax_time / bg.grid.dt)));
    FieldHistory hist =
        record_run(engine, state, bg.psi0, record_time, record_stride, bg.grid, bg.params.omega_p());
    hist.probe_amplitude = probe.amplitude;
    hist.probe_k = probe.k;
    hist.probe_omega = probe.omega;
    return hist;
}

// ---------------------------------------------------------------------------
// LinearizedEngine
// ---------------------------------------------------------------------------

struct LinearizedEngine::Impl {
    int n = 0;
    double dt = 0;
    Eigen::ArrayXcd kin_half, kin_full;
    Eigen::ArrayXcd e11, e12;  // local 2x2 propagator acting on (a, conj a)
    Eigen::ArrayXcd f;         // probe spatial profile / hbar
    double omega = 0, ramp_time = 0, ramp_start = 0;

    fftw_complex* buf = nullptr;
    fftw_plan fwd = nullptr, bwd = nullptr;

    ~Impl() {
        std::lock_guard<std::mutex> lk(fftw_mutex());
        if (fwd) fftw_destroy_plan(fwd);
        if (bwd) fftw_destroy_plan(bwd);
        if (buf) fftw_free(buf);
    }

    cd* b() { return reinterpret_cast<cd*>(buf); }

    void kinetic(const Eigen::ArrayXcd& phase) {
        fftw_execute(fwd);
        cd* p = b();
        for (int i = 0; i < n; ++i) p[i] *= phase[i];
        fftw_execute(bwd);
    }

    void local_step(double t) {
        cd* p = b();
        double tm = t + 0.5 * dt;
        double r = ramp_factor(tm, ramp_time, ramp_start);
        cd drive_phase = std::polar(r * dt, -omega * tm);
        for (int i = 0; i < n; ++i) {
            cd a = p[i];
            cd a_new = e11[i] * a + e12[i] * std::conj(a);
            if (f[i] != cd(0, 0)) a_new += cd(0, -1) * f[i] * drive_phase;
            p[i] = a_new;
        }
    }

    void check_health(double t) const {
        const cd* p = const_cast<Impl*>(this)->b();
        double mx = 0;
        for (int i = 0; i < n; ++i) mx = std::max(mx, std::norm(p[i]));
        if (!std::isfinite(mx)) {
            std::ostringstream os;
            os << "linearized field became non-finite at t = " << t << " ps";
            throw NumericalBlowup(os.str());
        }
    }
};

LinearizedEngine::LinearizedEngine(const BackgroundState& bg, double gamma_lin,
                                   const Eigen::ArrayXd& absorb_rate, DriveTerm probe)
    : impl_(std::make_unique<Impl>()) {
    if (gamma_lin < 0) throw ValidationError("gamma_lin", "must be non-negative");
    if (probe.kind != DriveTerm::Kind::probe)
        throw ValidationError("probe", "drive must have kind probe");
    const SimGrid& grid = bg.grid;
    if (absorb_rate.size() != grid.n_points)
        throw ValidationError("absorb_rate", "size does not match the grid");
    if (probe.envelope.size() != grid.n_points)
        throw ValidationError("probe.envelope", "size does not match the grid");

    Impl& im = *impl_;
    im.n = grid.n_points;
    im.dt = grid.dt;

    const PolaritonParams& p = bg.params;
    double m = p.mass();
    Eigen::ArrayXd k = grid.k();
    im.kin_half.resize(im.n);
    im.kin_full.resize(im.n);
    for (int i = 0; i < im.n; ++i) {
        double wk = units::hbar * k[i] * k[i] / (2.0 * m);
        im.kin_half[i] = std::polar(1.0 / im.n, -0.5 * wk * im.dt);
        im.kin_full[i] = std::polar(1.0 / im.n, -wk * im.dt);
    }

    // local 2x2 exponential exp(-i N dt) with
    //   N = [[A, B], [-conj(B), -conj(A)]],  A = -delta0 + V/hbar + 2 g n0 - i(gamma/2 + G),
    //   B = g psi0^2
    // Splitting N = i Im(A) I + W with traceless W gives
    //   exp(-i N dt) = e^{Im(A) dt} [cos(s dt) I - i (sin(s dt)/s) W],
    //   s = sqrt(Re(A)^2 - |B|^2).
    Eigen::ArrayXd potential = defect_profile(grid, bg.defect);
    im.e11.resize(im.n);
    im.e12.resize(im.n);
    double g = p.g();
    for (int i = 0; i < im.n; ++i) {
        cd A(-p.delta0() + potential[i] / units::hbar + 2.0 * g * bg.n0[i],
             -(0.5 * gamma_lin + absorb_rate[i]));
        cd B = g * bg.psi0[i] * bg.psi0[i];
        double decay = std::exp(A.imag() * im.dt);
        cd s = std::sqrt(cd(A.real() * A.real() - std::norm(B), 0));
        cd sdt = s * im.dt;
        cd cosv = std::cos(sdt);
        cd sincv;  // sin(s dt)/s
        if (std::abs(sdt) < 1e-6)
            sincv = im.dt * (1.0 - sdt * sdt / 6.0);
        else
            sincv = std::sin(sdt) / s;
        im.e11[i] = decay * (cosv - cd(0, 1) * sincv * A.real());
        im.e12[i] = decay * (cd(0, -1) * sincv * B);
    }

    Eigen::ArrayXd xs = grid.x();
    im.f.resize(im.n);
    for (int i = 0; i < im.n; ++i)
        im.f[i] = probe.amplitude / units::hbar * probe.envelope[i] *
                  std::polar(1.0, probe.k * xs[i] + probe.phase);
    im.omega = probe.omega;
    im.ramp_time = probe.ramp_time;
    im.ramp_start = probe.ramp_start;

    im.buf = fftw_alloc_complex(im.n);
    {
        std::lock_guard<std::mutex> lk(fftw_mutex());
        im.fwd = fftw_plan_dft_1d(im.n, im.buf, im.buf, FFTW_FORWARD, FFTW_ESTIMATE);
        im.bwd = fftw_plan_dft_1d(im.n, im.buf, im.buf, FFTW_BACKWARD, FFTW_ESTIMATE);
    }
    if (!im.fwd || !im.bwd) throw Error("could not create FFT plans");
}

LinearizedEngine::~LinearizedEngine() = default;

void LinearizedEngine::step(FieldState& delta) {
    Impl& im = *impl_;
    if (delta.psi.size() != im.n) throw ValidationError("psi", "size does not match the grid");
    std::memcpy(im.buf, delta.psi.data(), sizeof(cd) * im.n);
    im.kinetic(im.kin_half);
    im.local_step(delta.t);
    im.kinetic(im.kin_half);
    im.check_health(delta.t);
    std::memcpy(delta.psi.data(), im.buf, sizeof(cd) * im.n);
    delta.t += im.dt;
}

void LinearizedEngine::advance(FieldState& delta, long n_steps) {
    if (n_steps <= 0) return;
    Impl& im = *impl_;
    if (delta.psi.size() != im.n) throw ValidationError("psi", "size does not match the grid");
    std::memcpy(im.buf, delta.psi.data(), sizeof(cd) * im.n);
    double t = delta.t;
    im.kinetic(im.kin_half);
    for (long s = 0; s < n_steps; ++s) {
        im.local_step(t);
        t += im.dt;
        im.kinetic(s + 1 < n_steps ? im.kin_full : im.kin_half);
        if ((s & 63) == 0) im.check_health(t);
    }
    im.check_health(t);
    std::memcpy(delta.psi.data(), im.buf, sizeof(cd) * im.n);
    delta.t = t;
}

FieldHistory run_linearized_probe(const BackgroundState& bg, double gamma_lin,
                                  const DriveTerm& probe, double relax_time,
                                  double record_time, double record_stride) {
    LinearizedEngine engine(bg, gamma_lin, bg.absorb_rate, probe);
    FieldState delta{Eigen::ArrayXcd::Zero(bg.grid.n_points), 0.0};
    if (relax_time > 0)
        engine.advance(delta, std::max<long>(1, std::lround(relax_time / bg.grid.dt)));

    long stride_steps = std::max<long>(1, std::lround(record_stride / bg.grid.dt));
    double dt_rec = stride_steps * bg.grid.dt;
    long n_frames = static_cast<long>(std::floor(record_time / dt_rec)) + 1;

    FieldHistory hist;
    hist.grid = bg.grid;
    hist.dt_record = dt_rec;
    hist.omega_p = bg.params.omega_p();
    hist.probe_amplitude = probe.amplitude;
    hist.probe_k = probe.k;
    hist.probe_omega = probe.omega;
    hist.frames.resize(n_frames, bg.grid.n_points);
    hist.times.resize(n_frames);
    for (long f = 0; f < n_frames; ++f) {
        if (f > 0) engine.advance(delta, stride_steps);
        hist.times[f] = delta.t;
        for (int i = 0; i < bg.grid.n_points; ++i) hist.frames(f, i) = delta.psi[i];
    }
    return hist;
}

// ---------------------------------------------------------------------------
// Numeric helpers
// ---------------------------------------------------------------------------

namespace numeric {

std::mutex& fftw_plan_mutex() {
    static std::mutex m;
    return m;
}

Eigen::ArrayXd unwrap_phase(const Eigen::ArrayXd& phase) {
    Eigen::ArrayXd out(phase.size());
    if (phase.size() == 0) return out;
    out[0] = phase[0];
    for (Eigen::Index i = 1; i < phase.size(); ++i) {
        double d = phase[i] - phase[i - 1];
        d -= 2.0 * kPi * std::round(d / (2.0 * kPi));
        out[i] = out[i - 1] + d;
    }
    return out;
}

Eigen::ArrayXd gradient_4th_periodic(const Eigen::ArrayXd& f, double dx) {
    Eigen::Index n = f.size();
    Eigen::ArrayXd out(n);
    auto at = [&](Eigen::Index i) { return f[((i % n) + n) % n]; };
    for (Eigen::Index i = 0; i < n; ++i)
        out[i] = (at(i - 2) - 8.0 * at(i - 1) + 8.0 * at(i + 1) - at(i + 2)) / (12.0 * dx);
    return out;
}

Eigen::ArrayXd gradient_4th_onesided(const Eigen::ArrayXd& f, double dx) {
    Eigen::Index n = f.size();
    Eigen::ArrayXd out(n);
    if (n < 5) throw ValidationError("gradient", "need at least 5 points");
    for (Eigen::Index i = 2; i + 2 < n; ++i)
        out[i] = (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) / (12.0 * dx);
    out[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * dx);
    out[1] = (f[2] - f[0]) / (2.0 * dx);
    out[n - 2] = (f[n - 1] - f[n - 3]) / (2.0 * dx);
    out[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * dx);
    return out;
}

double median(std::vector<double> values) {
    if (values.empty()) throw ValidationError("median", "empty input");
    size_t mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + mid, values.end());
    double hi = values[mid];
    if (values.size() % 2 == 1) return hi;
    std::nth_element(values.begin(), values.begin() + mid - 1, values.begin() + mid);
    return 0.5 * (values[mid - 1] + hi);
}

}  // namespace numeric

}  // namespace polsim
