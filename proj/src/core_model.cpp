#include "polsim/core_model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace polsim {

using units::hbar;

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

void PolaritonParams::validate() const {
    if (!(m_star > 0)) throw ValidationError("params.m_star", "must be > 0");
    if (!(hbar_omega0 > 0)) throw ValidationError("params.hbar_omega0", "must be > 0");
    if (hbar_gamma < 0) throw ValidationError("params.hbar_gamma", "must be non-negative");
    if (!(hbar_g > 0)) throw ValidationError("params.hbar_g", "must be > 0");
    if (!(hbar_omega_p > 0)) throw ValidationError("params.hbar_omega_p", "must be > 0");
    // weak-loss regime: gamma is quoted in ueV, omega_p in meV
    if (!(hbar_gamma * 1e-3 < hbar_omega_p))
        throw ValidationError("params.hbar_gamma", "loss must be far below the pump energy");
}

void PumpProfile::validate() const {
    if (!(k_down > k_up)) throw ValidationError("pump.k_down", "must exceed k_up (transcritical)");
    if (F_up < 0) throw ValidationError("pump.F_up", "must be non-negative");
    if (F_down < 0) throw ValidationError("pump.F_down", "must be non-negative");
    if (!(omega_p > 0)) throw ValidationError("pump.omega_p", "must be > 0");
}

void DefectPotential::validate() const {
    if (!(width > 0)) throw ValidationError("defect.width", "must be > 0");
}

double DefectPotential::value(double x) const {
    const double s = (x - center) / width;
    return depth * std::exp(-0.5 * s * s);
}

// ---------------------------------------------------------------------------
// Equation of state
// ---------------------------------------------------------------------------

namespace {

// Real roots of the monic cubic x^3 + a x^2 + b x + c via the companion
// matrix, polished by Newton. Tolerance is relative to `scale`.
std::vector<double> real_cubic_roots(double a, double b, double c, double scale) {
    Eigen::Matrix3d companion = Eigen::Matrix3d::Zero();
    companion(1, 0) = 1.0;
    companion(2, 1) = 1.0;
    companion(0, 2) = -c;
    companion(1, 2) = -b;
    companion(2, 2) = -a;
    Eigen::EigenSolver<Eigen::Matrix3d> solver(companion, /*computeEigenvectors=*/false);
    if (solver.info() != Eigen::Success) throw Error("cubic companion eigensolve failed");

    std::vector<double> roots;
    for (int i = 0; i < 3; ++i) {
        const std::complex<double> z = solver.eigenvalues()(i);
        if (std::abs(z.imag()) > 1e-7 * std::max(scale, std::abs(z.real()))) continue;
        double x = z.real();
        for (int it = 0; it < 3; ++it) {  // Newton polish
            const double p = ((x + a) * x + b) * x + c;
            const double dp = (3.0 * x + 2.0 * a) * x + b;
            if (dp == 0.0) break;
            const double step = p / dp;
            x -= step;
            if (std::abs(step) < 1e-15 * std::max(1.0, std::abs(x))) break;
        }
        roots.push_back(x);
    }
    std::sort(roots.begin(), roots.end());
    // collapse double roots (turning-point degeneracy)
    std::vector<double> unique;
    for (double r : roots) {
        if (unique.empty() || std::abs(r - unique.back()) > 1e-8 * std::max(scale, std::abs(r)))
            unique.push_back(r);
    }
    return unique;
}

}  // namespace

std::vector<double> equation_of_state_roots(double F_p, double v0,
                                            const PolaritonParams& params) {
    if (F_p < 0) throw Error("equation_of_state_roots: F_p must be non-negative");
    if (F_p == 0.0) return {0.0};

    const double g = params.g();
    const double delta = params.delta_eff(v0);
    const double gamma = params.gamma();
    const double intensity = (F_p / hbar) * (F_p / hbar);  // |F_p|^2/hbar^2 [1/(um ps^2)]

    // Substitute m = g n0 [1/ps] for conditioning:
    //   m^3 - 2 delta m^2 + (delta^2 + gamma^2/4) m - g I = 0
    const double a = -2.0 * delta;
    const double b = delta * delta + 0.25 * gamma * gamma;
    const double c = -g * intensity;
    const double scale = std::max({std::abs(delta), gamma, std::cbrt(g * intensity)});

    std::vector<double> n_roots;
    for (double m : real_cubic_roots(a, b, c, scale)) {
        if (m < 0) continue;  // the EOS has no negative real roots for I > 0
        n_roots.push_back(m / g);
    }
    std::sort(n_roots.begin(), n_roots.end());
    return n_roots;
}

std::optional<std::pair<TurningPoint, TurningPoint>> bistability_turning_points(
    const double v0, const PolaritonParams& params) {
    const double g = params.g();
    const double delta = params.delta_eff(v0);
    const double gamma = params.gamma();

    // relative tolerance so that "exactly critical" parameter sets, which
    // cannot survive the meV round trip unscathed, return the degenerate point
    const double disc = delta * delta - 0.75 * gamma * gamma;
    if (delta <= 0 || disc < -1e-10 * delta * delta) return std::nullopt;

    const double s = std::sqrt(std::max(disc, 0.0));
    auto point = [&](double n) {
        const double gn = g * n;
        TurningPoint tp;
        tp.n0 = n;
        tp.drive_intensity = n * ((gn - delta) * (gn - delta) + 0.25 * gamma * gamma);
        return tp;
    };
    const double n_lo = (2.0 * delta - s) / (3.0 * g);  // end of the lower branch (local max of I)
    const double n_hi = (2.0 * delta + s) / (3.0 * g);  // start of the upper branch (local min of I)
    return std::make_pair(point(n_lo), point(n_hi));
}

// ---------------------------------------------------------------------------
// Local hydrodynamics and dispersion
// ---------------------------------------------------------------------------

double LocalHydro::gap() const { return std::sqrt(std::max(gap2, 0.0)); }

namespace {

LocalHydro make_hydro(double n0, double v0, const PolaritonParams& params, double A, double R) {
    LocalHydro h;
    h.n0 = n0;
    h.v0 = v0;
    h.delta_eff = params.delta_eff(v0);
    h.m_star = params.mass();
    h.c_B = std::sqrt(hbar * A / h.m_star);
    h.gap2 = R;
    h.m_det = (A > 0 && R > 0) ? h.m_star * std::sqrt(R) / A : 0.0;
    return h;
}

}  // namespace

LocalHydro local_hydro(double n0, double v0, const PolaritonParams& params) {
    const double g = params.g();
    const double delta = params.delta_eff(v0);
    const double A = 2.0 * g * n0 - delta;                          // c_B^2 m*/hbar
    const double R = (g * n0 - delta) * (3.0 * g * n0 - delta);     // gap^2
    if (A < 0)
        throw GappedRegionError("local_hydro: 2 g n0 - delta_eff < 0, c_B undefined here");
    if (R < 0)
        throw GappedRegionError("local_hydro: (g n0 - delta)(3 g n0 - delta) < 0, m_det undefined here");
    return make_hydro(n0, v0, params, A, R);
}

LocalHydro local_hydro_clamped(double n0, double v0, const PolaritonParams& params,
                               double clamp_tol) {
    const double g = params.g();
    const double delta = params.delta_eff(v0);
    double A = 2.0 * g * n0 - delta;
    const double R = (g * n0 - delta) * (3.0 * g * n0 - delta);
    const double scale2 = std::max(delta * delta, g * n0 * g * n0);
    if (A < 0 && -A <= clamp_tol * std::sqrt(scale2)) A = 0.0;
    if (A < 0)
        throw GappedRegionError("local_hydro_clamped: c_B radicand negative beyond clamp tolerance");
    // A negative m_det radicand is kept (signed) when the imaginary gap is
    // subcritical: the loss term stabilizes |gap| < gamma/2, and we allow a
    // 1.5x margin for plateaus probed right at the fold.
    if (R < 0 && std::sqrt(-R) > 0.75 * params.gamma())
        throw GappedRegionError("local_hydro_clamped: m_det radicand negative beyond the "
                                "loss-stabilized sliver");
    return make_hydro(n0, v0, params, A, R);
}

std::pair<double, double> dispersion_lab_frame(double k, const LocalHydro& hydro) {
    const double Ek = hbar * k * k / (2.0 * hydro.m_star);
    const double S2 = Ek * Ek + hydro.c_B * hydro.c_B * k * k + hydro.gap2;
    if (S2 < 0) return {hydro.v0 * k, hydro.v0 * k};  // evanescent sliver band
    const double S = std::sqrt(S2);
    return {hydro.v0 * k + S, hydro.v0 * k - S};
}

DispersionPoint dispersion_from_state(double k, double n0, double v0,
                                      const PolaritonParams& params) {
    const double g = params.g();
    const double delta = params.delta_eff(v0);
    const double Ek = hbar * k * k / (2.0 * params.mass());
    const double A = Ek + 2.0 * g * n0 - delta;
    const double rad = A * A - g * n0 * g * n0;
    DispersionPoint out;
    if (rad < 0) {
        out.omega_plus = out.omega_minus = v0 * k;
        out.propagating = false;
        return out;
    }
    const double S = std::sqrt(rad);
    out.omega_plus = v0 * k + S;
    out.omega_minus = v0 * k - S;
    return out;
}

double group_velocity(double k, int branch, const LocalHydro& hydro) {
    const double Ek = hbar * k * k / (2.0 * hydro.m_star);
    const double c2 = hydro.c_B * hydro.c_B;
    const double S2 = Ek * Ek + c2 * k * k + hydro.gap2;
    const double sgn = (branch >= 0) ? 1.0 : -1.0;
    if (S2 <= 0) return hydro.v0;  // evanescent band: the real part rides the flow
    const double S = std::sqrt(S2);
    if (S < 1e-12 * std::max(1.0, std::abs(hydro.v0))) {
        // conical point (k = 0, gapless): one-sided slope
        return hydro.v0 + sgn * hydro.c_B;
    }
    // dS/dk = (Ek * hbar k / m* + c^2 k) / S
    return hydro.v0 + sgn * (Ek * hbar * k / hydro.m_star + c2 * k) / S;
}

LocalHydro propagating_idealization(const LocalHydro& hydro) {
    LocalHydro h = hydro;
    h.gap2 = std::max(h.gap2, 0.0);
    return h;
}

ModeWeights bogoliubov_weights(double k, int branch, const LocalHydro& hydro) {
    // Co-moving 2x2 Bogoliubov block [[A, nu], [-nu, -A]] with
    // A = E_k + 2 g n0 - delta and nu = g n0, both recoverable from the hydro
    // fields: A0 = 2 g n0 - delta = c_B^2 m*/hbar, and
    // nu^2 = A0^2 - gap2 since gap2 = (A0 - nu)(A0 + nu).
    const double A0 = hydro.c_B * hydro.c_B * hydro.m_star / hbar;
    const double nu = std::sqrt(std::max(0.0, A0 * A0 - hydro.gap2));
    const double Ek = hbar * k * k / (2.0 * hydro.m_star);
    const double A = Ek + A0;
    const double S = std::sqrt(std::max(0.0, A * A - nu * nu));
    ModeWeights w;
    if (S <= 0) {  // evanescent corner; weights undefined, return equal split
        w.u = w.v = std::sqrt(0.5);
        return w;
    }
    if (branch >= 0) {
        w.u = std::sqrt((A + S) / (2.0 * S));
        w.v = std::sqrt(std::max(0.0, (A - S)) / (2.0 * S));
    } else {
        w.u = std::sqrt(std::max(0.0, (A - S)) / (2.0 * S));
        w.v = std::sqrt((A + S) / (2.0 * S));
    }
    return w;
}

// ---------------------------------------------------------------------------
// Channel map
// ---------------------------------------------------------------------------

namespace {

std::string label_name(ChannelLabel l) {
    switch (l) {
        case ChannelLabel::in: return "in";
        case ChannelLabel::p: return "p";
        case ChannelLabel::d: return "d";
        case ChannelLabel::HR: return "HR";
        case ChannelLabel::down: return "down";
        case ChannelLabel::dn: return "dn";
    }
    return "?";
}

// Real k roots of omega_pm(k) = omega on one side, from the quartic obtained
// by squaring Eq. (5):
//   (hbar/2m*)^2 k^4 + (c^2 - v0^2) k^2 + 2 omega v0 k + (M^2 - omega^2) = 0
std::vector<double> side_roots(double omega, const LocalHydro& h) {
    const double E2 = hbar / (2.0 * h.m_star);
    const double q2 = (h.c_B * h.c_B - h.v0 * h.v0) / (E2 * E2);
    const double q1 = 2.0 * omega * h.v0 / (E2 * E2);
    const double q0 = (h.gap2 - omega * omega) / (E2 * E2);

    Eigen::Matrix4d companion = Eigen::Matrix4d::Zero();
    companion(1, 0) = 1.0;
    companion(2, 1) = 1.0;
    companion(3, 2) = 1.0;
    companion(0, 3) = -q0;
    companion(1, 3) = -q1;
    companion(2, 3) = -q2;
    companion(3, 3) = 0.0;  // no k^3 term
    Eigen::EigenSolver<Eigen::Matrix4d> solver(companion, false);
    if (solver.info() != Eigen::Success) throw Error("quartic companion eigensolve failed");

    std::vector<double> roots;
    for (int i = 0; i < 4; ++i) {
        const std::complex<double> z = solver.eigenvalues()(i);
        if (std::abs(z.imag()) > 1e-7 * std::max(1.0, std::abs(z.real()))) continue;
        double k = z.real();
        for (int it = 0; it < 4; ++it) {  // Newton polish on the quartic
            const double p = ((k * k + q2) * k + q1) * k + q0;
            const double dp = (4.0 * k * k + 2.0 * q2) * k + q1;
            if (dp == 0.0) break;
            const double step = p / dp;
            k -= step;
            if (std::abs(step) < 1e-15 * std::max(1.0, std::abs(k))) break;
        }
        roots.push_back(k);
    }
    std::sort(roots.begin(), roots.end());
    std::vector<double> unique;
    for (double k : roots) {
        if (unique.empty() || std::abs(k - unique.back()) > 1e-8 * (1.0 + std::abs(k)))
            unique.push_back(k);
    }
    return unique;
}

}  // namespace

std::string to_string(ChannelLabel label) { return label_name(label); }
std::string to_string(Side side) { return side == Side::upstream ? "upstream" : "downstream"; }
std::string to_string(Direction dir) { return dir == Direction::incoming ? "incoming" : "outgoing"; }
std::string to_string(FrequencyRegime regime) {
    switch (regime) {
        case FrequencyRegime::below_window: return "below_window";
        case FrequencyRegime::hawking_window: return "hawking_window";
        case FrequencyRegime::above_window: return "above_window";
    }
    return "?";
}

const Channel* ChannelSet::find(ChannelLabel label) const {
    for (const auto& ch : channels)
        if (ch.label == label) return &ch;
    return nullptr;
}

const Channel& ChannelSet::require(ChannelLabel label) const {
    const Channel* ch = find(label);
    if (!ch)
        throw NoPropagatingChannel("channel '" + label_name(label) +
                                   "' does not propagate at omega = " + std::to_string(omega));
    return *ch;
}

int ChannelSet::count(Direction dir) const {
    int n = 0;
    for (const auto& ch : channels) n += (ch.direction == dir);
    return n;
}

ChannelSet channel_map(double omega, const LocalHydro& upstream_hydro,
                       const LocalHydro& downstream_hydro) {
    if (!(omega > 0)) throw Error("channel_map: omega must be positive");
    constexpr double vg_tie_break = 1e-4;  // [um/ps]; slower roots are band edges
    const double omega_scale = std::max(omega, 1e-3);

    // gapless-limit kinematics on sliver plateaus (see propagating_idealization)
    const LocalHydro up = propagating_idealization(upstream_hydro);
    const LocalHydro down = propagating_idealization(downstream_hydro);

    ChannelSet set;
    set.omega = omega;

    const FrequencyWindow window = frequency_window(up, down);
    set.regime = (omega < window.omega_min)   ? FrequencyRegime::below_window
                 : (omega <= window.omega_max) ? FrequencyRegime::hawking_window
                                               : FrequencyRegime::above_window;

    for (Side side : {Side::upstream, Side::downstream}) {
        const LocalHydro& h = (side == Side::upstream) ? up : down;
        for (double k : side_roots(omega, h)) {
            // assign the branch whose dispersion actually passes through (k, omega)
            const auto [wp, wm] = dispersion_lab_frame(k, h);
            const double err_p = std::abs(wp - omega);
            const double err_m = std::abs(wm - omega);
            const int branch = (err_p <= err_m) ? +1 : -1;
            if (std::min(err_p, err_m) > 1e-9 * omega_scale) continue;  // spurious squared root

            const double vg = group_velocity(k, branch, h);
            if (std::abs(vg) < vg_tie_break) {
                set.band_edges.push_back({k, side});
                continue;
            }

            Channel ch;
            ch.k = k;
            ch.norm_sign = branch;
            ch.group_velocity = vg;
            ch.side = side;
            // upstream occupies x < horizon: toward the horizon means vg > 0;
            // downstream occupies x > horizon: toward the horizon means vg < 0
            const bool toward = (side == Side::upstream) ? (vg > 0) : (vg < 0);
            ch.direction = toward ? Direction::incoming : Direction::outgoing;

            if (side == Side::upstream) {
                if (branch < 0) continue;  // no upstream negative-norm modes at omega > 0
                ch.label = toward ? ChannelLabel::in : ChannelLabel::HR;
            } else {
                if (branch > 0)
                    ch.label = toward ? ChannelLabel::p : ChannelLabel::down;
                else
                    ch.label = toward ? ChannelLabel::d : ChannelLabel::dn;
            }
            set.channels.push_back(ch);
        }
    }
    return set;
}

FrequencyWindow frequency_window(const LocalHydro& upstream_hydro,
                                 const LocalHydro& downstream_hydro) {
    FrequencyWindow w;
    w.omega_min = upstream_hydro.gap();

    // omega_max = max_k of the downstream omega_- branch: dense bracket then
    // parabolic refinement (kept independent of the golden-section oracle).
    // Kinematics on the gapless-limit idealization, consistent with channel_map.
    const LocalHydro h = propagating_idealization(downstream_hydro);
    auto f = [&](double k) { return dispersion_lab_frame(k, h).second; };
    const double k_hi = std::max(4.0 * h.m_star * std::abs(h.v0) / hbar, 1.0);
    const int n_scan = 4000;
    double best_k = 0, best = 0;
    for (int i = 1; i <= n_scan; ++i) {
        const double k = k_hi * i / n_scan;
        const double val = f(k);
        if (val > best) {
            best = val;
            best_k = k;
        }
    }
    if (best <= 1e-12)
        throw NotTranscritical("frequency_window: downstream omega_- never positive (no horizon)");
    // parabolic refinement around the best sample
    double dk = k_hi / n_scan;
    double k0 = best_k;
    for (int it = 0; it < 60; ++it) {
        const double fm = f(k0 - dk), f0 = f(k0), fp = f(k0 + dk);
        const double denom = fm - 2.0 * f0 + fp;
        if (denom < 0) {
            const double shift = 0.5 * dk * (fm - fp) / denom;
            k0 += std::clamp(shift, -dk, dk);
        }
        dk *= 0.5;
        if (dk < 1e-14 * std::max(1.0, k0)) break;
    }
    w.omega_max = f(k0);
    if (!(w.omega_max > 0))
        throw NotTranscritical("frequency_window: omega_max <= 0");
    return w;
}

MetricCoefficients metric_at(const LocalHydro& hydro) {
    MetricCoefficients m;
    m.g_tt = hydro.c_B * hydro.c_B - hydro.v0 * hydro.v0;
    m.g_tx = -hydro.v0;
    m.g_xx = -1.0;
    return m;
}

// ---------------------------------------------------------------------------
// Pump calibration
// ---------------------------------------------------------------------------

double turning_point_intensity(double v0, const PolaritonParams& params) {
    const auto folds = bistability_turning_points(v0, params);
    if (!folds)
        throw Error("turning_point_intensity: not bistable at this velocity (delta/gamma too small)");
    return folds->second.drive_intensity;  // fold at the start of the upper branch
}

double amplitude_above_turning_point(double v0, const PolaritonParams& params, double offset) {
    const double intensity = (1.0 + offset) * turning_point_intensity(v0, params);
    return hbar * std::sqrt(intensity);
}

double upper_branch_density(double F_p, double v0, const PolaritonParams& params) {
    const auto roots = equation_of_state_roots(F_p, v0, params);
    return roots.back();
}

SupportCalibration calibrate_downstream_support(double v0, const PolaritonParams& params,
                                                double c_target, double min_offset) {
    const double g = params.g();
    const double delta = params.delta_eff(v0);
    const double m = params.mass();
    const auto folds = bistability_turning_points(v0, params);
    if (!folds)
        throw Error("calibrate_downstream_support: downstream EOS not bistable");
    const double I_fold = folds->second.drive_intensity;

    // density that realizes c_target: c^2 = hbar (2 g n - delta)/m*
    const double n_target = (m * c_target * c_target / hbar + delta) / (2.0 * g);

    double intensity;
    if (n_target <= folds->second.n0) {
        // target sits at or below the fold; clamp to the stability margin
        intensity = (1.0 + min_offset) * I_fold;
    } else {
        const double gn = g * n_target;
        intensity = n_target * ((gn - delta) * (gn - delta) + 0.25 * params.gamma() * params.gamma());
        if (intensity < (1.0 + min_offset) * I_fold) intensity = (1.0 + min_offset) * I_fold;
    }

    SupportCalibration cal;
    cal.F = hbar * std::sqrt(intensity);
    cal.intensity_offset = intensity / I_fold - 1.0;
    cal.n0 = upper_branch_density(cal.F, v0, params);
    cal.c_B = local_hydro_clamped(cal.n0, v0, params).c_B;
    return cal;
}

}  // namespace polsim
