#include "polsim/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "polsim/artifacts.hpp"
#include "polsim/bdg_spectrum.hpp"
#include "polsim/core_model.hpp"
#include "polsim/errors.hpp"
#include "polsim/gpe_engine.hpp"
#include "polsim/scatter_analysis.hpp"
#include "polsim/svg_plot.hpp"
#include "polsim/units.hpp"

namespace fs = std::filesystem;

namespace polsim {
namespace {

using json = nlohmann::json;

std::string hash_hex(std::uint64_t h) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string out_path(const RunConfig& cfg, const char* name) {
    return (fs::path(cfg.out_dir) / name).string();
}

// Freshness of a CSV artifact: present and stamped with the current config
// hash. Only the comment header is scanned, so large tables stay cheap.
bool csv_fresh(const std::string& path, const RunConfig& cfg) {
    std::ifstream in(path);
    if (!in) return false;
    const std::string want = "config_hash = " + hash_hex(cfg.hash());
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] != '#') break;
        if (line.find(want) != std::string::npos) return true;
    }
    return false;
}

// Freshness of a small flat JSON artifact (qnm.json, fit.json).
bool json_fresh(const std::string& path, const RunConfig& cfg) {
    std::ifstream in(path);
    if (!in) return false;
    json j;
    try {
        in >> j;
    } catch (...) {
        return false;
    }
    return j.value("config_hash", "") == hash_hex(cfg.hash());
}

bool background_fresh(const std::string& path, const RunConfig& cfg) {
    if (!fs::exists(path)) return false;
    try {
        load_background(path, cfg, true);
        return true;
    } catch (const Error&) {
        return false;
    }
}

std::string fmt1(double v, const char* f = "%.4g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// ---------------------------------------------------------------------------
// Shared stage plumbing
// ---------------------------------------------------------------------------

// Resolves the calibration requests in the config: F fields equal to zero
// mean "derive from the offsets", matching how the paper fixes its drives
// (upstream a fraction above the fold, downstream tuned to a sound speed).
PumpProfile calibrated_pump(const RunConfig& cfg) {
    PumpProfile pump = cfg.pump;
    pump.omega_p = cfg.params.omega_p();
    if (pump.F_up <= 0) {
        const double v_up = units::hbar * pump.k_up / cfg.params.mass();
        pump.F_up = amplitude_above_turning_point(v_up, cfg.params, cfg.intensity_offset);
    }
    if (!cfg.supported) {
        pump.F_down = 0;
    } else if (pump.F_down <= 0) {
        const double v_down = units::hbar * pump.k_down / cfg.params.mass();
        pump.F_down =
            calibrate_downstream_support(v_down, cfg.params, cfg.c_target, cfg.min_offset)
                .F;
    }
    return pump;
}

BackgroundState compute_background(const RunConfig& cfg) {
    SteadyStateOptions so;
    so.absorb_margin = cfg.analysis.absorb_margin;
    so.require_horizon = cfg.has_defect;
    return find_steady_state(cfg.grid, cfg.params, calibrated_pump(cfg), cfg.defect,
                             cfg.analysis.steady_tol, cfg.analysis.steady_t_max, so);
}

BackgroundState ensure_background(const RunConfig& cfg) {
    return load_background(out_path(cfg, "background.json"), cfg, true);
}

double horizon_or_switch(const BackgroundState& bg) {
    return bg.horizon_x ? *bg.horizon_x : bg.pump.x_switch;
}

// Analysis regions: config overrides when set, else horizon-anchored spans
// clear of the probe-free margins and the absorbing layers.
std::pair<double, double> upstream_region(const RunConfig& cfg, const BackgroundState& bg) {
    if (cfg.analysis.up_lo != 0 || cfg.analysis.up_hi != 0)
        return {cfg.analysis.up_lo, cfg.analysis.up_hi};
    const double xh = horizon_or_switch(bg);
    return {bg.grid.x0 + bg.absorb_margin + 5.0, xh - 12.0};
}

std::pair<double, double> downstream_region(const RunConfig& cfg,
                                            const BackgroundState& bg) {
    if (cfg.analysis.down_lo != 0 || cfg.analysis.down_hi != 0)
        return {cfg.analysis.down_lo, cfg.analysis.down_hi};
    const double xh = horizon_or_switch(bg);
    return {xh + 12.0, bg.grid.x0 + bg.grid.length - bg.absorb_margin - 5.0};
}

// Condensate carrier over a region: m* <v0> / hbar. Equals the pump
// wavevector on a plateau and stays meaningful on the accelerating
// no-support side, where there is no plateau to read it from.
double region_carrier(const BackgroundState& bg, std::pair<double, double> region) {
    const Eigen::ArrayXd x = bg.grid.x();
    double sum = 0;
    int count = 0;
    for (Eigen::Index i = 0; i < x.size(); ++i)
        if (x[i] >= region.first && x[i] <= region.second) {
            sum += bg.v0[i];
            ++count;
        }
    return count ? bg.params.mass() * (sum / count) / units::hbar : 0.0;
}

// Downstream hydro used for channel kinematics: the explicit config override
// (no-support runs borrow the supported companion's plateau) wins over the
// background's own plateau.
std::optional<LocalHydro> down_hydro_override(const RunConfig& cfg) {
    if (cfg.sweep.down_n0 > 0)
        return local_hydro(cfg.sweep.down_n0, cfg.sweep.down_v0, cfg.params);
    return std::nullopt;
}

FrequencyWindow sweep_window(const RunConfig& cfg, const BackgroundState& bg,
                             const std::optional<LocalHydro>& override) {
    if (override) return frequency_window(bg.up_plateau, *override);
    if (!bg.down_plateau_valid)
        throw GappedRegionError(
            "downstream plateau has no Bogoliubov description; set sweep.down_n0 / "
            "sweep.down_v0 to borrow the supported companion's kinematics");
    return frequency_window(bg.up_plateau, bg.down_plateau);
}

}  // namespace

// ---------------------------------------------------------------------------
// steady
// ---------------------------------------------------------------------------

StageResult stage_steady(const RunConfig& cfg, const StageOptions& opt) {
    StageResult res;
    res.stage = "steady";
    const std::string bg_path = out_path(cfg, "background.json");
    const std::string prof_path = out_path(cfg, "profiles.csv");
    res.outputs = {bg_path, prof_path};
    if (!opt.overwrite && background_fresh(bg_path, cfg) && csv_fresh(prof_path, cfg)) {
        res.skipped = true;
        res.summary = "fresh background.json found (config hash matches)";
        return res;
    }

    BackgroundState bg = compute_background(cfg);
    save_background(bg_path, bg, cfg);

    CsvTable t;
    std::vector<std::string> extra = {
        "residual_per_ps = " + format_number(bg.residual),
        "t_converged_ps = " + format_number(bg.t_converged),
        "F_up = " + format_number(bg.pump.F_up),
        "F_down = " + format_number(bg.pump.F_down),
        "horizon_crossings = " + format_number(bg.horizon_crossings),
    };
    if (bg.horizon_x) extra.push_back("horizon_x_um = " + format_number(*bg.horizon_x));
    if (bg.down_plateau_valid) {
        extra.push_back("c_B_down_um_per_ps = " + format_number(bg.down_plateau.c_B));
        extra.push_back("v0_down_um_per_ps = " + format_number(bg.down_plateau.v0));
    }
    t.comments = artifact_comments(cfg, "steady", extra);
    t.columns = {"x_um",          "n0_per_um", "v0_um_per_ps", "c_B_um_per_ps",
                 "mach",          "re_psi0",   "im_psi0"};
    const Eigen::ArrayXd x = bg.grid.x();
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double mach = bg.c_B[i] > 0 ? std::abs(bg.v0[i]) / bg.c_B[i]
                                          : std::numeric_limits<double>::quiet_NaN();
        t.rows.push_back({x[i], bg.n0[i], bg.v0[i], bg.c_B[i], mach, bg.psi0[i].real(),
                          bg.psi0[i].imag()});
    }
    write_csv(prof_path, t);

    std::ostringstream os;
    os << "converged in " << fmt1(bg.t_converged) << " ps (residual "
       << fmt1(bg.residual, "%.2e") << ")";
    if (bg.horizon_x) os << "; horizon at x = " << fmt1(*bg.horizon_x) << " um";
    if (bg.down_plateau_valid)
        os << "; downstream c_B = " << fmt1(bg.down_plateau.c_B)
           << ", v0 = " << fmt1(bg.down_plateau.v0) << " um/ps";
    else
        os << "; downstream carries no plateau (no-support flow)";
    res.summary = os.str();
    return res;
}

// ---------------------------------------------------------------------------
// bistability
// ---------------------------------------------------------------------------

namespace {

// Long-double EOS intensity. The turning-point scan runs on this directly:
// golden-section extremum localization reaches ~sqrt(eps_ld) ~ 1e-10
// relative, comfortably inside the 1e-8 agreement bound the closed-form
// solution is held to.
struct EosCurve {
    long double g, delta, q;  // q = gamma^2 / 4
    long double intensity(long double n) const {
        const long double d = g * n - delta;
        return n * (d * d + q);
    }
};

double golden_extremum(const EosCurve& c, double a, double b, bool maximize) {
    const long double phi = 0.6180339887498948482L;
    long double lo = a, hi = b;
    long double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
    long double f1 = c.intensity(x1), f2 = c.intensity(x2);
    const long double sign = maximize ? 1.0L : -1.0L;
    while (static_cast<double>(hi - lo) > 1e-13 * static_cast<double>(hi)) {
        if (sign * f1 > sign * f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = c.intensity(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = c.intensity(x2);
        }
    }
    return static_cast<double>(0.5L * (lo + hi));
}

}  // namespace

StageResult stage_bistability(const RunConfig& cfg, const StageOptions& opt) {
    StageResult res;
    res.stage = "bistability";
    const std::string curve_path = out_path(cfg, "scurve.csv");
    const std::string tp_path = out_path(cfg, "turning_points.csv");
    res.outputs = {curve_path, tp_path};
    if (!opt.overwrite && csv_fresh(curve_path, cfg) && csv_fresh(tp_path, cfg)) {
        res.skipped = true;
        res.summary = "fresh S-curve tables found";
        return res;
    }

    CsvTable curve, tps;
    curve.columns = {"k_per_um", "n0_per_um", "intensity_per_um_ps2",
                     "hbar_delta_eff_meV"};
    tps.columns = {"k_per_um",    "fold",        "n0_analytic", "I_analytic",
                   "n0_scan",     "I_scan",      "rel_err_n0",  "rel_err_I"};
    std::ostringstream sum;

    for (double k : {cfg.pump.k_up, cfg.pump.k_down}) {
        const double v0 = units::hbar * k / cfg.params.mass();
        const double delta = cfg.params.delta_eff(v0);
        EosCurve eos{static_cast<long double>(cfg.params.g()),
                     static_cast<long double>(delta),
                     static_cast<long double>(0.25 * cfg.params.gamma() *
                                              cfg.params.gamma())};

        const double n_hi = delta > 0 ? 3.0 * delta / cfg.params.g() : 1.0;
        const int n_curve = 600;
        for (int i = 1; i <= n_curve; ++i) {
            const double n = n_hi * i / n_curve;
            curve.rows.push_back({k, n, static_cast<double>(eos.intensity(n)),
                                  units::hbar * delta});
        }

        auto analytic = bistability_turning_points(v0, cfg.params);
        if (!analytic) continue;

        // Bracket the folds on a coarse grid of the same long-double curve,
        // then localize each extremum by golden section. The lower-density
        // fold is the local maximum of I(n), the upper one the local minimum.
        const int n_scan = 4096;
        std::vector<double> In(n_scan + 1);
        for (int i = 0; i <= n_scan; ++i)
            In[i] = static_cast<double>(eos.intensity(n_hi * i / n_scan));
        int i_max = -1, i_min = -1;
        for (int i = 1; i < n_scan; ++i) {
            if (In[i] > In[i - 1] && In[i] > In[i + 1]) i_max = i;
            if (i_max >= 0 && In[i] < In[i - 1] && In[i] < In[i + 1]) {
                i_min = i;
                break;
            }
        }
        if (i_max < 0 || i_min < 0) continue;
        const double dn = n_hi / n_scan;
        const double n_lower = golden_extremum(eos, (i_max - 1) * dn, (i_max + 1) * dn, true);
        const double n_upper = golden_extremum(eos, (i_min - 1) * dn, (i_min + 1) * dn, false);

        const TurningPoint tp_scan[2] = {
            {n_lower, static_cast<double>(eos.intensity(n_lower))},
            {n_upper, static_cast<double>(eos.intensity(n_upper))}};
        const TurningPoint tp_an[2] = {analytic->first, analytic->second};
        for (int f = 0; f < 2; ++f) {
            const double en = std::abs(tp_scan[f].n0 - tp_an[f].n0) / tp_an[f].n0;
            const double ei = std::abs(tp_scan[f].drive_intensity - tp_an[f].drive_intensity) /
                              tp_an[f].drive_intensity;
            tps.rows.push_back({k, static_cast<double>(f), tp_an[f].n0,
                                tp_an[f].drive_intensity, tp_scan[f].n0,
                                tp_scan[f].drive_intensity, en, ei});
        }
        sum << "k = " << fmt1(k) << ": folds at n = " << fmt1(tp_an[0].n0) << ", "
            << fmt1(tp_an[1].n0) << " /um (scan agrees to "
            << fmt1(std::max(tps.rows[tps.rows.size() - 2][6], tps.rows.back()[6]), "%.1e")
            << "); ";
    }

    curve.comments = artifact_comments(cfg, "bistability");
    tps.comments = artifact_comments(
        cfg, "bistability",
        {"fold: 0 = lower density (local max of I), 1 = upper (local min)"});
    write_csv(curve_path, curve);
    write_csv(tp_path, tps);
    res.summary = sum.str().empty() ? "no bistable folds (delta_eff/gamma < sqrt(3)/2)"
                                    : sum.str();
    return res;
}

// ---------------------------------------------------------------------------
// dispersion-map
// ---------------------------------------------------------------------------

namespace {

void save_map_csv(const std::string& path, const SpectrumMap& map, const RunConfig& cfg) {
    CsvTable t;
    t.comments = artifact_comments(
        cfg, "dispersion-map",
        {"region = " + std::string(map.region == Side::upstream ? "upstream" : "downstream"),
         "x_lo_um = " + format_number(map.bounds.first),
         "x_hi_um = " + format_number(map.bounds.second),
         "carrier_k_per_um = " + format_number(map.carrier_k),
         "rows are omega bins; columns k bins; values |A| (noise units)"});
    t.columns.push_back("omega_per_ps");
    for (Eigen::Index c = 0; c < map.k_axis.size(); ++c)
        t.columns.push_back("k_" + format_number(map.k_axis[c]));
    for (Eigen::Index r = 0; r < map.amplitude.rows(); ++r) {
        std::vector<double> row;
        row.reserve(map.amplitude.cols() + 1);
        row.push_back(map.omega_axis[r]);
        for (Eigen::Index c = 0; c < map.amplitude.cols(); ++c)
            row.push_back(map.amplitude(r, c));
        t.rows.push_back(std::move(row));
    }
    write_csv(path, t);
}

void save_lda_csv(const std::string& path, const LocalHydro& hydro, double k_max,
                  const RunConfig& cfg, const char* region) {
    CsvTable t;
    t.comments = artifact_comments(
        cfg, "dispersion-map",
        {"region = " + std::string(region),
         "Eq. (5) local-density branches on the plateau hydrodynamics",
         "n0 = " + format_number(hydro.n0) + ", v0 = " + format_number(hydro.v0) +
             ", c_B = " + format_number(hydro.c_B)});
    t.columns = {"k_per_um", "omega_plus_per_ps", "omega_minus_per_ps"};
    const int n = 401;
    for (int i = 0; i < n; ++i) {
        const double k = -k_max + 2.0 * k_max * i / (n - 1);
        auto [wp, wm] = dispersion_lab_frame(k, hydro);
        t.rows.push_back({k, wp, wm});
    }
    write_csv(path, t);
}

}  // namespace

StageResult stage_dispersion_map(const RunConfig& cfg, const StageOptions& opt) {
    StageResult res;
    res.stage = "dispersion-map";
    const std::string up_path = out_path(cfg, "map_up.csv");
    const std::string down_path = out_path(cfg, "map_down.csv");
    res.outputs = {up_path, down_path};
    if (!opt.overwrite && csv_fresh(up_path, cfg) && csv_fresh(down_path, cfg)) {
        res.skipped = true;
        res.summary = "fresh dispersion maps found";
        return res;
    }

    BackgroundState bg = ensure_background(cfg);
    const double n_ref = std::max(bg.up_plateau.n0, 1e-12);
    DriveTerm noise =
        make_noise_drive(cfg.analysis.noise_amplitude * std::sqrt(n_ref), cfg.seed);
    FieldHistory hist = run_with_noise(bg, noise, cfg.analysis.noise_duration,
                                       cfg.analysis.noise_stride);

    const auto up_b = upstream_region(cfg, bg);
    const auto down_b = downstream_region(cfg, bg);
    SpectrumMap up = windowed_spectrum(hist, up_b, Side::upstream,
                                       region_carrier(bg, up_b));
    SpectrumMap down = windowed_spectrum(hist, down_b, Side::downstream,
                                         region_carrier(bg, down_b));
    save_map_csv(up_path, up, cfg);
    save_map_csv(down_path, down, cfg);

    int n_overlays = 0;
    if (bg.up_plateau_valid) {
        save_lda_csv(out_path(cfg, "lda_up.csv"), bg.up_plateau,
                     up.k_axis.maxCoeff(), cfg, "upstream");
        res.outputs.push_back(out_path(cfg, "lda_up.csv"));
        ++n_overlays;
    }
    if (bg.down_plateau_valid) {
        save_lda_csv(out_path(cfg, "lda_down.csv"), bg.down_plateau,
                     down.k_axis.maxCoeff(), cfg, "downstream");
        res.outputs.push_back(out_path(cfg, "lda_down.csv"));
        ++n_overlays;
    }

    std::ostringstream os;
    os << "maps " << up.amplitude.rows() << "x" << up.amplitude.cols() << " (up), "
       << down.amplitude.rows() << "x" << down.amplitude.cols() << " (down); "
       << n_overlays << " LDA overlay table(s)";
    res.summary = os.str();
    return res;
}

// ---------------------------------------------------------------------------
// bdg
// ---------------------------------------------------------------------------

StageResult stage_bdg(const RunConfig& cfg, const StageOptions& opt) {
    StageResult res;
    res.stage = "bdg";
    const std::string modes_path = out_path(cfg, "modes.csv");
    const std::string qnm_path = out_path(cfg, "qnm.json");
    res.outputs = {modes_path, qnm_path};
    if (!opt.overwrite && csv_fresh(modes_path, cfg) && json_fresh(qnm_path, cfg)) {
        res.skipped = true;
        res.summary = "fresh BdG mode table and QNM report found";
        return res;
    }

    BackgroundState bg = ensure_background(cfg);
    if (!bg.horizon_x)
        throw NotTranscritical("bdg stage needs a horizon to anchor the QNM search");

    BdgOperator op = assemble_bdg(bg);
    std::vector<BdgMode> modes = diagonalize(op, cfg.analysis.zero_tol);

    double omega_lo;
    if (cfg.analysis.qnm_lo_meV > 0) {
        omega_lo = units::meV_to_rad_per_ps(cfg.analysis.qnm_lo_meV);
    } else {
        auto dh = down_hydro_override(cfg);
        omega_lo = sweep_window(cfg, bg, dh).omega_max;
    }
    const std::pair<double, double> window{omega_lo,
                                           cfg.analysis.qnm_window_factor * omega_lo};
    QnmEstimate q = find_qnm(modes, window, *bg.horizon_x, bg.grid, bg.params,
                             cfg.analysis.loc_radius);

    CsvTable t;
    t.comments = artifact_comments(
        cfg, "bdg",
        {"zero_tol = " + format_number(cfg.analysis.zero_tol),
         "qnm_window_per_ps = [" + format_number(window.first) + ", " +
             format_number(window.second) + "]",
         "norm_class: -1 negative, 0 zero, +1 positive"});
    t.columns = {"re_omega_per_ps", "im_omega_per_ps", "norm",      "center_x_um",
                 "localization_um", "norm_class",      "pair_index"};
    for (const BdgMode& m : modes) {
        const double cls = m.classification == NormClass::zero
                               ? 0.0
                               : (m.classification == NormClass::positive ? 1.0 : -1.0);
        t.rows.push_back({m.omega.real(), m.omega.imag(), m.norm, m.center_x,
                          m.localization, cls, static_cast<double>(m.pair_index)});
    }
    write_csv(modes_path, t);

    QnmReport rep;
    rep.Omega_qnm = q.Omega_qnm;
    rep.Gamma_qnm = q.Gamma_qnm;
    rep.gamma_radiative = q.gamma_radiative;
    rep.Q = q.Q;
    rep.omega_min = window.first;
    rep.omega_max = window.second;
    rep.center_x = q.mode.center_x;
    rep.zero_tol = cfg.analysis.zero_tol;
    rep.config_hash = cfg.hash();
    save_qnm(qnm_path, rep);

    std::ostringstream os;
    os << modes.size() << " modes; QNM at hbar*Omega = "
       << fmt1(units::hbar * q.Omega_qnm) << " meV, Gamma = " << fmt1(q.Gamma_qnm)
       << " 1/ps (radiative " << fmt1(q.gamma_radiative) << "), Q = " << fmt1(q.Q);
    res.summary = os.str();
    return res;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

StageResult stage_sweep(const RunConfig& cfg, const StageOptions& opt) {
    StageResult res;
    res.stage = "sweep";
    const std::string sweep_path = out_path(cfg, "sweep.csv");
    res.outputs = {sweep_path};
    if (!opt.overwrite && csv_fresh(sweep_path, cfg)) {
        res.skipped = true;
        res.summary = "fresh sweep table found";
        return res;
    }

    BackgroundState bg = ensure_background(cfg);
    auto dh = down_hydro_override(cfg);
    FrequencyWindow fw = sweep_window(cfg, bg, dh);

    double omega_qnm;
    if (cfg.sweep.qnm_guess_meV > 0) {
        omega_qnm = units::meV_to_rad_per_ps(cfg.sweep.qnm_guess_meV);
    } else {
        const std::string qnm_path = out_path(cfg, "qnm.json");
        if (!json_fresh(qnm_path, cfg))
            throw MissingUpstreamArtifact(
                "sweep needs a fresh qnm.json (run the bdg stage) or an explicit "
                "sweep.qnm_guess_meV");
        omega_qnm = load_qnm(qnm_path).Omega_qnm;
    }

    std::vector<double> grid = sweep_omega_grid(
        fw, omega_qnm, cfg.params.gamma(), cfg.sweep.base_points, cfg.sweep.cutoff_factor,
        units::meV_to_rad_per_ps(cfg.sweep.floor_meV));

    ProbeSpec probe = cfg.probe;
    if (probe.amplitude <= 0) probe.amplitude = cfg.probe_rel_amplitude * bg.pump.F_up;

    SweepOptions so;
    so.workers = opt.workers > 0 ? opt.workers : cfg.sweep.workers;
    so.down_hydro = dh;
    so.linearized_lossless = cfg.sweep.lossless;
    if (cfg.analysis.up_lo != 0 || cfg.analysis.up_hi != 0)
        so.up_bounds = {cfg.analysis.up_lo, cfg.analysis.up_hi};
    if (cfg.analysis.down_lo != 0 || cfg.analysis.down_hi != 0)
        so.down_bounds = {cfg.analysis.down_lo, cfg.analysis.down_hi};

    ScatterSweepResult sw = run_sweep(bg, grid, probe, so);
    save_sweep(sweep_path, sw, cfg);

    int gaps = 0;
    for (const SweepPoint& pt : sw.points) gaps += pt.gap ? 1 : 0;
    std::ostringstream os;
    os << sw.points.size() << " probe frequencies (" << gaps << " gap records); window "
       << fmt1(units::hbar * sw.window.omega_min, "%.4f") << " .. "
       << fmt1(units::hbar * sw.window.omega_max, "%.4f") << " meV";
    res.summary = os.str();
    return res;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

StageResult stage_fit(const RunConfig& cfg, const StageOptions& opt) {
    StageResult res;
    res.stage = "fit";
    const std::string fit_path = out_path(cfg, "fit.json");
    res.outputs = {fit_path};
    if (!opt.overwrite && json_fresh(fit_path, cfg)) {
        res.skipped = true;
        res.summary = "fresh fit record found";
        return res;
    }

    const std::string sweep_path = out_path(cfg, "sweep.csv");
    if (!csv_fresh(sweep_path, cfg))
        throw MissingUpstreamArtifact("fit needs a fresh sweep.csv (run the sweep stage)");
    CsvTable t = read_csv(sweep_path);
    const std::vector<double> w_meV = t.column("omega_meV");
    const std::vector<double> td = t.column("T_down");

    std::vector<double> w, y;
    for (size_t i = 0; i < w_meV.size(); ++i)
        if (std::isfinite(td[i]) && td[i] > 0) {
            w.push_back(units::meV_to_rad_per_ps(w_meV[i]));
            y.push_back(td[i]);
        }
    Eigen::ArrayXd wa = Eigen::Map<Eigen::ArrayXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    Eigen::ArrayXd ya = Eigen::Map<Eigen::ArrayXd>(y.data(), static_cast<Eigen::Index>(y.size()));
    BreitWignerFit fit = breit_wigner_fit(wa, ya);
    save_fit(fit_path, fit, cfg);

    std::ostringstream os;
    os << "Breit-Wigner on T_down: hbar*Omega = " << fmt1(units::hbar * fit.Omega_qnm)
       << " meV, Gamma = " << fmt1(fit.Gamma_qnm) << " 1/ps, residual "
       << fmt1(fit.residual, "%.3f") << " over " << fit.n_points << " points";
    const std::string qnm_path = out_path(cfg, "qnm.json");
    if (json_fresh(qnm_path, cfg)) {
        QnmReport q = load_qnm(qnm_path);
        os << "; bdg eigenvalue offset "
           << fmt1(100.0 * std::abs(fit.Omega_qnm - q.Omega_qnm) / q.Omega_qnm, "%.2f")
           << "%";
    }
    res.summary = os.str();
    return res;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

namespace {

struct MapTable {
    Eigen::ArrayXd k, omega;
    Eigen::MatrixXd amp;
    double carrier_k = 0;
};

MapTable load_map_csv(const std::string& path) {
    CsvTable t = read_csv(path);
    MapTable m;
    if (auto ck = t.meta("carrier_k_per_um")) m.carrier_k = std::stod(*ck);
    const int nk = static_cast<int>(t.columns.size()) - 1;
    const int nw = static_cast<int>(t.rows.size());
    m.k.resize(nk);
    for (int c = 0; c < nk; ++c) m.k[c] = std::stod(t.columns[c + 1].substr(2));
    m.omega.resize(nw);
    m.amp.resize(nw, nk);
    for (int r = 0; r < nw; ++r) {
        m.omega[r] = t.rows[r][0];
        for (int c = 0; c < nk; ++c) m.amp(r, c) = t.rows[r][c + 1];
    }
    return m;
}

PlotSeries series_from(const std::vector<double>& x, const std::vector<double>& y,
                       const std::string& label, const std::string& color = "",
                       bool dashed = false) {
    PlotSeries s;
    s.label = label;
    s.x = x;
    s.y = y;
    s.color = color;
    s.dashed = dashed;
    return s;
}

// Filters a sweep table column pair to finite values, in hbar*omega [meV].
void finite_xy(const std::vector<double>& w, const std::vector<double>& v,
               std::vector<double>& x, std::vector<double>& y) {
    x.clear();
    y.clear();
    for (size_t i = 0; i < w.size(); ++i)
        if (std::isfinite(v[i])) {
            x.push_back(w[i]);
            y.push_back(v[i]);
        }
}

}  // namespace

StageResult stage_report(const RunConfig& cfg, const StageOptions&) {
    StageResult res;
    res.stage = "report";
    std::vector<std::string> absent;
    std::ostringstream md;
    md << "# Polariton-horizon reproduction report\n\n";
    md << "- config: `" << (cfg.origin.empty() ? "(inline)" : cfg.origin) << "`\n";
    md << "- config hash: `" << hash_hex(cfg.hash()) << "`\n";
    md << "- output directory: `" << cfg.out_dir << "`\n\n";

    auto add_fig = [&](const std::string& name, const std::string& svg,
                       const std::string& caption) {
        const std::string path = out_path(cfg, (name + ".svg").c_str());
        write_svg(path, svg);
        res.outputs.push_back(path);
        md << "![" << caption << "](" << name << ".svg)\n\n";
    };

    // ---- steady state + bistability (Fig. 1a, 1b) -------------------------
    if (csv_fresh(out_path(cfg, "scurve.csv"), cfg) &&
        csv_fresh(out_path(cfg, "turning_points.csv"), cfg)) {
        CsvTable curve = read_csv(out_path(cfg, "scurve.csv"));
        CsvTable tp = read_csv(out_path(cfg, "turning_points.csv"));
        LinePlot p;
        p.title = "Bistability of the driven homogeneous state";
        p.xlabel = "drive intensity |F|^2/hbar^2 [1/(um ps^2)]";
        p.ylabel = "density n0 [1/um]";
        const auto kcol = curve.column("k_per_um");
        const auto ncol = curve.column("n0_per_um");
        const auto icol = curve.column("intensity_per_um_ps2");
        for (double kv : {cfg.pump.k_up, cfg.pump.k_down}) {
            PlotSeries s;
            s.label = "k = " + fmt1(kv) + " /um";
            for (size_t i = 0; i < kcol.size(); ++i)
                if (kcol[i] == kv) {
                    s.x.push_back(icol[i]);
                    s.y.push_back(ncol[i]);
                }
            if (!s.x.empty()) p.series.push_back(std::move(s));
        }
        PlotSeries folds;
        folds.label = "turning points";
        folds.points = true;
        folds.color = "#d62728";
        for (const auto& row : tp.rows) {
            folds.x.push_back(row[tp.col("I_analytic")]);
            folds.y.push_back(row[tp.col("n0_analytic")]);
        }
        if (!folds.x.empty()) p.series.push_back(std::move(folds));
        add_fig("fig1a", render_line_plot(p), "Fig. 1a: bistable S-curves");

        md << "## Bistability\n\n";
        md << "| k [1/um] | fold | n0 analytic | n0 scan | rel. err |\n";
        md << "|---|---|---|---|---|\n";
        for (const auto& row : tp.rows)
            md << "| " << fmt1(row[tp.col("k_per_um")]) << " | "
               << (row[tp.col("fold")] == 0 ? "lower" : "upper") << " | "
               << fmt1(row[tp.col("n0_analytic")], "%.8g") << " | "
               << fmt1(row[tp.col("n0_scan")], "%.8g") << " | "
               << fmt1(row[tp.col("rel_err_n0")], "%.1e") << " |\n";
        md << "\n";
    } else {
        absent.push_back("bistability");
    }

    if (csv_fresh(out_path(cfg, "profiles.csv"), cfg)) {
        CsvTable prof = read_csv(out_path(cfg, "profiles.csv"));
        LinePlot p;
        p.title = "Transcritical flow profile";
        p.xlabel = "x [um]";
        p.ylabel = "speed [um/ps]";
        const auto xs = prof.column("x_um");
        auto vs = prof.column("v0_um_per_ps");
        for (double& v : vs) v = std::abs(v);
        p.series.push_back(series_from(xs, prof.column("c_B_um_per_ps"), "c_B(x)"));
        p.series.push_back(series_from(xs, vs, "|v0(x)|"));
        if (auto h = prof.meta("horizon_x_um"))
            p.vlines.push_back({std::stod(*h), "horizon"});
        add_fig("fig1b", render_line_plot(p), "Fig. 1b: sound speed vs flow speed");

        md << "## Steady state\n\n";
        if (auto h = prof.meta("horizon_x_um"))
            md << "- horizon: x = " << *h << " um\n";
        if (auto c = prof.meta("c_B_down_um_per_ps"))
            md << "- downstream c_B = " << *c << " um/ps\n";
        if (auto v = prof.meta("v0_down_um_per_ps"))
            md << "- downstream v0 = " << *v << " um/ps\n";
        if (auto r = prof.meta("residual_per_ps"))
            md << "- steady residual = " << *r << " 1/ps\n";
        md << "\n";
    } else {
        absent.push_back("steady");
    }

    // ---- dispersion maps (Fig. 1c-1f) --------------------------------------
    const bool up_map_ok = csv_fresh(out_path(cfg, "map_up.csv"), cfg);
    const bool down_map_ok = csv_fresh(out_path(cfg, "map_down.csv"), cfg);
    if (up_map_ok && down_map_ok) {
        struct SideSpec {
            const char* map;
            const char* lda;
            const char* fig_map;
            const char* fig_lda;
            const char* name;
        };
        const SideSpec sides[2] = {
            {"map_up.csv", "lda_up.csv", "fig1c", "fig1e", "upstream"},
            {"map_down.csv", "lda_down.csv", "fig1d", "fig1f", "downstream"}};
        for (const SideSpec& s : sides) {
            MapTable m = load_map_csv(out_path(cfg, s.map));
            Heatmap h;
            h.title = std::string("Noise spectrum, ") + s.name;
            h.xlabel = "k [1/um]";
            h.ylabel = "hbar*omega [meV]";
            h.values = m.amp;
            h.xrange = {m.k.minCoeff(), m.k.maxCoeff()};
            h.yrange = {units::hbar * m.omega.minCoeff(), units::hbar * m.omega.maxCoeff()};
            h.log_scale = true;
            const std::string lda_path = out_path(cfg, s.lda);
            if (csv_fresh(lda_path, cfg)) {
                CsvTable lda = read_csv(lda_path);
                auto ks = lda.column("k_per_um");
                for (const char* col : {"omega_plus_per_ps", "omega_minus_per_ps"}) {
                    auto wv = lda.column(col);
                    PlotSeries ov;
                    ov.dashed = true;
                    ov.color = "#ffffff";
                    for (size_t i = 0; i < ks.size(); ++i)
                        if (std::isfinite(wv[i])) {
                            ov.x.push_back(ks[i]);
                            ov.y.push_back(units::hbar * wv[i]);
                        }
                    h.overlays.push_back(std::move(ov));
                }

                LinePlot lp;
                lp.title = std::string("LDA dispersion, ") + s.name;
                lp.xlabel = "k [1/um]";
                lp.ylabel = "hbar*omega [meV]";
                auto wp = lda.column("omega_plus_per_ps");
                auto wm = lda.column("omega_minus_per_ps");
                std::vector<double> yp(wp.size()), ym(wm.size());
                for (size_t i = 0; i < wp.size(); ++i) yp[i] = units::hbar * wp[i];
                for (size_t i = 0; i < wm.size(); ++i) ym[i] = units::hbar * wm[i];
                lp.series.push_back(series_from(ks, yp, "omega_+"));
                lp.series.push_back(series_from(ks, ym, "omega_-"));
                add_fig(s.fig_lda, render_line_plot(lp),
                        std::string("LDA branches, ") + s.name);
            }
            add_fig(s.fig_map, render_heatmap(h),
                    std::string("noise-seeded dispersion, ") + s.name);
        }
        md << "## Dispersion maps\n\nSee fig1c-fig1f.\n\n";
    } else {
        absent.push_back("dispersion-map");
    }

    // ---- BdG spectrum (Fig. 2d) + QNM --------------------------------------
    std::optional<QnmReport> qnm;
    if (csv_fresh(out_path(cfg, "modes.csv"), cfg) &&
        json_fresh(out_path(cfg, "qnm.json"), cfg)) {
        qnm = load_qnm(out_path(cfg, "qnm.json"));
        CsvTable modes = read_csv(out_path(cfg, "modes.csv"));
        LinePlot p;
        p.title = "BdG spectrum (gamma factored out)";
        p.xlabel = "Re hbar*omega [meV]";
        p.ylabel = "Im hbar*omega [meV]";
        struct Cls {
            double v;
            const char* label;
            const char* color;
        };
        for (const Cls& c : {Cls{1, "positive norm", "#000000"},
                             Cls{-1, "negative norm", "#d62728"},
                             Cls{0, "zero norm", "#1f77b4"}}) {
            PlotSeries s;
            s.label = c.label;
            s.color = c.color;
            s.points = true;
            for (const auto& row : modes.rows)
                if (row[modes.col("norm_class")] == c.v) {
                    s.x.push_back(units::hbar * row[modes.col("re_omega_per_ps")]);
                    s.y.push_back(units::hbar * row[modes.col("im_omega_per_ps")]);
                }
            if (!s.x.empty()) p.series.push_back(std::move(s));
        }
        add_fig("fig2d", render_line_plot(p), "Fig. 2d: BdG eigenfrequencies");

        md << "## Quasinormal mode\n\n";
        md << "- hbar*Omega_qnm = " << fmt1(units::hbar * qnm->Omega_qnm, "%.4f")
           << " meV\n";
        md << "- Gamma_qnm = " << fmt1(qnm->Gamma_qnm, "%.4f")
           << " 1/ps (radiative part " << fmt1(qnm->gamma_radiative, "%.4f") << ")\n";
        md << "- Q = " << fmt1(qnm->Q, "%.3f") << "\n";
        md << "- mode centroid x = " << fmt1(qnm->center_x, "%.2f") << " um\n\n";
    } else {
        absent.push_back("bdg");
    }

    // ---- sweep amplitudes (Fig. 2a-2c, 2e) ---------------------------------
    if (csv_fresh(out_path(cfg, "sweep.csv"), cfg)) {
        CsvTable sw = read_csv(out_path(cfg, "sweep.csv"));
        const auto w = sw.column("omega_meV");
        const auto r_hr = sw.column("R_HR");
        const auto t_down = sw.column("T_down");
        const auto t_dn = sw.column("T_dn");
        const auto a_in = sw.column("abs_in");
        const auto a_dns = sw.column("abs_dn_star");
        const auto a_downs = sw.column("abs_down_star");
        std::vector<double> x, y;

        LinePlot pa;
        pa.title = "Upstream response";
        pa.xlabel = "hbar*omega [meV]";
        pa.ylabel = "|a| / |in|";
        finite_xy(w, r_hr, x, y);
        pa.series.push_back(series_from(x, y, "|HR|/|in|"));
        add_fig("fig2a", render_line_plot(pa), "Fig. 2a: upstream reflection");

        auto ratio = [&](const std::vector<double>& num) {
            std::vector<double> out(num.size(), std::nan(""));
            for (size_t i = 0; i < num.size(); ++i)
                if (std::isfinite(num[i]) && std::isfinite(a_in[i]) && a_in[i] > 0)
                    out[i] = num[i] / a_in[i];
            return out;
        };

        for (int log_scale = 0; log_scale < 2; ++log_scale) {
            LinePlot pb;
            pb.title = "Downstream response";
            pb.xlabel = "hbar*omega [meV]";
            pb.ylabel = "|a| / |in|";
            pb.logy = log_scale == 1;
            finite_xy(w, t_down, x, y);
            pb.series.push_back(series_from(x, y, "|down|/|in|"));
            finite_xy(w, t_dn, x, y);
            pb.series.push_back(series_from(x, y, "|dn|/|in|"));
            finite_xy(w, ratio(a_dns), x, y);
            pb.series.push_back(series_from(x, y, "|dn*|/|in|"));
            finite_xy(w, ratio(a_downs), x, y);
            pb.series.push_back(series_from(x, y, "|down*|/|in|", "", true));
            if (qnm) pb.vlines.push_back({units::hbar * qnm->Omega_qnm, "Omega_qnm"});
            add_fig(log_scale ? "fig2b" : "fig2c", render_line_plot(pb),
                    log_scale ? "Fig. 2b: downstream channels (log)"
                              : "Fig. 2c: downstream channels");
        }

        // crossover: lowest window frequency from which |down| stays dominant
        double crossover = std::nan("");
        for (size_t i = 0; i < w.size(); ++i)
            if (std::isfinite(t_down[i]) && std::isfinite(r_hr[i]) &&
                t_down[i] > r_hr[i]) {
                crossover = w[i];
                break;
            }
        md << "## Scattering sweep\n\n";
        if (auto lo = sw.meta("omega_min_meV"))
            md << "- window: " << *lo << " .. " << sw.meta("omega_max_meV").value_or("?")
               << " meV\n";
        if (std::isfinite(crossover))
            md << "- |down| overtakes |HR| at hbar*omega = " << fmt1(crossover, "%.3f")
               << " meV\n";
        md << "\n";

        if (json_fresh(out_path(cfg, "fit.json"), cfg)) {
            std::ifstream in(out_path(cfg, "fit.json"));
            json j;
            in >> j;
            const double Om = j["Omega_qnm"], Ga = j["Gamma_qnm"];
            const std::complex<double> tbg(j["t_bg_re"], j["t_bg_im"]);
            const std::complex<double> alpha(j["alpha_re"], j["alpha_im"]);
            LinePlot pe;
            pe.title = "Resonant transmission into down";
            pe.xlabel = "hbar*omega [meV]";
            pe.ylabel = "|down| / |in|";
            finite_xy(w, t_down, x, y);
            PlotSeries data = series_from(x, y, "sweep");
            data.points = true;
            pe.series.push_back(std::move(data));
            PlotSeries curve;
            curve.label = "Breit-Wigner fit";
            curve.color = "#d62728";
            if (!x.empty()) {
                const double wlo = x.front() / units::hbar, whi = x.back() / units::hbar;
                for (int i = 0; i <= 400; ++i) {
                    const double wv = wlo + (whi - wlo) * i / 400.0;
                    const std::complex<double> t =
                        tbg + alpha / std::complex<double>(wv - Om, 0.5 * Ga);
                    curve.x.push_back(units::hbar * wv);
                    curve.y.push_back(std::abs(t));
                }
            }
            pe.series.push_back(std::move(curve));
            pe.vlines.push_back({units::hbar * Om, "Omega_fit"});
            add_fig("fig2e", render_line_plot(pe), "Fig. 2e: QNM resonance in T_down");

            md << "## Breit-Wigner fit\n\n";
            md << "- hbar*Omega = " << fmt1(units::hbar * Om, "%.4f") << " meV, Gamma = "
               << fmt1(Ga, "%.4f") << " 1/ps, residual "
               << fmt1(j.value("residual", 0.0), "%.3f") << "\n";
            if (qnm)
                md << "- offset from BdG eigenvalue: "
                   << fmt1(100.0 * std::abs(Om - qnm->Omega_qnm) / qnm->Omega_qnm, "%.2f")
                   << "%\n";
            md << "\n";
        } else {
            absent.push_back("fit");
        }
    } else {
        absent.push_back("sweep");
        if (!json_fresh(out_path(cfg, "fit.json"), cfg)) absent.push_back("fit");
    }

    if (!absent.empty()) {
        md << "## Absent stages\n\nNot yet run (or stale for this config):\n\n";
        for (const std::string& a : absent) md << "- `" << a << "`\n";
        md << "\n";
    }

    const std::string md_path = out_path(cfg, "report.md");
    atomic_write(md_path, md.str());
    res.outputs.push_back(md_path);
    std::ostringstream os;
    os << res.outputs.size() << " file(s); " << absent.size() << " absent stage(s)";
    res.summary = os.str();
    return res;
}

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names = {
        "steady", "bistability", "dispersion-map", "bdg", "sweep", "fit", "report"};
    return names;
}

StageResult run_stage(const std::string& name, const RunConfig& cfg,
                      const StageOptions& opt) {
    if (name == "steady") return stage_steady(cfg, opt);
    if (name == "bistability") return stage_bistability(cfg, opt);
    if (name == "dispersion-map") return stage_dispersion_map(cfg, opt);
    if (name == "bdg") return stage_bdg(cfg, opt);
    if (name == "sweep") return stage_sweep(cfg, opt);
    if (name == "fit") return stage_fit(cfg, opt);
    if (name == "report") return stage_report(cfg, opt);
    throw ValidationError("stage", "unknown stage '" + name + "'");
}

}  // namespace polsim
