// Declarative run configuration: a flat INI-style document (sections of
// key = value lines) describing one simulation target end to end. Every
// pipeline stage receives the same RunConfig; artifacts embed its hash so
// stage composition can detect stale inputs.
#pragma once

#include <cstdint>
#include <string>

#include "polsim/core_model.hpp"
#include "polsim/gpe_engine.hpp"
#include "polsim/scatter_analysis.hpp"

namespace polsim {

// [sweep]: probe-frequency grid and execution knobs.
struct SweepConfig {
    int base_points = 60;        // linear grid size before densification
    double cutoff_factor = 1.5;  // grid top = cutoff * expected QNM frequency
    double floor_meV = 0.04;     // lowest probed hbar*omega [meV]
    double qnm_guess_meV = 0;    // 0 = read the bdg stage's QNM report
    int workers = 1;             // execution detail: excluded from the hash
    bool lossless = false;  // gamma -> 0 check mode (linearized, loss off)
    // Downstream hydrodynamics override for no-support runs, where the
    // accelerating downstream flow has no plateau of its own: channel
    // kinematics are borrowed from the supported companion configuration.
    // Both 0 = use the background's own downstream plateau.
    double down_n0 = 0;  // [1/um]
    double down_v0 = 0;  // [um/ps]
};

// [analysis]: steady-state controls, noise-run controls, and the window /
// tolerance knobs of the spectral stages.
struct AnalysisConfig {
    double steady_tol = 1e-6;      // relative residual [1/ps]
    double steady_t_max = 2500.0;  // [ps]
    double absorb_margin = 40.0;   // [um]
    double noise_amplitude = 1e-4;   // noise drive, relative to sqrt(n0 upstream)
    double noise_duration = 400.0;   // recorded span [ps]
    double noise_stride = 0.5;       // record stride [ps]
    double zero_tol = 1e-3;          // BdG zero-norm classification
    double qnm_window_factor = 2.5;  // QNM search window top / omega_max
    double qnm_lo_meV = 0;           // QNM window bottom override [meV];
                                     // 0 = the plateau window's omega_max
    double loc_radius = 30.0;        // QNM centroid-to-horizon radius [um]
    // analysis region overrides [um]; 0,0 = derived from the background
    double up_lo = 0, up_hi = 0;
    double down_lo = 0, down_hi = 0;
};

struct RunConfig {
    PolaritonParams params;
    SimGrid grid;         // grid.dt = 0 requests the stable default
    PumpProfile pump;     // F_up/F_down = 0 request calibration (see below)
    DefectPotential defect;
    bool has_defect = false;

    // pump calibration inputs (used when the F fields are 0)
    double intensity_offset = 8e-4;  // F_up: fraction above the upper fold
    double c_target = 0.81;          // F_down: downstream sound speed [um/ps]
    double min_offset = 2e-3;        // F_down: minimum fold clearance
    bool supported = true;           // false = F_down forced to 0 (no support)

    bool has_probe = false;
    ProbeSpec probe;              // probe.amplitude = 0 -> rel_amplitude * F_up
    double probe_rel_amplitude = 1e-3;

    SweepConfig sweep;
    AnalysisConfig analysis;

    std::uint64_t seed = 12345;
    std::string out_dir = "out";

    std::string origin;       // path the config was loaded from ("" = inline)
    std::string source_text;  // verbatim document, embedded in artifacts

    // FNV-1a 64 over the canonical key=value listing (all fields, fixed
    // order, %.17g floats): stable across platforms and key reordering.
    std::uint64_t hash() const;
    // The canonical listing itself ("section.key = value" lines).
    std::string canonical_listing() const;
};

// Parses and validates a config document. Unknown sections or keys, type
// mismatches, and constraint violations are errors: a config either means
// exactly what it says or refuses to load. ParseError carries line/column;
// ValidationError names the field and the violated constraint.
RunConfig parse_config(const std::string& text, const std::string& origin = "");

// parse_config over the file's contents. Throws Error when unreadable.
RunConfig load_config(const std::string& path);

}  // namespace polsim
