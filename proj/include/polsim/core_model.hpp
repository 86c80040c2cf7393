#pragma once

// Analytic mean-field and linear-response formulas for the driven-dissipative
// polariton fluid: equation of state, bistability, local hydrodynamics,
// lab-frame Bogoliubov dispersion, channel kinematics, and the acoustic
// metric. No time evolution and no spatial discretization live here.

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "polsim/errors.hpp"
#include "polsim/units.hpp"

namespace polsim {

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

// Physical constants of the polariton fluid plus the pump frequency.
// Constructed from laboratory units; accessors return internal units
// (um, ps, meV; see units.hpp).
struct PolaritonParams {
    double m_star = 0;         // effective mass [kg]
    double hbar_omega0 = 0;    // bottom of the polariton dispersion [meV]
    double hbar_gamma = 0;     // loss rate energy [ueV]
    double hbar_g = 0;         // interaction constant [meV*um]
    double hbar_omega_p = 0;   // pump energy [meV]

    // Internal-unit accessors.
    double mass() const { return units::mass_from_kg(m_star); }          // [meV*ps^2/um^2]
    double omega0() const { return units::meV_to_rad_per_ps(hbar_omega0); }   // [1/ps]
    double gamma() const { return units::ueV_to_rad_per_ps(hbar_gamma); }     // [1/ps]
    double g() const { return units::meV_to_rad_per_ps(hbar_g); }             // [um/ps]
    double omega_p() const { return units::meV_to_rad_per_ps(hbar_omega_p); } // [1/ps]

    // Bare pump detuning omega_p - omega0 [1/ps] (before the flow Doppler term).
    double delta0() const { return omega_p() - omega0(); }

    // Effective detuning for a fluid moving at v0 [1/ps]:
    //   delta_eff = omega_p - omega0 - m* v0^2 / (2 hbar)
    double delta_eff(double v0) const { return delta0() - mass() * v0 * v0 / (2.0 * units::hbar); }

    // Throws ValidationError if any invariant is violated.
    void validate() const;
};

// Structured pump: plane-wave drive with wavevector k_up left of x_switch and
// k_down right of it. Amplitudes are hbar*F in meV*um^(-1/2); F_down = 0
// encodes the "no downstream support" variant.
struct PumpProfile {
    double k_up = 0;      // [1/um]
    double k_down = 0;    // [1/um]
    double x_switch = 0;  // [um]
    double F_up = 0;      // [meV*um^-1/2]
    double F_down = 0;    // [meV*um^-1/2]
    double omega_p = 0;   // [1/ps] (duplicated from PolaritonParams for self-containment)

    void validate() const;
};

// Attractive Gaussian defect V(x) = depth * exp(-(x - center)^2 / (2 width^2)).
struct DefectPotential {
    double depth = 0;   // [meV], negative = attractive
    double width = 0;   // Gaussian sigma [um]
    double center = 0;  // x_d [um]

    double value(double x) const;  // [meV]
    void validate() const;
};

// ---------------------------------------------------------------------------
// Local hydrodynamics
// ---------------------------------------------------------------------------

// Homogeneous (or locally homogeneous) fluid patch: density, flow velocity,
// effective detuning, Bogoliubov sound speed and detuning mass. m_det is kept
// in internal mass units; m_det_kg() converts.
struct LocalHydro {
    double n0 = 0;         // density [1/um]
    double v0 = 0;         // flow velocity [um/ps]
    double delta_eff = 0;  // [1/ps]
    double c_B = 0;        // sound speed [um/ps]
    double m_det = 0;      // detuning mass [meV*ps^2/um^2]; 0 when gap2 <= 0
    double m_star = 0;     // polariton mass, carried along for Eq. (5) [meV*ps^2/um^2]
    // Signed rest-gap squared (g n0 - d)(3 g n0 - d) [1/ps^2]. Equals
    // (c_B^2 m_det/hbar)^2 when non-negative; slightly negative on plateaus
    // pumped just above the fold, where a loss-stabilized diffusive sliver
    // replaces the gap at |k| < sqrt(-gap2)/c_B.
    double gap2 = 0;

    double m_det_kg() const { return units::mass_to_kg(m_det); }

    // Rest gap omega(k=0) = sqrt((g n0 - d)(3 g n0 - d)) [1/ps]; 0 in the sliver.
    double gap() const;
};

// Painleve-Gullstrand acoustic metric coefficients (overall conformal factor
// dropped): ds^2 = (c_B^2 - v0^2) dt^2 - 2 v0 dt dx - dx^2.
struct MetricCoefficients {
    double g_tt = 0;  // c_B^2 - v0^2 [um^2/ps^2]
    double g_tx = 0;  // -v0 [um/ps]
    double g_xx = 0;  // -1 [dimensionless]
};

// ---------------------------------------------------------------------------
// Channel bookkeeping
// ---------------------------------------------------------------------------

enum class Side { upstream, downstream };
enum class Direction { incoming, outgoing };
enum class FrequencyRegime { below_window, hawking_window, above_window };

// Asymptotic scattering channels, named as in the horizon problem:
// upstream carries in (incident) and HR (Hawking-reflected); downstream
// carries p, d (incoming) and down, dn (outgoing), dn being the
// negative-norm partner.
enum class ChannelLabel { in, p, d, HR, down, dn };

std::string to_string(ChannelLabel label);
std::string to_string(Side side);
std::string to_string(Direction dir);
std::string to_string(FrequencyRegime regime);

struct Channel {
    ChannelLabel label;
    double k = 0;               // real root of the dispersion [1/um]
    int norm_sign = +1;         // Bogoliubov norm branch: +1 or -1
    double group_velocity = 0;  // lab-frame d omega/dk [um/ps]
    Side side = Side::upstream;
    Direction direction = Direction::incoming;
};

// Roots with |group velocity| below the tie-break threshold carry no flux
// direction; they are reported separately as band-edge markers.
struct BandEdgeMarker {
    double k = 0;
    Side side = Side::upstream;
};

struct ChannelSet {
    double omega = 0;  // probe frequency [1/ps]
    std::vector<Channel> channels;
    std::vector<BandEdgeMarker> band_edges;
    FrequencyRegime regime = FrequencyRegime::hawking_window;

    // nullptr when the channel is kinematically closed at this omega.
    const Channel* find(ChannelLabel label) const;
    // Throws NoPropagatingChannel when closed.
    const Channel& require(ChannelLabel label) const;

    int count(Direction dir) const;
};

struct FrequencyWindow {
    double omega_min = 0;  // upstream gap [1/ps]
    double omega_max = 0;  // max_k of the downstream Doppler-shifted omega_- branch [1/ps]
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// All real non-negative density roots of the equation of state
//   n0 [ (g n0 - delta_eff)^2 + gamma^2/4 ] = |F_p|^2 / hbar^2,
// sorted ascending; one or three (a double root at a turning point is
// reported once). F_p is hbar*F in meV*um^(-1/2); F_p = 0 gives {0}.
std::vector<double> equation_of_state_roots(double F_p, double v0, const PolaritonParams& params);

struct TurningPoint {
    double n0 = 0;               // density at the fold [1/um]
    double drive_intensity = 0;  // |F_p|^2/hbar^2 at the fold [1/(um*ps^2)]
};

// The two folds of the bistable S-curve, (lower density, higher density),
// or nullopt when delta_eff/gamma < sqrt(3)/2. At exact criticality the
// single degenerate point is returned twice (API continuity).
std::optional<std::pair<TurningPoint, TurningPoint>> bistability_turning_points(
    double v0, const PolaritonParams& params);

// Local Bogoliubov hydrodynamics per Eq. (6):
//   c_B   = sqrt(hbar (2 g n0 - delta_eff) / m*)
//   m_det = m* sqrt((g n0 - delta_eff)(3 g n0 - delta_eff)) / (2 g n0 - delta_eff)
// Throws GappedRegionError when a radicand is negative.
LocalHydro local_hydro(double n0, double v0, const PolaritonParams& params);

// Same, but tolerates the near-fold regime of driven plateaus: a negative
// m_det radicand is accepted (kept signed in gap2, with m_det = 0) as long as
// the resulting imaginary gap sqrt(-gap2) stays below 0.75*gamma -- the
// sliver that the loss term stabilizes (instability requires |gap| > gamma/2).
// Tiny negative c_B radicands within clamp_tol are treated as roundoff.
LocalHydro local_hydro_clamped(double n0, double v0, const PolaritonParams& params,
                               double clamp_tol = 1e-3);

// Lab-frame dispersion, Eq. (5) with the dimensionally consistent rest-gap
// term M^2 = c_B^4 m_det^2 / hbar^2 = hydro.gap2 (kept signed, so the
// near-fold sliver is represented exactly):
//   omega_pm(k) = v0 k +- sqrt((hbar k^2/2m*)^2 + c_B^2 k^2 + M^2)
// Returns (omega_plus, omega_minus) [1/ps]. Inside an evanescent band
// (radicand < 0, only possible when gap2 < 0) both entries equal v0*k.
std::pair<double, double> dispersion_lab_frame(double k, const LocalHydro& hydro);

// Equivalent dispersion evaluated directly from (n0, v0) without forming
// c_B/m_det, valid also in gapped/gapless corners where Eq. (6) degenerates:
//   omega_pm = v0 k +- sqrt((E_k + 2 g n0 - delta)^2 - (g n0)^2),  E_k = hbar k^2/2m*.
// The radicand can be negative (evanescent band); then the pair is
// (v0 k, v0 k) and *propagating* is set false.
struct DispersionPoint {
    double omega_plus = 0;
    double omega_minus = 0;
    bool propagating = true;
};
DispersionPoint dispersion_from_state(double k, double n0, double v0,
                                      const PolaritonParams& params);

// Lab-frame group velocity d omega/dk on branch +1/-1 [um/ps].
double group_velocity(double k, int branch, const LocalHydro& hydro);

// Copy of the hydro with gap2 clamped to >= 0: the gapless-limit reading of a
// sliver plateau. Channel kinematics (channel_map, frequency_window) use this
// idealization -- the sliver modifies the dispersion only for
// |k| < sqrt(-gap2)/c_B (of order one analysis bin), where modes are
// loss-dominated and carry no well-defined flux direction anyway.
LocalHydro propagating_idealization(const LocalHydro& hydro);

// Bogoliubov coefficients of the plane-wave mode at (k, branch) on a
// homogeneous background: |u|^2 - |v|^2 = +1 on the positive-norm branch.
// Used to convert field amplitudes into quasiparticle flux weights.
struct ModeWeights {
    double u = 0;
    double v = 0;
};
ModeWeights bogoliubov_weights(double k, int branch, const LocalHydro& hydro);

// All propagating channels at omega for the two asymptotic regions.
// Roots come from companion-matrix solves of the quartic in k per norm
// branch; spurious roots of the squared equation are filtered against
// Eq. (5) and near-zero group velocities become band-edge markers.
ChannelSet channel_map(double omega, const LocalHydro& upstream_hydro,
                       const LocalHydro& downstream_hydro);

// (omega_min, omega_max) of the Hawking window. Throws NotTranscritical when
// the downstream side is subsonic (omega_max <= 0).
FrequencyWindow frequency_window(const LocalHydro& upstream_hydro,
                                 const LocalHydro& downstream_hydro);

MetricCoefficients metric_at(const LocalHydro& hydro);

// ---------------------------------------------------------------------------
// Pump calibration helpers
// ---------------------------------------------------------------------------

// |F_p|^2/hbar^2 at the upper turning point (fold to the upper branch) for a
// fluid locked to wavevector k (v0 = hbar k / m*). Throws NotTranscritical
// never; throws Error when not bistable.
double turning_point_intensity(double v0, const PolaritonParams& params);

// hbar*F whose drive intensity sits (1 + offset) above the upper turning
// point; offset is fractional (0.0008 = 0.08%).
double amplitude_above_turning_point(double v0, const PolaritonParams& params, double offset);

// Density on the upper branch at the given drive amplitude (largest EOS root).
double upper_branch_density(double F_p, double v0, const PolaritonParams& params);

struct SupportCalibration {
    double F = 0;                 // hbar*F [meV*um^-1/2]
    double intensity_offset = 0;  // fractional offset above the turning point
    double n0 = 0;                // resulting upper-branch density [1/um]
    double c_B = 0;               // resulting sound speed [um/ps]
};

// Chooses F_down so the downstream plateau's sound speed approaches c_target
// while staying at least min_offset above the fold (stability margin). When
// c_target lies below the sound speed at the fold, the calibration clamps to
// min_offset and reports the achieved c_B.
SupportCalibration calibrate_downstream_support(double v0, const PolaritonParams& params,
                                                double c_target, double min_offset = 2e-3);

}  // namespace polsim
