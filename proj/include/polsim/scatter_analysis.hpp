// Frequency-resolved probe spectroscopy: windowed space-time Fourier maps of
// recorded fluctuation histories, per-channel amplitude extraction against
// the channel kinematics, probe-sweep orchestration, the Breit-Wigner
// resonance fit, and the gamma -> 0 flux-balance diagnostic.
#pragma once

#include <complex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "polsim/core_model.hpp"
#include "polsim/gpe_engine.hpp"

namespace polsim {

// ---------------------------------------------------------------------------
// Windowed space-time spectra
// ---------------------------------------------------------------------------

// 2D discrete spectrum |A(k, omega)| of delta psi over a spatial region and
// the full recorded span, Hann-windowed along both axes. Conventions: a
// plane wave e^{i(k x - omega t)} peaks at (+k, +omega); complex
// coefficients keep the window's own phase reference (x measured from the
// region's left edge). Coefficients are divided by `normalization` = the
// coherent window gains times the probe amplitude, so an on-bin plane wave
// of one probe-amplitude unit has amplitude 1.
//
// delta psi rides on the condensate carrier e^{i k_pump x}, so in the raw
// lab spectrum a Bogoliubov doublet (u, v) at fluid-gauge wavevector k shows
// up at (k_pump + k, +omega) and (k_pump - k, -omega). Passing the side's
// pump wavevector as `carrier_k` demodulates that carrier, putting the u
// trace at (+k, +omega) and the v trace at (-k, -omega) where the channel
// extraction expects them.
struct SpectrumMap {
    Side region = Side::upstream;
    std::pair<double, double> bounds{0, 0};  // [um]
    double carrier_k = 0;                    // demodulated pump wavevector [1/um]
    Eigen::ArrayXd k_axis;                   // ascending [1/um]
    Eigen::ArrayXd omega_axis;               // ascending [1/ps]
    Eigen::MatrixXcd coeffs;                 // rows = omega bins, cols = k bins
    Eigen::MatrixXd amplitude;               // |coeffs|
    double normalization = 1;                // exact divisor applied to the DFT
    // |window DFT at +-1 bin| / |at 0|: the Hann main-lobe shoulder (display
    // diagnostics; channel extraction uses the exact window kernel instead)
    double lobe_ratio_k = 0.5;
    double lobe_ratio_omega = 0.5;
    // window geometry, needed to evaluate the exact finite-window kernel of
    // a plane-wave trace during channel extraction
    double dx = 0;      // grid spacing [um]
    double dt = 0;      // frame spacing [ps]
    double x_left = 0;  // absolute coordinate of the first window sample [um]

    double dk() const { return k_axis.size() > 1 ? k_axis[1] - k_axis[0] : 0; }
    double domega() const {
        return omega_axis.size() > 1 ? omega_axis[1] - omega_axis[0] : 0;
    }
};

// Hann-windowed 2D FFT of history.frames restricted to x in region_bounds,
// after removing the condensate carrier e^{i carrier_k x}. Throws
// RegionTooNarrow when the region holds fewer than 64 grid points.
SpectrumMap windowed_spectrum(const FieldHistory& history,
                              std::pair<double, double> region_bounds, Side region,
                              double carrier_k = 0.0);

// ---------------------------------------------------------------------------
// Channel amplitudes
// ---------------------------------------------------------------------------

// One extracted (or kinematically absent) trace. Direct traces live at
// (+k_ch, +omega_pr), conjugate traces (the v component of the Bogoliubov
// doublet) at (-k_ch, -omega_pr).
struct ChannelRecord {
    ChannelLabel label = ChannelLabel::in;
    bool conjugate = false;
    bool present = false;   // open at this omega and extracted
    std::complex<double> amplitude{};  // fitted complex trace amplitude
    double abs_amplitude = 0;          // |amplitude|
    double k_channel = 0;              // nominal wavevector [1/um]
    double k_measured = 0;             // refined peak location [1/um]
};

struct ChannelAmplitudes {
    double omega_pr = 0;  // [1/ps]
    // window metadata (resolutions of the maps the records came from)
    double dk_up = 0, domega_up = 0, dk_down = 0, domega_down = 0;
    std::vector<ChannelRecord> records;

    const ChannelRecord* find(ChannelLabel label, bool conjugate = false) const;
    // |amplitude| of a present record; 0 with present=false semantics is not
    // conflated: absent channels simply have no usable magnitude
    double abs_of(ChannelLabel label, bool conjugate = false) const;
};

// Extracts the direct (u) and conjugate (v) traces of every channel of
// `channels` living on map.region. Channels closed at this omega produce
// present=false records.
//
// Amplitudes come from a matched least-squares fit: the windowed DFT of a
// plane-wave trace is an exact, known kernel, so the coefficients on a patch
// around the expected peaks are modeled as a linear superposition of the
// kernels of all open channels and solved for the complex amplitudes. This
// separates channels whose wavevectors sit within a window main lobe of each
// other (near the downstream dispersion fold the down/dn traces crowd into
// neighboring bins), where a naive per-peak readout would blend them. At the
// fold itself the two columns degenerate and the SVD splits the hybridized
// amplitude between them.
//
// With losses each trace decays spatially along its propagation direction
// (decay length 2 v_g / gamma on a uniform plateau), which broadens its line
// beyond the bare window kernel; the fit therefore uses the complex
// wavevector k + i gamma / (2 v_g). Reported amplitudes are rescaled to the
// Hann-window average of the decaying envelope, i.e. to the value a windowed
// readout of the isolated line would see, so magnitudes stay comparable with
// plain windowed spectra and reduce to the plane-wave result at gamma = 0.
//
// Throws ChannelOffGrid when omega_pr or a channel wavevector falls outside
// the map axes. Results append into `out` (call once per region map).
void extract_channel_amplitudes(const SpectrumMap& map, const ChannelSet& channels,
                                double omega_pr, double gamma, ChannelAmplitudes& out);

// ---------------------------------------------------------------------------
// Probe sweeps
// ---------------------------------------------------------------------------

struct ProbeSpec {
    double center = 0;     // [um]; 0 = horizon - 100, clamped off the absorber
    double width = 12.0;   // Gaussian envelope width [um]
    double amplitude = 0;  // hbar*F [meV um^-1/2]; 0 = 1e-3 * pump F_up
    double ramp_time = 30.0;     // [ps]
    double relax_time = 150.0;   // [ps]
    double record_time = 200.0;  // [ps]
    double record_stride = 2.0;  // [ps]
};

struct SweepOptions {
    // analysis regions; {0,0} = the full regions (upstream between absorber
    // and pump switch, downstream between defect dip and absorber), so
    // amplitudes are region-window Hann averages of each trace
    std::pair<double, double> up_bounds{0, 0};
    std::pair<double, double> down_bounds{0, 0};
    int workers = 1;
    // downstream kinematics override for backgrounds without a valid
    // downstream plateau (no-support runs use the supported companion's)
    std::optional<LocalHydro> down_hydro;
    // gamma -> 0 verification mode: runs the linearized engine with the loss
    // removed instead of the full GPE
    bool linearized_lossless = false;
};

// One frequency slice; failed runs become gap records, never abort the sweep.
struct SweepPoint {
    double omega_pr = 0;  // [1/ps]
    bool gap = false;
    std::string gap_reason;
    FrequencyRegime regime = FrequencyRegime::hawking_window;
    ChannelAmplitudes amplitudes;
};

struct ScatterSweepResult {
    std::vector<SweepPoint> points;  // strictly increasing omega_pr
    FrequencyWindow window;          // [1/ps]
    // spectra normalized to the extracted |in| amplitude; NaN on gaps and
    // kinematically closed channels
    std::vector<double> T_down, R_HR, T_dn;
};

// omega_pr grid: `base_points` linear samples from max(1.05 omega_min,
// floor) to cutoff_factor * omega_qnm_expected, densified x3 within +-5
// half-linewidths (gamma/2) of the expected resonance.
std::vector<double> sweep_omega_grid(const FrequencyWindow& window,
                                     double omega_qnm_expected, double gamma,
                                     int base_points = 60, double cutoff_factor = 1.5,
                                     double floor = 0.0608);

// For each omega: solves the probe carrier from the `in` channel, runs the
// probed background (or the linearized lossless variant), Fourier-analyzes
// both regions, and extracts channel amplitudes. Points run independently
// on `workers` threads; any polsim::Error inside a slice is recorded as a
// gap with the error message as reason.
ScatterSweepResult run_sweep(const BackgroundState& bg,
                             const std::vector<double>& omega_grid,
                             const ProbeSpec& probe, const SweepOptions& opts = {});

// ---------------------------------------------------------------------------
// Breit-Wigner fit
// ---------------------------------------------------------------------------

// t(omega) ~ t_bg + alpha / (omega - Omega_qnm + i Gamma_qnm/2), fitted by
// Levenberg-Marquardt. Magnitude-only data fits |t|^2 with arg(t_bg) fixed
// to 0 (a global phase is unobservable in |t|).
struct BreitWignerFit {
    double Omega_qnm = 0;  // [1/ps]
    double Gamma_qnm = 0;  // [1/ps], > 0
    std::complex<double> t_bg{};
    std::complex<double> alpha{};
    double residual = 0;  // rms misfit / rms data over the fitted band
    Eigen::VectorXd covariance_diag;  // per-parameter variance estimates
    bool magnitude_only = true;
    // pi-phase slip of t - t_bg across the resonance, evaluated on the data
    // when phases exist, else on the fitted model
    bool phase_slip_pi = false;
    int n_points = 0;
};

// Magnitude-only fit (|t| samples). Throws FitDiverged, PeakNotResolved.
BreitWignerFit breit_wigner_fit(const Eigen::ArrayXd& omega, const Eigen::ArrayXd& t_abs);
// Complex fit; also verifies the phase slip on the data.
BreitWignerFit breit_wigner_fit(const Eigen::ArrayXd& omega, const Eigen::ArrayXcd& t);

// ---------------------------------------------------------------------------
// Flux balance (pseudo-unitarity diagnostic)
// ---------------------------------------------------------------------------

// Norm-flux bookkeeping for one frequency slice: converts channel field
// amplitudes into Bogoliubov mode amplitudes |b| through the plateau (u, v)
// weights, then compares influx |b_in|^2 |v_g| against the signed outflux
// sum over open outgoing channels (negative-norm dn counts negative).
// Pseudo-unitarity (Eq. 8 structure) makes outflux = influx exactly only at
// gamma = 0; with losses the report carries a crude decay budget instead.
struct EnergyBalance {
    double influx = 0;
    double outflux = 0;    // signed sum over outgoing channels
    double imbalance = 0;  // (outflux - influx) / influx
    double loss_fraction = 0;  // e^{-gamma tau} transit estimate, 0 at gamma = 0
    std::vector<std::pair<ChannelLabel, double>> contributions;  // signed fluxes
};

EnergyBalance energy_balance_check(const ChannelAmplitudes& amps,
                                   const ChannelSet& channels, const LocalHydro& up_hydro,
                                   const LocalHydro& down_hydro, double gamma);

}  // namespace polsim
