// Bogoliubov-de Gennes spectrum of a converged background: assembly of the
// discretized Eq. (4) operator, full dense diagonalization with norm
// classification per the Eq. (7) scalar product, and quasinormal-mode
// selection among the zero-norm modes.
#pragma once

#include <complex>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "polsim/core_model.hpp"
#include "polsim/gpe_engine.hpp"

namespace polsim {

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

// Dense 2N x 2N discretization of Eq. (4) in the fluid gauge,
//
//   L = [[ A, B ], [ -conj(B), -conj(A) ]],
//   A = diag(-hbar delta_eff(v0) + 2 hbar g n0) + D,
//   B = diag(hbar g n0),
//   D = -(hbar^2/2m*) dxx - i hbar v0(x) dx - (i hbar/2) (dx v0)(x),
//
// with 4th-order central stencils and periodic closure. Entries are energies
// [meV]; eigenvalues are hbar*omega. The loss -i gamma/2 is factored out by
// the e^{-gamma t/2} ansatz (Eq. 3) and is *not* part of the matrix; total
// linewidths are reported by find_qnm with gamma added back. The absorbing
// margins of the time-domain runs are likewise absent, which reproduces the
// spurious low-frequency boundary modes of the periodic diagonalization.
struct BdgOperator {
    Eigen::MatrixXcd matrix;  // 2N x 2N [meV]
    SimGrid grid;
    PolaritonParams params;
    Eigen::ArrayXd n0;               // background density [1/um]
    Eigen::ArrayXd v0;               // background flow [um/ps]
    std::optional<double> horizon_x; // carried from the background [um]
};

enum class NormClass { positive, negative, zero };

struct BdgMode {
    std::complex<double> omega;  // eigenfrequency, gamma factored out [1/ps]
    Eigen::ArrayXcd u, v;        // spinor components on the grid
    double norm = 0;             // Eq. (7): integral(|u|^2 - |v|^2) dx
    double center_x = 0;         // weight centroid (circular mean) [um]
    double localization = 0;     // participation-ratio position spread [um]
    NormClass classification = NormClass::zero;
    int pair_index = -1;         // partner under (omega, -conj(omega))
};

const char* to_string(NormClass c);

// Quasinormal-mode record. Two linewidth conventions are reported because
// the eigenproblem is solved with gamma factored out: gamma_radiative is the
// leakage alone (-2 Im omega), Gamma_qnm adds the intrinsic loss back.
struct QnmEstimate {
    double Omega_qnm = 0;         // Re omega [1/ps]
    double Gamma_qnm = 0;         // -2 Im omega + gamma [1/ps]
    double gamma_radiative = 0;   // -2 Im omega [1/ps]
    double Q = 0;                 // Omega_qnm / Gamma_qnm
    BdgMode mode;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// Assembles the Eq. (4) operator on the background's grid. Only n0 and v0
// enter: the gauge transformation that removes the condensate phase is what
// produces the -i hbar v0 dx - (i hbar/2) dx v0 terms of D, so the off-
// diagonal blocks are real. dx v0 is evaluated with the same 4th-order
// periodic stencil as D itself.
BdgOperator assemble_bdg(const BackgroundState& bg);

// Full dense non-Hermitian eigendecomposition (LAPACK zgeev). Modes are
// normalized to integral(|u|^2 + |v|^2) dx = 1, sorted by Re omega, paired
// under (omega, -conj(omega)), and classified: zero iff |norm| < zero_tol
// (relative to the unit total weight). Throws EigenFailure if the QR
// iteration does not converge.
std::vector<BdgMode> diagonalize(const BdgOperator& op, double zero_tol = 1e-3);

// Selects the quasinormal mode among eigenmodes with Re omega inside
// `window` (typically (omega_max, a cutoff)) whose weight centroid lies
// within loc_radius of the horizon; distances are taken on the periodic
// domain. The window lower edge at omega_max removes the low-frequency
// zero-norm ladder (delocalized box/boundary artefacts, which sit below
// omega_max and whose circular-mean centroids are not meaningful locations).
//
// On a finite periodic domain the leaky resonance appears in one of two
// ways, and both are accepted:
//  - as a decaying (Im omega < 0) zero-norm eigenmode, when the trapped
//    negative-norm core lies in exact resonance with a discrete propagating
//    level and hybridizes into a complex-conjugate doublet (the growing
//    partner is the time-reversed incoming solution and is excluded);
//  - as an unpaired real-frequency negative-norm localized mode, when the
//    discrete levels miss the resonance. The radiative width is then below
//    the level-spacing resolution and gamma_radiative reports 0; the lowest
//    such level is the fundamental, and a second candidate within 15% of it
//    makes the selection ambiguous.
// Throws NoQnmFound when no candidate survives and MultipleQnmCandidates
// (message lists every survivor) when the window is ambiguous.
QnmEstimate find_qnm(const std::vector<BdgMode>& modes,
                     std::pair<double, double> window,  // [1/ps]
                     double horizon_x, const SimGrid& grid,
                     const PolaritonParams& params, double loc_radius = 30.0);

// Effective wavenumbers of the 4th-order stencils at grid wavenumber k:
// first derivative acts as i*k1_eff, second as -k2_eff^2. Exposed so tests
// and LDA overlays can compare matrix eigenvalues against Eq. (5) without
// re-deriving the symbols.
double stencil_k1_eff(double k, double dx);
double stencil_k2_eff(double k, double dx);

}  // namespace polsim
