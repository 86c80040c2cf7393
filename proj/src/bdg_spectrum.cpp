#include "polsim/bdg_spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#define lapack_complex_float std::complex<float>
#define lapack_complex_double std::complex<double>
#include <lapacke.h>

#include "polsim/errors.hpp"
#include "polsim/units.hpp"

namespace polsim {

namespace {

using cd = std::complex<double>;

// 4th-order central stencils, offsets -2..+2 (divide by dx resp. dx^2)
constexpr double kD1[5] = {1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0};
constexpr double kD2[5] = {-1.0 / 12.0, 4.0 / 3.0, -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0};

// shortest signed distance on the periodic domain
double periodic_distance(double a, double b, double length) {
    double d = std::fmod(a - b, length);
    if (d > 0.5 * length) d -= length;
    if (d < -0.5 * length) d += length;
    return std::abs(d);
}

}  // namespace

const char* to_string(NormClass c) {
    switch (c) {
        case NormClass::positive: return "positive";
        case NormClass::negative: return "negative";
        case NormClass::zero: return "zero";
    }
    return "?";
}

double stencil_k1_eff(double k, double dx) {
    double t = k * dx;
    return (8.0 * std::sin(t) - std::sin(2.0 * t)) / (6.0 * dx);
}

double stencil_k2_eff(double k, double dx) {
    // 5/2 - (8/3)cos t + (1/6)cos 2t = (2/3) sin^2(t/2) (7 - cos t), exactly;
    // the factored form avoids the cancellation at t -> 0 and is manifestly
    // non-negative.
    double t = k * dx;
    double s = std::sin(0.5 * t);
    return std::abs(s) * std::sqrt((2.0 / 3.0) * (7.0 - std::cos(t))) / dx;
}

BdgOperator assemble_bdg(const BackgroundState& bg) {
    const SimGrid& grid = bg.grid;
    grid.validate(bg.params);
    const int n = grid.n_points;
    if (bg.n0.size() != n || bg.v0.size() != n)
        throw ValidationError("background", "n0/v0 profiles do not match the grid");

    const PolaritonParams& p = bg.params;
    const double dx = grid.dx();
    const double kin = -units::hbar * units::hbar / (2.0 * p.mass());  // [meV um^2]

    BdgOperator op;
    op.grid = grid;
    op.params = p;
    op.n0 = bg.n0;
    op.v0 = bg.v0;
    op.horizon_x = bg.horizon_x;
    op.matrix = Eigen::MatrixXcd::Zero(2 * n, 2 * n);
    Eigen::MatrixXcd& m = op.matrix;

    // The two advection pieces of D combine into the symmetrized product
    //   -i hbar v0 dx - (i hbar/2)(dx v0) = -(i hbar/2)(v0 D1 + D1 v0),
    // which we discretize as written: A_adv(i,j) = -(i hbar/2)(v0_i + v0_j) D1(i,j).
    // With D1 exactly antisymmetric this keeps eta*L Hermitian (eta = diag(I,-I))
    // at the matrix level, so the Eq. (7) norm identity (omega - omega*)<phi|phi> = 0
    // holds to roundoff: complex (quasinormal) modes come out with exactly zero
    // norm instead of an O(dx^2) residual, and complex eigenvalues appear in
    // conjugate pairs (the decaying member is the outgoing QNM).
    for (int i = 0; i < n; ++i) {
        double gn = p.hbar_g * bg.n0[i];                          // hbar g n0 [meV]
        double diag_re = -units::hbar * p.delta_eff(bg.v0[i]) + 2.0 * gn;
        for (int off = -2; off <= 2; ++off) {
            int j = (i + off + n) % n;
            cd a(kin * kD2[off + 2] / (dx * dx),
                 -0.5 * units::hbar * (bg.v0[i] + bg.v0[j]) * kD1[off + 2] / dx);
            if (off == 0) a += cd(diag_re, 0.0);
            m(i, j) += a;
            m(n + i, n + j) -= std::conj(a);
        }
        m(i, n + i) = cd(gn, 0);
        m(n + i, i) = cd(-gn, 0);
    }
    return op;
}

std::vector<BdgMode> diagonalize(const BdgOperator& op, double zero_tol) {
    const int n = op.grid.n_points;
    const int n2 = 2 * n;
    const double dx = op.grid.dx();
    const double length = op.grid.length;

    Eigen::MatrixXcd a = op.matrix;  // zgeev overwrites its input
    Eigen::VectorXcd w(n2);
    Eigen::MatrixXcd vr(n2, n2);
    int info = LAPACKE_zgeev(LAPACK_COL_MAJOR, 'N', 'V', n2, a.data(), n2,
                             w.data(), nullptr, 1, vr.data(), n2);
    if (info != 0) {
        std::ostringstream msg;
        msg << "zgeev failed with info = " << info << " (size " << n2 << ")";
        throw EigenFailure(msg.str());
    }
    a.resize(0, 0);

    Eigen::ArrayXd x = op.grid.x();
    std::vector<BdgMode> modes(n2);
    for (int j = 0; j < n2; ++j) {
        BdgMode& md = modes[j];
        md.omega = w[j] / units::hbar;
        md.u = vr.col(j).head(n).array();
        md.v = vr.col(j).tail(n).array();

        Eigen::ArrayXd weight = md.u.abs2() + md.v.abs2();
        double total = weight.sum() * dx;
        double scale = 1.0 / std::sqrt(total);
        md.u *= scale;
        md.v *= scale;
        weight *= (scale * scale);

        md.norm = (md.u.abs2() - md.v.abs2()).sum() * dx;
        md.classification = std::abs(md.norm) < zero_tol
                                ? NormClass::zero
                                : (md.norm > 0 ? NormClass::positive : NormClass::negative);

        // centroid as a circular mean (the domain is periodic), spread as the
        // participation-ratio length (integral w)^2 / integral w^2
        cd ring(0, 0);
        for (int i = 0; i < n; ++i) {
            double th = 2.0 * M_PI * (x[i] - op.grid.x0) / length;
            ring += weight[i] * cd(std::cos(th), std::sin(th));
        }
        double ang = std::arg(ring);
        if (ang < 0) ang += 2.0 * M_PI;
        md.center_x = op.grid.x0 + ang / (2.0 * M_PI) * length;
        double w2 = (weight * weight).sum();
        md.localization = (weight.sum() * weight.sum()) / w2 * dx;
    }
    vr.resize(0, 0);

    std::vector<int> order(n2);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int i, int j) {
        if (modes[i].omega.real() != modes[j].omega.real())
            return modes[i].omega.real() < modes[j].omega.real();
        return modes[i].omega.imag() < modes[j].omega.imag();
    });
    std::vector<BdgMode> sorted(n2);
    for (int j = 0; j < n2; ++j) sorted[j] = std::move(modes[order[j]]);

    // particle-hole pairing: match omega_i with the closest -conj(omega_j)
    std::vector<bool> used(n2, false);
    for (int i = 0; i < n2; ++i) {
        if (used[i]) continue;
        cd target = -std::conj(sorted[i].omega);
        int best = -1;
        double best_d = 0;
        for (int j = 0; j < n2; ++j) {
            if (used[j] && j != i) continue;
            double d = std::abs(sorted[j].omega - target);
            if (best < 0 || d < best_d) {
                best = j;
                best_d = d;
            }
        }
        sorted[i].pair_index = best;
        sorted[best].pair_index = i;
        used[i] = used[best] = true;
    }
    return sorted;
}

QnmEstimate find_qnm(const std::vector<BdgMode>& modes,
                     std::pair<double, double> window, double horizon_x,
                     const SimGrid& grid, const PolaritonParams& params,
                     double loc_radius) {
    auto in_window = [&](const BdgMode& md) {
        double re = md.omega.real();
        return re > window.first && re < window.second &&
               periodic_distance(md.center_x, horizon_x, grid.length) <= loc_radius;
    };

    // First manifestation: the trapped mode sits in exact resonance with a
    // propagating level of the finite domain, and the pair hybridizes into a
    // complex-conjugate zero-norm doublet. The QNM (outgoing boundary
    // conditions) is the decaying member; its conjugate is the time-reversed
    // incoming resonance.
    std::vector<const BdgMode*> candidates;
    for (const BdgMode& md : modes) {
        if (md.classification != NormClass::zero) continue;
        if (md.omega.imag() >= 0) continue;
        if (in_window(md)) candidates.push_back(&md);
    }

    // Second manifestation: on a finite periodic domain the discrete
    // propagating levels generically miss the resonance, and the diagonalizer
    // returns the trapped core unpaired, as a real-frequency negative-norm
    // mode localized at the near-horizon dip (the composite "localized
    // negative-norm mode coupled to propagating positive-norm modes" is then
    // split across neighboring real levels). Its radiative width is below
    // the level-spacing resolution, so only the intrinsic loss survives in
    // Gamma_qnm. The fundamental is the lowest such level above the window
    // edge; anything within 15% of it makes the selection ambiguous.
    if (candidates.empty()) {
        std::vector<const BdgMode*> trapped;
        for (const BdgMode& md : modes)
            if (md.classification == NormClass::negative && in_window(md))
                trapped.push_back(&md);
        std::sort(trapped.begin(), trapped.end(),
                  [](const BdgMode* a, const BdgMode* b) {
                      return a->omega.real() < b->omega.real();
                  });
        if (!trapped.empty()) {
            candidates.push_back(trapped.front());
            for (size_t i = 1; i < trapped.size(); ++i)
                if (trapped[i]->omega.real() <
                    1.15 * trapped.front()->omega.real())
                    candidates.push_back(trapped[i]);
        }
    }

    if (candidates.empty()) {
        std::ostringstream msg;
        msg << "no zero-norm pair or trapped negative-norm mode with Re omega in ("
            << window.first << ", " << window.second << ") 1/ps within "
            << loc_radius << " um of x = " << horizon_x;
        throw NoQnmFound(msg.str());
    }
    if (candidates.size() > 1) {
        std::ostringstream msg;
        msg << candidates.size() << " QNM candidates in the window:";
        for (const BdgMode* md : candidates)
            msg << " (hbar omega = " << units::hbar * md->omega.real() << " + "
                << units::hbar * md->omega.imag() << "i meV, x = " << md->center_x
                << " um, norm " << md->norm << ")";
        throw MultipleQnmCandidates(msg.str());
    }

    const BdgMode& md = *candidates.front();
    QnmEstimate est;
    est.Omega_qnm = md.omega.real();
    est.gamma_radiative = std::max(0.0, -2.0 * md.omega.imag());
    est.Gamma_qnm = est.gamma_radiative + params.gamma();
    est.Q = est.Omega_qnm / est.Gamma_qnm;
    est.mode = md;
    return est;
}

}  // namespace polsim
