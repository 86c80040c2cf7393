#pragma once

// Unit system used throughout: lengths in um, times in ps, energies in meV.
// Angular frequencies and rates are rad/ps (written 1/ps), wavevectors 1/um,
// 1D densities 1/um, masses in meV*ps^2/um^2. Field amplitudes carry
// sqrt(1/um); pump/probe amplitudes are stored as hbar*F in meV*um^(-1/2)
// so that the equation-of-state right-hand side is literally |F_p|^2/hbar^2.
//
// Public configuration accepts the more common laboratory units (kg, meV,
// ueV) and converts here, once.

namespace polsim::units {

// hbar in meV*ps (CODATA: 6.582119569e-16 eV*s)
inline constexpr double hbar = 0.6582119569;

// 1 kg expressed in meV*ps^2/um^2:
//   1 kg = 1 J*s^2/m^2 = 6.241509074e21 meV * (1e24 ps^2) / (1e12 um^2)
inline constexpr double kg = 6.241509074e33;

inline constexpr double meV_to_rad_per_ps(double e_meV) { return e_meV / hbar; }
inline constexpr double rad_per_ps_to_meV(double w) { return w * hbar; }
inline constexpr double ueV_to_rad_per_ps(double e_ueV) { return e_ueV * 1e-3 / hbar; }
inline constexpr double mass_from_kg(double m_kg) { return m_kg * kg; }
inline constexpr double mass_to_kg(double m_internal) { return m_internal / kg; }

}  // namespace polsim::units
