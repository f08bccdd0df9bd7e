#pragma once

// Unit conventions used throughout:
//   lengths in nm, times in ps (1/ns for emission rates), temperatures in K.
// The FDTD kernel measures time internally as light-travel distance in nm
// (c = 1); conversions happen at module boundaries only.

namespace pcsim {

inline constexpr double kPi = 3.14159265358979323846;

inline constexpr double kSpeedOfLightMps = 2.99792458e8;    // m/s
inline constexpr double kSpeedOfLightNmPerPs = 2.99792458e5; // nm/ps
inline constexpr double kSpeedOfLightNmPerNs = 2.99792458e8; // nm/ns
inline constexpr double kSpeedOfLightNmPerS = 2.99792458e17; // nm/s

inline constexpr double ps_to_ns(double t_ps) { return t_ps * 1e-3; }
inline constexpr double ns_to_ps(double t_ns) { return t_ns * 1e3; }

// Angular frequency (rad/ps) of light at wavelength lambda (nm).
inline constexpr double omega_rad_per_ps(double lambda_nm) {
    return 2.0 * kPi * kSpeedOfLightNmPerPs / lambda_nm;
}

// Cavity photon lifetime in ps: tau = Q * lambda / (2*pi*c).
inline constexpr double cavity_lifetime_ps(double q, double lambda_nm) {
    return q * lambda_nm / (2.0 * kPi * kSpeedOfLightNmPerPs);
}

} // namespace pcsim
