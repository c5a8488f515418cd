#pragma once

// Unit system used throughout the library:
//   momentum   hbar * 1/Angstrom (so a momentum value is also a wavenumber)
//   energy     meV
//   mass       a.m.u. (unified atomic mass unit)
//   time       microseconds (TOF); seconds only where stated
//   length     m (flight paths), Angstrom (wavelengths), fm (scattering lengths)
//   angle      radians

#include <cmath>

#include <json.hpp>

namespace wvs::units {

// CODATA 2018 exact / recommended values.
inline constexpr double hbar_SI = 1.054571817e-34;          // J s
inline constexpr double neutron_mass_SI = 1.67492749804e-27; // kg
inline constexpr double amu_SI = 1.66053906660e-27;          // kg
inline constexpr double elementary_charge = 1.602176634e-19; // C (J per eV)

inline constexpr double pi = 3.14159265358979323846;
inline constexpr double meter_per_angstrom = 1e-10;
inline constexpr double fm_per_angstrom = 1e5;
inline constexpr double us_per_s = 1e6;

// Neutron mass in a.m.u.
inline constexpr double neutron_mass_amu = neutron_mass_SI / amu_SI;

// hbar^2/(2 m_n) in meV*A^2: E[meV] = C_E * k[1/A]^2 for a neutron.
inline constexpr double C_E =
    hbar_SI * hbar_SI / (2.0 * neutron_mass_SI) / elementary_charge * 1e3 / (meter_per_angstrom * meter_per_angstrom);

// hbar^2/(2 u) in meV*A^2: recoil energy of mass M[amu] is C_A*K^2/M.
inline constexpr double C_A =
    hbar_SI * hbar_SI / (2.0 * amu_SI) / elementary_charge * 1e3 / (meter_per_angstrom * meter_per_angstrom);

// hbar/m_n in (m/s)*A: neutron speed v = C_v * k.
inline constexpr double C_v = hbar_SI / neutron_mass_SI / meter_per_angstrom;

inline constexpr double deg(double degrees) { return degrees * pi / 180.0; }
inline constexpr double to_deg(double radians) { return radians * 180.0 / pi; }

// Neutron kinematic conversions.
inline double k_from_energy(double E_meV) { return std::sqrt(E_meV / C_E); }
inline double energy_from_k(double k) { return C_E * k * k; }
inline double speed_from_k(double k) { return C_v * k; }
inline double k_from_speed(double v) { return v / C_v; }

// Constants table for audit output.
nlohmann::json constants_json();

} // namespace wvs::units
