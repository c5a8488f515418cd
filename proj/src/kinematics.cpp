#include "wvs/kinematics.hpp"

#include "wvs/errors.hpp"
#include "wvs/units.hpp"

#include <algorithm>
#include <cmath>

namespace wvs {

NeutronBeam::NeutronBeam(double E0) : E0_(E0), k0_(0.0), v0_(0.0) {
    if (!(E0 > 0.0) || !std::isfinite(E0)) throw NonPositiveInput("incident energy E0 must be positive");
    k0_ = units::k_from_energy(E0);
    v0_ = units::speed_from_k(k0_);
}

void DetectorGeometry::validate() const {
    if (!(L0 > 0.0) || !(L1 > 0.0)) throw InvalidGeometry("flight paths L0 and L1 must be positive");
    if (!(theta > 0.0 && theta < units::pi)) throw InvalidGeometry("scattering angle must lie in (0, pi)");
    if (!std::isfinite(t0)) throw InvalidGeometry("t0 must be finite");
}

double tof(const DetectorGeometry& geom, double v0, double v1) {
    if (!(v0 > 0.0) || !(v1 > 0.0)) throw NonPositiveSpeed("tof: speeds must be positive");
    return (geom.L0 / v0 + geom.L1 / v1) * units::us_per_s + geom.t0;
}

double invert_tof(const DetectorGeometry& geom, const NeutronBeam& beam, double t) {
    const double remaining_us = t - geom.t0 - geom.L0 / beam.v0() * units::us_per_s;
    if (!(remaining_us > 0.0)) {
        throw UnphysicalTOF("invert_tof: TOF shorter than the incident flight time");
    }
    return geom.L1 / (remaining_us / units::us_per_s);
}

double energy_transfer(double k0, double k1) { return units::C_E * (k0 * k0 - k1 * k1); }

double k_transfer(double k0, double k1, double theta) {
    const double K2 = k0 * k0 + k1 * k1 - 2.0 * k0 * k1 * std::cos(theta);
    return std::sqrt(std::max(K2, 0.0));
}

double elastic_ratio(double mass_ratio, double theta) {
    if (!(mass_ratio > 0.0)) throw NonPositiveMass("elastic_ratio: mass ratio must be positive");
    const double s = std::sin(theta);
    const double disc = mass_ratio * mass_ratio - s * s;
    // Rounding can leave sin^2(pi/2) a hair above 1 for M/m = 1.
    if (disc < -1e-14) throw KinematicallyForbidden("elastic_ratio: (M/m)^2 < sin^2(theta)");
    return (std::cos(theta) + std::sqrt(std::max(disc, 0.0))) / (mass_ratio + 1.0);
}

double recoil_energy(double K, double M) {
    if (!(M > 0.0)) throw NonPositiveMass("recoil_energy: mass must be positive");
    return units::C_A * K * K / M;
}

double doppler_term(double K, double P_par, double M) {
    if (!(M > 0.0)) throw NonPositiveMass("doppler_term: mass must be positive");
    return 2.0 * units::C_A * K * P_par / M;
}

double conservation_residual(double E, double K, double P_par, double M) {
    return E - recoil_energy(K, M) - doppler_term(K, P_par, M);
}

MassClass effective_mass_bound_check(double M_eff, double M_free) {
    // A fit that reproduces M_free up to round-off is not an anomaly.
    return M_eff >= M_free * (1.0 - 1e-9) ? MassClass::conventional : MassClass::anomalous;
}

std::string to_string(MassClass c) { return c == MassClass::conventional ? "conventional" : "anomalous"; }

} // namespace wvs
