#pragma once

// Scalar time-of-flight kinematics for a direct-geometry spectrometer.
// Units: lengths m, times us, speeds m/s, wavenumbers 1/A, energies meV,
// masses amu, angles rad.

#include <string>

namespace wvs {

class NeutronBeam {
public:
    explicit NeutronBeam(double E0);

    double E0() const noexcept { return E0_; }
    double k0() const noexcept { return k0_; }
    double v0() const noexcept { return v0_; }

private:
    double E0_;
    double k0_;
    double v0_;
};

struct DetectorGeometry {
    double L0 = 0.0;    // source -> sample, m
    double L1 = 0.0;    // sample -> detector, m
    double theta = 0.0; // scattering angle, rad
    double t0 = 0.0;    // electronic offset, us

    void validate() const;
};

struct KEPoint {
    double K = 0.0; // momentum transfer, 1/A
    double E = 0.0; // energy transfer, meV
};

// L0/v0 + L1/v1 + t0 in microseconds.
double tof(const DetectorGeometry& geom, double v0, double v1);

// Final speed v1 from a measured TOF. Throws UnphysicalTOF when the neutron
// would have to arrive before crossing L0.
double invert_tof(const DetectorGeometry& geom, const NeutronBeam& beam, double t);

// Neutron energy loss C_E (k0^2 - k1^2).
double energy_transfer(double k0, double k1);

// |k0 - k1| for vectors at angle theta.
double k_transfer(double k0, double k1, double theta);

// k1/k0 for elastic scattering off a free mass at rest (center of gravity of
// the recoil peak). mass_ratio is M/m_n.
double elastic_ratio(double mass_ratio, double theta);

// C_A K^2 / M
double recoil_energy(double K, double M);

// 2 C_A K P_par / M, i.e. hbar K P_par / M with P_par in hbar/A.
double doppler_term(double K, double P_par, double M);

// E - recoil_energy(K, M) - doppler_term(K, P_par, M)
double conservation_residual(double E, double K, double P_par, double M);

enum class MassClass { conventional, anomalous };

// Binding can only increase the effective mass, so M_eff < M_free is the
// anomalous signature.
MassClass effective_mass_bound_check(double M_eff, double M_free);

std::string to_string(MassClass c);

} // namespace wvs
