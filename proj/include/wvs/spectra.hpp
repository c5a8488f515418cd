#pragma once

// Forward model of a direct-geometry TOF instrument: impulse-approximation
// dynamic structure factor along each detector's K-E trajectory, binned in
// TOF, with an optional weak-value momentum-transfer deficit and Poisson
// counting noise.

#include "wvs/kinematics.hpp"
#include "wvs/qstate.hpp"

#include <json.hpp>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

namespace wvs {

struct TofBinning {
    double t_min = 0.0; // us
    double t_max = 0.0; // us
    std::size_t n_bins = 0;

    void validate() const;
    double width() const noexcept { return (t_max - t_min) / static_cast<double>(n_bins); }
    double center(std::size_t i) const noexcept { return t_min + (static_cast<double>(i) + 0.5) * width(); }
    std::vector<double> edges() const;
};

struct InstrumentConfig {
    NeutronBeam beam{90.0};
    std::vector<DetectorGeometry> detectors;
    TofBinning tof_bins;

    void validate() const;

    // ARCS-like synthetic preset: L0=11.6 m, L1=4 m, theta 10..130 deg in
    // 5 deg steps, t0=0, E0=90 meV.
    static InstrumentConfig preset();
};

using MomentumSource = std::variant<WaveFunction, MixedState>;

// Weak-value deficit injection: case-B/C style post-selection of relative
// width width_ratio, coupling strength lambda.
struct DeficitInjection {
    double lambda = 0.0;
    double width_ratio = 1.0;
};

struct SampleModel {
    double M = 1.0;                // amu
    MomentumSource momentum_dist;  // initial-state n(P) source, centered at 0
    double E_rot = 0.0;            // meV
    std::optional<DeficitInjection> deficit;

    void validate() const;
};

// Gaussian sample helper: momentum distribution gaussian(0, sigma_P) on a
// grid resolved for sigma_P.
SampleModel gaussian_sample(double M, double sigma_P, double E_rot = 0.0,
                            std::optional<DeficitInjection> deficit = std::nullopt);

struct Spectrum {
    std::size_t detector_index = 0;
    std::vector<double> bin_edges; // us, n_bins + 1 entries
    std::vector<double> counts;    // n_bins entries, >= 0
    nlohmann::json metadata = nlohmann::json::object();

    std::size_t n_bins() const noexcept { return counts.size(); }
    double center(std::size_t i) const noexcept { return 0.5 * (bin_edges[i] + bin_edges[i + 1]); }
    double total() const;
};

// Tabulated n(P) with cubic interpolation between nodes (zero outside).
class MomentumDensity {
public:
    MomentumDensity(MomentumGrid grid, std::vector<double> values);

    const MomentumGrid& grid() const noexcept { return grid_; }
    std::span<const double> values() const noexcept { return values_; }
    double operator()(double P) const;
    double integral() const;
    double mean() const;
    double stddev() const;

private:
    MomentumGrid grid_;
    std::vector<double> values_;
};

// n(P) = |Xi(P)|^2; for a mixture the weighted sum of component densities.
MomentumDensity momentum_density(const WaveFunction& state);
MomentumDensity momentum_density(const MixedState& state);
MomentumDensity momentum_density(const MomentumSource& source);

// Impulse-approximation S(K,E) on the given energies (meV):
//   S = n(P*) M / (2 C_A K),  P* = M (E - C_A K^2/M) / (2 C_A K)
std::vector<double> s_ia(double K, std::span<const double> energies, const MomentumDensity& nP, double M);
double s_ia_at(double K, double E, const MomentumDensity& nP, double M);

struct TrajectoryPoint {
    double tof = 0.0; // bin center, us
    double k1 = 0.0;
    KEPoint ke;
    bool valid = false; // false when the TOF cannot be inverted
};

std::vector<TrajectoryPoint> detector_trajectory(const InstrumentConfig& cfg, std::size_t d);

// Maps the neutron-recorded transfer K to the atom-side transfer K_A solving
// K = K_A - lambda * pi(K_A), where pi is the weak-value deficit of a
// post-selection gaussian(K_A, width_ratio * sigma) against the sample's
// initial state. pi is tabulated once over [0, K_max] and interpolated.
class DeficitProfile {
public:
    DeficitProfile(const MomentumSource& pre, DeficitInjection injection, double K_max);

    double deficit(double K_atom) const;     // pi(K_A)
    double atom_transfer(double K_recorded) const;
    double lambda() const noexcept { return injection_.lambda; }
    // Nodes above this K were extrapolated because the overlap underflowed.
    std::optional<double> extrapolated_above() const noexcept { return extrapolated_above_; }

private:
    DeficitInjection injection_;
    double K_max_;
    double dK_;
    std::vector<double> table_;
    std::optional<double> extrapolated_above_;
};

// Noiseless expected intensity per TOF bin, proportional to
// (k1/k0) S_IA(K_A, E - E_rot) |dE/dt| integrated over each bin.
Spectrum simulate_spectrum(const InstrumentConfig& cfg, const SampleModel& sample, std::size_t d);

// All detectors, sharing one deficit table.
std::vector<Spectrum> simulate_all(const InstrumentConfig& cfg, const SampleModel& sample);

// Scales `expected` to `total_counts` and draws Poisson counts per bin.
Spectrum poisson_sample(const Spectrum& expected, std::uint64_t total_counts, std::uint64_t seed);

// Neutron-side (K, E) where the detector trajectory crosses the sample's line
// center (first crossing in TOF), or nullopt if it does not cross in range.
struct LocusPoint {
    double tof = 0.0;
    KEPoint ke;
    double K_atom = 0.0;
};
std::optional<LocusPoint> peak_locus(const InstrumentConfig& cfg, const SampleModel& sample, std::size_t d);

nlohmann::json sample_summary(const SampleModel& sample);

} // namespace wvs
