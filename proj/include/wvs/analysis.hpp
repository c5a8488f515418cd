#pragma once

// Inverse problem: peak centroids along detector trajectories, recoil and
// roto-recoil mass fits, deficit reporting and the calibration audit.

#include "wvs/kinematics.hpp"
#include "wvs/spectra.hpp"

#include <json.hpp>

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace wvs {

struct Window {
    double lo = 0.0;
    double hi = 0.0;
};

struct PeakFit {
    double centroid = 0.0;        // Gaussian least-squares center, used downstream
    double width = 0.0;           // Gaussian sigma
    double amplitude = 0.0;
    double residual_norm = 0.0;   // sqrt of the weighted residual sum of squares
    double moment_centroid = 0.0; // first moment over the window
    double centroid_stderr = 0.0;
};

// Fits one peak on an ascending axis. `sigmas` may be empty (unit weights,
// stderr scaled by the reduced chi^2).
PeakFit peak_centroid(std::span<const double> axis, std::span<const double> values, std::span<const double> sigmas,
                      Window window);

// Coarse fit over the run of values above 10% of the maximum, then refits in
// +-3 widths around the result, twice. `guide` (default: values) is the
// series whose maximum places the coarse run.
PeakFit find_peak(std::span<const double> axis, std::span<const double> values, std::span<const double> sigmas,
                  std::span<const double> guide = {});

// A spectrum mapped to energy transfer along its detector trajectory, sorted
// by ascending E (E grows with TOF). intensity is counts / ((k1/k0) |dE/dt| dt), i.e. S(K(E), E)
// up to a constant.
struct ReducedSpectrum {
    std::size_t detector_index = 0;
    std::vector<double> tof;
    std::vector<double> E;
    std::vector<double> K;
    std::vector<double> counts; // raw counts of the retained bins
    std::vector<double> intensity;
    std::vector<double> sigma;
    std::size_t n_invalid = 0; // bins whose TOF could not be inverted
};

ReducedSpectrum reduce_spectrum(const InstrumentConfig& cfg, const Spectrum& spectrum);

struct KEObservation {
    double K = 0.0;
    double E = 0.0;
    double sigma_E = 0.0; // 0 means unweighted
    double dK_dE = 0.0;   // slope of the detector trajectory through the point
};

struct DetectorPeak {
    std::size_t detector_index = 0;
    PeakFit fit;
    KEObservation point;
    double tof = 0.0; // TOF of the centroid on the nominal instrument
};

// Point on detector d's trajectory at energy transfer E.
KEObservation trajectory_point(const InstrumentConfig& cfg, std::size_t d, double E, double sigma_E = 0.0);

DetectorPeak measure_peak(const InstrumentConfig& cfg, const Spectrum& spectrum);

struct MassFitResult {
    double M_eff = 0.0;
    double M_eff_stderr = 0.0;
    double E_rot_fit = 0.0;
    double E_rot_stderr = 0.0;
    double M_free = 0.0;
    double mass_ratio = 0.0;       // M_eff / M_free
    double deficit_fraction = 0.0; // sqrt(M_eff/M_free) - 1, momentum deficit at fixed E
    double chi2 = 0.0;
    std::size_t dof = 0;
    std::size_t iterations = 0;
    MassClass classification = MassClass::conventional;
};

// E = C_A K^2 / M_eff, weighted linear least squares in 1/M_eff.
MassFitResult fit_recoil_mass(std::span<const KEObservation> points, double M_free);

// E = E_rot + C_A K^2 / M_eff by Gauss-Newton. With `pinned_E_rot` set this
// is fit_recoil_mass on E - E_rot.
MassFitResult fit_roto_recoil(std::span<const KEObservation> points, double M_free,
                              std::optional<double> pinned_E_rot = std::nullopt);

struct DeficitReport {
    double M_eff = 0.0;
    double M_free = 0.0;
    double mass_ratio = 0.0;
    double deficit_fraction = 0.0;        // sqrt(M_eff/M_free) - 1
    double linear_deficit_fraction = 0.0; // M_eff/M_free - 1
    MassClass classification = MassClass::conventional;
};

DeficitReport deficit_report(const MassFitResult& fit, double M_free);

nlohmann::json to_json(const PeakFit& fit);
nlohmann::json to_json(const MassFitResult& fit);
nlohmann::json to_json(const DeficitReport& report);

enum class CalibParam { L0, L1, t0, theta, E0 };

std::string to_string(CalibParam p);
CalibParam calib_param_from_string(const std::string& s);

// L0 and E0 are shared by all detectors; L1, theta and t0 are adjusted per
// detector.
struct CalibrationReport {
    std::map<std::string, std::vector<double>> adjusted_params; // per-parameter deltas
    std::vector<std::size_t> detectors;                          // order of per-detector deltas
    double assumed_M = 0.0;
    double refit_mass = 0.0;
    double refit_stderr = 0.0;
    double nominal_mass = 0.0; // fit before any adjustment
    bool masking_flag = false;
    std::size_t iterations = 0;
    double chi2 = 0.0;

    double max_abs_delta(CalibParam p) const;
};

inline constexpr double kMaskingTolerance = 0.01;

CalibrationReport calibration_audit(const InstrumentConfig& cfg, std::span<const DetectorPeak> peaks, double assumed_M,
                                    const std::set<CalibParam>& free_params, double E_rot = 0.0);

nlohmann::json to_json(const CalibrationReport& report);
std::string to_table(const CalibrationReport& report);

} // namespace wvs
