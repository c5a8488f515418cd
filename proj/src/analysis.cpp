#include "wvs/analysis.hpp"

#include "wvs/errors.hpp"
#include "wvs/units.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace wvs {

namespace {

constexpr std::size_t kMaxIterations = 200;

struct Gauss3 {
    double A, c, w;
};

double gauss(const Gauss3& p, double x) {
    const double z = (x - p.c) / p.w;
    return p.A * std::exp(-0.5 * z * z);
}

// Levenberg-Marquardt for a single Gaussian on (x, y) with weights wt.
struct GaussFitOut {
    Gauss3 p;
    double chi2;
    Eigen::Matrix3d cov; // (J^T W J)^-1
};

GaussFitOut fit_gaussian(const std::vector<double>& x, const std::vector<double>& y, const std::vector<double>& wt,
                         Gauss3 p) {
    auto chi2_of = [&](const Gauss3& q) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double r = y[i] - gauss(q, x[i]);
            s += wt[i] * r * r;
        }
        return s;
    };
    auto normal = [&](const Gauss3& q, Eigen::Matrix3d& JtJ, Eigen::Vector3d& Jtr) {
        JtJ.setZero();
        Jtr.setZero();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double g = gauss({1.0, q.c, q.w}, x[i]);
            const double d = x[i] - q.c;
            Eigen::Vector3d j(g, q.A * g * d / (q.w * q.w), q.A * g * d * d / (q.w * q.w * q.w));
            const double r = y[i] - q.A * g;
            JtJ += wt[i] * j * j.transpose();
            Jtr += wt[i] * j * r;
        }
    };
    double chi2 = chi2_of(p);
    double mu = -1.0;
    Eigen::Matrix3d JtJ;
    Eigen::Vector3d Jtr;
    bool converged = false;
    for (std::size_t it = 0; it < kMaxIterations && !converged; ++it) {
        normal(p, JtJ, Jtr);
        if (mu < 0.0) mu = 1e-3 * JtJ.diagonal().maxCoeff();
        bool accepted = false;
        for (int inner = 0; inner < 60 && !accepted; ++inner) {
            Eigen::Matrix3d Aug = JtJ;
            for (int k = 0; k < 3; ++k) Aug(k, k) += mu * std::max(JtJ(k, k), 1e-300);
            const Eigen::Vector3d step = Aug.ldlt().solve(Jtr);
            Gauss3 trial{p.A + step(0), p.c + step(1), std::abs(p.w + step(2))};
            const double chi2_trial = chi2_of(trial);
            if (std::isfinite(chi2_trial) && chi2_trial <= chi2) {
                const double rel = std::max({std::abs(step(0)) / std::max(std::abs(p.A), 1e-300),
                                             std::abs(step(1)) / p.w, std::abs(step(2)) / p.w});
                p = trial;
                chi2 = chi2_trial;
                mu = std::max(mu / 3.0, 1e-300);
                accepted = true;
                if (rel < 1e-12) converged = true;
            } else {
                mu *= 4.0;
            }
        }
        if (!accepted) converged = true; // no downhill step left at machine precision
    }
    if (!converged) throw NonConvergence("peak fit did not converge");
    normal(p, JtJ, Jtr);
    return {p, chi2, JtJ.inverse()};
}

// Half the distance between neighbouring nodes: bin width on a non-uniform axis.
double local_width(std::span<const double> x, std::size_t i) {
    if (x.size() < 2) return 1.0;
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = std::min(i + 1, x.size() - 1);
    return (x[hi] - x[lo]) / static_cast<double>(hi - lo);
}

struct Beamline {
    DetectorGeometry geom;
    NeutronBeam beam;
};

// (K, E, dK/dE) for energy transfer E on the given beamline.
KEObservation point_at_energy(const Beamline& bl, double E, double sigma_E) {
    const double k0 = bl.beam.k0();
    const double k1sq = k0 * k0 - E / units::C_E;
    if (!(k1sq > 0.0)) throw KinematicallyForbidden("energy transfer exceeds the incident energy");
    const double k1 = std::sqrt(k1sq);
    KEObservation o;
    o.E = E;
    o.K = k_transfer(k0, k1, bl.geom.theta);
    o.sigma_E = sigma_E;
    const double dk1_dE = -1.0 / (2.0 * units::C_E * k1);
    o.dK_dE = o.K > 0.0 ? (k1 - k0 * std::cos(bl.geom.theta)) / o.K * dk1_dE : 0.0;
    return o;
}

double tof_at_energy(const Beamline& bl, double E) {
    const double k1 = std::sqrt(bl.beam.k0() * bl.beam.k0() - E / units::C_E);
    return tof(bl.geom, bl.beam.v0(), units::speed_from_k(k1));
}

KEObservation point_at_tof(const Beamline& bl, double t, double sigma_E) {
    const double v1 = invert_tof(bl.geom, bl.beam, t);
    const double k1 = units::k_from_speed(v1);
    return point_at_energy(bl, energy_transfer(bl.beam.k0(), k1), sigma_E);
}

void check_fit_points(std::span<const KEObservation> points, std::size_t min_points) {
    if (points.size() < min_points) {
        throw InsufficientPoints("mass fit needs at least " + std::to_string(min_points) + " points");
    }
    const auto [lo, hi] = std::minmax_element(points.begin(), points.end(),
                                              [](const auto& a, const auto& b) { return a.K < b.K; });
    if (!(hi->K - lo->K > 1e-12 * std::max(std::abs(hi->K), 1.0))) {
        throw CollinearDegeneracy("mass fit: all K values are equal");
    }
}

bool all_weighted(std::span<const KEObservation> points) {
    return std::all_of(points.begin(), points.end(), [](const auto& p) { return p.sigma_E > 0.0; });
}

// Uncertainty of the residual E - E_rot - C_A K(E)^2 u along the trajectory.
double effective_sigma(const KEObservation& p, double u) {
    const double slope = std::abs(1.0 - 2.0 * units::C_A * p.K * u * p.dK_dE);
    return p.sigma_E * std::max(slope, 1e-3);
}

void finish(MassFitResult& r, double M_free) {
    r.M_free = M_free;
    r.mass_ratio = r.M_eff / M_free;
    r.deficit_fraction = std::sqrt(r.mass_ratio) - 1.0;
    r.classification = effective_mass_bound_check(r.M_eff, M_free);
}

} // namespace

PeakFit peak_centroid(std::span<const double> axis, std::span<const double> values, std::span<const double> sigmas,
                      Window window) {
    if (axis.size() != values.size() || (!sigmas.empty() && sigmas.size() != values.size())) {
        throw GridMismatch("peak_centroid: axis, values and sigmas differ in length");
    }
    std::vector<double> x, y, wt;
    double mom0 = 0.0, mom1 = 0.0;
    std::size_t positive = 0;
    for (std::size_t i = 0; i < axis.size(); ++i) {
        if (axis[i] < window.lo || axis[i] > window.hi) continue;
        x.push_back(axis[i]);
        y.push_back(values[i]);
        wt.push_back(sigmas.empty() ? 1.0 : 1.0 / (sigmas[i] * sigmas[i]));
        if (values[i] > 0.0) {
            ++positive;
            const double dx = local_width(axis, i);
            mom0 += values[i] * dx;
            mom1 += values[i] * axis[i] * dx;
        }
    }
    if (positive < 5) throw EmptyWindow("peak window holds fewer than 5 positive bins");
    const auto [ymin, ymax] = std::minmax_element(y.begin(), y.end());
    if (*ymin == *ymax) throw DegeneratePeak("all values in the peak window are equal");

    PeakFit out;
    out.moment_centroid = mom1 / mom0;
    double mom2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (y[i] > 0.0) {
            const double d = x[i] - out.moment_centroid;
            mom2 += y[i] * d * d * local_width(x, i);
        }
    }
    double w0 = std::sqrt(mom2 / mom0);
    if (!(w0 > 0.0)) w0 = (window.hi - window.lo) / 6.0;

    const auto g = fit_gaussian(x, y, wt, {*ymax, out.moment_centroid, w0});
    out.centroid = g.p.c;
    out.width = g.p.w;
    out.amplitude = g.p.A;
    out.residual_norm = std::sqrt(g.chi2);
    const std::size_t dof = x.size() > 3 ? x.size() - 3 : 1;
    const double scale = sigmas.empty() ? g.chi2 / static_cast<double>(dof) : 1.0;
    out.centroid_stderr = std::sqrt(std::max(g.cov(1, 1) * scale, 0.0));
    return out;
}

PeakFit find_peak(std::span<const double> axis, std::span<const double> values, std::span<const double> sigmas,
                  std::span<const double> guide) {
    if (axis.empty()) throw EmptyWindow("find_peak: empty axis");
    if (guide.empty()) guide = values;
    if (guide.size() != values.size()) throw GridMismatch("find_peak: guide and values differ in length");
    // Coarse window: the contiguous run around the maximum above 10% of it.
    const auto imax = static_cast<std::size_t>(std::max_element(guide.begin(), guide.end()) - guide.begin());
    const double floor = 0.1 * guide[imax];
    std::size_t lo = imax, hi = imax;
    while (lo > 0 && guide[lo - 1] > floor) --lo;
    while (hi + 1 < guide.size() && guide[hi + 1] > floor) ++hi;
    lo = lo >= 2 ? lo - 2 : 0;
    hi = std::min(hi + 2, values.size() - 1);
    auto fit = peak_centroid(axis, values, sigmas, {axis[lo], axis[hi]});
    for (int pass = 0; pass < 2; ++pass) {
        fit = peak_centroid(axis, values, sigmas, {fit.centroid - 3.0 * fit.width, fit.centroid + 3.0 * fit.width});
    }
    return fit;
}

ReducedSpectrum reduce_spectrum(const InstrumentConfig& cfg, const Spectrum& spectrum) {
    const std::size_t d = spectrum.detector_index;
    if (d >= cfg.detectors.size()) throw InvalidGeometry("spectrum detector index not in the instrument");
    if (spectrum.bin_edges.size() != spectrum.counts.size() + 1) {
        throw GridMismatch("spectrum bin edges do not match its counts");
    }
    const Beamline bl{cfg.detectors[d], cfg.beam};
    ReducedSpectrum out;
    out.detector_index = d;
    for (std::size_t i = 0; i < spectrum.n_bins(); ++i) {
        const double t = spectrum.center(i);
        double v1;
        try {
            v1 = invert_tof(bl.geom, bl.beam, t);
        } catch (const UnphysicalTOF&) {
            ++out.n_invalid;
            continue;
        }
        const double k1 = units::k_from_speed(v1);
        const double dE_dt = 2.0 * units::C_E * k1 * v1 * v1 / (bl.geom.L1 * units::C_v) / units::us_per_s;
        const double dt = spectrum.bin_edges[i + 1] - spectrum.bin_edges[i];
        const double factor = (k1 / bl.beam.k0()) * dE_dt * dt;
        out.tof.push_back(t);
        out.E.push_back(energy_transfer(bl.beam.k0(), k1));
        out.K.push_back(k_transfer(bl.beam.k0(), k1, bl.geom.theta));
        out.counts.push_back(spectrum.counts[i]);
        out.intensity.push_back(spectrum.counts[i] / factor);
        out.sigma.push_back(std::sqrt(std::max(spectrum.counts[i], 1.0)) / factor);
    }
    return out;
}

KEObservation trajectory_point(const InstrumentConfig& cfg, std::size_t d, double E, double sigma_E) {
    return point_at_energy({cfg.detectors.at(d), cfg.beam}, E, sigma_E);
}

DetectorPeak measure_peak(const InstrumentConfig& cfg, const Spectrum& spectrum) {
    const auto red = reduce_spectrum(cfg, spectrum);
    // Only Poisson-sampled spectra carry total_counts; expected spectra are fitted unweighted.
    const bool noisy = spectrum.metadata.contains("total_counts");
    DetectorPeak p;
    p.detector_index = red.detector_index;
    // The Jacobian inflates lone counts in the slow tail, so the raw counts place the window.
    p.fit = find_peak(red.E, red.intensity, noisy ? std::span<const double>(red.sigma) : std::span<const double>(),
                      red.counts);
    const Beamline bl{cfg.detectors[p.detector_index], cfg.beam};
    p.point = point_at_energy(bl, p.fit.centroid, noisy ? p.fit.centroid_stderr : 0.0);
    p.tof = tof_at_energy(bl, p.fit.centroid);
    return p;
}

MassFitResult fit_recoil_mass(std::span<const KEObservation> points, double M_free) {
    check_fit_points(points, 3);
    const bool weighted = all_weighted(points);
    auto solve = [&](double u_prev, double& sxx, double& chi2) {
        double sxe = 0.0;
        sxx = 0.0;
        for (const auto& p : points) {
            const double x = units::C_A * p.K * p.K;
            const double s = weighted ? effective_sigma(p, u_prev) : 1.0;
            sxe += x * p.E / (s * s);
            sxx += x * x / (s * s);
        }
        const double u = sxe / sxx;
        chi2 = 0.0;
        for (const auto& p : points) {
            const double x = units::C_A * p.K * p.K;
            const double s = weighted ? effective_sigma(p, u_prev) : 1.0;
            chi2 += std::pow((p.E - x * u) / s, 2);
        }
        return u;
    };
    double sxx = 0.0, chi2 = 0.0;
    double u = solve(0.0, sxx, chi2);
    std::size_t it = 1;
    if (weighted) {
        // The effective weights depend on u; a few passes settle them.
        for (; it < kMaxIterations; ++it) {
            const double next = solve(u, sxx, chi2);
            const bool done = std::abs(next - u) <= 1e-14 * std::abs(u);
            u = next;
            if (done) break;
        }
    }
    if (!(u > 0.0) || !std::isfinite(u)) throw NonConvergence("recoil fit gave a non-positive mass");
    MassFitResult r;
    r.dof = points.size() - 1;
    r.chi2 = chi2;
    r.iterations = it;
    const double var_u = (weighted ? 1.0 : chi2 / static_cast<double>(r.dof)) / sxx;
    r.M_eff = 1.0 / u;
    r.M_eff_stderr = std::sqrt(var_u) / (u * u);
    finish(r, M_free);
    return r;
}

MassFitResult fit_roto_recoil(std::span<const KEObservation> points, double M_free, std::optional<double> pinned_E_rot) {
    if (pinned_E_rot) {
        std::vector<KEObservation> shifted(points.begin(), points.end());
        for (auto& p : shifted) p.E -= *pinned_E_rot;
        auto r = fit_recoil_mass(shifted, M_free);
        r.E_rot_fit = *pinned_E_rot;
        return r;
    }
    check_fit_points(points, 4);
    const bool weighted = all_weighted(points);
    auto sigma = [&](const KEObservation& p, double u) { return weighted ? effective_sigma(p, u) : 1.0; };

    // Linear start in (E_rot, 1/M) with unit slope factors.
    Eigen::Matrix2d A = Eigen::Matrix2d::Zero();
    Eigen::Vector2d b = Eigen::Vector2d::Zero();
    for (const auto& p : points) {
        const double s = weighted ? p.sigma_E : 1.0;
        const Eigen::Vector2d j(1.0, units::C_A * p.K * p.K);
        A += j * j.transpose() / (s * s);
        b += j * p.E / (s * s);
    }
    const Eigen::Vector2d lin = A.ldlt().solve(b);
    double E_rot = lin(0);
    double M = 1.0 / lin(1);
    if (!(M > 0.0) || !std::isfinite(M)) throw NonConvergence("roto-recoil fit: linear start gave a non-positive mass");

    auto chi2_at = [&](double e, double m) {
        double c = 0.0;
        for (const auto& p : points) c += std::pow((p.E - e - units::C_A * p.K * p.K / m) / sigma(p, 1.0 / m), 2);
        return c;
    };

    std::size_t it = 0;
    bool converged = false;
    Eigen::Matrix2d JtJ;
    for (; it < kMaxIterations; ++it) {
        JtJ.setZero();
        Eigen::Vector2d Jtr = Eigen::Vector2d::Zero();
        for (const auto& p : points) {
            const double s = sigma(p, 1.0 / M);
            const double x = units::C_A * p.K * p.K;
            const double r = (p.E - E_rot - x / M) / s;
            const Eigen::Vector2d j(1.0 / s, -x / (M * M) / s); // d(model)/d(E_rot, M)
            JtJ += j * j.transpose();
            Jtr += j * r;
        }
        Eigen::Vector2d step = JtJ.ldlt().solve(Jtr);
        // Halve steps that would leave M <= 0 or increase chi^2.
        const double chi2_now = chi2_at(E_rot, M);
        double f = 1.0;
        while (f > 1e-6 && (!(M + f * step(1) > 0.0) || chi2_at(E_rot + f * step(0), M + f * step(1)) > chi2_now)) {
            f *= 0.5;
        }
        step *= f;
        E_rot += step(0);
        M += step(1);
        if (std::abs(step(0)) <= 1e-10 * std::max(std::abs(E_rot), 1.0) && std::abs(step(1)) <= 1e-10 * M) {
            converged = true;
            ++it;
            break;
        }
    }
    if (!converged) throw NonConvergence("roto-recoil fit hit the iteration cap");

    MassFitResult r;
    r.M_eff = M;
    r.E_rot_fit = E_rot;
    r.dof = points.size() - 2;
    r.chi2 = chi2_at(E_rot, M);
    r.iterations = it;
    const Eigen::Matrix2d cov = JtJ.inverse() * (weighted ? 1.0 : r.chi2 / static_cast<double>(r.dof));
    r.E_rot_stderr = std::sqrt(std::max(cov(0, 0), 0.0));
    r.M_eff_stderr = std::sqrt(std::max(cov(1, 1), 0.0));
    finish(r, M_free);
    return r;
}

DeficitReport deficit_report(const MassFitResult& fit, double M_free) {
    if (!(M_free > 0.0) || !(fit.M_eff > 0.0)) throw NonPositiveMass("deficit_report: masses must be positive");
    DeficitReport r;
    r.M_eff = fit.M_eff;
    r.M_free = M_free;
    r.mass_ratio = fit.M_eff / M_free;
    // At fixed E, K scales as sqrt(M): the momentum deficit is sqrt(ratio) - 1.
    r.deficit_fraction = std::sqrt(r.mass_ratio) - 1.0;
    r.linear_deficit_fraction = r.mass_ratio - 1.0;
    r.classification = effective_mass_bound_check(fit.M_eff, M_free);
    return r;
}

nlohmann::json to_json(const PeakFit& f) {
    return {{"centroid", f.centroid},           {"width", f.width},
            {"amplitude", f.amplitude},         {"residual_norm", f.residual_norm},
            {"moment_centroid", f.moment_centroid}, {"centroid_stderr", f.centroid_stderr}};
}

nlohmann::json to_json(const MassFitResult& f) {
    return {{"M_eff", f.M_eff},
            {"stderr", f.M_eff_stderr},
            {"E_rot_fit", f.E_rot_fit},
            {"E_rot_stderr", f.E_rot_stderr},
            {"M_free", f.M_free},
            {"mass_ratio", f.mass_ratio},
            {"deficit_fraction", f.deficit_fraction},
            {"chi2", f.chi2},
            {"dof", f.dof},
            {"iterations", f.iterations},
            {"classification", to_string(f.classification)}};
}

nlohmann::json to_json(const DeficitReport& r) {
    return {{"M_eff", r.M_eff},
            {"M_free", r.M_free},
            {"mass_ratio", r.mass_ratio},
            {"deficit_fraction", r.deficit_fraction},
            {"deficit_percent", 100.0 * r.deficit_fraction},
            {"linear_deficit_fraction", r.linear_deficit_fraction},
            {"classification", to_string(r.classification)}};
}

std::string to_string(CalibParam p) {
    switch (p) {
    case CalibParam::L0: return "L0";
    case CalibParam::L1: return "L1";
    case CalibParam::t0: return "t0";
    case CalibParam::theta: return "theta";
    case CalibParam::E0: return "E0";
    }
    return "?";
}

CalibParam calib_param_from_string(const std::string& s) {
    for (auto p : {CalibParam::L0, CalibParam::L1, CalibParam::t0, CalibParam::theta, CalibParam::E0}) {
        if (s == to_string(p)) return p;
    }
    throw ConfigError("unknown calibration parameter '" + s + "' (expected L0, L1, t0, theta or E0)");
}

double CalibrationReport::max_abs_delta(CalibParam p) const {
    const auto it = adjusted_params.find(to_string(p));
    if (it == adjusted_params.end()) return 0.0;
    double m = 0.0;
    for (double v : it->second) m = std::max(m, std::abs(v));
    return m;
}

CalibrationReport calibration_audit(const InstrumentConfig& cfg, std::span<const DetectorPeak> peaks, double assumed_M,
                                    const std::set<CalibParam>& free_params, double E_rot) {
    if (!(assumed_M > 0.0)) throw NonPositiveMass("calibration_audit: assumed mass must be positive");
    const std::size_t m = peaks.size();

    struct Slot {
        CalibParam param;
        std::size_t peak; // per-detector slots only
        double scale;
    };
    std::vector<Slot> slots;
    for (auto p : free_params) {
        const double scale = p == CalibParam::t0 ? 10.0 : p == CalibParam::theta ? 0.01 : 1.0;
        if (p == CalibParam::L0 || p == CalibParam::E0) {
            slots.push_back({p, 0, scale});
        } else {
            for (std::size_t i = 0; i < m; ++i) slots.push_back({p, i, scale});
        }
    }
    const std::size_t n = slots.size();
    if (n > m) {
        throw Underdetermined("calibration_audit: " + std::to_string(n) + " free parameters but only " +
                              std::to_string(m) + " peaks");
    }

    // Observed TOF centroids on the nominal instrument are the fixed data.
    std::vector<double> t_obs(m);
    std::vector<double> sig(m);
    for (std::size_t i = 0; i < m; ++i) {
        const Beamline bl{cfg.detectors.at(peaks[i].detector_index), cfg.beam};
        t_obs[i] = tof_at_energy(bl, peaks[i].point.E);
        sig[i] = peaks[i].point.sigma_E > 0.0 ? peaks[i].point.sigma_E : 1.0;
    }

    auto beamline = [&](const Eigen::VectorXd& p, std::size_t i) {
        DetectorGeometry g = cfg.detectors[peaks[i].detector_index];
        double E0 = cfg.beam.E0();
        for (std::size_t k = 0; k < n; ++k) {
            const auto& s = slots[k];
            const bool global = s.param == CalibParam::L0 || s.param == CalibParam::E0;
            if (!global && s.peak != i) continue;
            switch (s.param) {
            case CalibParam::L0: g.L0 += p(k); break;
            case CalibParam::L1: g.L1 += p(k); break;
            case CalibParam::t0: g.t0 += p(k); break;
            case CalibParam::theta: g.theta += p(k); break;
            case CalibParam::E0: E0 += p(k); break;
            }
        }
        return Beamline{g, NeutronBeam(E0)};
    };
    auto observations = [&](const Eigen::VectorXd& p) {
        std::vector<KEObservation> obs(m);
        for (std::size_t i = 0; i < m; ++i) obs[i] = point_at_tof(beamline(p, i), t_obs[i], peaks[i].point.sigma_E);
        return obs;
    };
    auto residuals = [&](const Eigen::VectorXd& p) {
        Eigen::VectorXd r(m);
        for (std::size_t i = 0; i < m; ++i) {
            try {
                const auto o = point_at_tof(beamline(p, i), t_obs[i], 0.0);
                r(static_cast<Eigen::Index>(i)) = (o.E - E_rot - units::C_A * o.K * o.K / assumed_M) / sig[i];
            } catch (const Error&) {
                r(static_cast<Eigen::Index>(i)) = 1e6;
            }
        }
        return r;
    };
    auto refit = [&](const std::vector<KEObservation>& obs) {
        return E_rot == 0.0 ? fit_recoil_mass(obs, assumed_M) : fit_roto_recoil(obs, assumed_M, E_rot);
    };

    CalibrationReport rep;
    rep.assumed_M = assumed_M;
    for (const auto& pk : peaks) rep.detectors.push_back(pk.detector_index);

    Eigen::VectorXd p = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    rep.nominal_mass = refit(observations(p)).M_eff;

    Eigen::VectorXd r = residuals(p);
    double chi2 = r.squaredNorm();
    if (n > 0) {
        const auto N = static_cast<Eigen::Index>(n);
        auto jacobian = [&](const Eigen::VectorXd& q) {
            Eigen::MatrixXd J(static_cast<Eigen::Index>(m), N);
            for (Eigen::Index k = 0; k < N; ++k) {
                const double h = 1e-5 * slots[static_cast<std::size_t>(k)].scale;
                Eigen::VectorXd up = q, dn = q;
                up(k) += h;
                dn(k) -= h;
                J.col(k) = (residuals(up) - residuals(dn)) / (2.0 * h);
            }
            return J;
        };
        double mu = -1.0;
        bool converged = false;
        std::size_t it = 0;
        for (; it < kMaxIterations && !converged; ++it) {
            const Eigen::MatrixXd J = jacobian(p);
            const Eigen::MatrixXd JtJ = J.transpose() * J;
            const Eigen::VectorXd Jtr = J.transpose() * r;
            if (mu < 0.0) mu = 1e-3 * JtJ.diagonal().maxCoeff();
            bool accepted = false;
            for (int inner = 0; inner < 60 && !accepted; ++inner) {
                Eigen::MatrixXd Aug = JtJ;
                for (Eigen::Index k = 0; k < N; ++k) Aug(k, k) += mu * std::max(JtJ(k, k), 1e-300);
                const Eigen::VectorXd step = -Aug.ldlt().solve(Jtr);
                const Eigen::VectorXd trial = p + step;
                const Eigen::VectorXd r_trial = residuals(trial);
                const double chi2_trial = r_trial.squaredNorm();
                if (std::isfinite(chi2_trial) && chi2_trial <= chi2) {
                    double rel = 0.0;
                    for (Eigen::Index k = 0; k < N; ++k) {
                        rel = std::max(rel, std::abs(step(k)) / slots[static_cast<std::size_t>(k)].scale);
                    }
                    p = trial;
                    r = r_trial;
                    chi2 = chi2_trial;
                    mu = std::max(mu / 3.0, 1e-300);
                    accepted = true;
                    if (rel < 1e-10 || chi2 < 1e-26) converged = true;
                } else {
                    mu *= 4.0;
                }
            }
            if (!accepted) converged = true;
        }
        if (!converged) throw NonConvergence("calibration_audit: adjustment hit the iteration cap");
        rep.iterations = it;
    }
    rep.chi2 = chi2;

    for (auto c : {CalibParam::L0, CalibParam::L1, CalibParam::t0, CalibParam::theta, CalibParam::E0}) {
        const bool global = c == CalibParam::L0 || c == CalibParam::E0;
        rep.adjusted_params[to_string(c)] = std::vector<double>(global ? 1 : m, 0.0);
    }
    for (std::size_t k = 0; k < n; ++k) {
        auto& v = rep.adjusted_params[to_string(slots[k].param)];
        v[v.size() == 1 ? 0 : slots[k].peak] = p(static_cast<Eigen::Index>(k));
    }

    const auto fit = refit(observations(p));
    rep.refit_mass = fit.M_eff;
    rep.refit_stderr = fit.M_eff_stderr;
    rep.masking_flag = std::abs(rep.refit_mass - assumed_M) <= kMaskingTolerance * assumed_M;
    return rep;
}

nlohmann::json to_json(const CalibrationReport& rep) {
    nlohmann::json deltas = nlohmann::json::object();
    for (const auto& [k, v] : rep.adjusted_params) deltas[k] = v;
    return {{"adjusted_params", deltas},
            {"detectors", rep.detectors},
            {"assumed_M", rep.assumed_M},
            {"nominal_mass", rep.nominal_mass},
            {"refit_mass", rep.refit_mass},
            {"refit_stderr", rep.refit_stderr},
            {"masking_flag", rep.masking_flag},
            {"iterations", rep.iterations},
            {"chi2", rep.chi2}};
}

std::string to_table(const CalibrationReport& rep) {
    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4g", v);
        return std::string(buf);
    };
    std::ostringstream os;
    os << "calibration audit: assumed M = " << fmt(rep.assumed_M) << " amu\n";
    os << "  nominal fit M = " << fmt(rep.nominal_mass) << ", refit M = " << fmt(rep.refit_mass) << " +- "
       << fmt(rep.refit_stderr) << "\n";
    os << "  masking: " << (rep.masking_flag ? "yes" : "no") << "\n";
    os << "  detector        dL1        dt0     dtheta\n";
    for (std::size_t i = 0; i < rep.detectors.size(); ++i) {
        char line[96];
        std::snprintf(line, sizeof line, "  %8zu %10s %10s %10s\n", rep.detectors[i],
                      fmt(rep.adjusted_params.at("L1")[i]).c_str(), fmt(rep.adjusted_params.at("t0")[i]).c_str(),
                      fmt(rep.adjusted_params.at("theta")[i]).c_str());
        os << line;
    }
    os << "  dL0 = " << fmt(rep.adjusted_params.at("L0")[0]) << ", dE0 = " << fmt(rep.adjusted_params.at("E0")[0])
       << "\n";
    return os.str();
}

} // namespace wvs
