// End-to-end acceptance checks. One PASS/FAIL line per criterion; the exit
// status is nonzero if any criterion fails.

#include "support.hpp"
#include "wvs/analysis.hpp"
#include "wvs/cli.hpp"
#include "wvs/errors.hpp"
#include "wvs/units.hpp"
#include "wvs/weakval.hpp"

#include <json.hpp>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <sstream>
#include <string>

using namespace wvs;
using units::C_A;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

int failures = 0;

void criterion(int id, const char* name, double budget_s, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o{false, ""};
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (budget_s > 0 && dt > budget_s) {
        o.pass = false;
        o.detail += "; over the " + std::to_string(budget_s) + " s budget";
    }
    if (!o.pass) ++failures;
    std::printf("%s %2d %-34s %s [%.3f s]\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), dt);
    std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// Trapezoid sums of the analytic profiles on a grid four times finer than the
// library's; shares nothing with WaveFunction.
double brute_force_pw(double hbarK, double si, double sf) {
    const std::array<GaussianSpec, 2> specs{{{0.0, si}, {hbarK, sf}}};
    const auto g = grid_for(specs);
    const std::size_t n = 4 * (g.size() - 1) + 1;
    const double dp = g.span() / static_cast<double>(n - 1);
    double num = 0, den = 0;
    for (std::size_t j = 0; j < n; ++j) {
        const double p = g.p_min() + static_cast<double>(j) * dp;
        const double w = (j == 0 || j + 1 == n) ? 0.5 * dp : dp;
        const double f = std::exp(-p * p / (4 * si * si) - (p - hbarK) * (p - hbarK) / (4 * sf * sf));
        num += w * p * f;
        den += w * f;
    }
    return num / den;
}

std::vector<DetectorPeak> measured_peaks(const InstrumentConfig& cfg, const std::vector<Spectrum>& spectra) {
    std::vector<DetectorPeak> peaks;
    for (const auto& s : spectra) peaks.push_back(measure_peak(cfg, s));
    return peaks;
}

} // namespace

int main() {
    criterion(1, "plane-wave limit", 1.0, [] {
        const double hbarK = 4.0;
        const std::array<double, 3> ratios{1e-1, 1e-2, 1e-3};
        std::array<double, 3> d{};
        for (std::size_t i = 0; i < ratios.size(); ++i) {
            const auto s = scenario(ScenarioKind::B_narrow_final, 1.0, hbarK, ratios[i]);
            d[i] = momentum_deficit(s.pre, s.post, hbarK) / hbarK;
        }
        const auto a = scenario(ScenarioKind::A_plane_wave, 1.0, hbarK);
        const double dA = momentum_deficit(a.pre, a.post, hbarK) / hbarK;
        const double order = std::log(d[1] / d[2]) / std::log(ratios[1] / ratios[2]);
        // Exact asymptotic order is 2; r^2/(1+r^2) sits a hair below it at any finite r.
        const bool ok = dA < 1e-5 && order >= 2.0 - 1e-2;
        return Outcome{ok, fmt("deficit/hbarK=%.3e at ratio 1e-3, observed order %.5f", dA, order)};
    });

    criterion(2, "equal-width exactness", 1.0, [] {
        double worst = 0;
        for (double sigma : {0.5, 1.0, 2.0}) {
            for (double hbarK : {1.0, 4.0}) {
                const auto s = scenario(ScenarioKind::C_equal_width, sigma, hbarK);
                worst = std::max(worst, std::abs(weak_value(s.pre, s.post).value.real() - hbarK / 2));
            }
        }
        return Outcome{worst <= 1e-10, fmt("max |Re P_w - hbarK/2| = %.2e over 3 widths x 2 transfers", worst)};
    });

    criterion(3, "Gaussian oracle sweep", 10.0, [] {
        double worst_closed = 0, worst_brute = 0;
        for (int i = 0; i < 10; ++i) {
            const double ratio = 0.05 + 0.95 * i / 9.0;
            for (int k = 0; k < 10; ++k) {
                const double si = 0.7, hbarK = si * (0.1 + 2.9 * k / 9.0), sf = ratio * si;
                const auto s = scenario(ScenarioKind::B_narrow_final, si, hbarK, ratio);
                const double pw = weak_value(s.pre, s.post).value.real();
                const double closed = hbarK * si * si / (si * si + sf * sf);
                worst_closed = std::max(worst_closed, std::abs(pw / closed - 1));
                worst_brute = std::max(worst_brute, std::abs(pw / brute_force_pw(hbarK, si, sf) - 1));
            }
        }
        const bool ok = worst_closed <= 1e-8 && worst_brute <= 1e-8;
        return Outcome{ok, fmt("max rel err %.2e (closed form), %.2e (4x quadrature)", worst_closed, worst_brute)};
    });

    criterion(4, "narrow-final positivity", 0.0, [] {
        std::mt19937_64 rng(4);
        std::uniform_real_distribution<double> si(0.2, 3.0), r(0.01, 1.0), u(0.05, 4.0);
        int positive = 0;
        double smallest = 1e300;
        for (int i = 0; i < 100; ++i) {
            const double sigma_i = si(rng), hbarK = u(rng) * sigma_i;
            const auto s = scenario(ScenarioKind::B_narrow_final, sigma_i, hbarK, r(rng));
            const double d = momentum_deficit(s.pre, s.post, hbarK);
            if (d > 0) ++positive;
            smallest = std::min(smallest, d / hbarK);
        }
        return Outcome{positive == 100, fmt("%d/100 positive, smallest deficit/hbarK %.3e", positive, smallest)};
    });

    criterion(5, "coupling sign flip", 0.0, [] {
        std::mt19937_64 rng(5);
        std::uniform_real_distribution<double> lam(1e-4, 1.0), r(0.05, 1.0), k(0.2, 6.0);
        int ok = 0;
        for (int i = 0; i < 100; ++i) {
            const double l = lam(rng), ratio = r(rng), hbarK = k(rng);
            const auto plus = run_scenario(ScenarioKind::B_narrow_final, 1.0, CouplingModel(l, hbarK), ratio);
            const auto flip =
                run_scenario(ScenarioKind::B_narrow_final, 1.0, CouplingModel(l, hbarK, CouplingSign::minus_mu), ratio);
            const bool same = std::memcmp(&plus.P_w, &flip.P_w, sizeof plus.P_w) == 0;
            const double tp = total_momentum_transfer(CouplingModel(l, hbarK), plus.deficit);
            const double tf = total_momentum_transfer(CouplingModel(l, hbarK, CouplingSign::minus_mu), flip.deficit);
            if (same && std::abs(tp) <= hbarK && std::abs(tf) >= hbarK) ++ok;
        }
        return Outcome{ok == 100, fmt("%d/100 draws: identical P_w bits, |plus| <= hbarK <= |minus_mu|", ok)};
    });

    criterion(6, "S_IA sum rule and center", 5.0, [] {
        double worst_area = 0, worst_center = 0;
        for (double M : {1.0079, 2.01, 4.0026, 12.0}) {
            const auto nP = momentum_density(gaussian_sample(M, 1.0).momentum_dist);
            for (double K : {2.7, 6.0, 12.0, 25.0}) {
                const double Erec = recoil_energy(K, M), w = 2 * C_A * K / M;
                const double bin = w / 20;
                double area = 0, m1 = 0;
                for (double E = Erec - 12 * w; E <= Erec + 12 * w; E += bin) {
                    const double s = s_ia_at(K, E + 0.5 * bin, nP, M);
                    area += s * bin;
                    m1 += (E + 0.5 * bin) * s * bin;
                }
                worst_area = std::max(worst_area, std::abs(area - 1));
                worst_center = std::max(worst_center, std::abs(m1 / area - Erec) / bin);
            }
        }
        const bool ok = worst_area <= 1e-6 && worst_center <= 0.5;
        return Outcome{ok, fmt("max |area-1| %.2e, max centroid offset %.2e bins", worst_area, worst_center)};
    });

    criterion(7, "rotational-line kinematics", 0.0, [] {
        const double E = recoil_energy(2.7, 1.0079);
        const double rel = std::abs(E / 14.7 - 1);
        return Outcome{rel <= 0.05, fmt("E_rec(2.7, 1.0079) = %.3f meV, %.2f%% from 14.7 meV", E, 100 * rel)};
    });

    criterion(8, "effective-mass recovery", 60.0, [] {
        const auto cfg = testing::forward_bank();
        const auto sample = gaussian_sample(testing::kD2Mass, testing::kD2Sigma, testing::kRotLine,
                                            DeficitInjection{testing::kD2Lambda, 1.0});
        const auto expected = simulate_all(cfg, sample);
        int within = 0;
        double sum_M = 0, sum_frac = 0;
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            std::vector<KEObservation> pts;
            for (const auto& sp : expected) {
                pts.push_back(measure_peak(cfg, poisson_sample(sp, 10000, seed * 1000 + sp.detector_index)).point);
            }
            const auto fit = fit_roto_recoil(pts, testing::kD2Mass);
            if (std::abs(fit.M_eff - 0.64) <= 0.07) ++within;
            sum_M += fit.M_eff;
            sum_frac += deficit_report(fit, testing::kD2Mass).deficit_fraction;
        }
        const double frac = sum_frac / 100;
        const bool ok = within >= 95 && std::abs(frac + 0.43) <= 0.02;
        return Outcome{ok, fmt("%d/100 seeds within 0.64+-0.07 (mean %.4f), deficit %.1f%% on %zu detectors", within,
                               sum_M / 100, 100 * frac, cfg.detectors.size())};
    });

    criterion(9, "strong-coupling extrapolation", 0.0, [] {
        const char* argv[] = {"wvs", "weakvalue", "--case", "C", "--sigma-i", "1", "--hbarK", "4", "--lambda", "1"};
        std::ostringstream out, err;
        const int code = run_cli(10, argv, out, err);
        if (code != 0) return Outcome{false, "exit code " + std::to_string(code) + ": " + err.str()};
        const auto j = nlohmann::json::parse(out.str());
        const double f = j.at("deficit_fraction").get<double>();
        return Outcome{std::abs(f + 0.5) <= 1e-12, fmt("deficit_fraction %.15f, total_transfer %.12f", f,
                                                        j.at("total_transfer").get<double>())};
    });

    criterion(10, "conventional binding direction", 0.0, [] {
        std::mt19937_64 rng(10);
        std::uniform_real_distribution<double> frac(0.001, 0.3), mass(0.5, 20.0);
        int heavier = 0;
        for (int i = 0; i < 100; ++i) {
            const double M = mass(rng);
            std::vector<KEObservation> pts;
            for (double K = 3.0; K <= 15.0; K += 1.5) {
                const double Erec = recoil_energy(K, M);
                pts.push_back({K, Erec - frac(rng) * Erec, 0.0, 0.0}); // kinetic part after E_int > 0
            }
            if (fit_recoil_mass(pts, M).M_eff > M) ++heavier;
        }
        return Outcome{heavier == 100, fmt("%d/100 draws with E_int > 0 fit M_eff > M_free", heavier)};
    });

    criterion(11, "calibration masking", 0.0, [] {
        const auto cfg = testing::forward_bank();
        const auto sample = gaussian_sample(testing::kD2Mass, testing::kD2Sigma, testing::kRotLine,
                                            DeficitInjection{testing::kD2Lambda, 1.0});
        const auto peaks = measured_peaks(cfg, simulate_all(cfg, sample));
        const auto t0 = calibration_audit(cfg, peaks, testing::kD2Mass, {CalibParam::t0}, testing::kRotLine);
        const auto none = calibration_audit(cfg, peaks, testing::kD2Mass, {}, testing::kRotLine);
        const double rel = std::abs(t0.refit_mass / testing::kD2Mass - 1);
        const bool ok = t0.masking_flag && rel <= 0.01 && !none.masking_flag;
        return Outcome{ok, fmt("free t0: flag %d, refit %.4f (max |dt0| %.2f us); none: flag %d, refit %.4f",
                               t0.masking_flag, t0.refit_mass, t0.max_abs_delta(CalibParam::t0), none.masking_flag,
                               none.refit_mass)};
    });

    criterion(12, "TOF round trip", 0.0, [] {
        std::mt19937_64 rng(12);
        std::uniform_real_distribution<double> v(200.0, 8000.0), L(1.0, 30.0), t0(-50.0, 50.0);
        double worst = 0;
        for (int i = 0; i < 1000; ++i) {
            const DetectorGeometry g{L(rng), L(rng), 1.0, t0(rng)};
            const NeutronBeam beam(units::energy_from_k(units::k_from_speed(v(rng))));
            const double v1 = v(rng);
            worst = std::max(worst, std::abs(invert_tof(g, beam, tof(g, beam.v0(), v1)) / v1 - 1));
        }
        return Outcome{worst <= 1e-12, fmt("max relative error %.2e over 1000 configurations", worst)};
    });

    std::printf("%d of 12 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
