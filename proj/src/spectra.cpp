#include "wvs/spectra.hpp"

#include "wvs/errors.hpp"
#include "wvs/units.hpp"
#include "wvs/weakval.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/tools/roots.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <random>

namespace wvs {

namespace {

double catmull_rom(std::span<const double> y, double x) {
    const auto n = static_cast<long>(y.size());
    const long i = static_cast<long>(std::floor(x));
    const double t = x - static_cast<double>(i);
    auto at = [&](long k) { return (k < 0 || k >= n) ? 0.0 : y[static_cast<std::size_t>(k)]; };
    const double p0 = at(i - 1), p1 = at(i), p2 = at(i + 1), p3 = at(i + 2);
    return 0.5 * ((2.0 * p1) + (-p0 + p2) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t +
                  (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t);
}

const MomentumGrid& source_grid(const MomentumSource& src) {
    return std::visit([](const auto& s) -> const MomentumGrid& { return s.grid(); }, src);
}

double source_mean(const MomentumSource& src) {
    return std::visit([](const auto& s) { return expectation_P(s); }, src);
}

// Neutron-side quantities at TOF t (us) for one detector.
struct TofState {
    double k1;
    double E;
    double K;
    double dE_dt; // meV per us, positive
};

TofState tof_state(const DetectorGeometry& geom, const NeutronBeam& beam, double t) {
    const double v1 = invert_tof(geom, beam, t);
    const double k1 = units::k_from_speed(v1);
    TofState s;
    s.k1 = k1;
    s.E = energy_transfer(beam.k0(), k1);
    s.K = k_transfer(beam.k0(), k1, geom.theta);
    s.dE_dt = 2.0 * units::C_E * k1 * v1 * v1 / (geom.L1 * units::C_v) / units::us_per_s;
    return s;
}

double atom_transfer(const DeficitProfile* profile, double K) {
    return profile ? profile->atom_transfer(K) : K;
}

double bin_intensity(const InstrumentConfig& cfg, const SampleModel& sample, const DetectorGeometry& geom,
                     const MomentumDensity& nP, const DeficitProfile* profile, double t_lo, double t_hi) {
    auto integrand = [&](double t) {
        const auto s = tof_state(geom, cfg.beam, t);
        const double K_atom = atom_transfer(profile, s.K);
        if (!(K_atom > 0.0)) return 0.0;
        return (s.k1 / cfg.beam.k0()) * s_ia_at(K_atom, s.E - sample.E_rot, nP, sample.M) * s.dE_dt;
    };
    return boost::math::quadrature::gauss<double, 7>::integrate(integrand, t_lo, t_hi);
}

std::unique_ptr<DeficitProfile> make_profile(const InstrumentConfig& cfg, const SampleModel& sample) {
    if (!sample.deficit) return nullptr;
    double K_max = 0.0;
    for (std::size_t d = 0; d < cfg.detectors.size(); ++d) {
        for (const auto& p : detector_trajectory(cfg, d)) {
            if (p.valid) K_max = std::max(K_max, p.ke.K);
        }
    }
    // K_A <= K/(1 - lambda/2) for symmetric post-selections no wider than the
    // initial state; 2.5x leaves headroom.
    return std::make_unique<DeficitProfile>(sample.momentum_dist, *sample.deficit, std::max(2.5 * K_max, 1.0));
}

Spectrum simulate_with_profile(const InstrumentConfig& cfg, const SampleModel& sample, std::size_t d,
                               const MomentumDensity& nP, const DeficitProfile* profile) {
    if (d >= cfg.detectors.size()) throw InvalidGeometry("simulate_spectrum: detector index out of range");
    const auto& geom = cfg.detectors[d];
    const auto edges = cfg.tof_bins.edges();
    const double t_first = geom.t0 + geom.L0 / cfg.beam.v0() * units::us_per_s;
    if (!(edges.front() > t_first)) {
        throw UnphysicalTOF("simulate_spectrum: TOF range starts before the incident flight time on detector " +
                            std::to_string(d));
    }
    Spectrum out;
    out.detector_index = d;
    out.bin_edges = edges;
    out.counts.resize(cfg.tof_bins.n_bins);
    for (std::size_t i = 0; i < out.counts.size(); ++i) {
        out.counts[i] = std::max(0.0, bin_intensity(cfg, sample, geom, nP, profile, edges[i], edges[i + 1]));
    }
    out.metadata = {
        {"schema", 1},
        {"detector_index", d},
        {"seed", nullptr},
        {"model", sample_summary(sample)},
        {"tof_bins", {{"t_min", cfg.tof_bins.t_min}, {"t_max", cfg.tof_bins.t_max}, {"n_bins", cfg.tof_bins.n_bins}}},
        {"detector", {{"L0", geom.L0}, {"L1", geom.L1}, {"theta", geom.theta}, {"t0", geom.t0}}},
        {"E0", cfg.beam.E0()},
    };
    if (profile && profile->extrapolated_above()) {
        out.metadata["model"]["deficit_extrapolated_above_K"] = *profile->extrapolated_above();
    }
    return out;
}

} // namespace

void TofBinning::validate() const {
    if (!(t_min < t_max)) throw InvalidGeometry("TOF binning requires t_min < t_max");
    if (n_bins < 16) throw InvalidGeometry("TOF binning requires at least 16 bins");
}

std::vector<double> TofBinning::edges() const {
    std::vector<double> e(n_bins + 1);
    for (std::size_t i = 0; i <= n_bins; ++i) e[i] = t_min + static_cast<double>(i) * width();
    e.back() = t_max;
    return e;
}

void InstrumentConfig::validate() const {
    if (detectors.empty()) throw InvalidGeometry("instrument needs at least one detector");
    for (const auto& d : detectors) d.validate();
    tof_bins.validate();
}

InstrumentConfig InstrumentConfig::preset() {
    InstrumentConfig cfg;
    cfg.beam = NeutronBeam(90.0);
    for (int deg = 10; deg <= 130; deg += 5) {
        cfg.detectors.push_back({11.6, 4.0, units::deg(deg), 0.0});
    }
    cfg.tof_bins = {3300.0, 7000.0, 740};
    return cfg;
}

void SampleModel::validate() const {
    if (!(M > 0.0)) throw NonPositiveMass("sample mass must be positive");
    if (!(E_rot >= 0.0)) throw NonPositiveInput("E_rot must be nonnegative");
    if (std::abs(source_mean(momentum_dist)) > 1e-6) {
        throw BadCentering("sample momentum distribution must be centered at 0");
    }
    if (deficit) {
        if (!(deficit->lambda > 0.0 && deficit->lambda <= 1.0)) {
            throw InvalidCoupling("deficit lambda must lie in (0, 1]");
        }
        if (!(deficit->width_ratio > 0.0 && deficit->width_ratio <= 1.0)) {
            throw InvalidCoupling("deficit width_ratio must lie in (0, 1]");
        }
    }
}

SampleModel gaussian_sample(double M, double sigma_P, double E_rot, std::optional<DeficitInjection> deficit) {
    const std::array<GaussianSpec, 1> spec{{{0.0, sigma_P}}};
    const auto grid = grid_for(spec, 16.0);
    SampleModel s{M, gaussian_state(grid, 0.0, sigma_P), E_rot, deficit};
    s.validate();
    return s;
}

double Spectrum::total() const { return std::accumulate(counts.begin(), counts.end(), 0.0); }

MomentumDensity::MomentumDensity(MomentumGrid grid, std::vector<double> values)
    : grid_(grid), values_(std::move(values)) {
    if (values_.size() != grid_.size()) throw GridMismatch("density size does not match grid");
}

double MomentumDensity::operator()(double P) const {
    if (P < grid_.p_min() || P > grid_.p_max()) return 0.0;
    return std::max(0.0, catmull_rom(values_, (P - grid_.p_min()) / grid_.spacing()));
}

double MomentumDensity::integral() const {
    double s = 0.0;
    for (std::size_t j = 0; j < values_.size(); ++j) s += grid_.weight(j) * values_[j];
    return s;
}

double MomentumDensity::mean() const {
    double s = 0.0;
    for (std::size_t j = 0; j < values_.size(); ++j) s += grid_.weight(j) * grid_.node(j) * values_[j];
    return s / integral();
}

double MomentumDensity::stddev() const {
    const double m = mean();
    double s = 0.0;
    for (std::size_t j = 0; j < values_.size(); ++j) {
        const double d = grid_.node(j) - m;
        s += grid_.weight(j) * d * d * values_[j];
    }
    return std::sqrt(s / integral());
}

MomentumDensity momentum_density(const WaveFunction& state) {
    if (!state.is_normalized(1e-6)) throw NotNormalized("momentum_density: state is not normalized");
    return MomentumDensity(state.grid(), state.density());
}

MomentumDensity momentum_density(const MixedState& state) {
    std::vector<double> total(state.grid().size(), 0.0);
    for (const auto& c : state.components()) {
        if (!c.state.is_normalized(1e-6)) throw NotNormalized("momentum_density: component is not normalized");
        const auto d = c.state.density();
        for (std::size_t j = 0; j < d.size(); ++j) total[j] += c.weight * d[j];
    }
    return MomentumDensity(state.grid(), std::move(total));
}

MomentumDensity momentum_density(const MomentumSource& source) {
    return std::visit([](const auto& s) { return momentum_density(s); }, source);
}

double s_ia_at(double K, double E, const MomentumDensity& nP, double M) {
    if (!(K > 0.0)) throw NonPositiveK("s_ia: K must be positive");
    if (!(M > 0.0)) throw NonPositiveMass("s_ia: mass must be positive");
    const double jac = M / (2.0 * units::C_A * K); // dP*/dE
    const double P_star = (M * E - units::C_A * K * K) / (2.0 * units::C_A * K);
    return nP(P_star) * jac;
}

std::vector<double> s_ia(double K, std::span<const double> energies, const MomentumDensity& nP, double M) {
    std::vector<double> out(energies.size());
    for (std::size_t i = 0; i < energies.size(); ++i) out[i] = s_ia_at(K, energies[i], nP, M);
    return out;
}

std::vector<TrajectoryPoint> detector_trajectory(const InstrumentConfig& cfg, std::size_t d) {
    if (d >= cfg.detectors.size()) throw InvalidGeometry("detector index out of range");
    const auto& geom = cfg.detectors[d];
    std::vector<TrajectoryPoint> out(cfg.tof_bins.n_bins);
    for (std::size_t i = 0; i < out.size(); ++i) {
        auto& p = out[i];
        p.tof = cfg.tof_bins.center(i);
        try {
            const auto s = tof_state(geom, cfg.beam, p.tof);
            p.k1 = s.k1;
            p.ke = {s.K, s.E};
            p.valid = true;
        } catch (const UnphysicalTOF&) {
            p.valid = false;
        }
    }
    return out;
}

DeficitProfile::DeficitProfile(const MomentumSource& pre, DeficitInjection injection, double K_max)
    : injection_(injection), K_max_(K_max), dK_(0.0) {
    constexpr std::size_t kNodes = 128;
    if (!(K_max > 0.0)) throw NonPositiveK("deficit profile needs K_max > 0");
    dK_ = K_max / static_cast<double>(kNodes);
    const double sigma_pre = momentum_density(pre).stddev();
    const double sigma_post = injection.width_ratio * sigma_pre;

    table_.assign(kNodes + 1, 0.0);
    std::size_t last_good = 0;
    for (std::size_t j = 1; j <= kNodes; ++j) {
        const double K = static_cast<double>(j) * dK_;
        const double lo = std::min(source_grid(pre).p_min(), -10.0 * sigma_pre);
        const double hi = std::max(source_grid(pre).p_max(), K + 10.0 * sigma_pre);
        const std::array<GaussianSpec, 3> specs{{{0.0, sigma_pre}, {K, sigma_post}, {0.5 * (lo + hi), 0.05 * (hi - lo)}}};
        const auto grid = grid_for(specs);
        const auto post = gaussian_state(grid, K, sigma_post);
        // Pre and post are positive profiles here, so the quotient has no
        // cancellation even when the overlap is tiny; only underflow stops it.
        double pw = std::numeric_limits<double>::quiet_NaN();
        if (const auto* wf = std::get_if<WaveFunction>(&pre)) {
            pw = try_weak_value(resample(*wf, grid), post, Observable::momentum(), 0.0).value.real();
        } else {
            const auto& mix = std::get<MixedState>(pre);
            std::vector<MixedState::Component> comps;
            for (const auto& c : mix.components()) comps.push_back({c.weight, resample(c.state, grid)});
            try {
                pw = weak_value_mixed(MixedState(std::move(comps)), post, Observable::momentum(), 0.0).value.real();
            } catch (const OrthogonalSelection&) {
            }
        }
        if (!std::isfinite(pw)) {
            if (last_good == 0) throw OrthogonalSelection("deficit profile: overlap underflow at the first node", 0.0);
            extrapolated_above_ = static_cast<double>(last_good) * dK_;
            const double slope = table_[last_good] / (static_cast<double>(last_good) * dK_);
            for (std::size_t k = j; k <= kNodes; ++k) table_[k] = slope * static_cast<double>(k) * dK_;
            break;
        }
        table_[j] = K - pw;
        last_good = j;
    }
}

double DeficitProfile::deficit(double K_atom) const {
    const double x = K_atom / dK_;
    const auto last = static_cast<double>(table_.size() - 1);
    if (x <= last - 1.0) return catmull_rom(table_, x);
    const double slope = (table_.back() - table_[table_.size() - 2]) / dK_;
    return table_.back() + slope * (K_atom - K_max_);
}

double DeficitProfile::atom_transfer(double K_recorded) const {
    double x = K_recorded;
    for (int it = 0; it < 500; ++it) {
        const double next = K_recorded + injection_.lambda * deficit(x);
        if (std::abs(next - x) <= 1e-13 * std::max(1.0, std::abs(x))) return next;
        x = next;
    }
    throw NonConvergence("deficit profile: K_A = K + lambda*pi(K_A) did not converge");
}

Spectrum simulate_spectrum(const InstrumentConfig& cfg, const SampleModel& sample, std::size_t d) {
    cfg.validate();
    sample.validate();
    const auto nP = momentum_density(sample.momentum_dist);
    const auto profile = make_profile(cfg, sample);
    return simulate_with_profile(cfg, sample, d, nP, profile.get());
}

std::vector<Spectrum> simulate_all(const InstrumentConfig& cfg, const SampleModel& sample) {
    cfg.validate();
    sample.validate();
    const auto nP = momentum_density(sample.momentum_dist);
    const auto profile = make_profile(cfg, sample);
    std::vector<Spectrum> out;
    out.reserve(cfg.detectors.size());
    for (std::size_t d = 0; d < cfg.detectors.size(); ++d) {
        out.push_back(simulate_with_profile(cfg, sample, d, nP, profile.get()));
    }
    return out;
}

Spectrum poisson_sample(const Spectrum& expected, std::uint64_t total_counts, std::uint64_t seed) {
    Spectrum out = expected;
    out.metadata["seed"] = seed;
    out.metadata["total_counts"] = total_counts;
    const double sum = expected.total();
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < out.counts.size(); ++i) {
        const double mean = sum > 0.0 ? expected.counts[i] * static_cast<double>(total_counts) / sum : 0.0;
        if (mean > 0.0) {
            std::poisson_distribution<long long> dist(mean);
            out.counts[i] = static_cast<double>(dist(rng));
        } else {
            out.counts[i] = 0.0;
        }
    }
    return out;
}

std::optional<LocusPoint> peak_locus(const InstrumentConfig& cfg, const SampleModel& sample, std::size_t d) {
    const auto profile = make_profile(cfg, sample);
    const auto& geom = cfg.detectors.at(d);
    auto g = [&](double t) {
        const auto s = tof_state(geom, cfg.beam, t);
        const double K_atom = atom_transfer(profile.get(), s.K);
        return s.E - sample.E_rot - units::C_A * K_atom * K_atom / sample.M;
    };
    const auto edges = cfg.tof_bins.edges();
    double t_prev = 0.0;
    double g_prev = 0.0;
    bool have_prev = false;
    for (double t : edges) {
        double gt;
        try {
            gt = g(t);
        } catch (const UnphysicalTOF&) {
            have_prev = false;
            continue;
        }
        if (have_prev && g_prev < 0.0 && gt >= 0.0) {
            boost::uintmax_t max_iter = 200;
            const auto [a, b] = boost::math::tools::toms748_solve(
                g, t_prev, t, g_prev, gt, boost::math::tools::eps_tolerance<double>(50), max_iter);
            const double tc = 0.5 * (a + b);
            const auto s = tof_state(geom, cfg.beam, tc);
            return LocusPoint{tc, {s.K, s.E}, atom_transfer(profile.get(), s.K)};
        }
        t_prev = t;
        g_prev = gt;
        have_prev = true;
    }
    return std::nullopt;
}

nlohmann::json sample_summary(const SampleModel& sample) {
    nlohmann::json j = {
        {"M", sample.M},
        {"E_rot", sample.E_rot},
        {"momentum_sigma", momentum_density(sample.momentum_dist).stddev()},
        {"deficit", nullptr},
    };
    if (sample.deficit) {
        j["deficit"] = {{"lambda", sample.deficit->lambda}, {"width_ratio", sample.deficit->width_ratio}};
    }
    return j;
}

} // namespace wvs
