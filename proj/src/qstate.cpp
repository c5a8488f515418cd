#include "wvs/qstate.hpp"

#include "wvs/errors.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <numbers>
#include <sstream>

namespace wvs {

namespace {

constexpr double kNormTolerance = 1e-6;

std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

void require_same_grid(const MomentumGrid& a, const MomentumGrid& b) {
    if (!(a == b)) {
        throw GridMismatch("states live on different momentum grids");
    }
}

// FFTW's planner is not re-entrant.
std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

std::vector<complex> fourier_shift(std::span<const complex> in, double samples) {
    const int n = static_cast<int>(in.size());
    std::vector<complex> spec(in.size());
    std::vector<complex> out(in.size());
    auto* spec_ptr = reinterpret_cast<fftw_complex*>(spec.data());
    auto* out_ptr = reinterpret_cast<fftw_complex*>(out.data());
    std::vector<complex> scratch(in.begin(), in.end());
    auto* in_ptr = reinterpret_cast<fftw_complex*>(scratch.data());

    fftw_plan fwd;
    fftw_plan bwd;
    {
        std::lock_guard lock(fftw_planner_mutex());
        fwd = fftw_plan_dft_1d(n, in_ptr, spec_ptr, FFTW_FORWARD, FFTW_ESTIMATE);
        bwd = fftw_plan_dft_1d(n, spec_ptr, out_ptr, FFTW_BACKWARD, FFTW_ESTIMATE);
    }
    fftw_execute(fwd);

    const double two_pi = 2.0 * std::numbers::pi;
    for (int m = 0; m < n; ++m) {
        const int freq = (m <= n / 2) ? m : m - n;
        if (n % 2 == 0 && m == n / 2) {
            // Nyquist bin: keep the symmetric (real) part of the ramp.
            spec[m] *= std::cos(std::numbers::pi * samples);
            continue;
        }
        const double phase = -two_pi * freq * samples / n;
        spec[m] *= complex(std::cos(phase), std::sin(phase));
    }
    fftw_execute(bwd);

    {
        std::lock_guard lock(fftw_planner_mutex());
        fftw_destroy_plan(fwd);
        fftw_destroy_plan(bwd);
    }
    const double inv_n = 1.0 / n;
    for (auto& v : out) v *= inv_n;
    return out;
}

complex catmull_rom(std::span<const complex> y, double x) {
    const auto n = static_cast<long>(y.size());
    const long i = static_cast<long>(std::floor(x));
    const double t = x - static_cast<double>(i);
    auto at = [&](long k) -> complex { return (k < 0 || k >= n) ? complex{} : y[static_cast<std::size_t>(k)]; };
    const complex p0 = at(i - 1), p1 = at(i), p2 = at(i + 1), p3 = at(i + 2);
    return 0.5 * ((2.0 * p1) + (-p0 + p2) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t +
                  (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t);
}

} // namespace

MomentumGrid::MomentumGrid(double p_min, double p_max, std::size_t n_points)
    : p_min_(p_min), p_max_(p_max), n_(n_points), dp_(0.0) {
    if (!(p_min < p_max) || !std::isfinite(p_min) || !std::isfinite(p_max)) {
        throw InvalidGrid("momentum grid requires p_min < p_max");
    }
    if (n_points < 8) {
        throw InvalidGrid("momentum grid requires at least 8 points");
    }
    dp_ = (p_max - p_min) / static_cast<double>(n_points - 1);
}

std::vector<double> MomentumGrid::nodes() const {
    std::vector<double> out(n_);
    for (std::size_t j = 0; j < n_; ++j) out[j] = node(j);
    return out;
}

MomentumGrid grid_for(std::span<const GaussianSpec> profiles, double points_per_sigma) {
    if (profiles.empty()) throw InvalidGrid("grid_for needs at least one profile");
    double sigma_max = 0.0;
    double sigma_min = std::numeric_limits<double>::infinity();
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& p : profiles) {
        if (!(p.sigma > 0.0)) throw NonPositiveSigma("profile sigma must be positive");
        sigma_max = std::max(sigma_max, p.sigma);
        sigma_min = std::min(sigma_min, p.sigma);
        lo = std::min(lo, p.center);
        hi = std::max(hi, p.center);
    }
    lo -= 10.0 * sigma_max;
    hi += 10.0 * sigma_max;
    const double dp_target = sigma_min / points_per_sigma;
    const auto needed = static_cast<std::size_t>(std::ceil((hi - lo) / dp_target)) + 1;
    const std::size_t n = std::bit_ceil(std::max<std::size_t>(needed, 1024));
    return MomentumGrid(lo, hi, n);
}

WaveFunction::WaveFunction(MomentumGrid grid, std::vector<complex> amplitudes,
                           std::optional<GaussianDescriptor> descriptor)
    : grid_(grid), amplitudes_(std::move(amplitudes)), descriptor_(descriptor) {
    if (amplitudes_.size() != grid_.size()) {
        throw GridMismatch("amplitude count does not match grid size");
    }
    if (descriptor_ && !(descriptor_->sigma > 0.0)) {
        throw NonPositiveSigma("Gaussian descriptor sigma must be positive");
    }
}

double WaveFunction::norm_squared() const {
    double s = 0.0;
    for (std::size_t j = 0; j < amplitudes_.size(); ++j) s += grid_.weight(j) * std::norm(amplitudes_[j]);
    return s;
}

WaveFunction WaveFunction::normalized() const {
    const double n2 = norm_squared();
    if (!(n2 > 0.0)) throw NotNormalized("cannot normalize a zero state");
    const double scale = 1.0 / std::sqrt(n2);
    std::vector<complex> amps(amplitudes_.begin(), amplitudes_.end());
    for (auto& a : amps) a *= scale;
    return WaveFunction(grid_, std::move(amps), descriptor_);
}

bool WaveFunction::is_normalized(double tol) const { return std::abs(norm_squared() - 1.0) <= tol; }

std::vector<double> WaveFunction::density() const {
    std::vector<double> d(amplitudes_.size());
    std::transform(amplitudes_.begin(), amplitudes_.end(), d.begin(), [](complex a) { return std::norm(a); });
    return d;
}

MixedState::MixedState(std::vector<Component> components) : components_(std::move(components)) {
    if (components_.empty()) throw InvalidMixture("mixed state needs at least one component");
    double total = 0.0;
    for (const auto& c : components_) {
        if (!(c.weight >= 0.0)) throw InvalidMixture("mixture weights must be nonnegative");
        require_same_grid(c.state.grid(), components_.front().state.grid());
        total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-10) throw InvalidMixture("mixture weights must sum to 1");
}

WaveFunction gaussian_state(const MomentumGrid& grid, double center, double sigma, double phase) {
    if (!(sigma > 0.0)) throw NonPositiveSigma("gaussian_state: sigma must be positive");
    if (!grid.contains(center - 5.0 * sigma, center + 5.0 * sigma)) {
        throw GridTooNarrow("gaussian_state: center +- 5 sigma exceeds the grid");
    }
    std::vector<complex> amps(grid.size());
    const complex global = std::polar(1.0, phase);
    const double inv4s2 = 1.0 / (4.0 * sigma * sigma);
    for (std::size_t j = 0; j < grid.size(); ++j) {
        const double d = grid.node(j) - center;
        amps[j] = global * std::exp(-d * d * inv4s2);
    }
    return WaveFunction(grid, std::move(amps), GaussianDescriptor{center, sigma, phase}).normalized();
}

complex inner_product(const WaveFunction& bra, const WaveFunction& ket) {
    require_same_grid(bra.grid(), ket.grid());
    const auto& g = bra.grid();
    const auto a = bra.amplitudes();
    const auto b = ket.amplitudes();
    complex s{};
    for (std::size_t j = 0; j < g.size(); ++j) s += g.weight(j) * std::conj(a[j]) * b[j];
    return s;
}

double expectation_P(const WaveFunction& state) {
    if (!state.is_normalized(kNormTolerance)) throw NotNormalized("expectation_P: state is not normalized");
    const auto& g = state.grid();
    const auto a = state.amplitudes();
    double s = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) s += g.weight(j) * g.node(j) * std::norm(a[j]);
    return s;
}

double expectation_P(const MixedState& state) {
    double s = 0.0;
    for (const auto& c : state.components()) s += c.weight * expectation_P(c.state);
    return s;
}

double variance_P(const WaveFunction& state) {
    const double mean = expectation_P(state);
    const auto& g = state.grid();
    const auto a = state.amplitudes();
    double s = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) {
        const double d = g.node(j) - mean;
        s += g.weight(j) * d * d * std::norm(a[j]);
    }
    return s;
}

WaveFunction shift(const WaveFunction& state, double dP) {
    if (dP == 0.0) return state;
    const auto& g = state.grid();
    if (const auto& desc = state.descriptor()) {
        const double c = desc->center + dP;
        if (!g.contains(c - 5.0 * desc->sigma, c + 5.0 * desc->sigma)) {
            throw GridTooNarrow("shift: shifted 5 sigma window leaves the grid");
        }
        return gaussian_state(g, c, desc->sigma, desc->phase);
    }
    if (!(std::abs(dP) < g.span() / 4.0)) {
        throw GridTooNarrow("shift: tabulated shift must stay below a quarter of the grid span");
    }
    auto amps = fourier_shift(state.amplitudes(), dP / g.spacing());
    return WaveFunction(g, std::move(amps));
}

std::pair<WaveFunction, WaveFunction> apply_impulse(const WaveFunction& neutron, const WaveFunction& atom,
                                                    double hbarK) {
    return {shift(neutron, -hbarK), shift(atom, +hbarK)};
}

WaveFunction resample(const WaveFunction& state, const MomentumGrid& grid) {
    if (const auto& desc = state.descriptor()) {
        return gaussian_state(grid, desc->center, desc->sigma, desc->phase);
    }
    const auto& src = state.grid();
    std::vector<complex> amps(grid.size());
    for (std::size_t j = 0; j < grid.size(); ++j) {
        const double p = grid.node(j);
        if (p < src.p_min() || p > src.p_max()) continue;
        amps[j] = catmull_rom(state.amplitudes(), (p - src.p_min()) / src.spacing());
    }
    return WaveFunction(grid, std::move(amps)).normalized();
}

std::string to_csv(const WaveFunction& state) {
    std::string out = "P,re,im\n";
    const auto& g = state.grid();
    for (std::size_t j = 0; j < g.size(); ++j) {
        const auto a = state.amplitudes()[j];
        out += fmt_double(g.node(j)) + "," + fmt_double(a.real()) + "," + fmt_double(a.imag()) + "\n";
    }
    return out;
}

WaveFunction wavefunction_from_csv(const std::string& text, const std::string& source) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    std::vector<double> ps;
    std::vector<complex> amps;
    bool header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!header) {
            if (line != "P,re,im") throw ParseError(source, line_no, "expected header 'P,re,im'");
            header = true;
            continue;
        }
        double p = 0, re = 0, im = 0;
        char extra = 0;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf%c", &p, &re, &im, &extra) != 3) {
            throw ParseError(source, line_no, "expected three numeric columns");
        }
        ps.push_back(p);
        amps.emplace_back(re, im);
    }
    if (!header) throw ParseError(source, line_no, "missing header");
    if (ps.size() < 8) throw ParseError(source, line_no, "need at least 8 rows");
    MomentumGrid grid(ps.front(), ps.back(), ps.size());
    for (std::size_t j = 0; j < ps.size(); ++j) {
        if (std::abs(ps[j] - grid.node(j)) > 1e-9 * std::max(1.0, std::abs(grid.node(j)))) {
            throw ParseError(source, j + 2, "momentum nodes are not uniformly spaced");
        }
    }
    return WaveFunction(grid, std::move(amps));
}

} // namespace wvs
