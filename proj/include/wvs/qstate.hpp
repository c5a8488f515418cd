#pragma once

// One-dimensional momentum-space states on uniform grids.
//
// Momenta are in hbar/Angstrom. All integrals use the trapezoidal rule on the
// grid nodes, which converges spectrally for smooth decaying integrands such
// as Gaussians.

#include <complex>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace wvs {

using complex = std::complex<double>;

class MomentumGrid {
public:
    MomentumGrid(double p_min, double p_max, std::size_t n_points);

    double p_min() const noexcept { return p_min_; }
    double p_max() const noexcept { return p_max_; }
    std::size_t size() const noexcept { return n_; }
    double spacing() const noexcept { return dp_; }
    double span() const noexcept { return p_max_ - p_min_; }

    double node(std::size_t j) const noexcept { return p_min_ + static_cast<double>(j) * dp_; }
    // Trapezoid weight of node j (dp inside, dp/2 at both ends).
    double weight(std::size_t j) const noexcept { return (j == 0 || j + 1 == n_) ? 0.5 * dp_ : dp_; }
    bool contains(double lo, double hi) const noexcept { return lo >= p_min_ && hi <= p_max_; }

    std::vector<double> nodes() const;

    friend bool operator==(const MomentumGrid&, const MomentumGrid&) = default;

private:
    double p_min_;
    double p_max_;
    std::size_t n_;
    double dp_;
};

// Grid policy for a set of Gaussian profiles: spans every center +-10 sigma_max,
// resolves the narrowest sigma with at least `points_per_sigma` nodes, and uses
// a power-of-two node count of at least 1024.
struct GaussianSpec {
    double center;
    double sigma;
};
MomentumGrid grid_for(std::span<const GaussianSpec> profiles, double points_per_sigma = 4.0);

struct GaussianDescriptor {
    double center;
    double sigma;
    double phase = 0.0; // global phase e^{i phase}
};

class WaveFunction {
public:
    WaveFunction(MomentumGrid grid, std::vector<complex> amplitudes,
                 std::optional<GaussianDescriptor> descriptor = std::nullopt);

    const MomentumGrid& grid() const noexcept { return grid_; }
    std::span<const complex> amplitudes() const noexcept { return amplitudes_; }
    const std::optional<GaussianDescriptor>& descriptor() const noexcept { return descriptor_; }
    std::size_t size() const noexcept { return amplitudes_.size(); }

    double norm_squared() const;
    // Returns a copy scaled to unit norm. The descriptor is kept.
    WaveFunction normalized() const;
    bool is_normalized(double tol = 1e-6) const;

    // |Xi(P_j)|^2 on the grid nodes.
    std::vector<double> density() const;

private:
    MomentumGrid grid_;
    std::vector<complex> amplitudes_;
    std::optional<GaussianDescriptor> descriptor_;
};

class MixedState {
public:
    struct Component {
        double weight;
        WaveFunction state;
    };

    explicit MixedState(std::vector<Component> components);

    const std::vector<Component>& components() const noexcept { return components_; }
    const MomentumGrid& grid() const noexcept { return components_.front().state.grid(); }

private:
    std::vector<Component> components_;
};

// Normalized amplitudes proportional to exp(-(P-center)^2/(4 sigma^2)), so the
// density |Xi|^2 has standard deviation sigma. Throws GridTooNarrow when the
// 5 sigma window does not fit and NonPositiveSigma for sigma <= 0.
WaveFunction gaussian_state(const MomentumGrid& grid, double center, double sigma, double phase = 0.0);

complex inner_product(const WaveFunction& bra, const WaveFunction& ket);

// <P> for a normalized state. Throws NotNormalized if the norm is off by >1e-6.
double expectation_P(const WaveFunction& state);
double expectation_P(const MixedState& state);
double variance_P(const WaveFunction& state);

// Momentum translation Xi(P) -> Xi(P - dP). Gaussian descriptors are
// re-evaluated exactly; tabulated states are shifted by a band-limited
// (Fourier phase-ramp) interpolation and require |dP| < span/4.
WaveFunction shift(const WaveFunction& state, double dP);

// Impulsive momentum exchange hbarK between a neutron and an atom:
// returns (shift(neutron, -hbarK), shift(atom, +hbarK)).
std::pair<WaveFunction, WaveFunction> apply_impulse(const WaveFunction& neutron, const WaveFunction& atom,
                                                    double hbarK);

// Re-tabulates `state` on another grid by cubic interpolation of the
// amplitudes (zero outside the source grid). Gaussian descriptors are
// re-evaluated exactly.
WaveFunction resample(const WaveFunction& state, const MomentumGrid& grid);

// CSV with header `P,re,im`, one row per node.
std::string to_csv(const WaveFunction& state);
WaveFunction wavefunction_from_csv(const std::string& text, const std::string& source = "<memory>");

} // namespace wvs
