#include "wvs/weakval.hpp"

#include "wvs/errors.hpp"
#include "wvs/units.hpp"

#include <array>
#include <cmath>

namespace wvs {

namespace {

constexpr double kCenteringTolerance = 1e-6;

struct Sums {
    complex moment; // <post|P|pre>
    complex overlap; // <post|pre>
};

Sums quadrature_sums(const WaveFunction& pre, const WaveFunction& post) {
    if (!(pre.grid() == post.grid())) throw GridMismatch("weak value: pre and post on different grids");
    const auto& g = pre.grid();
    const auto a = post.amplitudes();
    const auto b = pre.amplitudes();
    Sums s{};
    for (std::size_t j = 0; j < g.size(); ++j) {
        const complex term = g.weight(j) * std::conj(a[j]) * b[j];
        s.overlap += term;
        s.moment += g.node(j) * term;
    }
    return s;
}

complex apply_observable(const Observable& obs, complex p_weak) {
    // (I)_w = 1, so the coupling weak value is exactly P_w - hbarK.
    return obs.kind == Observable::Kind::P ? p_weak : p_weak - obs.hbarK;
}

} // namespace

CouplingModel::CouplingModel(double lambda, double hbarK, CouplingSign sign)
    : lambda_(lambda), hbarK_(hbarK), sign_(sign) {
    if (!(lambda > 0.0 && lambda <= 1.0)) throw InvalidCoupling("coupling lambda must lie in (0, 1]");
    if (!(hbarK > 0.0)) throw InvalidCoupling("coupling hbarK must be positive");
}

WeakValueResult try_weak_value(const WaveFunction& pre, const WaveFunction& post, Observable obs, double epsilon) {
    const auto s = quadrature_sums(pre, post);
    const double norms = std::sqrt(pre.norm_squared() * post.norm_squared());
    WeakValueResult r;
    r.overlap_mag = std::abs(s.overlap) / norms;
    r.ill_conditioned = r.overlap_mag < epsilon;
    r.value = apply_observable(obs, s.moment / s.overlap);
    return r;
}

WeakValueResult weak_value(const WaveFunction& pre, const WaveFunction& post, Observable obs, double epsilon) {
    auto r = try_weak_value(pre, post, obs, epsilon);
    if (r.ill_conditioned || !std::isfinite(r.value.real()) || !std::isfinite(r.value.imag())) {
        throw OrthogonalSelection("weak value diverges: pre- and post-selection are (nearly) orthogonal",
                                  r.overlap_mag);
    }
    return r;
}

WeakValueResult weak_value_mixed(const MixedState& pre, const WaveFunction& post, Observable obs, double epsilon) {
    complex numerator{};
    double denominator = 0.0;
    for (const auto& c : pre.components()) {
        const auto s = quadrature_sums(c.state, post);
        // <post|P|psi><psi|post> = moment * conj(overlap)
        numerator += c.weight * s.moment * std::conj(s.overlap);
        denominator += c.weight * std::norm(s.overlap);
    }
    WeakValueResult r;
    r.overlap_mag = std::sqrt(denominator / post.norm_squared());
    r.ill_conditioned = r.overlap_mag < epsilon;
    r.value = apply_observable(obs, numerator / denominator);
    if (r.ill_conditioned || !std::isfinite(r.value.real()) || !std::isfinite(r.value.imag())) {
        throw OrthogonalSelection("mixed weak value diverges: post-selection orthogonal to the mixture",
                                  r.overlap_mag);
    }
    return r;
}

double momentum_deficit(const WaveFunction& pre, const WaveFunction& post, double hbarK, double epsilon) {
    if (std::abs(expectation_P(post) - hbarK) > kCenteringTolerance) {
        throw BadCentering("momentum_deficit: post-selection must be centered at hbarK");
    }
    if (std::abs(expectation_P(pre)) > kCenteringTolerance) {
        throw BadCentering("momentum_deficit: pre-selection must be centered at 0");
    }
    return hbarK - weak_value(pre, post, Observable::momentum(), epsilon).value.real();
}

double pointer_momentum_shift(const CouplingModel& model, const WeakValueResult& coupling_wv) {
    if (coupling_wv.ill_conditioned) {
        throw IllConditionedWeakValue("pointer shift requested from an ill-conditioned weak value");
    }
    const double re = coupling_wv.value.real();
    return model.sign() == CouplingSign::plus ? -model.lambda() * re : model.lambda() * re;
}

double pointer_position_shift(double g, double var_q, const WeakValueResult& wv) {
    if (!(var_q > 0.0)) throw NonPositiveInput("pointer position variance must be positive");
    return -2.0 * g * var_q * wv.value.imag();
}

double total_momentum_transfer(const CouplingModel& model, double deficit) {
    const double correction = model.lambda() * deficit;
    return model.sign() == CouplingSign::plus ? -model.hbarK() + correction : -model.hbarK() - correction;
}

double scenario_width_ratio(ScenarioKind kind, double width_ratio, double plane_wave_ratio) {
    switch (kind) {
    case ScenarioKind::A_plane_wave: return plane_wave_ratio;
    case ScenarioKind::B_narrow_final: return width_ratio;
    case ScenarioKind::C_equal_width: return 1.0;
    }
    return 1.0;
}

ScenarioStates scenario(ScenarioKind kind, double sigma_i, double hbarK, double width_ratio,
                        double plane_wave_ratio) {
    if (!(sigma_i > 0.0)) throw NonPositiveSigma("scenario: sigma_i must be positive");
    if (!(hbarK > 0.0)) throw NonPositiveInput("scenario: hbarK must be positive");
    if (kind == ScenarioKind::B_narrow_final && !(width_ratio > 0.0 && width_ratio <= 1.0)) {
        throw NonPositiveInput("scenario B: width_ratio must lie in (0, 1]");
    }
    if (kind == ScenarioKind::A_plane_wave && !(plane_wave_ratio > 0.0 && plane_wave_ratio <= 1.0)) {
        throw NonPositiveInput("scenario A: plane_wave_ratio must lie in (0, 1]");
    }
    const double sigma_f = scenario_width_ratio(kind, width_ratio, plane_wave_ratio) * sigma_i;
    const std::array<GaussianSpec, 2> specs{{{0.0, sigma_i}, {hbarK, sigma_f}}};
    const auto grid = grid_for(specs);
    return {gaussian_state(grid, 0.0, sigma_i), gaussian_state(grid, hbarK, sigma_f)};
}

std::string to_string(ScenarioKind kind) {
    switch (kind) {
    case ScenarioKind::A_plane_wave: return "A";
    case ScenarioKind::B_narrow_final: return "B";
    case ScenarioKind::C_equal_width: return "C";
    }
    return "?";
}

ScenarioKind scenario_kind_from_string(const std::string& s) {
    if (s == "A" || s == "a") return ScenarioKind::A_plane_wave;
    if (s == "B" || s == "b") return ScenarioKind::B_narrow_final;
    if (s == "C" || s == "c") return ScenarioKind::C_equal_width;
    throw ConfigError("unknown scenario case '" + s + "' (expected A, B or C)");
}

double weakness_estimate(double b_M_fm, double lambda_n_angstrom) {
    if (!(b_M_fm > 0.0) || !(lambda_n_angstrom > 0.0)) {
        throw NonPositiveLength("weakness_estimate: lengths must be positive");
    }
    return b_M_fm / (lambda_n_angstrom * units::fm_per_angstrom);
}

double collision_time(double M_amu, double K, double deltaP) {
    if (!(M_amu > 0.0) || !(K > 0.0) || !(deltaP > 0.0)) {
        throw NonPositiveInput("collision_time: inputs must be positive");
    }
    const double mass = M_amu * units::amu_SI;
    const double K_SI = K / units::meter_per_angstrom;
    const double dP_SI = units::hbar_SI * deltaP / units::meter_per_angstrom;
    return mass / (K_SI * dP_SI);
}

ScenarioRecord run_scenario(ScenarioKind kind, double sigma_i, const CouplingModel& model, double width_ratio,
                            double plane_wave_ratio) {
    const auto states = scenario(kind, sigma_i, model.hbarK(), width_ratio, plane_wave_ratio);
    const auto pw = weak_value(states.pre, states.post, Observable::momentum());
    const auto coupling = weak_value(states.pre, states.post, Observable::coupling(model.hbarK()));
    ScenarioRecord r;
    r.kind = kind;
    r.sigma_i = sigma_i;
    r.hbarK = model.hbarK();
    r.width_ratio = scenario_width_ratio(kind, width_ratio, plane_wave_ratio);
    r.P_w = pw.value;
    r.deficit = momentum_deficit(states.pre, states.post, model.hbarK());
    r.pointer_shift = pointer_momentum_shift(model, coupling);
    return r;
}

nlohmann::json to_json(const ScenarioRecord& r) {
    return {
        {"case", to_string(r.kind)},
        {"sigma_i", r.sigma_i},
        {"hbarK", r.hbarK},
        {"width_ratio", r.width_ratio},
        {"P_w_re", r.P_w.real()},
        {"P_w_im", r.P_w.imag()},
        {"deficit", r.deficit},
        {"pointer_shift", r.pointer_shift},
    };
}

} // namespace wvs
