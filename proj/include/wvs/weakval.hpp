#pragma once

// Weak values of the atomic momentum operator under pre/post-selection and
// the pointer (neutron) readings they imply.

#include "wvs/qstate.hpp"

#include <json.hpp>

#include <string>
#include <utility>

namespace wvs {

inline constexpr double kDefaultOverlapEpsilon = 1e-8;
inline constexpr double kDefaultPlaneWaveRatio = 1e-3;
inline constexpr double kDefaultWeakLambda = 0.01;

struct WeakValueResult {
    complex value;
    double overlap_mag = 0.0; // |<post|pre>| / (||post|| ||pre||)
    bool ill_conditioned = false;
};

// Observable is either P or the coupling operator P - hbarK * I.
struct Observable {
    enum class Kind { P, P_minus_hbarK };
    Kind kind = Kind::P;
    double hbarK = 0.0;

    static Observable momentum() { return {Kind::P, 0.0}; }
    static Observable coupling(double hbarK) { return {Kind::P_minus_hbarK, hbarK}; }
};

enum class CouplingSign { plus, minus_mu };

class CouplingModel {
public:
    CouplingModel(double lambda, double hbarK, CouplingSign sign = CouplingSign::plus);

    double lambda() const noexcept { return lambda_; }
    double hbarK() const noexcept { return hbarK_; }
    CouplingSign sign() const noexcept { return sign_; }

private:
    double lambda_;
    double hbarK_;
    CouplingSign sign_;
};

// <post|A|pre>/<post|pre>. Throws OrthogonalSelection when the normalized
// overlap is below epsilon.
WeakValueResult weak_value(const WaveFunction& pre, const WaveFunction& post, Observable obs = Observable::momentum(),
                           double epsilon = kDefaultOverlapEpsilon);

// Same quotient, but never throws for small overlaps: the result carries
// ill_conditioned = true instead (value may then be non-finite).
WeakValueResult try_weak_value(const WaveFunction& pre, const WaveFunction& post,
                               Observable obs = Observable::momentum(), double epsilon = kDefaultOverlapEpsilon);

// Weak value for a mixed pre-selection rho = sum_i w_i |psi_i><psi_i|:
//   sum_i w_i <post|A|psi_i><psi_i|post> / sum_i w_i |<post|psi_i>|^2
WeakValueResult weak_value_mixed(const MixedState& pre, const WaveFunction& post,
                                 Observable obs = Observable::momentum(), double epsilon = kDefaultOverlapEpsilon);

// hbarK - Re(P_w) for a pre-selection centered at 0 and a post-selection
// centered at hbarK (both checked to 1e-6; BadCentering otherwise).
double momentum_deficit(const WaveFunction& pre, const WaveFunction& post, double hbarK,
                        double epsilon = kDefaultOverlapEpsilon);

// Change of the pointer (neutron) momentum caused by the weak coupling:
// -lambda Re(value) for the physical sign, +lambda Re(value) for the flipped one.
double pointer_momentum_shift(const CouplingModel& model, const WeakValueResult& coupling_wv);

// Mean pointer position after the measurement, -2 g var_q Im(value).
double pointer_position_shift(double g, double var_q, const WeakValueResult& wv);

// Total pointer momentum transfer: -hbarK + lambda*deficit for the physical
// sign, -hbarK - lambda*deficit when the coupling sign is flipped.
double total_momentum_transfer(const CouplingModel& model, double deficit);

enum class ScenarioKind { A_plane_wave, B_narrow_final, C_equal_width };

struct ScenarioStates {
    WaveFunction pre;
    WaveFunction post;
};

// Pre-selection gaussian(0, sigma_i); post-selection centered at hbarK with
// width plane_wave_ratio*sigma_i (A), width_ratio*sigma_i (B) or sigma_i (C).
ScenarioStates scenario(ScenarioKind kind, double sigma_i, double hbarK, double width_ratio = 1.0,
                        double plane_wave_ratio = kDefaultPlaneWaveRatio);

// Width ratio sigma_f/sigma_i the scenario actually uses.
double scenario_width_ratio(ScenarioKind kind, double width_ratio, double plane_wave_ratio = kDefaultPlaneWaveRatio);

std::string to_string(ScenarioKind kind);
ScenarioKind scenario_kind_from_string(const std::string& s);

// Scattering-amplitude smallness b_M/lambda_n; b_M in fm, lambda_n in Angstrom.
double weakness_estimate(double b_M_fm, double lambda_n_angstrom);

// Impulse-approximation collision time M/(K dP) in seconds; M in amu, K in
// 1/Angstrom, dP in hbar/Angstrom.
double collision_time(double M_amu, double K, double deltaP);

struct ScenarioRecord {
    ScenarioKind kind;
    double sigma_i;
    double hbarK;
    double width_ratio;
    complex P_w;
    double deficit;
    double pointer_shift;
};

// Evaluates one scenario end to end under `model` (model.hbarK() is the
// transfer used for the states).
ScenarioRecord run_scenario(ScenarioKind kind, double sigma_i, const CouplingModel& model, double width_ratio = 1.0,
                            double plane_wave_ratio = kDefaultPlaneWaveRatio);

nlohmann::json to_json(const ScenarioRecord& r);

} // namespace wvs
