#pragma once

// Shared synthetic instruments for the tests.

#include "wvs/spectra.hpp"
#include "wvs/units.hpp"

namespace wvs::testing {

// Forward-angle bank that puts the D2-like roto-recoil line (M = 2.01,
// E_rot = 14.7 meV) inside the TOF window on every detector.
inline InstrumentConfig forward_bank(int first_deg = 4, int last_deg = 22, int step_deg = 2) {
    InstrumentConfig cfg;
    cfg.beam = NeutronBeam(90.0);
    for (int th = first_deg; th <= last_deg; th += step_deg) cfg.detectors.push_back({11.6, 4.0, units::deg(th), 0.0});
    cfg.tof_bins = {3300.0, 4400.0, 1100};
    return cfg;
}

// Sample that, with the deficit on, reads as M_eff = 0.64 at E_rot = 14.7 meV:
// M (1 - lambda/2)^2 = 0.64 for M = 2.01 and equal widths.
inline constexpr double kD2Mass = 2.01;
inline constexpr double kD2Lambda = 0.8715;
inline constexpr double kD2Sigma = 0.3;
inline constexpr double kRotLine = 14.7;

} // namespace wvs::testing
