#pragma once

// Static SVG of the measured K-E ribbon with recoil parabolas overlaid.

#include "wvs/analysis.hpp"

#include <optional>
#include <span>
#include <string>

namespace wvs {

struct RibbonPlot {
    std::span<const ReducedSpectrum> ribbons;
    std::span<const KEObservation> peaks;
    double M_free = 1.0;                // conventional parabola E = C_A K^2 / M_free
    std::optional<MassFitResult> fit;   // fitted parabola E = E_rot + C_A K^2 / M_eff
    std::string title;
};

std::string ribbon_svg(const RibbonPlot& plot);

} // namespace wvs
