#include "wvs/plot.hpp"

#include "wvs/units.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace wvs {

namespace {

constexpr double kWidth = 720.0;
constexpr double kHeight = 540.0;
constexpr double kMargin = 64.0;

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        default: out += c;
        }
    }
    return out;
}

// Round axis maximum up to 1, 2 or 5 times a power of ten.
double nice_ceiling(double v) {
    if (!(v > 0.0)) return 1.0;
    const double p = std::pow(10.0, std::floor(std::log10(v)));
    for (double m : {1.0, 2.0, 5.0, 10.0}) {
        if (m * p >= v) return m * p;
    }
    return 10.0 * p;
}

} // namespace

std::string ribbon_svg(const RibbonPlot& plot) {
    double K_max = 0.0, E_min = 0.0, E_max = 0.0;
    for (const auto& r : plot.ribbons) {
        const double peak = r.intensity.empty() ? 0.0 : *std::max_element(r.intensity.begin(), r.intensity.end());
        for (std::size_t i = 0; i < r.E.size(); ++i) {
            if (r.intensity[i] <= 0.05 * peak) continue;
            K_max = std::max(K_max, r.K[i]);
            E_min = std::min(E_min, r.E[i]);
            E_max = std::max(E_max, r.E[i]);
        }
    }
    for (const auto& p : plot.peaks) {
        K_max = std::max(K_max, p.K);
        E_max = std::max(E_max, p.E);
    }
    K_max = nice_ceiling(1.1 * K_max);
    E_max = nice_ceiling(1.1 * E_max);
    E_min = E_min < 0.0 ? -nice_ceiling(-E_min) : 0.0;

    const double pw = kWidth - 2.0 * kMargin;
    const double ph = kHeight - 2.0 * kMargin;
    auto X = [&](double K) { return kMargin + pw * K / K_max; };
    auto Y = [&](double E) { return kHeight - kMargin - ph * (E - E_min) / (E_max - E_min); };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
       << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<defs><clipPath id=\"frame\"><rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << pw
       << "\" height=\"" << ph << "\"/></clipPath></defs>\n";

    // Ribbon: one dot per bin, opacity by intensity relative to the detector's maximum.
    os << "<g clip-path=\"url(#frame)\" fill=\"#1f4e9c\">\n";
    for (const auto& r : plot.ribbons) {
        const double peak = r.intensity.empty() ? 0.0 : *std::max_element(r.intensity.begin(), r.intensity.end());
        if (!(peak > 0.0)) continue;
        for (std::size_t i = 0; i < r.E.size(); ++i) {
            const double a = r.intensity[i] / peak;
            if (a < 0.02) continue;
            os << "<circle cx=\"" << num(X(r.K[i])) << "\" cy=\"" << num(Y(r.E[i])) << "\" r=\"1.6\" fill-opacity=\""
               << num(std::min(a, 1.0)) << "\"/>\n";
        }
    }
    os << "</g>\n";

    auto parabola = [&](double E0, double M, const char* color, const char* dash) {
        os << "<polyline clip-path=\"url(#frame)\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\"";
        if (dash) os << " stroke-dasharray=\"" << dash << "\"";
        os << " points=\"";
        for (int i = 0; i <= 200; ++i) {
            const double K = K_max * i / 200.0;
            os << num(X(K)) << ',' << num(Y(E0 + units::C_A * K * K / M)) << ' ';
        }
        os << "\"/>\n";
    };
    parabola(0.0, plot.M_free, "#444444", "6 4");
    if (plot.fit) parabola(plot.fit->E_rot_fit, plot.fit->M_eff, "#c0392b", nullptr);

    for (const auto& p : plot.peaks) {
        os << "<circle cx=\"" << num(X(p.K)) << "\" cy=\"" << num(Y(p.E))
           << "\" r=\"3.5\" fill=\"none\" stroke=\"black\" stroke-width=\"1.2\"/>\n";
    }

    // Axes and ticks.
    os << "<g stroke=\"black\" fill=\"none\"><rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << pw
       << "\" height=\"" << ph << "\"/></g>\n";
    for (int i = 0; i <= 5; ++i) {
        const double K = K_max * i / 5.0;
        const double E = E_min + (E_max - E_min) * i / 5.0;
        os << "<text x=\"" << num(X(K)) << "\" y=\"" << num(kHeight - kMargin + 18) << "\" text-anchor=\"middle\">"
           << num(K) << "</text>\n";
        os << "<text x=\"" << num(kMargin - 8) << "\" y=\"" << num(Y(E) + 4) << "\" text-anchor=\"end\">" << num(E)
           << "</text>\n";
    }
    os << "<text x=\"" << num(kWidth / 2) << "\" y=\"" << num(kHeight - 16) << "\" text-anchor=\"middle\">K (1/Å)</text>\n";
    os << "<text x=\"18\" y=\"" << num(kHeight / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
       << num(kHeight / 2) << ")\">E (meV)</text>\n";

    // Legend.
    double ly = kMargin + 18;
    const double lx = kMargin + 12;
    os << "<line x1=\"" << lx << "\" y1=\"" << ly - 4 << "\" x2=\"" << lx + 28 << "\" y2=\"" << ly - 4
       << "\" stroke=\"#444444\" stroke-width=\"1.8\" stroke-dasharray=\"6 4\"/>\n";
    os << "<text x=\"" << lx + 34 << "\" y=\"" << ly << "\">free mass " << num(plot.M_free) << " amu</text>\n";
    if (plot.fit) {
        ly += 18;
        os << "<line x1=\"" << lx << "\" y1=\"" << ly - 4 << "\" x2=\"" << lx + 28 << "\" y2=\"" << ly - 4
           << "\" stroke=\"#c0392b\" stroke-width=\"1.8\"/>\n";
        os << "<text x=\"" << lx + 34 << "\" y=\"" << ly << "\">fit M_eff " << num(plot.fit->M_eff) << " ± "
           << num(plot.fit->M_eff_stderr) << " amu, E_rot " << num(plot.fit->E_rot_fit) << " meV</text>\n";
    }
    if (!plot.title.empty()) {
        os << "<text x=\"" << num(kWidth / 2) << "\" y=\"" << num(kMargin - 20) << "\" text-anchor=\"middle\" font-size=\"14\">"
           << escape(plot.title) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

} // namespace wvs
