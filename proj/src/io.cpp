#include "wvs/io.hpp"

#include "wvs/errors.hpp"
#include "wvs/units.hpp"

#include <algorithm>
#include <array>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace wvs {

namespace {

using nlohmann::json;

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    errno = 0;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return errno == 0 && end == s.c_str() + s.size() && std::isfinite(out);
}

std::string trim(std::string s) {
    const auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

const json& require(const json& j, const char* key, const std::string& ctx) {
    if (!j.is_object() || !j.contains(key)) throw ConfigError(ctx + ": missing field '" + key + "'");
    return j.at(key);
}

double number(const json& j, const char* key, const std::string& ctx) {
    const auto& v = require(j, key, ctx);
    if (!v.is_number()) throw ConfigError(ctx + ": field '" + key + "' must be a number");
    return v.get<double>();
}

double number_or(const json& j, const char* key, double fallback, const std::string& ctx) {
    return j.contains(key) && !j.at(key).is_null() ? number(j, key, ctx) : fallback;
}

void check_schema(const json& j, const std::string& ctx) {
    if (!j.is_object()) throw ConfigError(ctx + ": expected a JSON object");
    if (!j.contains("schema") || !j.at("schema").is_number_integer() || j.at("schema").get<int>() != kSchemaVersion) {
        throw ConfigError(ctx + ": unsupported or missing schema (expected \"schema\": 1)");
    }
}

DetectorGeometry detector_from_json(const json& j, const std::string& ctx) {
    DetectorGeometry g;
    g.L0 = number(j, "L0", ctx);
    g.L1 = number(j, "L1", ctx);
    if (j.contains("theta")) {
        g.theta = number(j, "theta", ctx);
    } else if (j.contains("theta_deg")) {
        g.theta = units::deg(number(j, "theta_deg", ctx));
    } else {
        throw ConfigError(ctx + ": detector needs 'theta' (rad) or 'theta_deg'");
    }
    g.t0 = number_or(j, "t0", 0.0, ctx);
    return g;
}

TofBinning bins_from_json(const json& j, const std::string& ctx) {
    const double n = number(j, "n_bins", ctx);
    if (!(n >= 1.0) || n != std::floor(n)) throw ConfigError(ctx + ": n_bins must be a positive integer");
    return {number(j, "t_min", ctx), number(j, "t_max", ctx), static_cast<std::size_t>(n)};
}

} // namespace

std::string spectrum_to_csv(const Spectrum& spectrum) {
    json meta = spectrum.metadata.is_object() ? spectrum.metadata : json::object();
    meta["detector_index"] = spectrum.detector_index;
    if (!meta.contains("tof_bins") && !spectrum.bin_edges.empty()) {
        meta["tof_bins"] = {{"t_min", spectrum.bin_edges.front()},
                            {"t_max", spectrum.bin_edges.back()},
                            {"n_bins", spectrum.n_bins()}};
    }
    std::string out = "# " + meta.dump() + "\ntof_us,counts\n";
    for (std::size_t i = 0; i < spectrum.n_bins(); ++i) {
        out += fmt17(spectrum.center(i));
        out += ',';
        out += fmt17(spectrum.counts[i]);
        out += '\n';
    }
    return out;
}

Spectrum spectrum_from_csv(const std::string& text, const std::string& source) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;

    if (!std::getline(in, line) || trim(line).rfind('#', 0) != 0) {
        throw MissingMetadata(source + ": missing '# {json}' metadata header; instrument unknown, so only an "
                                       "explicitly supplied instrument (e.g. the default preset) can be assumed");
    }
    ++lineno;
    Spectrum s;
    try {
        s.metadata = json::parse(trim(line).substr(1));
    } catch (const json::parse_error& e) {
        throw ParseError(source, lineno, std::string("metadata header is not valid JSON: ") + e.what());
    }
    if (!s.metadata.is_object()) throw ParseError(source, lineno, "metadata header must be a JSON object");

    if (!std::getline(in, line) || trim(line) != "tof_us,counts") {
        throw ParseError(source, lineno + 1, "expected column header 'tof_us,counts'");
    }
    ++lineno;

    std::vector<double> centers;
    while (std::getline(in, line)) {
        ++lineno;
        const auto row = trim(line);
        if (row.empty()) continue;
        const auto comma = row.find(',');
        if (comma == std::string::npos || row.find(',', comma + 1) != std::string::npos) {
            throw ParseError(source, lineno, "expected two comma-separated fields");
        }
        double t, c;
        if (!parse_double(trim(row.substr(0, comma)), t)) throw ParseError(source, lineno, "bad tof_us value");
        if (!parse_double(trim(row.substr(comma + 1)), c)) throw ParseError(source, lineno, "bad counts value");
        if (c < 0.0) throw ParseError(source, lineno, "negative counts");
        if (!centers.empty() && !(t > centers.back())) {
            throw ParseError(source, lineno, "tof_us must be strictly increasing");
        }
        centers.push_back(t);
        s.counts.push_back(c);
    }
    if (centers.size() < 2) throw ParseError(source, lineno, "spectrum needs at least two rows");

    if (s.metadata.contains("detector_index")) {
        const auto& d = s.metadata["detector_index"];
        if (!d.is_number_unsigned()) throw ParseError(source, 1, "detector_index must be a nonnegative integer");
        s.detector_index = d.get<std::size_t>();
    }

    bool from_meta = false;
    if (s.metadata.contains("tof_bins")) {
        try {
            const auto b = bins_from_json(s.metadata["tof_bins"], source);
            if (b.n_bins == centers.size()) {
                const double tol = 1e-9 * b.width();
                bool match = true;
                for (std::size_t i = 0; i < centers.size() && match; ++i) match = std::abs(b.center(i) - centers[i]) <= tol;
                if (match) {
                    s.bin_edges = b.edges();
                    from_meta = true;
                }
            }
        } catch (const ConfigError& e) {
            throw ParseError(source, 1, e.what());
        }
    }
    if (!from_meta) {
        // Edges halfway between centers, end bins mirrored.
        s.bin_edges.resize(centers.size() + 1);
        for (std::size_t i = 1; i < centers.size(); ++i) s.bin_edges[i] = 0.5 * (centers[i - 1] + centers[i]);
        s.bin_edges.front() = centers.front() - (s.bin_edges[1] - centers.front());
        s.bin_edges.back() = centers.back() + (centers.back() - s.bin_edges[centers.size() - 1]);
    }
    return s;
}

void write_spectrum(const std::filesystem::path& path, const Spectrum& spectrum) {
    write_text_file(path, spectrum_to_csv(spectrum));
}

Spectrum ingest_spectrum(const std::filesystem::path& path) {
    return spectrum_from_csv(read_text_file(path), path.string());
}

std::pair<InstrumentConfig, Spectrum> standalone(const Spectrum& spectrum) {
    const auto& m = spectrum.metadata;
    if (!m.contains("detector") || !m.contains("E0")) {
        throw MissingMetadata("spectrum metadata lacks 'detector'/'E0'; an instrument config is required");
    }
    InstrumentConfig cfg;
    try {
        cfg.beam = NeutronBeam(number(m, "E0", "spectrum metadata"));
        cfg.detectors = {detector_from_json(m.at("detector"), "spectrum metadata")};
    } catch (const ConfigError& e) {
        throw MissingMetadata(e.what());
    }
    cfg.tof_bins = {spectrum.bin_edges.front(), spectrum.bin_edges.back(), spectrum.n_bins()};
    Spectrum s = spectrum;
    s.detector_index = 0;
    return {cfg, s};
}

nlohmann::json to_json(const InstrumentConfig& cfg) {
    json dets = json::array();
    for (const auto& d : cfg.detectors) dets.push_back({{"L0", d.L0}, {"L1", d.L1}, {"theta", d.theta}, {"t0", d.t0}});
    return {{"schema", kSchemaVersion},
            {"E0", cfg.beam.E0()},
            {"tof_bins", {{"t_min", cfg.tof_bins.t_min}, {"t_max", cfg.tof_bins.t_max}, {"n_bins", cfg.tof_bins.n_bins}}},
            {"detectors", dets}};
}

InstrumentConfig instrument_from_json(const nlohmann::json& j) {
    const std::string ctx = "instrument";
    check_schema(j, ctx);
    InstrumentConfig cfg;
    if (j.contains("preset")) {
        if (j.at("preset") != "default") throw ConfigError(ctx + ": unknown preset (only \"default\")");
        cfg = InstrumentConfig::preset();
    } else {
        require(j, "detectors", ctx);
        require(j, "tof_bins", ctx);
    }
    if (j.contains("E0")) cfg.beam = NeutronBeam(number(j, "E0", ctx));
    if (j.contains("tof_bins")) cfg.tof_bins = bins_from_json(j.at("tof_bins"), ctx + ".tof_bins");
    if (j.contains("detectors")) {
        const auto& dets = j.at("detectors");
        if (!dets.is_array()) throw ConfigError(ctx + ": 'detectors' must be an array");
        cfg.detectors.clear();
        for (std::size_t i = 0; i < dets.size(); ++i) {
            cfg.detectors.push_back(detector_from_json(dets[i], ctx + ".detectors[" + std::to_string(i) + "]"));
        }
    }
    cfg.validate();
    return cfg;
}

SampleModel sample_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    const std::string ctx = "sample";
    check_schema(j, ctx);
    const double M = number(j, "M", ctx);
    const double E_rot = number_or(j, "E_rot", 0.0, ctx);
    std::optional<DeficitInjection> deficit;
    if (j.contains("deficit") && !j.at("deficit").is_null()) {
        const auto& d = j.at("deficit");
        deficit = DeficitInjection{number(d, "lambda", ctx + ".deficit"), number_or(d, "width_ratio", 1.0, ctx)};
    }

    const auto& md = require(j, "momentum_dist", ctx);
    const std::string mctx = ctx + ".momentum_dist";
    const auto& type = require(md, "type", mctx);
    if (!type.is_string()) throw ConfigError(mctx + ": 'type' must be a string");
    const auto kind = type.get<std::string>();

    if (kind == "gaussian") {
        return gaussian_sample(M, number(md, "sigma", mctx), E_rot, deficit);
    }
    auto source = [&]() -> MomentumSource {
        if (kind == "mixture") {
            const auto& comps = require(md, "components", mctx);
            if (!comps.is_array() || comps.empty()) throw ConfigError(mctx + ": 'components' must be a non-empty array");
            std::vector<GaussianSpec> specs;
            std::vector<double> weights;
            for (const auto& c : comps) {
                specs.push_back({number_or(c, "center", 0.0, mctx), number(c, "sigma", mctx)});
                weights.push_back(number(c, "weight", mctx));
            }
            const auto grid = grid_for(specs, 16.0);
            std::vector<MixedState::Component> parts;
            for (std::size_t i = 0; i < specs.size(); ++i) {
                parts.push_back({weights[i], gaussian_state(grid, specs[i].center, specs[i].sigma)});
            }
            return MixedState(std::move(parts));
        }
        if (kind == "csv") {
            const auto& p = require(md, "path", mctx);
            if (!p.is_string()) throw ConfigError(mctx + ": 'path' must be a string");
            const auto path = base_dir / p.get<std::string>();
            return wavefunction_from_csv(read_text_file(path), path.string()).normalized();
        }
        throw ConfigError(mctx + ": unknown type '" + kind + "' (gaussian, mixture or csv)");
    };
    SampleModel s{M, source(), E_rot, deficit};
    s.validate();
    return s;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
    if (!out) throw ConfigError("write failed for " + path.string());
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
    const auto text = read_text_file(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        const auto upto = std::min<std::size_t>(e.byte, text.size());
        const auto line = 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(upto), '\n'));
        throw ParseError(path.string(), line, e.what());
    }
}

} // namespace wvs
