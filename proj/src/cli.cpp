#include "wvs/cli.hpp"

#include "wvs/analysis.hpp"
#include "wvs/errors.hpp"
#include "wvs/io.hpp"
#include "wvs/plot.hpp"
#include "wvs/units.hpp"
#include "wvs/weakval.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace wvs {

namespace {

struct Common {
    std::uint64_t seed = 42;
    std::string format;
    std::string out;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--seed", c.seed, "random seed (echoed in every output)")->capture_default_str();
    sub->add_option("--format", c.format, "output format");
    sub->add_option("--out", c.out, "output file or directory");
}

std::string pick_format(const Common& c, std::initializer_list<const char*> allowed) {
    if (c.format.empty()) return *allowed.begin();
    for (const char* a : allowed) {
        if (c.format == a) return c.format;
    }
    std::string list;
    for (const char* a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
    throw ConfigError("unsupported --format '" + c.format + "' for this command (" + list + ")");
}

void emit(const Common& c, std::ostream& out, const std::string& text) {
    if (c.out.empty()) {
        out << text;
    } else {
        write_text_file(c.out, text);
    }
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::uint64_t detector_seed(std::uint64_t seed, std::size_t d) {
    return seed + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(d) + 1);
}

// Spectra from files, each mapped onto one instrument: either the supplied
// config, or one assembled from the files' own metadata.
struct LoadedSpectra {
    InstrumentConfig cfg;
    std::vector<Spectrum> spectra;
    std::vector<std::string> files;
    json failures = json::array();
};

void record_failure(LoadedSpectra& ls, const std::string& file, const std::exception& e, std::ostream& err) {
    err << "wvs: " << file << ": " << e.what() << "\n";
    ls.failures.push_back({{"file", file}, {"error", e.what()}});
}

LoadedSpectra load_spectra(const std::vector<std::string>& files, const std::string& instrument, std::ostream& err) {
    LoadedSpectra ls;
    const bool have_cfg = !instrument.empty();
    if (have_cfg) ls.cfg = instrument_from_json(read_json_file(instrument));
    for (const auto& f : files) {
        try {
            auto sp = ingest_spectrum(f);
            if (have_cfg) {
                if (sp.detector_index >= ls.cfg.detectors.size()) {
                    throw InvalidGeometry("detector_index " + std::to_string(sp.detector_index) +
                                          " not in the instrument config");
                }
            } else {
                auto [one, local] = standalone(sp);
                if (ls.spectra.empty()) {
                    ls.cfg = one;
                    ls.cfg.detectors.clear();
                } else if (one.beam.E0() != ls.cfg.beam.E0()) {
                    throw ConfigError("incident energy differs from the other spectra");
                }
                local.detector_index = ls.cfg.detectors.size();
                ls.cfg.detectors.push_back(one.detectors.front());
                sp = std::move(local);
            }
            ls.spectra.push_back(std::move(sp));
            ls.files.push_back(f);
        } catch (const Error& e) {
            record_failure(ls, f, e, err);
        }
    }
    if (ls.spectra.empty()) throw std::runtime_error("no input spectrum could be read");
    return ls;
}

struct Peaks {
    std::vector<DetectorPeak> peaks;
    json rows = json::array();
};

Peaks measure_all(LoadedSpectra& ls, std::ostream& err) {
    Peaks p;
    for (std::size_t i = 0; i < ls.spectra.size(); ++i) {
        try {
            const auto pk = measure_peak(ls.cfg, ls.spectra[i]);
            p.peaks.push_back(pk);
            p.rows.push_back({{"file", ls.files[i]},
                              {"detector", pk.detector_index},
                              {"theta_deg", units::to_deg(ls.cfg.detectors[pk.detector_index].theta)},
                              {"K", pk.point.K},
                              {"E", pk.point.E},
                              {"sigma_E", pk.point.sigma_E},
                              {"tof", pk.tof},
                              {"peak", to_json(pk.fit)}});
        } catch (const Error& e) {
            record_failure(ls, ls.files[i], e, err);
        }
    }
    if (p.peaks.empty()) throw std::runtime_error("no peak could be measured in any input");
    return p;
}

std::vector<KEObservation> points_of(const std::vector<DetectorPeak>& peaks) {
    std::vector<KEObservation> pts;
    for (const auto& p : peaks) pts.push_back(p.point);
    return pts;
}

MassFitResult fit_model(const std::string& model, std::span<const KEObservation> pts, double M_free,
                        std::optional<double> pinned_E_rot) {
    if (model == "recoil") return fit_recoil_mass(pts, M_free);
    if (model == "roto") return fit_roto_recoil(pts, M_free, pinned_E_rot);
    throw ConfigError("unknown --model '" + model + "' (recoil or roto)");
}

// ---- weakvalue -------------------------------------------------------------

struct WeakValueArgs {
    Common common;
    std::string kind;
    double sigma_i = 1.0;
    double hbarK = 4.0;
    double lambda = kDefaultWeakLambda;
    double width_ratio = 1.0;
    double plane_wave_ratio = kDefaultPlaneWaveRatio;
    std::string sign = "plus";
    int sweep = 0;
};

int cmd_weakvalue(const WeakValueArgs& a, std::ostream& out) {
    pick_format(a.common, {"json"});
    const auto kind = scenario_kind_from_string(a.kind);
    CouplingSign sign;
    if (a.sign == "plus") {
        sign = CouplingSign::plus;
    } else if (a.sign == "minus_mu") {
        sign = CouplingSign::minus_mu;
    } else {
        throw ConfigError("unknown --sign '" + a.sign + "' (plus or minus_mu)");
    }
    const CouplingModel model(a.lambda, a.hbarK, sign);
    const auto states = scenario(kind, a.sigma_i, a.hbarK, a.width_ratio, a.plane_wave_ratio);
    const auto pw = weak_value(states.pre, states.post, Observable::momentum());
    const auto coupling = weak_value(states.pre, states.post, Observable::coupling(a.hbarK));
    const double deficit = momentum_deficit(states.pre, states.post, a.hbarK);
    const double total = total_momentum_transfer(model, deficit);
    const double fraction = (std::abs(total) - a.hbarK) / a.hbarK;
    json j = {
        {"seed", a.common.seed},
        {"case", to_string(kind)},
        {"sigma_i", a.sigma_i},
        {"hbarK", a.hbarK},
        {"lambda", a.lambda},
        {"width_ratio", scenario_width_ratio(kind, a.width_ratio, a.plane_wave_ratio)},
        {"sign", a.sign},
        {"P_w", {{"re", pw.value.real()}, {"im", pw.value.imag()}}},
        {"coupling_weak_value", {{"re", coupling.value.real()}, {"im", coupling.value.imag()}}},
        {"overlap", pw.overlap_mag},
        {"deficit", deficit},
        {"pointer_shift", pointer_momentum_shift(model, coupling)},
        {"total_transfer", total},
        {"deficit_fraction", fraction},
        {"deficit_percent", 100.0 * fraction},
    };
    if (a.sweep < 0) throw ConfigError("--sweep must be non-negative");
    if (a.sweep > 0) {
        // Same states, transfer stepped from hbarK/n up to hbarK.
        json rows = json::array();
        for (int i = 1; i <= a.sweep; ++i) {
            const double k = a.hbarK * i / a.sweep;
            const auto st = scenario(kind, a.sigma_i, k, a.width_ratio, a.plane_wave_ratio);
            const double d = momentum_deficit(st.pre, st.post, k);
            rows.push_back({{"hbarK", k}, {"deficit", d}, {"deficit_over_hbarK", d / k}});
        }
        j["sweep"] = std::move(rows);
    }
    emit(a.common, out, dump(j));
    return kExitOk;
}

// ---- simulate --------------------------------------------------------------

struct SimulateArgs {
    Common common;
    std::string instrument;
    std::string sample;
    std::uint64_t counts = 10000;
};

int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
    pick_format(a.common, {"csv"});
    const auto cfg = a.instrument.empty() ? InstrumentConfig::preset() : instrument_from_json(read_json_file(a.instrument));
    const auto sample = sample_from_json(read_json_file(a.sample), fs::path(a.sample).parent_path());
    const fs::path dir = a.common.out.empty() ? fs::path("wvs_out") : fs::path(a.common.out);
    fs::create_directories(dir);

    auto spectra = simulate_all(cfg, sample);
    json files = json::array();
    json locus = json::array();
    std::vector<KEObservation> pts;
    for (auto& sp : spectra) {
        const std::size_t d = sp.detector_index;
        if (a.counts > 0) {
            sp = poisson_sample(sp, a.counts, detector_seed(a.common.seed, d));
        } else {
            sp.metadata["seed"] = a.common.seed;
        }
        char name[32];
        std::snprintf(name, sizeof name, "detector_%02zu.csv", d);
        write_spectrum(dir / name, sp);
        files.push_back(name);
        if (const auto lp = peak_locus(cfg, sample, d)) {
            locus.push_back({{"detector", d},
                             {"theta_deg", units::to_deg(cfg.detectors[d].theta)},
                             {"tof", lp->tof},
                             {"K", lp->ke.K},
                             {"E", lp->ke.E},
                             {"K_atom", lp->K_atom}});
            pts.push_back({lp->ke.K, lp->ke.E, 0.0, 0.0});
        }
    }
    json preview = nullptr;
    try {
        const auto fit = sample.E_rot > 0.0 ? fit_roto_recoil(pts, sample.M) : fit_recoil_mass(pts, sample.M);
        preview = to_json(fit);
    } catch (const Error& e) {
        preview = {{"error", e.what()}};
    }
    const json manifest = {
        {"schema", kSchemaVersion},
        {"seed", a.common.seed},
        {"counts_per_detector", a.counts},
        {"instrument", to_json(cfg)},
        {"sample", sample_summary(sample)},
        {"files", files},
        {"locus", locus},
        {"preview_fit", preview},
        {"constants", units::constants_json()},
    };
    write_text_file(dir / "manifest.json", dump(manifest));
    out << "wrote " << files.size() << " spectra and manifest.json to " << dir.string() << " (seed " << a.common.seed
        << ")\n";
    return kExitOk;
}

// ---- reduce ----------------------------------------------------------------

struct FilesArgs {
    Common common;
    std::vector<std::string> files;
    std::string instrument;
};

int cmd_reduce(const FilesArgs& a, std::ostream& out, std::ostream& err) {
    pick_format(a.common, {"csv"});
    auto ls = load_spectra(a.files, a.instrument, err);
    const fs::path dir = a.common.out.empty() ? fs::path(".") : fs::path(a.common.out);
    fs::create_directories(dir);
    json outputs = json::array();
    for (std::size_t i = 0; i < ls.spectra.size(); ++i) {
        try {
            const auto red = reduce_spectrum(ls.cfg, ls.spectra[i]);
            json head = {{"seed", a.common.seed}, {"source", ls.files[i]}, {"detector_index", red.detector_index},
                         {"n_invalid", red.n_invalid}};
            std::string text = "# " + head.dump() + "\ntof_us,E_meV,K_invA,intensity,sigma\n";
            char row[160];
            for (std::size_t k = 0; k < red.E.size(); ++k) {
                std::snprintf(row, sizeof row, "%.17g,%.17g,%.17g,%.17g,%.17g\n", red.tof[k], red.E[k], red.K[k],
                              red.intensity[k], red.sigma[k]);
                text += row;
            }
            const auto target = dir / (fs::path(ls.files[i]).stem().string() + "_ke.csv");
            write_text_file(target, text);
            outputs.push_back({{"file", ls.files[i]}, {"out", target.string()}, {"rows", red.E.size()}});
        } catch (const Error& e) {
            record_failure(ls, ls.files[i], e, err);
        }
    }
    if (outputs.empty()) return kExitFailure;
    out << dump({{"seed", a.common.seed}, {"outputs", outputs}, {"failures", ls.failures}});
    return kExitOk;
}

// ---- fit -------------------------------------------------------------------

struct FitArgs {
    FilesArgs files;
    double M_free = 0.0;
    std::string model = "roto";
    std::optional<double> E_rot;
};

int cmd_fit(const FitArgs& a, std::ostream& out, std::ostream& err) {
    pick_format(a.files.common, {"json"});
    auto ls = load_spectra(a.files.files, a.files.instrument, err);
    const auto peaks = measure_all(ls, err);
    const auto pts = points_of(peaks.peaks);
    const auto fit = fit_model(a.model, pts, a.M_free, a.E_rot);
    const json j = {{"seed", a.files.common.seed},  {"model", a.model},
                    {"fit", to_json(fit)},          {"deficit_report", to_json(deficit_report(fit, a.M_free))},
                    {"peaks", peaks.rows},          {"failures", ls.failures}};
    emit(a.files.common, out, dump(j));
    return kExitOk;
}

// ---- audit -----------------------------------------------------------------

struct AuditArgs {
    FilesArgs files;
    double assumed_M = 0.0;
    std::string free; // comma-separated
    double E_rot = 0.0;
};

int cmd_audit(const AuditArgs& a, std::ostream& out, std::ostream& err) {
    const auto format = pick_format(a.files.common, {"json", "text"});
    std::set<CalibParam> free;
    std::vector<std::string> names;
    std::istringstream list(a.free);
    for (std::string f; std::getline(list, f, ',');) {
        if (f.empty()) continue;
        free.insert(calib_param_from_string(f));
        names.push_back(f);
    }
    auto ls = load_spectra(a.files.files, a.files.instrument, err);
    const auto peaks = measure_all(ls, err);
    const auto rep = calibration_audit(ls.cfg, peaks.peaks, a.assumed_M, free, a.E_rot);
    if (format == "text") {
        emit(a.files.common, out, to_table(rep) + "  seed " + std::to_string(a.files.common.seed) + "\n");
    } else {
        json j = to_json(rep);
        j["seed"] = a.files.common.seed;
        j["free_params"] = names;
        j["failures"] = ls.failures;
        emit(a.files.common, out, dump(j));
    }
    return kExitOk;
}

// ---- plot ------------------------------------------------------------------

struct PlotArgs {
    FilesArgs files;
    double M_free = 0.0;
    std::string model = "roto";
    std::string title;
};

int cmd_plot(const PlotArgs& a, std::ostream& out, std::ostream& err) {
    pick_format(a.files.common, {"svg"});
    auto ls = load_spectra(a.files.files, a.files.instrument, err);
    std::vector<ReducedSpectrum> ribbons;
    for (const auto& sp : ls.spectra) ribbons.push_back(reduce_spectrum(ls.cfg, sp));
    const auto peaks = measure_all(ls, err);
    const auto pts = points_of(peaks.peaks);
    RibbonPlot plot{ribbons, pts, a.M_free, std::nullopt, a.title};
    if (a.model != "none") plot.fit = fit_model(a.model, pts, a.M_free, std::nullopt);
    auto svg = ribbon_svg(plot);
    svg.insert(svg.find('\n') + 1, "<!-- seed " + std::to_string(a.files.common.seed) + " -->\n");
    emit(a.files.common, out, svg);
    return kExitOk;
}

void add_files(CLI::App* sub, FilesArgs& f) {
    add_common(sub, f.common);
    sub->add_option("files", f.files, "spectrum CSV files")->required()->check(CLI::ExistingFile);
    sub->add_option("--instrument", f.instrument, "instrument JSON (default: from spectrum metadata)");
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Weak-value scattering simulator and analysis toolkit", "wvs"};
    app.require_subcommand(1);
    std::function<int()> action;

    WeakValueArgs wv;
    auto* s_wv = app.add_subcommand("weakvalue", "weak value, deficit and pointer shift for scenario A, B or C");
    add_common(s_wv, wv.common);
    s_wv->add_option("--case", wv.kind, "A (plane-wave final), B (narrow final) or C (equal widths)")->required();
    s_wv->add_option("--sigma-i", wv.sigma_i, "initial momentum width, 1/A")->capture_default_str();
    s_wv->add_option("--hbarK", wv.hbarK, "momentum transfer, 1/A")->capture_default_str();
    s_wv->add_option("--lambda", wv.lambda, "coupling strength in (0, 1]")->capture_default_str();
    s_wv->add_option("--width-ratio", wv.width_ratio, "sigma_f/sigma_i for case B")->capture_default_str();
    s_wv->add_option("--plane-wave-ratio", wv.plane_wave_ratio, "sigma_f/sigma_i for case A")->capture_default_str();
    s_wv->add_option("--sign", wv.sign, "coupling sign: plus or minus_mu")->capture_default_str();
    s_wv->add_option("--sweep", wv.sweep, "also tabulate the deficit at n transfers up to --hbarK");
    s_wv->callback([&] { action = [&] { return cmd_weakvalue(wv, out); }; });

    SimulateArgs sim;
    auto* s_sim = app.add_subcommand("simulate", "synthesize TOF spectra for every detector");
    add_common(s_sim, sim.common);
    s_sim->add_option("--instrument", sim.instrument, "instrument JSON (default: built-in preset)")
        ->check(CLI::ExistingFile);
    s_sim->add_option("--sample", sim.sample, "sample JSON")->required()->check(CLI::ExistingFile);
    s_sim->add_option("--counts", sim.counts, "Poisson counts per detector (0: expected intensities)")
        ->capture_default_str();
    s_sim->callback([&] { action = [&] { return cmd_simulate(sim, out); }; });

    FilesArgs red;
    auto* s_red = app.add_subcommand("reduce", "map spectra onto their K-E trajectories");
    add_files(s_red, red);
    s_red->callback([&] { action = [&] { return cmd_reduce(red, out, err); }; });

    FitArgs fit;
    auto* s_fit = app.add_subcommand("fit", "fit the effective mass to the peak centroids");
    add_files(s_fit, fit.files);
    s_fit->add_option("--M-free", fit.M_free, "free mass of the scatterer, amu")->required();
    s_fit->add_option("--model", fit.model, "recoil or roto")->capture_default_str();
    s_fit->add_option("--E-rot", fit.E_rot, "pin the line offset E_rot (meV) in the roto model");
    s_fit->callback([&] { action = [&] { return cmd_fit(fit, out, err); }; });

    AuditArgs aud;
    auto* s_aud = app.add_subcommand("audit", "adjust instrument parameters to force an assumed mass");
    add_files(s_aud, aud.files);
    s_aud->add_option("--assumed-M", aud.assumed_M, "mass the calibration is tuned to, amu")->required();
    s_aud->add_option("--free", aud.free, "comma-separated free parameters among L0,L1,t0,theta,E0");
    s_aud->add_option("--E-rot", aud.E_rot, "known line offset, meV")->capture_default_str();
    s_aud->callback([&] { action = [&] { return cmd_audit(aud, out, err); }; });

    PlotArgs plt;
    auto* s_plt = app.add_subcommand("plot", "SVG of the K-E ribbon with recoil parabolas");
    add_files(s_plt, plt.files);
    s_plt->add_option("--M-free", plt.M_free, "free mass for the conventional parabola, amu")->required();
    s_plt->add_option("--model", plt.model, "fitted parabola: roto, recoil or none")->capture_default_str();
    s_plt->add_option("--title", plt.title, "figure title");
    s_plt->callback([&] { action = [&] { return cmd_plot(plt, out, err); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        // Subcommand help lands here too.
        if (e.get_exit_code() == 0) {
            std::ostringstream o, er;
            app.exit(e, o, er);
            out << o.str();
            return kExitOk;
        }
        err << "wvs: " << e.what() << "\n";
        return kExitBadInput;
    }

    try {
        return action();
    } catch (const OrthogonalSelection& e) {
        err << "wvs: " << e.what() << " (overlap " << e.overlap_mag() << ")\n";
        return kExitOrthogonal;
    } catch (const UnphysicalTOF& e) {
        err << "wvs: " << e.what() << "\n";
        return kExitUnphysicalTof;
    } catch (const Error& e) {
        err << "wvs: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const std::exception& e) {
        err << "wvs: " << e.what() << "\n";
        return kExitFailure;
    }
}

} // namespace wvs
