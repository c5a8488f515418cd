#pragma once

// File formats: spectrum CSV with a JSON metadata header, and the versioned
// (schema 1) instrument and sample JSON documents.

#include "wvs/spectra.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <utility>

namespace wvs {

inline constexpr int kSchemaVersion = 1;

// "# {metadata}\n" "tof_us,counts\n" then one row per bin center.
std::string spectrum_to_csv(const Spectrum& spectrum);
Spectrum spectrum_from_csv(const std::string& text, const std::string& source = "<memory>");

void write_spectrum(const std::filesystem::path& path, const Spectrum& spectrum);
// Throws ParseError (with line number) for malformed rows and MissingMetadata
// when the header line is absent.
Spectrum ingest_spectrum(const std::filesystem::path& path);

// Single-detector instrument described by a spectrum's own metadata; the
// returned spectrum copy is re-indexed to detector 0.
std::pair<InstrumentConfig, Spectrum> standalone(const Spectrum& spectrum);

nlohmann::json to_json(const InstrumentConfig& cfg);
InstrumentConfig instrument_from_json(const nlohmann::json& j);

// momentum_dist: {"type": "gaussian", "sigma": s}
//              | {"type": "mixture", "components": [{"weight": w, "sigma": s}, ...]}
//              | {"type": "csv", "path": "state.csv"}  (P,re,im; relative to base_dir)
SampleModel sample_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".");

nlohmann::json read_json_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

} // namespace wvs
