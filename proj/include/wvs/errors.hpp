#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace wvs {

// Base for every error raised by the library. The CLI maps subclasses to
// exit codes, so keep the hierarchy flat.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define WVS_DEFINE_ERROR(Name)                                                 \
    class Name : public Error {                                                \
    public:                                                                    \
        using Error::Error;                                                    \
    }

// qstate
WVS_DEFINE_ERROR(GridTooNarrow);
WVS_DEFINE_ERROR(NonPositiveSigma);
WVS_DEFINE_ERROR(GridMismatch);
WVS_DEFINE_ERROR(NotNormalized);
WVS_DEFINE_ERROR(InvalidGrid);
WVS_DEFINE_ERROR(InvalidMixture);

// weakval
WVS_DEFINE_ERROR(BadCentering);
WVS_DEFINE_ERROR(IllConditionedWeakValue);
WVS_DEFINE_ERROR(NonPositiveLength);
WVS_DEFINE_ERROR(NonPositiveInput);
WVS_DEFINE_ERROR(InvalidCoupling);

// kinematics
WVS_DEFINE_ERROR(NonPositiveSpeed);
WVS_DEFINE_ERROR(UnphysicalTOF);
WVS_DEFINE_ERROR(KinematicallyForbidden);
WVS_DEFINE_ERROR(NonPositiveMass);
WVS_DEFINE_ERROR(NonPositiveK);
WVS_DEFINE_ERROR(InvalidGeometry);

// analysis
WVS_DEFINE_ERROR(EmptyWindow);
WVS_DEFINE_ERROR(DegeneratePeak);
WVS_DEFINE_ERROR(InsufficientPoints);
WVS_DEFINE_ERROR(CollinearDegeneracy);
WVS_DEFINE_ERROR(NonConvergence);
WVS_DEFINE_ERROR(Underdetermined);
WVS_DEFINE_ERROR(MissingMetadata);
WVS_DEFINE_ERROR(ConfigError);

#undef WVS_DEFINE_ERROR

struct WeakValueResult;

// Weak value requested for (nearly) orthogonal pre/post selections. The
// diagnostics are kept so callers can report the overlap that tripped it.
class OrthogonalSelection : public Error {
public:
    OrthogonalSelection(const std::string& what, double overlap_mag)
        : Error(what), overlap_mag_(overlap_mag) {}
    double overlap_mag() const noexcept { return overlap_mag_; }

private:
    double overlap_mag_;
};

class ParseError : public Error {
public:
    ParseError(const std::string& file, std::size_t line, const std::string& msg)
        : Error(file + ":" + std::to_string(line) + ": " + msg), file_(file), line_(line) {}
    const std::string& file() const noexcept { return file_; }
    std::size_t line() const noexcept { return line_; }

private:
    std::string file_;
    std::size_t line_;
};

} // namespace wvs
