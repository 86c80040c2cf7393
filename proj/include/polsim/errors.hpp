#pragma once

#include <stdexcept>
#include <string>

namespace polsim {

// Base class: everything the library can throw on purpose derives from this,
// so callers can separate physics/configuration failures from genuine bugs.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// --- core_model ------------------------------------------------------------

// A local-density formula was evaluated where its radicand is negative
// (c_B or m_det undefined); the LDA expressions do not apply at that point.
struct GappedRegionError : Error {
    using Error::Error;
};

// A channel was requested at a frequency where it does not propagate.
struct NoPropagatingChannel : Error {
    using Error::Error;
};

// The flow never crosses the sound speed (no horizon / omega_max <= 0).
struct NotTranscritical : Error {
    using Error::Error;
};

// --- gpe_engine ------------------------------------------------------------

struct NumericalBlowup : Error {
    using Error::Error;
};

struct NoConvergence : Error {
    using Error::Error;
};

// Probe frequency below the upstream gap: nothing can be injected there.
struct ProbeInGap : Error {
    using Error::Error;
};

// --- bdg_spectrum ----------------------------------------------------------

struct EigenFailure : Error {
    using Error::Error;
};

struct NoQnmFound : Error {
    using Error::Error;
};

struct MultipleQnmCandidates : Error {
    using Error::Error;
};

// --- scatter_analysis ------------------------------------------------------

struct RegionTooNarrow : Error {
    using Error::Error;
};

struct ChannelOffGrid : Error {
    using Error::Error;
};

struct FitDiverged : Error {
    using Error::Error;
};

struct PeakNotResolved : Error {
    using Error::Error;
};

// --- cli_io ----------------------------------------------------------------

struct ParseError : Error {
    int line = 0;
    int column = 0;
    ParseError(const std::string& msg, int line_, int column_)
        : Error(msg + " (line " + std::to_string(line_) + ", column " +
                std::to_string(column_) + ")"),
          line(line_),
          column(column_) {}
};

struct ValidationError : Error {
    std::string field;
    ValidationError(const std::string& field_, const std::string& constraint)
        : Error("invalid config field '" + field_ + "': " + constraint), field(field_) {}
};

struct MissingUpstreamArtifact : Error {
    using Error::Error;
};

}  // namespace polsim
