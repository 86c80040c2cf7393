// Deterministic output artifacts: CSV tables with config-stamped comment
// headers, JSON checkpoints for stage composition, and atomic file writes.
// Numeric interchange format is CSV at 12 significant digits; checkpoints
// carry full %.17g doubles so reloading loses nothing.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "polsim/bdg_spectrum.hpp"
#include "polsim/config.hpp"
#include "polsim/gpe_engine.hpp"
#include "polsim/scatter_analysis.hpp"

namespace polsim {

// Writes content to path via write-temp-rename in the same directory, so a
// reader never observes a partial file. Creates parent directories.
void atomic_write(const std::string& path, const std::string& content);

// Canonical 12-significant-digit numeric formatting ("%.12g"; NaN -> "nan").
std::string format_number(double v);

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

// Comment header (lines starting "# "), one column-name line, numeric rows.
struct CsvTable {
    std::vector<std::string> comments;  // without the leading "# "
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    // Index of a named column; throws ValidationError when absent.
    int col(const std::string& name) const;
    // "key = value" comment lookup (artifact metadata).
    std::optional<std::string> meta(const std::string& key) const;
    std::vector<double> column(const std::string& name) const;
};

void write_csv(const std::string& path, const CsvTable& table);
// Throws MissingUpstreamArtifact when absent, ParseError on malformed rows.
CsvTable read_csv(const std::string& path);

// Standard artifact comment block: stage name, config hash, units note,
// plus any extra "key = value" metadata lines.
std::vector<std::string> artifact_comments(const RunConfig& cfg, const std::string& stage,
                                           const std::vector<std::string>& extra = {});

// ---------------------------------------------------------------------------
// Stage checkpoints
// ---------------------------------------------------------------------------

// BackgroundState round-trip through a self-describing JSON container.
// Loading verifies the embedded config hash against cfg (a stale checkpoint
// counts as missing: the stage must be rerun).
void save_background(const std::string& path, const BackgroundState& bg,
                     const RunConfig& cfg);
BackgroundState load_background(const std::string& path, const RunConfig& cfg,
                                bool check_hash = true);

// Sweep CSV (omega_meV, abs_HR, abs_down, abs_dn, abs_down_star, abs_dn_star,
// gap_flag, then derived columns) with window metadata in the header.
void save_sweep(const std::string& path, const ScatterSweepResult& result,
                const RunConfig& cfg);

// QNM report: flat JSON record with both linewidth conventions, the search
// window, and the config hash.
struct QnmReport {
    double Omega_qnm = 0;         // [1/ps]
    double Gamma_qnm = 0;         // [1/ps]
    double gamma_radiative = 0;   // [1/ps]
    double Q = 0;
    double omega_min = 0, omega_max = 0;  // [1/ps]
    double center_x = 0;                  // mode weight centroid [um]
    double zero_tol = 0;
    std::uint64_t config_hash = 0;
};
void save_qnm(const std::string& path, const QnmReport& report);
QnmReport load_qnm(const std::string& path);

// Breit-Wigner fit record (flat JSON).
void save_fit(const std::string& path, const BreitWignerFit& fit, const RunConfig& cfg);

}  // namespace polsim
