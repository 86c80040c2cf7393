// Stage orchestration: each pipeline stage is a function from a validated
// RunConfig to a set of files under the config's output directory. Stages
// compose through those files alone (no shared in-memory state), so any
// stage can be rerun in a fresh process; inputs are freshness-checked by
// config hash and a stale or absent input raises MissingUpstreamArtifact.
//
//   steady          background.json, profiles.csv
//   bistability     scurve.csv, turning_points.csv          (needs nothing)
//   dispersion-map  map_up.csv, map_down.csv, lda_*.csv     (needs steady)
//   bdg             modes.csv, qnm.json                     (needs steady)
//   sweep           sweep.csv                               (needs steady + bdg*)
//   fit             fit.json                                (needs sweep)
//   report          report.md, fig1*.svg, fig2*.svg         (best effort)
//
//   * sweep.qnm_guess_meV replaces the bdg report when set.
#pragma once

#include <string>
#include <vector>

#include "polsim/config.hpp"

namespace polsim {

struct StageOptions {
    bool overwrite = false;  // rerun even when fresh outputs exist
    int workers = 0;         // > 0 overrides cfg.sweep.workers
};

struct StageResult {
    std::string stage;
    bool skipped = false;              // fresh outputs found; nothing recomputed
    std::vector<std::string> outputs;  // files written (or found fresh)
    std::string summary;               // one-line narration for the CLI
};

StageResult stage_steady(const RunConfig& cfg, const StageOptions& opt = {});
StageResult stage_bistability(const RunConfig& cfg, const StageOptions& opt = {});
StageResult stage_dispersion_map(const RunConfig& cfg, const StageOptions& opt = {});
StageResult stage_bdg(const RunConfig& cfg, const StageOptions& opt = {});
StageResult stage_sweep(const RunConfig& cfg, const StageOptions& opt = {});
StageResult stage_fit(const RunConfig& cfg, const StageOptions& opt = {});
StageResult stage_report(const RunConfig& cfg, const StageOptions& opt = {});

// Dispatch by stage name (the CLI subcommand spelling, e.g. "dispersion-map").
// Throws ValidationError for unknown names.
StageResult run_stage(const std::string& name, const RunConfig& cfg,
                      const StageOptions& opt = {});
const std::vector<std::string>& stage_names();

}  // namespace polsim
