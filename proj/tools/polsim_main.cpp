// Command-line driver: one invocation runs one pipeline stage against an INI
// configuration. Stages compose through checkpoints in the output directory,
// so a full reproduction is a sequence of invocations on the same config.
#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <string>

#include <CLI11.hpp>

#include "polsim/config.hpp"
#include "polsim/errors.hpp"
#include "polsim/pipeline.hpp"

namespace {

// Optional hard cap on sweep workers, e.g. for shared CI machines.
int worker_cap_from_env() {
    const char* cap = std::getenv("POLSIM_MAX_WORKERS");
    if (!cap || !*cap) return 0;
    char* end = nullptr;
    const long v = std::strtol(cap, &end, 10);
    return (end && *end == '\0' && v > 0) ? static_cast<int>(v) : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "polsim: 1D driven-dissipative polariton fluid with an acoustic horizon.\n"
        "Each stage reads the config, reuses fresh checkpoints from the output\n"
        "directory, and writes its own artifacts (CSV / JSON / SVG)."};
    app.footer(
        "exit codes: 0 success, 2 config or usage error, 3 missing upstream\n"
        "artifact (run the earlier stage first), 4 physics/numerics failure.\n"
        "Environment: POLSIM_MAX_WORKERS caps the sweep worker count.");

    std::string config_path, out_dir, stage_flag;
    int workers = 0;
    std::uint64_t seed = 0;
    bool overwrite = false;

    app.add_option("--config", config_path, "INI run configuration")
        ->check(CLI::ExistingFile);
    app.add_option("--out", out_dir, "output directory (overrides the config's out_dir)");
    app.add_option("--workers", workers, "sweep worker threads (overrides sweep.workers)")
        ->check(CLI::NonNegativeNumber);
    auto* seed_opt = app.add_option("--seed", seed, "noise seed (overrides the config's)");
    app.add_option("--stage", stage_flag, "stage name (alternative to the subcommand)");
    app.add_flag("--overwrite", overwrite, "recompute even when fresh outputs exist");

    for (const std::string& name : polsim::stage_names())
        app.add_subcommand(name, "run the '" + name + "' stage");
    app.require_subcommand(0, 1);

    CLI11_PARSE(app, argc, argv);

    std::string stage = stage_flag;
    for (const CLI::App* sub : app.get_subcommands()) stage = sub->get_name();
    if (stage.empty()) {
        std::fprintf(stderr, "polsim: no stage selected (pass a subcommand or --stage)\n");
        return 2;
    }
    if (config_path.empty()) {
        std::fprintf(stderr, "polsim: --config is required\n");
        return 2;
    }

    try {
        polsim::RunConfig cfg = polsim::load_config(config_path);
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (seed_opt->count() > 0) cfg.seed = seed;

        polsim::StageOptions opt;
        opt.overwrite = overwrite;
        opt.workers = workers;
        if (const int cap = worker_cap_from_env(); cap > 0) {
            const int requested = opt.workers > 0 ? opt.workers : cfg.sweep.workers;
            opt.workers = std::min(requested > 0 ? requested : cap, cap);
        }

        const polsim::StageResult res = polsim::run_stage(stage, cfg, opt);
        std::printf("[%s]%s %s\n", res.stage.c_str(), res.skipped ? " (fresh, skipped)" : "",
                    res.summary.c_str());
        for (const std::string& f : res.outputs) std::printf("  %s\n", f.c_str());
        return 0;
    } catch (const polsim::ParseError& e) {
        std::fprintf(stderr, "polsim: %s\n", e.what());
        return 2;
    } catch (const polsim::ValidationError& e) {
        std::fprintf(stderr, "polsim: %s\n", e.what());
        return 2;
    } catch (const polsim::MissingUpstreamArtifact& e) {
        std::fprintf(stderr, "polsim: %s\n", e.what());
        return 3;
    } catch (const polsim::Error& e) {
        std::fprintf(stderr, "polsim: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "polsim: unexpected error: %s\n", e.what());
        return 1;
    }
}
