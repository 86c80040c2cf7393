#include "polsim/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "polsim/errors.hpp"

namespace polsim {

namespace {

struct Entry {
    std::string section, key, value;
    int line = 0;
};

// Lines are `key = value`, `[section]`, blank, or comment (# or ; at the
// start or after whitespace). No quoting or escapes: values run to the
// comment or line end, trimmed.
std::vector<Entry> tokenize(const std::string& text) {
    std::vector<Entry> entries;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        // strip comments
        for (size_t i = 0; i < line.size(); ++i) {
            if ((line[i] == '#' || line[i] == ';') &&
                (i == 0 || line[i - 1] == ' ' || line[i - 1] == '\t')) {
                line.erase(i);
                break;
            }
        }
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        std::string t = trim(line);
        if (t.empty()) continue;
        if (t.front() == '[') {
            size_t close = t.find(']');
            if (close == std::string::npos)
                throw ParseError("unterminated section header", lineno,
                                 static_cast<int>(line.find('[')) + 1);
            std::string rest = trim(t.substr(close + 1));
            if (!rest.empty())
                throw ParseError("text after section header", lineno,
                                 static_cast<int>(line.find(']')) + 2);
            section = trim(t.substr(1, close - 1));
            if (section.empty()) throw ParseError("empty section name", lineno, 1);
            continue;
        }
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ParseError("expected `key = value`", lineno, 1);
        Entry e;
        e.section = section;
        e.key = trim(t.substr(0, eq));
        e.value = trim(t.substr(eq + 1));
        e.line = lineno;
        if (e.key.empty()) throw ParseError("empty key", lineno, 1);
        if (e.section.empty())
            throw ParseError("key outside any [section]", lineno, 1);
        entries.push_back(std::move(e));
    }
    return entries;
}

double parse_double(const Entry& e) {
    try {
        size_t pos = 0;
        double v = std::stod(e.value, &pos);
        while (pos < e.value.size() && std::isspace(static_cast<unsigned char>(e.value[pos])))
            ++pos;
        if (pos != e.value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ParseError("`" + e.value + "` is not a number (key " + e.section + "." +
                             e.key + ")",
                         e.line, 1);
    }
}

long parse_int(const Entry& e) {
    double v = parse_double(e);
    long i = static_cast<long>(v);
    if (static_cast<double>(i) != v)
        throw ParseError("`" + e.value + "` is not an integer (key " + e.section + "." +
                             e.key + ")",
                         e.line, 1);
    return i;
}

bool parse_bool(const Entry& e) {
    std::string v;
    for (char c : e.value) v += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
    if (v == "false" || v == "no" || v == "off" || v == "0") return false;
    throw ParseError("`" + e.value + "` is not a boolean (key " + e.section + "." + e.key +
                         ")",
                     e.line, 1);
}

std::uint64_t parse_u64(const Entry& e) {
    try {
        size_t pos = 0;
        unsigned long long v = std::stoull(e.value, &pos);
        if (pos != e.value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ParseError("`" + e.value + "` is not an unsigned integer (key " + e.section +
                             "." + e.key + ")",
                         e.line, 1);
    }
}

void require(bool ok, const std::string& field, const std::string& constraint) {
    if (!ok) throw ValidationError(field, constraint);
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

RunConfig parse_config(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    cfg.origin = origin;
    cfg.source_text = text;

    std::vector<Entry> entries = tokenize(text);
    std::set<std::string> seen;
    for (const Entry& e : entries) {
        std::string full = e.section + "." + e.key;
        if (!seen.insert(full).second)
            throw ParseError("duplicate key " + full, e.line, 1);
    }

    // setter table; sections become "declared" when any of their keys appear
    std::set<std::string> sections_present;
    for (const Entry& e : entries) sections_present.insert(e.section);

    using Setter = std::function<void(const Entry&)>;
    std::map<std::string, Setter> set;

    set["params.mass_kg"] = [&](const Entry& e) { cfg.params.m_star = parse_double(e); };
    set["params.hbar_omega0_meV"] = [&](const Entry& e) {
        cfg.params.hbar_omega0 = parse_double(e);
    };
    set["params.hbar_gamma_meV"] = [&](const Entry& e) {
        cfg.params.hbar_gamma = parse_double(e) * 1e3;  // stored in ueV
    };
    set["params.hbar_g_meVum"] = [&](const Entry& e) {
        cfg.params.hbar_g = parse_double(e);
    };
    set["params.hbar_omega_p_meV"] = [&](const Entry& e) {
        cfg.params.hbar_omega_p = parse_double(e);
    };

    set["grid.n_points"] = [&](const Entry& e) {
        cfg.grid.n_points = static_cast<int>(parse_int(e));
    };
    set["grid.length_um"] = [&](const Entry& e) { cfg.grid.length = parse_double(e); };
    set["grid.x0_um"] = [&](const Entry& e) { cfg.grid.x0 = parse_double(e); };
    set["grid.dt_ps"] = [&](const Entry& e) { cfg.grid.dt = parse_double(e); };

    set["pump.k_up"] = [&](const Entry& e) { cfg.pump.k_up = parse_double(e); };
    set["pump.k_down"] = [&](const Entry& e) { cfg.pump.k_down = parse_double(e); };
    set["pump.x_switch_um"] = [&](const Entry& e) {
        cfg.pump.x_switch = parse_double(e);
    };
    set["pump.F_up"] = [&](const Entry& e) { cfg.pump.F_up = parse_double(e); };
    set["pump.F_down"] = [&](const Entry& e) { cfg.pump.F_down = parse_double(e); };
    set["pump.intensity_offset"] = [&](const Entry& e) {
        cfg.intensity_offset = parse_double(e);
    };
    set["pump.c_target"] = [&](const Entry& e) { cfg.c_target = parse_double(e); };
    set["pump.min_offset"] = [&](const Entry& e) { cfg.min_offset = parse_double(e); };
    set["pump.supported"] = [&](const Entry& e) { cfg.supported = parse_bool(e); };

    set["defect.depth_meV"] = [&](const Entry& e) { cfg.defect.depth = parse_double(e); };
    set["defect.width_um"] = [&](const Entry& e) { cfg.defect.width = parse_double(e); };
    set["defect.center_um"] = [&](const Entry& e) {
        cfg.defect.center = parse_double(e);
    };

    set["probe.center_um"] = [&](const Entry& e) { cfg.probe.center = parse_double(e); };
    set["probe.width_um"] = [&](const Entry& e) { cfg.probe.width = parse_double(e); };
    set["probe.rel_amplitude"] = [&](const Entry& e) {
        cfg.probe_rel_amplitude = parse_double(e);
    };
    set["probe.amplitude"] = [&](const Entry& e) {
        cfg.probe.amplitude = parse_double(e);
    };
    set["probe.ramp_ps"] = [&](const Entry& e) { cfg.probe.ramp_time = parse_double(e); };
    set["probe.relax_ps"] = [&](const Entry& e) {
        cfg.probe.relax_time = parse_double(e);
    };
    set["probe.record_ps"] = [&](const Entry& e) {
        cfg.probe.record_time = parse_double(e);
    };
    set["probe.stride_ps"] = [&](const Entry& e) {
        cfg.probe.record_stride = parse_double(e);
    };

    set["sweep.base_points"] = [&](const Entry& e) {
        cfg.sweep.base_points = static_cast<int>(parse_int(e));
    };
    set["sweep.cutoff_factor"] = [&](const Entry& e) {
        cfg.sweep.cutoff_factor = parse_double(e);
    };
    set["sweep.floor_meV"] = [&](const Entry& e) {
        cfg.sweep.floor_meV = parse_double(e);
    };
    set["sweep.qnm_guess_meV"] = [&](const Entry& e) {
        cfg.sweep.qnm_guess_meV = parse_double(e);
    };
    set["sweep.workers"] = [&](const Entry& e) {
        cfg.sweep.workers = static_cast<int>(parse_int(e));
    };
    set["sweep.lossless"] = [&](const Entry& e) { cfg.sweep.lossless = parse_bool(e); };
    set["sweep.down_n0"] = [&](const Entry& e) { cfg.sweep.down_n0 = parse_double(e); };
    set["sweep.down_v0"] = [&](const Entry& e) { cfg.sweep.down_v0 = parse_double(e); };

    set["analysis.steady_tol"] = [&](const Entry& e) {
        cfg.analysis.steady_tol = parse_double(e);
    };
    set["analysis.steady_t_max_ps"] = [&](const Entry& e) {
        cfg.analysis.steady_t_max = parse_double(e);
    };
    set["analysis.absorb_margin_um"] = [&](const Entry& e) {
        cfg.analysis.absorb_margin = parse_double(e);
    };
    set["analysis.noise_amplitude"] = [&](const Entry& e) {
        cfg.analysis.noise_amplitude = parse_double(e);
    };
    set["analysis.noise_duration_ps"] = [&](const Entry& e) {
        cfg.analysis.noise_duration = parse_double(e);
    };
    set["analysis.noise_stride_ps"] = [&](const Entry& e) {
        cfg.analysis.noise_stride = parse_double(e);
    };
    set["analysis.zero_tol"] = [&](const Entry& e) {
        cfg.analysis.zero_tol = parse_double(e);
    };
    set["analysis.qnm_window_factor"] = [&](const Entry& e) {
        cfg.analysis.qnm_window_factor = parse_double(e);
    };
    set["analysis.qnm_lo_meV"] = [&](const Entry& e) {
        cfg.analysis.qnm_lo_meV = parse_double(e);
    };
    set["analysis.loc_radius_um"] = [&](const Entry& e) {
        cfg.analysis.loc_radius = parse_double(e);
    };
    set["analysis.up_lo_um"] = [&](const Entry& e) {
        cfg.analysis.up_lo = parse_double(e);
    };
    set["analysis.up_hi_um"] = [&](const Entry& e) {
        cfg.analysis.up_hi = parse_double(e);
    };
    set["analysis.down_lo_um"] = [&](const Entry& e) {
        cfg.analysis.down_lo = parse_double(e);
    };
    set["analysis.down_hi_um"] = [&](const Entry& e) {
        cfg.analysis.down_hi = parse_double(e);
    };

    set["output.dir"] = [&](const Entry& e) { cfg.out_dir = e.value; };
    set["output.seed"] = [&](const Entry& e) { cfg.seed = parse_u64(e); };

    const std::set<std::string> known_sections = {"params", "grid",  "pump",
                                                  "defect", "probe", "sweep",
                                                  "analysis", "output"};
    for (const Entry& e : entries) {
        if (!known_sections.count(e.section))
            throw ValidationError(e.section, "unknown section");
        auto it = set.find(e.section + "." + e.key);
        if (it == set.end())
            throw ValidationError(e.section + "." + e.key, "unknown key");
        it->second(e);
    }

    cfg.has_defect = sections_present.count("defect") > 0;
    cfg.has_probe = sections_present.count("probe") > 0;
    cfg.pump.omega_p = cfg.params.omega_p();
    if (!cfg.supported) cfg.pump.F_down = 0.0;

    // validation: a config either holds a usable model or refuses to load
    require(cfg.params.m_star > 0, "params.mass_kg", "must be > 0");
    require(cfg.params.hbar_gamma > 0, "params.hbar_gamma_meV", "must be > 0");
    require(cfg.params.hbar_g > 0, "params.hbar_g_meVum", "must be > 0");
    require(cfg.grid.n_points >= 64, "grid.n_points", "must be >= 64");
    require(cfg.grid.length > 0, "grid.length_um", "must be > 0");
    require(cfg.grid.dt >= 0, "grid.dt_ps", "must be >= 0 (0 = stable default)");
    require(cfg.pump.k_up >= 0 && cfg.pump.k_down >= 0, "pump.k_up",
            "wavevectors must be >= 0");
    require(cfg.pump.F_up >= 0 && cfg.pump.F_down >= 0, "pump.F_up",
            "drive amplitudes must be >= 0 (0 = calibrate)");
    require(cfg.intensity_offset >= 0, "pump.intensity_offset", "must be >= 0");
    require(cfg.c_target > 0, "pump.c_target", "must be > 0");
    if (cfg.has_defect) {
        require(cfg.defect.width > 0, "defect.width_um", "must be > 0");
    }
    if (cfg.has_probe) {
        require(cfg.probe.width > 0, "probe.width_um", "must be > 0");
        require(cfg.probe.record_time > 0, "probe.record_ps", "must be > 0");
        require(cfg.probe.record_stride > 0, "probe.stride_ps", "must be > 0");
        require(cfg.probe.record_stride < cfg.probe.record_time, "probe.stride_ps",
                "must be < record_ps");
        require(cfg.probe_rel_amplitude > 0, "probe.rel_amplitude", "must be > 0");
    }
    require(cfg.sweep.base_points >= 2, "sweep.base_points", "must be >= 2");
    require(cfg.sweep.cutoff_factor > 0, "sweep.cutoff_factor", "must be > 0");
    require(cfg.sweep.floor_meV >= 0, "sweep.floor_meV", "must be >= 0");
    require(cfg.sweep.workers >= 1, "sweep.workers", "must be >= 1");
    require(cfg.sweep.down_n0 >= 0, "sweep.down_n0", "must be >= 0 (0 = unset)");
    require((cfg.sweep.down_n0 > 0) == (cfg.sweep.down_v0 != 0), "sweep.down_n0",
            "down_n0 and down_v0 override the downstream hydro together");
    require(cfg.analysis.qnm_lo_meV >= 0, "analysis.qnm_lo_meV",
            "must be >= 0 (0 = plateau omega_max)");
    require(cfg.analysis.steady_tol > 0, "analysis.steady_tol", "must be > 0");
    require(cfg.analysis.steady_t_max > 0, "analysis.steady_t_max_ps", "must be > 0");
    require(cfg.analysis.absorb_margin >= 0, "analysis.absorb_margin_um",
            "must be >= 0");
    require(cfg.analysis.noise_stride > 0, "analysis.noise_stride_ps", "must be > 0");
    require(cfg.analysis.zero_tol > 0, "analysis.zero_tol", "must be > 0");
    require(cfg.analysis.qnm_window_factor > 1, "analysis.qnm_window_factor",
            "must be > 1");
    require(!cfg.out_dir.empty(), "output.dir", "must not be empty");
    if (cfg.grid.dt == 0)
        cfg.grid.dt = SimGrid::stable_dt(cfg.grid.dx(), cfg.params);
    cfg.grid.validate(cfg.params);
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path);
}

std::string RunConfig::canonical_listing() const {
    std::ostringstream os;
    os << "params.mass_kg = " << fmt(params.m_star) << "\n"
       << "params.hbar_omega0_meV = " << fmt(params.hbar_omega0) << "\n"
       << "params.hbar_gamma_meV = " << fmt(params.hbar_gamma * 1e-3) << "\n"
       << "params.hbar_g_meVum = " << fmt(params.hbar_g) << "\n"
       << "params.hbar_omega_p_meV = " << fmt(params.hbar_omega_p) << "\n"
       << "grid.n_points = " << grid.n_points << "\n"
       << "grid.length_um = " << fmt(grid.length) << "\n"
       << "grid.x0_um = " << fmt(grid.x0) << "\n"
       << "grid.dt_ps = " << fmt(grid.dt) << "\n"
       << "pump.k_up = " << fmt(pump.k_up) << "\n"
       << "pump.k_down = " << fmt(pump.k_down) << "\n"
       << "pump.x_switch_um = " << fmt(pump.x_switch) << "\n"
       << "pump.F_up = " << fmt(pump.F_up) << "\n"
       << "pump.F_down = " << fmt(pump.F_down) << "\n"
       << "pump.intensity_offset = " << fmt(intensity_offset) << "\n"
       << "pump.c_target = " << fmt(c_target) << "\n"
       << "pump.min_offset = " << fmt(min_offset) << "\n"
       << "pump.supported = " << (supported ? 1 : 0) << "\n"
       << "defect.present = " << (has_defect ? 1 : 0) << "\n"
       << "defect.depth_meV = " << fmt(defect.depth) << "\n"
       << "defect.width_um = " << fmt(defect.width) << "\n"
       << "defect.center_um = " << fmt(defect.center) << "\n"
       << "probe.present = " << (has_probe ? 1 : 0) << "\n"
       << "probe.center_um = " << fmt(probe.center) << "\n"
       << "probe.width_um = " << fmt(probe.width) << "\n"
       << "probe.rel_amplitude = " << fmt(probe_rel_amplitude) << "\n"
       << "probe.amplitude = " << fmt(probe.amplitude) << "\n"
       << "probe.ramp_ps = " << fmt(probe.ramp_time) << "\n"
       << "probe.relax_ps = " << fmt(probe.relax_time) << "\n"
       << "probe.record_ps = " << fmt(probe.record_time) << "\n"
       << "probe.stride_ps = " << fmt(probe.record_stride) << "\n"
       << "sweep.base_points = " << sweep.base_points << "\n"
       << "sweep.cutoff_factor = " << fmt(sweep.cutoff_factor) << "\n"
       << "sweep.floor_meV = " << fmt(sweep.floor_meV) << "\n"
       << "sweep.qnm_guess_meV = " << fmt(sweep.qnm_guess_meV) << "\n"
       << "sweep.lossless = " << (sweep.lossless ? 1 : 0) << "\n"
       << "sweep.down_n0 = " << fmt(sweep.down_n0) << "\n"
       << "sweep.down_v0 = " << fmt(sweep.down_v0) << "\n"
       << "analysis.steady_tol = " << fmt(analysis.steady_tol) << "\n"
       << "analysis.steady_t_max_ps = " << fmt(analysis.steady_t_max) << "\n"
       << "analysis.absorb_margin_um = " << fmt(analysis.absorb_margin) << "\n"
       << "analysis.noise_amplitude = " << fmt(analysis.noise_amplitude) << "\n"
       << "analysis.noise_duration_ps = " << fmt(analysis.noise_duration) << "\n"
       << "analysis.noise_stride_ps = " << fmt(analysis.noise_stride) << "\n"
       << "analysis.zero_tol = " << fmt(analysis.zero_tol) << "\n"
       << "analysis.qnm_window_factor = " << fmt(analysis.qnm_window_factor) << "\n"
       << "analysis.qnm_lo_meV = " << fmt(analysis.qnm_lo_meV) << "\n"
       << "analysis.loc_radius_um = " << fmt(analysis.loc_radius) << "\n"
       << "analysis.up_lo_um = " << fmt(analysis.up_lo) << "\n"
       << "analysis.up_hi_um = " << fmt(analysis.up_hi) << "\n"
       << "analysis.down_lo_um = " << fmt(analysis.down_lo) << "\n"
       << "analysis.down_hi_um = " << fmt(analysis.down_hi) << "\n"
       << "output.seed = " << seed << "\n";
    return os.str();
}

std::uint64_t RunConfig::hash() const {
    // FNV-1a 64
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : canonical_listing()) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace polsim
