#include "polsim/artifacts.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "polsim/errors.hpp"
#include "polsim/units.hpp"

namespace polsim {

namespace fs = std::filesystem;
using nlohmann::json;

void atomic_write(const std::string& path, const std::string& content) {
    fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open " + tmp.string() + " for writing");
        out << content;
        if (!out.flush()) throw Error("write failed for " + tmp.string());
    }
    fs::rename(tmp, target);
}

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

int CsvTable::col(const std::string& name) const {
    for (size_t i = 0; i < columns.size(); ++i)
        if (columns[i] == name) return static_cast<int>(i);
    throw ValidationError("csv." + name, "column not present");
}

std::optional<std::string> CsvTable::meta(const std::string& key) const {
    for (const std::string& c : comments) {
        size_t eq = c.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t");
            size_t b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        if (trim(c.substr(0, eq)) == key) return trim(c.substr(eq + 1));
    }
    return std::nullopt;
}

std::vector<double> CsvTable::column(const std::string& name) const {
    int j = col(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r[j]);
    return out;
}

void write_csv(const std::string& path, const CsvTable& table) {
    std::ostringstream os;
    for (const std::string& c : table.comments) os << "# " << c << "\n";
    for (size_t j = 0; j < table.columns.size(); ++j)
        os << table.columns[j] << (j + 1 < table.columns.size() ? "," : "");
    os << "\n";
    for (const auto& row : table.rows) {
        for (size_t j = 0; j < row.size(); ++j)
            os << format_number(row[j]) << (j + 1 < row.size() ? "," : "");
        os << "\n";
    }
    atomic_write(path, os.str());
}

CsvTable read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingUpstreamArtifact(path + " is absent; run the producing stage");
    CsvTable t;
    std::string line;
    int lineno = 0;
    bool have_columns = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            size_t a = line.find_first_not_of(" \t", 1);
            t.comments.push_back(a == std::string::npos ? "" : line.substr(a));
            continue;
        }
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!have_columns) {
            t.columns = cells;
            have_columns = true;
            continue;
        }
        if (cells.size() != t.columns.size())
            throw ParseError("row has " + std::to_string(cells.size()) + " cells, expected " +
                                 std::to_string(t.columns.size()),
                             lineno, 1);
        std::vector<double> row;
        for (size_t j = 0; j < cells.size(); ++j) {
            if (cells[j] == "nan") {
                row.push_back(std::nan(""));
                continue;
            }
            try {
                size_t pos = 0;
                row.push_back(std::stod(cells[j], &pos));
                if (pos != cells[j].size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw ParseError("`" + cells[j] + "` is not a number", lineno,
                                 static_cast<int>(j) + 1);
            }
        }
        t.rows.push_back(std::move(row));
    }
    if (!have_columns) throw ParseError("no column header found", lineno, 1);
    return t;
}

std::vector<std::string> artifact_comments(const RunConfig& cfg, const std::string& stage,
                                           const std::vector<std::string>& extra) {
    std::vector<std::string> c;
    c.push_back("stage = " + stage);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(cfg.hash()));
    c.push_back(std::string("config_hash = ") + buf);
    if (!cfg.origin.empty()) c.push_back("config_file = " + cfg.origin);
    c.push_back("units: x in um, t in ps, energies hbar*omega in meV, k in 1/um");
    for (const std::string& e : extra) c.push_back(e);
    return c;
}

// ---------------------------------------------------------------------------
// JSON helpers
// ---------------------------------------------------------------------------

namespace {

json to_json(const Eigen::ArrayXd& a) {
    json out = json::array();
    for (Eigen::Index i = 0; i < a.size(); ++i) out.push_back(a[i]);
    return out;
}

json to_json(const Eigen::ArrayXcd& a) {
    json re = json::array(), im = json::array();
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        re.push_back(a[i].real());
        im.push_back(a[i].imag());
    }
    return json{{"re", std::move(re)}, {"im", std::move(im)}};
}

Eigen::ArrayXd array_from(const json& j) {
    Eigen::ArrayXd a(j.size());
    for (size_t i = 0; i < j.size(); ++i) a[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    return a;
}

Eigen::ArrayXcd carray_from(const json& j) {
    const json& re = j.at("re");
    const json& im = j.at("im");
    Eigen::ArrayXcd a(re.size());
    for (size_t i = 0; i < re.size(); ++i)
        a[static_cast<Eigen::Index>(i)] =
            std::complex<double>(re[i].get<double>(), im[i].get<double>());
    return a;
}

json to_json(const LocalHydro& h) {
    return json{{"n0", h.n0},        {"v0", h.v0},     {"delta_eff", h.delta_eff},
                {"c_B", h.c_B},      {"m_det", h.m_det}, {"m_star", h.m_star},
                {"gap2", h.gap2}};
}

LocalHydro hydro_from(const json& j) {
    LocalHydro h;
    h.n0 = j.at("n0");
    h.v0 = j.at("v0");
    h.delta_eff = j.at("delta_eff");
    h.c_B = j.at("c_B");
    h.m_det = j.at("m_det");
    h.m_star = j.at("m_star");
    h.gap2 = j.at("gap2");
    return h;
}

json to_json(const DriveTerm& d) {
    const char* kind = d.kind == DriveTerm::Kind::pump
                           ? "pump"
                           : d.kind == DriveTerm::Kind::probe ? "probe" : "white_noise";
    return json{{"kind", kind},
                {"envelope", to_json(d.envelope)},
                {"k", d.k},
                {"omega", d.omega},
                {"amplitude", d.amplitude},
                {"phase", d.phase},
                {"ramp_time", d.ramp_time},
                {"ramp_start", d.ramp_start},
                {"seed", d.seed}};
}

DriveTerm drive_from(const json& j) {
    DriveTerm d;
    std::string kind = j.at("kind");
    d.kind = kind == "pump" ? DriveTerm::Kind::pump
                            : kind == "probe" ? DriveTerm::Kind::probe
                                              : DriveTerm::Kind::white_noise;
    d.envelope = array_from(j.at("envelope"));
    d.k = j.at("k");
    d.omega = j.at("omega");
    d.amplitude = j.at("amplitude");
    d.phase = j.at("phase");
    d.ramp_time = j.at("ramp_time");
    d.ramp_start = j.at("ramp_start");
    d.seed = j.at("seed").get<std::uint64_t>();
    return d;
}

std::string hash_hex(std::uint64_t h) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

json load_json_checkpoint(const std::string& path, const char* expected_kind) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingUpstreamArtifact(path + " is absent; run the producing stage");
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw Error("cannot parse " + path + ": " + e.what());
    }
    if (j.value("kind", "") != expected_kind)
        throw Error(path + " is not a " + std::string(expected_kind) + " checkpoint");
    return j;
}

}  // namespace

// ---------------------------------------------------------------------------
// BackgroundState checkpoint
// ---------------------------------------------------------------------------

void save_background(const std::string& path, const BackgroundState& bg,
                     const RunConfig& cfg) {
    json j;
    j["kind"] = "background";
    j["config_hash"] = hash_hex(cfg.hash());
    j["grid"] = {{"n_points", bg.grid.n_points},
                 {"length", bg.grid.length},
                 {"x0", bg.grid.x0},
                 {"dt", bg.grid.dt}};
    j["params"] = {{"m_star", bg.params.m_star},
                   {"hbar_omega0", bg.params.hbar_omega0},
                   {"hbar_gamma", bg.params.hbar_gamma},
                   {"hbar_g", bg.params.hbar_g},
                   {"hbar_omega_p", bg.params.hbar_omega_p}};
    j["pump"] = {{"k_up", bg.pump.k_up},     {"k_down", bg.pump.k_down},
                 {"x_switch", bg.pump.x_switch}, {"F_up", bg.pump.F_up},
                 {"F_down", bg.pump.F_down},     {"omega_p", bg.pump.omega_p}};
    j["defect"] = {{"depth", bg.defect.depth},
                   {"width", bg.defect.width},
                   {"center", bg.defect.center}};
    j["psi0"] = to_json(bg.psi0);
    j["n0"] = to_json(bg.n0);
    j["v0"] = to_json(bg.v0);
    j["c_B"] = to_json(bg.c_B);
    j["m_det"] = to_json(bg.m_det);
    if (bg.horizon_x) j["horizon_x"] = *bg.horizon_x;
    j["horizon_crossings"] = bg.horizon_crossings;
    j["residual"] = bg.residual;
    j["t_converged"] = bg.t_converged;
    j["up_plateau"] = to_json(bg.up_plateau);
    j["down_plateau"] = to_json(bg.down_plateau);
    j["up_plateau_valid"] = bg.up_plateau_valid;
    j["down_plateau_valid"] = bg.down_plateau_valid;
    j["upstream_window"] = {bg.upstream_window.first, bg.upstream_window.second};
    j["downstream_window"] = {bg.downstream_window.first, bg.downstream_window.second};
    j["absorb_rate"] = to_json(bg.absorb_rate);
    j["absorb_margin"] = bg.absorb_margin;
    json drives = json::array();
    for (const DriveTerm& d : bg.sponge_drives) drives.push_back(to_json(d));
    j["sponge_drives"] = std::move(drives);
    atomic_write(path, j.dump(1));
}

BackgroundState load_background(const std::string& path, const RunConfig& cfg,
                                bool check_hash) {
    json j = load_json_checkpoint(path, "background");
    if (check_hash && j.value("config_hash", "") != hash_hex(cfg.hash()))
        throw MissingUpstreamArtifact(
            path + " was produced by a different config (hash " +
            j.value("config_hash", "?") + " != " + hash_hex(cfg.hash()) +
            "); rerun the steady stage");
    BackgroundState bg;
    const json& g = j.at("grid");
    bg.grid.n_points = g.at("n_points");
    bg.grid.length = g.at("length");
    bg.grid.x0 = g.at("x0");
    bg.grid.dt = g.at("dt");
    const json& p = j.at("params");
    bg.params.m_star = p.at("m_star");
    bg.params.hbar_omega0 = p.at("hbar_omega0");
    bg.params.hbar_gamma = p.at("hbar_gamma");
    bg.params.hbar_g = p.at("hbar_g");
    bg.params.hbar_omega_p = p.at("hbar_omega_p");
    const json& pu = j.at("pump");
    bg.pump.k_up = pu.at("k_up");
    bg.pump.k_down = pu.at("k_down");
    bg.pump.x_switch = pu.at("x_switch");
    bg.pump.F_up = pu.at("F_up");
    bg.pump.F_down = pu.at("F_down");
    bg.pump.omega_p = pu.at("omega_p");
    const json& de = j.at("defect");
    bg.defect.depth = de.at("depth");
    bg.defect.width = de.at("width");
    bg.defect.center = de.at("center");
    bg.psi0 = carray_from(j.at("psi0"));
    bg.n0 = array_from(j.at("n0"));
    bg.v0 = array_from(j.at("v0"));
    bg.c_B = array_from(j.at("c_B"));
    bg.m_det = array_from(j.at("m_det"));
    if (j.contains("horizon_x")) bg.horizon_x = j.at("horizon_x").get<double>();
    bg.horizon_crossings = j.at("horizon_crossings");
    bg.residual = j.at("residual");
    bg.t_converged = j.at("t_converged");
    bg.up_plateau = hydro_from(j.at("up_plateau"));
    bg.down_plateau = hydro_from(j.at("down_plateau"));
    bg.up_plateau_valid = j.at("up_plateau_valid");
    bg.down_plateau_valid = j.at("down_plateau_valid");
    bg.upstream_window = {j.at("upstream_window")[0], j.at("upstream_window")[1]};
    bg.downstream_window = {j.at("downstream_window")[0], j.at("downstream_window")[1]};
    bg.absorb_rate = array_from(j.at("absorb_rate"));
    bg.absorb_margin = j.at("absorb_margin");
    for (const json& d : j.at("sponge_drives")) bg.sponge_drives.push_back(drive_from(d));
    return bg;
}

// ---------------------------------------------------------------------------
// Sweep CSV
// ---------------------------------------------------------------------------

void save_sweep(const std::string& path, const ScatterSweepResult& result,
                const RunConfig& cfg) {
    CsvTable t;
    t.comments = artifact_comments(
        cfg, "sweep",
        {"omega_min_meV = " + format_number(units::hbar * result.window.omega_min),
         "omega_max_meV = " + format_number(units::hbar * result.window.omega_max),
         "amplitudes are |a| in units of the extracted |in|; abs_* are raw "
         "probe-normalized magnitudes"});
    t.columns = {"omega_meV",     "abs_HR",  "abs_down", "abs_dn", "abs_down_star",
                 "abs_dn_star",   "gap_flag", "abs_in",  "T_down", "R_HR",
                 "T_dn",          "regime"};
    for (const SweepPoint& pt : result.points) {
        const ChannelAmplitudes& a = pt.amplitudes;
        size_t i = &pt - result.points.data();
        t.rows.push_back({units::hbar * pt.omega_pr,
                          pt.gap ? std::nan("") : a.abs_of(ChannelLabel::HR),
                          pt.gap ? std::nan("") : a.abs_of(ChannelLabel::down),
                          pt.gap ? std::nan("") : a.abs_of(ChannelLabel::dn),
                          pt.gap ? std::nan("") : a.abs_of(ChannelLabel::down, true),
                          pt.gap ? std::nan("") : a.abs_of(ChannelLabel::dn, true),
                          pt.gap ? 1.0 : 0.0,
                          pt.gap ? std::nan("") : a.abs_of(ChannelLabel::in),
                          result.T_down[i], result.R_HR[i], result.T_dn[i],
                          static_cast<double>(pt.regime)});
    }
    write_csv(path, t);
}

// ---------------------------------------------------------------------------
// QNM and fit records
// ---------------------------------------------------------------------------

void save_qnm(const std::string& path, const QnmReport& r) {
    json j;
    j["kind"] = "qnm";
    j["config_hash"] = hash_hex(r.config_hash);
    j["Omega_qnm"] = r.Omega_qnm;
    j["Gamma_qnm"] = r.Gamma_qnm;
    j["gamma_radiative"] = r.gamma_radiative;
    j["Q"] = r.Q;
    j["omega_min"] = r.omega_min;
    j["omega_max"] = r.omega_max;
    j["center_x"] = r.center_x;
    j["zero_tol"] = r.zero_tol;
    j["hbar_Omega_meV"] = units::hbar * r.Omega_qnm;
    j["hbar_Gamma_meV"] = units::hbar * r.Gamma_qnm;
    atomic_write(path, j.dump(1));
}

QnmReport load_qnm(const std::string& path) {
    json j = load_json_checkpoint(path, "qnm");
    QnmReport r;
    r.Omega_qnm = j.at("Omega_qnm");
    r.Gamma_qnm = j.at("Gamma_qnm");
    r.gamma_radiative = j.at("gamma_radiative");
    r.Q = j.at("Q");
    r.omega_min = j.at("omega_min");
    r.omega_max = j.at("omega_max");
    r.center_x = j.at("center_x");
    r.zero_tol = j.at("zero_tol");
    r.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
    return r;
}

void save_fit(const std::string& path, const BreitWignerFit& fit, const RunConfig& cfg) {
    json j;
    j["kind"] = "fit";
    j["config_hash"] = hash_hex(cfg.hash());
    j["Omega_qnm"] = fit.Omega_qnm;
    j["Gamma_qnm"] = fit.Gamma_qnm;
    j["hbar_Omega_meV"] = units::hbar * fit.Omega_qnm;
    j["hbar_Gamma_meV"] = units::hbar * fit.Gamma_qnm;
    j["t_bg_re"] = fit.t_bg.real();
    j["t_bg_im"] = fit.t_bg.imag();
    j["alpha_re"] = fit.alpha.real();
    j["alpha_im"] = fit.alpha.imag();
    j["residual"] = fit.residual;
    j["magnitude_only"] = fit.magnitude_only;
    j["phase_slip_pi"] = fit.phase_slip_pi;
    j["n_points"] = fit.n_points;
    json cov = json::array();
    for (Eigen::Index i = 0; i < fit.covariance_diag.size(); ++i)
        cov.push_back(fit.covariance_diag[i]);
    j["covariance_diag"] = std::move(cov);
    atomic_write(path, j.dump(1));
}

}  // namespace polsim
