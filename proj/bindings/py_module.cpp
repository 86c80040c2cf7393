// Python bindings for the polariton-horizon simulator. Exposes the config
// layer, the closed-form model helpers (EOS, dispersion, channel kinematics),
// checkpoint/CSV readers, and the pipeline stages. Heavy numerics stay in
// C++; arrays cross the boundary as numpy via Eigen.
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <complex>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "polsim/artifacts.hpp"
#include "polsim/config.hpp"
#include "polsim/core_model.hpp"
#include "polsim/errors.hpp"
#include "polsim/gpe_engine.hpp"
#include "polsim/pipeline.hpp"
#include "polsim/units.hpp"

namespace py = pybind11;
using namespace polsim;

namespace {

std::string hash_hex(const RunConfig& cfg) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(cfg.hash()));
    return buf;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "1D driven-dissipative polariton fluid with an acoustic horizon: "
              "steady states, Bogoliubov channels, stimulated Hawking scattering, "
              "and the quasinormal resonance";

    m.attr("hbar") = units::hbar;  // meV ps

    // error mapping: config/user errors -> ValueError, absent artifacts ->
    // FileNotFoundError, numerical/physics failures -> RuntimeError
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const ParseError& e) {
            PyErr_SetString(PyExc_ValueError, e.what());
        } catch (const ValidationError& e) {
            PyErr_SetString(PyExc_ValueError, e.what());
        } catch (const MissingUpstreamArtifact& e) {
            PyErr_SetString(PyExc_FileNotFoundError, e.what());
        }
    });

    // ------------------------------------------------------------------ model
    py::class_<PolaritonParams>(m, "PolaritonParams")
        .def(py::init<>())
        .def_readwrite("mass_kg", &PolaritonParams::m_star)
        .def_readwrite("hbar_omega0_meV", &PolaritonParams::hbar_omega0)
        .def_readwrite("hbar_gamma_ueV", &PolaritonParams::hbar_gamma)
        .def_readwrite("hbar_g_meVum", &PolaritonParams::hbar_g)
        .def_readwrite("hbar_omega_p_meV", &PolaritonParams::hbar_omega_p)
        .def("mass", &PolaritonParams::mass, "effective mass [meV ps^2/um^2]")
        .def("gamma", &PolaritonParams::gamma, "loss rate [1/ps]")
        .def("g", &PolaritonParams::g, "interaction constant [um/ps]")
        .def("omega_p", &PolaritonParams::omega_p, "pump frequency [1/ps]")
        .def("delta0", &PolaritonParams::delta0, "bare detuning [1/ps]")
        .def("delta_eff", &PolaritonParams::delta_eff, py::arg("v0"),
             "flow-Doppler-shifted detuning [1/ps]")
        .def("__repr__", [](const PolaritonParams& p) {
            char buf[160];
            std::snprintf(buf, sizeof buf,
                          "PolaritonParams(mass_kg=%.3g, hbar_gamma_ueV=%.3g, "
                          "hbar_g_meVum=%.3g, detuning_meV=%.4g)",
                          p.m_star, p.hbar_gamma, p.hbar_g,
                          p.hbar_omega_p - p.hbar_omega0);
            return std::string(buf);
        });

    py::class_<LocalHydro>(m, "LocalHydro")
        .def_readonly("n0", &LocalHydro::n0)
        .def_readonly("v0", &LocalHydro::v0)
        .def_readonly("delta_eff", &LocalHydro::delta_eff)
        .def_readonly("c_B", &LocalHydro::c_B)
        .def_readonly("m_det", &LocalHydro::m_det)
        .def_readonly("gap2", &LocalHydro::gap2)
        .def("__repr__", [](const LocalHydro& h) {
            char buf[120];
            std::snprintf(buf, sizeof buf,
                          "LocalHydro(n0=%.4g, v0=%.4g, c_B=%.4g, mach=%.3g)", h.n0,
                          h.v0, h.c_B, h.c_B > 0 ? h.v0 / h.c_B : 0.0);
            return std::string(buf);
        });
    m.def("local_hydro", &local_hydro, py::arg("n0"), py::arg("v0"),
          py::arg("params"),
          "Bogoliubov hydrodynamics (c_B, m_det) of a homogeneous state");
    m.def("local_hydro_clamped", &local_hydro_clamped, py::arg("n0"), py::arg("v0"),
          py::arg("params"), py::arg("clamp_tol") = 1e-3,
          "local_hydro with the slightly-negative near-fold rest gap clamped");

    py::class_<Channel>(m, "Channel")
        .def_property_readonly(
            "label", [](const Channel& c) { return to_string(c.label); })
        .def_readonly("k", &Channel::k)
        .def_readonly("norm_sign", &Channel::norm_sign)
        .def_readonly("group_velocity", &Channel::group_velocity)
        .def_property_readonly("side",
                               [](const Channel& c) { return to_string(c.side); })
        .def_property_readonly(
            "direction", [](const Channel& c) { return to_string(c.direction); })
        .def("__repr__", [](const Channel& c) {
            char buf[120];
            std::snprintf(buf, sizeof buf,
                          "Channel(%s, k=%.4g, v_g=%.4g, norm=%+d)",
                          to_string(c.label).c_str(), c.k, c.group_velocity,
                          c.norm_sign);
            return std::string(buf);
        });

    py::class_<ChannelSet>(m, "ChannelSet")
        .def_readonly("omega", &ChannelSet::omega)
        .def_readonly("channels", &ChannelSet::channels)
        .def_property_readonly(
            "regime", [](const ChannelSet& s) { return to_string(s.regime); })
        .def("find",
             [](const ChannelSet& s, const std::string& label) -> py::object {
                 for (const Channel& c : s.channels)
                     if (to_string(c.label) == label) return py::cast(c);
                 return py::none();
             },
             py::arg("label"));

    py::class_<FrequencyWindow>(m, "FrequencyWindow")
        .def_readonly("omega_min", &FrequencyWindow::omega_min)
        .def_readonly("omega_max", &FrequencyWindow::omega_max);

    m.def("channel_map", &channel_map, py::arg("omega"), py::arg("upstream"),
          py::arg("downstream"),
          "propagating Bogoliubov channels at omega for both regions");
    m.def("frequency_window", &frequency_window, py::arg("upstream"),
          py::arg("downstream"), "(omega_min, omega_max) of the Hawking window");
    m.def("dispersion_from_state",
          [](double k, double n0, double v0, const PolaritonParams& p) {
              DispersionPoint d = dispersion_from_state(k, n0, v0, p);
              return py::make_tuple(d.omega_plus, d.omega_minus, d.propagating);
          },
          py::arg("k"), py::arg("n0"), py::arg("v0"), py::arg("params"),
          "lab-frame (omega_plus, omega_minus, propagating) at wavevector k");

    py::class_<TurningPoint>(m, "TurningPoint")
        .def_readonly("n0", &TurningPoint::n0)
        .def_readonly("drive_intensity", &TurningPoint::drive_intensity);
    m.def("bistability_turning_points", &bistability_turning_points, py::arg("v0"),
          py::arg("params"),
          "the two folds of the bistable S-curve, or None when monostable");
    m.def("amplitude_above_turning_point", &amplitude_above_turning_point,
          py::arg("v0"), py::arg("params"), py::arg("offset"),
          "pump amplitude hbar*F a relative offset above the upper fold");
    m.def("upper_branch_density", &upper_branch_density, py::arg("F"), py::arg("v0"),
          py::arg("params"), "EOS density on the upper branch at drive F");

    // ----------------------------------------------------------------- config
    py::class_<RunConfig>(m, "RunConfig")
        .def_readonly("params", &RunConfig::params)
        .def_readwrite("out_dir", &RunConfig::out_dir)
        .def_readonly("seed", &RunConfig::seed)
        .def_readonly("origin", &RunConfig::origin)
        .def_readonly("has_defect", &RunConfig::has_defect)
        .def_readonly("has_probe", &RunConfig::has_probe)
        .def_readonly("supported", &RunConfig::supported)
        .def_property_readonly("n_points",
                               [](const RunConfig& c) { return c.grid.n_points; })
        .def_property_readonly("length",
                               [](const RunConfig& c) { return c.grid.length; })
        .def("hash_hex", &hash_hex, "canonical FNV-1a config hash, 16 hex digits")
        .def("canonical_listing", &RunConfig::canonical_listing)
        .def("__repr__", [](const RunConfig& c) {
            return "RunConfig(hash=" + hash_hex(c) + ", out_dir='" + c.out_dir + "')";
        });
    m.def("parse_config", &parse_config, py::arg("text"), py::arg("origin") = "",
          "parse and validate an INI config document");
    m.def("load_config", &load_config, py::arg("path"));

    // -------------------------------------------------------------- pipeline
    py::class_<StageOptions>(m, "StageOptions")
        .def(py::init<>())
        .def_readwrite("overwrite", &StageOptions::overwrite)
        .def_readwrite("workers", &StageOptions::workers);
    py::class_<StageResult>(m, "StageResult")
        .def_readonly("stage", &StageResult::stage)
        .def_readonly("skipped", &StageResult::skipped)
        .def_readonly("outputs", &StageResult::outputs)
        .def_readonly("summary", &StageResult::summary)
        .def("__repr__", [](const StageResult& r) {
            return "StageResult(" + r.stage + (r.skipped ? ", skipped" : "") + ": " +
                   r.summary + ")";
        });
    m.def("run_stage", &run_stage, py::arg("name"), py::arg("config"),
          py::arg("options") = StageOptions{},
          py::call_guard<py::gil_scoped_release>(),
          "run one pipeline stage (steady, bistability, dispersion-map, bdg, "
          "sweep, fit, report)");
    m.def("stage_names", &stage_names, py::return_value_policy::copy);

    // -------------------------------------------------------------- artifacts
    py::class_<CsvTable>(m, "CsvTable")
        .def_readonly("comments", &CsvTable::comments)
        .def_readonly("columns", &CsvTable::columns)
        .def("column",
             [](const CsvTable& t, const std::string& name) {
                 std::vector<double> v = t.column(name);
                 return py::array_t<double>(py::ssize_t(v.size()), v.data());
             },
             py::arg("name"), "one named column as a numpy array")
        .def("meta",
             [](const CsvTable& t, const std::string& key) -> py::object {
                 auto v = t.meta(key);
                 return v ? py::cast(*v) : py::none();
             },
             py::arg("key"))
        .def("__len__", [](const CsvTable& t) { return t.rows.size(); });
    m.def("read_csv", &read_csv, py::arg("path"));

    py::class_<QnmReport>(m, "QnmReport")
        .def_readonly("Omega_qnm", &QnmReport::Omega_qnm)
        .def_readonly("Gamma_qnm", &QnmReport::Gamma_qnm)
        .def_readonly("gamma_radiative", &QnmReport::gamma_radiative)
        .def_readonly("Q", &QnmReport::Q)
        .def_readonly("omega_min", &QnmReport::omega_min)
        .def_readonly("omega_max", &QnmReport::omega_max)
        .def_readonly("center_x", &QnmReport::center_x);
    m.def("load_qnm", &load_qnm, py::arg("path"));

    py::class_<SimGrid>(m, "SimGrid")
        .def_readonly("n_points", &SimGrid::n_points)
        .def_readonly("length", &SimGrid::length)
        .def_readonly("x0", &SimGrid::x0)
        .def_readonly("dt", &SimGrid::dt)
        .def("x", &SimGrid::x, "grid coordinates [um]");

    py::class_<BackgroundState>(m, "BackgroundState")
        .def_readonly("grid", &BackgroundState::grid)
        .def_readonly("psi0", &BackgroundState::psi0)
        .def_readonly("n0", &BackgroundState::n0)
        .def_readonly("v0", &BackgroundState::v0)
        .def_readonly("c_B", &BackgroundState::c_B)
        .def_property_readonly("horizon_x",
                               [](const BackgroundState& b) -> py::object {
                                   return b.horizon_x ? py::cast(*b.horizon_x)
                                                      : py::none();
                               })
        .def_readonly("residual", &BackgroundState::residual)
        .def_readonly("t_converged", &BackgroundState::t_converged)
        .def_readonly("up_plateau", &BackgroundState::up_plateau)
        .def_readonly("down_plateau", &BackgroundState::down_plateau)
        .def_readonly("up_plateau_valid", &BackgroundState::up_plateau_valid)
        .def_readonly("down_plateau_valid", &BackgroundState::down_plateau_valid);
    m.def("load_background", &load_background, py::arg("path"), py::arg("config"),
          py::arg("check_hash") = true);
}
