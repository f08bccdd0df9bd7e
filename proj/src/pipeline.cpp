#include "pcsim/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "pcsim/errors.hpp"
#include "pcsim/farfield.hpp"
#include "pcsim/fdtd.hpp"
#include "pcsim/geometry.hpp"
#include "pcsim/photonstats.hpp"
#include "pcsim/purcell.hpp"
#include "pcsim/units.hpp"
#include "pcsim/version.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace pcsim {

namespace {

const std::vector<std::string> kStageOrder = {"geometry", "fdtd", "farfield", "purcell", "photonstats"};

struct ScenarioSpec {
    std::string name;
    std::vector<std::string> stages;
    std::vector<std::string> variants; // at least one ("default")
    ConfigDoc doc;

    bool has_stage(const std::string &s) const {
        return std::find(stages.begin(), stages.end(), s) != stages.end();
    }
};

CavityDesign build_variant_design(const ConfigDoc &doc, const std::string &variant) {
    LatticeSpec lat;
    lat.a_nm = doc.get_double("design", "a_nm", lat.a_nm);
    lat.r_norm = doc.get_double("design", "r_norm", lat.r_norm);
    lat.slab_thickness_nm = doc.get_double("design", "slab_thickness_nm", lat.slab_thickness_nm);
    lat.n_slab = doc.get_double("design", "n_slab", lat.n_slab);
    lat.n_eff = doc.get_double("design", "n_eff", lat.n_eff);
    lat.nx = static_cast<int>(doc.get_int("design", "nx", lat.nx));
    lat.ny = static_cast<int>(doc.get_int("design", "ny", lat.ny));

    DefectSpec def;
    def.removed_holes = static_cast<int>(doc.get_int("design", "removed_holes", def.removed_holes));
    def.side_shift_norm = doc.get_double("design", "side_shift_norm", def.side_shift_norm);
    def.reduced_radius_norm = doc.get_double("design", "reduced_radius_norm", def.reduced_radius_norm);

    const std::string variant_section = "variant." + variant;
    std::vector<std::string> layer_names;
    if (doc.has_key(variant_section, "layers")) {
        layer_names = doc.get_list(variant_section, "layers");
    } else {
        layer_names = doc.get_list("design", "layers");
    }

    std::vector<PerturbationLayer> layers;
    for (const auto &name : layer_names) {
        PerturbationLayer layer;
        layer.label = layer_label_from_string(name);
        const std::string section = "layer." + name;
        layer.annulus_width_nm = doc.get_double(section, "annulus_width_nm", default_annulus_width_nm(layer.label));
        if (doc.has_key(section, "hosts")) {
            for (const auto &item : doc.get_list(section, "hosts")) {
                const size_t colon = item.find(':');
                if (colon == std::string::npos) {
                    throw ConfigError("[" + section + "] hosts: expected 'x_norm:row', got '" + item + "'");
                }
                layer.host_holes.push_back({std::stod(item.substr(0, colon)), std::stoi(item.substr(colon + 1))});
            }
        } else {
            layer.host_holes = default_layer_hosts(layer.label);
        }
        layers.push_back(layer);
    }
    return build_cavity_design(lat, def, layers);
}

ScenarioSpec parse_scenario(const ConfigDoc &doc) {
    ScenarioSpec spec;
    spec.doc = doc;
    spec.name = doc.get_string("scenario", "name", "scenario");

    spec.stages = doc.get_list("scenario", "stages");
    if (spec.stages.empty()) {
        throw ConfigError("scenario: 'stages' must list at least one stage");
    }
    if (spec.stages.size() > kStageOrder.size()) {
        throw ConfigError("scenario: too many stages");
    }
    for (size_t i = 0; i < spec.stages.size(); ++i) {
        if (spec.stages[i] != kStageOrder[i]) {
            throw ConfigError("scenario: stages must be a contiguous pipeline prefix (" + kStageOrder[0] +
                              ", ...); got '" + spec.stages[i] + "' at position " + std::to_string(i));
        }
    }

    spec.variants = doc.get_list("scenario", "variants");
    if (spec.variants.empty()) {
        spec.variants = {"default"};
    }
    return spec;
}

// ---- stage results kept in memory for chaining ----

struct VariantState {
    CavityDesign design;
    EpsilonMap epsilon;
    ResonanceResult mode;
    double fit_residual = 0.0;
    double prominence = 0.0;
    KSpectrum kspec;
    CollectionResult collection;
    std::complex<double> coupling{0.0, 0.0};
    EmissionSpectrum spectrum;
    double lifetime_on_ps = 0.0;
    std::map<std::string, double> metrics;
    std::vector<std::string> files; // relative to variant dir
};

std::string hex64(uint64_t v) {
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << v;
    return s.str();
}

struct FdtdStageConfig {
    double dx_nm = 0.0;
    int pml_cells = 10;
    int margin_cells = 18;
    double source_lambda_nm = 0.0;
    double source_bandwidth_nm = 0.0;
    double window_min_nm = 0.0;
    double window_max_nm = 0.0;
    double ringdown_cycles = 500.0;
    int energy_stride = 0;
    bool export_mode_field = true;
    bool export_probes = false;

    static FdtdStageConfig from(const ConfigDoc &doc, double a_nm) {
        FdtdStageConfig c;
        const double dx_div = doc.get_double("fdtd", "dx_div", 16.0);
        c.dx_nm = doc.get_double("fdtd", "dx_nm", a_nm / dx_div);
        c.pml_cells = static_cast<int>(doc.get_int("fdtd", "pml_cells", c.pml_cells));
        c.margin_cells = static_cast<int>(doc.get_int("fdtd", "margin_cells", c.margin_cells));
        c.source_lambda_nm = doc.get_double("fdtd", "source_lambda_nm", 3.2 * a_nm);
        c.source_bandwidth_nm = doc.get_double("fdtd", "source_bandwidth_nm", 0.9 * a_nm);
        c.window_min_nm = doc.get_double("fdtd", "window_min_nm", 2.2 * a_nm);
        c.window_max_nm = doc.get_double("fdtd", "window_max_nm", 4.5 * a_nm);
        c.ringdown_cycles = doc.get_double("fdtd", "ringdown_cycles", c.ringdown_cycles);
        c.energy_stride = static_cast<int>(doc.get_int("fdtd", "energy_stride", 0));
        c.export_mode_field = doc.get_bool("fdtd", "export_mode_field", true);
        c.export_probes = doc.get_bool("fdtd", "export_probes", false);
        return c;
    }
};

} // namespace

uint64_t fnv1a64(const void *data, size_t len) {
    const auto *p = static_cast<const unsigned char *>(data);
    uint64_t h = 0xcbf29ce484222325ULL;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

uint64_t fnv1a64_file(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open for hashing: " + path);
    }
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[65536];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const std::streamsize n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (!in) {
            break;
        }
    }
    return h;
}

std::string resolve_config_path(const std::string &arg) {
    std::vector<std::string> candidates = {arg, arg + ".cfg"};
    if (const char *root = std::getenv(kConfigRootEnv); root && *root) {
        candidates.push_back(std::string(root) + "/" + arg);
        candidates.push_back(std::string(root) + "/" + arg + ".cfg");
    }
    candidates.push_back("configs/" + arg);
    candidates.push_back("configs/" + arg + ".cfg");
    for (const auto &c : candidates) {
        std::error_code ec;
        if (fs::is_regular_file(c, ec)) {
            return c;
        }
    }
    throw ConfigError("cannot resolve scenario config '" + arg + "' (also tried $" + std::string(kConfigRootEnv) +
                      " and ./configs)");
}

void validate_scenario_config(const ConfigDoc &doc) {
    ScenarioSpec spec = parse_scenario(doc);
    for (const auto &variant : spec.variants) {
        build_variant_design(doc, variant); // throws on bad geometry
    }
    if (spec.has_stage("fdtd")) {
        const double a = doc.get_double("design", "a_nm", LatticeSpec{}.a_nm);
        FdtdStageConfig c = FdtdStageConfig::from(doc, a);
        if (!(c.dx_nm > 0.0) || c.dx_nm > a / 12.0) {
            throw ConfigError("fdtd: dx must satisfy 0 < dx <= a/12");
        }
        if (!(c.window_min_nm < c.window_max_nm)) {
            throw ConfigError("fdtd: window_min_nm must be below window_max_nm");
        }
        if (c.pml_cells != 0 && c.pml_cells < 8) {
            throw ConfigError("fdtd: pml_cells must be 0 or >= 8");
        }
    }
    if (spec.has_stage("farfield")) {
        const double na = doc.get_double("farfield", "na_lens", 0.75);
        if (!(na > 0.0 && na <= 1.0)) {
            throw ConfigError("farfield: na_lens must be in (0, 1]");
        }
        const double qu = doc.get_double("farfield", "q_unpert_ref", 11000.0);
        const double qp = doc.get_double("farfield", "q_pert_ref", 8500.0);
        if (!(qu > qp && qp > 0.0)) {
            throw ConfigError("farfield: need q_unpert_ref > q_pert_ref > 0");
        }
    }
    if (spec.has_stage("purcell")) {
        if (!(doc.get_double("purcell", "gamma0_per_ns", 1.0 / 0.6) > 0.0)) {
            throw ConfigError("purcell: gamma0_per_ns must be > 0");
        }
    }
    if (spec.has_stage("photonstats")) {
        PulseTrainSpec p;
        p.rep_rate_hz = doc.get_double("photonstats", "rep_rate_hz", p.rep_rate_hz);
        p.pulse_fwhm_ps = doc.get_double("photonstats", "pulse_fwhm_ps", p.pulse_fwhm_ps);
        p.n_pulses = doc.get_int("photonstats", "n_pulses", p.n_pulses);
        p.validate();
        const std::string mode = doc.get_string("photonstats", "mode", "auto");
        if (mode != "auto" && mode != "cross") {
            throw ConfigError("photonstats: mode must be 'auto' or 'cross'");
        }
        DetectorSpec det;
        det.jitter_fwhm_ps = doc.get_double("photonstats", "jitter_fwhm_ps", det.jitter_fwhm_ps);
        det.efficiency = doc.get_double("photonstats", "efficiency", det.efficiency);
        det.dead_time_ns = doc.get_double("photonstats", "dead_time_ns", det.dead_time_ns);
        det.validate();
    }
}

namespace {

void run_geometry_stage(const ScenarioSpec &spec, VariantState &state, const std::string &variant,
                        const fs::path &dir, const std::vector<std::pair<std::string, std::string>> &header) {
    state.design = build_variant_design(spec.doc, variant);
    const double a = state.design.lattice.a_nm;
    const FdtdStageConfig fc = FdtdStageConfig::from(spec.doc, a);
    state.epsilon = rasterize_epsilon(state.design, fc.dx_nm, (fc.pml_cells + fc.margin_cells) * fc.dx_nm);

    ConfigDoc design_doc = design_to_config(state.design);
    std::ofstream out(dir / "design.cfg", std::ios::trunc);
    if (!out) {
        throw IoError("cannot write design.cfg");
    }
    out << "# cavity design, lengths in nm unless suffixed otherwise\n";
    for (const auto &[k, v] : header) {
        out << "# " << k << " = " << v << "\n";
    }
    out << design_doc.serialize();
    out.close();
    state.files.push_back("design.cfg");

    write_epsilon_csv((dir / "epsilon.csv").string(), state.epsilon, header);
    state.files.push_back("epsilon.csv");

    state.metrics["a_nm"] = a;
    state.metrics["hole_count"] = static_cast<double>(state.design.holes.size());
    state.metrics["air_fraction"] = state.epsilon.air_fraction();
}

void run_fdtd_stage(const ScenarioSpec &spec, VariantState &state, const fs::path &dir, int threads,
                    const std::vector<std::pair<std::string, std::string>> &header) {
    const double a = state.design.lattice.a_nm;
    const FdtdStageConfig fc = FdtdStageConfig::from(spec.doc, a);
    Grid2D grid = Grid2D::from_epsilon_map(state.epsilon, fc.pml_cells,
                                           spec.doc.get_double("fdtd", "pml_sigma_max", 0.0));
    SourceSpec src = SourceSpec::centered(grid, fc.source_lambda_nm, fc.source_bandwidth_nm);
    const long steps = default_run_steps(grid, src, fc.ringdown_cycles);

    FdtdRunOptions run_opts;
    run_opts.threads = threads;
    run_opts.energy_stride = fc.energy_stride;
    ProbeSeries series = run_fdtd(grid, src, steps, {}, run_opts);
    ResonancePeak peak = find_resonance(series, fc.window_min_nm, fc.window_max_nm);

    ExtractModeOptions mode_opts;
    mode_opts.steps = steps;
    mode_opts.threads = threads;
    state.mode = extract_mode(grid, src, peak.lambda_cav_nm, mode_opts);
    state.fit_residual = peak.fit_residual;
    state.prominence = peak.prominence;

    if (fc.export_probes) {
        write_probe_series_csv((dir / "probes.csv").string(), series, header);
        state.files.push_back("probes.csv");
    }
    if (fc.export_mode_field) {
        write_mode_field_csv((dir / "mode_field.csv").string(), state.mode, header);
        state.files.push_back("mode_field.csv");
    }

    json j;
    j["lambda_cav_nm"] = state.mode.lambda_cav_nm;
    j["q_factor"] = state.mode.q_factor;
    j["v_mode_norm"] = state.mode.v_mode_norm;
    j["fit_residual"] = peak.fit_residual;
    j["prominence"] = peak.prominence;
    j["dx_nm"] = fc.dx_nm;
    j["steps"] = steps;
    j["dt_s"] = series.dt_s;
    j["seed"] = header.empty() ? json() : json(header.front().second);
    std::ofstream out(dir / "resonance.json", std::ios::trunc);
    out << j.dump(2) << "\n";
    if (!out) {
        throw IoError("cannot write resonance.json");
    }
    state.files.push_back("resonance.json");

    state.metrics["lambda_cav_nm"] = state.mode.lambda_cav_nm;
    state.metrics["q_factor"] = state.mode.q_factor;
    state.metrics["v_mode_norm"] = state.mode.v_mode_norm;
}

bool variant_has_layers(const VariantState &state) {
    for (const auto &h : state.design.holes) {
        if (h.annulus_width_nm > 0.0) {
            return true;
        }
    }
    return false;
}

void run_farfield_stage(const ScenarioSpec &spec, std::map<std::string, VariantState> &states,
                        const std::vector<std::string> &variants, const fs::path &root,
                        const std::vector<std::pair<std::string, std::string>> &header) {
    const ConfigDoc &doc = spec.doc;
    const double na = doc.get_double("farfield", "na_lens", 0.75);
    const double q_unpert_ref = doc.get_double("farfield", "q_unpert_ref", 11000.0);
    const double q_pert_ref = doc.get_double("farfield", "q_pert_ref", 8500.0);
    const double extent = doc.get_double("farfield", "extent_nm", 0.0);
    const int points = static_cast<int>(doc.get_int("farfield", "points_across_k0", 48));
    const int pad_factor = static_cast<int>(doc.get_int("farfield", "pad_factor", 2));

    // Compose spectra for every variant first.
    for (const auto &name : variants) {
        VariantState &state = states[name];
        if (variant_has_layers(state)) {
            state.coupling = calibrate_coupling(state.mode, state.design, q_unpert_ref, q_pert_ref, extent);
        }
        ApertureField aperture = compose_aperture(state.mode, state.design, state.coupling, extent);
        ApertureField padded =
            pad_aperture(aperture, pad_factor, kspace_min_size(state.mode.dx_nm, state.mode.lambda_cav_nm, points));
        state.kspec = to_kspace(padded, state.mode.lambda_cav_nm);
    }

    // One fiber for the whole scenario: explicit waist, or best match on the
    // last perturbed variant (the design the collection optics were built for).
    FiberMode fiber;
    fiber.na_lens = na;
    double waist = doc.get_double("farfield", "fiber_waist_nm", 0.0);
    if (waist <= 0.0) {
        std::string bright;
        for (const auto &name : variants) {
            if (variant_has_layers(states[name])) {
                bright = name;
            }
        }
        if (bright.empty()) {
            bright = variants.back();
        }
        FiberMode probe = fiber;
        probe.optimize_waist = true;
        waist = fiber_coupling(states[bright].kspec, probe).fiber_waist_nm;
    }
    fiber.waist_nm = waist;

    for (const auto &name : variants) {
        VariantState &state = states[name];
        const fs::path dir = root / name;
        state.collection = fiber_coupling(state.kspec, fiber);
        write_kspace_magnitude_csv((dir / "kspace_magnitude.csv").string(), state.kspec, header);
        state.files.push_back("kspace_magnitude.csv");

        json j;
        j["eta_lens"] = state.collection.eta_lens;
        j["eta_smf"] = state.collection.eta_smf;
        j["eta_smf_unconditional"] = state.collection.eta_smf_unconditional;
        j["fiber_waist_nm"] = state.collection.fiber_waist_nm;
        j["na_lens"] = na;
        j["coupling_re_per_nm"] = state.coupling.real();
        j["coupling_im_per_nm"] = state.coupling.imag();
        j["seed"] = header.empty() ? json() : json(header.front().second);
        std::ofstream out(dir / "collection.json", std::ios::trunc);
        out << j.dump(2) << "\n";
        if (!out) {
            throw IoError("cannot write collection.json");
        }
        state.files.push_back("collection.json");

        state.metrics["eta_lens"] = state.collection.eta_lens;
        state.metrics["eta_smf"] = state.collection.eta_smf;
        state.metrics["eta_smf_unconditional"] = state.collection.eta_smf_unconditional;
    }
}

struct PurcellStageOutputs {
    EnsembleSpec shared_ensemble;
};

PurcellStageOutputs run_purcell_stage(const ScenarioSpec &spec, std::map<std::string, VariantState> &states,
                                      const std::vector<std::string> &variants, const fs::path &root,
                                      const std::vector<std::pair<std::string, std::string>> &header) {
    const ConfigDoc &doc = spec.doc;
    const double gamma0 = doc.get_double("purcell", "gamma0_per_ns", 1.0 / 0.6);
    LeakyBackground background;
    background.f_pc = doc.get_double("purcell", "f_pc", 0.4);
    background.eta_pc = doc.get_double("purcell", "eta_pc", 0.1);
    const double spot_radius = doc.get_double("purcell", "spot_radius_nm", 750.0);
    const double ens_center = doc.get_double("purcell", "ensemble_center_nm", 920.0);
    const double ens_fwhm = doc.get_double("purcell", "ensemble_fwhm_nm", 30.0);
    const int samples = static_cast<int>(doc.get_int("purcell", "spectrum_samples", 4001));

    double lam_min = 1e300;
    double lam_max = -1e300;
    for (const auto &name : variants) {
        VariantState &state = states[name];
        const double lam = doc.get_double("purcell", "lambda_cav_nm", state.mode.lambda_cav_nm);
        const double q = doc.get_double("purcell", "q_factor", state.mode.q_factor);
        const double halfspan =
            doc.get_double("purcell", "spectrum_halfspan_nm", std::max(15.0, 14.0 * lam / q));
        lam_min = std::min(lam_min, lam - halfspan);
        lam_max = std::max(lam_max, lam + halfspan);
    }

    PurcellStageOutputs outputs;

    for (const auto &name : variants) {
        VariantState &state = states[name];
        const fs::path dir = root / name;

        CavityParams cavity;
        cavity.lambda_cav_nm = doc.get_double("purcell", "lambda_cav_nm", state.mode.lambda_cav_nm);
        cavity.q_factor = doc.get_double("purcell", "q_factor", state.mode.q_factor);
        cavity.v_mode_norm = doc.get_double("purcell", "v_mode_norm", state.mode.v_mode_norm);
        cavity.eta_cav = doc.get_double("purcell", "eta_cav", state.metrics.count("eta_lens")
                                                                  ? state.metrics.at("eta_lens")
                                                                  : 0.3);
        cavity.psi.dx_nm = state.mode.dx_nm;
        cavity.psi.origin_ix = state.mode.origin_ix;
        cavity.psi.origin_iy = state.mode.origin_iy;
        cavity.psi.magnitude = RealField(state.mode.mode_field.nx(), state.mode.mode_field.ny(), 0.0);
        double peak = 0.0;
        for (int j = 0; j < state.mode.mode_field.ny(); ++j) {
            for (int i = 0; i < state.mode.mode_field.nx(); ++i) {
                const double m = std::abs(state.mode.mode_field(i, j));
                cavity.psi.magnitude(i, j) = m;
                peak = std::max(peak, m);
            }
        }
        if (peak > 0.0) {
            for (auto &v : cavity.psi.magnitude.raw()) {
                v /= peak;
            }
        }

        EnsembleSpec ensemble = gaussian_ensemble(ens_center, ens_fwhm, lam_min, lam_max, samples,
                                                  kPi * spot_radius * spot_radius, cavity.psi.area_nm2());
        state.spectrum = ensemble_spectrum(cavity, background, ensemble);
        write_spectrum_csv((dir / "spectrum.csv").string(), state.spectrum, header);
        state.files.push_back("spectrum.csv");
        outputs.shared_ensemble = ensemble;

        // Lifetimes for a best-placed dot, on resonance and along the
        // temperature-tuning track.
        EmitterParams emitter;
        emitter.gamma0_per_ns = gamma0;
        emitter.dipole_angle_rad = doc.get_double("purcell", "dipole_angle_deg", 0.0) * kPi / 180.0;
        emitter.x_nm = 0.0;
        emitter.y_nm = 0.0;
        double best = -1.0;
        for (int j = 0; j < cavity.psi.magnitude.ny(); ++j) {
            for (int i = 0; i < cavity.psi.magnitude.nx(); ++i) {
                if (cavity.psi.magnitude(i, j) > best) {
                    best = cavity.psi.magnitude(i, j);
                    emitter.x_nm = (i - cavity.psi.origin_ix) * cavity.psi.dx_nm;
                    emitter.y_nm = (j - cavity.psi.origin_iy) * cavity.psi.dx_nm;
                }
            }
        }

        TuningModel tuning;
        tuning.t_ref_k = doc.get_double("purcell", "t_ref_k", 22.5);
        tuning.lambda_cav_ref_nm = cavity.lambda_cav_nm;
        tuning.lambda_qd_ref_nm = doc.get_double("purcell", "lambda_qd_ref_nm", cavity.lambda_cav_nm);
        tuning.slope_cav_nm_per_k = doc.get_double("purcell", "slope_cav_nm_per_k", 0.0267);
        tuning.slope_ratio = doc.get_double("purcell", "slope_ratio", 3.0);

        emitter.wavelength_nm = cavity.lambda_cav_nm;
        state.lifetime_on_ps = lifetime_ps(emitter, cavity, background);
        const double f_c0 = max_purcell(cavity.q_factor, cavity.v_mode_norm);

        json j;
        j["f_c0"] = f_c0;
        j["eta_cav"] = cavity.eta_cav;
        j["f_pc"] = background.f_pc;
        j["eta_pc"] = background.eta_pc;
        j["gamma0_per_ns"] = gamma0;
        j["lifetime_on_ps"] = state.lifetime_on_ps;
        j["crossing_temperature_k"] = crossing_temperature(tuning);
        j["seed"] = header.empty() ? json() : json(header.front().second);
        json temps = json::array();
        double lifetime_off = 0.0;
        for (const auto &t_str : doc.get_list("purcell", "temperatures")) {
            const double t = std::stod(t_str);
            auto [lambda_qd, lambda_cav_t] = tune(tuning, t);
            CavityParams shifted = cavity;
            shifted.lambda_cav_nm = lambda_cav_t;
            EmitterParams e = emitter;
            e.wavelength_nm = lambda_qd;
            const double tau = lifetime_ps(e, shifted, background);
            temps.push_back({{"t_k", t}, {"lambda_qd_nm", lambda_qd}, {"lambda_cav_nm", lambda_cav_t},
                             {"lifetime_ps", tau}});
            if (std::abs(t - tuning.t_ref_k) > 1e-9) {
                lifetime_off = tau;
            }
        }
        j["temperatures"] = temps;
        if (lifetime_off > 0.0) {
            j["lifetime_off_ps"] = lifetime_off;
            j["lifetime_ratio"] = lifetime_off / state.lifetime_on_ps;
            state.metrics["lifetime_off_ps"] = lifetime_off;
            state.metrics["lifetime_ratio"] = lifetime_off / state.lifetime_on_ps;
        }
        std::ofstream out(dir / "emission.json", std::ios::trunc);
        out << j.dump(2) << "\n";
        if (!out) {
            throw IoError("cannot write emission.json");
        }
        state.files.push_back("emission.json");

        state.metrics["f_c0"] = f_c0;
        state.metrics["lifetime_on_ps"] = state.lifetime_on_ps;
        state.metrics["eta_cav_used"] = cavity.eta_cav;
    }
    return outputs;
}

void run_photonstats_stage(const ScenarioSpec &spec, std::map<std::string, VariantState> &states,
                           const std::vector<std::string> &variants, const fs::path &root, uint64_t seed,
                           int threads, const std::vector<std::pair<std::string, std::string>> &header) {
    const ConfigDoc &doc = spec.doc;

    for (const auto &name : variants) {
        VariantState &state = states[name];
        const fs::path dir = root / name;

        PulseTrainSpec pulses;
        pulses.rep_rate_hz = doc.get_double("photonstats", "rep_rate_hz", pulses.rep_rate_hz);
        pulses.pulse_fwhm_ps = doc.get_double("photonstats", "pulse_fwhm_ps", pulses.pulse_fwhm_ps);
        pulses.n_pulses = doc.get_int("photonstats", "n_pulses", pulses.n_pulses);

        EmitterDynamics dyn;
        dyn.tau_ps = doc.get_double("photonstats", "tau_ps",
                                    state.lifetime_on_ps > 0.0 ? state.lifetime_on_ps : dyn.tau_ps);
        dyn.p_excite = doc.get_double("photonstats", "p_excite", 1.0);
        dyn.p_reexcite = doc.get_double("photonstats", "p_reexcite", 0.1);
        dyn.background_mean = doc.get_double("photonstats", "background_mean", 0.01);
        dyn.cavity_feeding = doc.get_double("photonstats", "cavity_feeding", 0.15);
        dyn.lambda_cav_nm = doc.get_double("photonstats", "lambda_cav_nm",
                                           state.mode.lambda_cav_nm > 0.0 ? state.mode.lambda_cav_nm : 920.0);
        dyn.q_cavity = doc.get_double("photonstats", "q_cavity",
                                      state.mode.q_factor > 0.0 ? state.mode.q_factor : 8500.0);
        const double detuning = doc.get_double("photonstats", "qd_detuning_nm", -0.6);
        dyn.lambda_qd_nm = doc.get_double("photonstats", "lambda_qd_nm", dyn.lambda_cav_nm + detuning);

        DetectorSpec det;
        det.jitter_fwhm_ps = doc.get_double("photonstats", "jitter_fwhm_ps", det.jitter_fwhm_ps);
        det.efficiency = doc.get_double("photonstats", "efficiency", 0.05);
        det.dead_time_ns = doc.get_double("photonstats", "dead_time_ns", 0.0);

        const double bin_width = doc.get_double("photonstats", "bin_width_ps", 250.0);
        const double window = doc.get_double("photonstats", "window_periods", 6.0) * pulses.rep_period_ps();
        const double filter_width = doc.get_double("photonstats", "filter_width_nm", 0.2);
        const std::string mode = doc.get_string("photonstats", "mode", "auto");
        const bool export_clicks = doc.get_bool("photonstats", "export_clicks", false);

        PhotonList photons = generate_photons(pulses, dyn, seed, threads);
        json j;
        j["mode"] = mode;
        j["tau_ps"] = dyn.tau_ps;
        j["n_pulses"] = pulses.n_pulses;
        j["seed"] = header.empty() ? json() : json(header.front().second);

        if (mode == "cross") {
            ClickRecords all =
                detect(photons, det, DetectPolicy::spectral(dyn.lambda_qd_nm, dyn.lambda_cav_nm, filter_width), seed);
            ClickRecords qd;
            ClickRecords cav;
            qd.n_pulses = cav.n_pulses = all.n_pulses;
            qd.rep_period_ps = cav.rep_period_ps = all.rep_period_ps;
            for (const auto &c : all.clicks) {
                (c.channel == Channel::QD ? qd : cav).clicks.push_back(c);
            }
            CorrelationHistogram hist = cross_correlate(qd, cav, bin_width, window);
            write_histogram_csv((dir / "cross_histogram.csv").string(), hist, header);
            state.files.push_back("cross_histogram.csv");
            G2Result g2 = g2_zero(hist, pulses.rep_rate_hz);
            j["g2_zero"] = g2.g2_zero;
            j["statistical_error"] = g2.statistical_error;
            j["central_area"] = g2.central_area;
            j["side_area_mean"] = g2.side_area_mean;
            j["clicks_qd"] = qd.clicks.size();
            j["clicks_cav"] = cav.clicks.size();
            state.metrics["cross_g2_zero"] = g2.g2_zero;
            if (export_clicks) {
                write_clicks_csv((dir / "clicks.csv").string(), all, header);
                state.files.push_back("clicks.csv");
            }
        } else {
            DetectPolicy policy = filter_width > 0.0 ? DetectPolicy::hbt_filtered(dyn.lambda_qd_nm, filter_width)
                                                     : DetectPolicy::hbt();
            ClickRecords records = detect(photons, det, policy, seed);
            CorrelationHistogram hist = hbt_correlate(records, bin_width, window);
            write_histogram_csv((dir / "histogram.csv").string(), hist, header);
            state.files.push_back("histogram.csv");
            G2Result g2 = g2_zero(hist, pulses.rep_rate_hz);
            j["g2_zero"] = g2.g2_zero;
            j["statistical_error"] = g2.statistical_error;
            j["central_area"] = g2.central_area;
            j["side_area_mean"] = g2.side_area_mean;
            j["clicks_a"] = records.channel_count(Channel::A);
            j["clicks_b"] = records.channel_count(Channel::B);
            state.metrics["g2_zero"] = g2.g2_zero;
            state.metrics["g2_error"] = g2.statistical_error;
            if (export_clicks) {
                write_clicks_csv((dir / "clicks.csv").string(), records, header);
                state.files.push_back("clicks.csv");
            }
        }

        std::ofstream out(dir / "g2.json", std::ios::trunc);
        out << j.dump(2) << "\n";
        if (!out) {
            throw IoError("cannot write g2.json");
        }
        state.files.push_back("g2.json");
    }
}

} // namespace

ScenarioResult run_scenario(const ConfigDoc &doc, const ScenarioOptions &options) {
    const auto wall_start = std::chrono::steady_clock::now();
    validate_scenario_config(doc);
    ScenarioSpec spec = parse_scenario(doc);

    ScenarioResult result;
    result.name = spec.name;
    result.variants = spec.variants;

    const fs::path root = fs::path(options.out_dir) / spec.name;
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) {
        throw IoError("cannot create output directory " + root.string() + ": " + ec.message());
    }
    result.out_root = root.string();

    const std::vector<std::pair<std::string, std::string>> header = {
        {"seed", std::to_string(options.seed)}, {"version", kVersion}, {"scenario", spec.name}};

    std::map<std::string, VariantState> states;
    for (const auto &variant : spec.variants) {
        fs::create_directories(root / variant, ec);
        if (ec) {
            throw IoError("cannot create variant directory: " + ec.message());
        }
        states[variant]; // default-construct
    }

    for (const auto &variant : spec.variants) {
        if (spec.has_stage("geometry")) {
            run_geometry_stage(spec, states[variant], variant, root / variant, header);
        }
        if (spec.has_stage("fdtd")) {
            run_fdtd_stage(spec, states[variant], root / variant, options.threads, header);
        }
    }
    if (spec.has_stage("farfield")) {
        run_farfield_stage(spec, states, spec.variants, root, header);
    }
    EnsembleSpec shared_ensemble;
    if (spec.has_stage("purcell")) {
        shared_ensemble = run_purcell_stage(spec, states, spec.variants, root, header).shared_ensemble;
    }
    if (spec.has_stage("photonstats")) {
        run_photonstats_stage(spec, states, spec.variants, root, options.seed, options.threads, header);
    }

    // Cross-variant Eq.-5 style ratios against the first (reference) variant.
    std::map<std::string, double> scenario_metrics;
    if (spec.has_stage("purcell") && spec.variants.size() >= 2) {
        const VariantState &ref = states[spec.variants.front()];
        for (size_t i = 1; i < spec.variants.size(); ++i) {
            const VariantState &other = states[spec.variants[i]];
            const double ratio = efficiency_ratio(other.spectrum, ref.spectrum, other.mode.q_factor,
                                                  ref.mode.q_factor, shared_ensemble);
            scenario_metrics["efficiency_ratio_" + spec.variants[i] + "_over_" + spec.variants.front()] = ratio;
        }
    }

    // Per-variant manifests.
    const double wall_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
    json scenario_manifest;
    scenario_manifest["scenario"] = spec.name;
    scenario_manifest["version"] = kVersion;
    scenario_manifest["seed"] = options.seed;
    scenario_manifest["threads"] = options.threads;
    scenario_manifest["stages"] = spec.stages;
    scenario_manifest["variants"] = spec.variants;
    scenario_manifest["config_origin"] = doc.origin();
    if (fs::is_regular_file(doc.origin())) {
        scenario_manifest["config_fnv1a64"] = hex64(fnv1a64_file(doc.origin()));
    }
    for (const auto &[k, v] : scenario_metrics) {
        scenario_manifest["metrics"][k] = v;
    }

    json all_outputs = json::array();
    for (const auto &variant : spec.variants) {
        VariantState &state = states[variant];
        json manifest;
        manifest["scenario"] = spec.name;
        manifest["variant"] = variant;
        manifest["version"] = kVersion;
        manifest["seed"] = options.seed;
        manifest["threads"] = options.threads;
        manifest["stages"] = spec.stages;
        for (const auto &[k, v] : state.metrics) {
            manifest["summary"][k] = v;
        }
        json files = json::array();
        for (const auto &rel : state.files) {
            const fs::path p = root / variant / rel;
            files.push_back({{"path", rel}, {"fnv1a64", hex64(fnv1a64_file(p.string()))}});
            all_outputs.push_back(
                {{"path", variant + "/" + rel}, {"fnv1a64", hex64(fnv1a64_file(p.string()))}});
        }
        manifest["outputs"] = files;

        const fs::path mpath = root / variant / "manifest.json";
        std::ofstream out(mpath, std::ios::trunc);
        out << manifest.dump(2) << "\n";
        if (!out) {
            throw IoError("cannot write " + mpath.string());
        }
        result.variant_manifests[variant] = mpath.string();
    }

    scenario_manifest["outputs"] = all_outputs;
    scenario_manifest["wall_time_s"] = wall_s;
    const fs::path spath = root / "manifest.json";
    std::ofstream out(spath, std::ios::trunc);
    out << scenario_manifest.dump(2) << "\n";
    if (!out) {
        throw IoError("cannot write " + spath.string());
    }
    result.manifest_path = spath.string();
    return result;
}

std::string CompareReport::render() const {
    std::ostringstream s;
    s << "comparison: A = " << manifest_a << "\n            B = " << manifest_b << "\n";
    s << std::left << std::setw(28) << "metric" << std::right << std::setw(16) << "A" << std::setw(16) << "B"
      << std::setw(12) << "A/B" << "\n";
    for (const auto &row : rows) {
        s << std::left << std::setw(28) << row.key << std::right << std::setw(16) << std::setprecision(6)
          << row.a << std::setw(16) << row.b << std::setw(12) << std::setprecision(4) << row.ratio << "\n";
    }
    return s.str();
}

CompareReport compare_manifests(const std::string &manifest_a_path, const std::string &manifest_b_path) {
    auto load = [](const std::string &path) {
        std::ifstream in(path);
        if (!in) {
            throw IoError("cannot open manifest: " + path);
        }
        json j;
        try {
            in >> j;
        } catch (const json::exception &e) {
            throw ConfigError("malformed manifest " + path + ": " + e.what());
        }
        return j;
    };
    const json a = load(manifest_a_path);
    const json b = load(manifest_b_path);
    if (!a.contains("summary") || !b.contains("summary")) {
        throw ConfigError("stage mismatch: manifest lacks a summary (is it a variant manifest?)");
    }
    if (a.value("stages", json::array()) != b.value("stages", json::array())) {
        throw ConfigError("stage mismatch: manifests come from different stage lists");
    }
    const auto &sa = a["summary"];
    const auto &sb = b["summary"];
    for (auto it = sa.begin(); it != sa.end(); ++it) {
        if (!sb.contains(it.key())) {
            throw ConfigError("stage mismatch: metric '" + it.key() + "' missing from " + manifest_b_path);
        }
    }
    for (auto it = sb.begin(); it != sb.end(); ++it) {
        if (!sa.contains(it.key())) {
            throw ConfigError("stage mismatch: metric '" + it.key() + "' missing from " + manifest_a_path);
        }
    }

    CompareReport report;
    report.manifest_a = manifest_a_path;
    report.manifest_b = manifest_b_path;
    for (auto it = sa.begin(); it != sa.end(); ++it) {
        if (!it.value().is_number()) {
            continue;
        }
        CompareReport::Row row;
        row.key = it.key();
        row.a = it.value().get<double>();
        row.b = sb[it.key()].get<double>();
        row.ratio = row.b != 0.0 ? row.a / row.b : std::numeric_limits<double>::infinity();
        report.rows.push_back(row);
    }
    return report;
}

} // namespace pcsim
