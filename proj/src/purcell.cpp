#include "pcsim/purcell.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "pcsim/errors.hpp"
#include "pcsim/units.hpp"

namespace pcsim {

bool PsiMap::contains(double x_nm, double y_nm) const {
    const double fx = x_nm / dx_nm + origin_ix;
    const double fy = y_nm / dx_nm + origin_iy;
    return fx >= 0.0 && fy >= 0.0 && fx <= magnitude.nx() - 1 && fy <= magnitude.ny() - 1;
}

double PsiMap::sample(double x_nm, double y_nm) const {
    if (!contains(x_nm, y_nm)) {
        throw NumericalError("psi map: position outside the field-map domain");
    }
    const double fx = x_nm / dx_nm + origin_ix;
    const double fy = y_nm / dx_nm + origin_iy;
    const int i0 = std::min(static_cast<int>(fx), magnitude.nx() - 2);
    const int j0 = std::min(static_cast<int>(fy), magnitude.ny() - 2);
    const double tx = fx - i0;
    const double ty = fy - j0;
    return (1 - tx) * (1 - ty) * magnitude(i0, j0) + tx * (1 - ty) * magnitude(i0 + 1, j0) +
           (1 - tx) * ty * magnitude(i0, j0 + 1) + tx * ty * magnitude(i0 + 1, j0 + 1);
}

double PsiMap::area_nm2() const {
    double acc = 0.0;
    for (double v : magnitude.raw()) {
        acc += v * v;
    }
    return acc * dx_nm * dx_nm;
}

void CavityParams::validate() const {
    if (!(q_factor > 0.0)) {
        throw ConfigError("cavity: q_factor must be > 0");
    }
    if (!(v_mode_norm > 0.0)) {
        throw ConfigError("cavity: v_mode_norm must be > 0");
    }
    if (!(eta_cav >= 0.0 && eta_cav <= 1.0)) {
        throw ConfigError("cavity: eta_cav must be in [0, 1]");
    }
    if (!psi.magnitude.empty()) {
        double peak = 0.0;
        for (double v : psi.magnitude.raw()) {
            peak = std::max(peak, v);
        }
        if (std::abs(peak - 1.0) > 1e-9) {
            throw ConfigError("cavity: psi map must be normalized to max 1");
        }
    }
}

double EnsembleSpec::rho_at(double lambda_nm) const {
    if (wavelengths_nm.size() < 2 || lambda_nm < wavelengths_nm.front() || lambda_nm > wavelengths_nm.back()) {
        throw NumericalError("ensemble: wavelength outside the tabulated grid");
    }
    const auto it = std::upper_bound(wavelengths_nm.begin(), wavelengths_nm.end(), lambda_nm);
    const size_t hi = std::min<size_t>(it - wavelengths_nm.begin(), wavelengths_nm.size() - 1);
    const size_t lo = hi - 1;
    const double t = (lambda_nm - wavelengths_nm[lo]) / (wavelengths_nm[hi] - wavelengths_nm[lo]);
    return (1.0 - t) * rho_qd[lo] + t * rho_qd[hi];
}

double lorentzian(double lambda_nm, double lambda_cav_nm, double q) {
    if (!(lambda_nm > 0.0) || !(lambda_cav_nm > 0.0) || !(q > 0.0)) {
        throw ConfigError("lorentzian: arguments must be > 0");
    }
    const double detune = lambda_nm / lambda_cav_nm - 1.0;
    return 1.0 / (1.0 + 4.0 * q * q * detune * detune);
}

double max_purcell(double q, double v_mode_norm) {
    if (!(q > 0.0) || !(v_mode_norm > 0.0)) {
        throw ConfigError("max_purcell: arguments must be > 0");
    }
    return (3.0 / (4.0 * kPi * kPi)) * q / v_mode_norm;
}

double purcell_factor(const EmitterParams &emitter, const CavityParams &cavity) {
    cavity.validate();
    const double psi = cavity.psi.magnitude.empty() ? 1.0 : cavity.psi.sample(emitter.x_nm, emitter.y_nm);
    const double c = std::cos(emitter.dipole_angle_rad);
    return max_purcell(cavity.q_factor, cavity.v_mode_norm) * psi * psi * c * c *
           lorentzian(emitter.wavelength_nm, cavity.lambda_cav_nm, cavity.q_factor);
}

double collected_rate(const EmitterParams &emitter, const CavityParams &cavity, const LeakyBackground &background) {
    return emitter.gamma0_per_ns *
           (purcell_factor(emitter, cavity) * cavity.eta_cav + background.f_pc * background.eta_pc);
}

double lifetime_ps(const EmitterParams &emitter, const CavityParams &cavity, const LeakyBackground &background) {
    const double total_rate = emitter.gamma0_per_ns * (purcell_factor(emitter, cavity) + background.f_pc);
    if (!(total_rate > 0.0)) {
        throw NumericalError("lifetime: total emission rate is zero");
    }
    return ns_to_ps(1.0 / total_rate);
}

EmissionSpectrum ensemble_spectrum(const CavityParams &cavity, const LeakyBackground &background,
                                   const EnsembleSpec &ensemble) {
    cavity.validate();
    if (ensemble.wavelengths_nm.size() != ensemble.rho_qd.size() || ensemble.wavelengths_nm.size() < 2) {
        throw ConfigError("ensemble: wavelength and density grids must match");
    }
    if (!(ensemble.area_cav_nm2 > 0.0) || ensemble.area_cav_nm2 > ensemble.area_total_nm2) {
        throw ConfigError("ensemble: need 0 < area_cav <= area_total");
    }
    const double f_c0 = max_purcell(cavity.q_factor, cavity.v_mode_norm);
    const double bg_coeff = 2.0 * background.f_pc * background.eta_pc * ensemble.area_total_nm2 / ensemble.area_cav_nm2;

    EmissionSpectrum spec;
    spec.wavelengths_nm = ensemble.wavelengths_nm;
    const size_t n = ensemble.wavelengths_nm.size();
    spec.gamma_lens.resize(n);
    spec.cavity_term.resize(n);
    spec.background_term.resize(n);
    for (size_t i = 0; i < n; ++i) {
        const double rho = ensemble.rho_qd[i];
        const double cav = rho * f_c0 * cavity.eta_cav * lorentzian(ensemble.wavelengths_nm[i], cavity.lambda_cav_nm, cavity.q_factor);
        const double bg = rho * bg_coeff;
        spec.cavity_term[i] = cav;
        spec.background_term[i] = bg;
        spec.gamma_lens[i] = cav + bg;
    }
    return spec;
}

namespace {

struct PeakInfo {
    double lambda_peak = 0.0;
    double value = 0.0;
    double background = 0.0;
};

double window_mean(const EmissionSpectrum &spec, double center, double half_width) {
    double acc = 0.0;
    int count = 0;
    for (size_t i = 0; i < spec.wavelengths_nm.size(); ++i) {
        if (std::abs(spec.wavelengths_nm[i] - center) <= half_width) {
            acc += spec.gamma_lens[i];
            ++count;
        }
    }
    if (count == 0) {
        throw NumericalError("efficiency_ratio: off-resonant window outside the spectrum grid");
    }
    return acc / count;
}

// Peak value and wing-interpolated background, windows at +-5 linewidths.
PeakInfo analyze_peak(const EmissionSpectrum &spec, double q) {
    if (spec.wavelengths_nm.empty()) {
        throw ConfigError("efficiency_ratio: empty spectrum");
    }
    size_t peak = 0;
    for (size_t i = 0; i < spec.gamma_lens.size(); ++i) {
        if (spec.gamma_lens[i] > spec.gamma_lens[peak]) {
            peak = i;
        }
    }
    if (peak == 0 || peak + 1 == spec.gamma_lens.size()) {
        throw NumericalError("efficiency_ratio: spectrum does not peak inside its grid");
    }

    PeakInfo info;
    info.lambda_peak = spec.wavelengths_nm[peak];
    info.value = spec.gamma_lens[peak];
    const double linewidth = info.lambda_peak / q;
    const double lo_mean = window_mean(spec, info.lambda_peak - 5.0 * linewidth, linewidth);
    const double hi_mean = window_mean(spec, info.lambda_peak + 5.0 * linewidth, linewidth);
    info.background = 0.5 * (lo_mean + hi_mean); // linear interpolation midpoint
    return info;
}

} // namespace

double efficiency_ratio(const EmissionSpectrum &spec_pert, const EmissionSpectrum &spec_unpert, double q_pert,
                        double q_unpert, const EnsembleSpec &ensemble) {
    if (!(q_pert > 0.0) || !(q_unpert > 0.0)) {
        throw ConfigError("efficiency_ratio: Q values must be > 0");
    }
    const PeakInfo pert = analyze_peak(spec_pert, q_pert);
    const PeakInfo unpert = analyze_peak(spec_unpert, q_unpert);
    const double num = pert.value - pert.background;
    const double den = unpert.value - unpert.background;
    if (!(num > 0.0) || !(den > 0.0)) {
        throw NumericalError("efficiency_ratio: background exceeds the spectral peak");
    }
    return (num / den) * (q_unpert / q_pert) * (ensemble.rho_at(unpert.lambda_peak) / ensemble.rho_at(pert.lambda_peak));
}

std::pair<double, double> tune(const TuningModel &model, double t_k) {
    const double dt = t_k - model.t_ref_k;
    const double lambda_cav = model.lambda_cav_ref_nm + model.slope_cav_nm_per_k * dt;
    const double lambda_qd = model.lambda_qd_ref_nm + model.slope_ratio * model.slope_cav_nm_per_k * dt;
    return {lambda_qd, lambda_cav};
}

double crossing_temperature(const TuningModel &model) {
    const double rel_slope = (model.slope_ratio - 1.0) * model.slope_cav_nm_per_k;
    if (std::abs(rel_slope) < 1e-300) {
        throw NumericalError("tuning: QD and cavity shift at the same rate; no crossing");
    }
    return model.t_ref_k + (model.lambda_cav_ref_nm - model.lambda_qd_ref_nm) / rel_slope;
}

EnsembleSpec gaussian_ensemble(double center_nm, double fwhm_nm, double lambda_min_nm, double lambda_max_nm,
                               int samples, double area_total_nm2, double area_cav_nm2) {
    if (samples < 2 || !(lambda_max_nm > lambda_min_nm)) {
        throw ConfigError("gaussian_ensemble: bad grid");
    }
    EnsembleSpec e;
    e.area_total_nm2 = area_total_nm2;
    e.area_cav_nm2 = area_cav_nm2;
    const double sigma = fwhm_nm / (2.0 * std::sqrt(2.0 * std::log(2.0)));
    e.wavelengths_nm.resize(samples);
    e.rho_qd.resize(samples);
    for (int i = 0; i < samples; ++i) {
        const double lam = lambda_min_nm + (lambda_max_nm - lambda_min_nm) * i / (samples - 1);
        const double u = (lam - center_nm) / sigma;
        e.wavelengths_nm[i] = lam;
        e.rho_qd[i] = std::exp(-0.5 * u * u);
    }
    return e;
}

void write_spectrum_csv(const std::string &path, const EmissionSpectrum &spectrum,
                        const std::vector<std::pair<std::string, std::string>> &extra_header) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path);
    }
    out << std::setprecision(17);
    out << "# samples=" << spectrum.wavelengths_nm.size();
    for (const auto &[k, v] : extra_header) {
        out << " " << k << "=" << v;
    }
    out << "\n";
    out << "lambda_nm,gamma_lens,cavity_term,background\n";
    for (size_t i = 0; i < spectrum.wavelengths_nm.size(); ++i) {
        out << spectrum.wavelengths_nm[i] << "," << spectrum.gamma_lens[i] << "," << spectrum.cavity_term[i] << ","
            << spectrum.background_term[i] << "\n";
    }
    if (!out) {
        throw IoError("write failed: " + path);
    }
}

} // namespace pcsim
