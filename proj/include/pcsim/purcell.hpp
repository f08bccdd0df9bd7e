#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pcsim/field2d.hpp"

namespace pcsim {

// Emission model around the Purcell factor: rates in 1/ns, wavelengths in nm,
// lifetimes in ps.

struct EmitterParams {
    double gamma0_per_ns = 1.0 / 0.6; // bulk rate (default 600 ps lifetime)
    double x_nm = 0.0;
    double y_nm = 0.0;
    double dipole_angle_rad = 0.0; // angle between dipole and local cavity field
    double wavelength_nm = 920.0;
};

struct PsiMap {
    RealField magnitude; // |psi|, normalized to max 1
    double dx_nm = 0.0;
    int origin_ix = 0;
    int origin_iy = 0;

    bool contains(double x_nm, double y_nm) const;
    double sample(double x_nm, double y_nm) const; // bilinear
    double area_nm2() const;                       // integral of |psi|^2
};

struct CavityParams {
    double lambda_cav_nm = 920.0;
    double q_factor = 8500.0;
    double v_mode_norm = 0.8;
    double eta_cav = 0.3; // lens-collection efficiency of the cavity channel
    PsiMap psi;

    void validate() const;
};

struct LeakyBackground {
    double f_pc = 0.4;   // averaged Purcell factor into PC leaky modes
    double eta_pc = 0.1; // their lens-collection efficiency
};

struct EnsembleSpec {
    std::vector<double> wavelengths_nm;
    std::vector<double> rho_qd; // ensemble spectral density, arbitrary units
    double area_total_nm2 = 0.0;
    double area_cav_nm2 = 0.0;

    double rho_at(double lambda_nm) const; // linear interpolation
};

struct EmissionSpectrum {
    std::vector<double> wavelengths_nm;
    std::vector<double> gamma_lens;      // cavity_term + background_term
    std::vector<double> cavity_term;
    std::vector<double> background_term;
};

struct TuningModel {
    double t_ref_k = 22.5;
    double lambda_qd_ref_nm = 920.0;
    double lambda_cav_ref_nm = 920.0;
    double slope_cav_nm_per_k = 0.0267;
    double slope_ratio = 3.0; // QD shifts this much faster than the cavity
};

double lorentzian(double lambda_nm, double lambda_cav_nm, double q);

// F_c0 = (3 / 4 pi^2) * Q / V'
double max_purcell(double q, double v_mode_norm);

double purcell_factor(const EmitterParams &emitter, const CavityParams &cavity);

// Lens-collected rate (1/ns): Gamma0 (F_cav eta_cav + F_PC eta_PC).
double collected_rate(const EmitterParams &emitter, const CavityParams &cavity, const LeakyBackground &background);

// Total-emission lifetime in ps: 1 / (Gamma0 (F_cav + F_PC)).
double lifetime_ps(const EmitterParams &emitter, const CavityParams &cavity, const LeakyBackground &background);

EmissionSpectrum ensemble_spectrum(const CavityParams &cavity, const LeakyBackground &background,
                                   const EnsembleSpec &ensemble);

// Peak-over-background ratio of two spectra with the Q and rho_QD corrections;
// BG at the peak is interpolated from windows +-5 linewidths off resonance.
double efficiency_ratio(const EmissionSpectrum &spec_pert, const EmissionSpectrum &spec_unpert, double q_pert,
                        double q_unpert, const EnsembleSpec &ensemble);

std::pair<double, double> tune(const TuningModel &model, double t_k); // (lambda_qd, lambda_cav)
double crossing_temperature(const TuningModel &model);

// Broad Gaussian default for the QD ensemble density.
EnsembleSpec gaussian_ensemble(double center_nm, double fwhm_nm, double lambda_min_nm, double lambda_max_nm,
                               int samples, double area_total_nm2, double area_cav_nm2);

void write_spectrum_csv(const std::string &path, const EmissionSpectrum &spectrum,
                        const std::vector<std::pair<std::string, std::string>> &extra_header = {});

} // namespace pcsim
