#pragma once

#include <utility>
#include <vector>

#include "pcsim/field2d.hpp"
#include "pcsim/geometry.hpp"

namespace pcsim {

// 2D TE-like Yee solver (E_x, E_y, H_z) with a split-field graded PML.
// Internally c = 1 and time is measured as light-travel distance in nm;
// one optical cycle at wavelength lambda lasts lambda internal time units.

struct Grid2D {
    RealField epsilon;        // cell-centered relative permittivity
    double dx_nm = 0.0;
    int pml_cells = 10;       // 0 disables the PML (closed PEC box)
    double pml_sigma_max = 0.0; // <= 0 selects the graded-profile default
    int origin_ix = 0;        // cavity-center cell, carried from EpsilonMap
    int origin_iy = 0;

    void validate() const;
    static Grid2D from_epsilon_map(const EpsilonMap &map, int pml_cells = 10, double pml_sigma_max = 0.0);
};

struct SourceSpec {
    enum class Pol { Ex, Ey };

    int ix = 0; // cell coordinates
    int iy = 0;
    Pol polarization = Pol::Ey;
    double center_wavelength_nm = 920.0;
    double bandwidth_nm = 60.0; // spectral FWHM of the Gaussian pulse, in wavelength
    double amplitude = 1.0;
    bool uniform_y = false; // line source across the full height (quasi-1D runs)

    static SourceSpec centered(const Grid2D &grid, double lambda_nm, double bandwidth_nm, double amplitude = 1.0);
};

struct ProbeSeries {
    std::vector<std::pair<int, int>> positions; // probe cells
    std::vector<std::vector<double>> samples;   // [probe][step], cell-centered E_y
    double dt_s = 0.0;                          // time step in seconds
    double dt_nm = 0.0;                         // same step in light-travel nm
    long source_off_step = 0;                   // first step with the source fully off
    std::vector<double> energy;                 // total discrete field energy, every energy_stride steps
    int energy_stride = 0;
};

struct FdtdRunOptions {
    int threads = 1;
    int energy_stride = 0;          // 0: skip energy recording
    double divergence_factor = 1e6; // instability threshold vs. source amplitude
};

ProbeSeries run_fdtd(const Grid2D &grid, const SourceSpec &source, long steps,
                     const std::vector<std::pair<int, int>> &probes = {}, const FdtdRunOptions &options = {});

struct ResonancePeak {
    double lambda_cav_nm = 0.0;
    double q_factor = 0.0;
    double fit_residual = 0.0; // rms of the log-energy fit residual
    double prominence = 0.0;   // spectral peak power over window median
};

struct FindResonanceOptions {
    double min_prominence = 50.0;
    double max_fit_residual = 0.2;
    int probe_index = 0;
};

ResonancePeak find_resonance(const ProbeSeries &series, double lambda_min_nm, double lambda_max_nm,
                             const FindResonanceOptions &options = {});

struct ResonanceResult {
    double lambda_cav_nm = 0.0;
    double q_factor = 0.0;
    ComplexField mode_field; // cell-centered E_y phasor, normalized to max |.| = 1
    double v_mode_norm = 0.0;
    double dx_nm = 0.0;
    int origin_ix = 0;
    int origin_iy = 0;
};

struct ExtractModeOptions {
    long steps = 0;          // 0: reuse the run length heuristic
    int threads = 1;
    double settle_cycles = 20.0; // ring-down cycles skipped before accumulating
};

ResonanceResult extract_mode(const Grid2D &grid, const SourceSpec &source, double lambda_cav_nm,
                             const ExtractModeOptions &options = {});

// Default run length: ring-up plus enough ring-down for spectral analysis.
long default_run_steps(const Grid2D &grid, const SourceSpec &source, double ringdown_cycles = 4000.0);

void write_mode_field_csv(const std::string &path, const ResonanceResult &mode,
                          const std::vector<std::pair<std::string, std::string>> &extra_header = {});
void write_probe_series_csv(const std::string &path, const ProbeSeries &series,
                            const std::vector<std::pair<std::string, std::string>> &extra_header = {});

} // namespace pcsim
