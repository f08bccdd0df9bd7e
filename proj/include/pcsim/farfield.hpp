#pragma once

#include <complex>
#include <string>
#include <vector>

#include "pcsim/fdtd.hpp"
#include "pcsim/field2d.hpp"
#include "pcsim/geometry.hpp"

namespace pcsim {

// Far field as the in-plane spatial spectrum of a scalar aperture field.
// Vectorial corrections and the obliquity factor are deliberately omitted.

struct ApertureField {
    ComplexField field; // field just above the slab plane, cell-centered
    double dx_nm = 0.0;
    int origin_ix = 0; // cavity-center cell
    int origin_iy = 0;

    double total_power() const; // sum |field|^2 (grid units)
};

struct Scatterer {
    double x_nm = 0.0;
    double y_nm = 0.0;
    std::complex<double> amplitude; // polarizability x local field
    double extent_nm = 0.0;         // Gaussian footprint: exp(-|r|^2 / (2 extent^2))
};

struct KSpectrum {
    ComplexField amplitudes; // centered: k = 0 at (nx/2, ny/2)
    double dk = 0.0;         // grid pitch, rad/nm
    double k0 = 0.0;         // free-space wavenumber 2*pi/lambda, rad/nm

    std::pair<double, double> k_at(int ix, int iy) const;
    double total_power() const; // Parseval-normalized: equals aperture power
};

struct FiberMode {
    double waist_nm = 1200.0; // Gaussian HE11 waist; k-space profile exp(-k^2 w^2/4)
    double na_lens = 0.75;
    bool optimize_waist = false; // when set, maximize the overlap over the waist
};

struct CollectionResult {
    double eta_lens = 0.0; // light-cone power fraction inside the NA cone
    double eta_smf = 0.0;  // fiber overlap of the NA-truncated spectrum
    double eta_smf_unconditional = 0.0; // eta_lens * eta_smf
    double fiber_waist_nm = 0.0;        // waist actually used
};

// Scatterer sum for the perturbation layers: each annulus contributes a
// Gaussian bump of amplitude coupling * width * E(host) at its host hole.
std::vector<Scatterer> perturbation_scatterers(const ResonanceResult &mode, const CavityDesign &design,
                                               std::complex<double> coupling_per_nm, double extent_nm = 0.0);

ApertureField compose_aperture(const ResonanceResult &mode, const CavityDesign &design,
                               std::complex<double> coupling_per_nm, double extent_nm = 0.0);

// Zero-pads symmetrically; min_size additionally enforces a k-space
// resolution floor (points across the light cone scale with size * dx).
ApertureField pad_aperture(const ApertureField &aperture, int factor = 2, int min_size = 0);

KSpectrum to_kspace(const ApertureField &aperture, double lambda_nm);

double collection_efficiency(const KSpectrum &spectrum, double na);

CollectionResult fiber_coupling(const KSpectrum &spectrum, const FiberMode &fiber);

// Coupling magnitude such that the added scattered power matches the
// radiation-loss increase implied by a Q drop q_unpert -> q_pert; phase is
// chosen so scatterers add constructively on axis (k = 0).
std::complex<double> calibrate_coupling(const ResonanceResult &mode, const CavityDesign &design,
                                        double q_unpert, double q_pert, double extent_nm = 0.0);

// Padded size so the light cone spans >= points_across_k0 grid points.
int kspace_min_size(double dx_nm, double lambda_nm, int points_across_k0 = 48);

void write_kspace_magnitude_csv(const std::string &path, const KSpectrum &spectrum,
                                const std::vector<std::pair<std::string, std::string>> &extra_header = {});

} // namespace pcsim
