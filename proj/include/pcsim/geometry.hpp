#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pcsim/field2d.hpp"

namespace pcsim {

class ConfigDoc;

// Triangular-lattice air-hole slab, lengths in nm unless suffixed otherwise.
struct LatticeSpec {
    double a_nm = 284.0;          // lattice constant; puts the L3 mode near 920 nm
    double r_norm = 0.3;          // hole radius in units of a
    double slab_thickness_nm = 165.0;
    double n_slab = 3.5;          // bulk refractive index (GaAs)
    double n_eff = 2.8;           // effective slab index used by the 2D solver
    int nx = 17;                  // lattice columns
    int ny = 11;                  // lattice rows

    void validate() const;
};

// Linear defect: a row of removed holes, outward-shifted end holes, and
// reduced-radius holes in the rows directly above/below the cavity.
struct DefectSpec {
    int removed_holes = 3;
    double side_shift_norm = 0.15;
    double reduced_radius_norm = 0.25;

    void validate() const;
};

enum class LayerLabel { L2, L3, L4 };

std::string to_string(LayerLabel label);
LayerLabel layer_label_from_string(const std::string &s);
double default_annulus_width_nm(LayerLabel label); // 5 / 10 / 20 nm

// Lattice coordinate of a hole: row index and x position in units of a.
// Odd rows are offset by a/2, so x_norm is half-integral there.
struct LatticeCoord {
    double x_norm = 0.0;
    int row = 0;
};

struct PerturbationLayer {
    LayerLabel label = LayerLabel::L2;
    std::vector<LatticeCoord> host_holes;
    double annulus_width_nm = 0.0;
};

struct Hole {
    double x_nm = 0.0;
    double y_nm = 0.0;
    double radius_nm = 0.0;
    double annulus_width_nm = 0.0; // 0 when unperturbed
};

struct CavityDesign {
    LatticeSpec lattice;
    DefectSpec defect;
    std::vector<PerturbationLayer> perturbation_layers;

    // Realized hole list (defect and perturbations applied), cavity-centered.
    std::vector<Hole> holes;
};

// Default perturbation-layer hosts for a given label. L2 flanks the cavity
// end holes in the first rows; L3/L4 sit in the second/third rows out.
std::vector<LatticeCoord> default_layer_hosts(LayerLabel label);

CavityDesign build_cavity_design(const LatticeSpec &lattice, const DefectSpec &defect,
                                 const std::vector<LayerLabel> &layers);

// As above but with explicit host/width overrides for each layer.
CavityDesign build_cavity_design(const LatticeSpec &lattice, const DefectSpec &defect,
                                 const std::vector<PerturbationLayer> &layers);

// Cell-centered permittivity map. Cell (ix, iy) is centered at
// ((ix - origin_ix) * dx, (iy - origin_iy) * dx) in cavity coordinates.
struct EpsilonMap {
    RealField eps;
    double dx_nm = 0.0;
    int origin_ix = 0;
    int origin_iy = 0;

    double air_fraction() const;
};

// Rasterizes with area-weighted (supersampled) boundary cells. Margin is the
// padding beyond the lattice bounding box on every side (PML allowance).
EpsilonMap rasterize_epsilon(const CavityDesign &design, double dx_nm, double margin_nm);

// Serialization to the shared structured-text format (docs/config_schema.md).
ConfigDoc design_to_config(const CavityDesign &design);
CavityDesign design_from_config(const ConfigDoc &doc);

void write_epsilon_csv(const std::string &path, const EpsilonMap &map,
                       const std::vector<std::pair<std::string, std::string>> &extra_header = {});

} // namespace pcsim
