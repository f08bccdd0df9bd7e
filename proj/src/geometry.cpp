#include "pcsim/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "pcsim/config.hpp"
#include "pcsim/errors.hpp"
#include "pcsim/units.hpp"

namespace pcsim {

namespace {

constexpr double kRowPitch = 0.86602540378443864676; // sqrt(3)/2
constexpr double kCoordTol = 1e-9;

bool same_coord(const LatticeCoord &a, const LatticeCoord &b) {
    return a.row == b.row && std::abs(a.x_norm - b.x_norm) < kCoordTol;
}

} // namespace

void LatticeSpec::validate() const {
    if (!(a_nm > 0.0)) {
        throw ConfigError("lattice: a_nm must be > 0");
    }
    if (!(r_norm > 0.0 && r_norm < 0.5)) {
        throw ConfigError("lattice: r_norm must be in (0, 0.5)");
    }
    if (!(n_slab > 1.0)) {
        throw ConfigError("lattice: n_slab must be > 1");
    }
    if (!(n_eff > 1.0)) {
        throw ConfigError("lattice: n_eff must be > 1");
    }
    if (!(slab_thickness_nm > 0.0)) {
        throw ConfigError("lattice: slab_thickness_nm must be > 0");
    }
    if (nx < 5 || ny < 5) {
        throw ConfigError("lattice: nx and ny must be >= 5");
    }
    if (nx % 2 == 0 || ny % 2 == 0) {
        throw ConfigError("lattice: nx and ny must be odd so the cavity sits on the symmetry center");
    }
}

void DefectSpec::validate() const {
    if (removed_holes < 1) {
        throw ConfigError("defect: removed_holes must be >= 1");
    }
    if (removed_holes % 2 == 0) {
        throw ConfigError("defect: removed_holes must be odd (centered linear defect)");
    }
    if (!(side_shift_norm >= 0.0 && side_shift_norm < 0.5)) {
        throw ConfigError("defect: side_shift_norm must be in [0, 0.5)");
    }
    if (!(reduced_radius_norm > 0.0)) {
        throw ConfigError("defect: reduced_radius_norm must be > 0");
    }
}

std::string to_string(LayerLabel label) {
    switch (label) {
    case LayerLabel::L2: return "L2";
    case LayerLabel::L3: return "L3";
    case LayerLabel::L4: return "L4";
    }
    return "?";
}

LayerLabel layer_label_from_string(const std::string &s) {
    if (s == "L2") return LayerLabel::L2;
    if (s == "L3") return LayerLabel::L3;
    if (s == "L4") return LayerLabel::L4;
    throw ConfigError("unknown perturbation layer label '" + s + "' (expected L2, L3 or L4)");
}

double default_annulus_width_nm(LayerLabel label) {
    switch (label) {
    case LayerLabel::L2: return 5.0;
    case LayerLabel::L3: return 10.0;
    case LayerLabel::L4: return 20.0;
    }
    return 0.0;
}

std::vector<LatticeCoord> default_layer_hosts(LayerLabel label) {
    // Hosts sit where the cavity near field is strong, so the annuli both
    // scatter into the vertical direction and load the cavity Q: L2 flanks
    // the cavity end holes diagonally, L3 takes the first barrier holes on
    // the cavity axis, L4 the next flanking pair outward.
    switch (label) {
    case LayerLabel::L2:
        return {{-1.5, -1}, {1.5, -1}, {-1.5, 1}, {1.5, 1}};
    case LayerLabel::L3:
        return {{-3.0, 0}, {3.0, 0}};
    case LayerLabel::L4:
        return {{-2.5, -1}, {2.5, -1}, {-2.5, 1}, {2.5, 1}};
    }
    return {};
}

namespace {

struct IndexedHole {
    LatticeCoord coord;
    Hole hole;
    bool removed = false;
};

std::vector<IndexedHole> make_lattice_holes(const LatticeSpec &lattice, const DefectSpec &defect) {
    const double a = lattice.a_nm;
    const double r = lattice.r_norm * a;
    const int half_cols = (lattice.nx - 1) / 2;
    const int half_rows = (lattice.ny - 1) / 2;
    const int arm = (defect.removed_holes - 1) / 2;

    std::vector<IndexedHole> holes;
    holes.reserve(static_cast<size_t>(lattice.nx) * lattice.ny);
    for (int row = -half_rows; row <= half_rows; ++row) {
        const double y = row * a * kRowPitch;
        std::vector<double> xs;
        if (row % 2 == 0) {
            for (int i = -half_cols; i <= half_cols; ++i) {
                xs.push_back(static_cast<double>(i));
            }
        } else {
            for (int m = 0; m < half_cols; ++m) {
                xs.push_back(m + 0.5);
                xs.push_back(-(m + 0.5));
            }
            std::sort(xs.begin(), xs.end());
        }
        for (double x_norm : xs) {
            IndexedHole h;
            h.coord = {x_norm, row};
            h.hole = {x_norm * a, y, r, 0.0};
            if (row == 0 && std::abs(x_norm) <= arm + kCoordTol) {
                h.removed = true; // linear defect
            }
            if (row == 0 && std::abs(std::abs(x_norm) - (arm + 1)) < kCoordTol) {
                const double sign = x_norm > 0 ? 1.0 : -1.0;
                h.hole.x_nm += sign * defect.side_shift_norm * a; // shifted end holes
            }
            if (std::abs(row) == 1 && std::abs(x_norm) < defect.removed_holes / 2.0 - kCoordTol) {
                h.hole.radius_nm = defect.reduced_radius_norm * a; // holes directly above/below the cavity
            }
            holes.push_back(h);
        }
    }
    return holes;
}

void check_no_overlap(const std::vector<Hole> &holes) {
    for (size_t i = 0; i < holes.size(); ++i) {
        for (size_t j = i + 1; j < holes.size(); ++j) {
            const double dx = holes[i].x_nm - holes[j].x_nm;
            const double dy = holes[i].y_nm - holes[j].y_nm;
            const double min_dist = holes[i].radius_nm + holes[i].annulus_width_nm + holes[j].radius_nm +
                                    holes[j].annulus_width_nm;
            if (dx * dx + dy * dy < min_dist * min_dist) {
                std::ostringstream msg;
                msg << "geometric overlap between holes at (" << holes[i].x_nm << ", " << holes[i].y_nm
                    << ") and (" << holes[j].x_nm << ", " << holes[j].y_nm << ") nm";
                throw GeometryError(msg.str());
            }
        }
    }
}

} // namespace

CavityDesign build_cavity_design(const LatticeSpec &lattice, const DefectSpec &defect,
                                 const std::vector<LayerLabel> &layers) {
    std::vector<PerturbationLayer> expanded;
    expanded.reserve(layers.size());
    for (LayerLabel label : layers) {
        PerturbationLayer layer;
        layer.label = label;
        layer.host_holes = default_layer_hosts(label);
        layer.annulus_width_nm = default_annulus_width_nm(label);
        expanded.push_back(layer);
    }
    return build_cavity_design(lattice, defect, expanded);
}

CavityDesign build_cavity_design(const LatticeSpec &lattice, const DefectSpec &defect,
                                 const std::vector<PerturbationLayer> &layers) {
    lattice.validate();
    defect.validate();
    if (defect.removed_holes + 2 > lattice.nx) {
        throw GeometryError("lattice too small to contain the defect and its end holes");
    }
    if (!(defect.reduced_radius_norm <= lattice.r_norm)) {
        throw ConfigError("defect: reduced_radius_norm must not exceed r_norm");
    }

    CavityDesign design;
    design.lattice = lattice;
    design.defect = defect;
    design.perturbation_layers = layers;

    auto indexed = make_lattice_holes(lattice, defect);

    for (const auto &layer : layers) {
        if (!(layer.annulus_width_nm > 0.0)) {
            throw ConfigError("perturbation layer " + to_string(layer.label) + ": annulus width must be > 0");
        }
        for (const auto &coord : layer.host_holes) {
            auto it = std::find_if(indexed.begin(), indexed.end(),
                                   [&coord](const IndexedHole &h) { return same_coord(h.coord, coord); });
            if (it == indexed.end() || it->removed) {
                std::ostringstream msg;
                msg << "perturbation layer " << to_string(layer.label) << ": host hole (x=" << coord.x_norm
                    << "a, row=" << coord.row << ") does not exist in the lattice";
                throw GeometryError(msg.str());
            }
            if (it->hole.annulus_width_nm > 0.0) {
                throw GeometryError("perturbation layers assign the same host hole twice");
            }
            it->hole.annulus_width_nm = layer.annulus_width_nm;
        }
    }

    design.holes.reserve(indexed.size());
    for (const auto &h : indexed) {
        if (!h.removed) {
            design.holes.push_back(h.hole);
        }
    }
    check_no_overlap(design.holes);
    return design;
}

double EpsilonMap::air_fraction() const {
    if (eps.empty()) {
        return 0.0;
    }
    // eps is an area-weighted blend of air (1) and slab; invert the blend.
    double eps_slab = 1.0;
    for (double v : eps.raw()) {
        eps_slab = std::max(eps_slab, v);
    }
    if (eps_slab <= 1.0) {
        return 1.0;
    }
    double acc = 0.0;
    for (double v : eps.raw()) {
        acc += (eps_slab - v) / (eps_slab - 1.0);
    }
    return acc / static_cast<double>(eps.size());
}

EpsilonMap rasterize_epsilon(const CavityDesign &design, double dx_nm, double margin_nm) {
    const LatticeSpec &lat = design.lattice;
    if (!(dx_nm > 0.0)) {
        throw ConfigError("rasterize: dx_nm must be > 0");
    }
    if (dx_nm > lat.a_nm / 12.0 + 1e-12) {
        std::ostringstream msg;
        msg << "rasterize: dx=" << dx_nm << " nm too coarse; need dx <= a/12 = " << lat.a_nm / 12.0 << " nm";
        throw ConfigError(msg.str());
    }
    if (margin_nm < 0.0) {
        throw ConfigError("rasterize: margin_nm must be >= 0");
    }

    const double half_w = ((lat.nx - 1) / 2 + 0.5) * lat.a_nm + margin_nm;
    const double half_h = ((lat.ny - 1) / 2 + 0.5) * lat.a_nm * kRowPitch + margin_nm;
    const int hx = static_cast<int>(std::ceil(half_w / dx_nm));
    const int hy = static_cast<int>(std::ceil(half_h / dx_nm));

    EpsilonMap map;
    map.dx_nm = dx_nm;
    map.origin_ix = hx;
    map.origin_iy = hy;
    const int nx = 2 * hx + 1;
    const int ny = 2 * hy + 1;

    const double eps_slab = lat.n_eff * lat.n_eff;
    RealField air(nx, ny, 0.0);

    constexpr int kSub = 8; // supersamples per axis for boundary cells
    for (const auto &hole : design.holes) {
        const double r_eff = hole.radius_nm + hole.annulus_width_nm;
        const double r2 = r_eff * r_eff;
        const int ix0 = std::max(0, static_cast<int>(std::floor((hole.x_nm - r_eff) / dx_nm)) + hx - 1);
        const int ix1 = std::min(nx - 1, static_cast<int>(std::ceil((hole.x_nm + r_eff) / dx_nm)) + hx + 1);
        const int iy0 = std::max(0, static_cast<int>(std::floor((hole.y_nm - r_eff) / dx_nm)) + hy - 1);
        const int iy1 = std::min(ny - 1, static_cast<int>(std::ceil((hole.y_nm + r_eff) / dx_nm)) + hy + 1);
        for (int iy = iy0; iy <= iy1; ++iy) {
            const double yc = (iy - hy) * dx_nm;
            for (int ix = ix0; ix <= ix1; ++ix) {
                const double xc = (ix - hx) * dx_nm;
                // Quick accept/reject by cell-corner distance before sampling.
                const double cdx = std::abs(xc - hole.x_nm);
                const double cdy = std::abs(yc - hole.y_nm);
                const double half = 0.5 * dx_nm;
                const double far2 = (cdx + half) * (cdx + half) + (cdy + half) * (cdy + half);
                if (far2 <= r2) {
                    air(ix, iy) += 1.0;
                    continue;
                }
                const double ndx = std::max(0.0, cdx - half);
                const double ndy = std::max(0.0, cdy - half);
                if (ndx * ndx + ndy * ndy > r2) {
                    continue;
                }
                int inside = 0;
                for (int sy = 0; sy < kSub; ++sy) {
                    const double py = yc + ((sy + 0.5) / kSub - 0.5) * dx_nm;
                    const double py2 = (py - hole.y_nm) * (py - hole.y_nm);
                    for (int sx = 0; sx < kSub; ++sx) {
                        const double px = xc + ((sx + 0.5) / kSub - 0.5) * dx_nm;
                        if ((px - hole.x_nm) * (px - hole.x_nm) + py2 <= r2) {
                            ++inside;
                        }
                    }
                }
                air(ix, iy) += static_cast<double>(inside) / (kSub * kSub);
            }
        }
    }

    map.eps = RealField(nx, ny, eps_slab);
    for (int iy = 0; iy < ny; ++iy) {
        for (int ix = 0; ix < nx; ++ix) {
            const double f = std::min(1.0, air(ix, iy));
            map.eps(ix, iy) = f * 1.0 + (1.0 - f) * eps_slab;
        }
    }
    return map;
}

ConfigDoc design_to_config(const CavityDesign &design) {
    ConfigDoc doc;
    auto num = [](double v) {
        std::ostringstream s;
        s << std::setprecision(17) << v;
        return s.str();
    };
    doc.set("design", "a_nm", num(design.lattice.a_nm));
    doc.set("design", "r_norm", num(design.lattice.r_norm));
    doc.set("design", "slab_thickness_nm", num(design.lattice.slab_thickness_nm));
    doc.set("design", "n_slab", num(design.lattice.n_slab));
    doc.set("design", "n_eff", num(design.lattice.n_eff));
    doc.set("design", "nx", std::to_string(design.lattice.nx));
    doc.set("design", "ny", std::to_string(design.lattice.ny));
    doc.set("design", "removed_holes", std::to_string(design.defect.removed_holes));
    doc.set("design", "side_shift_norm", num(design.defect.side_shift_norm));
    doc.set("design", "reduced_radius_norm", num(design.defect.reduced_radius_norm));

    std::string labels;
    for (const auto &layer : design.perturbation_layers) {
        if (!labels.empty()) {
            labels += ", ";
        }
        labels += to_string(layer.label);
    }
    doc.set("design", "layers", labels);

    for (const auto &layer : design.perturbation_layers) {
        const std::string section = "layer." + to_string(layer.label);
        doc.set(section, "annulus_width_nm", num(layer.annulus_width_nm));
        std::string hosts;
        for (const auto &c : layer.host_holes) {
            if (!hosts.empty()) {
                hosts += ", ";
            }
            std::ostringstream h;
            h << std::setprecision(17) << c.x_norm << ":" << c.row;
            hosts += h.str();
        }
        doc.set(section, "hosts", hosts);
    }
    return doc;
}

CavityDesign design_from_config(const ConfigDoc &doc) {
    LatticeSpec lat;
    lat.a_nm = doc.require_double("design", "a_nm");
    lat.r_norm = doc.require_double("design", "r_norm");
    lat.slab_thickness_nm = doc.get_double("design", "slab_thickness_nm", lat.slab_thickness_nm);
    lat.n_slab = doc.get_double("design", "n_slab", lat.n_slab);
    lat.n_eff = doc.get_double("design", "n_eff", lat.n_eff);
    lat.nx = static_cast<int>(doc.require_int("design", "nx"));
    lat.ny = static_cast<int>(doc.require_int("design", "ny"));

    DefectSpec def;
    def.removed_holes = static_cast<int>(doc.get_int("design", "removed_holes", def.removed_holes));
    def.side_shift_norm = doc.get_double("design", "side_shift_norm", def.side_shift_norm);
    def.reduced_radius_norm = doc.get_double("design", "reduced_radius_norm", def.reduced_radius_norm);

    std::vector<PerturbationLayer> layers;
    for (const auto &name : doc.get_list("design", "layers")) {
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
                LatticeCoord c;
                c.x_norm = std::stod(item.substr(0, colon));
                c.row = std::stoi(item.substr(colon + 1));
                layer.host_holes.push_back(c);
            }
        } else {
            layer.host_holes = default_layer_hosts(layer.label);
        }
        layers.push_back(layer);
    }
    return build_cavity_design(lat, def, layers);
}

void write_epsilon_csv(const std::string &path, const EpsilonMap &map,
                       const std::vector<std::pair<std::string, std::string>> &extra_header) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path);
    }
    out << std::setprecision(17);
    out << "# dx_nm=" << map.dx_nm << " origin_ix=" << map.origin_ix << " origin_iy=" << map.origin_iy
        << " nx=" << map.eps.nx() << " ny=" << map.eps.ny();
    for (const auto &[k, v] : extra_header) {
        out << " " << k << "=" << v;
    }
    out << "\n";
    for (int iy = 0; iy < map.eps.ny(); ++iy) {
        for (int ix = 0; ix < map.eps.nx(); ++ix) {
            if (ix) {
                out << ",";
            }
            out << map.eps(ix, iy);
        }
        out << "\n";
    }
    if (!out) {
        throw IoError("write failed: " + path);
    }
}

} // namespace pcsim
