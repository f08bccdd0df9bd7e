#include "pcsim/farfield.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>

#include "pcsim/errors.hpp"
#include "pcsim/units.hpp"

namespace pcsim {

namespace {

std::mutex &fftw_mutex() {
    static std::mutex m;
    return m;
}

// Forward 2D DFT with the aperture origin rotated to index (0, 0) and the
// output centered (k = 0 at (n/2, n/2)).
ComplexField centered_fft2d(const ComplexField &field, int origin_ix, int origin_iy) {
    const int nx = field.nx();
    const int ny = field.ny();
    std::vector<std::complex<double>> buf(static_cast<size_t>(nx) * ny);
    for (int iy = 0; iy < ny; ++iy) {
        const int sy = ((iy + origin_iy) % ny + ny) % ny;
        for (int ix = 0; ix < nx; ++ix) {
            const int sx = ((ix + origin_ix) % nx + nx) % nx;
            buf[static_cast<size_t>(iy) * nx + ix] = field(sx, sy);
        }
    }
    {
        std::lock_guard<std::mutex> lock(fftw_mutex());
        fftw_plan plan = fftw_plan_dft_2d(ny, nx, reinterpret_cast<fftw_complex *>(buf.data()),
                                          reinterpret_cast<fftw_complex *>(buf.data()), FFTW_FORWARD, FFTW_ESTIMATE);
        fftw_execute(plan);
        fftw_destroy_plan(plan);
    }
    ComplexField out(nx, ny);
    const int cx = nx / 2;
    const int cy = ny / 2;
    for (int iy = 0; iy < ny; ++iy) {
        const int ky = ((iy - cy) % ny + ny) % ny;
        for (int ix = 0; ix < nx; ++ix) {
            const int kx = ((ix - cx) % nx + nx) % nx;
            out(ix, iy) = buf[static_cast<size_t>(ky) * nx + kx];
        }
    }
    return out;
}

} // namespace

double ApertureField::total_power() const {
    double acc = 0.0;
    for (const auto &v : field.raw()) {
        acc += std::norm(v);
    }
    return acc;
}

std::pair<double, double> KSpectrum::k_at(int ix, int iy) const {
    const int cx = amplitudes.nx() / 2;
    const int cy = amplitudes.ny() / 2;
    return {(ix - cx) * dk, (iy - cy) * dk};
}

double KSpectrum::total_power() const {
    double acc = 0.0;
    for (const auto &v : amplitudes.raw()) {
        acc += std::norm(v);
    }
    return acc / static_cast<double>(amplitudes.size());
}

std::vector<Scatterer> perturbation_scatterers(const ResonanceResult &mode, const CavityDesign &design,
                                               std::complex<double> coupling_per_nm, double extent_nm) {
    if (mode.mode_field.empty() || mode.dx_nm <= 0.0) {
        throw GeometryError("compose_aperture: mode field is empty");
    }
    // Default footprint: half a wavelength, the diffraction-limited spread of
    // a subwavelength scatterer's field sampled above the slab.
    const double default_extent =
        mode.lambda_cav_nm > 0.0 ? 0.5 * mode.lambda_cav_nm : design.lattice.r_norm * design.lattice.a_nm;
    const double extent = extent_nm > 0.0 ? extent_nm : default_extent;

    std::vector<Scatterer> scatterers;
    for (const auto &hole : design.holes) {
        if (hole.annulus_width_nm <= 0.0) {
            continue;
        }
        const int ix = mode.origin_ix + static_cast<int>(std::llround(hole.x_nm / mode.dx_nm));
        const int iy = mode.origin_iy + static_cast<int>(std::llround(hole.y_nm / mode.dx_nm));
        if (!mode.mode_field.in_bounds(ix, iy)) {
            throw GeometryError("compose_aperture: perturbed hole falls outside the mode-field grid");
        }
        Scatterer s;
        s.x_nm = hole.x_nm;
        s.y_nm = hole.y_nm;
        s.amplitude = coupling_per_nm * hole.annulus_width_nm * mode.mode_field(ix, iy);
        s.extent_nm = extent;
        scatterers.push_back(s);
    }
    return scatterers;
}

ApertureField compose_aperture(const ResonanceResult &mode, const CavityDesign &design,
                               std::complex<double> coupling_per_nm, double extent_nm) {
    ApertureField aperture;
    aperture.field = mode.mode_field;
    aperture.dx_nm = mode.dx_nm;
    aperture.origin_ix = mode.origin_ix;
    aperture.origin_iy = mode.origin_iy;

    const auto scatterers = perturbation_scatterers(mode, design, coupling_per_nm, extent_nm);
    for (const auto &s : scatterers) {
        const double reach = 4.0 * s.extent_nm;
        const int ix0 = std::max(0, aperture.origin_ix + static_cast<int>(std::floor((s.x_nm - reach) / aperture.dx_nm)));
        const int ix1 = std::min(aperture.field.nx() - 1,
                                 aperture.origin_ix + static_cast<int>(std::ceil((s.x_nm + reach) / aperture.dx_nm)));
        const int iy0 = std::max(0, aperture.origin_iy + static_cast<int>(std::floor((s.y_nm - reach) / aperture.dx_nm)));
        const int iy1 = std::min(aperture.field.ny() - 1,
                                 aperture.origin_iy + static_cast<int>(std::ceil((s.y_nm + reach) / aperture.dx_nm)));
        const double inv_two_ext2 = 1.0 / (2.0 * s.extent_nm * s.extent_nm);
        for (int iy = iy0; iy <= iy1; ++iy) {
            const double y = (iy - aperture.origin_iy) * aperture.dx_nm - s.y_nm;
            for (int ix = ix0; ix <= ix1; ++ix) {
                const double x = (ix - aperture.origin_ix) * aperture.dx_nm - s.x_nm;
                aperture.field(ix, iy) += s.amplitude * std::exp(-(x * x + y * y) * inv_two_ext2);
            }
        }
    }
    return aperture;
}

int kspace_min_size(double dx_nm, double lambda_nm, int points_across_k0) {
    // k0/dk = n*dx/lambda grid points from k = 0 to the light-cone edge.
    const int n = static_cast<int>(std::ceil(points_across_k0 * lambda_nm / dx_nm));
    return n + (n % 2); // keep it even so k = 0 sits on a grid point
}

ApertureField pad_aperture(const ApertureField &aperture, int factor, int min_size) {
    if (aperture.field.empty()) {
        throw GeometryError("pad_aperture: empty aperture");
    }
    const int base = std::max(aperture.field.nx(), aperture.field.ny());
    int n = std::max(base * std::max(1, factor), min_size);
    n += n % 2;
    ApertureField out;
    out.dx_nm = aperture.dx_nm;
    out.field = ComplexField(n, n, {0.0, 0.0});
    const int off_x = n / 2 - aperture.origin_ix;
    const int off_y = n / 2 - aperture.origin_iy;
    if (off_x < 0 || off_y < 0 || off_x + aperture.field.nx() > n || off_y + aperture.field.ny() > n) {
        throw GeometryError("pad_aperture: aperture does not fit the padded grid");
    }
    for (int iy = 0; iy < aperture.field.ny(); ++iy) {
        for (int ix = 0; ix < aperture.field.nx(); ++ix) {
            out.field(ix + off_x, iy + off_y) = aperture.field(ix, iy);
        }
    }
    out.origin_ix = n / 2;
    out.origin_iy = n / 2;
    return out;
}

KSpectrum to_kspace(const ApertureField &aperture, double lambda_nm) {
    if (aperture.field.empty() || aperture.field.nx() != aperture.field.ny()) {
        throw GeometryError("to_kspace: aperture must be square (use pad_aperture)");
    }
    if (!(lambda_nm > 0.0)) {
        throw ConfigError("to_kspace: lambda must be > 0");
    }
    for (const auto &v : aperture.field.raw()) {
        if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) {
            throw NumericalError("to_kspace: aperture contains non-finite values");
        }
    }
    KSpectrum spec;
    spec.amplitudes = centered_fft2d(aperture.field, aperture.origin_ix, aperture.origin_iy);
    spec.dk = 2.0 * kPi / (aperture.field.nx() * aperture.dx_nm);
    spec.k0 = 2.0 * kPi / lambda_nm;
    return spec;
}

double collection_efficiency(const KSpectrum &spectrum, double na) {
    if (!(na > 0.0 && na <= 1.0)) {
        throw ConfigError("collection_efficiency: NA must be in (0, 1]");
    }
    const double k0_sq = spectrum.k0 * spectrum.k0;
    const double kna_sq = na * na * k0_sq;
    double inside_na = 0.0;
    double inside_cone = 0.0;
    long cone_cells = 0;
    const int nx = spectrum.amplitudes.nx();
    const int ny = spectrum.amplitudes.ny();
    for (int iy = 0; iy < ny; ++iy) {
        for (int ix = 0; ix < nx; ++ix) {
            const auto [kx, ky] = spectrum.k_at(ix, iy);
            const double k_sq = kx * kx + ky * ky;
            if (k_sq <= k0_sq) {
                const double p = std::norm(spectrum.amplitudes(ix, iy));
                inside_cone += p;
                ++cone_cells;
                if (k_sq <= kna_sq) {
                    inside_na += p;
                }
            }
        }
    }
    if (cone_cells == 0) {
        throw NumericalError("collection_efficiency: no k-grid points inside the light cone");
    }
    if (inside_cone <= 0.0) {
        throw NumericalError("collection_efficiency: no power inside the light cone");
    }
    return inside_na / inside_cone;
}

namespace {

double overlap_at_waist(const KSpectrum &spectrum, double na, double waist_nm) {
    const double k0_sq = spectrum.k0 * spectrum.k0;
    const double kna_sq = na * na * k0_sq;
    const double q = waist_nm * waist_nm / 4.0;
    std::complex<double> inner{0.0, 0.0};
    double pa = 0.0;
    const int nx = spectrum.amplitudes.nx();
    const int ny = spectrum.amplitudes.ny();
    for (int iy = 0; iy < ny; ++iy) {
        for (int ix = 0; ix < nx; ++ix) {
            const auto [kx, ky] = spectrum.k_at(ix, iy);
            const double k_sq = kx * kx + ky * ky;
            if (k_sq > kna_sq) {
                continue;
            }
            const double g = std::exp(-k_sq * q);
            const auto &a = spectrum.amplitudes(ix, iy);
            inner += a * g;
            pa += std::norm(a);
        }
    }
    if (pa <= 0.0) {
        throw NumericalError("fiber_coupling: NA-truncated spectrum carries no power");
    }
    // The fiber-mode norm runs over the whole k-grid: the lens clips the
    // cavity field at the NA, but fiber-mode power beyond the NA is still
    // lost light. The Gaussian is separable, so the grid sum factorizes.
    auto axis_sum = [&](int n) {
        const int c = n / 2;
        double s = 0.0;
        for (int i = 0; i < n; ++i) {
            const double k = (i - c) * spectrum.dk;
            s += std::exp(-k * k * q * 2.0);
        }
        return s;
    };
    const double pg = axis_sum(nx) * axis_sum(ny);
    return std::norm(inner) / (pa * pg);
}

} // namespace

CollectionResult fiber_coupling(const KSpectrum &spectrum, const FiberMode &fiber) {
    if (!(fiber.waist_nm > 0.0)) {
        throw ConfigError("fiber_coupling: waist must be > 0");
    }
    CollectionResult result;
    result.eta_lens = collection_efficiency(spectrum, fiber.na_lens);

    double waist = fiber.waist_nm;
    if (fiber.optimize_waist) {
        // Coarse log-scan then golden-section refine; the overlap is smooth
        // and single-peaked in the waist.
        const double k_na = fiber.na_lens * spectrum.k0;
        const double w_lo = 0.02 / k_na * 2.0;
        const double w_hi = 2000.0 / k_na;
        double best_w = waist;
        double best_v = -1.0;
        constexpr int kScan = 48;
        for (int i = 0; i < kScan; ++i) {
            const double w = w_lo * std::pow(w_hi / w_lo, static_cast<double>(i) / (kScan - 1));
            const double v = overlap_at_waist(spectrum, fiber.na_lens, w);
            if (v > best_v) {
                best_v = v;
                best_w = w;
            }
        }
        double a = best_w / (w_hi / w_lo > 1.0 ? std::pow(w_hi / w_lo, 1.0 / (kScan - 1)) : 2.0);
        double b = best_w * std::pow(w_hi / w_lo, 1.0 / (kScan - 1));
        const double gr = 0.6180339887498949;
        double x1 = b - gr * (b - a);
        double x2 = a + gr * (b - a);
        double f1 = overlap_at_waist(spectrum, fiber.na_lens, x1);
        double f2 = overlap_at_waist(spectrum, fiber.na_lens, x2);
        for (int it = 0; it < 60; ++it) {
            if (f1 < f2) {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + gr * (b - a);
                f2 = overlap_at_waist(spectrum, fiber.na_lens, x2);
            } else {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - gr * (b - a);
                f1 = overlap_at_waist(spectrum, fiber.na_lens, x1);
            }
        }
        waist = 0.5 * (a + b);
    }

    result.fiber_waist_nm = waist;
    result.eta_smf = overlap_at_waist(spectrum, fiber.na_lens, waist);
    result.eta_smf_unconditional = result.eta_lens * result.eta_smf;
    return result;
}

std::complex<double> calibrate_coupling(const ResonanceResult &mode, const CavityDesign &design,
                                        double q_unpert, double q_pert, double extent_nm) {
    if (!(q_unpert > q_pert) || !(q_pert > 0.0)) {
        throw ConfigError("calibrate_coupling: need q_unpert > q_pert > 0");
    }
    const auto scatterers = perturbation_scatterers(mode, design, {1.0, 0.0}, extent_nm);
    if (scatterers.empty()) {
        return {0.0, 0.0};
    }

    // Scattered field alone for unit coupling, on the mode grid.
    ApertureField bumps;
    bumps.field = ComplexField(mode.mode_field.nx(), mode.mode_field.ny(), {0.0, 0.0});
    bumps.dx_nm = mode.dx_nm;
    bumps.origin_ix = mode.origin_ix;
    bumps.origin_iy = mode.origin_iy;
    for (const auto &s : scatterers) {
        const double reach = 4.0 * s.extent_nm;
        const int ix0 = std::max(0, bumps.origin_ix + static_cast<int>(std::floor((s.x_nm - reach) / bumps.dx_nm)));
        const int ix1 = std::min(bumps.field.nx() - 1,
                                 bumps.origin_ix + static_cast<int>(std::ceil((s.x_nm + reach) / bumps.dx_nm)));
        const int iy0 = std::max(0, bumps.origin_iy + static_cast<int>(std::floor((s.y_nm - reach) / bumps.dx_nm)));
        const int iy1 = std::min(bumps.field.ny() - 1,
                                 bumps.origin_iy + static_cast<int>(std::ceil((s.y_nm + reach) / bumps.dx_nm)));
        const double inv_two_ext2 = 1.0 / (2.0 * s.extent_nm * s.extent_nm);
        for (int iy = iy0; iy <= iy1; ++iy) {
            const double y = (iy - bumps.origin_iy) * bumps.dx_nm - s.y_nm;
            for (int ix = ix0; ix <= ix1; ++ix) {
                const double x = (ix - bumps.origin_ix) * bumps.dx_nm - s.x_nm;
                bumps.field(ix, iy) += s.amplitude * std::exp(-(x * x + y * y) * inv_two_ext2);
            }
        }
    }

    double mode_power = 0.0;
    std::complex<double> mode_dc{0.0, 0.0};
    for (const auto &v : mode.mode_field.raw()) {
        mode_power += std::norm(v);
        mode_dc += v;
    }
    double bump_power = 0.0;
    std::complex<double> bump_dc{0.0, 0.0};
    for (const auto &v : bumps.field.raw()) {
        bump_power += std::norm(v);
        bump_dc += v;
    }
    if (!(bump_power > 0.0)) {
        throw NumericalError("calibrate_coupling: scatterer field is zero");
    }

    // Scattered power equals the extra round-trip loss implied by the Q drop.
    const double delta = q_unpert / q_pert - 1.0;
    const double magnitude = std::sqrt(delta * mode_power / bump_power);
    // Align the scatterer sum with the mode's on-axis (k = 0) amplitude.
    double phase = 0.0;
    if (std::abs(mode_dc) > 0.0 && std::abs(bump_dc) > 0.0) {
        phase = std::arg(mode_dc) - std::arg(bump_dc);
    }
    return std::polar(magnitude, phase);
}

void write_kspace_magnitude_csv(const std::string &path, const KSpectrum &spectrum,
                                const std::vector<std::pair<std::string, std::string>> &extra_header) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path);
    }
    out << std::setprecision(10);
    out << "# dk=" << spectrum.dk << " k0=" << spectrum.k0 << " nx=" << spectrum.amplitudes.nx()
        << " ny=" << spectrum.amplitudes.ny();
    for (const auto &[k, v] : extra_header) {
        out << " " << k << "=" << v;
    }
    out << "\n";
    for (int iy = 0; iy < spectrum.amplitudes.ny(); ++iy) {
        for (int ix = 0; ix < spectrum.amplitudes.nx(); ++ix) {
            if (ix) {
                out << ",";
            }
            out << std::abs(spectrum.amplitudes(ix, iy));
        }
        out << "\n";
    }
    if (!out) {
        throw IoError("write failed: " + path);
    }
}

} // namespace pcsim
