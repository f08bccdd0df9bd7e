#include "pcsim/fdtd.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>

#include "pcsim/errors.hpp"
#include "pcsim/parallel.hpp"
#include "pcsim/units.hpp"

namespace pcsim {

namespace {

constexpr double kCourant = 0.99; // safety factor on the 2D bound dx/(c*sqrt(2))
constexpr int kPmlOrder = 3;
constexpr double kSourceCutSigmas = 4.5;

std::mutex &fftw_mutex() {
    static std::mutex m;
    return m;
}

double pml_depth_cells(double u, int n, int pml) {
    // u is a node coordinate in units of dx; PML occupies [0, pml) and (n - pml, n].
    if (u < pml) {
        return pml - u;
    }
    if (u > n - pml) {
        return u - (n - pml);
    }
    return 0.0;
}

struct Pulse {
    double omega = 0.0;   // rad/nm
    double sigma = 0.0;   // envelope sigma, nm
    double t0 = 0.0;      // envelope center, nm
    double t_off = 0.0;   // support end, nm
    double amplitude = 1.0;

    static Pulse from_source(const SourceSpec &src) {
        Pulse p;
        p.omega = 2.0 * kPi / src.center_wavelength_nm;
        const double df = src.bandwidth_nm / (src.center_wavelength_nm * src.center_wavelength_nm);
        p.sigma = std::sqrt(2.0 * std::log(2.0)) / (kPi * df);
        p.t0 = kSourceCutSigmas * p.sigma;
        p.t_off = 2.0 * kSourceCutSigmas * p.sigma;
        p.amplitude = src.amplitude;
        return p;
    }

    double operator()(double t) const {
        if (t <= 0.0 || t >= t_off) {
            return 0.0;
        }
        const double u = (t - t0) / sigma;
        return amplitude * std::exp(-0.5 * u * u) * std::sin(omega * (t - t0));
    }
};

// Yee state and precomputed update coefficients. Field layout:
//   Ex(i,j) at ((i+1/2)dx, j dx),      i in [0,nx), j in [0,ny]
//   Ey(i,j) at (i dx, (j+1/2)dx),      i in [0,nx], j in [0,ny)
//   Hz(i,j) at ((i+1/2)dx, (j+1/2)dx), i in [0,nx), j in [0,ny)
// Tangential E on the outer boundary stays zero (PEC box); the PML sits
// inside it.
class Stepper {
  public:
    Stepper(const Grid2D &grid, int threads) : grid_(grid), threads_(threads) {
        nx_ = grid.epsilon.nx();
        ny_ = grid.epsilon.ny();
        dx_ = grid.dx_nm;
        dt_ = kCourant * dx_ / std::sqrt(2.0);

        ex_ = RealField(nx_, ny_ + 1);
        ey_ = RealField(nx_ + 1, ny_);
        hzx_ = RealField(nx_, ny_);
        hzy_ = RealField(nx_, ny_);
        hz_ = RealField(nx_, ny_);

        build_coefficients();
    }

    double dt_nm() const { return dt_; }
    int nx() const { return nx_; }
    int ny() const { return ny_; }
    const RealField &ey() const { return ey_; }
    const RealField &hz() const { return hz_; }

    void step_e() {
        parallel_for_rows(ny_, threads_, [this](int j0, int j1) {
            for (int j = j0; j < j1; ++j) {
                // Ey rows: all j; interior i only (PEC at i = 0, nx).
                for (int i = 1; i < nx_; ++i) {
                    ey_(i, j) = ax_e_[i] * ey_(i, j) - ce_y_(i, j) * (hz_(i, j) - hz_(i - 1, j));
                }
                // Ex rows j in [1, ny): same partition, skip the PEC walls.
                if (j >= 1) {
                    for (int i = 0; i < nx_; ++i) {
                        ex_(i, j) = ay_e_[j] * ex_(i, j) + ce_x_(i, j) * (hz_(i, j) - hz_(i, j - 1));
                    }
                }
            }
        });
    }

    void step_h() {
        parallel_for_rows(ny_, threads_, [this](int j0, int j1) {
            for (int j = j0; j < j1; ++j) {
                for (int i = 0; i < nx_; ++i) {
                    hzx_(i, j) = ax_h_[i] * hzx_(i, j) - bx_h_[i] * (ey_(i + 1, j) - ey_(i, j));
                    hzy_(i, j) = ay_h_[j] * hzy_(i, j) + by_h_[j] * (ex_(i, j + 1) - ex_(i, j));
                    hz_(i, j) = hzx_(i, j) + hzy_(i, j);
                }
            }
        });
    }

    void add_ey(int ix, int iy, double value) {
        // Split across the two Ey nodes flanking the cell center so a centered
        // source excites the grid symmetrically.
        ey_(ix, iy) += 0.5 * value;
        ey_(ix + 1, iy) += 0.5 * value;
    }

    void add_ey_column(int ix, double value) {
        for (int j = 0; j < ny_; ++j) {
            add_ey(ix, j, value);
        }
    }

    void add_ex(int ix, int iy, double value) {
        ex_(ix, iy) += 0.5 * value;
        ex_(ix, iy + 1) += 0.5 * value;
    }

    double ey_cell_centered(int ix, int iy) const { return 0.5 * (ey_(ix, iy) + ey_(ix + 1, iy)); }

    double max_abs_e() const {
        double m = 0.0;
        for (double v : ey_.raw()) {
            m = std::max(m, std::abs(v));
        }
        for (double v : ex_.raw()) {
            m = std::max(m, std::abs(v));
        }
        return m;
    }

    // Discrete Yee energy: (1/2) sum eps E^2 + (1/2) sum Hz(n-1/2) Hz(n+1/2).
    // Exactly conserved in a lossless closed box.
    double energy(const RealField &hz_before) const {
        double acc = 0.0;
        for (int j = 0; j <= ny_; ++j) {
            for (int i = 0; i < nx_; ++i) {
                acc += 0.5 * eps_ex_(i, j) * ex_(i, j) * ex_(i, j);
            }
        }
        for (int j = 0; j < ny_; ++j) {
            for (int i = 0; i <= nx_; ++i) {
                acc += 0.5 * eps_ey_(i, j) * ey_(i, j) * ey_(i, j);
            }
        }
        for (int j = 0; j < ny_; ++j) {
            for (int i = 0; i < nx_; ++i) {
                acc += 0.5 * hz_before(i, j) * hz_(i, j);
            }
        }
        return acc * dx_ * dx_;
    }

  private:
    void build_coefficients() {
        const auto &eps = grid_.epsilon;
        eps_ex_ = RealField(nx_, ny_ + 1, 1.0);
        eps_ey_ = RealField(nx_ + 1, ny_, 1.0);
        for (int j = 0; j <= ny_; ++j) {
            for (int i = 0; i < nx_; ++i) {
                const double lo = eps(i, std::max(0, j - 1));
                const double hi = eps(i, std::min(ny_ - 1, j));
                eps_ex_(i, j) = 0.5 * (lo + hi);
            }
        }
        for (int j = 0; j < ny_; ++j) {
            for (int i = 0; i <= nx_; ++i) {
                const double lo = eps(std::max(0, i - 1), j);
                const double hi = eps(std::min(nx_ - 1, i), j);
                eps_ey_(i, j) = 0.5 * (lo + hi);
            }
        }

        const int pml = grid_.pml_cells;
        double s_max = grid_.pml_sigma_max;
        if (s_max <= 0.0) {
            // Graded-profile default, scaled to the boundary index.
            double eps_edge = 1.0;
            for (int i = 0; i < nx_; ++i) {
                eps_edge = std::max(eps_edge, std::max(eps(i, 0), eps(i, ny_ - 1)));
            }
            for (int j = 0; j < ny_; ++j) {
                eps_edge = std::max(eps_edge, std::max(eps(0, j), eps(nx_ - 1, j)));
            }
            s_max = 0.8 * (kPmlOrder + 1) / (dx_ * std::sqrt(eps_edge));
        }

        auto kappa = [&](double u, int n) {
            if (pml == 0) {
                return 0.0;
            }
            const double d = pml_depth_cells(u, n, pml) / pml;
            return 0.5 * dt_ * s_max * d * d * d;
        };
        auto decay = [](double k) { return (1.0 - k) / (1.0 + k); };
        auto gain = [&](double k) { return dt_ / (dx_ * (1.0 + k)); };

        ax_e_.resize(nx_ + 1);
        bx_e_.resize(nx_ + 1);
        for (int i = 0; i <= nx_; ++i) {
            const double k = kappa(i, nx_);
            ax_e_[i] = decay(k);
            bx_e_[i] = gain(k);
        }
        ay_e_.resize(ny_ + 1);
        by_e_.resize(ny_ + 1);
        for (int j = 0; j <= ny_; ++j) {
            const double k = kappa(j, ny_);
            ay_e_[j] = decay(k);
            by_e_[j] = gain(k);
        }
        ax_h_.resize(nx_);
        bx_h_.resize(nx_);
        for (int i = 0; i < nx_; ++i) {
            const double k = kappa(i + 0.5, nx_);
            ax_h_[i] = decay(k);
            bx_h_[i] = gain(k);
        }
        ay_h_.resize(ny_);
        by_h_.resize(ny_);
        for (int j = 0; j < ny_; ++j) {
            const double k = kappa(j + 0.5, ny_);
            ay_h_[j] = decay(k);
            by_h_[j] = gain(k);
        }

        ce_x_ = RealField(nx_, ny_ + 1);
        for (int j = 0; j <= ny_; ++j) {
            for (int i = 0; i < nx_; ++i) {
                ce_x_(i, j) = by_e_[j] / eps_ex_(i, j);
            }
        }
        ce_y_ = RealField(nx_ + 1, ny_);
        for (int j = 0; j < ny_; ++j) {
            for (int i = 0; i <= nx_; ++i) {
                ce_y_(i, j) = bx_e_[i] / eps_ey_(i, j);
            }
        }
    }

    const Grid2D &grid_;
    int threads_;
    int nx_ = 0, ny_ = 0;
    double dx_ = 0.0, dt_ = 0.0;

    RealField ex_, ey_, hzx_, hzy_, hz_;
    RealField eps_ex_, eps_ey_;
    RealField ce_x_, ce_y_;
    std::vector<double> ax_e_, bx_e_, ay_e_, by_e_;
    std::vector<double> ax_h_, bx_h_, ay_h_, by_h_;
};

} // namespace

void Grid2D::validate() const {
    if (epsilon.empty() || !(dx_nm > 0.0)) {
        throw ConfigError("grid: empty epsilon map or non-positive dx");
    }
    for (double v : epsilon.raw()) {
        if (!(v >= 1.0) || !std::isfinite(v)) {
            throw ConfigError("grid: epsilon must be finite and >= 1 everywhere");
        }
    }
    if (pml_cells != 0 && pml_cells < 8) {
        throw ConfigError("grid: pml_cells must be 0 (closed box) or >= 8");
    }
    if (2 * pml_cells + 8 > std::min(epsilon.nx(), epsilon.ny())) {
        throw ConfigError("grid: PML leaves no interior");
    }
}

Grid2D Grid2D::from_epsilon_map(const EpsilonMap &map, int pml_cells, double pml_sigma_max) {
    Grid2D g;
    g.epsilon = map.eps;
    g.dx_nm = map.dx_nm;
    g.pml_cells = pml_cells;
    g.pml_sigma_max = pml_sigma_max;
    g.origin_ix = map.origin_ix;
    g.origin_iy = map.origin_iy;
    g.validate();
    return g;
}

SourceSpec SourceSpec::centered(const Grid2D &grid, double lambda_nm, double bandwidth_nm, double amplitude) {
    SourceSpec src;
    src.ix = grid.origin_ix;
    src.iy = grid.origin_iy;
    src.center_wavelength_nm = lambda_nm;
    src.bandwidth_nm = bandwidth_nm;
    src.amplitude = amplitude;
    return src;
}

long default_run_steps(const Grid2D &grid, const SourceSpec &source, double ringdown_cycles) {
    const Pulse pulse = Pulse::from_source(source);
    const double dt = kCourant * grid.dx_nm / std::sqrt(2.0);
    const double total = pulse.t_off + ringdown_cycles * source.center_wavelength_nm;
    return static_cast<long>(std::ceil(total / dt));
}

ProbeSeries run_fdtd(const Grid2D &grid, const SourceSpec &source, long steps,
                     const std::vector<std::pair<int, int>> &probes, const FdtdRunOptions &options) {
    grid.validate();
    if (!(source.bandwidth_nm > 0.0) || !(source.center_wavelength_nm > 0.0)) {
        throw ConfigError("source: wavelength and bandwidth must be > 0");
    }
    const int nx = grid.epsilon.nx();
    const int ny = grid.epsilon.ny();
    const int pml = grid.pml_cells;
    const bool x_ok = source.ix > pml && source.ix < nx - pml - 1;
    const bool y_ok = source.uniform_y || (source.iy > pml && source.iy < ny - pml - 1);
    if (!x_ok || !y_ok) {
        throw ConfigError("source position inside the PML region");
    }

    std::vector<std::pair<int, int>> probe_cells = probes;
    if (probe_cells.empty()) {
        probe_cells = {{source.ix, source.iy}, {source.ix + 2, source.iy + 1}};
    }
    for (auto [px, py] : probe_cells) {
        if (px < pml || px >= nx - pml - 1 || py < pml || py >= ny - pml) {
            throw ConfigError("probe position inside the PML region");
        }
    }

    const Pulse pulse = Pulse::from_source(source);
    Stepper st(grid, options.threads);
    const double dt = st.dt_nm();
    const long off_step = static_cast<long>(std::ceil(pulse.t_off / dt));
    if (steps <= off_step) {
        throw ConfigError("run_fdtd: steps must cover the source ring-up (" + std::to_string(off_step) + " steps)");
    }

    ProbeSeries series;
    series.positions = probe_cells;
    series.samples.assign(probe_cells.size(), {});
    for (auto &s : series.samples) {
        s.reserve(steps);
    }
    series.dt_nm = dt;
    series.dt_s = dt / kSpeedOfLightNmPerS;
    series.source_off_step = off_step;
    series.energy_stride = options.energy_stride;

    RealField hz_before;
    const double div_threshold = options.divergence_factor * std::abs(source.amplitude);

    for (long n = 0; n < steps; ++n) {
        st.step_e();
        const double t = (n + 1) * dt;
        const double g = pulse(t);
        if (g != 0.0) {
            if (source.uniform_y) {
                st.add_ey_column(source.ix, g);
            } else if (source.polarization == SourceSpec::Pol::Ey) {
                st.add_ey(source.ix, source.iy, g);
            } else {
                st.add_ex(source.ix, source.iy, g);
            }
        }
        const bool record_energy = options.energy_stride > 0 && (n % options.energy_stride == 0);
        if (record_energy) {
            hz_before = st.hz();
        }
        st.step_h();
        if (record_energy) {
            series.energy.push_back(st.energy(hz_before));
        }
        for (size_t p = 0; p < probe_cells.size(); ++p) {
            series.samples[p].push_back(st.ey_cell_centered(probe_cells[p].first, probe_cells[p].second));
        }
        if ((n & 511) == 0 && st.max_abs_e() > div_threshold) {
            throw NumericalError("run_fdtd: field diverged at step " + std::to_string(n));
        }
    }
    if (st.max_abs_e() > div_threshold) {
        throw NumericalError("run_fdtd: field diverged");
    }
    return series;
}

namespace {

// Power spectrum of a real series, zero-padded for peak interpolation.
// Returns |S(f)|^2 at f_k = k / (n_fft * dt).
std::vector<double> power_spectrum(const std::vector<double> &s, int pad_factor, size_t &n_fft) {
    size_t n = 1;
    while (n < s.size() * static_cast<size_t>(pad_factor)) {
        n <<= 1;
    }
    n_fft = n;
    std::vector<double> in(n, 0.0);
    std::copy(s.begin(), s.end(), in.begin());
    std::vector<std::complex<double>> out(n / 2 + 1);
    {
        std::lock_guard<std::mutex> lock(fftw_mutex());
        fftw_plan plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.data(),
                                              reinterpret_cast<fftw_complex *>(out.data()), FFTW_ESTIMATE);
        fftw_execute(plan);
        fftw_destroy_plan(plan);
    }
    std::vector<double> power(out.size());
    for (size_t i = 0; i < out.size(); ++i) {
        power[i] = std::norm(out[i]);
    }
    return power;
}

struct RingdownFit {
    double tau_energy_nm = 0.0;
    double residual = 0.0;
};

// Heterodynes at frequency f (cycles/nm), extracts the envelope with a double
// boxcar (8 optical periods), and fits a single exponential to the log energy.
RingdownFit fit_ringdown(const std::vector<double> &s, double dt, double f, double skip_cycles) {
    const double omega = 2.0 * kPi * f;
    const size_t n = s.size();
    std::vector<std::complex<double>> z(n);
    for (size_t k = 0; k < n; ++k) {
        const double ph = -omega * dt * static_cast<double>(k);
        z[k] = s[k] * std::complex<double>(std::cos(ph), std::sin(ph));
    }
    const size_t w = std::max<size_t>(4, static_cast<size_t>(std::llround(8.0 / (f * dt))));
    if (n < 3 * w) {
        throw NumericalError("ring-down too short for envelope fit");
    }
    std::vector<std::complex<double>> prefix(n + 1, {0.0, 0.0});
    for (size_t k = 0; k < n; ++k) {
        prefix[k + 1] = prefix[k] + z[k];
    }
    auto boxcar = [&](size_t k) { return (prefix[k + w] - prefix[k]) / static_cast<double>(w); };
    // Double boxcar: average of boxcars over a second window of length w.
    const size_t skip = static_cast<size_t>(skip_cycles / (f * dt));
    const size_t hop = std::max<size_t>(1, w / 4);

    std::vector<double> ts;
    std::vector<double> loge;
    double peak = 0.0;
    std::vector<std::pair<double, double>> pts;
    for (size_t k = skip; k + 2 * w <= n; k += hop) {
        std::complex<double> acc{0.0, 0.0};
        for (size_t j = 0; j < w; ++j) {
            acc += boxcar(k + j);
        }
        acc /= static_cast<double>(w);
        const double e = std::norm(acc);
        peak = std::max(peak, e);
        pts.emplace_back((static_cast<double>(k) + w) * dt, e);
    }
    // Fit only the first three decades of decay; later samples are dominated
    // by leakage from other modes or the numerical floor.
    for (auto [t, e] : pts) {
        if (e > 1e-3 * peak) {
            ts.push_back(t);
            loge.push_back(std::log(e));
        }
    }
    if (ts.size() < 4) {
        throw NumericalError("ring-down fit: not enough envelope samples");
    }
    // Least-squares line loge = c + slope * t.
    const size_t m = ts.size();
    double st = 0.0, se = 0.0, stt = 0.0, ste = 0.0;
    for (size_t i = 0; i < m; ++i) {
        st += ts[i];
        se += loge[i];
        stt += ts[i] * ts[i];
        ste += ts[i] * loge[i];
    }
    const double denom = m * stt - st * st;
    if (std::abs(denom) < 1e-30) {
        throw NumericalError("ring-down fit: degenerate time axis");
    }
    const double slope = (m * ste - st * se) / denom;
    const double intercept = (se - slope * st) / m;
    double ss = 0.0;
    for (size_t i = 0; i < m; ++i) {
        const double r = loge[i] - (intercept + slope * ts[i]);
        ss += r * r;
    }
    RingdownFit fit;
    fit.residual = std::sqrt(ss / m);
    if (slope >= 0.0) {
        throw NumericalError("ring-down fit: envelope does not decay");
    }
    fit.tau_energy_nm = -1.0 / slope;
    return fit;
}

} // namespace

ResonancePeak find_resonance(const ProbeSeries &series, double lambda_min_nm, double lambda_max_nm,
                             const FindResonanceOptions &options) {
    if (!(lambda_min_nm > 0.0) || !(lambda_max_nm > lambda_min_nm)) {
        throw ConfigError("find_resonance: bad wavelength window");
    }
    if (options.probe_index < 0 || options.probe_index >= static_cast<int>(series.samples.size())) {
        throw ConfigError("find_resonance: probe index out of range");
    }
    const auto &all = series.samples[options.probe_index];
    if (series.source_off_step < 0 || static_cast<size_t>(series.source_off_step) >= all.size()) {
        throw ConfigError("find_resonance: series has no post-source samples");
    }
    std::vector<double> s(all.begin() + series.source_off_step, all.end());
    const double dt = series.dt_nm;
    if (s.size() * dt < 10.0 * lambda_max_nm) {
        throw ConfigError("find_resonance: need at least 10 optical cycles after source turn-off");
    }

    size_t n_fft = 0;
    const std::vector<double> power = power_spectrum(s, 4, n_fft);
    const double df = 1.0 / (static_cast<double>(n_fft) * dt);
    size_t k_lo = static_cast<size_t>(std::ceil(1.0 / (lambda_max_nm * df)));
    size_t k_hi = static_cast<size_t>(std::floor(1.0 / (lambda_min_nm * df)));
    k_lo = std::max<size_t>(k_lo, 1);
    k_hi = std::min(k_hi, power.size() - 1);
    if (k_lo >= k_hi) {
        throw ConfigError("find_resonance: window contains no spectral bins");
    }

    size_t k_peak = k_lo;
    for (size_t k = k_lo; k <= k_hi; ++k) {
        if (power[k] > power[k_peak]) {
            k_peak = k;
        }
    }
    std::vector<double> window(power.begin() + k_lo, power.begin() + k_hi + 1);
    std::nth_element(window.begin(), window.begin() + window.size() / 2, window.end());
    const double median = std::max(window[window.size() / 2], 1e-300);
    const double prominence = power[k_peak] / median;
    if (prominence < options.min_prominence) {
        throw NumericalError("find_resonance: no resonance in window (peak prominence " +
                             std::to_string(prominence) + ")");
    }

    double f_hat = k_peak * df;
    if (k_peak > k_lo && k_peak < k_hi) {
        const double la = std::log(std::max(power[k_peak - 1], 1e-300));
        const double lb = std::log(power[k_peak]);
        const double lc = std::log(std::max(power[k_peak + 1], 1e-300));
        const double denom = la - 2.0 * lb + lc;
        if (denom < -1e-12) {
            const double delta = 0.5 * (la - lc) / denom;
            f_hat = (static_cast<double>(k_peak) + std::clamp(delta, -1.0, 1.0)) * df;
        }
    }

    const RingdownFit fit = fit_ringdown(s, dt, f_hat, 50.0);
    if (fit.residual > options.max_fit_residual) {
        throw NumericalError("find_resonance: decay is not single-exponential (residual " +
                             std::to_string(fit.residual) + ")");
    }

    ResonancePeak peak;
    peak.lambda_cav_nm = 1.0 / f_hat;
    peak.q_factor = 2.0 * kPi * f_hat * fit.tau_energy_nm;
    peak.fit_residual = fit.residual;
    peak.prominence = prominence;
    return peak;
}

ResonanceResult extract_mode(const Grid2D &grid, const SourceSpec &source, double lambda_cav_nm,
                             const ExtractModeOptions &options) {
    grid.validate();
    if (!(lambda_cav_nm > 0.0)) {
        throw ConfigError("extract_mode: lambda_cav must be > 0");
    }
    const int nx = grid.epsilon.nx();
    const int ny = grid.epsilon.ny();

    const Pulse pulse = Pulse::from_source(source);
    Stepper st(grid, options.threads);
    const double dt = st.dt_nm();
    const long off_step = static_cast<long>(std::ceil(pulse.t_off / dt));
    long steps = options.steps > 0 ? options.steps : default_run_steps(grid, source, 1200.0);
    if (steps <= off_step) {
        throw ConfigError("extract_mode: steps must cover the source ring-up");
    }
    const long settle_steps = off_step + static_cast<long>(options.settle_cycles * lambda_cav_nm / dt);

    const double omega = 2.0 * kPi / lambda_cav_nm;
    constexpr int kAccumulateStride = 4;
    Field2D<std::complex<double>> acc(nx + 1, ny, {0.0, 0.0});

    std::vector<double> probe;
    probe.reserve(steps);
    const double div_threshold = 1e6 * std::abs(source.amplitude);

    for (long n = 0; n < steps; ++n) {
        st.step_e();
        const double t = (n + 1) * dt;
        const double g = pulse(t);
        if (g != 0.0) {
            st.add_ey(source.ix, source.iy, g);
        }
        st.step_h();
        probe.push_back(st.ey_cell_centered(source.ix, source.iy));
        if (n >= settle_steps && (n % kAccumulateStride) == 0) {
            const double ph = omega * t;
            const std::complex<double> rot(std::cos(ph), std::sin(ph));
            const auto &ey = st.ey();
            auto *a = acc.data();
            const auto *e = ey.data();
            const size_t total = ey.size();
            for (size_t k = 0; k < total; ++k) {
                a[k] += e[k] * rot;
            }
        }
        if ((n & 511) == 0 && st.max_abs_e() > div_threshold) {
            throw NumericalError("extract_mode: field diverged at step " + std::to_string(n));
        }
    }

    // Q from the same run's ring-down at the requested wavelength.
    std::vector<double> post(probe.begin() + off_step, probe.end());
    const RingdownFit fit = fit_ringdown(post, dt, 1.0 / lambda_cav_nm, 50.0);

    ResonanceResult result;
    result.lambda_cav_nm = lambda_cav_nm;
    result.q_factor = omega * fit.tau_energy_nm;
    result.dx_nm = grid.dx_nm;
    result.origin_ix = grid.origin_ix;
    result.origin_iy = grid.origin_iy;

    // Cell-centered phasor from the Ey-node accumulator.
    ComplexField mode(nx, ny);
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            mode(i, j) = 0.5 * (acc(i, j) + acc(i + 1, j));
        }
    }
    // Normalize: unit peak magnitude, real-positive at the peak.
    std::complex<double> peak{0.0, 0.0};
    for (const auto &v : mode.raw()) {
        if (std::abs(v) > std::abs(peak)) {
            peak = v;
        }
    }
    const double peak_mag = std::abs(peak);
    if (!(peak_mag > 0.0)) {
        throw NumericalError("extract_mode: accumulated mode field is zero");
    }
    const std::complex<double> scale = std::conj(peak) / (peak_mag * peak_mag);
    for (auto &v : mode.raw()) {
        v *= scale;
    }
    result.mode_field = std::move(mode);

    double num = 0.0;
    double den = 0.0;
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            const double u = grid.epsilon(i, j) * std::norm(result.mode_field(i, j));
            num += u;
            den = std::max(den, u);
        }
    }
    double eps_max = 1.0;
    for (double v : grid.epsilon.raw()) {
        eps_max = std::max(eps_max, v);
    }
    const double n_eff = std::sqrt(eps_max);
    const double cell_area = grid.dx_nm * grid.dx_nm;
    const double lam_over_n = lambda_cav_nm / n_eff;
    result.v_mode_norm = (num * cell_area / den) / (lam_over_n * lam_over_n);
    return result;
}

void write_mode_field_csv(const std::string &path, const ResonanceResult &mode,
                          const std::vector<std::pair<std::string, std::string>> &extra_header) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path);
    }
    out << std::setprecision(17);
    out << "# dx_nm=" << mode.dx_nm << " lambda_cav_nm=" << mode.lambda_cav_nm << " q=" << mode.q_factor
        << " v_mode_norm=" << mode.v_mode_norm << " nx=" << mode.mode_field.nx() << " ny=" << mode.mode_field.ny()
        << " origin_ix=" << mode.origin_ix << " origin_iy=" << mode.origin_iy;
    for (const auto &[k, v] : extra_header) {
        out << " " << k << "=" << v;
    }
    out << "\n";
    out << "ix,iy,re,im\n";
    for (int j = 0; j < mode.mode_field.ny(); ++j) {
        for (int i = 0; i < mode.mode_field.nx(); ++i) {
            const auto &v = mode.mode_field(i, j);
            out << i << "," << j << "," << v.real() << "," << v.imag() << "\n";
        }
    }
    if (!out) {
        throw IoError("write failed: " + path);
    }
}

void write_probe_series_csv(const std::string &path, const ProbeSeries &series,
                            const std::vector<std::pair<std::string, std::string>> &extra_header) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path);
    }
    out << std::setprecision(17);
    out << "# dt_s=" << series.dt_s << " dt_nm=" << series.dt_nm << " source_off_step=" << series.source_off_step
        << " probes=" << series.positions.size();
    for (const auto &[k, v] : extra_header) {
        out << " " << k << "=" << v;
    }
    out << "\n";
    out << "step";
    for (size_t p = 0; p < series.positions.size(); ++p) {
        out << ",probe" << p;
    }
    out << "\n";
    if (!series.samples.empty()) {
        const size_t n = series.samples[0].size();
        for (size_t k = 0; k < n; ++k) {
            out << k;
            for (const auto &s : series.samples) {
                out << "," << s[k];
            }
            out << "\n";
        }
    }
    if (!out) {
        throw IoError("write failed: " + path);
    }
}

} // namespace pcsim
