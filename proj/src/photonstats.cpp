#include "pcsim/photonstats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>

#include "pcsim/errors.hpp"
#include "pcsim/parallel.hpp"
#include "pcsim/units.hpp"

namespace pcsim {

namespace {

// Counter-based splitmix64 stream; fully specified arithmetic keeps click
// streams identical across platforms and worker counts.
uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

uint64_t mix(uint64_t a, uint64_t b) { return splitmix64(a ^ (0x9e3779b97f4a7c15ULL + splitmix64(b))); }

class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    double u01() { // [0, 1)
        return static_cast<double>(splitmix64(state_++) >> 11) * 0x1p-53;
    }

    bool coin(double p) { return u01() < p; }

    double exponential(double tau) { return -tau * std::log1p(-u01()); }

    double normal(double sigma) {
        const double u1 = 1.0 - u01(); // (0, 1]
        const double u2 = u01();
        return sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    long poisson(double mean) {
        if (mean <= 0.0) {
            return 0;
        }
        const double limit = std::exp(-mean);
        long k = 0;
        double p = 1.0;
        do {
            ++k;
            p *= 1.0 - u01(); // (0, 1], avoids sticking at p = 0
        } while (p > limit);
        return k - 1;
    }

    double lorentzian_nm(double center_nm, double q) {
        double u = u01();
        if (u <= 0.0) {
            u = 0x1p-53;
        }
        const double fwhm = center_nm / q;
        return center_nm + 0.5 * fwhm * std::tan(kPi * (u - 0.5));
    }

  private:
    uint64_t state_;
};

constexpr uint64_t kDetectSalt = 0xde7ec70a5a17ULL;

} // namespace

void PulseTrainSpec::validate() const {
    if (!(rep_rate_hz > 0.0) || n_pulses < 1) {
        throw ConfigError("pulse train: rep_rate and n_pulses must be positive");
    }
    if (!(pulse_fwhm_ps > 0.0) || rep_period_ps() < 10.0 * pulse_fwhm_ps) {
        throw ConfigError("pulse train: rep period must be well above the pulse width");
    }
}

void EmitterDynamics::validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(p_excite) || !prob(p_reexcite) || !prob(cavity_feeding)) {
        throw ConfigError("emitter: probabilities must be in [0, 1]");
    }
    if (!(tau_ps > 0.0) || background_mean < 0.0 || !(q_cavity > 0.0)) {
        throw ConfigError("emitter: tau and q must be > 0, background_mean >= 0");
    }
}

double EmitterDynamics::tau_background_ps() const { return cavity_lifetime_ps(q_cavity, lambda_cav_nm); }

void DetectorSpec::validate() const {
    if (!(efficiency > 0.0 && efficiency <= 1.0)) {
        throw ConfigError("detector: efficiency must be in (0, 1]");
    }
    if (jitter_fwhm_ps < 0.0 || dead_time_ns < 0.0) {
        throw ConfigError("detector: jitter and dead time must be >= 0");
    }
}

std::string to_string(Channel c) {
    switch (c) {
    case Channel::A: return "A";
    case Channel::B: return "B";
    case Channel::QD: return "QD";
    case Channel::CAV: return "CAV";
    }
    return "?";
}

std::vector<double> ClickRecords::channel_times(Channel c) const {
    std::vector<double> out;
    for (const auto &click : clicks) {
        if (click.channel == c) {
            out.push_back(click.t_ps);
        }
    }
    return out;
}

long ClickRecords::channel_count(Channel c) const {
    long n = 0;
    for (const auto &click : clicks) {
        if (click.channel == c) {
            ++n;
        }
    }
    return n;
}

DetectPolicy DetectPolicy::hbt_filtered(double center_nm, double width_nm) {
    DetectPolicy p;
    p.mode = Mode::Hbt;
    p.filter_center_nm = center_nm;
    p.filter_width_nm = width_nm;
    return p;
}

DetectPolicy DetectPolicy::spectral(double qd_center_nm, double cav_center_nm, double width_nm) {
    DetectPolicy p;
    p.mode = Mode::Spectral;
    p.qd_center_nm = qd_center_nm;
    p.cav_center_nm = cav_center_nm;
    p.window_width_nm = width_nm;
    return p;
}

PhotonList generate_photons(const PulseTrainSpec &pulses, const EmitterDynamics &dyn, uint64_t seed, int threads) {
    pulses.validate();
    dyn.validate();
    if (pulses.rep_period_ps() < 5.0 * dyn.tau_ps) {
        throw ConfigError("generate_photons: rep period must be >= 5 lifetimes");
    }

    const double period = pulses.rep_period_ps();
    const double cutoff = dyn.reexcite_cutoff_ps(pulses);
    const double tau_bg = dyn.tau_background_ps();

    // Fixed block partition (independent of thread count) keeps the photon
    // list order stable.
    constexpr long kBlock = 4096;
    const long n_blocks = (pulses.n_pulses + kBlock - 1) / kBlock;
    std::vector<std::vector<Photon>> blocks(n_blocks);

    parallel_for_rows(static_cast<int>(n_blocks), threads, [&](int b0, int b1) {
        for (int b = b0; b < b1; ++b) {
            auto &out = blocks[b];
            const long k_end = std::min<long>(pulses.n_pulses, (b + 1LL) * kBlock);
            for (long k = b * kBlock; k < k_end; ++k) {
                Rng rng(mix(seed, static_cast<uint64_t>(k)));
                const double t_pulse = k * period;
                int ordinal = 0;
                if (rng.coin(dyn.p_excite)) {
                    const double delay = rng.exponential(dyn.tau_ps);
                    const bool fed = rng.coin(dyn.cavity_feeding);
                    const double lambda = fed ? rng.lorentzian_nm(dyn.lambda_cav_nm, dyn.q_cavity) : dyn.lambda_qd_nm;
                    out.push_back({t_pulse + delay, lambda, k, ordinal++});
                    if (delay < cutoff && rng.coin(dyn.p_reexcite)) {
                        const double delay2 = rng.exponential(dyn.tau_ps);
                        const bool fed2 = rng.coin(dyn.cavity_feeding);
                        const double lambda2 =
                            fed2 ? rng.lorentzian_nm(dyn.lambda_cav_nm, dyn.q_cavity) : dyn.lambda_qd_nm;
                        out.push_back({t_pulse + delay + delay2, lambda2, k, ordinal++});
                    }
                }
                const long n_bg = rng.poisson(dyn.background_mean);
                for (long i = 0; i < n_bg; ++i) {
                    const double delay = rng.exponential(tau_bg);
                    const double lambda = rng.lorentzian_nm(dyn.lambda_cav_nm, dyn.q_cavity);
                    out.push_back({t_pulse + delay, lambda, k, ordinal++});
                }
            }
        }
    });

    PhotonList list;
    list.n_pulses = pulses.n_pulses;
    list.rep_period_ps = period;
    size_t total = 0;
    for (const auto &b : blocks) {
        total += b.size();
    }
    list.photons.reserve(total);
    for (auto &b : blocks) {
        list.photons.insert(list.photons.end(), b.begin(), b.end());
    }
    return list;
}

ClickRecords detect(const PhotonList &photons, const DetectorSpec &det, const DetectPolicy &policy, uint64_t seed) {
    det.validate();
    const uint64_t detect_seed = mix(seed, kDetectSalt);

    ClickRecords records;
    records.n_pulses = photons.n_pulses;
    records.rep_period_ps = photons.rep_period_ps;
    records.clicks.reserve(photons.photons.size());

    for (const auto &ph : photons.photons) {
        Channel channel = Channel::A;
        if (policy.mode == DetectPolicy::Mode::Hbt) {
            if (policy.filter_width_nm > 0.0 &&
                std::abs(ph.lambda_nm - policy.filter_center_nm) > 0.5 * policy.filter_width_nm) {
                continue;
            }
        } else {
            if (std::abs(ph.lambda_nm - policy.qd_center_nm) <= 0.5 * policy.window_width_nm) {
                channel = Channel::QD;
            } else if (std::abs(ph.lambda_nm - policy.cav_center_nm) <= 0.5 * policy.window_width_nm) {
                channel = Channel::CAV;
            } else {
                continue; // outside both grating windows
            }
        }
        Rng rng(mix(detect_seed, mix(static_cast<uint64_t>(ph.pulse), static_cast<uint64_t>(ph.ordinal))));
        if (policy.mode == DetectPolicy::Mode::Hbt) {
            channel = rng.coin(0.5) ? Channel::A : Channel::B;
        } else {
            rng.u01(); // keep the draw sequence aligned between modes
        }
        if (!rng.coin(det.efficiency)) {
            continue;
        }
        double t = ph.t_ps;
        if (det.jitter_fwhm_ps > 0.0) {
            t += rng.normal(det.jitter_fwhm_ps / 2.3548200450309493); // FWHM -> sigma
        }
        records.clicks.push_back({channel, t, ph.lambda_nm});
    }

    std::stable_sort(records.clicks.begin(), records.clicks.end(),
                     [](const ClickRecord &a, const ClickRecord &b) { return a.t_ps < b.t_ps; });

    if (det.dead_time_ns > 0.0) {
        const double dead_ps = det.dead_time_ns * 1e3;
        std::map<Channel, double> last;
        std::vector<ClickRecord> kept;
        kept.reserve(records.clicks.size());
        for (const auto &click : records.clicks) {
            auto it = last.find(click.channel);
            if (it == last.end() || click.t_ps - it->second >= dead_ps) {
                kept.push_back(click);
                last[click.channel] = click.t_ps;
            }
        }
        records.clicks = std::move(kept);
    }
    return records;
}

ClickRecords simulate_emission(const PulseTrainSpec &pulses, const EmitterDynamics &dyn, const DetectorSpec &det,
                               uint64_t seed, int threads) {
    return detect(generate_photons(pulses, dyn, seed, threads), det, DetectPolicy::hbt(), seed);
}

ClickRecords spectral_filter(const ClickRecords &records, double center_nm, double width_nm) {
    if (!(width_nm >= 0.0)) {
        throw ConfigError("spectral_filter: width must be >= 0");
    }
    ClickRecords out;
    out.n_pulses = records.n_pulses;
    out.rep_period_ps = records.rep_period_ps;
    for (const auto &click : records.clicks) {
        if (std::abs(click.lambda_nm - center_nm) <= 0.5 * width_nm) {
            out.clicks.push_back(click);
        }
    }
    return out;
}

double CorrelationHistogram::bin_center_ps(size_t i) const {
    const long half = static_cast<long>(counts.size() / 2);
    return (static_cast<long>(i) - half) * bin_width_ps;
}

long CorrelationHistogram::total() const {
    long n = 0;
    for (long c : counts) {
        n += c;
    }
    return n;
}

namespace {

// All-pairs delay histogram: t' = t_a - t_b for every pair within the window.
CorrelationHistogram histogram_pairs(const std::vector<double> &ta, const std::vector<double> &tb,
                                     double bin_width_ps, double window_ps, long n_pulses, double rep_period_ps) {
    if (!(bin_width_ps > 0.0) || !(window_ps > bin_width_ps)) {
        throw ConfigError("correlate: need window > bin_width > 0");
    }
    if (rep_period_ps > 0.0 && window_ps < 5.0 * rep_period_ps) {
        throw ConfigError("correlate: window must span at least 5 rep periods");
    }
    CorrelationHistogram hist;
    hist.bin_width_ps = bin_width_ps;
    hist.window_ps = window_ps;
    hist.n_pulses = n_pulses;
    hist.rep_period_ps = rep_period_ps;
    // Only fully covered bins: the outermost bin center sits at least half a
    // bin inside the window, so every bin sees the same delay acceptance.
    const long half = static_cast<long>(std::floor(window_ps / bin_width_ps - 0.5));
    if (half < 1) {
        throw ConfigError("correlate: window too narrow for the bin width");
    }
    hist.counts.assign(2 * half + 1, 0);

    size_t lo = 0;
    size_t hi = 0;
    for (const double t : ta) {
        while (lo < tb.size() && tb[lo] < t - window_ps) {
            ++lo;
        }
        while (hi < tb.size() && tb[hi] <= t + window_ps) {
            ++hi;
        }
        for (size_t j = lo; j < hi; ++j) {
            const double delay = t - tb[j];
            const long bin = static_cast<long>(std::llround(delay / bin_width_ps));
            if (bin >= -half && bin <= half) {
                ++hist.counts[bin + half];
            }
        }
    }
    return hist;
}

} // namespace

CorrelationHistogram hbt_correlate(const ClickRecords &records, double bin_width_ps, double window_ps) {
    const auto ta = records.channel_times(Channel::A);
    const auto tb = records.channel_times(Channel::B);
    if (ta.empty() || tb.empty()) {
        throw NumericalError("hbt_correlate: empty channel");
    }
    return histogram_pairs(ta, tb, bin_width_ps, window_ps, records.n_pulses, records.rep_period_ps);
}

CorrelationHistogram cross_correlate(const ClickRecords &clicks_qd, const ClickRecords &clicks_cav,
                                     double bin_width_ps, double window_ps) {
    std::vector<double> ta;
    ta.reserve(clicks_qd.clicks.size());
    for (const auto &c : clicks_qd.clicks) {
        ta.push_back(c.t_ps);
    }
    std::vector<double> tb;
    tb.reserve(clicks_cav.clicks.size());
    for (const auto &c : clicks_cav.clicks) {
        tb.push_back(c.t_ps);
    }
    if (ta.empty() || tb.empty()) {
        throw NumericalError("cross_correlate: empty channel");
    }
    return histogram_pairs(ta, tb, bin_width_ps, window_ps, clicks_qd.n_pulses,
                           std::max(clicks_qd.rep_period_ps, clicks_cav.rep_period_ps));
}

G2Result g2_zero(const CorrelationHistogram &hist, double rep_rate_hz) {
    if (!(rep_rate_hz > 0.0)) {
        throw ConfigError("g2_zero: rep_rate must be > 0");
    }
    const double period = 1e12 / rep_rate_hz;
    // Complete peaks only: peak m covers |t' - m*period| <= period/2 and must
    // lie fully inside the covered span. Boundary bins go to the lower peak.
    const double covered = (static_cast<double>(hist.counts.size() / 2) + 0.5) * hist.bin_width_ps;
    const long m_max = static_cast<long>(std::floor(covered / period - 0.5 + 1e-9));
    if (m_max < 4) {
        throw ConfigError("g2_zero: window must contain at least 4 complete side peaks");
    }
    std::vector<double> area(m_max + 1, 0.0);
    std::vector<int> signed_peaks(m_max + 1, 0);
    for (size_t i = 0; i < hist.counts.size(); ++i) {
        const double c = hist.bin_center_ps(i);
        const double a = std::abs(c);
        long m = static_cast<long>(std::ceil(a / period - 0.5)); // ties to the lower peak
        if (m <= m_max) {
            area[m] += static_cast<double>(hist.counts[i]);
        }
    }
    for (long m = 1; m <= m_max; ++m) {
        signed_peaks[m] = 2; // +m and -m both inside the window
    }

    const double central = area[0];
    double side_total = 0.0;
    int side_peaks = 0;
    for (long m = 1; m <= m_max; ++m) {
        side_total += area[m];
        side_peaks += signed_peaks[m];
    }
    const double side_mean = side_total / side_peaks;
    if (side_mean < 100.0) {
        throw NumericalError("g2_zero: insufficient statistics (mean side-peak area " + std::to_string(side_mean) +
                             " < 100 counts)");
    }

    G2Result result;
    result.central_area = central;
    result.side_area_mean = side_mean;
    result.n_side_peaks = side_peaks;
    result.g2_zero = central / side_mean;
    const double var_central = std::max(central, 1.0) / (side_mean * side_mean);
    const double var_side = (central * central / std::pow(side_mean, 4)) * side_total /
                            (static_cast<double>(side_peaks) * side_peaks);
    result.statistical_error = std::sqrt(var_central + var_side);
    return result;
}

void write_clicks_csv(const std::string &path, const ClickRecords &records,
                      const std::vector<std::pair<std::string, std::string>> &extra_header) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path);
    }
    out << std::setprecision(17);
    out << "# n_pulses=" << records.n_pulses << " rep_period_ps=" << records.rep_period_ps;
    for (const auto &[k, v] : extra_header) {
        out << " " << k << "=" << v;
    }
    out << "\n";
    out << "channel,timestamp_ps,wavelength_nm\n";
    for (const auto &click : records.clicks) {
        out << to_string(click.channel) << "," << click.t_ps << "," << click.lambda_nm << "\n";
    }
    if (!out) {
        throw IoError("write failed: " + path);
    }
}

void write_histogram_csv(const std::string &path, const CorrelationHistogram &hist,
                         const std::vector<std::pair<std::string, std::string>> &extra_header) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path);
    }
    out << std::setprecision(17);
    out << "# bin_width_ps=" << hist.bin_width_ps << " window_ps=" << hist.window_ps
        << " n_pulses=" << hist.n_pulses << " rep_period_ps=" << hist.rep_period_ps;
    for (const auto &[k, v] : extra_header) {
        out << " " << k << "=" << v;
    }
    out << "\n";
    out << "bin_center_ps,counts\n";
    for (size_t i = 0; i < hist.counts.size(); ++i) {
        out << hist.bin_center_ps(i) << "," << hist.counts[i] << "\n";
    }
    if (!out) {
        throw IoError("write failed: " + path);
    }
}

} // namespace pcsim
