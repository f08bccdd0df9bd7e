#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pcsim {

// Pulsed single-photon-source Monte Carlo and HBT correlator. Times in ps.
// All randomness derives from (seed, pulse index, photon ordinal) counters,
// so results are bit-identical for a fixed seed regardless of worker count.

struct PulseTrainSpec {
    double rep_rate_hz = 80e6;
    double pulse_fwhm_ps = 3.5;
    long n_pulses = 1000000;

    double rep_period_ps() const { return 1e12 / rep_rate_hz; }
    void validate() const;
};

struct EmitterDynamics {
    double tau_ps = 45.0;        // exciton lifetime
    double p_excite = 1.0;       // excitation probability per pulse
    double p_reexcite = 0.0;     // re-excitation after an early first emission
    double background_mean = 0.0; // Poisson background photons per pulse
    double lambda_qd_nm = 919.4;
    double lambda_cav_nm = 920.0;
    double q_cavity = 8500.0;    // cavity Lorentzian for background/fed photons
    double cavity_feeding = 0.0; // QD photons re-emitted at the cavity wavelength

    void validate() const;
    double reexcite_cutoff_ps(const PulseTrainSpec &pulses) const { return 2.0 * pulses.pulse_fwhm_ps; }
    double tau_background_ps() const; // cavity photon lifetime Q lambda / (2 pi c)
};

struct DetectorSpec {
    double jitter_fwhm_ps = 300.0;
    double efficiency = 1.0;
    double dead_time_ns = 0.0;

    void validate() const;
};

enum class Channel : uint8_t { A, B, QD, CAV };
std::string to_string(Channel c);

struct ClickRecord {
    Channel channel = Channel::A;
    double t_ps = 0.0;
    double lambda_nm = 0.0;
};

struct ClickRecords {
    std::vector<ClickRecord> clicks; // time-sorted, dead time enforced per channel
    long n_pulses = 0;
    double rep_period_ps = 0.0;

    std::vector<double> channel_times(Channel c) const;
    long channel_count(Channel c) const;
};

struct Photon {
    double t_ps = 0.0;
    double lambda_nm = 0.0;
    long pulse = 0;
    int ordinal = 0;
};

struct PhotonList {
    std::vector<Photon> photons; // pulse-major order
    long n_pulses = 0;
    double rep_period_ps = 0.0;
};

struct DetectPolicy {
    enum class Mode { Hbt, Spectral };
    Mode mode = Mode::Hbt;
    // Hbt: optional grating filter ahead of the 50/50 splitter (width <= 0: none).
    double filter_center_nm = 0.0;
    double filter_width_nm = 0.0;
    // Spectral: disjoint windows routed to the QD / CAV detectors.
    double qd_center_nm = 0.0;
    double cav_center_nm = 0.0;
    double window_width_nm = 0.2;

    static DetectPolicy hbt() { return {}; }
    static DetectPolicy hbt_filtered(double center_nm, double width_nm);
    static DetectPolicy spectral(double qd_center_nm, double cav_center_nm, double width_nm);
};

PhotonList generate_photons(const PulseTrainSpec &pulses, const EmitterDynamics &dyn, uint64_t seed,
                            int threads = 1);

ClickRecords detect(const PhotonList &photons, const DetectorSpec &det, const DetectPolicy &policy, uint64_t seed);

// Generation + HBT detection in one call.
ClickRecords simulate_emission(const PulseTrainSpec &pulses, const EmitterDynamics &dyn, const DetectorSpec &det,
                               uint64_t seed, int threads = 1);

ClickRecords spectral_filter(const ClickRecords &records, double center_nm, double width_nm);

struct CorrelationHistogram {
    double bin_width_ps = 0.0;
    double window_ps = 0.0;    // covers [-window, +window]
    std::vector<long> counts;  // centered bins, bin centers at m * bin_width
    long n_pulses = 0;
    double rep_period_ps = 0.0;

    double bin_center_ps(size_t i) const;
    long total() const;
};

CorrelationHistogram hbt_correlate(const ClickRecords &records, double bin_width_ps, double window_ps);

CorrelationHistogram cross_correlate(const ClickRecords &clicks_qd, const ClickRecords &clicks_cav,
                                     double bin_width_ps, double window_ps);

struct G2Result {
    double g2_zero = 0.0;
    double central_area = 0.0;
    double side_area_mean = 0.0;
    int n_side_peaks = 0;
    double statistical_error = 0.0;
};

G2Result g2_zero(const CorrelationHistogram &hist, double rep_rate_hz);

void write_clicks_csv(const std::string &path, const ClickRecords &records,
                      const std::vector<std::pair<std::string, std::string>> &extra_header = {});
void write_histogram_csv(const std::string &path, const CorrelationHistogram &hist,
                         const std::vector<std::pair<std::string, std::string>> &extra_header = {});

} // namespace pcsim
