#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "pcsim/errors.hpp"
#include "pcsim/photonstats.hpp"
#include "pcsim/units.hpp"

#include "oracles.hpp"

using namespace pcsim;

namespace {

PulseTrainSpec pulses(long n) {
    PulseTrainSpec p;
    p.n_pulses = n;
    return p;
}

EmitterDynamics ideal_emitter() {
    EmitterDynamics dyn;
    dyn.tau_ps = 45.0;
    dyn.p_excite = 1.0;
    dyn.p_reexcite = 0.0;
    dyn.background_mean = 0.0;
    dyn.cavity_feeding = 0.0;
    return dyn;
}

DetectorSpec perfect_detector() {
    DetectorSpec det;
    det.jitter_fwhm_ps = 0.0;
    det.efficiency = 1.0;
    det.dead_time_ns = 0.0;
    return det;
}

ClickRecords manual_records(const std::vector<ClickRecord> &clicks, long n_pulses = 0, double rep = 0.0) {
    ClickRecords r;
    r.clicks = clicks;
    r.n_pulses = n_pulses;
    r.rep_period_ps = rep;
    return r;
}

} // namespace

TEST_CASE("simulate_emission: ideal emitter produces one click per pulse, split evenly") {
    const long n = 20000;
    ClickRecords records = simulate_emission(pulses(n), ideal_emitter(), perfect_detector(), 11);
    CHECK(static_cast<long>(records.clicks.size()) == n);
    const double frac_a = static_cast<double>(records.channel_count(Channel::A)) / n;
    CHECK(std::abs(frac_a - 0.5) < 3.0 * 0.5 / std::sqrt(static_cast<double>(n)));
    // One click per pulse: delays within a pulse period of the pulse time.
    for (size_t i = 1; i < records.clicks.size(); ++i) {
        CHECK(records.clicks[i].t_ps >= records.clicks[i - 1].t_ps);
    }
}

TEST_CASE("simulate_emission: Poisson background thins to Poisson counts") {
    const long n = 50000;
    EmitterDynamics dyn = ideal_emitter();
    dyn.p_excite = 0.0;
    dyn.background_mean = 0.3;
    DetectorSpec det = perfect_detector();
    det.efficiency = 0.6;
    ClickRecords records = simulate_emission(pulses(n), dyn, det, 5);

    // Per-pulse counts across both arms ~ Poisson(0.18) by thinning.
    const double period = pulses(n).rep_period_ps();
    std::vector<int> counts(n, 0);
    for (const auto &c : records.clicks) {
        const long k = static_cast<long>(std::floor(c.t_ps / period));
        if (k >= 0 && k < n) {
            ++counts[k];
        }
    }
    const double mu = 0.3 * 0.6;
    double mean = 0.0;
    for (int c : counts) {
        mean += c;
    }
    mean /= n;
    double var = 0.0;
    for (int c : counts) {
        var += (c - mean) * (c - mean);
    }
    var /= (n - 1);
    CHECK(std::abs(mean - mu) < 3.0 * std::sqrt(mu / n));
    CHECK(var / mean == doctest::Approx(1.0).epsilon(0.05)); // Fano factor of a Poisson process

    // Frequency of k = 0,1,2 against the Poisson pmf.
    std::map<int, long> freq;
    for (int c : counts) {
        ++freq[c];
    }
    for (int k = 0; k <= 2; ++k) {
        const double pmf = std::exp(-mu) * std::pow(mu, k) / std::tgamma(k + 1.0);
        const double observed = static_cast<double>(freq[k]) / n;
        CHECK(std::abs(observed - pmf) < 4.0 * std::sqrt(pmf * (1.0 - pmf) / n));
    }
}

TEST_CASE("simulate_emission: deterministic for a fixed seed, across worker counts") {
    const PulseTrainSpec p = pulses(20000);
    EmitterDynamics dyn = ideal_emitter();
    dyn.p_reexcite = 0.2;
    dyn.background_mean = 0.05;
    dyn.cavity_feeding = 0.1;
    DetectorSpec det;
    det.efficiency = 0.4;

    PhotonList ph1 = generate_photons(p, dyn, 123, 1);
    PhotonList ph4 = generate_photons(p, dyn, 123, 4);
    REQUIRE(ph1.photons.size() == ph4.photons.size());
    for (size_t i = 0; i < ph1.photons.size(); ++i) {
        CHECK(ph1.photons[i].t_ps == ph4.photons[i].t_ps);
        CHECK(ph1.photons[i].lambda_nm == ph4.photons[i].lambda_nm);
    }

    ClickRecords r1 = detect(ph1, det, DetectPolicy::hbt(), 123);
    ClickRecords r4 = detect(ph4, det, DetectPolicy::hbt(), 123);
    REQUIRE(r1.clicks.size() == r4.clicks.size());
    for (size_t i = 0; i < r1.clicks.size(); ++i) {
        CHECK(r1.clicks[i].t_ps == r4.clicks[i].t_ps);
        CHECK(r1.clicks[i].channel == r4.clicks[i].channel);
    }

    ClickRecords other_seed = detect(generate_photons(p, dyn, 124, 1), det, DetectPolicy::hbt(), 124);
    CHECK(other_seed.clicks.size() != r1.clicks.size());
}

TEST_CASE("simulate_emission: configuration errors") {
    EmitterDynamics dyn = ideal_emitter();
    dyn.tau_ps = 5000.0; // rep period (12.5 ns) < 5 tau
    CHECK_THROWS_AS(simulate_emission(pulses(100), dyn, perfect_detector(), 1), ConfigError);

    EmitterDynamics bad = ideal_emitter();
    bad.p_excite = 1.5;
    CHECK_THROWS_AS(simulate_emission(pulses(100), bad, perfect_detector(), 1), ConfigError);

    DetectorSpec det = perfect_detector();
    det.efficiency = 0.0;
    CHECK_THROWS_AS(simulate_emission(pulses(100), ideal_emitter(), det, 1), ConfigError);
}

TEST_CASE("detect: dead time is respected per channel") {
    EmitterDynamics dyn = ideal_emitter();
    dyn.background_mean = 0.5;
    DetectorSpec det = perfect_detector();
    det.dead_time_ns = 20.0;
    ClickRecords records = simulate_emission(pulses(20000), dyn, det, 3);
    std::map<Channel, double> last;
    for (const auto &c : records.clicks) {
        auto it = last.find(c.channel);
        if (it != last.end()) {
            CHECK(c.t_ps - it->second >= 20.0 * 1e3);
        }
        last[c.channel] = c.t_ps;
    }
}

TEST_CASE("hbt_correlate: coincident single clicks land in the zero-delay bin") {
    ClickRecords records = manual_records({{Channel::A, 1000.0, 920.0}, {Channel::B, 1000.0, 920.0}});
    CorrelationHistogram hist = hbt_correlate(records, 100.0, 5000.0);
    CHECK(hist.total() == 1);
    CHECK(hist.counts[hist.counts.size() / 2] == 1);

    CHECK_THROWS_AS(hbt_correlate(manual_records({{Channel::A, 0.0, 0.0}}), 100.0, 5000.0), NumericalError);
}

TEST_CASE("hbt_correlate: independent Poisson streams give a flat histogram") {
    // CW Poisson streams built directly: uniform arrivals over a long span.
    uint64_t state = 99;
    std::vector<ClickRecord> clicks;
    const double span_ps = 5e8;
    for (int i = 0; i < 40000; ++i) {
        clicks.push_back({Channel::A, span_ps * oracles::noise_u01(state), 920.0});
        clicks.push_back({Channel::B, span_ps * oracles::noise_u01(state), 920.0});
    }
    std::sort(clicks.begin(), clicks.end(), [](const ClickRecord &a, const ClickRecord &b) { return a.t_ps < b.t_ps; });
    CorrelationHistogram hist = hbt_correlate(manual_records(clicks), 2000.0, 100000.0);

    double mean = 0.0;
    for (long c : hist.counts) {
        mean += static_cast<double>(c);
    }
    mean /= hist.counts.size();
    REQUIRE(mean > 50.0);
    double chi2 = 0.0;
    for (long c : hist.counts) {
        chi2 += (c - mean) * (c - mean) / mean;
    }
    const double dof = static_cast<double>(hist.counts.size() - 1);
    CHECK(chi2 / dof > 0.7);
    CHECK(chi2 / dof < 1.4);
}

TEST_CASE("hbt_correlate: single emitter shows empty central peak and populated side peaks") {
    ClickRecords records = simulate_emission(pulses(100000), ideal_emitter(), perfect_detector(), 17);
    const double period = records.rep_period_ps;
    CorrelationHistogram hist = hbt_correlate(records, 250.0, 6.0 * period);
    long central = 0;
    long side = 0;
    for (size_t i = 0; i < hist.counts.size(); ++i) {
        const double c = hist.bin_center_ps(i);
        if (std::abs(c) < 0.5 * period) {
            central += hist.counts[i];
        } else if (std::abs(std::abs(c) - period) < 0.5 * period) {
            side += hist.counts[i];
        }
    }
    CHECK(central == 0);
    CHECK(side > 1000);
}

TEST_CASE("g2_zero: Poisson reference is 1, ideal emitter is 0, both within 3 sigma") {
    {
        EmitterDynamics dyn = ideal_emitter();
        dyn.p_excite = 0.0;
        dyn.background_mean = 0.1;
        ClickRecords records = simulate_emission(pulses(1000000), dyn, perfect_detector(), 23);
        CorrelationHistogram hist = hbt_correlate(records, 250.0, 6.0 * records.rep_period_ps);
        G2Result g2 = g2_zero(hist, 80e6);
        CHECK(std::abs(g2.g2_zero - 1.0) < 3.0 * g2.statistical_error);
    }
    {
        DetectorSpec det = perfect_detector();
        det.efficiency = 0.5;
        ClickRecords records = simulate_emission(pulses(100000), ideal_emitter(), det, 29);
        CorrelationHistogram hist = hbt_correlate(records, 250.0, 6.0 * records.rep_period_ps);
        G2Result g2 = g2_zero(hist, 80e6);
        CHECK(g2.g2_zero == 0.0);
        CHECK(g2.g2_zero < 3.0 * g2.statistical_error);
        CHECK(g2.side_area_mean >= 100.0);
    }
}

TEST_CASE("g2_zero: calibrated source reproduces the measured antibunching band") {
    PulseTrainSpec p = pulses(1000000);
    EmitterDynamics dyn;
    dyn.tau_ps = 45.0;
    dyn.p_excite = 1.0;
    dyn.p_reexcite = 0.15;
    dyn.background_mean = 0.2;
    dyn.cavity_feeding = 0.15;
    dyn.lambda_qd_nm = 919.4;
    dyn.lambda_cav_nm = 920.0;
    dyn.q_cavity = 8500.0;
    DetectorSpec det;
    det.jitter_fwhm_ps = 300.0;
    det.efficiency = 0.05;

    PhotonList photons = generate_photons(p, dyn, 7, 2);
    ClickRecords records = detect(photons, det, DetectPolicy::hbt_filtered(dyn.lambda_qd_nm, 0.2), 7);
    CorrelationHistogram hist = hbt_correlate(records, 250.0, 6.0 * p.rep_period_ps());
    G2Result g2 = g2_zero(hist, p.rep_rate_hz);

    CHECK(g2.g2_zero > 0.03);
    CHECK(g2.g2_zero < 0.06);
    CHECK(g2.statistical_error < 0.01);
}

TEST_CASE("g2_zero: windows without enough side peaks or counts are rejected") {
    CorrelationHistogram narrow;
    narrow.bin_width_ps = 250.0;
    narrow.window_ps = 3.0 * 12500.0;
    narrow.counts.assign(2 * 149 + 1, 10); // covers only three rep periods
    narrow.rep_period_ps = 12500.0;
    CHECK_THROWS_AS(g2_zero(narrow, 80e6), ConfigError);

    ClickRecords few = simulate_emission(pulses(200), ideal_emitter(), perfect_detector(), 31);
    CorrelationHistogram sparse = hbt_correlate(few, 250.0, 6.0 * few.rep_period_ps);
    CHECK_THROWS_AS(g2_zero(sparse, 80e6), NumericalError);
}

TEST_CASE("cross_correlate: same-emitter channels are anticorrelated, independent ones are not") {
    PulseTrainSpec p = pulses(400000);
    EmitterDynamics dyn;
    dyn.tau_ps = 45.0;
    dyn.p_excite = 1.0;
    dyn.p_reexcite = 0.1;
    dyn.background_mean = 0.05;
    dyn.cavity_feeding = 0.3;
    dyn.lambda_qd_nm = 919.4;
    dyn.lambda_cav_nm = 920.0;
    DetectorSpec det;
    det.jitter_fwhm_ps = 300.0;
    det.efficiency = 0.2;

    auto split = [&](uint64_t seed) {
        PhotonList photons = generate_photons(p, dyn, seed, 2);
        ClickRecords all = detect(photons, det, DetectPolicy::spectral(919.4, 920.0, 0.2), seed);
        ClickRecords qd = manual_records({}, all.n_pulses, all.rep_period_ps);
        ClickRecords cav = manual_records({}, all.n_pulses, all.rep_period_ps);
        for (const auto &c : all.clicks) {
            (c.channel == Channel::QD ? qd : cav).clicks.push_back(c);
        }
        return std::make_pair(qd, cav);
    };

    auto [qd, cav] = split(41);
    REQUIRE(!qd.clicks.empty());
    REQUIRE(!cav.clicks.empty());
    CorrelationHistogram hist = cross_correlate(qd, cav, 250.0, 6.0 * p.rep_period_ps());
    G2Result g2 = g2_zero(hist, p.rep_rate_hz);
    CHECK(g2.g2_zero < 0.5); // central-peak suppression

    // Channels from independent emitters: QD stream of one run against the
    // cavity stream of a different-seed run.
    auto [qd2, cav2] = split(43);
    CorrelationHistogram flat = cross_correlate(qd, cav2, 250.0, 6.0 * p.rep_period_ps());
    G2Result g2_flat = g2_zero(flat, p.rep_rate_hz);
    CHECK(std::abs(g2_flat.g2_zero - 1.0) < 3.0 * g2_flat.statistical_error);

    CHECK_THROWS_AS(cross_correlate(manual_records({}), cav, 250.0, 6.0 * p.rep_period_ps()), NumericalError);
}

TEST_CASE("spectral_filter: identity, disjoint, and background-weight reduction") {
    PulseTrainSpec p = pulses(200000);
    EmitterDynamics dyn;
    dyn.tau_ps = 45.0;
    dyn.p_excite = 0.5;
    dyn.background_mean = 0.5;
    dyn.lambda_qd_nm = 919.4;
    dyn.lambda_cav_nm = 920.0;
    dyn.q_cavity = 8500.0;
    ClickRecords records = simulate_emission(p, dyn, perfect_detector(), 57);

    ClickRecords all = spectral_filter(records, 920.0, 1e9);
    CHECK(all.clicks.size() == records.clicks.size());
    CHECK(spectral_filter(records, 500.0, 0.2).clicks.empty());

    // A 0.2 nm window on the QD line admits background by its in-band
    // Lorentzian weight: direct integration of the Cauchy density.
    const double fwhm = dyn.lambda_cav_nm / dyn.q_cavity;
    auto cauchy_cdf = [&](double lam) {
        return 0.5 + std::atan(2.0 * (lam - dyn.lambda_cav_nm) / fwhm) / kPi;
    };
    const double width = 0.2;
    const double in_band = cauchy_cdf(dyn.lambda_qd_nm + width / 2) - cauchy_cdf(dyn.lambda_qd_nm - width / 2);

    long bg_total = 0;
    long bg_in_band = 0;
    for (const auto &c : records.clicks) {
        if (c.lambda_nm != dyn.lambda_qd_nm) { // background photons carry Lorentzian tags
            ++bg_total;
            if (std::abs(c.lambda_nm - dyn.lambda_qd_nm) <= width / 2) {
                ++bg_in_band;
            }
        }
    }
    REQUIRE(bg_total > 10000);
    const double observed = static_cast<double>(bg_in_band) / bg_total;
    CHECK(std::abs(observed - in_band) < 4.0 * std::sqrt(in_band * (1.0 - in_band) / bg_total));
}

TEST_CASE("g2 statistical error scales as 1/sqrt(n_pulses)") {
    EmitterDynamics dyn = ideal_emitter();
    dyn.p_reexcite = 0.2;
    dyn.background_mean = 0.05;
    DetectorSpec det;
    det.efficiency = 0.3;
    std::vector<double> errors;
    std::vector<long> ns = {10000, 40000, 160000, 640000};
    for (long n : ns) {
        ClickRecords records = simulate_emission(pulses(n), dyn, det, 71);
        CorrelationHistogram hist = hbt_correlate(records, 250.0, 6.0 * records.rep_period_ps);
        errors.push_back(g2_zero(hist, 80e6).statistical_error);
    }
    for (size_t i = 1; i < ns.size(); ++i) {
        const double scaled = errors[i] * std::sqrt(static_cast<double>(ns[i]));
        const double base = errors[0] * std::sqrt(static_cast<double>(ns[0]));
        CHECK(scaled == doctest::Approx(base).epsilon(0.25));
    }
}

TEST_CASE("side peaks are equal within counting error; jitter moves no area") {
    EmitterDynamics dyn = ideal_emitter();
    dyn.background_mean = 0.02;
    DetectorSpec det;
    det.efficiency = 0.3;
    det.jitter_fwhm_ps = 0.0;
    PulseTrainSpec p = pulses(400000);

    auto peak_areas = [&](const CorrelationHistogram &hist) {
        // Complete side peaks only; the outermost period is clipped by the window.
        std::map<long, double> areas;
        for (size_t i = 0; i < hist.counts.size(); ++i) {
            const double c = hist.bin_center_ps(i);
            const long m = static_cast<long>(std::llround(c / hist.rep_period_ps));
            if (m != 0 && std::abs(m) <= 5 && std::abs(c - m * hist.rep_period_ps) <= 0.5 * hist.rep_period_ps) {
                areas[m] += static_cast<double>(hist.counts[i]);
            }
        }
        return areas;
    };

    PhotonList photons = generate_photons(p, dyn, 83, 2);
    ClickRecords no_jitter = detect(photons, det, DetectPolicy::hbt(), 83);
    CorrelationHistogram h0 = hbt_correlate(no_jitter, 250.0, 6.0 * p.rep_period_ps());
    auto areas = peak_areas(h0);
    double mean = 0.0;
    for (const auto &[m, area] : areas) {
        mean += area;
    }
    mean /= areas.size();
    for (const auto &[m, area] : areas) {
        CHECK(std::abs(area - mean) < 4.0 * std::sqrt(mean));
    }

    det.jitter_fwhm_ps = 300.0;
    ClickRecords jitter = detect(photons, det, DetectPolicy::hbt(), 83);
    CorrelationHistogram h1 = hbt_correlate(jitter, 250.0, 6.0 * p.rep_period_ps());
    G2Result g0 = g2_zero(h0, p.rep_rate_hz);
    G2Result g1 = g2_zero(h1, p.rep_rate_hz);
    CHECK(std::abs(g1.side_area_mean - g0.side_area_mean) <= 3.0 * std::sqrt(g0.side_area_mean));
    CHECK(std::abs(g1.g2_zero - g0.g2_zero) <= std::max(g0.statistical_error, 1e-12));
    // Bit-identical histograms for a fixed seed.
    CorrelationHistogram h1b = hbt_correlate(detect(photons, det, DetectPolicy::hbt(), 83), 250.0,
                                             6.0 * p.rep_period_ps());
    CHECK(h1.counts == h1b.counts);
}
