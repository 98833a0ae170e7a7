#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "qsync/correlation.hpp"
#include "qsync/rng.hpp"

using namespace qsync;

namespace {

// Independent O(n^2) oracle; same binning contract, separate arithmetic.
std::vector<std::uint64_t> brute_force_bins(const TagStream& a, const TagStream& b,
                                            picoseconds tau, picoseconds bw) {
    const std::size_t n_bins = static_cast<std::size_t>((2 * tau + bw - 1) / bw);
    std::vector<std::uint64_t> counts(n_bins, 0);
    for (picoseconds ta : a) {
        for (picoseconds tb : b) {
            const picoseconds dt = tb - ta;
            if (dt < -tau || dt > tau) continue;
            std::size_t k = static_cast<std::size_t>((dt + tau) / bw);
            if (k >= n_bins) k = n_bins - 1;
            ++counts[k];
        }
    }
    return counts;
}

TagStream random_sorted_stream(Rng& rng, std::size_t max_len, picoseconds span) {
    TagStream s(rng.uniform_int(max_len + 1));
    for (auto& t : s) t = static_cast<picoseconds>(rng.uniform_int(span));
    std::sort(s.begin(), s.end());
    return s;
}

// Photon-pair-like correlated streams: shared Poisson emissions, per-arm
// jitter, arm B shifted by offset_of(t_emit).
struct CorrelatedStreams {
    TagStream a, b;
};

template <typename OffsetFn>
CorrelatedStreams make_correlated(double rate_hz, double duration_s,
                                  double jitter_sigma_ps, OffsetFn offset_of,
                                  std::uint64_t seed) {
    Rng rng(seed);
    CorrelatedStreams out;
    const double gap = kPsPerSecond / rate_hz;
    const double end = duration_s * kPsPerSecond;
    for (double t = rng.exponential(gap); t < end; t += rng.exponential(gap)) {
        out.a.push_back(static_cast<picoseconds>(t + rng.normal(jitter_sigma_ps)));
        out.b.push_back(
            static_cast<picoseconds>(t + rng.normal(jitter_sigma_ps) + offset_of(t)));
    }
    std::sort(out.a.begin(), out.a.end());
    std::sort(out.b.begin(), out.b.end());
    return out;
}

TagStream poisson_stream(double rate_hz, double duration_s, std::uint64_t seed) {
    Rng rng(seed);
    TagStream s;
    const double gap = kPsPerSecond / rate_hz;
    const double end = duration_s * kPsPerSecond;
    for (double t = rng.exponential(gap); t < end; t += rng.exponential(gap)) {
        s.push_back(static_cast<picoseconds>(t));
    }
    return s;
}

HistogramParams default_params() {
    HistogramParams p;
    p.tau_window_ps = 500'000;
    p.bin_width_ps = 32;
    p.segment_duration_s = 1.0;
    return p;
}

}  // namespace

TEST_CASE("single pair lands in the bin containing its time difference") {
    TagStream a = {1000};
    TagStream b = {1500};
    HistogramParams p;
    p.tau_window_ps = 1000;
    p.bin_width_ps = 100;
    const CorrelationHistogram h = coincidence_histogram(a, b, p);
    std::uint64_t total = 0;
    for (auto c : h.counts) total += c;
    CHECK(total == 1);
    const int k = static_cast<int>((500 + 1000) / 100);
    CHECK(h.counts[k] == 1);
    CHECK(h.bin_center_ps(k) == doctest::Approx(550.0));
}

TEST_CASE("two-pointer histogram matches the brute-force oracle") {
    Rng rng(2024);
    for (int trial = 0; trial < 250; ++trial) {
        const TagStream a = random_sorted_stream(rng, 200, 50'000);
        const TagStream b = random_sorted_stream(rng, 200, 50'000);
        HistogramParams p;
        p.bin_width_ps = static_cast<picoseconds>(1 + rng.uniform_int(200));
        p.tau_window_ps = p.bin_width_ps * static_cast<picoseconds>(10 + rng.uniform_int(50));
        const auto oracle = brute_force_bins(a, b, p.tau_window_ps, p.bin_width_ps);
        CHECK(coincidence_histogram(a, b, p).counts == oracle);
        CHECK(coincidence_histogram_serial(a, b, p).counts == oracle);
    }
}

TEST_CASE("openmp and serial kernels agree on a large stream") {
    const TagStream a = poisson_stream(5e4, 2.0, 1);
    const TagStream b = poisson_stream(5e4, 2.0, 2);
    HistogramParams p = default_params();
    p.segment_duration_s = 2.0;
    CHECK(coincidence_histogram(a, b, p).counts ==
          coincidence_histogram_serial(a, b, p).counts);
}

TEST_CASE("self-correlation is symmetric with a spike at zero") {
    // Tags on a coarse grid with tau_window chosen so no time difference can
    // land on a bin edge; the mirror symmetry is then exact bin for bin.
    Rng rng(5);
    TagStream a;
    picoseconds t = 0;
    for (int i = 0; i < 3000; ++i) {
        t += 10 * static_cast<picoseconds>(1 + rng.uniform_int(30));
        a.push_back(t);
    }
    HistogramParams p;
    p.bin_width_ps = 10;
    p.tau_window_ps = 105;  // edges at 5 mod 10, differences at 0 mod 10
    const CorrelationHistogram h = coincidence_histogram(a, a, p);
    const int n = h.n_bins();
    REQUIRE(n == 21);
    std::uint64_t max_count = 0;
    int argmax = 0;
    for (int k = 0; k < n; ++k) {
        CHECK(h.counts[k] == h.counts[n - 1 - k]);
        if (h.counts[k] > max_count) {
            max_count = h.counts[k];
            argmax = k;
        }
    }
    // the self-pair delta sits in the bin containing zero
    CHECK(argmax == n / 2);
    CHECK(h.counts[argmax] >= a.size());
}

TEST_CASE("unsorted input is rejected") {
    TagStream a = {100, 50};
    TagStream b = {0};
    CHECK_THROWS(coincidence_histogram(a, b, default_params()));
    CHECK_THROWS(coincidence_histogram(b, a, default_params()));
}

TEST_CASE("empty input yields an all-zero histogram") {
    TagStream a;
    TagStream b = {100};
    const CorrelationHistogram h = coincidence_histogram(a, b, default_params());
    for (auto c : h.counts) CHECK(c == 0);
}

TEST_CASE("g2 of independent Poisson streams averages to one") {
    const TagStream a = poisson_stream(1e4, 10.0, 31);
    const TagStream b = poisson_stream(1e4, 10.0, 32);
    HistogramParams p = default_params();
    p.segment_duration_s = 10.0;
    const CorrelationHistogram h = coincidence_histogram(a, b, p);
    const auto g2 = g2_normalize(h);
    REQUIRE(g2.has_value());
    double mean = 0.0;
    for (double v : *g2) mean += v;
    mean /= static_cast<double>(g2->size());
    CHECK(mean == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("g2 of an empty bin is zero and empty singles flag invalid") {
    CorrelationHistogram h;
    h.tau_window_ps = 1000;
    h.bin_width_ps = 100;
    h.counts.assign(20, 0);
    h.counts[3] = 5;
    h.n_a = 100;
    h.n_b = 100;
    h.duration_s = 1.0;
    const auto g2 = g2_normalize(h);
    REQUIRE(g2.has_value());
    CHECK((*g2)[0] == 0.0);
    CHECK((*g2)[3] > 0.0);

    h.n_a = 0;
    CHECK(!g2_normalize(h).has_value());
    h.n_a = 100;
    h.duration_s = 0.0;
    CHECK(!g2_normalize(h).has_value());
}

TEST_CASE("correlated simulation has a peak far above the accidental floor") {
    const auto streams = make_correlated(1e5, 1.0, 63.7, [](double) { return 2000.0; }, 8);
    HistogramParams p = default_params();
    const CorrelationHistogram h = coincidence_histogram(streams.a, streams.b, p);
    const auto g2 = g2_normalize(h);
    REQUIRE(g2.has_value());
    const auto peak = find_peak(h, 5.0);
    REQUIRE(peak.has_value());
    CHECK((*g2)[*peak] > 100.0);
    // far wings stay at the accidental level
    double wing_mean = 0.0;
    int wing_n = 0;
    for (int k = 0; k < h.n_bins() / 8; ++k, ++wing_n) wing_mean += (*g2)[k];
    wing_mean /= wing_n;
    CHECK(wing_mean == doctest::Approx(1.0).epsilon(0.2));
}

TEST_CASE("flat accidentals yield no peak") {
    const TagStream a = poisson_stream(1e4, 2.0, 41);
    const TagStream b = poisson_stream(1e4, 2.0, 42);
    HistogramParams p = default_params();
    p.segment_duration_s = 2.0;
    const CorrelationHistogram h = coincidence_histogram(a, b, p);
    CHECK(!find_peak(h, 5.0).has_value());
}

TEST_CASE("injected delay is found by the argmax rule") {
    const auto streams = make_correlated(1e5, 1.0, 63.7, [](double) { return 25191.0; }, 9);
    HistogramParams p = default_params();
    const CorrelationHistogram h = coincidence_histogram(streams.a, streams.b, p);
    const auto peak = find_peak(h, 5.0);
    REQUIRE(peak.has_value());
    CHECK(std::abs(h.bin_center_ps(*peak) - 25191.0) <=
          static_cast<double>(p.bin_width_ps));
}

TEST_CASE("peak ties break toward the smaller absolute delay") {
    CorrelationHistogram h;
    h.tau_window_ps = 1000;
    h.bin_width_ps = 100;
    h.counts.assign(20, 1);
    h.n_a = h.n_b = 100;
    h.duration_s = 1.0;
    // centers: bin 4 -> -550, bin 14 -> +450
    h.counts[4] = 50;
    h.counts[14] = 50;
    const auto peak = find_peak(h, 3.0);
    REQUIRE(peak.has_value());
    CHECK(*peak == 14);
}

TEST_CASE("candidate search returns distinct well-separated peaks") {
    auto streams = make_correlated(1e5, 1.0, 63.7, [](double) { return -4000.0; }, 10);
    // plant a second, weaker coincidence cluster at +10 ns
    Rng rng(55);
    const double end = 1.0 * kPsPerSecond;
    for (int i = 0; i < 400; ++i) {
        const auto t = static_cast<picoseconds>(rng.uniform(0.0, end));
        streams.a.push_back(t);
        streams.b.push_back(t + 10'000);
    }
    std::sort(streams.a.begin(), streams.a.end());
    std::sort(streams.b.begin(), streams.b.end());

    HistogramParams p = default_params();
    const CorrelationHistogram h = coincidence_histogram(streams.a, streams.b, p);
    const auto cands = find_peak_candidates(h, 5.0, 3);
    REQUIRE(cands.size() >= 2);
    CHECK(std::abs(h.bin_center_ps(cands[0]) + 4000.0) <= 32.0);
    bool found_secondary = false;
    for (std::size_t i = 1; i < cands.size(); ++i) {
        CHECK(std::abs(cands[i] - cands[0]) > 31);
        if (std::abs(h.bin_center_ps(cands[i]) - 10'000.0) <= 32.0) found_secondary = true;
    }
    CHECK(found_secondary);
}

TEST_CASE("fit recovers a noiseless synthetic gaussian") {
    CorrelationHistogram h;
    h.tau_window_ps = 10'000;
    h.bin_width_ps = 32;
    h.n_a = h.n_b = 1000;
    h.duration_s = 1.0;
    const int n = static_cast<int>((2 * h.tau_window_ps + h.bin_width_ps - 1) /
                                   h.bin_width_ps);
    h.counts.assign(n, 0);
    const double center = 500.0, sigma = 100.0, amplitude = 1000.0;
    for (int k = 0; k < n; ++k) {
        const double x = h.bin_center_ps(k);
        h.counts[k] = static_cast<std::uint64_t>(
            std::llround(amplitude * std::exp(-0.5 * (x - center) * (x - center) /
                                              (sigma * sigma))));
    }
    int argmax = 0;
    for (int k = 0; k < n; ++k) {
        if (h.counts[k] > h.counts[argmax]) argmax = k;
    }
    const PeakEstimate est = fit_peak(h, argmax);
    REQUIRE(est.valid);
    CHECK(std::abs(est.tau_hat_ps - center) < 0.1);
    CHECK(est.sigma_fit_ps == doctest::Approx(sigma).epsilon(0.01));
    CHECK(est.amplitude == doctest::Approx(amplitude).epsilon(0.02));
    CHECK(std::abs(est.baseline) < 1.0);
}

TEST_CASE("symmetric histogram fits to zero center") {
    CorrelationHistogram h;
    h.tau_window_ps = 5'000;
    h.bin_width_ps = 50;
    h.n_a = h.n_b = 1000;
    h.duration_s = 1.0;
    const int n = static_cast<int>((2 * h.tau_window_ps + h.bin_width_ps - 1) /
                                   h.bin_width_ps);
    h.counts.assign(n, 0);
    for (int k = 0; k < n; ++k) {
        const double x = h.bin_center_ps(k);
        h.counts[k] = static_cast<std::uint64_t>(
            std::llround(500.0 * std::exp(-0.5 * x * x / (200.0 * 200.0))));
    }
    const PeakEstimate est = fit_peak(h, n / 2);
    REQUIRE(est.valid);
    CHECK(std::abs(est.tau_hat_ps) <= est.center_se_ps + 0.1);
}

TEST_CASE("two independent 150 ps FWHM jitters convolve to ~90 ps sigma") {
    const double arm_sigma = 150.0 / 2.3548;
    const auto streams =
        make_correlated(2e5, 1.0, arm_sigma, [](double) { return 0.0; }, 12);
    HistogramParams p = default_params();
    const CorrelationHistogram h = coincidence_histogram(streams.a, streams.b, p);
    const auto peak = find_peak(h, 5.0);
    REQUIRE(peak.has_value());
    const PeakEstimate est = fit_peak(h, *peak);
    REQUIRE(est.valid);
    CHECK(est.sigma_fit_ps == doctest::Approx(arm_sigma * std::sqrt(2.0)).epsilon(0.10));
}

TEST_CASE("adding a constant to stream B shifts the fitted center by that constant") {
    const auto streams = make_correlated(2e5, 1.0, 100.0, [](double) { return 0.0; }, 13);
    HistogramParams p = default_params();

    const CorrelationHistogram h0 = coincidence_histogram(streams.a, streams.b, p);
    const auto peak0 = find_peak(h0, 5.0);
    REQUIRE(peak0.has_value());
    const PeakEstimate base = fit_peak(h0, *peak0);
    REQUIRE(base.valid);

    for (picoseconds c : {picoseconds{320}, picoseconds{777}}) {
        TagStream shifted = streams.b;
        for (auto& t : shifted) t += c;
        const CorrelationHistogram h1 = coincidence_histogram(streams.a, shifted, p);
        const auto peak1 = find_peak(h1, 5.0);
        REQUIRE(peak1.has_value());
        const PeakEstimate moved = fit_peak(h1, *peak1);
        REQUIRE(moved.valid);
        CHECK(std::abs(moved.tau_hat_ps - base.tau_hat_ps - static_cast<double>(c)) < 0.1);
    }
}

TEST_CASE("measure_offsets emits one estimate per segment") {
    const auto streams = make_correlated(2e4, 5.0, 100.0, [](double) { return 1000.0; }, 14);
    HistogramParams p = default_params();
    const auto est = measure_offsets(streams.a, streams.b, p);
    CHECK(est.size() == 5);
    for (std::size_t s = 0; s < est.size(); ++s) {
        CHECK(est[s].timestamp_s == doctest::Approx(0.5 + s));
        CHECK(est[s].valid);
    }
}

TEST_CASE("constant offset gives centers consistent with their quoted errors") {
    const auto streams =
        make_correlated(1e5, 10.0, 100.0, [](double) { return 25191.0; }, 15);
    HistogramParams p = default_params();
    const auto est = measure_offsets(streams.a, streams.b, p);
    REQUIRE(est.size() == 10);
    double mean = 0.0;
    int n = 0;
    for (const auto& e : est) {
        REQUIRE(e.valid);
        mean += e.tau_hat_ps;
        ++n;
    }
    mean /= n;
    double chi2 = 0.0;
    for (const auto& e : est) {
        chi2 += (e.tau_hat_ps - mean) * (e.tau_hat_ps - mean) /
                (e.center_se_ps * e.center_se_ps);
    }
    // chi2 with 9 dof: 99.8% interval roughly [1.2, 27]
    CHECK(chi2 > 1.2);
    CHECK(chi2 < 27.0);
}

TEST_CASE("injected skew appears as a 500 ps/s drift of the centers") {
    const double skew = 5e-10;
    const auto streams = make_correlated(
        1e5, 10.0, 100.0, [&](double t_ps) { return skew * t_ps; }, 16);
    HistogramParams p = default_params();
    const auto est = measure_offsets(streams.a, streams.b, p);
    REQUIRE(est.size() == 10);

    // weighted least-squares slope oracle
    double sw = 0, swx = 0, swy = 0, swxx = 0, swxy = 0;
    for (const auto& e : est) {
        REQUIRE(e.valid);
        const double w = 1.0 / (e.center_se_ps * e.center_se_ps);
        sw += w;
        swx += w * e.timestamp_s;
        swy += w * e.tau_hat_ps;
        swxx += w * e.timestamp_s * e.timestamp_s;
        swxy += w * e.timestamp_s * e.tau_hat_ps;
    }
    const double denom = sw * swxx - swx * swx;
    const double slope = (sw * swxy - swx * swy) / denom;
    const double slope_se = std::sqrt(sw / denom);
    CHECK(std::abs(slope - 500.0) < 3.0 * slope_se);
}

TEST_CASE("quadrupling the segment duration halves the median center error") {
    const auto streams = make_correlated(4e4, 8.0, 100.0, [](double) { return 0.0; }, 17);
    HistogramParams p1 = default_params();
    p1.segment_duration_s = 1.0;
    HistogramParams p4 = default_params();
    p4.segment_duration_s = 4.0;

    auto median_se = [](const std::vector<PeakEstimate>& est) {
        std::vector<double> se;
        for (const auto& e : est) {
            if (e.valid) se.push_back(e.center_se_ps);
        }
        REQUIRE(!se.empty());
        std::sort(se.begin(), se.end());
        return se[se.size() / 2];
    };
    const double se1 = median_se(measure_offsets(streams.a, streams.b, p1));
    const double se4 = median_se(measure_offsets(streams.a, streams.b, p4));
    CHECK(se1 / se4 == doctest::Approx(2.0).epsilon(0.2));
}

TEST_CASE("parameter validation") {
    HistogramParams p;
    p.bin_width_ps = 0;
    CHECK_THROWS(p.validate());
    p = HistogramParams{};
    p.tau_window_ps = p.bin_width_ps * 5;
    CHECK_THROWS(p.validate());
    p = HistogramParams{};
    p.segment_duration_s = 0.0;
    CHECK_THROWS(p.validate());
}
