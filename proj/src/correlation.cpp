#include "qsync/correlation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "qsync/gauss_fit.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace qsync {

void HistogramParams::validate() const {
    if (bin_width_ps < 1) throw std::invalid_argument("bin_width_ps must be >= 1");
    if (tau_window_ps < 10 * bin_width_ps) {
        throw std::invalid_argument("tau_window_ps must be >= 10 * bin_width_ps");
    }
    if (!(segment_duration_s > 0.0)) {
        throw std::invalid_argument("segment_duration must be > 0");
    }
    if (!(peak_significance > 0.0)) {
        throw std::invalid_argument("peak_significance must be > 0");
    }
}

namespace {

void require_sorted(std::span<const picoseconds> s, const char* name) {
    for (std::size_t i = 1; i < s.size(); ++i) {
        if (s[i] < s[i - 1]) {
            throw std::invalid_argument(std::string("unsorted stream: ") + name);
        }
    }
}

// Shared sweep kernel: accumulates pairs from a_range of stream A into bins.
void sweep_range(std::span<const picoseconds> a, std::span<const picoseconds> b,
                 std::size_t a_begin, std::size_t a_end, picoseconds tau,
                 picoseconds bin_width, int n_bins, std::uint64_t* bins) {
    if (a_begin >= a_end || b.empty()) return;
    std::size_t lo = std::lower_bound(b.begin(), b.end(), a[a_begin] - tau) - b.begin();
    for (std::size_t i = a_begin; i < a_end; ++i) {
        const picoseconds ai = a[i];
        while (lo < b.size() && b[lo] < ai - tau) ++lo;
        for (std::size_t j = lo; j < b.size() && b[j] - ai <= tau; ++j) {
            const picoseconds dt = b[j] - ai;
            int k = static_cast<int>((dt + tau) / bin_width);
            if (k >= n_bins) k = n_bins - 1;
            ++bins[k];
        }
    }
}

CorrelationHistogram make_histogram(std::span<const picoseconds> a,
                                    std::span<const picoseconds> b,
                                    const HistogramParams& p) {
    CorrelationHistogram h;
    h.tau_window_ps = p.tau_window_ps;
    h.bin_width_ps = p.bin_width_ps;
    h.counts.assign(static_cast<std::size_t>(p.n_bins()), 0);
    h.n_a = a.size();
    h.n_b = b.size();
    h.duration_s = p.segment_duration_s;
    return h;
}

}  // namespace

CorrelationHistogram coincidence_histogram_serial(std::span<const picoseconds> a,
                                                  std::span<const picoseconds> b,
                                                  const HistogramParams& p) {
    p.validate();
    require_sorted(a, "A");
    require_sorted(b, "B");
    CorrelationHistogram h = make_histogram(a, b, p);
    sweep_range(a, b, 0, a.size(), p.tau_window_ps, p.bin_width_ps, h.n_bins(),
                h.counts.data());
    return h;
}

CorrelationHistogram coincidence_histogram(std::span<const picoseconds> a,
                                           std::span<const picoseconds> b,
                                           const HistogramParams& p) {
    p.validate();
    require_sorted(a, "A");
    require_sorted(b, "B");
    CorrelationHistogram h = make_histogram(a, b, p);
    const int n_bins = h.n_bins();

#ifdef _OPENMP
    const std::size_t min_parallel = 1 << 15;
    if (a.size() >= min_parallel && !omp_in_parallel()) {
#pragma omp parallel
        {
            std::vector<std::uint64_t> local(static_cast<std::size_t>(n_bins), 0);
            const int nt = omp_get_num_threads();
            const int tid = omp_get_thread_num();
            const std::size_t chunk = (a.size() + nt - 1) / nt;
            const std::size_t begin = std::min(a.size(), chunk * tid);
            const std::size_t end = std::min(a.size(), begin + chunk);
            sweep_range(a, b, begin, end, p.tau_window_ps, p.bin_width_ps, n_bins,
                        local.data());
#pragma omp critical
            for (int k = 0; k < n_bins; ++k) h.counts[k] += local[k];
        }
        return h;
    }
#endif
    sweep_range(a, b, 0, a.size(), p.tau_window_ps, p.bin_width_ps, n_bins,
                h.counts.data());
    return h;
}

std::optional<std::vector<double>> g2_normalize(const CorrelationHistogram& h) {
    if (h.n_a == 0 || h.n_b == 0 || !(h.duration_s > 0.0)) return std::nullopt;
    // C_k / (R_A R_B T dtau) with R = N / T reduces to C_k T / (N_A N_B dtau).
    const double t_ps = h.duration_s * kPsPerSecond;
    const double norm = t_ps / (static_cast<double>(h.n_a) * static_cast<double>(h.n_b) *
                                static_cast<double>(h.bin_width_ps));
    std::vector<double> g2(h.counts.size());
    for (std::size_t k = 0; k < h.counts.size(); ++k) {
        g2[k] = static_cast<double>(h.counts[k]) * norm;
    }
    return g2;
}

namespace {

struct Baseline {
    double mean = 0.0;
    double variance = 1.0;  // Poisson: var == mean, floored at 1
};

Baseline wing_baseline(const CorrelationHistogram& h) {
    const int n = h.n_bins();
    const int wing = std::max(1, n / 4);
    double sum = 0.0;
    int count = 0;
    for (int k = 0; k < wing; ++k, ++count) sum += static_cast<double>(h.counts[k]);
    for (int k = n - wing; k < n; ++k, ++count) sum += static_cast<double>(h.counts[k]);
    Baseline b;
    b.mean = count > 0 ? sum / count : 0.0;
    b.variance = std::max(b.mean, 1.0);
    return b;
}

bool better_peak(const CorrelationHistogram& h, int cand, int best) {
    if (h.counts[cand] != h.counts[best]) return h.counts[cand] > h.counts[best];
    return std::abs(h.bin_center_ps(cand)) < std::abs(h.bin_center_ps(best));
}

}  // namespace

std::optional<int> find_peak(const CorrelationHistogram& h, double min_significance) {
    const int n = h.n_bins();
    if (n == 0) return std::nullopt;
    const Baseline base = wing_baseline(h);
    int best = 0;
    for (int k = 1; k < n; ++k) {
        if (better_peak(h, k, best)) best = k;
    }
    const double threshold = base.mean + min_significance * std::sqrt(base.variance);
    if (static_cast<double>(h.counts[best]) > threshold) return best;
    return std::nullopt;
}

std::vector<int> find_peak_candidates(const CorrelationHistogram& h,
                                      double min_significance, int max_candidates,
                                      int exclusion_bins) {
    std::vector<int> picks;
    const int n = h.n_bins();
    if (n == 0 || max_candidates <= 0) return picks;
    const Baseline base = wing_baseline(h);
    const double threshold = base.mean + min_significance * std::sqrt(base.variance);
    std::vector<bool> masked(static_cast<std::size_t>(n), false);
    while (static_cast<int>(picks.size()) < max_candidates) {
        int best = -1;
        for (int k = 0; k < n; ++k) {
            if (masked[k]) continue;
            if (best < 0 || better_peak(h, k, best)) best = k;
        }
        if (best < 0 || static_cast<double>(h.counts[best]) <= threshold) break;
        picks.push_back(best);
        for (int k = std::max(0, best - exclusion_bins);
             k <= std::min(n - 1, best + exclusion_bins); ++k) {
            masked[k] = true;
        }
    }
    return picks;
}

namespace {

PeakEstimate fit_window(const CorrelationHistogram& h, int lo, int hi,
                        double center_guess, double sigma_guess) {
    PeakEstimate est;
    const int n_window = hi - lo + 1;
    if (n_window < 5) return est;

    std::vector<double> x(static_cast<std::size_t>(n_window));
    std::vector<double> y(static_cast<std::size_t>(n_window));
    std::vector<double> var(static_cast<std::size_t>(n_window));
    double y_min = std::numeric_limits<double>::max();
    double y_max = 0.0;
    for (int k = lo; k <= hi; ++k) {
        const std::size_t i = static_cast<std::size_t>(k - lo);
        x[i] = h.bin_center_ps(k);
        y[i] = static_cast<double>(h.counts[k]);
        var[i] = std::max(y[i], 1.0);
        y_min = std::min(y_min, y[i]);
        y_max = std::max(y_max, y[i]);
    }

    GaussFitInit init;
    init.baseline = y_min;
    init.amplitude = std::max(y_max - y_min, 1.0);
    init.center = center_guess;
    init.sigma = sigma_guess;
    const GaussFitResult fit = fit_gaussian(x, y, var, init);

    est.tau_hat_ps = fit.center;
    est.center_se_ps = fit.se_center;
    est.sigma_fit_ps = fit.sigma;
    est.amplitude = fit.amplitude;
    est.baseline = fit.baseline;

    const double window_width = x.back() - x.front() + static_cast<double>(h.bin_width_ps);
    const double sigma_lo = static_cast<double>(h.bin_width_ps) / 2.0;
    est.valid = fit.converged && fit.amplitude > 0.0 && fit.se_center > 0.0 &&
                fit.sigma >= sigma_lo && fit.sigma <= window_width &&
                fit.center >= -static_cast<double>(h.tau_window_ps) &&
                fit.center <= static_cast<double>(h.tau_window_ps);
    return est;
}

}  // namespace

PeakEstimate fit_peak(const CorrelationHistogram& h, int center_bin,
                      int fit_halfwidth_bins) {
    const int n = h.n_bins();
    if (center_bin < 0 || center_bin >= n) {
        throw std::invalid_argument("fit_peak: center_bin out of range");
    }

    // The initial window widens until the constrained fit converges; a peak
    // wider than the starting window would otherwise leave the 4-parameter
    // model degenerate.
    PeakEstimate first;
    int lo = 0, hi = 0;
    for (int half = std::max(2, fit_halfwidth_bins); half <= std::max(64, n); half *= 2) {
        lo = std::max(0, center_bin - half);
        hi = std::min(n - 1, center_bin + half);

        // moment-based center and width guess over the window
        double w_sum = 0.0, wx = 0.0, wxx = 0.0;
        double floor_y = std::numeric_limits<double>::max();
        for (int k = lo; k <= hi; ++k) {
            floor_y = std::min(floor_y, static_cast<double>(h.counts[k]));
        }
        for (int k = lo; k <= hi; ++k) {
            const double w = std::max(static_cast<double>(h.counts[k]) - floor_y, 0.0);
            const double xc = h.bin_center_ps(k);
            w_sum += w;
            wx += w * xc;
            wxx += w * xc * xc;
        }
        double sigma_guess = static_cast<double>(h.bin_width_ps);
        double center_guess = h.bin_center_ps(center_bin);
        if (w_sum > 0.0) {
            const double mean = wx / w_sum;
            const double var = wxx / w_sum - mean * mean;
            if (var > 0.0) sigma_guess = std::max(std::sqrt(var), sigma_guess / 2.0);
            center_guess = mean;
        }

        first = fit_window(h, lo, hi, center_guess, sigma_guess);
        // accept only when the fitted peak is resolved inside the window
        if (first.valid && 4.0 * first.sigma_fit_ps <=
                               (hi - lo + 1) * static_cast<double>(h.bin_width_ps)) {
            break;
        }
        first.valid = false;
        if (lo == 0 && hi == n - 1) break;
    }
    if (!first.valid) return first;

    // Refine once to +-4 fitted sigma around the fitted center.
    const double bw = static_cast<double>(h.bin_width_ps);
    const int center_k = static_cast<int>(
        std::clamp((first.tau_hat_ps + static_cast<double>(h.tau_window_ps)) / bw, 0.0,
                   static_cast<double>(n - 1)));
    const int half2 = std::max(std::max(2, fit_halfwidth_bins),
                               static_cast<int>(std::ceil(4.0 * first.sigma_fit_ps / bw)));
    const int lo2 = std::max(0, center_k - half2);
    const int hi2 = std::min(n - 1, center_k + half2);
    if (lo2 == lo && hi2 == hi) return first;

    PeakEstimate second = fit_window(h, lo2, hi2, first.tau_hat_ps, first.sigma_fit_ps);
    return second.valid ? second : first;
}

int segment_count(std::span<const picoseconds> a, std::span<const picoseconds> b,
                  const HistogramParams& p) {
    picoseconds t_max = -1;
    if (!a.empty()) t_max = std::max(t_max, a.back());
    if (!b.empty()) t_max = std::max(t_max, b.back());
    if (t_max < 0) return 0;
    const picoseconds seg = ps_from_seconds(p.segment_duration_s);
    return static_cast<int>(t_max / seg) + 1;
}

std::vector<SegmentPeaks> measure_offset_candidates(std::span<const picoseconds> a,
                                                    std::span<const picoseconds> b,
                                                    const HistogramParams& p,
                                                    int max_candidates,
                                                    int n_segments) {
    p.validate();
    require_sorted(a, "A");
    require_sorted(b, "B");
    if (n_segments < 0) n_segments = segment_count(a, b, p);

    std::vector<SegmentPeaks> result(static_cast<std::size_t>(n_segments));
    const picoseconds seg = ps_from_seconds(p.segment_duration_s);

#pragma omp parallel for schedule(dynamic)
    for (int s = 0; s < n_segments; ++s) {
        const picoseconds t0 = seg * s;
        const picoseconds t1 = t0 + seg;
        const auto a_lo = std::lower_bound(a.begin(), a.end(), t0) - a.begin();
        const auto a_hi = std::lower_bound(a.begin(), a.end(), t1) - a.begin();
        const auto b_lo = std::lower_bound(b.begin(), b.end(), t0) - b.begin();
        const auto b_hi = std::lower_bound(b.begin(), b.end(), t1) - b.begin();
        std::span<const picoseconds> sa = a.subspan(a_lo, a_hi - a_lo);
        std::span<const picoseconds> sb = b.subspan(b_lo, b_hi - b_lo);

        SegmentPeaks& out = result[s];
        out.timestamp_s = (static_cast<double>(t0) + 0.5 * static_cast<double>(seg)) /
                          kPsPerSecond;
        const CorrelationHistogram h = coincidence_histogram_serial(sa, sb, p);
        for (int bin : find_peak_candidates(h, p.peak_significance, max_candidates)) {
            PeakEstimate est = fit_peak(h, bin);
            est.timestamp_s = out.timestamp_s;
            if (est.valid) out.candidates.push_back(est);
        }
    }
    return result;
}

std::vector<PeakEstimate> measure_offsets(std::span<const picoseconds> a,
                                          std::span<const picoseconds> b,
                                          const HistogramParams& p) {
    std::vector<SegmentPeaks> segs = measure_offset_candidates(a, b, p, 1);
    std::vector<PeakEstimate> out;
    out.reserve(segs.size());
    for (const SegmentPeaks& s : segs) {
        if (!s.candidates.empty()) {
            out.push_back(s.candidates.front());
        } else {
            PeakEstimate invalid;
            invalid.timestamp_s = s.timestamp_s;
            out.push_back(invalid);
        }
    }
    return out;
}

}  // namespace qsync
