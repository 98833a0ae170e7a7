#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "qsync/types.hpp"

namespace qsync {

struct HistogramParams {
    picoseconds tau_window_ps = 500'000;  // accept |dt| <= tau_window
    picoseconds bin_width_ps = 32;
    double segment_duration_s = 1.0;
    double peak_significance = 5.0;  // sigma over wing baseline

    void validate() const;
    int n_bins() const {
        return static_cast<int>((2 * tau_window_ps + bin_width_ps - 1) / bin_width_ps);
    }
};

struct CorrelationHistogram {
    picoseconds tau_window_ps = 0;
    picoseconds bin_width_ps = 1;
    std::vector<std::uint64_t> counts;
    std::uint64_t n_a = 0;
    std::uint64_t n_b = 0;
    double duration_s = 0.0;

    int n_bins() const { return static_cast<int>(counts.size()); }
    double bin_center_ps(int k) const {
        return static_cast<double>(-tau_window_ps) +
               (static_cast<double>(k) + 0.5) * static_cast<double>(bin_width_ps);
    }
};

// One fitted correlation peak: the offset measurement z_k with variance
// center_se^2, stamped at the segment midpoint.
struct PeakEstimate {
    double tau_hat_ps = 0.0;
    double center_se_ps = 0.0;
    double sigma_fit_ps = 0.0;
    double amplitude = 0.0;
    double baseline = 0.0;
    double timestamp_s = 0.0;
    bool valid = false;
};

struct SegmentPeaks {
    double timestamp_s = 0.0;
    // Fitted candidates ordered by decreasing peak count; [0] is the argmax.
    std::vector<PeakEstimate> candidates;
};

// Counts ordered pairs with dt = t_b - t_a in [-tau_window, +tau_window],
// binned as floor((dt + tau_window) / bin_width) (last bin takes the upper
// edge). Linear two-pointer sweep over the sorted inputs; OpenMP over chunks
// of stream A. Throws on unsorted input.
CorrelationHistogram coincidence_histogram(std::span<const picoseconds> stream_a,
                                           std::span<const picoseconds> stream_b,
                                           const HistogramParams& p);

// Single-threaded sweep, kept as the reference implementation for tests and
// the benchmark.
CorrelationHistogram coincidence_histogram_serial(std::span<const picoseconds> stream_a,
                                                  std::span<const picoseconds> stream_b,
                                                  const HistogramParams& p);

// g2_k = C_k T / (N_A N_B bin_width); nullopt when a singles count or the
// duration is zero.
std::optional<std::vector<double>> g2_normalize(const CorrelationHistogram& h);

// Argmax bin if significant against the wing baseline (outer 25% of bins on
// each side); ties break toward the smallest |tau|.
std::optional<int> find_peak(const CorrelationHistogram& h, double min_significance);

// Up to max_candidates significant local maxima, strongest first, each
// masking +-exclusion_bins around itself before the next pick.
std::vector<int> find_peak_candidates(const CorrelationHistogram& h,
                                      double min_significance, int max_candidates,
                                      int exclusion_bins = 31);

// Weighted Gaussian-plus-baseline fit around center_bin with Poisson
// weights; the window starts at +-fit_halfwidth_bins and is refined once to
// +-4 fitted sigma.
PeakEstimate fit_peak(const CorrelationHistogram& h, int center_bin,
                      int fit_halfwidth_bins = 6);

// Slices both streams into consecutive segments of segment_duration and runs
// histogram -> find -> fit per segment. n_segments < 0 derives the count
// from the data extent.
std::vector<SegmentPeaks> measure_offset_candidates(std::span<const picoseconds> stream_a,
                                                    std::span<const picoseconds> stream_b,
                                                    const HistogramParams& p,
                                                    int max_candidates,
                                                    int n_segments = -1);

// First candidate per segment (invalid estimate where no peak was found).
std::vector<PeakEstimate> measure_offsets(std::span<const picoseconds> stream_a,
                                          std::span<const picoseconds> stream_b,
                                          const HistogramParams& p);

int segment_count(std::span<const picoseconds> stream_a,
                  std::span<const picoseconds> stream_b, const HistogramParams& p);

}  // namespace qsync
