#pragma once

#include <string>
#include <vector>

#include "qsync/closure.hpp"
#include "qsync/config.hpp"
#include "qsync/kalman.hpp"
#include "qsync/simulator.hpp"

namespace qsync {

struct PairRow {
    int i = 0, j = 0;
    std::string label;       // "A-B"
    bool ok = false;
    std::string note;        // failure reason when !ok
    LinkEstimate estimate;   // endpoint estimate at the report epoch
    int n_segments_valid = 0;
    int n_downweighted = 0;
};

struct SyncReport {
    double epoch_s = 0.0;  // end of the common data window
    bool delays_subtracted = false;
    std::vector<PairRow> rows;                      // all C(n,2), label-sorted
    std::vector<std::pair<int, int>> link_pairs;    // parallel to rows
    std::vector<std::vector<LinkEstimate>> tracks;  // parallel to rows
    bool closure_available = false;
    std::string closure_note;
    ClosureReport closure;
    std::string config_echo;
};

struct SyncOptions {
    bool subtract_delays = false;
    // Known propagation delays to subtract, per user (ps). Taken from the
    // config's per-user delay_ps.
};

// Full pipeline over every unordered user pair: measure_offsets ->
// validate_peaks (>= 3 users) -> track_link -> endpoint estimates plus the
// closure diagnostic.
SyncReport synchronize(const std::vector<TagStream>& streams,
                       const NetworkConfig& cfg, const SyncOptions& opt = {});

struct PairScore {
    std::string label;
    bool ok = false;
    double offset_error_ps = 0.0;
    double offset_z = 0.0;
    double skew_error_ps_per_s = 0.0;
    double skew_z = 0.0;
};

struct TruthScore {
    std::vector<PairScore> pairs;
    double offset_coverage_3sigma = 0.0;  // fraction of ok pairs with |z| <= 3
};

TruthScore score_against_truth(const SyncReport& report, const TruthRecord& truth);

// Rendering helpers shared by the CLI and tests.
std::string format_report_table(const SyncReport& report, const TruthScore* score);
std::string format_report_csv(const SyncReport& report, const TruthScore* score);
std::string format_track_csv(const std::vector<LinkEstimate>& track);
std::string format_closure_series_csv(const SyncReport& report);
std::string format_closure_summary_csv(const SyncReport& report);
std::string format_histogram_csv(const CorrelationHistogram& h);

}  // namespace qsync
