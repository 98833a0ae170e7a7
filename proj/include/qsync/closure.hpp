#pragma once

#include <array>
#include <span>
#include <vector>

#include "qsync/correlation.hpp"
#include "qsync/kalman.hpp"

namespace qsync {

struct ClosureParams {
    double threshold_sigma = 5.0;
    int max_candidates = 3;  // argmax + up to two secondary peaks per link

    void validate() const;
};

// delta_ABC = d_AC + d_CB - d_AB; zero for any internally consistent
// assignment of per-clock times, and invariant under adding a constant to
// one clock's whole timeline. Per-link errors do not cancel.
double closure_residual(double d_ac, double d_cb, double d_ab);

// Triangle of users a < b < c evaluated against one candidate combination.
struct TriangleCheck {
    int a = 0, b = 0, c = 0;
    double delta_ps = 0.0;
    double combined_sigma_ps = 0.0;
    bool evaluable = false;  // all three links had at least one candidate
    bool flagged = false;    // no combination satisfied the threshold
};

struct SegmentValidation {
    // Per link: index of the accepted candidate, or -1 when every
    // combination involving the link failed closure.
    std::vector<int> chosen;
    std::vector<bool> argmax_rejected;
    std::vector<TriangleCheck> triangles;
};

// Candidate peak sets for every link of one segment, in the order given by
// link_pairs (user index pairs i < j). Needs >= 3 users.
SegmentValidation validate_peaks(
    const std::vector<std::vector<PeakEstimate>>& link_candidates,
    const std::vector<std::pair<int, int>>& link_pairs, int n_users,
    double threshold_sigma);

struct ClosureSample {
    double t_s = 0.0;
    double delta_ps = 0.0;
    double combined_sigma_ps = 0.0;
    bool flagged = false;
};

struct TripleSummary {
    int a = 0, b = 0, c = 0;
    double rms_ps = 0.0;
    double median_combined_sigma_ps = 0.0;
    std::size_t n_epochs = 0;
    bool flagged = false;  // rms > threshold * median combined sigma
    bool evaluable = false;
};

struct ClosureReport {
    std::vector<TripleSummary> triples;
    std::vector<std::vector<ClosureSample>> series;  // parallel to triples
};

// Post-filter consistency diagnostic: interpolates each link's tracked
// offset onto common epochs and reports the RMS residual per triple.
ClosureReport closure_rms(const std::vector<std::vector<LinkEstimate>>& tracks,
                          const std::vector<std::pair<int, int>>& link_pairs,
                          int n_users, double threshold_sigma);

}  // namespace qsync
