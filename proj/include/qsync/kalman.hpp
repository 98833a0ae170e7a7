#pragma once

#include <Eigen/Core>
#include <span>
#include <vector>

#include "qsync/correlation.hpp"

namespace qsync {

// Two-state link filter: offset x (ps) and drift rate y. y is kept in ps/s
// internally so both state entries have comparable magnitude; divide by 1e12
// for dimensionless fractional frequency.
struct KalmanState {
    double x_ps = 0.0;
    double y_ps_per_s = 0.0;
    Eigen::Matrix2d P = Eigen::Matrix2d::Zero();
};

struct FilterParams {
    double sigma_x = 1.0;  // ps/sqrt(s) random-walk offset density
    double sigma_y = 1.0;  // (ps/s)/sqrt(s) random-walk drift density
    double window_s = 30.0;   // rolling window length; <= 0 means full record
    double stride_s = 1.0;    // rolling window stride
    double downweight_factor = 100.0;  // R inflation for closure-flagged input
    double init_sigma_x_ps = 500'000.0 / 3.0;
    double init_sigma_y_ps_per_s = 1e5;

    void validate() const;
};

struct OffsetMeasurement {
    double t_s = 0.0;
    double z_ps = 0.0;
    double r_ps2 = 0.0;
    bool valid = false;
    bool downweighted = false;  // closure-flagged: R is inflated, not skipped

    static OffsetMeasurement from_peak(const PeakEstimate& p) {
        return {p.timestamp_s, p.tau_hat_ps, p.center_se_ps * p.center_se_ps,
                p.valid && p.center_se_ps > 0.0, false};
    }
};

struct LinkEstimate {
    double t_s = 0.0;
    double x_ps = 0.0;
    double y_ps_per_s = 0.0;
    double sigma_x_ps = 0.0;
    double sigma_y_ps_per_s = 0.0;
    int n_used = 0;
    bool valid = false;
};

struct FilterStep {
    double t_s = 0.0;
    double innovation_ps = 0.0;
    double innovation_var_ps2 = 0.0;
    bool updated = false;
    KalmanState posterior;
};

// State history over one window (the LinkTrack of a single run).
struct WindowRun {
    LinkEstimate final_estimate;
    std::vector<FilterStep> steps;
};

enum class TrackMode { rolling, full };

// x' = x + y dt, y' = y, P' = F P F^T + diag(sigma_x^2 dt, sigma_y^2 dt).
KalmanState predict(const KalmanState& s, double dt_s, const FilterParams& p);

// Measurement of x alone (H = [1 0]) with variance r_ps2; Joseph-form
// covariance update.
KalmanState update(const KalmanState& s, double z_ps, double r_ps2,
                   double* innovation_ps = nullptr, double* innovation_var = nullptr);

// Initializes from the first valid measurement (offset) and the slope of the
// first two (drift), filters through the window, then predicts to t_end_s.
// Fewer than two valid measurements leaves the result flagged invalid.
WindowRun run_window(std::span<const OffsetMeasurement> meas, const FilterParams& p,
                     double t_end_s);

// rolling: run_window over each [t_end - window, t_end], endpoints stepping
// by stride up to record_end; full: one run over everything.
std::vector<LinkEstimate> track_link(std::span<const OffsetMeasurement> meas,
                                     const FilterParams& p, TrackMode mode,
                                     double record_end_s);

}  // namespace qsync
