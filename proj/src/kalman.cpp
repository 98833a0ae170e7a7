#include "qsync/kalman.hpp"

#include <cmath>
#include <stdexcept>

namespace qsync {

void FilterParams::validate() const {
    if (sigma_x < 0.0 || sigma_y < 0.0) {
        throw std::invalid_argument("process noise densities must be >= 0");
    }
    if (window_s > 0.0 && !(stride_s > 0.0)) {
        throw std::invalid_argument("stride must be > 0 in rolling mode");
    }
    if (!(downweight_factor >= 1.0)) {
        throw std::invalid_argument("downweight_factor must be >= 1");
    }
    if (!(init_sigma_x_ps > 0.0) || !(init_sigma_y_ps_per_s > 0.0)) {
        throw std::invalid_argument("initial sigmas must be > 0");
    }
}

KalmanState predict(const KalmanState& s, double dt_s, const FilterParams& p) {
    if (dt_s < 0.0) throw std::invalid_argument("predict: dt must be >= 0");
    Eigen::Matrix2d f;
    f << 1.0, dt_s, 0.0, 1.0;
    KalmanState out;
    out.x_ps = s.x_ps + s.y_ps_per_s * dt_s;
    out.y_ps_per_s = s.y_ps_per_s;
    Eigen::Matrix2d q = Eigen::Matrix2d::Zero();
    q(0, 0) = p.sigma_x * p.sigma_x * dt_s;
    q(1, 1) = p.sigma_y * p.sigma_y * dt_s;
    out.P = f * s.P * f.transpose() + q;
    out.P = (out.P + out.P.transpose()) / 2.0;
    return out;
}

KalmanState update(const KalmanState& s, double z_ps, double r_ps2,
                   double* innovation_ps, double* innovation_var) {
    if (!(r_ps2 > 0.0)) throw std::invalid_argument("update: R must be > 0");
    const double innovation = z_ps - s.x_ps;
    const double s_var = s.P(0, 0) + r_ps2;
    if (innovation_ps) *innovation_ps = innovation;
    if (innovation_var) *innovation_var = s_var;

    const Eigen::Vector2d k = s.P.col(0) / s_var;
    KalmanState out;
    out.x_ps = s.x_ps + k[0] * innovation;
    out.y_ps_per_s = s.y_ps_per_s + k[1] * innovation;

    // Joseph form keeps P symmetric PSD under roundoff.
    Eigen::Matrix2d ikh = Eigen::Matrix2d::Identity();
    ikh(0, 0) -= k[0];
    ikh(1, 0) -= k[1];
    out.P = ikh * s.P * ikh.transpose() + r_ps2 * k * k.transpose();
    out.P = (out.P + out.P.transpose()) / 2.0;
    return out;
}

WindowRun run_window(std::span<const OffsetMeasurement> meas, const FilterParams& p,
                     double t_end_s) {
    p.validate();
    WindowRun run;

    // Locate the first two valid measurements for initialization.
    int first = -1, second = -1;
    for (std::size_t i = 0; i < meas.size(); ++i) {
        if (!meas[i].valid) continue;
        if (first < 0) {
            first = static_cast<int>(i);
        } else {
            second = static_cast<int>(i);
            break;
        }
    }
    if (second < 0) {
        run.final_estimate.t_s = t_end_s;
        return run;  // no skew estimate possible; flagged invalid
    }

    KalmanState state;
    state.x_ps = meas[first].z_ps;
    const double dt01 = meas[second].t_s - meas[first].t_s;
    state.y_ps_per_s = dt01 > 0.0 ? (meas[second].z_ps - meas[first].z_ps) / dt01 : 0.0;
    state.P(0, 0) = p.init_sigma_x_ps * p.init_sigma_x_ps;
    state.P(1, 1) = p.init_sigma_y_ps_per_s * p.init_sigma_y_ps_per_s;

    double t = meas[first].t_s;
    int n_used = 0;
    for (std::size_t i = static_cast<std::size_t>(first); i < meas.size(); ++i) {
        const OffsetMeasurement& m = meas[i];
        if (m.t_s < t) throw std::invalid_argument("measurements not time-ordered");
        state = predict(state, m.t_s - t, p);
        t = m.t_s;
        FilterStep step;
        step.t_s = t;
        if (m.valid) {
            const double r = m.downweighted ? m.r_ps2 * p.downweight_factor : m.r_ps2;
            state = update(state, m.z_ps, r, &step.innovation_ps, &step.innovation_var_ps2);
            step.updated = true;
            ++n_used;
        }
        step.posterior = state;
        run.steps.push_back(step);
    }

    if (t_end_s > t) {
        state = predict(state, t_end_s - t, p);
    }
    run.final_estimate = LinkEstimate{t_end_s,
                                      state.x_ps,
                                      state.y_ps_per_s,
                                      std::sqrt(std::max(state.P(0, 0), 0.0)),
                                      std::sqrt(std::max(state.P(1, 1), 0.0)),
                                      n_used,
                                      true};
    return run;
}

std::vector<LinkEstimate> track_link(std::span<const OffsetMeasurement> meas,
                                     const FilterParams& p, TrackMode mode,
                                     double record_end_s) {
    p.validate();
    std::vector<LinkEstimate> out;
    if (mode == TrackMode::full || !(p.window_s > 0.0)) {
        out.push_back(run_window(meas, p, record_end_s).final_estimate);
        return out;
    }
    if (record_end_s <= p.window_s) {
        out.push_back(run_window(meas, p, record_end_s).final_estimate);
        return out;
    }
    const double eps = 1e-9;
    for (double t_end = p.window_s; t_end <= record_end_s + eps; t_end += p.stride_s) {
        std::size_t lo = 0, hi = 0;
        while (lo < meas.size() && meas[lo].t_s <= t_end - p.window_s - eps) ++lo;
        hi = lo;
        while (hi < meas.size() && meas[hi].t_s <= t_end + eps) ++hi;
        out.push_back(run_window(meas.subspan(lo, hi - lo), p, t_end).final_estimate);
    }
    return out;
}

}  // namespace qsync
