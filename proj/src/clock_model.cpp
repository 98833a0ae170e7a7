#include "qsync/clock_model.hpp"

#include <cmath>
#include <stdexcept>

#include "qsync/types.hpp"

namespace qsync {

void ClockTruth::validate() const {
    if (!(std::abs(skew) < 1e-6)) {
        throw std::invalid_argument("clock skew magnitude must be < 1e-6");
    }
    if (random_walk_offset_density < 0.0 || random_walk_freq_density < 0.0) {
        throw std::invalid_argument("clock noise densities must be >= 0");
    }
}

double local_from_true_affine(const ClockTruth& clock, double t_true_ps) {
    clock.validate();
    if (t_true_ps < 0.0) {
        throw std::invalid_argument("true time must be >= 0");
    }
    return t_true_ps + clock.initial_offset_ps + clock.skew * t_true_ps;
}

std::pair<double, double> pairwise_truth(const ClockTruth& a,
                                         const ClockTruth& b,
                                         double t_true_ps) {
    const double offset = (b.initial_offset_ps - a.initial_offset_ps) +
                          (b.skew - a.skew) * t_true_ps;
    return {offset, b.skew - a.skew};
}

ClockRealization::ClockRealization(const ClockTruth& truth)
    : truth_(truth), rng_(truth.seed) {
    truth_.validate();
}

double ClockRealization::local_from_true(double t_true_ps) {
    if (t_true_ps < t_last_ps_) {
        throw std::invalid_argument(
            "clock realization queried at decreasing time");
    }
    if (!truth_.deterministic() && t_true_ps > t_last_ps_) {
        const double dt_s = (t_true_ps - t_last_ps_) / kPsPerSecond;
        const double dt_ps = t_true_ps - t_last_ps_;
        // x_k = x_{k-1} + y_{k-1} dt + w_x,  y_k = y_{k-1} + w_y
        noise_offset_ps_ +=
            noise_freq_ * dt_ps +
            rng_.normal(truth_.random_walk_offset_density * std::sqrt(dt_s));
        noise_freq_ +=
            rng_.normal(truth_.random_walk_freq_density * std::sqrt(dt_s));
    }
    t_last_ps_ = t_true_ps;
    return t_true_ps + offset_at(t_true_ps);
}

}  // namespace qsync
