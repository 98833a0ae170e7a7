#pragma once

#include <cstdint>
#include <utility>

#include "qsync/rng.hpp"
#include "qsync/types.hpp"

namespace qsync {

// Ground-truth description of one local clock relative to global time.
//
// local(t) = t + initial_offset + skew * t + random-walk terms
//
// skew is dimensionless fractional frequency (1 ps/s drift == 1e-12).
// The random-walk densities follow the two-state model: the offset
// accumulates N(0, sigma_x^2 dt) per step plus the integral of the
// wandering frequency, which itself accumulates N(0, sigma_y^2 dt).
struct ClockTruth {
    double initial_offset_ps = 0.0;
    double skew = 0.0;                      // dimensionless, |skew| < 1e-6
    double random_walk_offset_density = 0.0;  // sigma_x, ps/sqrt(s)
    double random_walk_freq_density = 0.0;    // sigma_y, 1/sqrt(s)
    std::uint64_t seed = 0;

    bool deterministic() const {
        return random_walk_offset_density == 0.0 &&
               random_walk_freq_density == 0.0;
    }

    void validate() const;
};

// Affine map only; requires zero noise densities (asserts via validate()).
double local_from_true_affine(const ClockTruth& clock, double t_true_ps);

// Instantaneous (offset_ps, skew) difference b - a of two noiseless clocks.
std::pair<double, double> pairwise_truth(const ClockTruth& a,
                                         const ClockTruth& b,
                                         double t_true_ps);

// One realization of a clock's noise path. Queries must be made at
// non-decreasing true times; the noise stream derives from the clock's
// own seed, so realizations for different clocks evaluate independently
// and reproducibly.
class ClockRealization {
public:
    explicit ClockRealization(const ClockTruth& truth);

    // Local reading (real-valued ps) at true time t; t must not decrease
    // across calls.
    double local_from_true(double t_true_ps);

    // Realized state at the last queried time.
    double offset_ps() const { return offset_at(t_last_ps_); }
    double skew() const { return truth_.skew + noise_freq_; }
    double last_query_ps() const { return t_last_ps_; }

private:
    double offset_at(double t_true_ps) const {
        return truth_.initial_offset_ps + truth_.skew * t_true_ps +
               noise_offset_ps_;
    }

    ClockTruth truth_;
    Rng rng_;
    double t_last_ps_ = 0.0;
    double noise_offset_ps_ = 0.0;
    double noise_freq_ = 0.0;  // dimensionless wander around nominal skew
};

}  // namespace qsync
