#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qsync/clock_model.hpp"
#include "qsync/rng.hpp"
#include "qsync/types.hpp"

namespace qsync {

struct SourceParams {
    double pair_rate = 1e5;    // pairs/s
    double duration_s = 1.0;
    double pair_width_ps = 0.0;  // sigma of intra-pair arrival difference

    void validate() const;
};

struct ChannelParams {
    double fixed_delay_ps = 0.0;
    double dispersion_sigma_ps = 0.0;
    double loss = 0.0;  // probability of losing a photon in the channel

    void validate() const;
};

struct DetectorParams {
    double efficiency = 0.2;
    double jitter_fwhm_ps = 150.0;
    double dead_time_ps = 0.0;
    double dark_rate = 500.0;  // counts/s
    picoseconds resolution_ps = 1;

    void validate() const;
};

struct PairEvent {
    double t_emit_ps = 0.0;
    int port_signal = 0;
    int port_idler = 0;
};

inline constexpr double kFwhmToSigma = 2.354820045030949;  // 2*sqrt(2 ln 2)

// Homogeneous Poisson emission times (true time, ps), sorted.
// Rejects duration*pair_rate > 1e10 events.
std::vector<double> generate_pairs(const SourceParams& src, std::uint64_t seed);

// Each photon exits an independent uniformly random port.
std::pair<int, int> route_pair(int n_ports, Rng& rng);

// Single-photon detection: efficiency thinning, clock conversion, detector
// jitter, quantization. Dead-time suppression is applied afterwards on the
// sorted stream (apply_dead_time), so tags here may still violate it.
std::optional<TimeTag> detect(double arrival_true_ps, const DetectorParams& det,
                              ClockRealization& clock, Rng& rng, int channel);

// Keeps a tag only if it is >= dead_time_ps after the previous kept tag.
// Input must be sorted; order is preserved.
TagStream apply_dead_time(const TagStream& sorted, picoseconds dead_time_ps);

// ---------------------------------------------------------------------------
// Full star network

struct UserSetup {
    std::string label;
    ChannelParams channel;
    DetectorParams detector;
    ClockTruth clock;
    // Users sharing a clock group share one time tagger and one noise
    // realization. Defaults to the user's own label (independent clock).
    std::string clock_group;
};

struct StarSetup {
    SourceParams source;
    int splitter_ports = 8;  // ports beyond the user count are terminated
    std::vector<UserSetup> users;

    void validate() const;
};

struct ClockPathSample {
    double t_s = 0.0;
    double offset_ps = 0.0;      // realized local-minus-true offset
    double skew_ps_per_s = 0.0;  // realized instantaneous skew
};

struct ClockGroupTruth {
    std::string name;
    ClockTruth params;
    std::vector<ClockPathSample> path;  // sampled on a 0.1 s grid
};

// Everything needed to score estimates produced from the simulated streams.
struct TruthRecord {
    double duration_s = 0.0;
    std::vector<std::string> user_labels;
    std::vector<int> user_clock_index;     // into clocks
    std::vector<double> channel_delay_ps;  // per user
    std::vector<ClockGroupTruth> clocks;

    double clock_offset_at(int user, double t_s) const;
    double clock_skew_at(int user, double t_s) const;  // ps/s

    // What the correlation peak for (a, b) measures at time t:
    // (delay_b - delay_a) + (clock_b(t) - clock_a(t)).
    double measured_offset_truth(int a, int b, double t_s) const;
    double measured_skew_truth(int a, int b, double t_s) const;  // ps/s
};

struct RateBudgetRow {
    std::string label;
    double expected_singles = 0.0;
    std::uint64_t actual_singles = 0;
};

struct SimulationResult {
    std::vector<TagStream> streams;  // per user, sorted local picoseconds
    TruthRecord truth;
    std::vector<RateBudgetRow> budget;
    std::uint64_t pairs_emitted = 0;
    std::uint64_t pairs_to_distinct_users = 0;
};

// generate_pairs -> route_pair -> channel -> detect for every photon, plus
// dark counts, dead time and sort per user. Deterministic given (setup, seed).
SimulationResult simulate_network(const StarSetup& setup, std::uint64_t seed);

}  // namespace qsync
