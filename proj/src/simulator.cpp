#include "qsync/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace qsync {

void SourceParams::validate() const {
    if (!(pair_rate > 0.0)) throw std::invalid_argument("pair_rate must be > 0");
    if (!(duration_s >= 0.0)) throw std::invalid_argument("duration must be >= 0");
    if (pair_width_ps < 0.0) throw std::invalid_argument("pair_width_ps must be >= 0");
}

void ChannelParams::validate() const {
    if (loss < 0.0 || loss > 1.0) throw std::invalid_argument("loss must be in [0, 1]");
    if (fixed_delay_ps < 0.0) throw std::invalid_argument("fixed_delay_ps must be >= 0");
    if (dispersion_sigma_ps < 0.0) throw std::invalid_argument("dispersion_sigma_ps must be >= 0");
}

void DetectorParams::validate() const {
    if (efficiency < 0.0 || efficiency > 1.0)
        throw std::invalid_argument("efficiency must be in [0, 1]");
    if (jitter_fwhm_ps < 0.0) throw std::invalid_argument("jitter_fwhm_ps must be >= 0");
    if (dead_time_ps < 0.0) throw std::invalid_argument("dead_time_ps must be >= 0");
    if (dark_rate < 0.0) throw std::invalid_argument("dark_rate must be >= 0");
    if (resolution_ps < 1) throw std::invalid_argument("resolution_ps must be >= 1");
}

void StarSetup::validate() const {
    source.validate();
    if (splitter_ports < 2) throw std::invalid_argument("splitter needs >= 2 ports");
    if (users.empty()) throw std::invalid_argument("at least one user required");
    if (static_cast<int>(users.size()) > splitter_ports)
        throw std::invalid_argument("more users than splitter ports");
    std::map<std::string, const UserSetup*> groups;
    for (const auto& u : users) {
        u.channel.validate();
        u.detector.validate();
        u.clock.validate();
        const std::string group = u.clock_group.empty() ? u.label : u.clock_group;
        auto [it, inserted] = groups.emplace(group, &u);
        if (!inserted) {
            const ClockTruth& a = it->second->clock;
            const ClockTruth& b = u.clock;
            if (a.initial_offset_ps != b.initial_offset_ps || a.skew != b.skew ||
                a.random_walk_offset_density != b.random_walk_offset_density ||
                a.random_walk_freq_density != b.random_walk_freq_density ||
                a.seed != b.seed) {
                throw std::invalid_argument(
                    "users '" + it->second->label + "' and '" + u.label +
                    "' share clock group '" + group +
                    "' but declare different clock parameters");
            }
        }
    }
}

std::vector<double> generate_pairs(const SourceParams& src, std::uint64_t seed) {
    src.validate();
    if (src.duration_s * src.pair_rate > 1e10) {
        throw std::invalid_argument("refusing to generate more than 1e10 pairs");
    }
    const double duration_ps = src.duration_s * kPsPerSecond;
    const double mean_gap_ps = kPsPerSecond / src.pair_rate;
    std::vector<double> times;
    times.reserve(static_cast<std::size_t>(src.duration_s * src.pair_rate * 1.05) + 16);
    Rng rng(seed);
    double t = rng.exponential(mean_gap_ps);
    while (t < duration_ps) {
        times.push_back(t);
        t += rng.exponential(mean_gap_ps);
    }
    return times;
}

std::pair<int, int> route_pair(int n_ports, Rng& rng) {
    if (n_ports < 2) throw std::invalid_argument("splitter needs >= 2 ports");
    const int s = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n_ports)));
    const int i = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n_ports)));
    return {s, i};
}

namespace {

picoseconds quantize(double t_ps, picoseconds resolution_ps) {
    if (resolution_ps <= 1) return static_cast<picoseconds>(std::llround(t_ps));
    const double r = static_cast<double>(resolution_ps);
    return static_cast<picoseconds>(std::llround(t_ps / r)) * resolution_ps;
}

}  // namespace

std::optional<TimeTag> detect(double arrival_true_ps, const DetectorParams& det,
                              ClockRealization& clock, Rng& rng, int channel) {
    if (arrival_true_ps < 0.0) throw std::invalid_argument("arrival must be >= 0");
    if (rng.uniform() >= det.efficiency) return std::nullopt;
    double local = clock.local_from_true(arrival_true_ps);
    if (det.jitter_fwhm_ps > 0.0) {
        local += rng.normal(det.jitter_fwhm_ps / kFwhmToSigma);
    }
    if (local < 0.0) return std::nullopt;  // before the tagger's epoch
    return TimeTag{channel, quantize(local, det.resolution_ps)};
}

TagStream apply_dead_time(const TagStream& sorted, picoseconds dead_time_ps) {
    if (dead_time_ps <= 0) return sorted;
    TagStream out;
    out.reserve(sorted.size());
    picoseconds last = std::numeric_limits<picoseconds>::min() / 2;
    for (picoseconds t : sorted) {
        if (t - last >= dead_time_ps) {
            out.push_back(t);
            last = t;
        }
    }
    return out;
}

namespace {

struct ClockQuery {
    double t_true_ps;
    int user;        // -1 for a truth checkpoint
    bool is_dark;
};

}  // namespace

SimulationResult simulate_network(const StarSetup& setup, std::uint64_t seed) {
    setup.validate();
    const int n_users = static_cast<int>(setup.users.size());
    const double duration_ps = setup.source.duration_s * kPsPerSecond;

    SimulationResult result;
    result.streams.resize(n_users);

    // Pair emission and routing are sequential; everything downstream draws
    // from per-user or per-clock-group substreams.
    const std::vector<double> emissions =
        generate_pairs(setup.source, derive_seed(seed, "pairs"));
    result.pairs_emitted = emissions.size();

    Rng route_rng(derive_seed(seed, "route"));
    std::vector<std::vector<double>> arrivals(n_users);  // true ps at detector
    for (auto& a : arrivals) a.reserve(emissions.size() * 2 / setup.splitter_ports + 16);

    for (double t_emit : emissions) {
        auto [port_s, port_i] = route_pair(setup.splitter_ports, route_rng);
        double t_idler = t_emit;
        if (setup.source.pair_width_ps > 0.0) {
            t_idler += route_rng.normal(setup.source.pair_width_ps);
        }
        if (port_s != port_i && port_s < n_users && port_i < n_users) {
            ++result.pairs_to_distinct_users;
        }
        if (port_s < n_users) {
            arrivals[port_s].push_back(t_emit + setup.users[port_s].channel.fixed_delay_ps);
        }
        if (port_i < n_users) {
            arrivals[port_i].push_back(std::max(0.0, t_idler) +
                                       setup.users[port_i].channel.fixed_delay_ps);
        }
    }

    // Channel loss/dispersion, detector efficiency and dark counts per user.
    std::vector<std::vector<double>> detected(n_users);  // photons, true ps
    std::vector<std::vector<double>> darks(n_users);     // dark counts, true ps
#pragma omp parallel for schedule(dynamic)
    for (int u = 0; u < n_users; ++u) {
        const UserSetup& user = setup.users[u];
        Rng chan_rng(derive_seed(seed, "channel", static_cast<std::uint64_t>(u)));
        Rng thin_rng(derive_seed(seed, "detector", static_cast<std::uint64_t>(u)));
        std::vector<double>& out = detected[u];
        out.reserve(static_cast<std::size_t>(
            static_cast<double>(arrivals[u].size()) * user.detector.efficiency * 1.1) + 16);
        for (double t : arrivals[u]) {
            if (user.channel.loss > 0.0 && chan_rng.uniform() < user.channel.loss) continue;
            if (user.channel.dispersion_sigma_ps > 0.0) {
                t += chan_rng.normal(user.channel.dispersion_sigma_ps);
            }
            if (thin_rng.uniform() >= user.detector.efficiency) continue;
            if (t >= 0.0) out.push_back(t);
        }
        std::sort(out.begin(), out.end());

        if (user.detector.dark_rate > 0.0 && duration_ps > 0.0) {
            Rng dark_rng(derive_seed(seed, "dark", static_cast<std::uint64_t>(u)));
            const double mean_gap = kPsPerSecond / user.detector.dark_rate;
            for (double t = dark_rng.exponential(mean_gap); t < duration_ps;
                 t += dark_rng.exponential(mean_gap)) {
                darks[u].push_back(t);
            }
        }
    }

    // Clock groups; members of one group share a single noise realization.
    std::vector<int> clock_index(n_users, -1);
    std::map<std::string, int> group_of;
    for (int u = 0; u < n_users; ++u) {
        const std::string name = setup.users[u].clock_group.empty()
                                     ? setup.users[u].label
                                     : setup.users[u].clock_group;
        auto [it, inserted] = group_of.emplace(name, static_cast<int>(result.truth.clocks.size()));
        if (inserted) {
            ClockTruth params = setup.users[u].clock;
            if (params.seed == 0) {
                params.seed = derive_seed(seed, "clock", static_cast<std::uint64_t>(it->second));
            }
            result.truth.clocks.push_back(ClockGroupTruth{name, params, {}});
        }
        clock_index[u] = it->second;
    }

    const int n_groups = static_cast<int>(result.truth.clocks.size());
    std::vector<std::vector<std::pair<int, picoseconds>>> tagged(n_groups);  // (user, t_local)

    // Truth checkpoints on a fixed 0.1 s grid, plus the exact endpoint.
    std::vector<double> grid;
    for (double t = 0.0; t < duration_ps; t += 0.1 * kPsPerSecond) grid.push_back(t);
    grid.push_back(duration_ps);

#pragma omp parallel for schedule(dynamic)
    for (int g = 0; g < n_groups; ++g) {
        std::vector<ClockQuery> queries;
        std::size_t total = grid.size();
        for (int u = 0; u < n_users; ++u) {
            if (clock_index[u] == g) total += detected[u].size() + darks[u].size();
        }
        queries.reserve(total);
        for (double t : grid) queries.push_back({t, -1, false});
        for (int u = 0; u < n_users; ++u) {
            if (clock_index[u] != g) continue;
            for (double t : detected[u]) queries.push_back({t, u, false});
            for (double t : darks[u]) queries.push_back({t, u, true});
        }
        std::stable_sort(queries.begin(), queries.end(),
                         [](const ClockQuery& a, const ClockQuery& b) {
                             return a.t_true_ps < b.t_true_ps;
                         });

        ClockRealization clock(result.truth.clocks[g].params);
        std::vector<Rng> jitter_rng;
        jitter_rng.reserve(n_users);
        for (int u = 0; u < n_users; ++u) {
            jitter_rng.emplace_back(derive_seed(seed, "jitter", static_cast<std::uint64_t>(u)));
        }

        auto& path = result.truth.clocks[g].path;
        path.reserve(grid.size());
        for (const ClockQuery& q : queries) {
            double local = clock.local_from_true(q.t_true_ps);
            if (q.user < 0) {
                path.push_back(ClockPathSample{q.t_true_ps / kPsPerSecond,
                                               clock.offset_ps(),
                                               clock.skew() * kPsPerSecond});
                continue;
            }
            const DetectorParams& det = setup.users[q.user].detector;
            if (!q.is_dark && det.jitter_fwhm_ps > 0.0) {
                local += jitter_rng[q.user].normal(det.jitter_fwhm_ps / kFwhmToSigma);
            }
            if (local < 0.0) continue;
            tagged[g].emplace_back(q.user, quantize(local, det.resolution_ps));
        }
    }

    result.truth.duration_s = setup.source.duration_s;
    for (int u = 0; u < n_users; ++u) {
        result.truth.user_labels.push_back(setup.users[u].label);
        result.truth.user_clock_index.push_back(clock_index[u]);
        result.truth.channel_delay_ps.push_back(setup.users[u].channel.fixed_delay_ps);
    }

    for (int g = 0; g < n_groups; ++g) {
        for (const auto& [u, t] : tagged[g]) result.streams[u].push_back(t);
    }
#pragma omp parallel for schedule(dynamic)
    for (int u = 0; u < n_users; ++u) {
        std::sort(result.streams[u].begin(), result.streams[u].end());
        result.streams[u] =
            apply_dead_time(result.streams[u],
                            static_cast<picoseconds>(setup.users[u].detector.dead_time_ps));
    }

    for (int u = 0; u < n_users; ++u) {
        const UserSetup& user = setup.users[u];
        const double expected =
            setup.source.pair_rate * setup.source.duration_s * 2.0 /
                static_cast<double>(setup.splitter_ports) * (1.0 - user.channel.loss) *
                user.detector.efficiency +
            user.detector.dark_rate * setup.source.duration_s;
        result.budget.push_back(RateBudgetRow{user.label, expected, result.streams[u].size()});
    }
    return result;
}

namespace {

double interp_path(const std::vector<ClockPathSample>& path, double t_s,
                   bool want_skew) {
    if (path.empty()) return 0.0;
    if (t_s <= path.front().t_s)
        return want_skew ? path.front().skew_ps_per_s : path.front().offset_ps;
    if (t_s >= path.back().t_s)
        return want_skew ? path.back().skew_ps_per_s : path.back().offset_ps;
    auto it = std::lower_bound(path.begin(), path.end(), t_s,
                               [](const ClockPathSample& s, double t) { return s.t_s < t; });
    const ClockPathSample& hi = *it;
    const ClockPathSample& lo = *(it - 1);
    if (hi.t_s == lo.t_s) return want_skew ? hi.skew_ps_per_s : hi.offset_ps;
    const double w = (t_s - lo.t_s) / (hi.t_s - lo.t_s);
    return want_skew ? lo.skew_ps_per_s + w * (hi.skew_ps_per_s - lo.skew_ps_per_s)
                     : lo.offset_ps + w * (hi.offset_ps - lo.offset_ps);
}

}  // namespace

double TruthRecord::clock_offset_at(int user, double t_s) const {
    return interp_path(clocks[user_clock_index[user]].path, t_s, false);
}

double TruthRecord::clock_skew_at(int user, double t_s) const {
    return interp_path(clocks[user_clock_index[user]].path, t_s, true);
}

double TruthRecord::measured_offset_truth(int a, int b, double t_s) const {
    return (channel_delay_ps[b] - channel_delay_ps[a]) +
           (clock_offset_at(b, t_s) - clock_offset_at(a, t_s));
}

double TruthRecord::measured_skew_truth(int a, int b, double t_s) const {
    return clock_skew_at(b, t_s) - clock_skew_at(a, t_s);
}

}  // namespace qsync
