// Compares the OpenMP coincidence kernel against the serial reference on a
// realistic correlated workload, plus the simulator throughput.

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "qsync/correlation.hpp"
#include "qsync/rng.hpp"
#include "qsync/simulator.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace qsync;

namespace {

double time_once(const char* name, auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const double dt =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%-28s %8.3f s\n", name, dt);
    return dt;
}

TagStream correlated_stream(std::size_t n, double rate_hz, double jitter_ps,
                            picoseconds shift_ps, std::uint64_t seed) {
    Rng rng(seed);
    TagStream out;
    out.reserve(n);
    double t = 0.0;
    const double gap = kPsPerSecond / rate_hz;
    for (std::size_t i = 0; i < n; ++i) {
        t += rng.exponential(gap);
        out.push_back(static_cast<picoseconds>(t + rng.normal(jitter_ps)) + shift_ps);
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    std::size_t n = 2'000'000;
    if (argc > 1) n = std::stoull(argv[1]);

#ifdef _OPENMP
    std::printf("threads: %d\n", omp_get_max_threads());
#endif
    std::printf("tags per stream: %zu\n\n", n);

    const TagStream a = correlated_stream(n, 2e4, 90.0, 0, 11);
    const TagStream b = correlated_stream(n, 2e4, 90.0, 25191, 12);

    HistogramParams p;
    p.tau_window_ps = 500'000;
    p.bin_width_ps = 32;
    p.segment_duration_s = static_cast<double>(n) / 2e4;

    CorrelationHistogram serial, parallel;
    const double t_serial = time_once("histogram serial", [&] {
        serial = coincidence_histogram_serial(a, b, p);
    });
    const double t_parallel = time_once("histogram openmp", [&] {
        parallel = coincidence_histogram(a, b, p);
    });

    bool identical = serial.counts == parallel.counts;
    std::printf("\nbin-for-bin identical: %s\n", identical ? "yes" : "NO");
    std::printf("speedup: %.2fx\n", t_serial / t_parallel);

    StarSetup setup;
    setup.source.pair_rate = 1e5;
    setup.source.duration_s = 10.0;
    setup.splitter_ports = 8;
    for (int u = 0; u < 4; ++u) {
        UserSetup user;
        user.label = user_label(u);
        setup.users.push_back(user);
    }
    std::printf("\n");
    time_once("simulate 4 users, 10 s", [&] { (void)simulate_network(setup, 42); });

    return identical ? 0 : 1;
}
