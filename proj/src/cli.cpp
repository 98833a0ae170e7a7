#include "qsync/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "qsync/config.hpp"
#include "qsync/network.hpp"
#include "qsync/tag_io.hpp"

namespace qsync {

namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(IoErrorKind::open_failed, path.string() + ": cannot write");
    out << content;
}

fs::path tag_path(const fs::path& dir, const std::string& label, bool binary) {
    return dir / ("tags_" + label + (binary ? ".qtag" : ".txt"));
}

TagStream load_user_stream(const fs::path& dir, const std::string& label) {
    for (const char* ext : {".qtag", ".txt"}) {
        const fs::path p = dir / ("tags_" + label + ext);
        if (fs::exists(p)) return read_tags(p);
    }
    throw IoError(IoErrorKind::open_failed,
                  (dir / ("tags_" + label + ".{qtag,txt}")).string() + ": not found");
}

int cmd_simulate(const std::string& config_path, std::uint64_t seed,
                 const std::string& outdir, const std::string& format,
                 const std::vector<std::string>& overrides) {
    const NetworkConfig cfg = read_config(config_path, overrides);
    const bool binary = format != "text";
    fs::create_directories(outdir);

    const auto t0 = std::chrono::steady_clock::now();
    const SimulationResult sim = simulate_network(cfg.star, seed);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    for (std::size_t u = 0; u < sim.streams.size(); ++u) {
        TagFileHeader hdr;
        hdr.channel = static_cast<int>(u);
        hdr.epoch_label = "seed-" + std::to_string(seed);
        hdr.resolution_ps = cfg.star.users[u].detector.resolution_ps;
        const fs::path p = tag_path(outdir, cfg.star.users[u].label, binary);
        if (binary) {
            write_tags_binary(p, sim.streams[u], hdr);
        } else {
            write_tags_text(p, sim.streams[u], hdr);
        }
    }
    write_truth(fs::path(outdir) / "truth.json", sim.truth);

    std::printf("simulated %llu pairs over %.6g s (%.2f s wall)\n",
                static_cast<unsigned long long>(sim.pairs_emitted),
                cfg.star.source.duration_s, elapsed);
    std::printf("%-8s %14s %14s %8s\n", "user", "expected", "actual", "dev");
    for (const RateBudgetRow& row : sim.budget) {
        const double sigma = std::sqrt(std::max(row.expected_singles, 1.0));
        const double dev =
            (static_cast<double>(row.actual_singles) - row.expected_singles) / sigma;
        std::printf("%-8s %14.1f %14llu %7.2fs\n", row.label.c_str(),
                    row.expected_singles,
                    static_cast<unsigned long long>(row.actual_singles), dev);
    }
    return 0;
}

int cmd_sync(const std::string& tagdir, const std::string& config_path,
             const std::string& outdir, const std::string& truth_path,
             bool subtract_delays, std::optional<double> window,
             std::optional<bool> rolling, const std::vector<std::string>& overrides) {
    NetworkConfig cfg = read_config(config_path, overrides);
    if (window) cfg.filter.window_s = *window;
    if (rolling) cfg.rolling = *rolling;

    std::vector<TagStream> streams;
    streams.reserve(cfg.star.users.size());
    for (const UserSetup& u : cfg.star.users) {
        streams.push_back(load_user_stream(tagdir, u.label));
    }

    SyncOptions opt;
    opt.subtract_delays = subtract_delays;
    const SyncReport report = synchronize(streams, cfg, opt);

    std::optional<TruthScore> score;
    if (!truth_path.empty()) {
        const TruthRecord truth = read_truth(truth_path);
        score = score_against_truth(report, truth);
    }

    fs::create_directories(outdir);
    const std::string table =
        format_report_table(report, score ? &*score : nullptr);
    write_file(fs::path(outdir) / "report.txt",
               table + "\n# config\n" + report.config_echo);
    write_file(fs::path(outdir) / "report.csv",
               format_report_csv(report, score ? &*score : nullptr));
    for (std::size_t l = 0; l < report.rows.size(); ++l) {
        write_file(fs::path(outdir) / ("kalman_" + report.rows[l].label + ".csv"),
                   format_track_csv(report.tracks[l]));
    }
    if (report.closure_available) {
        write_file(fs::path(outdir) / "closure_series.csv",
                   format_closure_series_csv(report));
        write_file(fs::path(outdir) / "closure_summary.csv",
                   format_closure_summary_csv(report));
    }
    std::cout << table;

    const bool all_ok = std::all_of(report.rows.begin(), report.rows.end(),
                                    [](const PairRow& r) { return r.ok; });
    return all_ok ? 0 : 2;
}

int cmd_histogram(const std::string& tagdir, const std::string& pair,
                  const std::string& config_path, const std::string& out,
                  const std::vector<std::string>& overrides) {
    NetworkConfig cfg = read_config(config_path, overrides);
    const std::size_t dash = pair.find('-');
    if (dash == std::string::npos) {
        throw ConfigError("pair must look like A-B, got '" + pair + "'");
    }
    const std::string la = pair.substr(0, dash);
    const std::string lb = pair.substr(dash + 1);
    if (cfg.user_index(la) < 0 || cfg.user_index(lb) < 0) {
        throw ConfigError("unknown pair label '" + pair + "'");
    }
    const TagStream a = load_user_stream(tagdir, la);
    const TagStream b = load_user_stream(tagdir, lb);

    HistogramParams p = cfg.histogram;
    // Whole-record histogram: normalize over the actual data extent.
    picoseconds t_max = 0;
    if (!a.empty()) t_max = std::max(t_max, a.back());
    if (!b.empty()) t_max = std::max(t_max, b.back());
    p.segment_duration_s = std::max(seconds_from_ps(t_max), 1e-9);

    const CorrelationHistogram h = coincidence_histogram(a, b, p);
    write_file(out, format_histogram_csv(h));
    if (a.empty() || b.empty()) {
        std::cerr << "warning: empty stream; histogram has no counts\n";
    }
    std::uint64_t total = 0;
    for (auto c : h.counts) total += c;
    std::printf("histogram %s: %llu coincidences in %d bins -> %s\n", pair.c_str(),
                static_cast<unsigned long long>(total), h.n_bins(), out.c_str());
    return 0;
}

int cmd_closure(const std::string& tagdir, const std::string& config_path,
                const std::string& outdir,
                const std::vector<std::string>& overrides) {
    NetworkConfig cfg = read_config(config_path, overrides);
    if (cfg.n_users() < 3) {
        throw ConfigError("closure needs at least 3 users");
    }
    std::vector<TagStream> streams;
    for (const UserSetup& u : cfg.star.users) {
        streams.push_back(load_user_stream(tagdir, u.label));
    }
    const SyncReport report = synchronize(streams, cfg);
    fs::create_directories(outdir);
    write_file(fs::path(outdir) / "closure_series.csv",
               format_closure_series_csv(report));
    write_file(fs::path(outdir) / "closure_summary.csv",
               format_closure_summary_csv(report));
    for (const TripleSummary& t : report.closure.triples) {
        const std::string label =
            user_label(t.a) + "-" + user_label(t.b) + "-" + user_label(t.c);
        if (!t.evaluable) {
            std::printf("%-10s skipped (missing link data)\n", label.c_str());
        } else {
            std::printf("%-10s rms %10.2f ps  sigma_c %8.3f ps  %s\n", label.c_str(),
                        t.rms_ps, t.median_combined_sigma_ps,
                        t.flagged ? "FLAG" : "ok");
        }
    }
    const bool any_unevaluable =
        std::any_of(report.closure.triples.begin(), report.closure.triples.end(),
                    [](const TripleSummary& t) { return !t.evaluable; });
    return any_unevaluable ? 2 : 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"Star-network clock synchronization from photon-pair time tags"};
    app.require_subcommand(1);

    std::string config_path;
    std::string outdir = ".";
    std::string tagdir;
    std::string truth_path;
    std::string pair;
    std::string out_file;
    std::string format = "binary";
    std::uint64_t seed = 0;
    bool subtract_delays = false;
    std::vector<std::string> overrides;
    std::optional<double> window;
    bool flag_rolling = false, flag_full = false;

    auto* sim = app.add_subcommand("simulate", "Generate synthetic tag streams");
    sim->add_option("--config", config_path, "config file")->required();
    sim->add_option("--seed", seed, "master RNG seed")->required();
    sim->add_option("--out", outdir, "output directory")->required();
    sim->add_option("--format", format, "tag file format: binary|text")
        ->check(CLI::IsMember({"binary", "text"}));
    sim->add_option("--set", overrides, "override config entries (section.key=value)");

    auto* sync = app.add_subcommand("sync", "Estimate all pairwise offsets and skews");
    sync->add_option("--tags", tagdir, "directory with tag files")->required();
    sync->add_option("--config", config_path, "config file")->required();
    sync->add_option("--out", outdir, "output directory")->required();
    sync->add_option("--truth", truth_path, "truth record for scoring");
    sync->add_flag("--subtract-delays", subtract_delays,
                   "subtract configured propagation delays from offsets");
    double window_value = 0.0;
    auto* window_opt =
        sync->add_option("--window", window_value, "rolling window length (s)");
    sync->add_flag("--rolling", flag_rolling, "rolling-window tracking");
    sync->add_flag("--full", flag_full, "single full-record fit");
    sync->add_option("--set", overrides, "override config entries");

    auto* hist = app.add_subcommand("histogram", "Export one pair's histogram as CSV");
    hist->add_option("--tags", tagdir, "directory with tag files")->required();
    hist->add_option("--pair", pair, "pair label, e.g. A-B")->required();
    hist->add_option("--config", config_path, "config file")->required();
    hist->add_option("--out", out_file, "output CSV path")->required();
    hist->add_option("--set", overrides, "override config entries");

    auto* clos = app.add_subcommand("closure", "Triangle-closure diagnostics");
    clos->add_option("--tags", tagdir, "directory with tag files")->required();
    clos->add_option("--config", config_path, "config file")->required();
    clos->add_option("--out", outdir, "output directory")->required();
    clos->add_option("--set", overrides, "override config entries");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (sim->parsed()) {
            return cmd_simulate(config_path, seed, outdir, format, overrides);
        }
        if (sync->parsed()) {
            if (flag_rolling && flag_full) {
                std::cerr << "error: --rolling and --full are mutually exclusive\n";
                return 1;
            }
            if (*window_opt) window = window_value;
            std::optional<bool> rolling;
            if (flag_rolling) rolling = true;
            if (flag_full) rolling = false;
            return cmd_sync(tagdir, config_path, outdir, truth_path, subtract_delays,
                            window, rolling, overrides);
        }
        if (hist->parsed()) {
            return cmd_histogram(tagdir, pair, config_path, out_file, overrides);
        }
        if (clos->parsed()) {
            return cmd_closure(tagdir, config_path, outdir, overrides);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "pipeline error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace qsync
