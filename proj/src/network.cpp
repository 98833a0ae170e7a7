#include "qsync/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace qsync {

namespace {

std::string format_double(double v, const char* fmt = "%.6g") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), fmt, v);
    return buf;
}

}  // namespace

SyncReport synchronize(const std::vector<TagStream>& streams,
                       const NetworkConfig& cfg, const SyncOptions& opt) {
    cfg.validate();
    const int n_users = cfg.n_users();
    if (static_cast<int>(streams.size()) != n_users) {
        throw std::invalid_argument("stream count does not match configured users");
    }

    SyncReport report;
    report.config_echo = config_echo(cfg);
    report.delays_subtracted = opt.subtract_delays;

    for (int i = 0; i < n_users; ++i) {
        for (int j = i + 1; j < n_users; ++j) {
            report.link_pairs.emplace_back(i, j);
        }
    }
    const int n_links = static_cast<int>(report.link_pairs.size());

    // Shared segment grid across all pairs so closure can compare segments.
    int n_segments = 0;
    for (const TagStream& s : streams) {
        if (!s.empty()) {
            const picoseconds seg = ps_from_seconds(cfg.histogram.segment_duration_s);
            n_segments = std::max(n_segments, static_cast<int>(s.back() / seg) + 1);
        }
    }
    report.epoch_s = n_segments * cfg.histogram.segment_duration_s;

    std::vector<std::vector<SegmentPeaks>> per_link(n_links);
    for (int l = 0; l < n_links; ++l) {
        const auto [i, j] = report.link_pairs[l];
        per_link[l] = measure_offset_candidates(streams[i], streams[j], cfg.histogram,
                                                cfg.closure.max_candidates, n_segments);
    }

    // Closure validation per segment selects the candidate fed to the filter.
    std::vector<std::vector<OffsetMeasurement>> link_meas(n_links);
    std::vector<int> n_downweighted(n_links, 0);
    for (int s = 0; s < n_segments; ++s) {
        std::vector<std::vector<PeakEstimate>> cands(n_links);
        for (int l = 0; l < n_links; ++l) cands[l] = per_link[l][s].candidates;

        if (n_users >= 3) {
            const SegmentValidation v =
                validate_peaks(cands, report.link_pairs, n_users,
                               cfg.closure.threshold_sigma);
            for (int l = 0; l < n_links; ++l) {
                OffsetMeasurement m;
                m.t_s = per_link[l][s].timestamp_s;
                if (v.chosen[l] >= 0) {
                    m = OffsetMeasurement::from_peak(cands[l][v.chosen[l]]);
                } else if (!cands[l].empty()) {
                    // Closure-rejected argmax: keep it but inflate R.
                    m = OffsetMeasurement::from_peak(cands[l][0]);
                    m.downweighted = true;
                    ++n_downweighted[l];
                }
                link_meas[l].push_back(m);
            }
        } else {
            for (int l = 0; l < n_links; ++l) {
                OffsetMeasurement m;
                m.t_s = per_link[l][s].timestamp_s;
                if (!cands[l].empty()) m = OffsetMeasurement::from_peak(cands[l][0]);
                link_meas[l].push_back(m);
            }
        }
    }

    report.tracks.resize(n_links);
    const TrackMode mode = cfg.rolling ? TrackMode::rolling : TrackMode::full;
#pragma omp parallel for schedule(dynamic)
    for (int l = 0; l < n_links; ++l) {
        report.tracks[l] = track_link(link_meas[l], cfg.filter, mode, report.epoch_s);
    }

    for (int l = 0; l < n_links; ++l) {
        const auto [i, j] = report.link_pairs[l];
        PairRow row;
        row.i = i;
        row.j = j;
        row.label = cfg.star.users[i].label + "-" + cfg.star.users[j].label;
        row.n_downweighted = n_downweighted[l];
        for (const OffsetMeasurement& m : link_meas[l]) {
            if (m.valid) ++row.n_segments_valid;
        }
        const std::vector<LinkEstimate>& track = report.tracks[l];
        if (!track.empty() && track.back().valid) {
            row.ok = true;
            row.estimate = track.back();
            if (opt.subtract_delays) {
                row.estimate.x_ps -= cfg.star.users[j].channel.fixed_delay_ps -
                                     cfg.star.users[i].channel.fixed_delay_ps;
            }
        } else {
            row.note = row.n_segments_valid == 0 ? "no significant peak in any segment"
                                                 : "fewer than 2 valid measurements";
        }
        report.rows.push_back(std::move(row));
    }

    if (n_users >= 3) {
        bool all_ok = std::all_of(report.rows.begin(), report.rows.end(),
                                  [](const PairRow& r) { return r.ok; });
        report.closure =
            closure_rms(report.tracks, report.link_pairs, n_users,
                        cfg.closure.threshold_sigma);
        report.closure_available = true;
        if (!all_ok) report.closure_note = "some links failed; triples partially skipped";
    } else {
        report.closure_note = "closure skipped: needs at least 3 users";
    }
    return report;
}

TruthScore score_against_truth(const SyncReport& report, const TruthRecord& truth) {
    if (truth.user_labels.empty()) {
        throw std::invalid_argument("truth record has no users");
    }
    TruthScore score;
    int covered = 0, ok_count = 0;
    for (const PairRow& row : report.rows) {
        PairScore ps;
        ps.label = row.label;
        ps.ok = row.ok;
        if (row.ok) {
            double truth_offset =
                truth.measured_offset_truth(row.i, row.j, report.epoch_s);
            if (report.delays_subtracted) {
                truth_offset -= truth.channel_delay_ps[row.j] -
                                truth.channel_delay_ps[row.i];
            }
            const double truth_skew =
                truth.measured_skew_truth(row.i, row.j, report.epoch_s);
            ps.offset_error_ps = row.estimate.x_ps - truth_offset;
            ps.skew_error_ps_per_s = row.estimate.y_ps_per_s - truth_skew;
            ps.offset_z = row.estimate.sigma_x_ps > 0.0
                              ? ps.offset_error_ps / row.estimate.sigma_x_ps
                              : 0.0;
            ps.skew_z = row.estimate.sigma_y_ps_per_s > 0.0
                            ? ps.skew_error_ps_per_s / row.estimate.sigma_y_ps_per_s
                            : 0.0;
            ++ok_count;
            if (std::abs(ps.offset_z) <= 3.0) ++covered;
        }
        score.pairs.push_back(std::move(ps));
    }
    score.offset_coverage_3sigma =
        ok_count > 0 ? static_cast<double>(covered) / ok_count : 0.0;
    return score;
}

std::string format_report_table(const SyncReport& report, const TruthScore* score) {
    std::ostringstream os;
    os << "Pairwise clock offset and skew estimates (epoch "
       << format_double(report.epoch_s) << " s"
       << (report.delays_subtracted ? ", known delays subtracted" : "") << ")\n\n";
    char line[256];
    std::snprintf(line, sizeof(line), "%-8s %16s %16s %14s %15s", "Pair",
                  "Offset (ps)", "Offset SE (ps)", "Skew (ps/s)", "Skew SE (ps/s)");
    os << line;
    if (score) {
        std::snprintf(line, sizeof(line), " %14s %8s", "Offset err", "z");
        os << line;
    }
    os << "\n";
    for (std::size_t r = 0; r < report.rows.size(); ++r) {
        const PairRow& row = report.rows[r];
        if (!row.ok) {
            std::snprintf(line, sizeof(line), "%-8s %16s  (%s)", row.label.c_str(),
                          "failed", row.note.c_str());
            os << line << "\n";
            continue;
        }
        std::snprintf(line, sizeof(line), "%-8s %16.1f %16.3f %14.4f %15.4f",
                      row.label.c_str(), row.estimate.x_ps, row.estimate.sigma_x_ps,
                      row.estimate.y_ps_per_s, row.estimate.sigma_y_ps_per_s);
        os << line;
        if (score) {
            const PairScore& ps = score->pairs[r];
            std::snprintf(line, sizeof(line), " %14.1f %8.2f", ps.offset_error_ps,
                          ps.offset_z);
            os << line;
        }
        os << "\n";
    }
    if (report.closure_available) {
        os << "\nTriangle closure\n";
        std::snprintf(line, sizeof(line), "%-10s %14s %22s %9s %8s", "Triple",
                      "RMS (ps)", "median sigma_c (ps)", "epochs", "flag");
        os << line << "\n";
        for (const TripleSummary& t : report.closure.triples) {
            const std::string label =
                user_label(t.a) + "-" + user_label(t.b) + "-" + user_label(t.c);
            if (!t.evaluable) {
                std::snprintf(line, sizeof(line), "%-10s %14s", label.c_str(),
                              "skipped");
            } else {
                std::snprintf(line, sizeof(line), "%-10s %14.2f %22.3f %9zu %8s",
                              label.c_str(), t.rms_ps, t.median_combined_sigma_ps,
                              t.n_epochs, t.flagged ? "FLAG" : "ok");
            }
            os << line << "\n";
        }
        if (!report.closure_note.empty()) os << report.closure_note << "\n";
    } else if (!report.closure_note.empty()) {
        os << "\n" << report.closure_note << "\n";
    }
    return os.str();
}

std::string format_report_csv(const SyncReport& report, const TruthScore* score) {
    std::ostringstream os;
    os << "pair,ok,offset_ps,offset_se_ps,skew_ps_per_s,skew_se_ps_per_s,"
          "segments_valid,downweighted";
    if (score) os << ",offset_err_ps,offset_z,skew_err_ps_per_s,skew_z";
    os << "\n";
    os.precision(17);
    for (std::size_t r = 0; r < report.rows.size(); ++r) {
        const PairRow& row = report.rows[r];
        os << row.label << "," << (row.ok ? 1 : 0) << ",";
        if (row.ok) {
            os << row.estimate.x_ps << "," << row.estimate.sigma_x_ps << ","
               << row.estimate.y_ps_per_s << "," << row.estimate.sigma_y_ps_per_s;
        } else {
            os << ",,,";
        }
        os << "," << row.n_segments_valid << "," << row.n_downweighted;
        if (score) {
            const PairScore& ps = score->pairs[r];
            if (ps.ok) {
                os << "," << ps.offset_error_ps << "," << ps.offset_z << ","
                   << ps.skew_error_ps_per_s << "," << ps.skew_z;
            } else {
                os << ",,,,";
            }
        }
        os << "\n";
    }
    return os.str();
}

std::string format_track_csv(const std::vector<LinkEstimate>& track) {
    std::ostringstream os;
    os << "t_s,x_ps,y_ps_per_s,sigma_x_ps,sigma_y_ps_per_s,n_used,valid\n";
    os.precision(17);
    for (const LinkEstimate& e : track) {
        os << e.t_s << "," << e.x_ps << "," << e.y_ps_per_s << "," << e.sigma_x_ps
           << "," << e.sigma_y_ps_per_s << "," << e.n_used << "," << (e.valid ? 1 : 0)
           << "\n";
    }
    return os.str();
}

std::string format_closure_series_csv(const SyncReport& report) {
    std::ostringstream os;
    os << "triple,t_s,delta_ps,combined_sigma_ps,flagged\n";
    os.precision(17);
    for (std::size_t t = 0; t < report.closure.triples.size(); ++t) {
        const TripleSummary& ts = report.closure.triples[t];
        const std::string label =
            user_label(ts.a) + "-" + user_label(ts.b) + "-" + user_label(ts.c);
        for (const ClosureSample& s : report.closure.series[t]) {
            os << label << "," << s.t_s << "," << s.delta_ps << ","
               << s.combined_sigma_ps << "," << (s.flagged ? 1 : 0) << "\n";
        }
    }
    return os.str();
}

std::string format_closure_summary_csv(const SyncReport& report) {
    std::ostringstream os;
    os << "triple,evaluable,rms_ps,median_combined_sigma_ps,n_epochs,flagged\n";
    os.precision(17);
    for (const TripleSummary& t : report.closure.triples) {
        const std::string label =
            user_label(t.a) + "-" + user_label(t.b) + "-" + user_label(t.c);
        os << label << "," << (t.evaluable ? 1 : 0) << "," << t.rms_ps << ","
           << t.median_combined_sigma_ps << "," << t.n_epochs << ","
           << (t.flagged ? 1 : 0) << "\n";
    }
    return os.str();
}

std::string format_histogram_csv(const CorrelationHistogram& h) {
    std::ostringstream os;
    os << "bin_center_ps,count,g2\n";
    os.precision(17);
    const auto g2 = g2_normalize(h);
    for (int k = 0; k < h.n_bins(); ++k) {
        os << h.bin_center_ps(k) << "," << h.counts[k] << ",";
        if (g2) os << (*g2)[k];
        os << "\n";
    }
    return os.str();
}

}  // namespace qsync
