#include "qsync/closure.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace qsync {

void ClosureParams::validate() const {
    if (!(threshold_sigma > 0.0)) {
        throw std::invalid_argument("threshold_sigma must be > 0");
    }
    if (max_candidates < 1) {
        throw std::invalid_argument("max_candidates must be >= 1");
    }
}

double closure_residual(double d_ac, double d_cb, double d_ab) {
    return d_ac + d_cb - d_ab;
}

namespace {

struct Combo {
    int i = -1, j = -1, k = -1;   // candidate indices for links ab, ac, bc
    double delta = 0.0;
    double combined_sigma = 0.0;
    bool ok = false;
};

// Links are stored for i < j with d_ij = t_j - t_i, so
// delta_abc = d_ac + d_cb - d_ab = d_ac - d_bc - d_ab.
Combo best_combo(const std::vector<PeakEstimate>& ab,
                 const std::vector<PeakEstimate>& ac,
                 const std::vector<PeakEstimate>& bc) {
    Combo best;
    double best_abs = std::numeric_limits<double>::max();
    for (std::size_t i = 0; i < ab.size(); ++i) {
        for (std::size_t j = 0; j < ac.size(); ++j) {
            for (std::size_t k = 0; k < bc.size(); ++k) {
                const double delta = closure_residual(ac[j].tau_hat_ps,
                                                      -bc[k].tau_hat_ps,
                                                      ab[i].tau_hat_ps);
                if (std::abs(delta) < best_abs) {
                    best_abs = std::abs(delta);
                    best.i = static_cast<int>(i);
                    best.j = static_cast<int>(j);
                    best.k = static_cast<int>(k);
                    best.delta = delta;
                    best.combined_sigma = std::sqrt(
                        ab[i].center_se_ps * ab[i].center_se_ps +
                        ac[j].center_se_ps * ac[j].center_se_ps +
                        bc[k].center_se_ps * bc[k].center_se_ps);
                }
            }
        }
    }
    return best;
}

}  // namespace

SegmentValidation validate_peaks(
    const std::vector<std::vector<PeakEstimate>>& link_candidates,
    const std::vector<std::pair<int, int>>& link_pairs, int n_users,
    double threshold_sigma) {
    if (n_users < 3) {
        throw std::invalid_argument("validate_peaks needs at least 3 users");
    }
    if (link_candidates.size() != link_pairs.size()) {
        throw std::invalid_argument("candidate/pair list size mismatch");
    }

    std::map<std::pair<int, int>, int> link_of;
    for (std::size_t l = 0; l < link_pairs.size(); ++l) {
        link_of[link_pairs[l]] = static_cast<int>(l);
    }
    auto link_index = [&](int i, int j) {
        auto it = link_of.find({std::min(i, j), std::max(i, j)});
        return it == link_of.end() ? -1 : it->second;
    };

    SegmentValidation out;
    const int n_links = static_cast<int>(link_pairs.size());
    out.chosen.assign(n_links, 0);
    out.argmax_rejected.assign(n_links, false);

    // Track the best consistent triangle seen per link.
    std::vector<double> best_delta(n_links, std::numeric_limits<double>::max());
    std::vector<int> best_choice(n_links, -2);  // -2: no triangle evaluated
    std::vector<bool> in_failed_triangle(n_links, false);

    for (int a = 0; a < n_users; ++a) {
        for (int b = a + 1; b < n_users; ++b) {
            for (int c = b + 1; c < n_users; ++c) {
                TriangleCheck tc;
                tc.a = a;
                tc.b = b;
                tc.c = c;
                const int lab = link_index(a, b);
                const int lac = link_index(a, c);
                const int lbc = link_index(b, c);
                if (lab < 0 || lac < 0 || lbc < 0 ||
                    link_candidates[lab].empty() || link_candidates[lac].empty() ||
                    link_candidates[lbc].empty()) {
                    out.triangles.push_back(tc);
                    continue;
                }
                tc.evaluable = true;
                const Combo combo = best_combo(link_candidates[lab],
                                               link_candidates[lac],
                                               link_candidates[lbc]);
                tc.delta_ps = combo.delta;
                tc.combined_sigma_ps = combo.combined_sigma;
                const bool consistent =
                    std::abs(combo.delta) <= threshold_sigma * combo.combined_sigma;
                tc.flagged = !consistent;
                out.triangles.push_back(tc);

                const std::array<std::pair<int, int>, 3> picks = {
                    std::pair{lab, combo.i}, {lac, combo.j}, {lbc, combo.k}};
                for (auto [link, cand] : picks) {
                    if (!consistent) {
                        in_failed_triangle[link] = true;
                        continue;
                    }
                    if (std::abs(combo.delta) < best_delta[link]) {
                        best_delta[link] = std::abs(combo.delta);
                        best_choice[link] = cand;
                    }
                }
            }
        }
    }

    for (int l = 0; l < n_links; ++l) {
        if (link_candidates[l].empty()) {
            out.chosen[l] = -1;
            continue;
        }
        if (best_choice[l] >= 0) {
            out.chosen[l] = best_choice[l];  // best consistent triangle wins
        } else if (in_failed_triangle[l]) {
            out.chosen[l] = -1;  // only inconsistent evidence: reject
        } else {
            out.chosen[l] = 0;  // no evaluable triangle: keep the argmax
        }
        out.argmax_rejected[l] = out.chosen[l] != 0;
    }
    return out;
}

namespace {

double interp_track(const std::vector<LinkEstimate>& track, double t_s, bool sigma) {
    auto it = std::lower_bound(track.begin(), track.end(), t_s,
                               [](const LinkEstimate& e, double t) { return e.t_s < t; });
    if (it == track.begin()) return sigma ? it->sigma_x_ps : it->x_ps;
    if (it == track.end()) {
        const LinkEstimate& e = track.back();
        return sigma ? e.sigma_x_ps : e.x_ps;
    }
    const LinkEstimate& hi = *it;
    const LinkEstimate& lo = *(it - 1);
    if (hi.t_s == lo.t_s) return sigma ? hi.sigma_x_ps : hi.x_ps;
    const double w = (t_s - lo.t_s) / (hi.t_s - lo.t_s);
    return sigma ? lo.sigma_x_ps + w * (hi.sigma_x_ps - lo.sigma_x_ps)
                 : lo.x_ps + w * (hi.x_ps - lo.x_ps);
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

}  // namespace

ClosureReport closure_rms(const std::vector<std::vector<LinkEstimate>>& tracks,
                          const std::vector<std::pair<int, int>>& link_pairs,
                          int n_users, double threshold_sigma) {
    if (tracks.size() != link_pairs.size()) {
        throw std::invalid_argument("track/pair list size mismatch");
    }
    std::map<std::pair<int, int>, int> link_of;
    for (std::size_t l = 0; l < link_pairs.size(); ++l) {
        link_of[link_pairs[l]] = static_cast<int>(l);
    }
    auto valid_track = [&](int l) {
        return l >= 0 && !tracks[l].empty() &&
               std::any_of(tracks[l].begin(), tracks[l].end(),
                           [](const LinkEstimate& e) { return e.valid; });
    };

    ClosureReport report;
    for (int a = 0; a < n_users; ++a) {
        for (int b = a + 1; b < n_users; ++b) {
            for (int c = b + 1; c < n_users; ++c) {
                TripleSummary ts;
                ts.a = a;
                ts.b = b;
                ts.c = c;
                std::vector<ClosureSample> series;

                auto fetch = [&](int i, int j) {
                    auto it = link_of.find({i, j});
                    return it == link_of.end() ? -1 : it->second;
                };
                const int lab = fetch(a, b), lac = fetch(a, c), lbc = fetch(b, c);
                if (valid_track(lab) && valid_track(lac) && valid_track(lbc)) {
                    ts.evaluable = true;
                    // Common epochs: the ab track's grid clipped to the
                    // overlap of all three tracks.
                    double t_lo = tracks[lab].front().t_s;
                    double t_hi = tracks[lab].back().t_s;
                    for (int l : {lac, lbc}) {
                        t_lo = std::max(t_lo, tracks[l].front().t_s);
                        t_hi = std::min(t_hi, tracks[l].back().t_s);
                    }
                    double sq_sum = 0.0;
                    std::vector<double> sigmas;
                    for (const LinkEstimate& e : tracks[lab]) {
                        if (e.t_s < t_lo - 1e-9 || e.t_s > t_hi + 1e-9) continue;
                        ClosureSample s;
                        s.t_s = e.t_s;
                        const double d_ab = interp_track(tracks[lab], e.t_s, false);
                        const double d_ac = interp_track(tracks[lac], e.t_s, false);
                        const double d_bc = interp_track(tracks[lbc], e.t_s, false);
                        s.delta_ps = closure_residual(d_ac, -d_bc, d_ab);
                        const double s_ab = interp_track(tracks[lab], e.t_s, true);
                        const double s_ac = interp_track(tracks[lac], e.t_s, true);
                        const double s_bc = interp_track(tracks[lbc], e.t_s, true);
                        s.combined_sigma_ps =
                            std::sqrt(s_ab * s_ab + s_ac * s_ac + s_bc * s_bc);
                        s.flagged = std::abs(s.delta_ps) >
                                    threshold_sigma * s.combined_sigma_ps;
                        sq_sum += s.delta_ps * s.delta_ps;
                        sigmas.push_back(s.combined_sigma_ps);
                        series.push_back(s);
                    }
                    ts.n_epochs = series.size();
                    if (!series.empty()) {
                        ts.rms_ps = std::sqrt(sq_sum / static_cast<double>(series.size()));
                        ts.median_combined_sigma_ps = median(sigmas);
                        ts.flagged = ts.rms_ps >
                                     threshold_sigma * ts.median_combined_sigma_ps;
                    }
                }
                report.triples.push_back(ts);
                report.series.push_back(std::move(series));
            }
        }
    }
    return report;
}

}  // namespace qsync
