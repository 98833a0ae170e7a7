#include "qsync/gauss_fit.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace qsync {

namespace {

double chi2_of(std::span<const double> x, std::span<const double> y,
               std::span<const double> var, const Eigen::Vector4d& p) {
    double chi2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - p[1];
        const double m = p[3] + p[0] * std::exp(-0.5 * dx * dx / (p[2] * p[2]));
        chi2 += (y[i] - m) * (y[i] - m) / var[i];
    }
    return chi2;
}

}  // namespace

GaussFitResult fit_gaussian(std::span<const double> x, std::span<const double> y,
                            std::span<const double> variance,
                            const GaussFitInit& init) {
    const std::size_t n = x.size();
    if (y.size() != n || variance.size() != n) {
        throw std::invalid_argument("fit_gaussian: mismatched input lengths");
    }
    GaussFitResult out;
    if (n < 5) return out;  // underdetermined with 4 parameters

    Eigen::Vector4d p(init.amplitude, init.center, std::abs(init.sigma), init.baseline);
    if (p[2] <= 0.0) p[2] = 1.0;

    double lambda = 1e-3;
    double chi2 = chi2_of(x, y, variance, p);

    for (int iter = 0; iter < 100; ++iter) {
        Eigen::Matrix4d jtj = Eigen::Matrix4d::Zero();
        Eigen::Vector4d jtr = Eigen::Vector4d::Zero();
        for (std::size_t i = 0; i < n; ++i) {
            const double w = 1.0 / variance[i];
            const double dx = x[i] - p[1];
            const double s2 = p[2] * p[2];
            const double e = std::exp(-0.5 * dx * dx / s2);
            const double m = p[3] + p[0] * e;
            Eigen::Vector4d j;
            j[0] = e;                              // d/d amplitude
            j[1] = p[0] * e * dx / s2;             // d/d center
            j[2] = p[0] * e * dx * dx / (s2 * p[2]);  // d/d sigma
            j[3] = 1.0;                            // d/d baseline
            jtj.noalias() += w * j * j.transpose();
            jtr.noalias() += w * j * (y[i] - m);
        }

        // Levenberg damping on the normal equations.
        Eigen::Matrix4d damped = jtj;
        for (int k = 0; k < 4; ++k) {
            damped(k, k) += lambda * (jtj(k, k) > 0 ? jtj(k, k) : 1.0);
        }
        Eigen::Vector4d step = damped.ldlt().solve(jtr);
        if (!step.allFinite()) break;

        Eigen::Vector4d trial = p + step;
        trial[2] = std::abs(trial[2]);
        const double trial_chi2 =
            trial[2] > 0.0 ? chi2_of(x, y, variance, trial)
                           : std::numeric_limits<double>::infinity();

        out.iterations = iter + 1;
        if (trial_chi2 <= chi2) {
            const double improvement = chi2 - trial_chi2;
            p = trial;
            chi2 = trial_chi2;
            lambda = std::max(lambda / 3.0, 1e-12);
            if (improvement < 1e-10 * (chi2 + 1.0) && step.norm() < 1e-9 * (1.0 + p.norm())) {
                out.converged = true;
                break;
            }
            if (improvement < 1e-8 * (chi2 + 1.0)) {
                out.converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if (lambda > 1e10) break;
        }
    }

    // Covariance from the undamped normal matrix at the solution.
    Eigen::Matrix4d jtj = Eigen::Matrix4d::Zero();
    for (std::size_t i = 0; i < n; ++i) {
        const double w = 1.0 / variance[i];
        const double dx = x[i] - p[1];
        const double s2 = p[2] * p[2];
        const double e = std::exp(-0.5 * dx * dx / s2);
        Eigen::Vector4d j;
        j[0] = e;
        j[1] = p[0] * e * dx / s2;
        j[2] = p[0] * e * dx * dx / (s2 * p[2]);
        j[3] = 1.0;
        jtj.noalias() += w * j * j.transpose();
    }
    Eigen::FullPivLU<Eigen::Matrix4d> lu(jtj);
    out.amplitude = p[0];
    out.center = p[1];
    out.sigma = std::abs(p[2]);
    out.baseline = p[3];
    out.chi2 = chi2;
    if (lu.isInvertible()) {
        Eigen::Matrix4d cov = lu.inverse();
        auto se = [&](int k) { return cov(k, k) > 0.0 ? std::sqrt(cov(k, k)) : 0.0; };
        out.se_amplitude = se(0);
        out.se_center = se(1);
        out.se_sigma = se(2);
        out.se_baseline = se(3);
    } else {
        out.converged = false;
    }
    return out;
}

}  // namespace qsync
