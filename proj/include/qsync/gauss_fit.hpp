#pragma once

#include <span>

namespace qsync {

// Gaussian-plus-constant model fitted by damped Gauss-Newton with analytic
// Jacobian: y(x) = baseline + amplitude * exp(-(x-center)^2 / (2 sigma^2)).
struct GaussFitResult {
    double amplitude = 0.0;
    double center = 0.0;
    double sigma = 0.0;
    double baseline = 0.0;
    double se_amplitude = 0.0;
    double se_center = 0.0;
    double se_sigma = 0.0;
    double se_baseline = 0.0;
    double chi2 = 0.0;
    int iterations = 0;
    bool converged = false;
};

struct GaussFitInit {
    double amplitude = 1.0;
    double center = 0.0;
    double sigma = 1.0;
    double baseline = 0.0;
};

// Weighted least squares with per-point variances (Poisson weights in the
// histogram use case). Standard errors come from the unscaled (J^T W J)^-1,
// i.e. the variances are taken as absolute.
GaussFitResult fit_gaussian(std::span<const double> x, std::span<const double> y,
                            std::span<const double> variance, const GaussFitInit& init);

}  // namespace qsync
