#pragma once

#include <span>

namespace hieremb {

/// Regularized incomplete beta function I_x(a, b).
double regularized_incomplete_beta(double a, double b, double x);

struct WelchResult {
    double t = 0.0;
    double df = 0.0;
    double p = 1.0;  // two-sided
};

/// Welch's unequal-variance t-test. Degenerate cases: both samples with zero
/// variance give p = 1 when the means are equal and p = 0 otherwise; t = 0
/// maps to p = 1.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

double mean(std::span<const double> xs);
double sample_stddev(std::span<const double> xs);

}  // namespace hieremb
