#pragma once

#include <span>

namespace mixflow {

double mean(std::span<const double> xs);
/// Sample variance (n - 1 denominator); 0 for fewer than two values.
double sample_variance(std::span<const double> xs);

/// Spearman rank correlation with average ranks for ties. 0 when either
/// side is constant.
double spearman(std::span<const double> x, std::span<const double> y);

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;  // two-sided
};

/// Two-sided Welch t-test of mean(a) vs mean(b). Needs two values per side.
WelchResult welch_test(std::span<const double> a, std::span<const double> b);

}  // namespace mixflow
