#pragma once

#include <span>
#include <vector>

namespace scalefuse {

// Order statistics used by the robust thresholds. All medians are the lower
// median for even-sized sets. Inputs are taken by value and reordered.

double lower_median(std::vector<double> values);
float lower_median(std::vector<float> values);

/// median(|x - median(x)|).
double median_absolute_deviation(std::vector<double> values);
double median_absolute_deviation(std::vector<double> values, double center);

struct RobustSpread {
  double median = 0.0;
  double mad = 0.0;
};
RobustSpread robust_spread(std::vector<double> values);

}  // namespace scalefuse
