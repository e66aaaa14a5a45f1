#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace bp {

struct SampleSummary {
    std::size_t n = 0;
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation (n - 1)
    double std_error = 0.0;  // stddev / sqrt(n)
    double min = 0.0;
    double max = 0.0;
    double kurtosis = 0.0;  // non-excess; 0 when the sample is constant
};

// Neumaier-compensated sum in index order; independent of worker count.
double compensated_sum(std::span<const double> xs);

SampleSummary summarize(std::span<const double> xs);

double normal_cdf(double x);

}  // namespace bp
