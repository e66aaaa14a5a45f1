#include "bp/stats.hpp"

#include <algorithm>
#include <cmath>

namespace bp {

double compensated_sum(std::span<const double> xs) {
    double sum = 0.0;
    double comp = 0.0;
    for (double x : xs) {
        const double t = sum + x;
        if (std::abs(sum) >= std::abs(x)) {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    return sum + comp;
}

SampleSummary summarize(std::span<const double> xs) {
    SampleSummary s;
    s.n = xs.size();
    if (s.n == 0) {
        return s;
    }
    s.mean = compensated_sum(xs) / static_cast<double>(s.n);
    auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
    s.min = *lo;
    s.max = *hi;
    if (s.n < 2) {
        return s;
    }
    std::vector<double> sq(s.n);
    std::vector<double> quart(s.n);
    for (std::size_t i = 0; i < s.n; ++i) {
        const double d = xs[i] - s.mean;
        sq[i] = d * d;
        quart[i] = sq[i] * sq[i];
    }
    const double m2 = compensated_sum(sq) / static_cast<double>(s.n);
    const double m4 = compensated_sum(quart) / static_cast<double>(s.n);
    s.stddev = std::sqrt(m2 * static_cast<double>(s.n) / static_cast<double>(s.n - 1));
    s.std_error = s.stddev / std::sqrt(static_cast<double>(s.n));
    s.kurtosis = m2 > 0.0 ? m4 / (m2 * m2) : 0.0;
    return s;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace bp
