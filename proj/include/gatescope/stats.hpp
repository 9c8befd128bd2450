#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "gatescope/util.hpp"

namespace gatescope {

inline double mean_of(const std::vector<double>& v) {
    if (v.empty()) throw Error("mean of empty sample");
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

// Population variance (divide by n). Used for within-response step spread.
inline double variance_population(const std::vector<double>& v) {
    if (v.empty()) throw Error("variance of empty sample");
    const double m = mean_of(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size());
}

// Sample standard deviation (divide by n-1). Zero for a single observation.
inline double stddev_sample(const std::vector<double>& v) {
    if (v.empty()) throw Error("stddev of empty sample");
    if (v.size() == 1) return 0.0;
    const double m = mean_of(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline double stddev_population(const std::vector<double>& v) {
    return std::sqrt(variance_population(v));
}

// Linear interpolation between order statistics at 0-based position
// q * (n - 1), for q in [0, 1].
inline double percentile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw Error("percentile of empty sample");
    if (q < 0.0) q = 0.0;
    if (q > 1.0) q = 1.0;
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

inline double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    return percentile_sorted(v, q);
}

}  // namespace gatescope
