#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace gnsse::stats {

/// Standard normal CDF.
inline double normal_cdf(double z)
{
    return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

/// P(|Z| > z) for standard normal Z.
inline double two_sided_tail(double z)
{
    return std::erfc(std::abs(z) / std::sqrt(2.0));
}

inline double log_binomial_pmf(std::size_t k, std::size_t n, double p)
{
    if (p <= 0.0)
        return k == 0 ? 0.0 : -std::numeric_limits<double>::infinity();
    if (p >= 1.0)
        return k == n ? 0.0 : -std::numeric_limits<double>::infinity();
    const auto kd = static_cast<double>(k);
    const auto nd = static_cast<double>(n);
    return std::lgamma(nd + 1.0) - std::lgamma(kd + 1.0) - std::lgamma(nd - kd + 1.0) + kd * std::log(p) +
           (nd - kd) * std::log1p(-p);
}

/// Two-sided exact binomial test: sum of the probabilities of all outcomes
/// no more likely than the observed one.
inline double binomial_two_sided_p(std::size_t k, std::size_t n, double p)
{
    if (k > n)
        throw std::invalid_argument("binomial_two_sided_p: k > n");
    const double lobs = log_binomial_pmf(k, n, p);
    const double slack = 1e-7;
    double total = 0.0;
    for (std::size_t i = 0; i <= n; ++i) {
        const double li = log_binomial_pmf(i, n, p);
        if (li <= lobs + slack)
            total += std::exp(li);
    }
    return std::min(1.0, total);
}

/// Running sums for mean and standard error.
struct Moments {
    double n = 0.0;
    double sum = 0.0;
    double sum_sq = 0.0;

    void add(double v)
    {
        n += 1.0;
        sum += v;
        sum_sq += v * v;
    }
    void merge(const Moments& o)
    {
        n += o.n;
        sum += o.sum;
        sum_sq += o.sum_sq;
    }
    double mean() const { return n > 0 ? sum / n : 0.0; }
    double variance() const
    {
        if (n < 2)
            return 0.0;
        const double m = mean();
        return std::max(0.0, (sum_sq - n * m * m) / (n - 1.0));
    }
    double se() const { return n > 0 ? std::sqrt(variance() / n) : 0.0; }
};

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_se = 0.0;
};

/// Weighted least squares line y = intercept + slope x.
inline LineFit fit_line(std::span<const double> x, std::span<const double> y, std::span<const double> w = {})
{
    const std::size_t n = x.size();
    if (n < 2 || y.size() != n || (!w.empty() && w.size() != n))
        throw std::invalid_argument("fit_line: need at least two points of matching length");
    double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double wi = w.empty() ? 1.0 : w[i];
        sw += wi;
        sx += wi * x[i];
        sy += wi * y[i];
        sxx += wi * x[i] * x[i];
        sxy += wi * x[i] * y[i];
    }
    const double det = sw * sxx - sx * sx;
    if (det == 0.0)
        throw std::invalid_argument("fit_line: degenerate abscissae");
    LineFit f;
    f.slope = (sw * sxy - sx * sy) / det;
    f.intercept = (sy - f.slope * sx) / sw;
    f.slope_se = std::sqrt(sw / det);
    return f;
}

}  // namespace gnsse::stats
