#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>

namespace transport::detail {

inline double logistic(double t)
{
    if (t >= 0)
        return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

//! log(1 + exp(t)) without overflow.
inline double softplus(double t)
{
    return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

inline double dot(std::span<const double> a, std::span<const double> b)
{
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        acc += a[i] * b[i];
    return acc;
}

inline bool all_finite(std::span<const double> v)
{
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

//! Running mean/variance (Welford).
struct Moments
{
    std::size_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double x)
    {
        ++n;
        const double delta = x - mean;
        mean += delta / static_cast<double>(n);
        m2 += delta * (x - mean);
    }

    double variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
    double sd() const { return std::sqrt(variance()); }
    double se() const { return n > 0 ? sd() / std::sqrt(static_cast<double>(n)) : 0.0; }
};

//! Co-moments of (num, den) for the ratio mean(num) / mean(den) and its
//! delta-method standard error.
struct RatioMoments
{
    std::size_t n = 0;
    double mean_num = 0.0;
    double mean_den = 0.0;
    double m2_num = 0.0;
    double m2_den = 0.0;
    double co = 0.0;

    void add(double num, double den)
    {
        ++n;
        const double dn = num - mean_num;
        const double dd = den - mean_den;
        mean_num += dn / static_cast<double>(n);
        mean_den += dd / static_cast<double>(n);
        m2_num += dn * (num - mean_num);
        m2_den += dd * (den - mean_den);
        co += dn * (den - mean_den);
    }

    double ratio() const { return mean_num / mean_den; }

    double se() const
    {
        if (n < 2)
            return 0.0;
        const double r = ratio();
        const double k = 1.0 / static_cast<double>(n - 1);
        const double var = (m2_num - 2.0 * r * co + r * r * m2_den) * k;
        return std::sqrt(std::max(var, 0.0) / static_cast<double>(n)) / std::abs(mean_den);
    }
};

} // namespace transport::detail
