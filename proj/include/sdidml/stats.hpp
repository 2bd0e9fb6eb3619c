#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

namespace sdidml {

// Standard normal CDF via the complementary error function.
inline double normal_cdf(double x) {
    return 0.5 * std::erfc(-x / 1.4142135623730950488);
}

inline double normal_two_sided_p(double z) {
    return 2.0 * normal_cdf(-std::fabs(z));
}

namespace detail {

// Continued fraction for the regularized incomplete beta (Lentz's method).
inline double beta_cf(double a, double b, double x) {
    const double eps = 3e-16;
    const double fpmin = 1e-300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 500; ++m) {
        int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return h;
}

} // namespace detail

// Regularized incomplete beta I_x(a, b), accurate to ~1e-14.
inline double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                      a * std::log(x) + b * std::log1p(-x);
    double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * detail::beta_cf(a, b, x) / a;
    }
    return 1.0 - front * detail::beta_cf(b, a, 1.0 - x) / b;
}

// Student-t CDF via the incomplete beta; stable to ~1e-12 over all df >= 1.
inline double student_t_cdf(double t, double df) {
    if (df <= 0.0) throw std::invalid_argument("student_t_cdf: df must be positive");
    if (t == 0.0) return 0.5;
    double x = df / (df + t * t);
    double p = 0.5 * incomplete_beta(0.5 * df, 0.5, x);
    return t > 0.0 ? 1.0 - p : p;
}

inline double student_t_two_sided_p(double t, double df) {
    return 2.0 * student_t_cdf(-std::fabs(t), df);
}

inline double normal_pdf(double x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * 3.14159265358979323846);
}

inline double student_t_pdf(double t, double df) {
    double ln = std::lgamma(0.5 * (df + 1.0)) - std::lgamma(0.5 * df) -
                0.5 * std::log(df * 3.14159265358979323846) -
                0.5 * (df + 1.0) * std::log1p(t * t / df);
    return std::exp(ln);
}

// Inverse Student-t CDF: bisection bracket then Newton polish.
inline double student_t_quantile(double p, double df) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("student_t_quantile: p outside (0,1)");
    if (p == 0.5) return 0.0;
    double lo = -1e3, hi = 1e3;
    double t = 0.0;
    for (int i = 0; i < 80; ++i) {
        t = 0.5 * (lo + hi);
        if (student_t_cdf(t, df) < p) lo = t; else hi = t;
    }
    for (int i = 0; i < 4; ++i) {
        double f = student_t_cdf(t, df) - p;
        double d = student_t_pdf(t, df);
        if (d <= 0.0) break;
        double step = f / d;
        if (!std::isfinite(step)) break;
        t -= step;
    }
    return t;
}

// Normal critical value used for every z-based 95% interval. Fixed constant
// rather than a computed quantile so printed intervals are platform-stable.
inline constexpr double kNormal975 = 1.959964;

} // namespace sdidml
