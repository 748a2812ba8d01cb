#pragma once

// f-DP accounting for the stochastic quantization mechanism: closed-form
// mu/gamma bounds, Gaussian trade-off curves, the exact single-coordinate
// trade-off and an exact composition oracle.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <vector>

#include "core.hpp"
#include "mech.hpp"

namespace splitdp {

// ---------------------------------------------------------------------------
// Standard normal

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / M_SQRT2); }

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }

/// Inverse of the standard normal CDF. Acklam's rational approximation
/// followed by Halley steps against erfc.
inline double normal_quantile(double p) {
    require(p >= 0.0 && p <= 1.0, ErrorKind::invalid_parameter, "quantile probability outside [0, 1]");
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    if (p == 1.0) return std::numeric_limits<double>::infinity();

    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                   1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                   6.680131188771972e+01,  -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                   -2.549671207150463e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                   3.754408661907416e+00};
    constexpr double lo = 0.02425;

    double x;
    if (p < lo) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - lo) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log1p(-p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    // Halley refinement; the residual is taken on the smaller tail so it
    // keeps full relative precision. The tail branch of the rational fit is
    // only good to ~1e-5, hence a few iterations rather than one.
    for (int iter = 0; iter < 4; ++iter) {
        const double resid = x < 0.0 ? normal_cdf(x) - p : (1.0 - p) - normal_cdf(-x);
        const double dens = normal_pdf(x);
        if (!(dens > 0.0)) break;
        const double step = resid / dens;
        x -= step / (1.0 + 0.5 * x * step);
        if (std::abs(step) <= 1e-16 * std::max(1.0, std::abs(x))) break;
    }
    return x;
}

// ---------------------------------------------------------------------------
// Trade-off curves

/// Piecewise-linear trade-off function stored by its nodes.
struct TradeoffCurve {
    std::vector<double> alpha;
    std::vector<double> beta;

    size_t size() const noexcept { return alpha.size(); }

    /// Linear interpolation between stored nodes.
    double at(double a) const {
        require(!alpha.empty(), ErrorKind::invalid_input, "empty trade-off curve");
        if (a <= alpha.front()) return beta.front();
        if (a >= alpha.back()) return beta.back();
        const auto it = std::upper_bound(alpha.begin(), alpha.end(), a);
        const size_t hi = static_cast<size_t>(it - alpha.begin());
        const size_t lo = hi - 1;
        const double w = (a - alpha[lo]) / (alpha[hi] - alpha[lo]);
        return beta[lo] + w * (beta[hi] - beta[lo]);
    }

    /// Structural invariants: alpha strictly increasing over [0, 1], beta
    /// non-increasing, beta(1) = 0 and every node on or below the chord of
    /// its neighbours (convexity).
    bool is_valid(double tol = 1e-12) const {
        if (alpha.size() < 2 || alpha.size() != beta.size()) return false;
        if (std::abs(alpha.front()) > tol || std::abs(alpha.back() - 1.0) > tol) return false;
        if (std::abs(beta.back()) > tol) return false;
        for (size_t i = 1; i < alpha.size(); ++i) {
            if (!(alpha[i] > alpha[i - 1])) return false;
            if (beta[i] > beta[i - 1] + tol) return false;
        }
        for (size_t i = 1; i + 1 < alpha.size(); ++i) {
            const double w = (alpha[i] - alpha[i - 1]) / (alpha[i + 1] - alpha[i - 1]);
            const double chord = beta[i - 1] + w * (beta[i + 1] - beta[i - 1]);
            if (beta[i] > chord + tol) return false;
        }
        return true;
    }

    void write_csv(std::ostream& os) const {
        os << "# splitdp tradeoff-curve v1\n";
        os << "alpha,beta\n";
        char buf[64];
        for (size_t i = 0; i < alpha.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", alpha[i], beta[i]);
            os << buf;
        }
    }
};

/// `points` uniformly spaced alphas from 0 to 1 inclusive.
inline std::vector<double> uniform_grid(size_t points = 1001) {
    require(points >= 2, ErrorKind::invalid_parameter, "grid needs at least two points");
    std::vector<double> g(points);
    for (size_t i = 0; i < points; ++i) g[i] = static_cast<double>(i) / static_cast<double>(points - 1);
    g.back() = 1.0;
    return g;
}

/// G_mu(alpha) = Phi(Phi^{-1}(1 - alpha) - mu), extended by 1 below 0 and
/// by 0 above 1.
inline double gdp_value(double mu, double a) {
    require(mu >= 0.0, ErrorKind::invalid_parameter, "mu must be non-negative");
    if (a <= 0.0) return 1.0;
    if (a >= 1.0) return 0.0;
    if (mu == 0.0) return 1.0 - a;
    return normal_cdf(-normal_quantile(a) - mu);
}

inline TradeoffCurve gdp_curve(double mu, const std::vector<double>& alphas) {
    require(mu >= 0.0, ErrorKind::invalid_parameter, "mu must be non-negative");
    TradeoffCurve curve;
    curve.alpha = alphas;
    curve.beta.reserve(alphas.size());
    for (double a : alphas) curve.beta.push_back(gdp_value(mu, a));
    return curve;
}

/// Closed-form trade-off of one stochastic binary mechanism under the worst
/// pair v = c vs v' = -c.
inline double binary_tradeoff_value(double c, double A, double a) {
    require(A > c && c > 0.0, ErrorKind::invalid_parameter, "binary trade-off needs A > c > 0");
    const double kink = (A - c) / (2.0 * A);
    if (a <= 0.0) return 1.0;
    if (a >= 1.0) return 0.0;
    if (a <= kink) return 1.0 - (A + c) / (A - c) * a;
    return (A - c) / (A + c) * (1.0 - a);
}

inline TradeoffCurve binary_tradeoff(double c, double A) {
    require(A > c && c > 0.0, ErrorKind::invalid_parameter, "binary trade-off needs A > c > 0");
    const double kink = (A - c) / (2.0 * A);
    return TradeoffCurve{{0.0, kink, 1.0}, {1.0, kink, 0.0}};
}

// ---------------------------------------------------------------------------
// Closed-form accountant

struct GdpBound {
    double mu = 0.0;
    double gamma = 0.0;

    /// The sandwich bound is only meaningful for gamma < 1/2.
    bool usable() const noexcept { return gamma < 0.5; }
};

struct TradeoffStats {
    double kl = 0.0;
    double kappa2 = 0.0;
    double kappa3 = 0.0;
    double kappa3bar = 0.0;
};

namespace detail {

inline void require_strict_scale(double c, double A) {
    require(c > 0.0 && std::isfinite(A) && A > c, ErrorKind::invalid_parameter, "accountant needs A > c > 0");
}

inline double composition_count(unsigned n, unsigned d) {
    require(n >= 1 && n <= 8 && d >= 1, ErrorKind::invalid_parameter, "bad (n, d)");
    return static_cast<double>((1u << n) - 1) * static_cast<double>(d);
}

}  // namespace detail

inline double mu_of(double c, double A, unsigned n, unsigned d) {
    detail::require_strict_scale(c, A);
    const double m = detail::composition_count(n, d);
    return 2.0 * std::sqrt(m) * c / std::sqrt(A * A - c * c);
}

inline double gamma_of(double c, double A, unsigned n, unsigned d) {
    detail::require_strict_scale(c, A);
    const double m = detail::composition_count(n, d);
    const double r = c / A;
    const double bracket = (A - c) / (2.0 * A) * std::pow(std::abs(1.0 + r), 3) +
                           (A + c) / (2.0 * A) * std::pow(std::abs(1.0 - r), 3);
    return 0.56 * bracket / (std::pow(1.0 - r * r, 1.5) * std::sqrt(m));
}

inline double mu_of(const MechanismParams& p) { return mu_of(p.c, p.A, p.n, p.d); }
inline double gamma_of(const MechanismParams& p) { return gamma_of(p.c, p.A, p.n, p.d); }

inline GdpBound gdp_bound(const MechanismParams& p) { return {mu_of(p), gamma_of(p)}; }

inline double gaussian_mu(double C, double sigma) {
    require(C > 0.0 && sigma > 0.0, ErrorKind::invalid_parameter, "gaussian_mu needs C > 0 and sigma > 0");
    return 2.0 * C / sigma;
}

/// Scale A with A^2 - c^2 = (2^n - 1) sigma^2, under which the quantizer and
/// the Gaussian mechanism with C = c sqrt(d) share the same mu.
inline double matched_A(double c, double sigma, unsigned n) {
    require(c > 0.0 && sigma >= 0.0 && n >= 1 && n <= 8, ErrorKind::invalid_parameter, "bad matched_A inputs");
    return std::sqrt(c * c + static_cast<double>((1u << n) - 1) * sigma * sigma);
}

/// Var(quantizer) - Var(Gaussian) at matched parameters:
/// (c^2 d - |v|^2) / (2^n - 1).
inline double variance_gap(std::span<const double> v, const MechanismParams& p, double sigma) {
    const double u = static_cast<double>(p.trials());
    require(std::abs(p.A * p.A - p.c * p.c - u * sigma * sigma) <= 1e-9 * p.A * p.A,
            ErrorKind::invalid_parameter, "variance_gap needs A = matched_A(c, sigma, n)");
    double sq = 0.0;
    for (double x : v) {
        require(std::abs(x) <= p.c, ErrorKind::precondition, "coordinate outside [-c, c]");
        sq += x * x;
    }
    return (p.c * p.c * static_cast<double>(v.size()) - sq) / u;
}

inline TradeoffStats tradeoff_stats(double c, double A) {
    detail::require_strict_scale(c, A);
    const double log_ratio = std::log((A + c) / (A - c));
    const double r = c / A;
    TradeoffStats s;
    s.kl = r * log_ratio;
    s.kappa2 = log_ratio * log_ratio;
    s.kappa3 = std::pow(std::abs(log_ratio), 3);
    s.kappa3bar = ((A - c) / (2.0 * A) * std::pow(std::abs(1.0 + r), 3) +
                   (A + c) / (2.0 * A) * std::pow(std::abs(1.0 - r), 3)) *
                  s.kappa3;
    return s;
}

/// Central-limit aggregation of `m` identical symmetric trade-off functions.
inline GdpBound bound_from_stats(const TradeoffStats& s, double m) {
    const double spread = m * s.kappa2 - m * s.kl * s.kl;
    require(spread > 0.0, ErrorKind::invalid_parameter, "degenerate trade-off statistics");
    return {2.0 * m * s.kl / std::sqrt(spread), 0.56 * m * s.kappa3bar / std::pow(spread, 1.5)};
}

// ---------------------------------------------------------------------------
// Exact composition

inline constexpr unsigned kMaxExactCompositions = 4096;

/// Nodes of the exact trade-off curve of m iid stochastic binary mechanisms
/// under v = c vs v' = -c. The number of +A outputs is sufficient; its
/// likelihood ratio is monotone, so the Neyman-Pearson tests reject the
/// smallest counts first and node j is (P[K < j], Q[K >= j]).
inline TradeoffCurve composed_breakpoints(double c, double A, unsigned m) {
    detail::require_strict_scale(c, A);
    require(m >= 1, ErrorKind::invalid_parameter, "composition count must be >= 1");
    if (m > kMaxExactCompositions) throw Error(ErrorKind::tractability, "composition count exceeds 4096");

    const double p_null = (A + c) / (2.0 * A);  // +A probability under v = c
    const double p_alt = (A - c) / (2.0 * A);   // under v' = -c
    const double md = static_cast<double>(m);
    std::vector<double> pmf_null(m + 1), pmf_alt(m + 1);
    for (unsigned k = 0; k <= m; ++k) {
        const double kd = static_cast<double>(k);
        const double log_choose = std::lgamma(md + 1.0) - std::lgamma(kd + 1.0) - std::lgamma(md - kd + 1.0);
        pmf_null[k] = std::exp(log_choose + kd * std::log(p_null) + (md - kd) * std::log1p(-p_null));
        pmf_alt[k] = std::exp(log_choose + kd * std::log(p_alt) + (md - kd) * std::log1p(-p_alt));
    }

    // lgamma near m = 4096 carries ~1e-12 relative error; renormalising keeps
    // both cumulative sums inside [0, 1].
    auto normalise = [](std::vector<double>& pmf) {
        double total = 0.0, carry = 0.0;
        for (double x : pmf) {
            const double y = x - carry;
            const double t = total + y;
            carry = (t - total) - y;
            total = t;
        }
        for (double& x : pmf) x /= total;
    };
    normalise(pmf_null);
    normalise(pmf_alt);

    TradeoffCurve curve;
    curve.alpha.assign(m + 2, 0.0);
    curve.beta.assign(m + 2, 0.0);
    // alpha as compensated prefix sums of the null pmf.
    double sum = 0.0, comp = 0.0;
    for (unsigned j = 1; j <= m + 1; ++j) {
        const double y = pmf_null[j - 1] - comp;
        const double t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        curve.alpha[j] = std::min(sum, 1.0);
    }
    // beta as compensated suffix sums of the alternative pmf.
    sum = 0.0;
    comp = 0.0;
    for (unsigned j = m + 1; j-- > 0;) {
        const double y = pmf_alt[j] - comp;
        const double t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        curve.beta[j] = std::min(sum, 1.0);
    }
    curve.alpha.front() = 0.0;
    curve.alpha.back() = 1.0;
    curve.beta.front() = 1.0;
    curve.beta.back() = 0.0;

    // Drop nodes whose alpha underflowed to a duplicate.
    TradeoffCurve out;
    for (size_t i = 0; i < curve.size(); ++i) {
        if (!out.alpha.empty() && !(curve.alpha[i] > out.alpha.back())) {
            // f(0) = 1 exactly; elsewhere keep the most powerful test.
            if (out.alpha.size() > 1) out.beta.back() = std::min(out.beta.back(), curve.beta[i]);
            continue;
        }
        out.alpha.push_back(curve.alpha[i]);
        out.beta.push_back(curve.beta[i]);
    }
    out.alpha.back() = 1.0;
    out.beta.back() = 0.0;
    return out;
}

/// Exact composed curve sampled on `alphas`, with every exact breakpoint kept
/// as a node so interpolation between stored nodes is exact.
inline TradeoffCurve compose_exact(double c, double A, unsigned m, const std::vector<double>& alphas) {
    const TradeoffCurve nodes = composed_breakpoints(c, A, m);
    std::vector<double> merged = alphas;
    merged.insert(merged.end(), nodes.alpha.begin(), nodes.alpha.end());
    std::sort(merged.begin(), merged.end());
    TradeoffCurve out;
    for (double a : merged) {
        if (a < 0.0 || a > 1.0) continue;
        if (!out.alpha.empty() && a <= out.alpha.back()) continue;
        out.alpha.push_back(a);
        out.beta.push_back(nodes.at(a));
    }
    return out;
}

}  // namespace splitdp
