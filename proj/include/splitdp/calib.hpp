#pragma once

// Privacy level <-> mechanism scale, and bisection on mu to hit a target
// attack success rate.

#include <cmath>
#include <ostream>
#include <vector>

#include "attack.hpp"
#include "fdp.hpp"
#include "pipeline.hpp"

namespace splitdp {

/// Inverse of mu_of in A: A = c sqrt(1 + 4 (2^n - 1) d / mu^2).
inline double A_of_mu(double mu, double c, unsigned n, unsigned d) {
    require(mu > 0.0 && std::isfinite(mu), ErrorKind::invalid_parameter, "mu must be positive");
    require(c > 0.0, ErrorKind::invalid_parameter, "c must be positive");
    const double m = static_cast<double>((1u << n) - 1) * static_cast<double>(d);
    return c * std::sqrt(1.0 + 4.0 * m / (mu * mu));
}

/// Pipeline copy whose stochastic quantizer runs at privacy level mu.
inline Pipeline at_mu(const Pipeline& base, double mu) {
    Pipeline p = base;
    p.mech.A = A_of_mu(mu, p.mech.c, p.mech.n, p.mech.d);
    return p;
}

/// Embedding inversion on the dequantized latents against the adversary's
/// latent reference (the default attack surface).
inline AttackReport measure_attack(const Pipeline& pipeline, const TokenSequence& eval, Metric metric, const Rng& rng) {
    const Matrix reference = latent_reference(pipeline.table, pipeline.proj, pipeline.mech.c);
    const Matrix observed = pipeline.privatize_latents(pipeline.latents(eval), rng);
    return invert_embeddings(observed, reference, eval, metric, "latent");
}

/// Embedding-space variant: decoded xhat against the raw table.
inline AttackReport measure_attack_embedding(const Pipeline& pipeline, const TokenSequence& eval, Metric metric,
                                             const Rng& rng) {
    return invert_embeddings(pipeline.reconstruct(eval, rng), pipeline.table.rows(), eval, metric, "embedding");
}

struct CalibrationOptions {
    double tol = 0.01;
    size_t max_iters = 40;
    double mu_lo = 0.1;
    double mu_hi = 200.0;
    Metric metric = Metric::cosine;
};

struct CalibrationProbe {
    size_t iter = 0;
    double mu = 0.0;
    double A = 0.0;
    double asr = 0.0;
};

struct CalibrationResult {
    double mu = 0.0;
    double A = 0.0;
    double asr = 0.0;
    bool converged = false;
    std::vector<CalibrationProbe> trace;

    void write_trace_csv(std::ostream& os) const {
        os << "# splitdp calibration-trace v1\n";
        os << "iter,mu,A,asr\n";
        char buf[128];
        for (const auto& p : trace) {
            std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", p.iter, p.mu, p.A, p.asr);
            os << buf;
        }
    }
};

class BracketExhausted : public Error {
public:
    BracketExhausted(double asr_lo, double asr_hi)
        : Error(ErrorKind::bracket_exhausted, "target ASR outside [" + std::to_string(asr_lo) + ", " +
                                                  std::to_string(asr_hi) + "] spanned by the mu bracket"),
          asr_lo_(asr_lo), asr_hi_(asr_hi) {}

    double asr_lo() const noexcept { return asr_lo_; }
    double asr_hi() const noexcept { return asr_hi_; }

private:
    double asr_lo_;
    double asr_hi_;
};

/// Bisection (in log mu) for the mu whose measured ASR matches `target`.
/// Every probe quantizes with the same handle `rng`, so ASR(mu) is a
/// deterministic function and the bisection is well defined.
inline CalibrationResult calibrate_to_asr(double target, const Pipeline& base, const TokenSequence& eval,
                                          const CalibrationOptions& opt, const Rng& rng) {
    require(target > 0.0 && target < 1.0, ErrorKind::invalid_parameter, "target ASR must be in (0, 1)");
    require(opt.tol > 0.0, ErrorKind::invalid_parameter, "tolerance must be positive");
    require(opt.mu_lo > 0.0 && opt.mu_hi > opt.mu_lo, ErrorKind::invalid_parameter, "bad mu bracket");
    require(base.mech.variant == Variant::stochastic_quant, ErrorKind::invalid_parameter,
            "calibration targets the stochastic quantizer");

    CalibrationResult result;
    size_t iter = 0;
    auto probe = [&](double mu) {
        const Pipeline p = at_mu(base, mu);
        const double asr = measure_attack(p, eval, opt.metric, rng).asr;
        result.trace.push_back({iter++, mu, p.mech.A, asr});
        return result.trace.back();
    };
    auto best_probe = [&]() {
        const CalibrationProbe* best = &result.trace.front();
        for (const auto& p : result.trace)
            if (std::abs(p.asr - target) < std::abs(best->asr - target)) best = &p;
        return *best;
    };
    auto finish = [&](bool converged) {
        const CalibrationProbe b = best_probe();
        result.mu = b.mu;
        result.A = b.A;
        result.asr = b.asr;
        result.converged = converged;
        return result;
    };

    const CalibrationProbe lo = probe(opt.mu_lo);
    if (std::abs(lo.asr - target) <= opt.tol) return finish(true);
    const CalibrationProbe hi = probe(opt.mu_hi);
    if (std::abs(hi.asr - target) <= opt.tol) return finish(true);
    if (target < lo.asr || target > hi.asr) throw BracketExhausted(lo.asr, hi.asr);

    double log_lo = std::log(opt.mu_lo);
    double log_hi = std::log(opt.mu_hi);
    while (iter < opt.max_iters) {
        const CalibrationProbe mid = probe(std::exp(0.5 * (log_lo + log_hi)));
        if (std::abs(mid.asr - target) <= opt.tol) return finish(true);
        if (mid.asr < target)
            log_lo = std::log(mid.mu);
        else
            log_hi = std::log(mid.mu);
    }
    return finish(false);
}

}  // namespace splitdp
