#pragma once

// Privacy mechanisms: stochastic n-bit quantization, the Gaussian mechanism,
// and the Gaussian mechanism followed by unbiased stochastic rounding (the
// QSGD-style baseline).

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "core.hpp"

namespace splitdp {

enum class Variant { stochastic_quant, gaussian, gaussian_qsgd };

inline const char* to_string(Variant v) {
    switch (v) {
        case Variant::stochastic_quant: return "stochastic-quant";
        case Variant::gaussian: return "gaussian";
        case Variant::gaussian_qsgd: return "gaussian-qsgd";
    }
    return "unknown";
}

inline Variant parse_variant(const std::string& s) {
    if (s == "stochastic-quant" || s == "sq") return Variant::stochastic_quant;
    if (s == "gaussian") return Variant::gaussian;
    if (s == "gaussian-qsgd" || s == "qsgd") return Variant::gaussian_qsgd;
    throw Error(ErrorKind::invalid_parameter, "unknown mechanism variant '" + s + "'");
}

struct MechanismParams {
    double c = 0.05;   // per-coordinate bound on the latent
    double A = 0.1;    // output scale, A >= c
    unsigned n = 1;    // bits per coordinate
    unsigned d = 1;    // latent dimension
    Variant variant = Variant::stochastic_quant;
    double sigma = 0.0;  // Gaussian std (gaussian variants)
    double C = 0.0;      // l2 clip radius (gaussian variants)

    unsigned levels() const noexcept { return 1u << n; }
    unsigned trials() const noexcept { return levels() - 1; }

    void validate() const {
        require(c > 0.0 && std::isfinite(c), ErrorKind::invalid_parameter, "c must be positive");
        require(std::isfinite(A) && A >= c, ErrorKind::invalid_parameter, "A must satisfy A >= c");
        require(n >= 1 && n <= 8, ErrorKind::invalid_parameter, "bit-width n must be in [1, 8]");
        require(d >= 1, ErrorKind::invalid_parameter, "latent dimension d must be >= 1");
        if (variant != Variant::stochastic_quant) {
            require(sigma > 0.0, ErrorKind::invalid_parameter, "sigma must be positive");
            require(C > 0.0, ErrorKind::invalid_parameter, "clip radius C must be positive");
        }
    }
};

/// T x d level indices, each in [0, 2^n - 1], stored token-major.
struct QuantizedBatch {
    uint32_t T = 0;
    uint32_t d = 0;
    unsigned n = 1;
    double A = 0.0;
    double c = 0.0;
    std::vector<uint8_t> levels;

    uint8_t level(size_t token, size_t coord) const { return levels[token * d + coord]; }

    friend bool operator==(const QuantizedBatch&, const QuantizedBatch&) = default;
};

/// Value of level k on the uniform grid over [-A, A].
inline double level_value(unsigned k, unsigned n, double A) {
    const double u = static_cast<double>((1u << n) - 1);
    return (2.0 * k - u) / u * A;
}

/// Draw order: token i uses rng.fork(i); coordinates consume that stream in
/// order, one uniform each.
inline QuantizedBatch stochastic_quantize(const Matrix& v, const MechanismParams& p, const Rng& rng) {
    require(p.variant == Variant::stochastic_quant, ErrorKind::invalid_parameter,
            "stochastic_quantize needs the stochastic-quant variant");
    p.validate();
    require(v.cols() == static_cast<Eigen::Index>(p.d), ErrorKind::invalid_input,
            "latent width does not match d");
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double x = v.data()[i];
        require(std::isfinite(x) && x >= -p.c && x <= p.c, ErrorKind::precondition,
                "latent coordinate outside [-c, c]");
    }
    QuantizedBatch q;
    q.T = static_cast<uint32_t>(v.rows());
    q.d = p.d;
    q.n = p.n;
    q.A = p.A;
    q.c = p.c;
    q.levels.resize(static_cast<size_t>(v.size()));
    const unsigned u = p.trials();
    for (Eigen::Index t = 0; t < v.rows(); ++t) {
        Rng token_rng = rng.fork(static_cast<uint64_t>(t));
        for (Eigen::Index j = 0; j < v.cols(); ++j) {
            const double prob = std::clamp((p.A + v(t, j)) / (2.0 * p.A), 0.0, 1.0);
            q.levels[static_cast<size_t>(t * v.cols() + j)] =
                static_cast<uint8_t>(BinomialSampler(u, prob)(token_rng));
        }
    }
    return q;
}

inline Matrix dequantize(const QuantizedBatch& q) {
    require(q.n >= 1 && q.n <= 8, ErrorKind::corrupt_payload, "bit-width out of range");
    require(q.levels.size() == static_cast<size_t>(q.T) * q.d, ErrorKind::corrupt_payload,
            "level count does not match T x d");
    const unsigned top = (1u << q.n) - 1;
    Matrix out(q.T, q.d);
    for (size_t i = 0; i < q.levels.size(); ++i) {
        require(q.levels[i] <= top, ErrorKind::corrupt_payload, "level index >= 2^n");
        out.data()[i] = level_value(q.levels[i], q.n, q.A);
    }
    return out;
}

/// Total variance of the quantized vector, (d A^2 - |v|^2) / (2^n - 1).
inline double mechanism_variance(std::span<const double> v, const MechanismParams& p) {
    require(p.A >= p.c && p.n >= 1 && p.n <= 8, ErrorKind::invalid_parameter, "bad mechanism params");
    double sq = 0.0;
    for (double x : v) {
        require(std::abs(x) <= p.c, ErrorKind::precondition, "coordinate outside [-c, c]");
        sq += x * x;
    }
    return (static_cast<double>(v.size()) * p.A * p.A - sq) / static_cast<double>(p.trials());
}

inline std::vector<double> gaussian_mechanism(std::span<const double> x, const MechanismParams& p, Rng& rng) {
    require(p.variant != Variant::stochastic_quant, ErrorKind::invalid_parameter,
            "gaussian_mechanism needs a gaussian variant");
    require(p.sigma > 0.0, ErrorKind::invalid_parameter, "sigma must be positive");
    require(p.C > 0.0, ErrorKind::invalid_parameter, "clip radius C must be positive");
    std::vector<double> out = clip_l2(x, p.C);
    for (double& v : out) v += p.sigma * rng.normal();
    return out;
}

/// Unbiased stochastic rounding of y in [-A, A] onto the 2^n level grid.
inline unsigned stochastic_round(double y, unsigned n, double A, Rng& rng) {
    const unsigned top = (1u << n) - 1;
    const double pos = std::clamp((y + A) / (2.0 * A), 0.0, 1.0) * top;
    const double lower = std::floor(pos);
    const double frac = pos - lower;
    unsigned k = static_cast<unsigned>(lower);
    const double draw = rng.uniform();
    if (k < top && draw < frac) ++k;
    return std::min(k, top);
}

/// Gaussian mechanism, saturation to [-A, A], then stochastic rounding. Noise
/// for all coordinates is drawn before the rounding uniforms.
inline QuantizedBatch gaussian_then_qsgd(std::span<const double> x, const MechanismParams& p, Rng& rng) {
    require(p.variant == Variant::gaussian_qsgd, ErrorKind::invalid_parameter,
            "gaussian_then_qsgd needs the gaussian-qsgd variant");
    require(p.A > 0.0 && p.n >= 1 && p.n <= 8, ErrorKind::invalid_parameter, "bad quantizer params");
    const std::vector<double> noisy = gaussian_mechanism(x, p, rng);
    QuantizedBatch q;
    q.T = 1;
    q.d = static_cast<uint32_t>(x.size());
    q.n = p.n;
    q.A = p.A;
    q.c = p.c;
    q.levels.reserve(noisy.size());
    for (double y : noisy)
        q.levels.push_back(static_cast<uint8_t>(stochastic_round(std::clamp(y, -p.A, p.A), p.n, p.A, rng)));
    return q;
}

}  // namespace splitdp
