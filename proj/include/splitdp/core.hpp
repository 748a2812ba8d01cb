#pragma once

// Shared domain types, errors, seeded randomness and the exact binomial
// sampler used by every other module.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace splitdp {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class ErrorKind {
    invalid_parameter,
    invalid_input,
    precondition,
    corrupt_payload,
    protocol,
    incomplete_frame,
    tractability,
    bracket_exhausted,
    timeout,
    server_error,
    io,
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::invalid_parameter: return "invalid-parameter";
        case ErrorKind::invalid_input: return "invalid-input";
        case ErrorKind::precondition: return "precondition";
        case ErrorKind::corrupt_payload: return "corrupt-payload";
        case ErrorKind::protocol: return "protocol";
        case ErrorKind::incomplete_frame: return "incomplete-frame";
        case ErrorKind::tractability: return "tractability";
        case ErrorKind::bracket_exhausted: return "bracket-exhausted";
        case ErrorKind::timeout: return "timeout";
        case ErrorKind::server_error: return "server-error";
        case ErrorKind::io: return "io";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline void require(bool ok, ErrorKind kind, const char* what) {
    if (!ok) throw Error(kind, what);
}

// ---------------------------------------------------------------------------
// Randomness

namespace detail {

constexpr uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

constexpr uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace detail

/// Counter-based generator. The i-th output of a handle is a pure function of
/// (seed, stream, i), so a handle can be replayed or forked without shared
/// state. Concurrent users must hold distinct stream ids.
class Rng {
public:
    Rng(uint64_t seed = 0, uint64_t stream = 0)
        : seed_(seed), stream_(stream),
          key_(detail::mix64(seed ^ detail::mix64(stream + detail::kGolden))) {}

    uint64_t seed() const noexcept { return seed_; }
    uint64_t stream() const noexcept { return stream_; }
    uint64_t counter() const noexcept { return counter_; }

    uint64_t next_u64() noexcept {
        ++counter_;
        return detail::mix64(key_ + counter_ * detail::kGolden);
    }

    /// Uniform on the open interval (0, 1) with 53 bits of resolution.
    double uniform() noexcept {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller; consumes exactly two uniforms.
    double normal() noexcept {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    /// Index in [0, n).
    uint64_t below(uint64_t n) noexcept {
        return static_cast<uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

    /// Independent child stream, keyed by this handle's identity and `id`.
    Rng fork(uint64_t id) const noexcept {
        return Rng(seed_, detail::mix64(stream_ * detail::kGolden + id + 1));
    }

private:
    uint64_t seed_;
    uint64_t stream_;
    uint64_t key_;
    uint64_t counter_ = 0;
};

/// Inverse-CDF sampler for Binomial(u, p) with u <= 255. The CDF table is
/// built once with incrementally updated pmf terms and Kahan summation; each
/// draw consumes exactly one uniform, so K is non-decreasing in p for a fixed
/// uniform.
class BinomialSampler {
public:
    BinomialSampler(unsigned trials, double p) : trials_(trials), p_(p) {
        require(trials >= 1 && trials <= 255, ErrorKind::invalid_parameter,
                "binomial trial count must be in [1, 255]");
        require(p >= 0.0 && p <= 1.0, ErrorKind::invalid_parameter,
                "binomial probability must be in [0, 1]");
        // Tabulate on the side with q = min(p, 1-p) so that (1-q)^u >= 2^-255
        // never underflows.
        flipped_ = p > 0.5;
        const double q = flipped_ ? 1.0 - p : p;
        cdf_.resize(trials_ + 1);
        if (q == 0.0) {
            std::fill(cdf_.begin(), cdf_.end(), 1.0);
            return;
        }
        const double ratio = q / (1.0 - q);
        double pmf = std::pow(1.0 - q, static_cast<double>(trials_));
        double sum = pmf;
        double comp = 0.0;
        cdf_[0] = sum;
        for (unsigned k = 0; k < trials_; ++k) {
            pmf *= static_cast<double>(trials_ - k) / static_cast<double>(k + 1) * ratio;
            const double y = pmf - comp;
            const double t = sum + y;
            comp = (t - sum) - y;
            sum = t;
            cdf_[k + 1] = sum;
        }
        cdf_[trials_] = std::max(cdf_[trials_], 1.0);
    }

    unsigned trials() const noexcept { return trials_; }
    double probability() const noexcept { return p_; }

    unsigned operator()(Rng& rng) const noexcept { return from_uniform(rng.uniform()); }

    unsigned from_uniform(double uniform) const noexcept {
        // Flipped side uses 1-U so the map U -> K stays non-decreasing in p.
        const double target = flipped_ ? 1.0 - uniform : uniform;
        unsigned k = 0;
        while (k < trials_ && target > cdf_[k]) ++k;
        return flipped_ ? trials_ - k : k;
    }

private:
    unsigned trials_;
    double p_;
    bool flipped_ = false;
    std::vector<double> cdf_;
};

inline unsigned binomial_draw(Rng& rng, unsigned trials, double p) {
    return BinomialSampler(trials, p)(rng);
}

// ---------------------------------------------------------------------------
// Vector operations

inline bool all_finite(std::span<const double> x) {
    return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

inline std::vector<double> clip_l2(std::span<const double> x, double radius) {
    require(radius > 0.0, ErrorKind::invalid_parameter, "clip radius must be positive");
    require(all_finite(x), ErrorKind::invalid_input, "non-finite input to clip_l2");
    double sq = 0.0;
    for (double v : x) sq += v * v;
    std::vector<double> out(x.begin(), x.end());
    const double norm = std::sqrt(sq);
    if (norm > radius) {
        const double scale = radius / norm;
        for (double& v : out) v *= scale;
    }
    return out;
}

inline std::vector<double> clamp_coords(std::span<const double> v, double bound) {
    require(bound > 0.0, ErrorKind::invalid_parameter, "coordinate bound must be positive");
    require(all_finite(v), ErrorKind::invalid_input, "non-finite input to clamp_coords");
    std::vector<double> out(v.size());
    std::transform(v.begin(), v.end(), out.begin(),
                   [bound](double x) { return std::min(std::max(x, -bound), bound); });
    return out;
}

/// Row-wise clamp of a whole batch.
inline Matrix clamp_rows(const Matrix& v, double bound) {
    require(bound > 0.0, ErrorKind::invalid_parameter, "coordinate bound must be positive");
    require(v.allFinite(), ErrorKind::invalid_input, "non-finite latent batch");
    return v.cwiseMax(-bound).cwiseMin(bound);
}

inline std::span<const double> row_span(const Matrix& m, Eigen::Index i) {
    return {m.data() + i * m.cols(), static_cast<size_t>(m.cols())};
}

// ---------------------------------------------------------------------------
// Domain types

struct TokenSequence {
    std::vector<uint32_t> ids;

    size_t size() const noexcept { return ids.size(); }

    void validate(size_t vocab) const {
        require(!ids.empty(), ErrorKind::invalid_input, "token sequence is empty");
        for (uint32_t id : ids)
            require(id < vocab, ErrorKind::invalid_input, "token id out of vocabulary");
    }
};

/// V x b vocabulary embedding matrix.
class EmbeddingTable {
public:
    EmbeddingTable() = default;

    explicit EmbeddingTable(Matrix rows) : rows_(std::move(rows)) {
        require(rows_.rows() >= 2, ErrorKind::invalid_input, "embedding table needs V >= 2");
        require(rows_.cols() >= 1, ErrorKind::invalid_input, "embedding table needs b >= 1");
        require(rows_.allFinite(), ErrorKind::invalid_input, "embedding table has non-finite entries");
    }

    size_t vocab() const noexcept { return static_cast<size_t>(rows_.rows()); }
    size_t dim() const noexcept { return static_cast<size_t>(rows_.cols()); }
    const Matrix& rows() const noexcept { return rows_; }

    /// T x b batch of the embeddings for `tokens`.
    Matrix embed(const TokenSequence& tokens) const {
        tokens.validate(vocab());
        Matrix out(static_cast<Eigen::Index>(tokens.size()), rows_.cols());
        for (size_t t = 0; t < tokens.size(); ++t) out.row(t) = rows_.row(tokens.ids[t]);
        return out;
    }

private:
    Matrix rows_;
};

}  // namespace splitdp
