#pragma once

// User-side privatization pipeline (embed -> encode -> clamp -> mechanism)
// and the seeded synthetic vocabulary/corpus used by the experiments.

#include <cmath>
#include <optional>
#include <vector>

#include "core.hpp"
#include "mech.hpp"
#include "proj.hpp"

namespace splitdp {

struct PipelineTrace {
    Matrix x;      // T x b clean embeddings
    Matrix v;      // T x d clamped latents
    Matrix vhat;   // T x d privatized latents
    Matrix xhat;   // T x b reconstructed embeddings
    std::optional<QuantizedBatch> quantized;
};

struct Pipeline {
    EmbeddingTable table;
    ProjectionPair proj;
    MechanismParams mech;

    void validate() const {
        proj.validate();
        mech.validate();
        require(proj.input_dim() == table.dim(), ErrorKind::invalid_input, "projection does not match table");
        require(proj.latent_dim() == mech.d, ErrorKind::invalid_input, "projection latent dim does not match d");
    }

    /// Clamped latents for `tokens`.
    Matrix latents(const TokenSequence& tokens) const {
        return clamp_rows(encode(table.embed(tokens), proj), mech.c);
    }

    /// The privatized latent batch; token t draws from rng.fork(t).
    Matrix privatize_latents(const Matrix& v, const Rng& rng, std::optional<QuantizedBatch>* quantized = nullptr) const {
        switch (mech.variant) {
            case Variant::stochastic_quant: {
                QuantizedBatch q = stochastic_quantize(v, mech, rng);
                Matrix out = dequantize(q);
                if (quantized) *quantized = std::move(q);
                return out;
            }
            case Variant::gaussian: {
                Matrix out(v.rows(), v.cols());
                for (Eigen::Index t = 0; t < v.rows(); ++t) {
                    Rng token_rng = rng.fork(static_cast<uint64_t>(t));
                    const auto noisy = gaussian_mechanism(row_span(v, t), mech, token_rng);
                    out.row(t) = Eigen::Map<const Eigen::RowVectorXd>(noisy.data(), v.cols());
                }
                return out;
            }
            case Variant::gaussian_qsgd: {
                Matrix out(v.rows(), v.cols());
                for (Eigen::Index t = 0; t < v.rows(); ++t) {
                    Rng token_rng = rng.fork(static_cast<uint64_t>(t));
                    out.row(t) = dequantize(gaussian_then_qsgd(row_span(v, t), mech, token_rng)).row(0);
                }
                return out;
            }
        }
        throw Error(ErrorKind::invalid_parameter, "unknown variant");
    }

    PipelineTrace run(const TokenSequence& tokens, const Rng& rng) const {
        PipelineTrace tr;
        tr.x = table.embed(tokens);
        tr.v = clamp_rows(encode(tr.x, proj), mech.c);
        tr.vhat = privatize_latents(tr.v, rng, &tr.quantized);
        tr.xhat = decode(tr.vhat, proj);
        return tr;
    }

    /// Reconstructed embeddings as seen by the server model.
    Matrix reconstruct(const TokenSequence& tokens, const Rng& rng) const {
        return decode(privatize_latents(latents(tokens), rng), proj);
    }

    /// Matching Gaussian parameters: C = c sqrt(d), sigma from A.
    Pipeline with_variant(Variant variant) const {
        Pipeline p = *this;
        p.mech.variant = variant;
        if (variant != Variant::stochastic_quant) {
            p.mech.C = mech.c * std::sqrt(static_cast<double>(mech.d));
            p.mech.sigma = std::sqrt((mech.A * mech.A - mech.c * mech.c) / static_cast<double>(mech.trials()));
        }
        return p;
    }
};

/// Mean cosine similarity between matching rows of two batches.
inline double mean_row_cosine(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols() && a.rows() > 0, ErrorKind::invalid_input,
            "batches differ in shape");
    double total = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const double na = a.row(i).norm();
        const double nb = b.row(i).norm();
        total += (na > 0.0 && nb > 0.0) ? a.row(i).dot(b.row(i)) / (na * nb) : 0.0;
    }
    return total / static_cast<double>(a.rows());
}

// ---------------------------------------------------------------------------
// Synthetic world

/// Clustered vocabulary: token w belongs to topic w % topics and sits at its
/// topic centre plus isotropic noise. Sequences stay within one topic and
/// draw tokens with Zipf weights, so both the topic (context) and the
/// unigram skew carry signal.
struct WorldConfig {
    size_t vocab = 256;
    size_t dim = 64;
    size_t topics = 8;
    double center_scale = 0.05;  // per-coordinate std of topic centres
    double token_noise = 0.01;   // per-coordinate std around the centre
    double zipf = 1.1;
    size_t sequences = 64;
    size_t length = 32;
};

inline EmbeddingTable synthetic_table(const WorldConfig& cfg, Rng rng) {
    require(cfg.vocab >= 2 && cfg.dim >= 1 && cfg.topics >= 1 && cfg.topics <= cfg.vocab,
            ErrorKind::invalid_parameter, "bad synthetic world shape");
    const auto V = static_cast<Eigen::Index>(cfg.vocab);
    const auto b = static_cast<Eigen::Index>(cfg.dim);
    const auto K = static_cast<Eigen::Index>(cfg.topics);
    Matrix centers(K, b);
    for (Eigen::Index i = 0; i < centers.size(); ++i) centers.data()[i] = cfg.center_scale * rng.normal();
    Matrix rows(V, b);
    for (Eigen::Index w = 0; w < V; ++w)
        for (Eigen::Index j = 0; j < b; ++j) rows(w, j) = centers(w % K, j) + cfg.token_noise * rng.normal();
    return EmbeddingTable(std::move(rows));
}

inline std::vector<TokenSequence> synthetic_corpus(const WorldConfig& cfg, size_t sequences, Rng rng) {
    require(cfg.length >= 2, ErrorKind::invalid_parameter, "sequences need at least two tokens");
    const size_t per_topic = (cfg.vocab + cfg.topics - 1) / cfg.topics;
    std::vector<double> cdf(per_topic);
    double acc = 0.0;
    for (size_t r = 0; r < per_topic; ++r) {
        acc += 1.0 / std::pow(static_cast<double>(r + 1), cfg.zipf);
        cdf[r] = acc;
    }
    std::vector<TokenSequence> corpus(sequences);
    for (auto& seq : corpus) {
        const size_t topic = rng.below(cfg.topics);
        // Members of the topic are topic, topic + K, topic + 2K, ...
        const size_t members = (cfg.vocab - topic + cfg.topics - 1) / cfg.topics;
        const double total = cdf[members - 1];
        seq.ids.reserve(cfg.length);
        for (size_t i = 0; i < cfg.length; ++i) {
            const double u = rng.uniform() * total;
            const size_t rank = static_cast<size_t>(std::lower_bound(cdf.begin(), cdf.begin() + members, u) - cdf.begin());
            seq.ids.push_back(static_cast<uint32_t>(topic + std::min(rank, members - 1) * cfg.topics));
        }
    }
    return corpus;
}

/// Uniformly drawn token ids, used as attack evaluation sets.
inline TokenSequence uniform_tokens(size_t vocab, size_t count, Rng rng) {
    TokenSequence seq;
    seq.ids.reserve(count);
    for (size_t i = 0; i < count; ++i) seq.ids.push_back(static_cast<uint32_t>(rng.below(vocab)));
    return seq;
}

}  // namespace splitdp
