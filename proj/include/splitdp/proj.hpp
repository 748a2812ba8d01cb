#pragma once

// Linear encoder (b -> d) and decoder (d -> b) used to shrink token
// embeddings before privatization, trained by reconstruction error.

#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Eigenvalues>

#include "core.hpp"
#include "io.hpp"

namespace splitdp {

struct ProjectionPair {
    Matrix enc;  // d x b
    Matrix dec;  // b x d
    bool trained = false;

    size_t input_dim() const noexcept { return static_cast<size_t>(enc.cols()); }
    size_t latent_dim() const noexcept { return static_cast<size_t>(enc.rows()); }

    void validate() const {
        require(enc.rows() >= 1 && enc.cols() >= 1, ErrorKind::invalid_input, "empty projection");
        require(dec.rows() == enc.cols() && dec.cols() == enc.rows(), ErrorKind::invalid_input,
                "encoder/decoder shapes disagree");
        require(enc.rows() <= enc.cols(), ErrorKind::invalid_input, "latent dimension exceeds input dimension");
        require(enc.allFinite() && dec.allFinite(), ErrorKind::invalid_input, "non-finite projection weights");
    }
};

/// Untrained pair with entries iid uniform(-1/sqrt(b), 1/sqrt(b)).
inline ProjectionPair random_projection(size_t b, size_t d, Rng rng) {
    require(b >= 1 && d >= 1 && d <= b, ErrorKind::invalid_parameter, "need 1 <= d <= b");
    const double bound = 1.0 / std::sqrt(static_cast<double>(b));
    ProjectionPair pp;
    pp.enc.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(b));
    pp.dec.resize(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < pp.enc.size(); ++i) pp.enc.data()[i] = bound * (2.0 * rng.uniform() - 1.0);
    for (Eigen::Index i = 0; i < pp.dec.size(); ++i) pp.dec.data()[i] = bound * (2.0 * rng.uniform() - 1.0);
    return pp;
}

inline ProjectionPair identity_projection(size_t b) {
    ProjectionPair pp;
    pp.enc = Matrix::Identity(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(b));
    pp.dec = pp.enc;
    pp.trained = true;
    return pp;
}

inline Matrix encode(const Matrix& x, const ProjectionPair& pp) {
    pp.validate();
    require(x.cols() == pp.enc.cols(), ErrorKind::invalid_input, "embedding width does not match encoder");
    return x * pp.enc.transpose();
}

inline Matrix decode(const Matrix& v, const ProjectionPair& pp) {
    pp.validate();
    require(v.cols() == pp.dec.cols(), ErrorKind::invalid_input, "latent width does not match decoder");
    return v * pp.dec.transpose();
}

struct ProjectionGrad {
    double loss = 0.0;
    Matrix enc;
    Matrix dec;
};

/// Mean squared reconstruction error over all N x b entries, with gradients.
inline ProjectionGrad projection_loss_grad(const ProjectionPair& pp, const Matrix& samples) {
    const double scale = 1.0 / static_cast<double>(samples.size());
    const Matrix latent = samples * pp.enc.transpose();            // N x d
    const Matrix resid = latent * pp.dec.transpose() - samples;    // N x b
    ProjectionGrad g;
    g.loss = resid.squaredNorm() * scale;
    g.dec = 2.0 * scale * resid.transpose() * latent;              // b x d
    g.enc = 2.0 * scale * (resid * pp.dec).transpose() * samples;  // d x b
    return g;
}

inline double projection_loss(const ProjectionPair& pp, const Matrix& samples) {
    return ((samples * pp.enc.transpose()) * pp.dec.transpose() - samples).squaredNorm() /
           static_cast<double>(samples.size());
}

struct ProjectionTrainOptions {
    size_t epochs = 2000;
    double lr = 0.5;
    double min_delta = 1e-10;
};

/// Full-batch gradient descent on the reconstruction MSE. The step is scaled
/// by the largest eigenvalue of the per-entry sample covariance so `lr` is
/// dimensionless; an epoch whose loss would increase is rejected and the
/// rate halved, so the accepted loss sequence is non-increasing. Training
/// stops early once an epoch improves the loss by less than
/// `min_delta` times the initial loss.
inline ProjectionPair train_projection(const Matrix& samples, size_t d, const ProjectionTrainOptions& opt,
                                       Rng rng, std::vector<double>* history = nullptr) {
    require(opt.lr > 0.0, ErrorKind::invalid_parameter, "learning rate must be positive");
    require(samples.rows() >= 1 && samples.allFinite(), ErrorKind::invalid_input, "bad training samples");
    const size_t b = static_cast<size_t>(samples.cols());
    ProjectionPair pp = random_projection(b, d, rng);

    const Matrix gram = samples.transpose() * samples / static_cast<double>(samples.size());
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
    const double curvature = std::max(eig.eigenvalues().maxCoeff() / static_cast<double>(b), 1e-300);

    double lr = opt.lr;
    ProjectionGrad g = projection_loss_grad(pp, samples);
    const double initial = g.loss;
    if (history) history->push_back(g.loss);
    for (size_t epoch = 0; epoch < opt.epochs; ++epoch) {
        ProjectionPair next = pp;
        next.enc -= (lr / curvature) * g.enc;
        next.dec -= (lr / curvature) * g.dec;
        ProjectionGrad ng = projection_loss_grad(next, samples);
        if (!(ng.loss <= g.loss)) {
            lr *= 0.5;
            if (history) history->push_back(g.loss);
            if (lr < 1e-12) break;
            continue;
        }
        const double delta = g.loss - ng.loss;
        pp = std::move(next);
        g = std::move(ng);
        if (history) history->push_back(g.loss);
        if (delta < opt.min_delta * initial) break;
    }
    pp.trained = true;
    return pp;
}

// Projection file: "DELP", version 1, b u32, d u32, then W_enc (d x b) and
// W_dec (b x d) as row-major little-endian f64.

inline Bytes encode_projection(const ProjectionPair& pp) {
    pp.validate();
    ByteWriter w;
    w.magic("DELP");
    w.u8(1);
    w.u32(static_cast<uint32_t>(pp.input_dim()));
    w.u32(static_cast<uint32_t>(pp.latent_dim()));
    write_matrix_f64(w, pp.enc);
    write_matrix_f64(w, pp.dec);
    return w.take();
}

inline ProjectionPair decode_projection(std::span<const uint8_t> bytes) {
    ByteReader r(bytes);
    if (!r.magic("DELP")) throw Error(ErrorKind::protocol, "bad projection magic");
    if (r.u8() != 1) throw Error(ErrorKind::protocol, "unsupported projection version");
    const uint32_t b = r.u32();
    const uint32_t d = r.u32();
    if (static_cast<uint64_t>(b) * d * 16 != r.remaining())
        throw Error(ErrorKind::incomplete_frame, "projection size mismatch");
    ProjectionPair pp;
    pp.enc = read_matrix_f64(r, d, b);
    pp.dec = read_matrix_f64(r, b, d);
    pp.trained = true;
    pp.validate();
    return pp;
}

}  // namespace splitdp
