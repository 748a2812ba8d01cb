#pragma once

// Nearest-neighbour embedding inversion and attack success rate.

#include <string>
#include <vector>

#include "core.hpp"
#include "proj.hpp"

namespace splitdp {

enum class Metric { cosine, l2 };

inline const char* to_string(Metric m) { return m == Metric::cosine ? "cosine" : "l2"; }

inline Metric parse_metric(const std::string& s) {
    if (s == "cosine") return Metric::cosine;
    if (s == "l2") return Metric::l2;
    throw Error(ErrorKind::invalid_parameter, "unknown metric '" + s + "'");
}

struct AttackReport {
    size_t total = 0;
    size_t recovered = 0;
    double asr = 0.0;
    std::vector<bool> hits;
    std::vector<uint32_t> predictions;
    Metric metric = Metric::cosine;
    std::string space = "latent";

    std::string to_json() const {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", asr);
        return std::string("{\"total\":") + std::to_string(total) + ",\"recovered\":" + std::to_string(recovered) +
               ",\"asr\":" + buf + ",\"metric\":\"" + to_string(metric) + "\",\"space\":\"" + space + "\"}";
    }
};

/// For each observed row, predict the reference row with the highest cosine
/// similarity (or the smallest l2 distance); ties go to the lowest index.
inline AttackReport invert_embeddings(const Matrix& observed, const Matrix& reference, const TokenSequence& truth,
                                      Metric metric, std::string space = "latent") {
    require(observed.cols() == reference.cols(), ErrorKind::invalid_input, "observed/reference widths differ");
    require(reference.rows() >= 1, ErrorKind::invalid_input, "empty reference table");
    require(static_cast<size_t>(observed.rows()) == truth.size(), ErrorKind::invalid_input,
            "truth length does not match observations");
    truth.validate(static_cast<size_t>(reference.rows()));

    Vector ref_norms = reference.rowwise().norm();
    Vector ref_sq = reference.rowwise().squaredNorm();
    AttackReport report;
    report.metric = metric;
    report.space = std::move(space);
    report.total = truth.size();
    report.hits.resize(report.total);
    report.predictions.resize(report.total);
    // Blocked scoring: observed x reference^T, then a scan per row.
    constexpr Eigen::Index block = 256;
    for (Eigen::Index start = 0; start < observed.rows(); start += block) {
        const Eigen::Index len = std::min(block, observed.rows() - start);
        const Matrix dots = observed.middleRows(start, len) * reference.transpose();
        for (Eigen::Index i = 0; i < len; ++i) {
            Eigen::Index best = 0;
            double best_score = -std::numeric_limits<double>::infinity();
            for (Eigen::Index w = 0; w < reference.rows(); ++w) {
                double score;
                if (metric == Metric::cosine) {
                    // The observed norm is common to every candidate.
                    score = ref_norms(w) > 0.0 ? dots(i, w) / ref_norms(w) : -std::numeric_limits<double>::infinity();
                } else {
                    score = 2.0 * dots(i, w) - ref_sq(w);  // -|o - r|^2 + |o|^2
                }
                if (score > best_score) {
                    best_score = score;
                    best = w;
                }
            }
            const size_t t = static_cast<size_t>(start + i);
            report.predictions[t] = static_cast<uint32_t>(best);
            report.hits[t] = report.predictions[t] == truth.ids[t];
            report.recovered += report.hits[t] ? 1 : 0;
        }
    }
    report.asr = report.total ? static_cast<double>(report.recovered) / static_cast<double>(report.total) : 0.0;
    return report;
}

/// Candidate latents the adversary can compute from public artifacts:
/// row w = clamp(encode(table[w]), c).
inline Matrix latent_reference(const EmbeddingTable& table, const ProjectionPair& pp, double c) {
    require(pp.input_dim() == table.dim(), ErrorKind::invalid_input, "projection does not match table width");
    return clamp_rows(encode(table.rows(), pp), c);
}

}  // namespace splitdp
