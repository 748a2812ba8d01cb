#pragma once

// Toy next-token model standing in for the frozen server model, plus
// soft-prompt tuning and perplexity.
//
// The model mean-pools the soft prompt rows and the reconstructed embeddings
// seen so far, h_t = (sum_j e_j + sum_{i<=t} xhat_i) / (r + t), and predicts
// the next token with softmax(W_out h_t + bias).

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"
#include "io.hpp"

namespace splitdp {

struct ToyLm {
    EmbeddingTable table;  // V x b, frozen
    Matrix w_out;          // V x b
    Vector bias;           // V

    size_t vocab() const noexcept { return table.vocab(); }
    size_t dim() const noexcept { return table.dim(); }

    /// Output projection tied to the embedding table: W_out = scale * table.
    static ToyLm tied(const EmbeddingTable& table, double scale) {
        ToyLm lm;
        lm.table = table;
        lm.w_out = scale * table.rows();
        lm.bias = Vector::Zero(static_cast<Eigen::Index>(table.vocab()));
        return lm;
    }

    Vector logits(const Vector& h) const { return w_out * h + bias; }
};

struct SoftPrompt {
    Matrix rows;  // r x b

    size_t length() const noexcept { return static_cast<size_t>(rows.rows()); }

    static SoftPrompt empty(size_t b) { return {Matrix(0, static_cast<Eigen::Index>(b))}; }
};

/// h_t for 1-based position t.
inline Vector context_state(const SoftPrompt& prompt, const Matrix& xhat, size_t t) {
    require(t >= 1, ErrorKind::invalid_input, "position must be >= 1");
    require(t <= static_cast<size_t>(xhat.rows()), ErrorKind::invalid_input, "position past end of batch");
    require(prompt.rows.cols() == xhat.cols(), ErrorKind::invalid_input, "prompt width does not match batch");
    Vector sum = prompt.rows.colwise().sum().transpose();
    sum += xhat.topRows(static_cast<Eigen::Index>(t)).colwise().sum().transpose();
    return sum / static_cast<double>(prompt.length() + t);
}

namespace detail {

/// log-softmax of `logits` at `target`; also writes the probabilities.
inline double log_prob(const Vector& logits, uint32_t target, Vector* probs) {
    const double peak = logits.maxCoeff();
    const Vector shifted = (logits.array() - peak).exp().matrix();
    const double z = shifted.sum();
    if (probs) *probs = shifted / z;
    return logits(target) - peak - std::log(z);
}

inline void check_lm_inputs(const ToyLm& model, const SoftPrompt& prompt, const Matrix& xhat,
                            const TokenSequence& targets) {
    require(xhat.cols() == static_cast<Eigen::Index>(model.dim()), ErrorKind::invalid_input,
            "batch width does not match model");
    require(prompt.rows.cols() == xhat.cols(), ErrorKind::invalid_input, "prompt width does not match batch");
    require(static_cast<size_t>(xhat.rows()) == targets.size(), ErrorKind::invalid_input,
            "targets length does not match batch length");
    require(targets.size() >= 2, ErrorKind::invalid_input, "need at least two tokens to score");
    targets.validate(model.vocab());
}

}  // namespace detail

struct NllGrad {
    double nll = 0.0;   // mean over scored positions
    size_t positions = 0;
    Matrix grad;        // d nll / d prompt rows, r x b
};

/// Mean next-token NLL over positions t = 1..T-1 (targets[t] predicted from
/// h_t) and its gradient with respect to the soft prompt.
inline NllGrad next_token_nll_grad(const ToyLm& model, const SoftPrompt& prompt, const Matrix& xhat,
                                   const TokenSequence& targets, bool with_grad = true) {
    detail::check_lm_inputs(model, prompt, xhat, targets);
    const size_t r = prompt.length();
    const size_t positions = targets.size() - 1;
    Vector running = prompt.rows.colwise().sum().transpose();
    Vector dh_total = Vector::Zero(xhat.cols());
    Vector probs;
    double total = 0.0;
    for (size_t t = 1; t <= positions; ++t) {
        running += xhat.row(static_cast<Eigen::Index>(t - 1)).transpose();
        const double denom = static_cast<double>(r + t);
        const Vector h = running / denom;
        const uint32_t target = targets.ids[t];
        total -= detail::log_prob(model.logits(h), target, with_grad ? &probs : nullptr);
        if (with_grad && r > 0) {
            probs(target) -= 1.0;
            dh_total += model.w_out.transpose() * probs / denom;
        }
    }
    NllGrad out;
    out.positions = positions;
    out.nll = total / static_cast<double>(positions);
    if (with_grad) {
        out.grad.resize(static_cast<Eigen::Index>(r), xhat.cols());
        for (size_t j = 0; j < r; ++j)
            out.grad.row(static_cast<Eigen::Index>(j)) = dh_total.transpose() / static_cast<double>(positions);
    }
    return out;
}

inline double next_token_nll(const ToyLm& model, const SoftPrompt& prompt, const Matrix& xhat,
                             const TokenSequence& targets) {
    return next_token_nll_grad(model, prompt, xhat, targets, false).nll;
}

inline double perplexity(const ToyLm& model, const SoftPrompt& prompt, const Matrix& xhat,
                         const TokenSequence& targets) {
    return std::exp(next_token_nll(model, prompt, xhat, targets));
}

/// Position-weighted mean NLL over a corpus, with the summed gradient.
inline NllGrad corpus_nll_grad(const ToyLm& model, const SoftPrompt& prompt, const std::vector<Matrix>& xhats,
                               const std::vector<TokenSequence>& corpus, bool with_grad = true) {
    require(xhats.size() == corpus.size() && !corpus.empty(), ErrorKind::invalid_input,
            "corpus and reconstructed batches differ in size");
    NllGrad out;
    out.grad = Matrix::Zero(prompt.rows.rows(), prompt.rows.cols());
    double total = 0.0;
    for (size_t s = 0; s < corpus.size(); ++s) {
        NllGrad g = next_token_nll_grad(model, prompt, xhats[s], corpus[s], with_grad);
        const double w = static_cast<double>(g.positions);
        total += g.nll * w;
        out.positions += g.positions;
        if (with_grad) out.grad += g.grad * w;
    }
    out.nll = total / static_cast<double>(out.positions);
    if (with_grad) out.grad /= static_cast<double>(out.positions);
    return out;
}

/// Output scale for ToyLm::tied that minimises next-token NLL on clean
/// embeddings of `corpus`. The NLL is convex in the scale, so a
/// golden-section search over [lo, hi] finds the minimiser.
inline double fit_tied_scale(const EmbeddingTable& table, const std::vector<TokenSequence>& corpus, double lo = 1.0,
                             double hi = 1e4, size_t iterations = 80) {
    require(lo > 0.0 && hi > lo, ErrorKind::invalid_parameter, "bad scale bracket");
    std::vector<Matrix> clean;
    clean.reserve(corpus.size());
    for (const auto& seq : corpus) clean.push_back(table.embed(seq));
    const SoftPrompt none = SoftPrompt::empty(table.dim());
    auto loss = [&](double s) { return corpus_nll_grad(ToyLm::tied(table, s), none, clean, corpus, false).nll; };
    const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double x1 = b - ratio * (b - a), x2 = a + ratio * (b - a);
    double f1 = loss(x1), f2 = loss(x2);
    for (size_t i = 0; i < iterations; ++i) {
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = loss(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = loss(x2);
        }
    }
    return 0.5 * (a + b);
}

struct SoftPromptOptions {
    size_t length = 20;
    size_t epochs = 60;
    double lr = 1.0;
};

/// Prompt initialised from table rows chosen by seeded sampling.
inline SoftPrompt init_soft_prompt(const EmbeddingTable& table, size_t length, Rng rng) {
    SoftPrompt prompt{Matrix(static_cast<Eigen::Index>(length), static_cast<Eigen::Index>(table.dim()))};
    for (size_t j = 0; j < length; ++j)
        prompt.rows.row(static_cast<Eigen::Index>(j)) = table.rows().row(static_cast<Eigen::Index>(rng.below(table.vocab())));
    return prompt;
}

/// Gradient descent on the prompt rows only. Every epoch regenerates the
/// reconstructed inputs with fresh mechanism noise via
/// `privatize(tokens, rng) -> Matrix` (rng = rng.fork(epoch).fork(seq)), takes
/// one full-batch step and keeps it only if the epoch loss does not rise;
/// otherwise the rate is halved.
template <class Privatizer>
SoftPrompt tune_soft_prompt(const ToyLm& model, const Privatizer& privatize, const std::vector<TokenSequence>& corpus,
                            const SoftPromptOptions& opt, Rng rng, std::vector<double>* history = nullptr) {
    require(opt.lr > 0.0, ErrorKind::invalid_parameter, "learning rate must be positive");
    require(!corpus.empty(), ErrorKind::invalid_input, "empty tuning corpus");
    SoftPrompt prompt = init_soft_prompt(model.table, opt.length, rng.fork(0x5eed));
    if (opt.length == 0) return prompt;

    double lr = opt.lr;
    std::vector<Matrix> xhats(corpus.size());
    for (size_t epoch = 0; epoch < opt.epochs; ++epoch) {
        const Rng epoch_rng = rng.fork(epoch + 1);
        for (size_t s = 0; s < corpus.size(); ++s) xhats[s] = privatize(corpus[s], epoch_rng.fork(s));
        const NllGrad g = corpus_nll_grad(model, prompt, xhats, corpus, true);
        SoftPrompt next{prompt.rows - lr * g.grad};
        const double next_nll = corpus_nll_grad(model, next, xhats, corpus, false).nll;
        if (next_nll <= g.nll) {
            prompt = std::move(next);
            if (history) history->push_back(next_nll);
        } else {
            lr *= 0.5;
            if (history) history->push_back(g.nll);
        }
    }
    return prompt;
}

// Soft prompt file: "DELS", version 1, r u32, b u32, r x b little-endian f64.

inline Bytes encode_soft_prompt(const SoftPrompt& prompt) {
    ByteWriter w;
    w.magic("DELS");
    w.u8(1);
    w.u32(static_cast<uint32_t>(prompt.rows.rows()));
    w.u32(static_cast<uint32_t>(prompt.rows.cols()));
    write_matrix_f64(w, prompt.rows);
    return w.take();
}

inline SoftPrompt decode_soft_prompt(std::span<const uint8_t> bytes) {
    ByteReader r(bytes);
    if (!r.magic("DELS")) throw Error(ErrorKind::protocol, "bad soft prompt magic");
    if (r.u8() != 1) throw Error(ErrorKind::protocol, "unsupported soft prompt version");
    const uint32_t rows = r.u32();
    const uint32_t b = r.u32();
    if (static_cast<uint64_t>(rows) * b * 8 != r.remaining())
        throw Error(ErrorKind::incomplete_frame, "soft prompt size mismatch");
    SoftPrompt prompt{read_matrix_f64(r, rows, b)};
    require(prompt.rows.allFinite(), ErrorKind::invalid_input, "non-finite soft prompt");
    return prompt;
}

// Corpus: one sequence per line, comma-separated token ids.

inline std::vector<TokenSequence> parse_corpus(std::istream& in) {
    std::vector<TokenSequence> corpus;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        TokenSequence seq;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) {
            try {
                size_t used = 0;
                const unsigned long id = std::stoul(field, &used);
                if (id > 0xffffffffUL) throw std::out_of_range("id");
                seq.ids.push_back(static_cast<uint32_t>(id));
            } catch (const std::exception&) {
                throw Error(ErrorKind::invalid_input, "bad token id on corpus line " + std::to_string(lineno));
            }
        }
        if (!seq.ids.empty()) corpus.push_back(std::move(seq));
    }
    return corpus;
}

inline std::vector<TokenSequence> read_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path);
    return parse_corpus(in);
}

inline void write_corpus(std::ostream& out, const std::vector<TokenSequence>& corpus) {
    for (const auto& seq : corpus) {
        for (size_t i = 0; i < seq.ids.size(); ++i) out << (i ? "," : "") << seq.ids[i];
        out << '\n';
    }
}

}  // namespace splitdp
