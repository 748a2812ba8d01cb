#pragma once

// Seeded soft-prompt studies on the synthetic world, shared by the
// command-line harness and the acceptance run.
//
// Stream layout under one seed s: Rng(s, 1) table, (s, 2) tuning corpus,
// (s, 3) evaluation corpus, (s, 4) projection, (s, 5) prompt tuning,
// (s, 6) evaluation noise, (s, 7) attack tokens.

#include <future>
#include <vector>

#include "attack.hpp"
#include "calib.hpp"
#include "lm.hpp"
#include "pipeline.hpp"

namespace splitdp {

struct StudyConfig {
    WorldConfig world;
    uint64_t seed = 1;
    size_t train_sequences = 64;
    size_t eval_sequences = 64;
    unsigned n = 1;
    double c = 0.05;
    SoftPromptOptions prompt;
};

struct StudyWorld {
    StudyConfig cfg;
    EmbeddingTable table;
    std::vector<TokenSequence> train;
    std::vector<TokenSequence> eval;
    double scale = 0.0;
    ToyLm model;
};

inline StudyWorld make_world(const StudyConfig& cfg) {
    StudyWorld w;
    w.cfg = cfg;
    w.table = synthetic_table(cfg.world, Rng(cfg.seed, 1));
    w.train = synthetic_corpus(cfg.world, cfg.train_sequences, Rng(cfg.seed, 2));
    w.eval = synthetic_corpus(cfg.world, cfg.eval_sequences, Rng(cfg.seed, 3));
    w.scale = fit_tied_scale(w.table, w.train);
    w.model = ToyLm::tied(w.table, w.scale);
    return w;
}

inline ProjectionPair study_projection(const StudyWorld& w, unsigned d) {
    return train_projection(w.table.rows(), d, ProjectionTrainOptions{}, Rng(w.cfg.seed, 4));
}

inline Pipeline study_pipeline(const StudyWorld& w, const ProjectionPair& proj, double mu) {
    Pipeline p{w.table, proj, {}};
    p.mech.c = w.cfg.c;
    p.mech.n = w.cfg.n;
    p.mech.d = static_cast<unsigned>(proj.latent_dim());
    return at_mu(p, mu);
}

/// Mean next-token NLL over the evaluation corpus; sequence s draws its
/// mechanism noise from Rng(seed, 6).fork(s) whatever the prompt.
inline double study_nll(const StudyWorld& w, const Pipeline& p, const SoftPrompt& prompt) {
    const Rng noise(w.cfg.seed, 6);
    std::vector<Matrix> xhats;
    xhats.reserve(w.eval.size());
    for (size_t s = 0; s < w.eval.size(); ++s) xhats.push_back(p.reconstruct(w.eval[s], noise.fork(s)));
    return corpus_nll_grad(w.model, prompt, xhats, w.eval, false).nll;
}

inline SoftPrompt study_prompt(const StudyWorld& w, const Pipeline& p) {
    auto privatize = [&p](const TokenSequence& tokens, const Rng& rng) { return p.reconstruct(tokens, rng); };
    return tune_soft_prompt(w.model, privatize, w.train, w.cfg.prompt, Rng(w.cfg.seed, 5));
}

struct StudyPoint {
    unsigned d = 0;
    double mu = 0.0;
    double A = 0.0;
    double nll_none = 0.0;
    double nll_tuned = 0.0;
};

inline StudyPoint study_point(const StudyWorld& w, const ProjectionPair& proj, double mu) {
    const Pipeline p = study_pipeline(w, proj, mu);
    const SoftPrompt prompt = study_prompt(w, p);
    return {p.mech.d, mu, p.mech.A, study_nll(w, p, SoftPrompt::empty(w.table.dim())), study_nll(w, p, prompt)};
}

/// Every (d, mu) pair, d-major. Points run concurrently; each is a pure
/// function of the world and its own seeds, so the result is deterministic.
inline std::vector<StudyPoint> sweep_latent_dims(const StudyWorld& w, const std::vector<unsigned>& ds,
                                                 const std::vector<double>& mus) {
    std::vector<ProjectionPair> projs;
    for (unsigned d : ds) projs.push_back(study_projection(w, d));
    std::vector<std::future<StudyPoint>> jobs;
    for (size_t i = 0; i < ds.size(); ++i)
        for (double mu : mus)
            jobs.push_back(std::async(std::launch::async, [&w, &projs, i, mu] { return study_point(w, projs[i], mu); }));
    std::vector<StudyPoint> out;
    for (auto& j : jobs) out.push_back(j.get());
    return out;
}

/// Concatenation of the evaluation corpus, used as the attack's token set.
inline TokenSequence flatten(const std::vector<TokenSequence>& corpus) {
    TokenSequence all;
    for (const auto& s : corpus) all.ids.insert(all.ids.end(), s.ids.begin(), s.ids.end());
    return all;
}

}  // namespace splitdp
