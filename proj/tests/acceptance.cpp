// End-to-end acceptance run: one PASS/FAIL line per criterion, non-zero exit
// if any criterion fails. Each check is timed against its runtime budget.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <future>
#include <string>
#include <vector>

#include "splitdp/splitdp.hpp"

using namespace splitdp;
using namespace std::chrono_literals;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string format(const char* fmt, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, fmt, args...);
    return buf;
}

MechanismParams quantizer(double c, double A, unsigned n, unsigned d) {
    MechanismParams p;
    p.c = c;
    p.A = A;
    p.n = n;
    p.d = d;
    return p;
}

// ---------------------------------------------------------------------------
// Mechanism moments

struct MomentConfig {
    MechanismParams p;
    std::vector<double> v;
};

struct Moments {
    std::vector<double> mean;
    std::vector<double> var;
};

std::vector<MomentConfig> moment_grid() {
    Rng gen(2024, 1);
    std::vector<MomentConfig> grid;
    for (int i = 0; i < 50; ++i) {
        const double c = 0.01 + 0.99 * gen.uniform();
        const double A = c * (1.2 + 2.8 * gen.uniform());
        const unsigned n = 1 + static_cast<unsigned>(gen.below(4));
        const unsigned d = 1 + static_cast<unsigned>(gen.below(16));
        MomentConfig cfg{quantizer(c, A, n, d), {}};
        for (unsigned j = 0; j < d; ++j) cfg.v.push_back(c * (2.0 * gen.uniform() - 1.0));
        // Include the boundary and the centre on some configurations.
        if (i % 10 == 0) cfg.v[0] = c;
        if (i % 10 == 1) cfg.v[0] = 0.0;
        grid.push_back(std::move(cfg));
    }
    return grid;
}

/// Sample moments of the dequantized output over `draws` independent
/// quantizations of the same latent vector, processed in chunks.
Moments sample_moments(const MomentConfig& cfg, size_t draws, const Rng& rng) {
    const size_t d = cfg.v.size();
    const size_t chunk = 100000;
    std::vector<double> sum(d, 0.0), sq(d, 0.0);
    Matrix batch(static_cast<Eigen::Index>(chunk), static_cast<Eigen::Index>(d));
    for (size_t j = 0; j < d; ++j) batch.col(static_cast<Eigen::Index>(j)).setConstant(cfg.v[j]);
    for (size_t done = 0, part = 0; done < draws; done += chunk, ++part) {
        const Matrix out = dequantize(stochastic_quantize(batch, cfg.p, rng.fork(part)));
        for (size_t j = 0; j < d; ++j) {
            // Centre on v to keep the accumulated squares well conditioned.
            const auto col = (out.col(static_cast<Eigen::Index>(j)).array() - cfg.v[j]);
            sum[j] += col.sum();
            sq[j] += col.square().sum();
        }
    }
    Moments m;
    const double N = static_cast<double>(draws);
    for (size_t j = 0; j < d; ++j) {
        const double centred_mean = sum[j] / N;
        m.mean.push_back(cfg.v[j] + centred_mean);
        m.var.push_back((sq[j] / N - centred_mean * centred_mean) * N / (N - 1.0));
    }
    return m;
}

struct MomentRun {
    std::vector<MomentConfig> grid;
    std::vector<Moments> moments;
};

const MomentRun& moment_run() {
    static const MomentRun run = [] {
        MomentRun r;
        r.grid = moment_grid();
        const Rng rng(2024, 2);
        for (size_t i = 0; i < r.grid.size(); ++i) r.moments.push_back(sample_moments(r.grid[i], 1000000, rng.fork(i)));
        return r;
    }();
    return run;
}

Outcome unbiasedness() {
    const auto& run = moment_run();
    double worst = 0.0;
    size_t coords = 0, bad = 0;
    for (size_t i = 0; i < run.grid.size(); ++i) {
        const auto& cfg = run.grid[i];
        const double u = static_cast<double>(cfg.p.trials());
        for (size_t j = 0; j < cfg.v.size(); ++j, ++coords) {
            const double se = std::sqrt((cfg.p.A * cfg.p.A - cfg.v[j] * cfg.v[j]) / u / 1e6);
            const double z = se > 0 ? std::abs(run.moments[i].mean[j] - cfg.v[j]) / se : 0.0;
            worst = std::max(worst, z);
            if (z > 4.0) ++bad;
        }
    }
    return {bad == 0, format("%zu coordinates over 50 configs, max |mean - v| = %.2f standard errors (limit 4)", coords,
                             worst)};
}

Outcome variance_law() {
    const auto& run = moment_run();
    double worst = 0.0;
    for (size_t i = 0; i < run.grid.size(); ++i) {
        const auto& cfg = run.grid[i];
        for (size_t j = 0; j < cfg.v.size(); ++j) {
            const double expected = mechanism_variance(std::span<const double>(&cfg.v[j], 1), cfg.p);
            worst = std::max(worst, std::abs(run.moments[i].var[j] / expected - 1.0));
        }
    }
    return {worst <= 0.02, format("max relative variance error %.4f (limit 0.02)", worst)};
}

// ---------------------------------------------------------------------------
// Trade-off curves

Outcome exact_vs_closed_form() {
    Rng gen(2024, 3);
    const auto grid = uniform_grid(1001);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
        const double c = 0.01 + 0.5 * gen.uniform();
        const double A = c * (1.001 + 5.0 * gen.uniform());
        const auto curve = compose_exact(c, A, 1, grid);
        for (double a : grid) worst = std::max(worst, std::abs(curve.at(a) - binary_tradeoff_value(c, A, a)));
    }
    return {worst <= 1e-12, format("20 (c, A) pairs x 1001 points, max |difference| %.3g (limit 1e-12)", worst)};
}

Outcome sandwich() {
    const double c = 0.05;
    const auto grid = uniform_grid(1001);
    double worst = -1.0;
    size_t cases = 0;
    for (auto [n, d] : {std::pair{1u, 8u}, {1u, 64u}, {2u, 8u}, {2u, 64u}, {4u, 16u}})
        for (double A : {0.08, 0.13, 0.3}) {
            const double mu = mu_of(c, A, n, d);
            const double gamma = gamma_of(c, A, n, d);
            const auto curve = compose_exact(c, A, ((1u << n) - 1) * d, grid);
            for (double a : grid) {
                const double f = curve.at(a);
                worst = std::max({worst, (gdp_value(mu, a + gamma) - gamma) - f, f - (gdp_value(mu, a - gamma) + gamma)});
            }
            ++cases;
        }
    return {worst <= 1e-9, format("%zu cases, max excursion outside the band %.3g (slack 1e-9)", cases, worst)};
}

Outcome gaussian_equivalence() {
    double mu_err = 0.0, gap_edge = 0.0, gap_centre = 0.0;
    for (double c : {0.01, 0.05, 0.3})
        for (double sigma : {0.001, 0.05, 2.0})
            for (unsigned n = 1; n <= 8; ++n)
                for (unsigned d : {1u, 16u, 128u, 4096u}) {
                    const double A = matched_A(c, sigma, n);
                    const auto p = quantizer(c, A, n, d);
                    mu_err = std::max(mu_err, std::abs(mu_of(c, A, n, d) - gaussian_mu(c * std::sqrt(double(d)), sigma)) /
                                                  gaussian_mu(c * std::sqrt(double(d)), sigma));
                    std::vector<double> edge(d);
                    for (unsigned j = 0; j < d; ++j) edge[j] = j % 2 ? c : -c;
                    // Compared relative to the total quantizer variance at the origin.
                    gap_edge = std::max(gap_edge, std::abs(variance_gap(edge, p, sigma)) / (A * A * d / p.trials()));
                    const double expected = c * c * d / p.trials();
                    gap_centre = std::max(gap_centre,
                                          std::abs(variance_gap(std::vector<double>(d, 0.0), p, sigma) - expected) /
                                              expected);
                }

    // Monte-Carlo: total variance of both mechanisms at v = 0.
    double mc_worst = 0.0;
    int config = 0;
    for (auto [n, d] : {std::pair{1u, 8u}, {2u, 4u}, {3u, 2u}}) {
        const double c = 0.05, sigma = 0.01;
        const size_t N = 1000000;
        MechanismParams p = quantizer(c, matched_A(c, sigma, n), n, d);
        const Matrix zeros = Matrix::Zero(static_cast<Eigen::Index>(N / 10), d);
        double q_sq = 0.0;
        for (int part = 0; part < 10; ++part)
            q_sq += dequantize(stochastic_quantize(zeros, p, Rng(2024, 40 + config).fork(part))).array().square().sum();
        MechanismParams g = p;
        g.variant = Variant::gaussian;
        g.sigma = sigma;
        g.C = c * std::sqrt(double(d));
        Rng grng(2024, 50 + config);
        const std::vector<double> zero(d, 0.0);
        double g_sq = 0.0;
        for (size_t t = 0; t < N; ++t)
            for (double x : gaussian_mechanism(zero, g, grng)) g_sq += x * x;
        const double gap_mc = q_sq / N - g_sq / N;
        const double gap = variance_gap(zero, p, sigma);
        mc_worst = std::max(mc_worst, std::abs(gap_mc / gap - 1.0));
        ++config;
    }
    const bool pass = mu_err <= 1e-9 && gap_edge <= 1e-12 && gap_centre <= 1e-12 && mc_worst <= 0.05;
    return {pass, format("mu rel err %.2g, relative gap at |v|=c %.2g, gap at 0 rel err %.2g, Monte-Carlo gap rel err %.4f",
                         mu_err, gap_edge, gap_centre, mc_worst)};
}

/// Value printed by the accountant oracle for `label`, or NaN when the oracle
/// output is unavailable.
double oracle_value(const std::string& label) {
    std::ifstream in(SPLITDP_ORACLE_OUT);
    std::string line;
    while (std::getline(in, line))
        if (line.rfind(label, 0) == 0) return std::stod(line.substr(line.find('=', label.size()) + 1));
    return std::nan("");
}

Outcome accountant_spot() {
    // Frozen high-precision reference values (mpmath, 50 digits).
    double mu_ref = 9.4280904158206336587, gamma_ref = 0.061554551849444329368;
    const double mu_oracle = oracle_value("mu(c=0.05,A=0.13,n=1,d=128)");
    const double gamma_oracle = oracle_value("gamma(c=0.05,A=0.13,n=1,d=128)");
    const bool recomputed = !std::isnan(mu_oracle) && !std::isnan(gamma_oracle);
    bool oracle_agrees = true;
    if (recomputed) {
        oracle_agrees = std::abs(mu_oracle - mu_ref) <= 1e-12 && std::abs(gamma_oracle - gamma_ref) <= 1e-14;
        mu_ref = mu_oracle;
        gamma_ref = gamma_oracle;
    }
    const double mu = mu_of(0.05, 0.13, 1, 128);
    const double gamma = gamma_of(0.05, 0.13, 1, 128);
    const bool pass = oracle_agrees && std::abs(mu - 9.42809) <= 1e-4 && std::abs(gamma - 0.0615) <= 5e-4 &&
                      std::abs(mu - mu_ref) <= 1e-12 && std::abs(gamma - gamma_ref) <= 1e-14;
    return {pass, format("mu=%.10f gamma=%.10f (%s reference %.10f, %.10f)", mu, gamma,
                         recomputed ? "recomputed" : "frozen", mu_ref, gamma_ref)};
}

// ---------------------------------------------------------------------------
// Codec

QuantizedBatch random_batch(Rng& rng) {
    QuantizedBatch q;
    q.n = 1 + static_cast<unsigned>(rng.below(8));
    q.T = 1 + static_cast<uint32_t>(rng.below(64));
    q.d = 1 + static_cast<uint32_t>(rng.below(64));
    q.c = 0.001 + rng.uniform();
    q.A = q.c * (1.0 + 10.0 * rng.uniform());
    q.levels.resize(static_cast<size_t>(q.T) * q.d);
    for (auto& l : q.levels) l = static_cast<uint8_t>(rng.below(1u << q.n));
    return q;
}

Outcome codec() {
    Rng rng(2024, 4);
    size_t round_trips = 0, flips = 0, missed = 0, size_errors = 0;
    for (int i = 0; i < 10000; ++i) {
        const auto q = random_batch(rng);
        const Bytes frame = pack(q);
        if (frame.size() != (static_cast<size_t>(q.T) * q.d * q.n + 7) / 8 + 36) ++size_errors;
        if (unpack(frame) == q && pack(unpack(frame)) == frame) ++round_trips;
        // One random single-bit flip per frame, plus every bit on a subset.
        auto detected = [&frame](size_t bit) {
            Bytes bad = frame;
            bad[bit / 8] ^= static_cast<uint8_t>(1u << (bit % 8));
            try {
                unpack(bad);
            } catch (const Error&) {
                return true;
            }
            return false;
        };
        const size_t bits = frame.size() * 8;
        if (i % 100 == 0) {
            for (size_t b = 0; b < bits; ++b, ++flips) missed += !detected(b);
        } else {
            ++flips;
            missed += !detected(rng.below(bits));
        }
    }
    const size_t baseline = size_t{1024} * 4096 * sizeof(float);
    const bool pass = round_trips == 10000 && missed == 0 && size_errors == 0 && baseline == 16777216 &&
                      payload_size(1024, 128, 4) == 65536;
    return {pass, format("%zu/10000 bit-exact round trips, %zu/%zu single-bit flips detected, baseline %zu bytes",
                         round_trips, flips - missed, flips, baseline)};
}

// ---------------------------------------------------------------------------
// Gradients

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng rng) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

double rel_error(const Matrix& analytic, const Matrix& numeric) {
    return (analytic - numeric).cwiseAbs().maxCoeff() / std::max(numeric.cwiseAbs().maxCoeff(), 1e-300);
}

Outcome gradients() {
    Rng rng(2024, 5);
    const double h = 1e-6;
    double worst_prompt = 0.0, worst_proj = 0.0;
    for (int i = 0; i < 20; ++i) {
        Rng inst = rng.fork(i);
        ToyLm lm;
        lm.table = EmbeddingTable(normal_matrix(11, 8, inst.fork(1)));
        lm.w_out = normal_matrix(11, 8, inst.fork(2));
        lm.bias = normal_matrix(11, 1, inst.fork(3)).col(0);
        const Matrix xhat = normal_matrix(5, 8, inst.fork(4));
        TokenSequence targets;
        Rng trng = inst.fork(5);
        for (int t = 0; t < 5; ++t) targets.ids.push_back(static_cast<uint32_t>(trng.below(11)));
        const SoftPrompt prompt{normal_matrix(2, 8, inst.fork(6))};
        const auto g = next_token_nll_grad(lm, prompt, xhat, targets);
        Matrix numeric(2, 8);
        for (Eigen::Index k = 0; k < numeric.size(); ++k) {
            SoftPrompt plus = prompt, minus = prompt;
            plus.rows.data()[k] += h;
            minus.rows.data()[k] -= h;
            numeric.data()[k] =
                (next_token_nll(lm, plus, xhat, targets) - next_token_nll(lm, minus, xhat, targets)) / (2 * h);
        }
        worst_prompt = std::max(worst_prompt, rel_error(g.grad, numeric));

        const Matrix x = normal_matrix(4, 3, inst.fork(7));
        const ProjectionPair pp = random_projection(3, 2, inst.fork(8));
        const auto pg = projection_loss_grad(pp, x);
        Matrix num_enc(pp.enc.rows(), pp.enc.cols()), num_dec(pp.dec.rows(), pp.dec.cols());
        for (Eigen::Index k = 0; k < pp.enc.size(); ++k) {
            ProjectionPair plus = pp, minus = pp;
            plus.enc.data()[k] += h;
            minus.enc.data()[k] -= h;
            num_enc.data()[k] = (projection_loss(plus, x) - projection_loss(minus, x)) / (2 * h);
        }
        for (Eigen::Index k = 0; k < pp.dec.size(); ++k) {
            ProjectionPair plus = pp, minus = pp;
            plus.dec.data()[k] += h;
            minus.dec.data()[k] -= h;
            num_dec.data()[k] = (projection_loss(plus, x) - projection_loss(minus, x)) / (2 * h);
        }
        worst_proj = std::max({worst_proj, rel_error(pg.enc, num_enc), rel_error(pg.dec, num_dec)});
    }
    return {worst_prompt <= 1e-4 && worst_proj <= 1e-4,
            format("20 instances, max relative error: soft prompt %.2g, projection %.2g (limit 1e-4)", worst_prompt,
                   worst_proj)};
}

// ---------------------------------------------------------------------------
// Soft prompt and latent dimension studies

const StudyWorld& study_world() {
    static const StudyWorld world = make_world(StudyConfig{});
    return world;
}

Outcome soft_prompt_restoration() {
    const auto& w = study_world();
    const double mu = 0.4;
    const auto proj = study_projection(w, 2);
    const Pipeline p = study_pipeline(w, proj, mu);
    const SoftPrompt prompt = study_prompt(w, p);
    const SoftPrompt none = SoftPrompt::empty(w.table.dim());
    const double base = study_nll(w, p, none);
    const double tuned = study_nll(w, p, prompt);
    const Pipeline shifted = at_mu(p, 1.15 * mu);
    const double base_shift = study_nll(w, shifted, none);
    const double tuned_shift = study_nll(w, shifted, prompt);
    const double gain = 1.0 - tuned / base;
    return {gain >= 0.05 && tuned_shift < base_shift,
            format("mu=%.2f: NLL %.4f -> %.4f (%.1f%% better); mu'=%.2f: no prompt %.4f, transferred %.4f", mu, base,
                   tuned, 100 * gain, 1.15 * mu, base_shift, tuned_shift)};
}

Outcome latent_dimension_trend() {
    const auto& w = study_world();
    const std::vector<unsigned> ds{2, 4, 8, 16};
    const std::vector<double> mus{0.3, 1.0, 3.0, 10.0, 50.0};
    const auto points = sweep_latent_dims(w, ds, mus);
    auto tuned = [&](unsigned d, double mu) {
        for (const auto& p : points)
            if (p.d == d && p.mu == mu) return p.nll_tuned;
        return std::nan("");
    };
    const double tight_small = tuned(2, mus.front()), tight_mid = tuned(8, mus.front());
    const double loose_small = tuned(2, mus.back()), loose_mid = tuned(8, mus.back());
    const bool pass = tight_small < tight_mid && loose_mid < loose_small;
    return {pass, format("tuned NLL d=2 vs d=8: %.4f vs %.4f at mu=%.1f, %.4f vs %.4f at mu=%.0f", tight_small,
                         tight_mid, mus.front(), loose_small, loose_mid, mus.back())};
}

// ---------------------------------------------------------------------------
// Calibration and attack

Outcome calibration() {
    const uint64_t seed = 1;
    const auto table = synthetic_table(WorldConfig{}, Rng(seed, 1));
    Pipeline pipe{table, train_projection(table.rows(), 16, ProjectionTrainOptions{}, Rng(seed, 4)), {}};
    pipe.mech.d = 16;
    pipe.mech.n = 4;
    const auto eval = uniform_tokens(table.vocab(), 10000, Rng(seed, 7));
    bool pass = true;
    std::string detail;
    for (double target : {0.02, 0.10, 0.20}) {
        CalibrationOptions opt;
        opt.tol = 0.01;
        const auto result = calibrate_to_asr(target, pipe, eval, opt, Rng(seed, 10));
        const double fresh = measure_attack(at_mu(pipe, result.mu), eval, Metric::cosine, Rng(seed, 11)).asr;
        auto trace = result.trace;
        std::sort(trace.begin(), trace.end(), [](const auto& a, const auto& b) { return a.mu < b.mu; });
        bool monotone = true;
        for (size_t i = 1; i < trace.size(); ++i) monotone = monotone && trace[i].asr >= trace[i - 1].asr;
        const bool ok = std::abs(result.asr - target) <= 0.01 && std::abs(fresh - target) <= 0.02 && monotone;
        pass = pass && ok;
        detail += format("%s%.2f -> mu=%.3g asr=%.4f fresh=%.4f%s", detail.empty() ? "" : "; ", target, result.mu,
                         result.asr, fresh, monotone ? "" : " (non-monotone probes)");
    }
    return {pass, detail};
}

Outcome attack_sanity() {
    // Zero-noise limit: the observed latents are exactly the reference rows.
    const auto table = synthetic_table(WorldConfig{}, Rng(1, 1));
    Pipeline pipe{table, train_projection(table.rows(), 16, ProjectionTrainOptions{}, Rng(1, 4)), {}};
    pipe.mech.d = 16;
    pipe.mech.n = 4;
    const auto eval = uniform_tokens(table.vocab(), 10000, Rng(1, 7));
    const double exact =
        invert_embeddings(pipe.latents(eval), latent_reference(table, pipe.proj, pipe.mech.c), eval, Metric::cosine).asr;

    // Noise-dominated limit: A >> c on a random vocabulary of 1000 tokens.
    Rng gen(2024, 6);
    Matrix rows(1000, 32);
    for (Eigen::Index i = 0; i < rows.size(); ++i) rows.data()[i] = 0.05 * gen.normal();
    Pipeline noisy{EmbeddingTable(rows), random_projection(32, 8, Rng(2024, 7)), {}};
    noisy.mech.d = 8;
    noisy = at_mu(noisy, 1e-3);
    const auto tokens = uniform_tokens(1000, 10000, Rng(2024, 8));
    const double asr = measure_attack(noisy, tokens, Metric::cosine, Rng(2024, 9)).asr;
    const double chance = 1.0 / 1000;
    const double se = std::sqrt(chance * (1 - chance) / 10000);
    return {exact == 1.0 && std::abs(asr - chance) <= 3 * se,
            format("zero noise ASR %.4f; A/c=%.0f ASR %.4f vs chance %.4f (3 SE = %.4f)", exact,
                   noisy.mech.A / noisy.mech.c, asr, chance, 3 * se)};
}

// ---------------------------------------------------------------------------
// Protocol

Outcome protocol() {
    const auto& w = study_world();
    const auto proj = study_projection(w, 2);
    auto art = std::make_shared<ServerArtifacts>();
    art->proj = proj;
    art->model = w.model;
    art->prompt = study_prompt(w, study_pipeline(w, proj, 1.0));
    art->continuation = 8;
    ClientArtifacts client;
    client.table = w.table;
    client.proj = proj;
    client.mech = study_pipeline(w, proj, 1.0).mech;

    Server server(art, Endpoint{"127.0.0.1", 0}, 5s);
    const Endpoint ep{"127.0.0.1", server.port()};
    auto in_process = [&](const TokenSequence& t, const Rng& rng) {
        return serve_batch(*art, unpack(build_request(client, t, rng)));
    };

    size_t matches = 0, total = 0;
    for (uint64_t i = 0; i < 20; ++i) {
        const auto tokens = uniform_tokens(w.table.vocab(), 5, Rng(2024, 100 + i));
        const Rng rng(2024, 200 + i);
        const auto remote = client_round_trip(tokens, client, ep, rng);
        matches += remote.size() == 8 && remote == in_process(tokens, rng);
        ++total;
    }

    std::vector<std::future<size_t>> sessions;
    for (uint64_t c = 0; c < 4; ++c)
        sessions.push_back(std::async(std::launch::async, [&, c] {
            size_t ok = 0;
            for (uint64_t i = 0; i < 10; ++i) {
                const auto tokens = uniform_tokens(w.table.vocab(), 3 + c + i, Rng(2024, 1000 + 100 * c + i));
                const Rng rng(2024, 2000 + 100 * c + i);
                ok += client_round_trip(tokens, client, ep, rng) == in_process(tokens, rng);
            }
            return ok;
        }));
    size_t concurrent_ok = 0;
    for (auto& s : sessions) concurrent_ok += s.get();

    Bytes bad = build_request(client, uniform_tokens(w.table.vocab(), 5, Rng(2024, 3000)), Rng(2024, 3001));
    bad[kFrameHeaderSize] ^= 0x10;
    const Socket sock = connect_to(ep, 5s);
    sock.send_all(bad);
    const ReplyStatus status = read_reply(sock).status;
    const auto after_tokens = uniform_tokens(w.table.vocab(), 5, Rng(2024, 3002));
    const bool survives = client_round_trip(after_tokens, client, ep, Rng(2024, 3003)) ==
                          in_process(after_tokens, Rng(2024, 3003));
    server.stop();
    const bool pass = matches == total && concurrent_ok == 40 && status == ReplyStatus::corrupt && survives;
    return {pass, format("%zu/%zu loopback replies match in-process, %zu/40 concurrent, corrupt frame status %d, "
                         "server %s",
                         matches, total, concurrent_ok, static_cast<int>(status), survives ? "still serving" : "down")};
}

struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<Outcome()> check;
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "unbiasedness", 60, unbiasedness},
        {2, "variance law", 60, variance_law},
        {3, "exact trade-off vs closed form", 5, exact_vs_closed_form},
        {4, "composition sandwich", 120, sandwich},
        {5, "gaussian equivalence", 60, gaussian_equivalence},
        {6, "accountant spot values", 1, accountant_spot},
        {7, "codec", 30, codec},
        {8, "gradient checks", 30, gradients},
        {9, "soft-prompt utility restoration", 180, soft_prompt_restoration},
        {10, "calibration", 180, calibration},
        {11, "attack sanity", 60, attack_sanity},
        {12, "end-to-end protocol", 30, protocol},
        {13, "latent-dimension trend", 300, latent_dimension_trend},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = c.check();
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = seconds <= c.budget_seconds;
        const bool pass = out.pass && in_time;
        failures += !pass;
        std::printf("%s %2d %-32s %s [%.2f s / %.0f s%s]\n", pass ? "PASS" : "FAIL", c.id, c.name, out.detail.c_str(),
                    seconds, c.budget_seconds, in_time ? "" : ", over budget");
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
