// splitdp: experiment harness for the privatized split-inference toolkit.
//
//   splitdp <subcommand> [--config file] [flags]
//
// Flags override values from the config file (key=value lines, keys named
// like the long flags), which override built-in defaults.
// Exit status: 0 success, 1 I/O or runtime failure, 2 usage error.

#include <CLI11.hpp>
#include <json.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "splitdp/splitdp.hpp"

using namespace splitdp;

namespace {

volatile std::sig_atomic_t g_stop = 0;

void on_signal(int) { g_stop = 1; }

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::vector<double> parse_doubles(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string field;
    while (std::getline(ss, field, ',')) {
        try {
            out.push_back(std::stod(field));
        } catch (const std::exception&) {
            throw UsageError("bad number '" + field + "' in list '" + s + "'");
        }
    }
    if (out.empty()) throw UsageError("empty list");
    return out;
}

std::vector<unsigned> parse_unsigneds(const std::string& s) {
    std::vector<unsigned> out;
    for (double v : parse_doubles(s)) {
        if (v < 1 || v != static_cast<unsigned>(v)) throw UsageError("list '" + s + "' needs positive integers");
        out.push_back(static_cast<unsigned>(v));
    }
    return out;
}

/// Opens `path` for writing, or stdout when it is empty or "-".
class Output {
public:
    explicit Output(const std::string& path) {
        if (!path.empty() && path != "-") {
            file_.open(path, std::ios::trunc);
            if (!file_) throw Error(ErrorKind::io, "cannot write " + path);
        }
    }
    std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }
    void close() {
        if (file_.is_open()) {
            file_.close();
            if (file_.fail()) throw Error(ErrorKind::io, "write failed");
        }
    }

private:
    std::ofstream file_;
};

void csv_preamble(std::ostream& os, const std::string& schema, uint64_t seed, const std::string& params) {
    os << "# splitdp " << schema << " v1\n# seed=" << seed;
    if (!params.empty()) os << ' ' << params;
    os << '\n';
}

// ---------------------------------------------------------------------------
// Shared option groups

struct WorldOpts {
    uint64_t seed = 1;
    size_t vocab = 256;
    size_t dim = 64;
    size_t topics = 8;

    void add(CLI::App* app) {
        app->add_option("--seed", seed, "Seed for every random stream");
        app->add_option("--vocab", vocab, "Synthetic vocabulary size")->check(CLI::PositiveNumber);
        app->add_option("--dim", dim, "Synthetic embedding width b")->check(CLI::PositiveNumber);
        app->add_option("--topics", topics, "Synthetic topic count")->check(CLI::PositiveNumber);
    }
    WorldConfig config() const {
        WorldConfig cfg;
        cfg.vocab = vocab;
        cfg.dim = dim;
        cfg.topics = topics;
        return cfg;
    }
};

struct MechOpts {
    double c = 0.05;
    double A = 0.0;
    double mu = 0.0;
    unsigned n = 1;
    unsigned d = 0;  // 0: b / 32

    void add(CLI::App* app, double default_mu) {
        mu_default = default_mu;
        app->add_option("--c", c, "Per-coordinate bound")->check(CLI::PositiveNumber);
        app->add_option("--A", A, "Quantizer scale (overrides --mu)");
        app->add_option("--mu", mu, "Target privacy level mu (sets A)");
        app->add_option("--n", n, "Bits per coordinate")->check(CLI::Range(1, 8));
        app->add_option("--d", d, "Latent dimension (default b/32)");
    }
    unsigned latent_dim(size_t b) const { return d ? d : static_cast<unsigned>(std::max<size_t>(1, b / 32)); }
    MechanismParams params(size_t b) const {
        MechanismParams p;
        p.c = c;
        p.n = n;
        p.d = latent_dim(b);
        p.A = A > 0.0 ? A : A_of_mu(mu > 0.0 ? mu : mu_default, c, n, p.d);
        p.validate();
        return p;
    }

    double mu_default = 1.0;
};

EmbeddingTable load_table(const std::string& path) { return decode_table(read_file(path)); }

ProjectionPair load_projection(const std::string& path) { return decode_projection(read_file(path)); }

TokenSequence parse_tokens(const std::string& s) {
    std::istringstream in(s);
    auto corpus = parse_corpus(in);
    if (corpus.size() != 1) throw UsageError("--tokens needs one comma-separated line");
    return corpus.front();
}

void check_tokens(const TokenSequence& tokens, size_t vocab) {
    for (uint32_t id : tokens.ids)
        if (id >= vocab) throw UsageError("token id " + std::to_string(id) + " outside the vocabulary");
}

// ---------------------------------------------------------------------------
// Subcommands

struct GenTable {
    WorldOpts world;
    std::string out, corpus;
    size_t sequences = 64, length = 32;

    void add(CLI::App& root) {
        auto* app = root.add_subcommand("gen-table", "Write a seeded synthetic embedding table (and corpus)");
        world.add(app);
        app->add_option("--out", out, "Table file (DELE)")->required();
        app->add_option("--corpus", corpus, "Also write a synthetic corpus here");
        app->add_option("--sequences", sequences, "Corpus sequences");
        app->add_option("--length", length, "Tokens per corpus sequence");
        app->callback([this] { run(); });
    }
    void run() {
        WorldConfig cfg = world.config();
        cfg.length = length;
        const auto table = synthetic_table(cfg, Rng(world.seed, 1));
        write_file(out, encode_table(table));
        std::printf("table V=%zu b=%zu seed=%llu -> %s\n", table.vocab(), table.dim(),
                    static_cast<unsigned long long>(world.seed), out.c_str());
        if (!corpus.empty()) {
            Output o(corpus);
            o.stream() << "# splitdp corpus v1 seed=" << world.seed << '\n';
            write_corpus(o.stream(), synthetic_corpus(cfg, sequences, Rng(world.seed, 2)));
            o.close();
            std::printf("corpus %zu x %zu -> %s\n", sequences, length, corpus.c_str());
        }
    }
};

struct TrainProj {
    std::string table, out;
    unsigned d = 0;
    uint64_t seed = 1;
    ProjectionTrainOptions opt;

    void add(CLI::App& root) {
        auto* app = root.add_subcommand("train-proj", "Train the linear encoder/decoder on table rows");
        app->add_option("--table", table, "Embedding table (DELE)")->required();
        app->add_option("--d", d, "Latent dimension (default b/32)");
        app->add_option("--epochs", opt.epochs, "Maximum epochs");
        app->add_option("--lr", opt.lr, "Dimensionless step size")->check(CLI::PositiveNumber);
        app->add_option("--seed", seed, "Initialisation seed");
        app->add_option("--out", out, "Projection file (DELP)")->required();
        app->callback([this] { run(); });
    }
    void run() {
        const auto t = load_table(table);
        const size_t dim = d ? d : std::max<size_t>(1, t.dim() / 32);
        std::vector<double> history;
        const auto pp = train_projection(t.rows(), dim, opt, Rng(seed, 4), &history);
        write_file(out, encode_projection(pp));
        std::printf("projection b=%zu d=%zu seed=%llu mse %.6g -> %.6g (%zu epochs) -> %s\n", pp.input_dim(), dim,
                    static_cast<unsigned long long>(seed), history.front(), history.back(), history.size() - 1,
                    out.c_str());
    }
};

struct TrainSoft {
    std::string table, proj, corpus, out, history;
    MechOpts mech;
    double scale = 0.0;
    uint64_t seed = 1;
    SoftPromptOptions opt;

    void add(CLI::App& root) {
        auto* app = root.add_subcommand("train-soft", "Tune a soft prompt against privatized inputs");
        app->add_option("--table", table, "Embedding table (DELE)")->required();
        app->add_option("--proj", proj, "Projection (DELP)")->required();
        app->add_option("--corpus", corpus, "Tuning corpus")->required();
        mech.add(app, 0.4);
        app->add_option("--scale", scale, "Tied output scale (default: fitted on the clean corpus)");
        app->add_option("--r", opt.length, "Prompt length");
        app->add_option("--epochs", opt.epochs, "Epochs");
        app->add_option("--lr", opt.lr, "Learning rate")->check(CLI::PositiveNumber);
        app->add_option("--seed", seed, "Seed for noise and initialisation");
        app->add_option("--out", out, "Soft prompt (DELS)")->required();
        app->add_option("--history", history, "Per-epoch loss CSV");
        app->callback([this] { run(); });
    }
    void run() {
        const auto t = load_table(table);
        const auto pp = load_projection(proj);
        const auto tokens = read_corpus(corpus);
        for (const auto& s : tokens) check_tokens(s, t.vocab());
        Pipeline p{t, pp, mech.params(t.dim())};
        p.mech.d = static_cast<unsigned>(pp.latent_dim());
        if (mech.A <= 0.0) p.mech.A = A_of_mu(mech.mu > 0 ? mech.mu : mech.mu_default, p.mech.c, p.mech.n, p.mech.d);
        p.validate();
        const double s = scale > 0.0 ? scale : fit_tied_scale(t, tokens);
        const ToyLm model = ToyLm::tied(t, s);
        auto privatize = [&p](const TokenSequence& seq, const Rng& rng) { return p.reconstruct(seq, rng); };
        std::vector<double> losses;
        const auto prompt = tune_soft_prompt(model, privatize, tokens, opt, Rng(seed, 5), &losses);
        write_file(out, encode_soft_prompt(prompt));
        if (!history.empty()) {
            Output o(history);
            csv_preamble(o.stream(), "soft-prompt-history", seed, "mu=" + fmt(mu_of(p.mech)));
            o.stream() << "epoch,nll\n";
            for (size_t e = 0; e < losses.size(); ++e) o.stream() << e + 1 << ',' << fmt(losses[e]) << '\n';
            o.close();
        }
        std::printf("soft prompt r=%zu scale=%.6g mu=%.6g A=%.6g seed=%llu nll %.6g -> %.6g -> %s\n", opt.length, s,
                    mu_of(p.mech), p.mech.A, static_cast<unsigned long long>(seed),
                    losses.empty() ? 0.0 : losses.front(), losses.empty() ? 0.0 : losses.back(), out.c_str());
    }
};

struct Quantize {
    unsigned n = 4, d = 128;
    uint32_t T = 1024;
    size_t b = 4096;
    double c = 0.05, A = 0.1;
    uint64_t seed = 1;
    std::string out;

    void add(CLI::App& root) {
        auto* app = root.add_subcommand("quantize", "Quantize a seeded latent batch and report frame sizes");
        app->add_option("--n", n, "Bits per coordinate")->check(CLI::Range(1, 8));
        app->add_option("--d", d, "Latent dimension")->check(CLI::PositiveNumber);
        app->add_option("--T", T, "Tokens")->check(CLI::PositiveNumber);
        app->add_option("--b", b, "Embedding width for the float32 baseline")->check(CLI::PositiveNumber);
        app->add_option("--c", c, "Per-coordinate bound")->check(CLI::PositiveNumber);
        app->add_option("--A", A, "Quantizer scale");
        app->add_option("--seed", seed, "Seed");
        app->add_option("--out", out, "Write the request frame here");
        app->callback([this] { run(); });
    }
    void run() {
        MechanismParams p;
        p.c = c;
        p.A = A;
        p.n = n;
        p.d = d;
        p.validate();
        Rng rng(seed, 1);
        Matrix v(T, d);
        for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = c * (2.0 * rng.uniform() - 1.0);
        const Bytes frame = pack(stochastic_quantize(v, p, Rng(seed, 2)));
        const size_t baseline = static_cast<size_t>(T) * b * sizeof(float);
        std::printf("seed=%llu T=%u d=%u n=%u b=%zu\n", static_cast<unsigned long long>(seed), T, d, n, b);
        std::printf("payload_bytes=%zu\nframe_bytes=%zu\nbaseline_bytes=%zu\nratio=%.6g\n", payload_size(T, d, n),
                    frame.size(), baseline, static_cast<double>(baseline) / static_cast<double>(frame.size()));
        if (!out.empty()) write_file(out, frame);
    }
};

struct Accountant {
    double c = 0.05, A = 0.0, mu = 0.0;
    unsigned n = 1, d = 128;

    void add(CLI::App& root) {
        auto* app = root.add_subcommand("accountant", "Closed-form privacy accounting for the quantizer");
        app->add_option("--c", c, "Per-coordinate bound")->check(CLI::PositiveNumber);
        app->add_option("--A", A, "Quantizer scale");
        app->add_option("--mu", mu, "Solve for A at this mu instead");
        app->add_option("--n", n, "Bits per coordinate")->check(CLI::Range(1, 8));
        app->add_option("--d", d, "Latent dimension")->check(CLI::PositiveNumber);
        app->callback([this] { run(); });
    }
    void run() {
        if ((A > 0.0) == (mu > 0.0)) throw UsageError("give exactly one of --A and --mu");
        const double scale = A > 0.0 ? A : A_of_mu(mu, c, n, d);
        const double u = static_cast<double>((1u << n) - 1);
        const double m_mu = mu_of(c, scale, n, d);
        const double gamma = gamma_of(c, scale, n, d);
        const double sigma = std::sqrt((scale * scale - c * c) / u);
        std::printf("c=%.6g A=%.6g n=%u d=%u compositions=%.0f\n", c, scale, n, d, u * d);
        std::printf("mu=%.6g\ngamma=%.6g\n", m_mu, gamma);
        std::printf("variance_max_per_coord=%.6g\nvariance_max_total=%.6g\n", scale * scale / u,
                    scale * scale / u * d);
        std::printf("matched_sigma=%.6g\nmatched_C=%.6g\ngaussian_mu=%.6g\n", sigma, c * std::sqrt(double(d)),
                    gaussian_mu(c * std::sqrt(double(d)), sigma));
        std::printf("usable=%s\n", gamma < 0.5 ? "yes" : "no");
        if (gamma >= 0.5) std::fprintf(stderr, "warning: gamma >= 0.5, the Gaussian sandwich is vacuous\n");
    }
};

struct ComposeCheck {
    double c = 0.05, A = 0.13;
    unsigned n = 1, d = 8;
    size_t points = 1001;
    std::string out;

    void add(CLI::App& root) {
        auto* app = root.add_subcommand("compose-check", "Exact composed trade-off curve against the GDP sandwich");
        app->add_option("--c", c, "Per-coordinate bound")->check(CLI::PositiveNumber);
        app->add_option("--A", A, "Quantizer scale");
        app->add_option("--n", n, "Bits per coordinate")->check(CLI::Range(1, 8));
        app->add_option("--d", d, "Latent dimension")->check(CLI::PositiveNumber);
        app->add_option("--points", points, "Uniform alpha grid size")->check(CLI::Range(2, 1000000));
        app->add_option("--out", out, "CSV output (default stdout)");
        app->callback([this] { run(); });
    }
    void run() {
        const auto m = static_cast<unsigned>(((1u << n) - 1) * d);
        if (m > kMaxExactCompositions)
            throw Error(ErrorKind::tractability, "(2^n - 1) d = " + std::to_string(m) + " exceeds 4096");
        const double mu = mu_of(c, A, n, d);
        const double gamma = gamma_of(c, A, n, d);
        const auto exact = compose_exact(c, A, m, uniform_grid(points));
        double worst = 0.0;
        Output o(out);
        std::ostream& os = o.stream();
        os << "# splitdp compose-check v1\n# c=" << fmt(c) << " A=" << fmt(A) << " n=" << n << " d=" << d
           << " mu=" << fmt(mu) << " gamma=" << fmt(gamma) << '\n';
        os << "alpha,exact,lower,upper\n";
        for (size_t i = 0; i < exact.size(); ++i) {
            const double a = exact.alpha[i];
            const double lower = gdp_value(mu, a + gamma) - gamma;
            const double upper = gdp_value(mu, a - gamma) + gamma;
            worst = std::max({worst, lower - exact.beta[i], exact.beta[i] - upper});
            os << fmt(a) << ',' << fmt(exact.beta[i]) << ',' << fmt(lower) << ',' << fmt(upper) << '\n';
        }
        o.close();
        std::fprintf(out.empty() ? stderr : stdout, "mu=%.6g gamma=%.6g nodes=%zu max_violation=%.3g sandwich=%s\n",
                     mu, gamma, exact.size(), worst, worst <= 1e-9 ? "holds" : "violated");
    }
};

struct Calibrate {
    WorldOpts world;
    MechOpts mech;
    double target = 0.1;
    size_t tokens = 10000;
    std::string metric = "cosine", trace;
    CalibrationOptions opt;

    void add(CLI::App& root) {
        auto* app = root.add_subcommand("calibrate", "Find the mu at which embedding inversion reaches a target ASR");
        world.add(app);
        mech.add(app, 1.0);
        app->add_option("--target", target, "Target attack success rate")->required();
        app->add_option("--tokens", tokens, "Evaluation tokens")->check(CLI::PositiveNumber);
        app->add_option("--tol", opt.tol, "Tolerance on ASR");
        app->add_option("--max-iters", opt.max_iters, "Probe budget");
        app->add_option("--mu-lo", opt.mu_lo, "Lower mu bracket");
        app->add_option("--mu-hi", opt.mu_hi, "Upper mu bracket");
        app->add_option("--metric", metric, "cosine or l2");
        app->add_option("--trace", trace, "Probe trace CSV");
        app->callback([this] { run(); });
    }
    void run() {
        opt.metric = parse_metric(metric);
        const WorldConfig cfg = world.config();
        const auto table = synthetic_table(cfg, Rng(world.seed, 1));
        const MechanismParams p = mech.params(table.dim());
        Pipeline pipe{table, train_projection(table.rows(), p.d, ProjectionTrainOptions{}, Rng(world.seed, 4)), p};
        const auto eval = uniform_tokens(cfg.vocab, tokens, Rng(world.seed, 7));
        const auto result = calibrate_to_asr(target, pipe, eval, opt, Rng(world.seed, 10));
        const double verify = measure_attack(at_mu(pipe, result.mu), eval, opt.metric, Rng(world.seed, 11)).asr;
        if (!trace.empty()) {
            Output o(trace);
            std::ostringstream csv;
            result.write_trace_csv(csv);
            const std::string text = csv.str();
            const size_t first = text.find('\n') + 1;
            o.stream() << text.substr(0, first) << "# seed=" << world.seed << " target=" << fmt(target) << " d=" << p.d
                       << " n=" << p.n << '\n'
                       << text.substr(first);
            o.close();
        }
        std::printf("seed=%llu target=%.6g d=%u n=%u\nmu=%.6g\nA=%.6g\nasr=%.6g\nverify_asr=%.6g\nprobes=%zu\n"
                    "converged=%s\n",
                    static_cast<unsigned long long>(world.seed), target, p.d, p.n, result.mu, result.A, result.asr,
                    verify, result.trace.size(), result.converged ? "yes" : "no");
    }
};

struct Attack {
    WorldOpts world;
    MechOpts mech;
    size_t tokens = 10000;
    std::string metric = "cosine", space = "latent", out;

    void add(CLI::App& root) {
        auto* app = root.add_subcommand("attack", "Nearest-neighbour embedding inversion at a privacy level");
        world.add(app);
        mech.add(app, 1.0);
        app->add_option("--tokens", tokens, "Evaluation tokens")->check(CLI::PositiveNumber);
        app->add_option("--metric", metric, "cosine or l2");
        app->add_option("--space", space, "latent or embedding")->check(CLI::IsMember({"latent", "embedding"}));
        app->add_option("--out", out, "JSON output (default stdout)");
        app->callback([this] { run(); });
    }
    void run() {
        const Metric m = parse_metric(metric);
        const WorldConfig cfg = world.config();
        const auto table = synthetic_table(cfg, Rng(world.seed, 1));
        const MechanismParams p = mech.params(table.dim());
        const Pipeline pipe{table, train_projection(table.rows(), p.d, ProjectionTrainOptions{}, Rng(world.seed, 4)),
                            p};
        const auto eval = uniform_tokens(cfg.vocab, tokens, Rng(world.seed, 7));
        const auto report = space == "latent" ? measure_attack(pipe, eval, m, Rng(world.seed, 6))
                                              : measure_attack_embedding(pipe, eval, m, Rng(world.seed, 6));
        Output o(out);
        o.stream() << report.to_json() << '\n';
        o.close();
        std::fprintf(stderr, "seed=%llu mu=%.6g A=%.6g chance=%.6g\n", static_cast<unsigned long long>(world.seed),
                     mu_of(p), p.A, 1.0 / static_cast<double>(cfg.vocab));
    }
};

/// Artifacts for serve/client: loaded from files, or rebuilt from the seed.
struct Artifacts {
    WorldOpts world;
    MechOpts mech;
    std::string table_path, proj_path, prompt_path;
    double scale = 0.0;
    size_t prompt_length = 20;

    void add(CLI::App* app) {
        world.add(app);
        mech.add(app, 1.0);
        app->add_option("--table", table_path, "Embedding table (default: synthetic from --seed)");
        app->add_option("--proj", proj_path, "Projection (default: trained from --seed)");
    }

    EmbeddingTable table() const {
        return table_path.empty() ? synthetic_table(world.config(), Rng(world.seed, 1)) : load_table(table_path);
    }
    ProjectionPair projection(const EmbeddingTable& t) const {
        if (!proj_path.empty()) return load_projection(proj_path);
        return train_projection(t.rows(), mech.latent_dim(t.dim()), ProjectionTrainOptions{}, Rng(world.seed, 4));
    }
};

struct Serve {
    Artifacts art;
    std::string listen = "127.0.0.1:7878";
    size_t continuation = 8;
    double duration = 0.0;

    void add(CLI::App& root) {
        auto* app = root.add_subcommand("serve", "Run the inference server");
        art.add(app);
        app->add_option("--prompt", art.prompt_path, "Soft prompt (default: rows drawn from the table)");
        app->add_option("--scale", art.scale, "Tied output scale (default: fitted on a synthetic corpus)");
        app->add_option("--r", art.prompt_length, "Prompt length when no --prompt is given");
        app->add_option("--listen", listen, "host:port (port 0 picks a free port)");
        app->add_option("--continuation", continuation, "Reply length L");
        app->add_option("--duration", duration, "Stop after this many seconds (0: until signalled)");
        app->callback([this] { run(); });
    }
    void run() {
        auto server_art = std::make_shared<ServerArtifacts>();
        const auto table = art.table();
        server_art->proj = art.projection(table);
        double scale = art.scale;
        if (scale <= 0.0) {
            WorldConfig cfg = art.world.config();
            cfg.vocab = table.vocab();
            scale = fit_tied_scale(table, synthetic_corpus(cfg, 64, Rng(art.world.seed, 2)));
        }
        server_art->model = ToyLm::tied(table, scale);
        server_art->prompt = art.prompt_path.empty() ? init_soft_prompt(table, art.prompt_length, Rng(art.world.seed, 5))
                                                     : decode_soft_prompt(read_file(art.prompt_path));
        server_art->continuation = continuation;
        Server server(server_art, parse_endpoint(listen));
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        const auto ep = parse_endpoint(listen);
        std::printf("listening on %s:%u seed=%llu d=%zu scale=%.6g\n", ep.host.c_str(), server.port(),
                    static_cast<unsigned long long>(art.world.seed), server_art->proj.latent_dim(), scale);
        std::fflush(stdout);
        const auto start = std::chrono::steady_clock::now();
        while (!g_stop) {
            if (duration > 0.0 && std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() >= duration)
                break;
            std::this_thread::sleep_for(std::chrono::milliseconds(50));
        }
        server.stop();
        std::printf("served %zu frames\n", server.served());
    }
};

struct Client {
    Artifacts art;
    std::string connect = "127.0.0.1:7878", tokens;
    size_t length = 5;
    int timeout_ms = 5000;

    void add(CLI::App& root) {
        auto* app = root.add_subcommand("client", "Send one privatized request to a server");
        art.add(app);
        app->add_option("--connect", connect, "Server host:port");
        app->add_option("--tokens", tokens, "Comma-separated token ids (default: seeded random)");
        app->add_option("--length", length, "Random sequence length when --tokens is absent");
        app->add_option("--timeout", timeout_ms, "Deadline in milliseconds")->check(CLI::PositiveNumber);
        app->callback([this] { run(); });
    }
    void run() {
        ClientArtifacts client;
        client.table = art.table();
        client.proj = art.projection(client.table);
        client.mech = art.mech.params(client.table.dim());
        client.mech.d = static_cast<unsigned>(client.proj.latent_dim());
        if (art.mech.A <= 0.0)
            client.mech.A = A_of_mu(art.mech.mu > 0 ? art.mech.mu : art.mech.mu_default, client.mech.c, client.mech.n,
                                    client.mech.d);
        const TokenSequence seq =
            tokens.empty() ? uniform_tokens(client.table.vocab(), length, Rng(art.world.seed, 8)) : parse_tokens(tokens);
        check_tokens(seq, client.table.vocab());
        const auto reply = client_round_trip(seq, client, parse_endpoint(connect), Rng(art.world.seed, 9),
                                             std::chrono::milliseconds(timeout_ms));
        std::printf("seed=%llu mu=%.6g\nreply=", static_cast<unsigned long long>(art.world.seed), mu_of(client.mech));
        for (size_t i = 0; i < reply.size(); ++i) std::printf("%s%u", i ? "," : "", reply[i]);
        std::printf("\n");
    }
};

struct StudyOpts {
    WorldOpts world;
    unsigned n = 1;
    SoftPromptOptions prompt;

    void add(CLI::App* app) {
        world.add(app);
        app->add_option("--n", n, "Bits per coordinate")->check(CLI::Range(1, 8));
        app->add_option("--r", prompt.length, "Soft prompt length");
        app->add_option("--epochs", prompt.epochs, "Prompt tuning epochs");
        app->add_option("--lr", prompt.lr, "Prompt tuning rate")->check(CLI::PositiveNumber);
    }
    StudyConfig config() const {
        StudyConfig cfg;
        cfg.world = world.config();
        cfg.seed = world.seed;
        cfg.n = n;
        cfg.prompt = prompt;
        return cfg;
    }
    std::string params() const {
        return "n=" + std::to_string(n) + " r=" + std::to_string(prompt.length) + " epochs=" +
               std::to_string(prompt.epochs) + " lr=" + fmt(prompt.lr) + " vocab=" + std::to_string(world.vocab) +
               " dim=" + std::to_string(world.dim);
    }
};

struct SweepD {
    StudyOpts study;
    std::string ds = "2,4,8,16", mus = "0.3,1,3,10,50", out;

    void add(CLI::App& root) {
        auto* app = root.add_subcommand("sweep-d", "Soft-prompt NLL across latent dimensions and privacy levels");
        study.add(app);
        app->add_option("--ds", ds, "Comma-separated latent dimensions");
        app->add_option("--mus", mus, "Comma-separated privacy levels");
        app->add_option("--out", out, "CSV output (default stdout)");
        app->callback([this] { run(); });
    }
    void run() {
        const auto dims = parse_unsigneds(ds);
        const auto levels = parse_doubles(mus);
        const auto world = make_world(study.config());
        const auto points = sweep_latent_dims(world, dims, levels);
        Output o(out);
        csv_preamble(o.stream(), "sweep-d", study.world.seed, study.params() + " scale=" + fmt(world.scale));
        o.stream() << "d,mu,A,nll_none,nll_tuned,ppl_none,ppl_tuned\n";
        for (const auto& p : points)
            o.stream() << p.d << ',' << fmt(p.mu) << ',' << fmt(p.A) << ',' << fmt(p.nll_none) << ','
                       << fmt(p.nll_tuned) << ',' << fmt(std::exp(p.nll_none)) << ',' << fmt(std::exp(p.nll_tuned))
                       << '\n';
        o.close();
        for (double mu : levels) {
            const StudyPoint* best = nullptr;
            for (const auto& p : points)
                if (p.mu == mu && (!best || p.nll_tuned < best->nll_tuned)) best = &p;
            std::fprintf(stderr, "mu=%g best_d=%u nll_tuned=%.4f\n", mu, best->d, best->nll_tuned);
        }
    }
};

struct SweepMu {
    StudyOpts study;
    unsigned d = 0;
    std::string mus = "0.1,0.3,1,3,10,30", out;

    void add(CLI::App& root) {
        auto* app = root.add_subcommand("sweep-mu", "NLL/PPL and attack success across privacy levels");
        study.add(app);
        app->add_option("--d", d, "Latent dimension (default b/32)");
        app->add_option("--mus", mus, "Comma-separated privacy levels");
        app->add_option("--out", out, "CSV output (default stdout)");
        app->callback([this] { run(); });
    }
    void run() {
        const auto levels = parse_doubles(mus);
        const auto world = make_world(study.config());
        const unsigned dim = d ? d : static_cast<unsigned>(std::max<size_t>(1, study.world.dim / 32));
        const auto proj = study_projection(world, dim);
        const TokenSequence attack_tokens = flatten(world.eval);
        Output o(out);
        csv_preamble(o.stream(), "sweep-mu", study.world.seed,
                     study.params() + " d=" + std::to_string(dim) + " scale=" + fmt(world.scale));
        o.stream() << "mu,A,nll_none,nll_tuned,ppl_none,ppl_tuned,asr_cosine,asr_l2\n";
        for (double mu : levels) {
            const StudyPoint p = study_point(world, proj, mu);
            const Pipeline pipe = study_pipeline(world, proj, mu);
            const Rng noise(study.world.seed, 6);
            const double asr_cos = measure_attack(pipe, attack_tokens, Metric::cosine, noise).asr;
            const double asr_l2 = measure_attack(pipe, attack_tokens, Metric::l2, noise).asr;
            o.stream() << fmt(mu) << ',' << fmt(p.A) << ',' << fmt(p.nll_none) << ',' << fmt(p.nll_tuned) << ','
                       << fmt(std::exp(p.nll_none)) << ',' << fmt(std::exp(p.nll_tuned)) << ',' << fmt(asr_cos) << ','
                       << fmt(asr_l2) << '\n';
        }
        o.close();
    }
};

struct Report {
    WorldOpts world;
    MechOpts mech;
    std::vector<std::string> inputs;
    std::string mus = "0.3,1,3,10,50", out;

    void add(CLI::App& root) {
        auto* app = root.add_subcommand("report", "Summarise CSV outputs and embedding fidelity as JSON");
        world.add(app);
        mech.add(app, 1.0);
        app->add_option("inputs", inputs, "CSV files written by other subcommands")
            ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
        app->add_option("--mus", mus, "Privacy levels for the cosine-similarity table");
        app->add_option("--out", out, "JSON output (default stdout)");
        app->callback([this] { run(); });
    }

    static nlohmann::json summarise(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error(ErrorKind::io, "cannot open " + path);
        nlohmann::json j;
        j["path"] = path;
        std::vector<std::string> comments, columns;
        std::vector<std::vector<double>> values;
        std::string line;
        size_t rows = 0;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            if (line[0] == '#') {
                comments.push_back(line.substr(line.find_first_not_of("# ")));
                continue;
            }
            std::stringstream ss(line);
            std::string field;
            std::vector<std::string> fields;
            while (std::getline(ss, field, ',')) fields.push_back(field);
            if (columns.empty()) {
                columns = fields;
                values.resize(columns.size());
                continue;
            }
            if (fields.size() != columns.size())
                throw Error(ErrorKind::invalid_input, path + ": row " + std::to_string(rows + 1) + " has wrong width");
            ++rows;
            for (size_t i = 0; i < fields.size(); ++i) {
                try {
                    values[i].push_back(std::stod(fields[i]));
                } catch (const std::exception&) {
                    throw Error(ErrorKind::invalid_input, path + ": non-numeric field '" + fields[i] + "'");
                }
            }
        }
        j["schema"] = "";
        for (const auto& c : comments)
            if (c.rfind("splitdp ", 0) == 0) {
                j["schema"] = c.substr(8);
                break;
            }
        j["comments"] = comments;
        j["rows"] = rows;
        nlohmann::json cols = nlohmann::json::object();
        for (size_t i = 0; i < columns.size(); ++i) {
            if (values[i].empty()) continue;
            double sum = 0.0, lo = values[i].front(), hi = values[i].front();
            for (double v : values[i]) {
                sum += v;
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            cols[columns[i]] = {{"mean", sum / static_cast<double>(values[i].size())}, {"min", lo}, {"max", hi}};
        }
        j["columns"] = cols;
        return j;
    }

    void run() {
        nlohmann::json j;
        j["seed"] = world.seed;
        j["inputs"] = nlohmann::json::array();
        for (const auto& path : inputs) j["inputs"].push_back(summarise(path));

        // Fidelity of the reconstructed embeddings seen by the server.
        const WorldConfig cfg = world.config();
        const auto table = synthetic_table(cfg, Rng(world.seed, 1));
        const MechanismParams base = mech.params(table.dim());
        const Pipeline pipe{table, train_projection(table.rows(), base.d, ProjectionTrainOptions{}, Rng(world.seed, 4)),
                            base};
        const auto eval = flatten(synthetic_corpus(cfg, 64, Rng(world.seed, 3)));
        const Matrix clean = table.embed(eval);
        j["cosine_similarity"] = nlohmann::json::array();
        j["cosine_similarity_projection_only"] = mean_row_cosine(decode(pipe.latents(eval), pipe.proj), clean);
        for (double mu : parse_doubles(mus)) {
            const Pipeline p = at_mu(pipe, mu);
            const double cosine = mean_row_cosine(p.reconstruct(eval, Rng(world.seed, 6)), clean);
            j["cosine_similarity"].push_back({{"mu", mu}, {"A", p.mech.A}, {"mean_cosine", cosine}});
        }
        j["d"] = base.d;
        j["n"] = base.n;
        Output o(out);
        o.stream() << j.dump(2) << '\n';
        o.close();
    }
};

/// Expands `--config file` into flags placed right after the subcommand, so
/// that flags given on the command line (parsed later) take precedence.
std::vector<std::string> expand_config(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::string path;
    for (size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
            break;
        }
    }
    if (path.empty()) return args;
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot open config " + path);
    std::vector<std::string> injected;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value");
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        injected.push_back("--" + trim(line.substr(0, eq)) + "=" + trim(line.substr(eq + 1)));
    }
    auto sub = std::find_if(args.begin(), args.end(), [](const std::string& a) { return a.empty() || a[0] != '-'; });
    if (sub == args.end()) throw UsageError("--config needs a subcommand");
    args.insert(sub + 1, injected.begin(), injected.end());
    return args;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"splitdp: privatized split-inference experiments", "splitdp"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.add_option("--config", "key=value defaults file (flags take precedence)");

    GenTable gen_table;
    TrainProj train_proj;
    TrainSoft train_soft;
    Quantize quantize;
    Accountant accountant;
    ComposeCheck compose_check;
    Calibrate calibrate;
    Attack attack;
    Serve serve;
    Client client;
    SweepD sweep_d;
    SweepMu sweep_mu;
    Report report;
    gen_table.add(app);
    train_proj.add(app);
    train_soft.add(app);
    quantize.add(app);
    accountant.add(app);
    compose_check.add(app);
    calibrate.add(app);
    attack.add(app);
    serve.add(app);
    client.add(app);
    sweep_d.add(app);
    sweep_mu.add(app);
    report.add(app);

    try {
        std::vector<std::string> args = expand_config(argc, argv);
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.kind() == ErrorKind::invalid_parameter ? 2 : 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
