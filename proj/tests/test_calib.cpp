#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "splitdp/calib.hpp"

using namespace splitdp;

TEST(AOfMu, RoundTripAndLimits) {
    const double A = A_of_mu(9.42809, 0.05, 1, 128);
    EXPECT_NEAR(mu_of(0.05, A, 1, 128), 9.42809, 1e-9);
    EXPECT_NEAR(A_of_mu(2.0, 0.05, 1, 1), 0.05 * std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(A_of_mu(1e9, 0.05, 4, 64), 0.05, 1e-12);
    EXPECT_NEAR(A_of_mu(mu_of(0.05, 0.13, 1, 128), 0.05, 1, 128), 0.13, 1e-14);
    try {
        A_of_mu(0.0, 0.05, 1, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::invalid_parameter);
    }
    EXPECT_THROW(A_of_mu(-1.0, 0.05, 1, 1), Error);
}

TEST(AOfMu, StrictlyDecreasingAndInverse) {
    double prev = std::numeric_limits<double>::infinity();
    for (double mu = 0.05; mu < 500; mu *= 1.37) {
        for (unsigned n : {1u, 3u, 8u})
            for (unsigned d : {1u, 16u, 128u})
                ASSERT_NEAR(mu_of(0.05, A_of_mu(mu, 0.05, n, d), n, d) / mu, 1.0, 1e-9);
        const double A = A_of_mu(mu, 0.05, 2, 8);
        EXPECT_LT(A, prev);
        prev = A;
    }
}

class CalibrationTest : public ::testing::Test {
protected:
    void SetUp() override {
        WorldConfig cfg;
        const auto table = synthetic_table(cfg, Rng(1));
        pipeline = Pipeline{table, train_projection(table.rows(), 16, ProjectionTrainOptions{}, Rng(2)), {}};
        pipeline.mech.d = 16;
        pipeline.mech.n = 4;
        eval = uniform_tokens(256, 4000, Rng(3));
    }

    Pipeline pipeline;
    TokenSequence eval;
};

TEST_F(CalibrationTest, RecoversKnownMu) {
    const double mu_star = 20.0;
    const Rng probe_rng(4);
    const double target = measure_attack(at_mu(pipeline, mu_star), eval, Metric::cosine, probe_rng).asr;
    CalibrationOptions opt;
    opt.tol = 0.002;
    const auto result = calibrate_to_asr(target, pipeline, eval, opt, probe_rng);
    EXPECT_TRUE(result.converged);
    EXPECT_NEAR(result.asr, target, opt.tol);
    EXPECT_NEAR(std::log(result.mu / mu_star), 0.0, 0.25) << result.mu;
    EXPECT_NEAR(result.A, A_of_mu(result.mu, 0.05, 4, 16), 1e-15);
}

TEST_F(CalibrationTest, ProbesAreMonotoneInMu) {
    const auto result = calibrate_to_asr(0.1, pipeline, eval, CalibrationOptions{}, Rng(5));
    auto trace = result.trace;
    std::sort(trace.begin(), trace.end(), [](const auto& a, const auto& b) { return a.mu < b.mu; });
    for (size_t i = 1; i < trace.size(); ++i) EXPECT_GE(trace[i].asr, trace[i - 1].asr - 0.01);
}

TEST_F(CalibrationTest, BracketExhaustion) {
    try {
        calibrate_to_asr(0.99, pipeline, eval, CalibrationOptions{}, Rng(6));
        FAIL() << "expected bracket exhaustion";
    } catch (const BracketExhausted& e) {
        EXPECT_EQ(e.kind(), ErrorKind::bracket_exhausted);
        EXPECT_LT(e.asr_lo(), e.asr_hi());
        EXPECT_LT(e.asr_hi(), 0.99);
    }
}

TEST_F(CalibrationTest, DeterministicAndTraced) {
    CalibrationOptions opt;
    const auto a = calibrate_to_asr(0.05, pipeline, eval, opt, Rng(7));
    const auto b = calibrate_to_asr(0.05, pipeline, eval, opt, Rng(7));
    EXPECT_EQ(a.mu, b.mu);
    EXPECT_EQ(a.A, b.A);
    EXPECT_EQ(a.asr, b.asr);
    std::ostringstream os;
    a.write_trace_csv(os);
    EXPECT_EQ(os.str().rfind("# splitdp calibration-trace v1\niter,mu,A,asr\n0,0.10000000000000001,", 0), 0u);
    EXPECT_EQ(a.trace.front().mu, opt.mu_lo);
    EXPECT_EQ(a.trace[1].mu, opt.mu_hi);
}

TEST_F(CalibrationTest, RejectsBadArguments) {
    EXPECT_THROW(calibrate_to_asr(0.0, pipeline, eval, CalibrationOptions{}, Rng(8)), Error);
    EXPECT_THROW(calibrate_to_asr(1.0, pipeline, eval, CalibrationOptions{}, Rng(8)), Error);
    CalibrationOptions opt;
    opt.mu_hi = opt.mu_lo;
    EXPECT_THROW(calibrate_to_asr(0.1, pipeline, eval, opt, Rng(8)), Error);
    Pipeline gaussian = pipeline.with_variant(Variant::gaussian);
    EXPECT_THROW(calibrate_to_asr(0.1, gaussian, eval, CalibrationOptions{}, Rng(8)), Error);
}
