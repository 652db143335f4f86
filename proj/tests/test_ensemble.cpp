#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "gnsse/ensemble.hpp"
#include "gnsse/me_residual.hpp"

using namespace gnsse;

namespace {

ExperimentConfig small_config()
{
    ExperimentConfig c;
    c.model = spin_boson(1.0, 1.0);
    c.pair = {white(0.5), exp_decay(1.0, 1.0)};
    c.grid = TimeGrid::make(1.0, 1e-2);
    c.n_trajectories = 200;
    c.master_seed = 12345;
    c.n_snapshots = 10;
    c.workers = 1;
    return c;
}

bool identical(const EnsembleStats& a, const EnsembleStats& b)
{
    if (a.times != b.times || a.mean_norm_sq != b.mean_norm_sq || a.se_norm_sq != b.se_norm_sq)
        return false;
    for (std::size_t k = 0; k < a.rho_raw.size(); ++k)
        if (a.rho_raw[k] != b.rho_raw[k] || a.rho_raw_se_re[k] != b.rho_raw_se_re[k] || a.rho[k] != b.rho[k])
            return false;
    return true;
}

}  // namespace

TEST(TreeReduce, OrderIsFixedForAnyWorkerCount)
{
    auto make = [](std::size_t i) { return std::to_string(i) + ";"; };
    auto merge = [](std::string& a, const std::string& b) { a = "(" + a + b + ")"; };
    const auto one = tree_reduce<std::string>(13, 1, make, merge);
    for (unsigned w : {2u, 3u, 8u, 64u})
        EXPECT_EQ(tree_reduce<std::string>(13, w, make, merge), one);
    EXPECT_EQ(tree_reduce<std::string>(1, 4, make, merge), "0;");
    EXPECT_THROW(tree_reduce<std::string>(0, 1, make, merge), std::invalid_argument);
}

TEST(TreeReduce, PropagatesExceptions)
{
    auto make = [](std::size_t i) -> int {
        if (i == 5)
            throw std::runtime_error("leaf failed");
        return 1;
    };
    auto merge = [](int& a, const int& b) { a += b; };
    EXPECT_THROW(tree_reduce<int>(10, 3, make, merge), std::runtime_error);
}

TEST(Ensemble, BitIdenticalAcrossWorkerCounts)
{
    auto c = small_config();
    const auto a = run_ensemble(c);
    c.workers = 4;
    const auto b = run_ensemble(c);
    c.workers = 7;
    const auto d = run_ensemble(c);
    EXPECT_TRUE(identical(a, b));
    EXPECT_TRUE(identical(a, d));
    c.master_seed = 54321;
    EXPECT_FALSE(identical(a, run_ensemble(c)));
}

TEST(Ensemble, NoNoiseKeepsNormExactly)
{
    auto c = small_config();
    c.model = dephasing(1.0, 1.0);
    c.pair = {white(0.0), no_noise()};
    c.integrator = IntegratorKind::DephasingExact;
    const auto st = run_ensemble(c);
    for (std::size_t k = 0; k < st.times.size(); ++k) {
        EXPECT_NEAR(st.mean_norm_sq[k], 1.0, 1e-12);
        EXPECT_NEAR(st.raw_trace[k], 1.0, 1e-12);
        EXPECT_NEAR(std::abs(st.rho[k](0, 1)), 0.5, 1e-12);
    }
}

TEST(Ensemble, StatisticsAreConsistent)
{
    const auto st = run_ensemble(small_config());
    EXPECT_EQ(st.n_trajectories, 200u);
    EXPECT_EQ(st.n_aborted, 0u);
    ASSERT_EQ(st.times.size(), 11u);
    EXPECT_NEAR(st.raw_trace[0], 1.0, 1e-14);
    for (std::size_t k = 0; k < st.times.size(); ++k) {
        EXPECT_TRUE(is_hermitian(st.rho_raw[k], 1e-10));
        Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(st.rho_raw[k]);
        EXPECT_GT(es.eigenvalues().minCoeff(), -1e-10);
        EXPECT_NEAR(st.raw_trace[k], st.mean_norm_sq[k], 1e-12);
        EXPECT_NEAR(st.rho[k].trace().real(), 1.0, 1e-12);
        EXPECT_GT(st.effective_sample_size[k], 1.0);
        EXPECT_LE(st.effective_sample_size[k], 200.0 + 1e-9);
    }
}

TEST(Ensemble, InvalidConfigsAreRejected)
{
    auto c = small_config();
    c.pair = {exp_decay(1.0, 1.0), no_noise()};
    EXPECT_THROW(run_ensemble(c), ConfigError);   // em_ito needs white x
    c = small_config();
    c.pair = {white(0.5), exp_decay(-1.0, 1.0)};
    EXPECT_THROW(run_ensemble(c), ConfigError);
    c = small_config();
    c.branch.continuations = 50;
    EXPECT_THROW(validate_config(c, true), ConfigError);
    c = small_config();
    c.branch.s = 0.5;
    c.branch.checkpoint_offsets = {0.6};
    EXPECT_THROW(validate_config(c, true), ConfigError);
    c.branch.checkpoint_offsets = {0.1234};
    EXPECT_THROW(validate_config(c, true), ConfigError);
}

TEST(ZVerdict, BinomialLogic)
{
    std::vector<double> zs(300, 0.5);
    EXPECT_TRUE(z_verdict(zs).pass);
    zs[0] = 4.0;
    auto v = z_verdict(zs);
    EXPECT_EQ(v.exceed, 1u);
    EXPECT_TRUE(v.pass);
    zs[1] = zs[2] = zs[3] = -5.0;
    v = z_verdict(zs);
    EXPECT_EQ(v.exceed, 4u);
    EXPECT_FALSE(v.pass);   // 4/300 > 1%
    EXPECT_NEAR(v.max_abs, 5.0, 0.0);
}

TEST(Stats, BinomialTwoSided)
{
    // Symmetric case: P(X <= 2 or X >= 8) for n = 10, p = 0.5
    const double want = 2.0 * (1.0 + 10.0 + 45.0) / 1024.0;
    EXPECT_NEAR(stats::binomial_two_sided_p(2, 10, 0.5), want, 1e-12);
    EXPECT_NEAR(stats::binomial_two_sided_p(5, 10, 0.5), 1.0, 1e-12);
    EXPECT_NEAR(stats::two_sided_tail(3.0), 0.0026997960632601866, 1e-15);
}

TEST(Branching, DeltaConstraintPassesSmallRun)
{
    auto c = small_config();
    c.grid = TimeGrid::make(1.0, 1e-3);
    c.branch.s = 0.5;
    c.branch.prefixes = 6;
    c.branch.continuations = 300;
    c.branch.checkpoint_offsets = {0.1, 0.5};
    const auto rep = martingale_branch_test(c);
    EXPECT_EQ(rep.n_z, 12u);
    EXPECT_FALSE(rep.oracle_available);
    EXPECT_TRUE(rep.pass) << "rms z " << rep.rms_z;
    ASSERT_EQ(rep.prefixes.size(), 6u);
    for (std::size_t p = 0; p < 6; ++p)
        EXPECT_EQ(rep.prefixes[p].index, p);
}

TEST(Branching, ColoredDephasingFailsAndMatchesOracle)
{
    auto c = small_config();
    c.model = dephasing(1.0, 1.0);
    c.pair = {exp_decay(1.0, 1.0), no_noise()};
    c.integrator = IntegratorKind::DephasingExact;
    c.grid = TimeGrid::make(1.0, 1e-3);
    c.branch.s = 0.5;
    c.branch.prefixes = 4;
    c.branch.continuations = 2000;
    c.branch.checkpoint_offsets = {0.5};
    const auto rep = martingale_branch_test(c);
    EXPECT_FALSE(rep.pass);
    EXPECT_TRUE(rep.oracle_available);
    EXPECT_EQ(rep.oracle_exceed, 0u) << rep.oracle_max_abs_z;
}

TEST(Branching, PrefixMatchesEnsembleTrajectory)
{
    // Prefix p and ensemble trajectory p share their noise.
    auto c = small_config();
    c.branch.s = 0.5;
    c.branch.prefixes = 2;
    c.branch.continuations = 100;
    c.branch.checkpoint_offsets = {0.5};
    const auto rep = martingale_branch_test(c);
    const SseIntegrator integ(c.model, c.pair, c.integrator);
    const auto states = trajectory_snapshots(c, integ, 1, {0, 50});
    EXPECT_LT((states[1] - rep.prefixes[1].psi_s).norm(), 1e-15);
}

TEST(Convergence, WeakOrderFitRecoversKnownExponent)
{
    const std::vector<double> dts{0.016, 0.008, 0.004, 0.002};
    std::vector<double> err, se(4, 1e-3);
    for (double dt : dts)
        err.push_back(3.0 * (std::pow(dt, 1.5) - std::pow(0.001, 1.5)));
    EXPECT_NEAR(detail::fit_weak_order(dts, err, se, 0.001), 1.5, 1e-3);
}

TEST(Convergence, RejectsIncommensurateLevels)
{
    auto c = small_config();
    EXPECT_THROW(convergence_study(c, {0.01, 0.003, 0.001}), ConfigError);
    EXPECT_THROW(convergence_study(c, {0.01, 0.005}), ConfigError);
}

TEST(Comparison, EnvelopeFormula)
{
    RealMatrix re(2, 2), im = RealMatrix::Zero(2, 2);
    re << 0.01, 0.02, 0.02, 0.01;
    EXPECT_NEAR(trace_distance_envelope(re, im), 0.5 * std::sqrt(2.0) * std::sqrt(0.001), 1e-15);
}

TEST(MeResidual, NoiselessDephasingHasZeroResidual)
{
    auto c = small_config();
    c.model = dephasing(1.0, 1.0);
    c.pair = {white(0.0), no_noise()};
    c.integrator = IntegratorKind::DephasingExact;
    c.grid = TimeGrid::make(1.0, 1e-3);
    c.n_snapshots = 50;
    c.track_derivatives = true;
    c.n_trajectories = 10;
    const auto st = run_ensemble(c);
    const auto rep = me_residual_check(st, c.model, c.pair);
    EXPECT_TRUE(rep.pass);
    for (const auto& p : rep.points)
        EXPECT_LT(p.max_abs_residual, 1e-3);
}

TEST(MeResidual, ColoredDephasingResidualIsConsistentWithZero)
{
    auto c = small_config();
    c.model = dephasing(1.0, 1.0);
    c.pair = {white(0.5), exp_decay(1.0, 1.0)};
    c.integrator = IntegratorKind::DephasingExact;
    c.grid = TimeGrid::make(1.0, 1e-3);
    c.n_snapshots = 50;
    c.track_derivatives = true;
    c.n_trajectories = 5000;
    const auto st = run_ensemble(c);
    const auto rep = me_residual_check(st, c.model, c.pair);
    EXPECT_TRUE(rep.pass) << rep.max_ratio;
    // A wrong generator (the Markovian rate) is detected.
    const CorrelationPair markov{white(1.0), no_noise()};
    EXPECT_FALSE(me_residual_check(st, c.model, markov).pass);
}

TEST(MeResidual, RequiresFineSnapshots)
{
    auto c = small_config();
    c.model = dephasing(1.0, 1.0);
    c.pair = {white(0.5), no_noise()};
    c.integrator = IntegratorKind::DephasingExact;
    c.n_snapshots = 10;
    c.track_derivatives = true;
    const auto st = run_ensemble(c);
    EXPECT_THROW(me_residual_check(st, c.model, c.pair), OracleError);
}
