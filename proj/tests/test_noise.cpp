#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "gnsse/noise.hpp"

using namespace gnsse;

namespace {

CorrelationPair reference_pair()
{
    return {white(0.5), exp_decay(1.0, 1.0)};
}

double simpson(const std::function<double(double)>& f, double a, double b, int n = 2000)
{
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i)
        s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
    return s * h / 3.0;
}

struct Sample {
    double n = 0, s = 0, s2 = 0;
    void add(double v) { n += 1; s += v; s2 += v * v; }
    double mean() const { return s / n; }
    double se() const { return std::sqrt((s2 / n - mean() * mean()) / n); }
};

}  // namespace

TEST(Kernels, ReferencePairAtZeroLag)
{
    const auto a = kernel_eval(reference_pair(), Correlation::Alpha, 0.0);
    EXPECT_DOUBLE_EQ(a.smooth, 1.0);
    EXPECT_DOUBLE_EQ(a.delta_weight, 0.5);
    const auto e = kernel_eval(reference_pair(), Correlation::Eta, 0.0);
    EXPECT_DOUBLE_EQ(e.smooth, -1.0);
    EXPECT_DOUBLE_EQ(e.delta_weight, 0.5);
    const auto far = kernel_eval(reference_pair(), Correlation::Alpha, 2.0);
    EXPECT_NEAR(far.smooth, std::exp(-2.0), 1e-15);
}

TEST(Kernels, DeltaConstraintResidual)
{
    const auto r = delta_constraint_residual(reference_pair());
    EXPECT_DOUBLE_EQ(r.kappa, 1.0);
    EXPECT_DOUBLE_EQ(r.residual, 0.0);
    // alpha + eta = 2 <x x> = 2 c e^{-a|tau|}: integral over the line is 4c/a
    const auto colored = delta_constraint_residual({exp_decay(1.5, 3.0), no_noise()});
    EXPECT_DOUBLE_EQ(colored.kappa, 0.0);
    EXPECT_NEAR(colored.residual, 2.0, 1e-14);
}

TEST(Kernels, RowAndTriangleIntegralsAgainstQuadrature)
{
    // x: White(0.3) + Exp(0.7, 2); y: Exp(1.1, 0.5). A white kernel of weight
    // w contributes w/2 to int_0^t (the delta sits on the boundary).
    const CorrelationPair p{Component{{WhiteKernel{0.3}, ExpKernel{0.7, 2.0}}}, exp_decay(1.1, 0.5)};
    for (double t : {0.1, 0.8, 2.5}) {
        const auto smooth_alpha = [&](double tau) { return kernel_eval(p, Correlation::Alpha, tau).smooth; };
        const double row = simpson([&](double s) { return smooth_alpha(t - s); }, 0.0, t) + 0.3 / 2.0;
        EXPECT_NEAR(alpha_row_integral(p, t), row, 1e-10);
        const double tri =
            simpson([&](double u) { return simpson([&](double s) { return smooth_alpha(u - s); }, 0.0, u, 200); }, 0.0,
                    t, 200) +
            0.3 * t / 2.0;
        EXPECT_NEAR(alpha_triangle_integral(p, t), tri, 1e-9);
        const auto smooth_eta = [&](double tau) { return kernel_eval(p, Correlation::Eta, tau).smooth; };
        EXPECT_NEAR(eta_row_integral(p, t), simpson([&](double s) { return smooth_eta(t - s); }, 0.0, t) + 0.15,
                    1e-10);
    }
}

TEST(TimeGridTest, RejectsNonMultiple)
{
    EXPECT_THROW(TimeGrid::make(1.0, 0.3), NoiseError);
    EXPECT_THROW(TimeGrid::make(-1.0, 0.1), NoiseError);
    EXPECT_THROW(TimeGrid::make(1.0, 0.0), NoiseError);
    const auto g = TimeGrid::make(2.0, 1e-3);
    EXPECT_EQ(g.n_steps, 2000u);
    EXPECT_EQ(g.index_of(1.0), 1000u);
    EXPECT_THROW(g.index_of(1.00051), NoiseError);
}

TEST(Validation, AcceptsReferenceAndRejectsNegativeAmplitude)
{
    const auto ok = validate_pair(reference_pair());
    EXPECT_TRUE(ok.accepted);
    EXPECT_DOUBLE_EQ(ok.kappa, 1.0);
    EXPECT_DOUBLE_EQ(ok.residual, 0.0);
    const auto bad = validate_pair({exp_decay(-1.0, 1.0), no_noise()});
    EXPECT_FALSE(bad.accepted);
    EXPECT_FALSE(bad.probe_psd);
    EXPECT_LT(bad.probe_min_eigenvalue, 0.0);
    EXPECT_NE(bad.violation.find("amplitude"), std::string::npos);
    EXPECT_FALSE(validate_pair({white(-0.1), no_noise()}).accepted);
    EXPECT_FALSE(validate_pair({exp_decay(1.0, 0.0), no_noise()}).accepted);
}

TEST(OrnsteinUhlenbeck, StationaryAutocovariance)
{
    const ExpKernel k{0.8, 1.5};
    const auto grid = TimeGrid::make(2.0, 0.05);
    const std::size_t lags[] = {0, 4, 10, 20};
    Sample est[4];
    for (std::uint64_t i = 0; i < 20000; ++i) {
        RngStream rng(StreamKey{11, StreamPurpose::Generic, 0, i, 0});
        const auto r = sample_ou_exact(k, grid, rng);
        for (int l = 0; l < 4; ++l)
            est[l].add(r[10] * r[10 + lags[l]]);
    }
    for (int l = 0; l < 4; ++l)
        EXPECT_NEAR(est[l].mean(), k.c * std::exp(-k.a * grid.time(lags[l])), 5.0 * est[l].se()) << "lag " << l;
}

TEST(OrnsteinUhlenbeck, ContinuationHasExactConditionalLaw)
{
    const ExpKernel k{2.0, 3.0};
    const double start = 1.7, dt = 0.01;
    Sample m, v;
    for (std::uint64_t i = 0; i < 20000; ++i) {
        RngStream rng(StreamKey{3, StreamPurpose::Generic, 0, i, 1});
        const auto r = continue_ou(k, dt, 30, start, rng);
        ASSERT_EQ(r.front(), start);
        m.add(r.back());
        v.add((r.back() - start * std::exp(-0.9)) * (r.back() - start * std::exp(-0.9)));
    }
    EXPECT_NEAR(m.mean(), start * std::exp(-k.a * 0.3), 5.0 * m.se());
    EXPECT_NEAR(v.mean(), k.c * (1.0 - std::exp(-2.0 * k.a * 0.3)), 5.0 * v.se());
}

TEST(Realization, DeterministicAndStreamSeparated)
{
    const auto grid = TimeGrid::make(1.0, 0.01);
    const auto p = reference_pair();
    const auto a = sample_realization(p, grid, 99, 5);
    const auto b = sample_realization(p, grid, 99, 5);
    const auto c = sample_realization(p, grid, 99, 6);
    EXPECT_EQ(a.x.white_increments, b.x.white_increments);
    EXPECT_EQ(a.y.ou_paths, b.y.ou_paths);
    EXPECT_NE(a.x.white_increments, c.x.white_increments);
    EXPECT_TRUE(a.x.ou_paths.empty());
    EXPECT_EQ(a.y.ou_paths.size(), 1u);
    EXPECT_EQ(a.y.ou_paths[0].size(), grid.n_steps + 1);
    const auto z = sample_realization(p, grid, 99, 5, NoiseOptions{false});
    EXPECT_EQ(z.y.ou_paths[0][0], 0.0);
}

TEST(Realization, ConditionalContinuationKeepsThePast)
{
    const auto grid = TimeGrid::make(2.0, 0.01);
    const CorrelationPair p{Component{{WhiteKernel{0.2}, ExpKernel{1.0, 2.0}}}, exp_decay(0.5, 1.0)};
    const auto pre = sample_realization(p, grid, 7, 3);
    const std::size_t split = 100;
    const auto c1 = condition_continue(pre, split, 7, 3, 1);
    const auto c2 = condition_continue(pre, split, 7, 3, 2);
    EXPECT_EQ(c1.offset, split);
    EXPECT_EQ(c1.steps(), grid.n_steps - split);
    EXPECT_EQ(c1.x.ou_paths[0][0], pre.x.ou_paths[0][split]);
    EXPECT_EQ(c1.colored_x(split), pre.colored_x(split));
    EXPECT_EQ(c1.colored_y(split), pre.colored_y(split));
    EXPECT_NE(c1.x.white_increments, c2.x.white_increments);
    EXPECT_NE(c1.colored_y(150), c2.colored_y(150));
    EXPECT_THROW(condition_continue(pre, split, 7, 3, 0), NoiseError);
}

TEST(Realization, CoarseningSumsIncrementsAndSubsamples)
{
    const auto grid = TimeGrid::make(1.0, 0.01);
    const CorrelationPair p{Component{{WhiteKernel{0.4}, ExpKernel{1.0, 2.0}}}, white(0.1)};
    const auto fine = sample_realization(p, grid, 1, 0);
    const auto coarse = coarsen(fine, 4);
    EXPECT_EQ(coarse.grid.n_steps, 25u);
    EXPECT_DOUBLE_EQ(coarse.grid.dt, 0.04);
    for (std::size_t i = 0; i < 25; ++i) {
        double sx = 0.0, sy = 0.0;
        for (std::size_t j = 0; j < 4; ++j) {
            sx += fine.x.white_increments[4 * i + j];
            sy += fine.y.white_increments[4 * i + j];
        }
        EXPECT_NEAR(coarse.x.white_increments[i], sx, 1e-15);
        EXPECT_NEAR(coarse.y.white_increments[i], sy, 1e-15);
        EXPECT_EQ(coarse.colored_x(i), fine.colored_x(4 * i));
    }
    EXPECT_THROW(coarsen(fine, 3), NoiseError);
}

TEST(Realization, IntegratedNoiseVarianceIsTheMemoryIntegral)
{
    // Var(int_0^t x) = 2 int_0^t du int_0^u <x_u x_s> ds, with the white
    // part counted in full: w t.
    const CorrelationPair p{Component{{WhiteKernel{0.5}, ExpKernel{1.0, 1.0}}}, no_noise()};
    const auto grid = TimeGrid::make(1.0, 0.005);
    Sample v;
    for (std::uint64_t i = 0; i < 20000; ++i) {
        const auto r = sample_realization(p, grid, 2024, i);
        double integral = 0.0;
        for (std::size_t k = 0; k < grid.n_steps; ++k)
            integral += r.z_integral(k).real();
        v.add(integral * integral);
    }
    const double want = 0.5 * 1.0 + 2.0 * (1.0 - 1.0 + std::exp(-1.0));
    EXPECT_NEAR(memory_integral(p, 1.0), want, 1e-14);
    EXPECT_NEAR(v.mean(), want, 5.0 * v.se());
}

TEST(GeneralSampler, CholeskyPathHasKernelCovariance)
{
    const Component comp = exp_decay(1.0, 2.0);
    const auto grid = TimeGrid::make(1.0, 0.1);
    Sample c0, c3;
    for (std::uint64_t i = 0; i < 20000; ++i) {
        RngStream rng(StreamKey{8, StreamPurpose::Generic, 0, i, 0});
        const auto s = sample_general_cholesky(comp, grid, rng);
        ASSERT_EQ(s.size(), grid.n_steps + 1);
        c0.add(s[2] * s[2]);
        c3.add(s[2] * s[5]);
    }
    EXPECT_NEAR(c0.mean(), 1.0, 5.0 * c0.se());
    EXPECT_NEAR(c3.mean(), std::exp(-0.6), 5.0 * c3.se());
    RngStream rng(StreamKey{8, StreamPurpose::Generic, 0, 0, 0});
    EXPECT_THROW(sample_general_cholesky(exp_decay(-1.0, 1.0), grid, rng), NoiseError);
}

TEST(GeneralSampler, SchurContinuationMatchesMarkovLaw)
{
    // For an exponential kernel only the last past value matters.
    const Component comp = exp_decay(1.0, 2.0);
    const auto grid = TimeGrid::make(1.0, 0.1);
    const std::vector<double> past{0.3, -0.2, 0.9, 1.2};
    Sample next;
    for (std::uint64_t i = 0; i < 20000; ++i) {
        RngStream rng(StreamKey{9, StreamPurpose::Generic, 0, i, 1});
        const auto s = condition_continue_general(comp, grid, past, rng);
        ASSERT_EQ(s.size(), grid.n_steps + 1 - past.size() + 1);
        ASSERT_EQ(s.front(), 1.2);
        next.add(s[2]);
    }
    EXPECT_NEAR(next.mean(), 1.2 * std::exp(-0.4), 5.0 * next.se());
}
