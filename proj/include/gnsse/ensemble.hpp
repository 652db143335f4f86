#pragma once

// Reproducible Monte Carlo over trajectories. Trajectory i always draws its
// noise from the streams addressed by (master_seed, i); partial sums are
// reduced along a fixed binary tree (see parallel.hpp). Results are
// therefore bit-identical for any worker count.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gnsse/integrator.hpp"
#include "gnsse/linalg.hpp"
#include "gnsse/model.hpp"
#include "gnsse/noise.hpp"
#include "gnsse/oracles.hpp"
#include "gnsse/parallel.hpp"
#include "gnsse/stats.hpp"

namespace gnsse {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct BranchParams {
    double s = 1.0;                     ///< branch time
    std::size_t continuations = 1000;   ///< m, continuations per prefix
    std::size_t prefixes = 64;
    std::vector<double> checkpoint_offsets{0.1, 0.5, 1.0};
};

struct ExperimentConfig {
    ModelSpec model;
    CorrelationPair pair;
    TimeGrid grid;
    std::size_t n_trajectories = 1000;
    std::uint64_t master_seed = 0;
    IntegratorKind integrator = IntegratorKind::EmIto;
    NoiseOptions noise;
    std::size_t n_snapshots = 100;
    bool track_derivatives = false;     ///< collect moments for the master-equation residual
    BranchParams branch;
    unsigned workers = 0;               ///< 0 = default_workers()

    unsigned effective_workers() const { return workers > 0 ? workers : default_workers(); }
};

inline constexpr std::size_t kLeafSize = 32;
inline constexpr double kMaxAbortFraction = 0.01;

/// Throws ConfigError naming the violated invariant.
inline void validate_config(const ExperimentConfig& c, bool branching = false)
{
    try {
        c.model.validate();
    } catch (const ModelError& e) {
        throw ConfigError(e.what());
    }
    const auto rep = validate_pair(c.pair);
    if (!rep.accepted)
        throw ConfigError("noise: " + rep.violation);
    if (c.n_trajectories == 0)
        throw ConfigError("ensemble: n_trajectories must be positive");
    try {
        SseIntegrator probe(c.model, c.pair, c.integrator);
    } catch (const IntegratorError& e) {
        throw ConfigError(e.what());
    }
    if (branching) {
        const auto& b = c.branch;
        if (!(b.s > 0.0 && b.s < c.grid.t_max))
            throw ConfigError("branching: branch time s must lie strictly inside (0, t_max)");
        if (b.continuations < 100)
            throw ConfigError("branching: at least 100 continuations per prefix are required");
        if (b.prefixes == 0)
            throw ConfigError("branching: prefixes must be positive");
        if (b.checkpoint_offsets.empty())
            throw ConfigError("branching: at least one checkpoint is required");
        for (double off : b.checkpoint_offsets)
            if (!(off > 0.0) || b.s + off > c.grid.t_max * (1.0 + 1e-12))
                throw ConfigError("branching: checkpoints must lie in (s, t_max]");
        try {
            c.grid.index_of(b.s);
            for (double off : b.checkpoint_offsets)
                c.grid.index_of(b.s + off);
        } catch (const NoiseError& e) {
            throw ConfigError(std::string("branching: ") + e.what());
        }
    }
}

// ---------------------------------------------------------------------------
// Accumulators

struct SnapshotSums {
    double w = 0.0, w2 = 0.0;        ///< sums of |psi|^2 and |psi|^4
    ComplexMatrix x;                 ///< sum of psi psi^dag
    RealMatrix re2, im2, rew, imw;   ///< sums of (Re X)^2, (Im X)^2, Re X |psi|^2, Im X |psi|^2

    explicit SnapshotSums(Eigen::Index d = 0)
        : x(ComplexMatrix::Zero(d, d)), re2(RealMatrix::Zero(d, d)), im2(RealMatrix::Zero(d, d)),
          rew(RealMatrix::Zero(d, d)), imw(RealMatrix::Zero(d, d))
    {
    }

    void add(const StateVector& psi)
    {
        const ComplexMatrix xx = psi * psi.adjoint();
        const double n2 = psi.squaredNorm();
        w += n2;
        w2 += n2 * n2;
        x += xx;
        re2 += xx.real().cwiseAbs2();
        im2 += xx.imag().cwiseAbs2();
        rew += n2 * xx.real();
        imw += n2 * xx.imag();
    }

    void merge(const SnapshotSums& o)
    {
        w += o.w;
        w2 += o.w2;
        x += o.x;
        re2 += o.re2;
        im2 += o.im2;
        rew += o.rew;
        imw += o.imw;
    }
};

/// Second moments of (Re D, Im D, Re X, Im X) with D = X(t+h) - X(t-h).
struct DerivativeSums {
    RealMatrix rd, id, rd2, id2, rdrx, rdix, idrx, idix, rxix;

    explicit DerivativeSums(Eigen::Index d = 0)
    {
        for (auto* m : {&rd, &id, &rd2, &id2, &rdrx, &rdix, &idrx, &idix, &rxix})
            *m = RealMatrix::Zero(d, d);
    }

    void add(const ComplexMatrix& before, const ComplexMatrix& here, const ComplexMatrix& after)
    {
        const ComplexMatrix dd = after - before;
        const RealMatrix dr = dd.real(), di = dd.imag(), xr = here.real(), xi = here.imag();
        rd += dr;
        id += di;
        rd2 += dr.cwiseAbs2();
        id2 += di.cwiseAbs2();
        rdrx += dr.cwiseProduct(xr);
        rdix += dr.cwiseProduct(xi);
        idrx += di.cwiseProduct(xr);
        idix += di.cwiseProduct(xi);
        rxix += xr.cwiseProduct(xi);
    }

    void merge(const DerivativeSums& o)
    {
        rd += o.rd;
        id += o.id;
        rd2 += o.rd2;
        id2 += o.id2;
        rdrx += o.rdrx;
        rdix += o.rdix;
        idrx += o.idrx;
        idix += o.idix;
        rxix += o.rxix;
    }
};

struct EnsembleAccumulator {
    std::size_t n_ok = 0;
    std::size_t n_aborted = 0;
    double max_top_level_fraction = 0.0;
    std::vector<SnapshotSums> snaps;
    std::vector<DerivativeSums> derivs;   ///< one per snapshot; interior entries used

    EnsembleAccumulator() = default;
    EnsembleAccumulator(std::size_t n_snap, Eigen::Index d, bool derivatives)
        : snaps(n_snap, SnapshotSums(d))
    {
        if (derivatives)
            derivs.assign(n_snap, DerivativeSums(d));
    }

    void add(const std::vector<StateVector>& states)
    {
        ++n_ok;
        for (std::size_t j = 0; j < states.size(); ++j)
            snaps[j].add(states[j]);
        if (!derivs.empty()) {
            for (std::size_t j = 1; j + 1 < states.size(); ++j)
                derivs[j].add(outer(states[j - 1]), outer(states[j]), outer(states[j + 1]));
        }
    }

    void merge(const EnsembleAccumulator& o)
    {
        n_ok += o.n_ok;
        n_aborted += o.n_aborted;
        max_top_level_fraction = std::max(max_top_level_fraction, o.max_top_level_fraction);
        for (std::size_t j = 0; j < snaps.size(); ++j)
            snaps[j].merge(o.snaps[j]);
        for (std::size_t j = 0; j < derivs.size(); ++j)
            derivs[j].merge(o.derivs[j]);
    }
};

struct EnsembleStats {
    std::vector<std::size_t> indices;
    std::vector<double> times;
    std::vector<double> mean_norm_sq, se_norm_sq;
    std::vector<ComplexMatrix> rho_raw;                    ///< M[|psi><psi|]
    std::vector<RealMatrix> rho_raw_se_re, rho_raw_se_im;
    std::vector<ComplexMatrix> rho;                        ///< rho_raw / tr(rho_raw)
    std::vector<RealMatrix> rho_se_re, rho_se_im;
    std::vector<double> raw_trace;
    std::vector<double> effective_sample_size;             ///< (sum w)^2 / sum w^2
    std::size_t n_trajectories = 0;
    std::size_t n_aborted = 0;
    double max_top_level_fraction = 0.0;
    EnsembleAccumulator sums;

    double abort_fraction() const
    {
        const auto total = n_trajectories + n_aborted;
        return total ? static_cast<double>(n_aborted) / static_cast<double>(total) : 0.0;
    }
    bool aborts_acceptable() const { return abort_fraction() <= kMaxAbortFraction; }

    std::size_t nearest_snapshot(double t) const
    {
        std::size_t best = 0;
        for (std::size_t j = 1; j < times.size(); ++j)
            if (std::abs(times[j] - t) < std::abs(times[best] - t))
                best = j;
        return best;
    }
};

inline EnsembleStats finalize(EnsembleAccumulator acc, const TimeGrid& grid, std::vector<std::size_t> indices)
{
    EnsembleStats st;
    st.indices = std::move(indices);
    st.n_trajectories = acc.n_ok;
    st.n_aborted = acc.n_aborted;
    st.max_top_level_fraction = acc.max_top_level_fraction;
    const double n = static_cast<double>(acc.n_ok);
    for (std::size_t j = 0; j < st.indices.size(); ++j) {
        const auto& s = acc.snaps[j];
        st.times.push_back(grid.time(st.indices[j]));
        if (acc.n_ok == 0) {
            throw std::runtime_error("ensemble: every trajectory aborted");
        }
        const double mw = s.w / n;
        const double var_w = n > 1 ? std::max(0.0, (s.w2 - n * mw * mw) / (n - 1.0)) : 0.0;
        st.mean_norm_sq.push_back(mw);
        st.se_norm_sq.push_back(std::sqrt(var_w / n));
        st.effective_sample_size.push_back(s.w2 > 0 ? s.w * s.w / s.w2 : 0.0);

        ComplexMatrix raw = s.x / n;
        raw = 0.5 * (raw + raw.adjoint()).eval();
        const RealMatrix mr = raw.real(), mi = raw.imag();
        auto raw_se = [&](const RealMatrix& sum2, const RealMatrix& mean) {
            RealMatrix out(mean.rows(), mean.cols());
            for (Eigen::Index a = 0; a < mean.rows(); ++a)
                for (Eigen::Index b = 0; b < mean.cols(); ++b) {
                    const double v = n > 1 ? std::max(0.0, (sum2(a, b) - n * mean(a, b) * mean(a, b)) / (n - 1.0)) : 0.0;
                    out(a, b) = std::sqrt(v / n);
                }
            return out;
        };
        st.rho_raw.push_back(raw);
        st.rho_raw_se_re.push_back(raw_se(s.re2, mr));
        st.rho_raw_se_im.push_back(raw_se(s.im2, mi));

        const double tr = raw.trace().real();
        st.raw_trace.push_back(tr);
        const ComplexMatrix normed = raw / tr;
        st.rho.push_back(normed);
        // Ratio estimator R = E[X]/E[T]: Var(X - R T) / (n E[T]^2) by the delta method.
        auto ratio_se = [&](const RealMatrix& sum2, const RealMatrix& sum_xw, const RealMatrix& r) {
            RealMatrix out(r.rows(), r.cols());
            for (Eigen::Index a = 0; a < r.rows(); ++a)
                for (Eigen::Index b = 0; b < r.cols(); ++b) {
                    const double e = (sum2(a, b) - 2.0 * r(a, b) * sum_xw(a, b) + r(a, b) * r(a, b) * s.w2) / n;
                    const double v = std::max(0.0, e) * (n > 1 ? n / (n - 1.0) : 0.0);
                    out(a, b) = std::sqrt(v / n) / mw;
                }
            return out;
        };
        st.rho_se_re.push_back(ratio_se(s.re2, s.rew, normed.real()));
        st.rho_se_im.push_back(ratio_se(s.im2, s.imw, normed.imag()));
    }
    st.sums = std::move(acc);
    return st;
}

/// Noise envelope for the trace distance between an estimate and a fixed
/// matrix: (sqrt(d)/2) sqrt(sum_ij SE_ij^2) bounds the trace norm of the
/// estimation error by its Frobenius norm; for d = 2 it is the exact RMS.
inline double trace_distance_envelope(const RealMatrix& se_re, const RealMatrix& se_im)
{
    const double d = static_cast<double>(se_re.rows());
    return 0.5 * std::sqrt(d) * std::sqrt(se_re.squaredNorm() + se_im.squaredNorm());
}

/// Propagate trajectory `index` of an experiment, returning the states at
/// the given snapshot indices. Throws TrajectoryAborted.
inline std::vector<StateVector> trajectory_snapshots(const ExperimentConfig& c, const SseIntegrator& integ,
                                                     std::uint64_t index, const std::vector<std::size_t>& snaps,
                                                     double* top_fraction = nullptr)
{
    const auto real = sample_realization(c.pair, c.grid, c.master_seed, index, c.noise);
    std::vector<StateVector> states;
    states.reserve(snaps.size());
    ComplexMatrix psi = c.model.psi0;
    std::size_t next = 0;
    if (!snaps.empty() && snaps[0] == 0) {
        states.emplace_back(psi.col(0));
        next = 1;
    }
    const bool monitor = top_fraction && c.model.kind == ModelKind::Qbm;
    integ.run(psi, real, 0, snaps.back(), [&](std::size_t k, const ComplexMatrix& v) {
        if (next < snaps.size() && snaps[next] == k) {
            states.emplace_back(v.col(0));
            if (monitor)
                *top_fraction = std::max(*top_fraction, top_level_fraction(states.back()));
            ++next;
        }
    });
    return states;
}

// ---------------------------------------------------------------------------
// run_ensemble

/// Estimate M[|psi_t><psi_t|] and the squared-norm statistics over
/// n_trajectories independent noise realizations.
inline EnsembleStats run_ensemble(const ExperimentConfig& c)
{
    validate_config(c);
    const SseIntegrator integ(c.model, c.pair, c.integrator);
    const auto snaps = snapshot_indices(c.grid.n_steps, c.n_snapshots);
    const std::size_t n_leaves = (c.n_trajectories + kLeafSize - 1) / kLeafSize;
    const auto d = c.model.dim();

    auto make = [&](std::size_t leaf) {
        EnsembleAccumulator acc(snaps.size(), d, c.track_derivatives);
        const std::size_t lo = leaf * kLeafSize;
        const std::size_t hi = std::min(c.n_trajectories, lo + kLeafSize);
        for (std::size_t i = lo; i < hi; ++i) {
            try {
                double top = 0.0;
                acc.add(trajectory_snapshots(c, integ, i, snaps, &top));
                acc.max_top_level_fraction = std::max(acc.max_top_level_fraction, top);
            } catch (const TrajectoryAborted&) {
                ++acc.n_aborted;
            }
        }
        return acc;
    };
    auto merge = [](EnsembleAccumulator& a, const EnsembleAccumulator& b) { a.merge(b); };
    auto acc = tree_reduce<EnsembleAccumulator>(n_leaves, c.effective_workers(), make, merge);
    return finalize(std::move(acc), c.grid, snaps);
}

// ---------------------------------------------------------------------------
// Conditional branching test of the martingale property

struct CheckpointResult {
    double t = 0.0;
    double mean = 0.0;                 ///< conditional mean of |psi_t|^2
    double se = 0.0;
    double z = 0.0;                    ///< (mean - |psi_s|^2) / se
    std::optional<double> oracle;      ///< analytic conditional mean (dephasing only)
    std::optional<double> z_oracle;    ///< (mean - oracle) / se
};

struct PrefixResult {
    std::size_t index = 0;
    double norm_s = 0.0;
    StateVector psi_s;
    std::vector<double> x_ou_at_s;
    std::vector<CheckpointResult> checkpoints;
    std::size_t n_continuations = 0;
    std::size_t n_aborted = 0;
    bool prefix_aborted = false;
};

struct BranchingReport {
    double s = 0.0;
    std::vector<double> checkpoint_times;
    std::vector<PrefixResult> prefixes;
    std::size_t n_z = 0;
    std::size_t n_exceed = 0;          ///< |z| > 3
    double fraction_exceed = 0.0;
    double binomial_p = 1.0;           ///< two-sided, against P(|Z| > 3)
    double rms_z = 0.0;
    double mean_abs_z = 0.0;
    double max_abs_z = 0.0;
    bool pass = false;

    bool oracle_available = false;
    std::size_t oracle_n = 0;
    std::size_t oracle_exceed = 0;     ///< |z_oracle| > 3
    double oracle_max_abs_z = 0.0;
};

inline constexpr double kZThreshold = 3.0;
inline constexpr double kMaxExceedFraction = 0.01;
inline constexpr double kBinomialLevel = 0.01;

/// Aggregate verdict over a set of z-scores: PASS iff at most 1% exceed
/// |z| = 3 and a two-sided binomial test of the exceedance count against
/// P(|Z| > 3) gives p >= 0.01.
struct ZVerdict {
    std::size_t n = 0, exceed = 0;
    double fraction = 0.0, p = 1.0, rms = 0.0, mean_abs = 0.0, max_abs = 0.0;
    bool pass = false;
};

inline ZVerdict z_verdict(const std::vector<double>& zs)
{
    ZVerdict v;
    v.n = zs.size();
    double s2 = 0.0, sa = 0.0;
    for (double z : zs) {
        const double a = std::abs(z);
        if (a > kZThreshold)
            ++v.exceed;
        s2 += z * z;
        sa += a;
        v.max_abs = std::max(v.max_abs, a);
    }
    if (v.n == 0)
        return v;
    v.fraction = static_cast<double>(v.exceed) / static_cast<double>(v.n);
    v.rms = std::sqrt(s2 / static_cast<double>(v.n));
    v.mean_abs = sa / static_cast<double>(v.n);
    v.p = stats::binomial_two_sided_p(v.exceed, v.n, stats::two_sided_tail(kZThreshold));
    v.pass = v.fraction <= kMaxExceedFraction && v.p >= kBinomialLevel;
    return v;
}

namespace detail {

inline double safe_z(double diff, double se, double scale)
{
    const double floor = 1e-300 + 1e-15 * std::abs(scale);
    if (se <= floor)
        return std::abs(diff) <= 1e-12 * std::max(1.0, std::abs(scale)) ? 0.0 : std::copysign(1e6, diff);
    return diff / se;
}

inline PrefixResult run_prefix(const ExperimentConfig& c, const SseIntegrator& integ, const TimeGrid& grid,
                               std::size_t split, const std::vector<std::size_t>& check_idx, std::size_t p)
{
    PrefixResult pr;
    pr.index = p;
    const auto prefix = sample_realization(c.pair, grid, c.master_seed, p, c.noise);
    ComplexMatrix psi = c.model.psi0;
    try {
        integ.run(psi, prefix, 0, split, [](std::size_t, const ComplexMatrix&) {});
    } catch (const TrajectoryAborted&) {
        pr.prefix_aborted = true;
        return pr;
    }
    pr.psi_s = psi.col(0);
    pr.norm_s = psi.squaredNorm();
    for (const auto& path : prefix.x.ou_paths)
        pr.x_ou_at_s.push_back(path[split]);

    // Deviations from |psi_s|^2 are accumulated to avoid cancellation.
    std::vector<stats::Moments> dev(check_idx.size());
    const std::size_t last = check_idx.back();
    for (std::size_t j = 1; j <= c.branch.continuations; ++j) {
        const auto cont = condition_continue(prefix, split, c.master_seed, p, static_cast<std::uint32_t>(j));
        ComplexMatrix v = psi;
        std::vector<double> vals(check_idx.size());
        std::size_t next = 0;
        try {
            integ.run(v, cont, split, last, [&](std::size_t k, const ComplexMatrix& st) {
                while (next < check_idx.size() && check_idx[next] == k)
                    vals[next++] = st.squaredNorm();
            });
        } catch (const TrajectoryAborted&) {
            ++pr.n_aborted;
            continue;
        }
        ++pr.n_continuations;
        for (std::size_t q = 0; q < vals.size(); ++q)
            dev[q].add(vals[q] - pr.norm_s);
    }

    const bool has_oracle = c.model.kind == ModelKind::Dephasing;
    for (std::size_t q = 0; q < check_idx.size(); ++q) {
        CheckpointResult cr;
        cr.t = grid.time(check_idx[q]);
        cr.mean = pr.norm_s + dev[q].mean();
        cr.se = dev[q].se();
        cr.z = safe_z(dev[q].mean(), cr.se, pr.norm_s);
        if (has_oracle) {
            cr.oracle = dephasing_conditional_norm_oracle(c.model, c.pair, pr.x_ou_at_s, pr.psi_s, grid.time(split),
                                                          cr.t);
            cr.z_oracle = safe_z(cr.mean - *cr.oracle, cr.se, *cr.oracle);
        }
        pr.checkpoints.push_back(cr);
    }
    return pr;
}

}  // namespace detail

/// For each of n prefixes: propagate to s, spawn m continuations of the noise
/// from its exact conditional law, and compare the conditional mean of
/// |psi_t|^2 with |psi_s|^2 at each checkpoint. Prefix p uses the same noise
/// streams as ensemble trajectory p; continuation j uses continuation index j.
inline BranchingReport martingale_branch_test(const ExperimentConfig& c)
{
    validate_config(c, true);
    const SseIntegrator integ(c.model, c.pair, c.integrator);
    const std::size_t split = c.grid.index_of(c.branch.s);
    std::vector<std::size_t> check_idx;
    for (double off : c.branch.checkpoint_offsets)
        check_idx.push_back(c.grid.index_of(c.branch.s + off));
    std::sort(check_idx.begin(), check_idx.end());
    // Noise is only needed up to the last checkpoint.
    const std::size_t last = check_idx.back();
    const TimeGrid grid{c.grid.dt * static_cast<double>(last), c.grid.dt, last};

    using Prefixes = std::vector<PrefixResult>;
    auto make = [&](std::size_t p) { return Prefixes{detail::run_prefix(c, integ, grid, split, check_idx, p)}; };
    auto merge = [](Prefixes& a, Prefixes& b) {
        a.insert(a.end(), std::make_move_iterator(b.begin()), std::make_move_iterator(b.end()));
    };
    BranchingReport rep;
    rep.s = c.grid.time(split);
    for (auto k : check_idx)
        rep.checkpoint_times.push_back(c.grid.time(k));
    rep.prefixes = tree_reduce<Prefixes>(c.branch.prefixes, c.effective_workers(), make, merge);

    std::vector<double> zs;
    for (const auto& pr : rep.prefixes) {
        if (pr.prefix_aborted)
            continue;
        for (const auto& cr : pr.checkpoints) {
            zs.push_back(cr.z);
            if (cr.z_oracle) {
                rep.oracle_available = true;
                ++rep.oracle_n;
                if (std::abs(*cr.z_oracle) > kZThreshold)
                    ++rep.oracle_exceed;
                rep.oracle_max_abs_z = std::max(rep.oracle_max_abs_z, std::abs(*cr.z_oracle));
            }
        }
    }
    const auto v = z_verdict(zs);
    rep.n_z = v.n;
    rep.n_exceed = v.exceed;
    rep.fraction_exceed = v.fraction;
    rep.binomial_p = v.p;
    rep.rms_z = v.rms;
    rep.mean_abs_z = v.mean_abs;
    rep.max_abs_z = v.max_abs;
    rep.pass = v.pass;
    return rep;
}

// ---------------------------------------------------------------------------
// Convergence study

enum class ConvergenceMode {
    WeakNorm,          ///< f = |psi_T|^2, errors relative to the finest level
    PathwiseVsExact,   ///< per-realization distance to the exact dephasing solution on the same grid
};

struct ConvergenceRow {
    double dt = 0.0;
    double mean_f = 0.0;          ///< E[f] (WeakNorm) or RMS relative error (PathwiseVsExact)
    double se_f = 0.0;
    double error = 0.0;           ///< E[f_dt - f_finest] (WeakNorm) or RMS error
    double se_error = 0.0;
};

struct ConvergenceReport {
    ConvergenceMode mode = ConvergenceMode::WeakNorm;
    IntegratorKind integrator = IntegratorKind::EmIto;
    std::vector<ConvergenceRow> rows;   ///< coarsest first
    double fitted_order = 0.0;
};

namespace detail {

/// Fit e_l = C (dt_l^p - dt_f^p) by weighted least squares over p; C is
/// solved in closed form for each trial p.
inline double fit_weak_order(const std::vector<double>& dts, const std::vector<double>& err,
                             const std::vector<double>& se, double dt_f)
{
    auto sse = [&](double p) {
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < dts.size(); ++i) {
            const double basis = std::pow(dts[i], p) - std::pow(dt_f, p);
            const double w = 1.0 / std::max(se[i] * se[i], 1e-300);
            num += w * basis * err[i];
            den += w * basis * basis;
        }
        const double cc = den > 0 ? num / den : 0.0;
        double r = 0.0;
        for (std::size_t i = 0; i < dts.size(); ++i) {
            const double basis = std::pow(dts[i], p) - std::pow(dt_f, p);
            const double w = 1.0 / std::max(se[i] * se[i], 1e-300);
            r += w * (err[i] - cc * basis) * (err[i] - cc * basis);
        }
        return r;
    };
    double best_p = 0.05, best = sse(best_p);
    for (double p = 0.05; p <= 4.0; p += 0.01) {
        const double v = sse(p);
        if (v < best) {
            best = v;
            best_p = p;
        }
    }
    double lo = std::max(0.01, best_p - 0.01), hi = best_p + 0.01;
    for (int it = 0; it < 60; ++it) {
        const double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
        if (sse(m1) < sse(m2))
            hi = m2;
        else
            lo = m1;
    }
    return 0.5 * (lo + hi);
}

}  // namespace detail

/// Run every trajectory on the finest level and on coarsened copies of the
/// same noise path (common Brownian refinement). dt_levels must contain at
/// least three values that are integer multiples of the smallest one.
inline ConvergenceReport convergence_study(const ExperimentConfig& c, std::vector<double> dt_levels,
                                           ConvergenceMode mode = ConvergenceMode::WeakNorm)
{
    if (dt_levels.size() < 3)
        throw ConfigError("convergence: at least three dt levels are required");
    std::sort(dt_levels.begin(), dt_levels.end(), std::greater<>());
    const double dt_f = dt_levels.back();
    const TimeGrid fine = TimeGrid::make(c.grid.t_max, dt_f);
    std::vector<std::size_t> factors;
    for (double dt : dt_levels) {
        const double r = dt / dt_f;
        const double rr = std::round(r);
        if (std::abs(r - rr) > 1e-9 * r || fine.n_steps % static_cast<std::size_t>(rr) != 0)
            throw ConfigError("convergence: dt levels must be integer multiples of the finest level");
        factors.push_back(static_cast<std::size_t>(rr));
    }
    ExperimentConfig cfg = c;
    cfg.grid = fine;
    validate_config(cfg);
    const SseIntegrator integ(c.model, c.pair, c.integrator);
    std::optional<SseIntegrator> exact;
    if (mode == ConvergenceMode::PathwiseVsExact)
        exact.emplace(c.model, c.pair, IntegratorKind::DephasingExact);

    const std::size_t nl = dt_levels.size();
    struct Acc {
        std::vector<stats::Moments> f, diff;
        std::size_t aborted = 0;
    };
    auto make = [&](std::size_t leaf) {
        Acc acc{std::vector<stats::Moments>(nl), std::vector<stats::Moments>(nl), 0};
        const std::size_t lo = leaf * kLeafSize, hi = std::min(c.n_trajectories, lo + kLeafSize);
        for (std::size_t i = lo; i < hi; ++i) {
            const auto real = sample_realization(c.pair, fine, c.master_seed, i, c.noise);
            std::vector<double> f(nl);
            try {
                for (std::size_t l = 0; l < nl; ++l) {
                    const auto r = factors[l] == 1 ? real : coarsen(real, factors[l]);
                    ComplexMatrix psi = c.model.psi0;
                    integ.run(psi, r, 0, r.grid.n_steps, [](std::size_t, const ComplexMatrix&) {});
                    if (mode == ConvergenceMode::WeakNorm) {
                        f[l] = psi.squaredNorm();
                    } else {
                        ComplexMatrix ref = c.model.psi0;
                        exact->run(ref, r, 0, r.grid.n_steps, [](std::size_t, const ComplexMatrix&) {});
                        const double e = (psi - ref).norm() / ref.norm();
                        f[l] = e * e;
                    }
                }
            } catch (const TrajectoryAborted&) {
                ++acc.aborted;
                continue;
            }
            for (std::size_t l = 0; l < nl; ++l) {
                acc.f[l].add(f[l]);
                acc.diff[l].add(f[l] - f[nl - 1]);
            }
        }
        return acc;
    };
    auto merge = [](Acc& a, const Acc& b) {
        for (std::size_t l = 0; l < a.f.size(); ++l) {
            a.f[l].merge(b.f[l]);
            a.diff[l].merge(b.diff[l]);
        }
        a.aborted += b.aborted;
    };
    const std::size_t n_leaves = (c.n_trajectories + kLeafSize - 1) / kLeafSize;
    const Acc acc = tree_reduce<Acc>(n_leaves, c.effective_workers(), make, merge);

    ConvergenceReport rep;
    rep.mode = mode;
    rep.integrator = c.integrator;
    for (std::size_t l = 0; l < nl; ++l) {
        ConvergenceRow row;
        row.dt = dt_levels[l];
        if (mode == ConvergenceMode::WeakNorm) {
            row.mean_f = acc.f[l].mean();
            row.se_f = acc.f[l].se();
            row.error = acc.diff[l].mean();
            row.se_error = acc.diff[l].se();
        } else {
            // RMS relative error; SE by the delta method on the mean square.
            const double ms = acc.f[l].mean();
            row.mean_f = std::sqrt(ms);
            row.se_f = ms > 0 ? acc.f[l].se() / (2.0 * std::sqrt(ms)) : 0.0;
            row.error = row.mean_f;
            row.se_error = row.se_f;
        }
        rep.rows.push_back(row);
    }
    if (mode == ConvergenceMode::WeakNorm) {
        std::vector<double> dts, err, se;
        for (std::size_t l = 0; l + 1 < nl; ++l) {
            dts.push_back(rep.rows[l].dt);
            err.push_back(rep.rows[l].error);
            se.push_back(rep.rows[l].se_error);
        }
        rep.fitted_order = detail::fit_weak_order(dts, err, se, dt_f);
    } else {
        std::vector<double> lx, ly;
        for (const auto& row : rep.rows) {
            lx.push_back(std::log(row.dt));
            ly.push_back(std::log(row.error));
        }
        rep.fitted_order = stats::fit_line(lx, ly).slope;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Reduced-state comparisons

struct StateComparison {
    std::vector<double> times;
    std::vector<double> distance;   ///< trace distance
    std::vector<double> envelope;   ///< Monte Carlo noise scale of the distance
    double max_distance = 0.0;
    double max_ratio = 0.0;         ///< max distance / envelope
    bool pass = false;              ///< distance <= 3 envelope everywhere
};

inline constexpr double kStateTolerance = 1e-10;

/// Compare an ensemble's raw reduced state with reference states (one per
/// snapshot). `extra_se_*` adds the noise of a second independent estimate.
inline StateComparison compare_states(const EnsembleStats& st, const std::vector<ComplexMatrix>& ref,
                                      const EnsembleStats* other = nullptr)
{
    StateComparison cmp;
    cmp.pass = true;
    for (std::size_t j = 0; j < st.times.size(); ++j) {
        RealMatrix se_re = st.rho_raw_se_re[j].cwiseAbs2(), se_im = st.rho_raw_se_im[j].cwiseAbs2();
        if (other) {
            se_re += other->rho_raw_se_re[j].cwiseAbs2();
            se_im += other->rho_raw_se_im[j].cwiseAbs2();
        }
        const double env = trace_distance_envelope(se_re.cwiseSqrt(), se_im.cwiseSqrt());
        const double td = trace_distance(st.rho_raw[j], ref[j]);
        cmp.times.push_back(st.times[j]);
        cmp.distance.push_back(td);
        cmp.envelope.push_back(env);
        cmp.max_distance = std::max(cmp.max_distance, td);
        if (env > 0)
            cmp.max_ratio = std::max(cmp.max_ratio, td / env);
        if (td > 3.0 * env + kStateTolerance)
            cmp.pass = false;
    }
    return cmp;
}

/// Rate of the Markovian reference used against an ensemble: the delta
/// weight of alpha when the pair is white, otherwise kappa from the delta
/// constraint.
inline double default_gksl_rate(const CorrelationPair& pair)
{
    if (pair.x.is_white() && pair.y.is_white())
        return pair.x.white_weight() + pair.y.white_weight();
    return delta_constraint_residual(pair).kappa;
}

struct GkslComparison {
    double rate = 0.0;
    StateComparison cmp;
    EnsembleStats stats;
};

/// Monte Carlo reduced state against the GKSL solution with jump operator L.
inline GkslComparison compare_gksl(const ExperimentConfig& c, std::optional<double> rate = std::nullopt)
{
    GkslComparison out;
    out.rate = rate.value_or(default_gksl_rate(c.pair));
    out.stats = run_ensemble(c);
    const auto ref = gksl_solve(GKSLSpec{c.model.H, c.model.L, out.rate}, outer(c.model.psi0), out.stats.times);
    out.cmp = compare_states(out.stats, ref);
    return out;
}

struct EtaIndependenceReport {
    StateComparison between;                 ///< rho_A vs rho_B
    std::optional<StateComparison> oracle_a; ///< vs the analytic decoherence (dephasing)
    std::optional<StateComparison> oracle_b;
    bool pass = false;
};

/// Two pairs with the same alpha must give the same reduced state.
inline EtaIndependenceReport eta_independence_check(const ExperimentConfig& a, const ExperimentConfig& b)
{
    for (double tau : {0.0, 0.05, 0.1, 0.3, 0.7, 1.0, 2.0, 5.0}) {
        const auto va = kernel_eval(a.pair, Correlation::Alpha, tau);
        const auto vb = kernel_eval(b.pair, Correlation::Alpha, tau);
        if (std::abs(va.smooth - vb.smooth) > 1e-12 || std::abs(va.delta_weight - vb.delta_weight) > 1e-12)
            throw ConfigError("eta_independence: the two pairs have different alpha");
    }
    if (a.grid.n_steps != b.grid.n_steps || a.grid.dt != b.grid.dt || a.n_snapshots != b.n_snapshots)
        throw ConfigError("eta_independence: grids differ");
    if ((a.model.H - b.model.H).cwiseAbs().maxCoeff() > 0 || (a.model.L - b.model.L).cwiseAbs().maxCoeff() > 0)
        throw ConfigError("eta_independence: models differ");

    EtaIndependenceReport rep;
    const auto sa = run_ensemble(a);
    const auto sb = run_ensemble(b);
    rep.between = compare_states(sa, sb.rho_raw, &sb);
    rep.pass = rep.between.pass;
    if (a.model.kind == ModelKind::Dephasing) {
        std::vector<ComplexMatrix> ref;
        for (double t : sa.times)
            ref.push_back(dephasing_reduced_state(a.model, a.pair, t));
        rep.oracle_a = compare_states(sa, ref);
        rep.oracle_b = compare_states(sb, ref);
        rep.pass = rep.pass && rep.oracle_a->pass && rep.oracle_b->pass;
    }
    return rep;
}

}  // namespace gnsse
