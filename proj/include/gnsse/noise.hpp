#pragma once

// Complex Gaussian noise z*_t = x_t - i y_t built from two independent real
// components. Each component is a sum of white kernels (weight * delta) and
// exponential kernels c * exp(-a |tau|). The Hermitian and non-Hermitian
// correlations follow as
//
//     alpha = <xx> + <yy>,    eta = <xx> - <yy>,
//
// so every representable pair is a valid complex Gaussian noise.
//
// Delta functions at the boundary of an integration range count with half
// their weight: int_0^t w delta(t - s) ds = w / 2.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "gnsse/linalg.hpp"
#include "gnsse/rng.hpp"

namespace gnsse {

class NoiseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct WhiteKernel {
    double weight = 0.0;
};

/// c * exp(-a |tau|); for an O-U process dr = -a r dt + sqrt(D) dW, c = D / (2a).
struct ExpKernel {
    double c = 0.0;
    double a = 1.0;
};

using Kernel = std::variant<WhiteKernel, ExpKernel>;

/// Autocovariance of one real noise component, as a sum of kernels.
struct Component {
    std::vector<Kernel> kernels;

    double white_weight() const
    {
        double w = 0.0;
        for (const auto& k : kernels)
            if (auto* white = std::get_if<WhiteKernel>(&k))
                w += white->weight;
        return w;
    }

    std::vector<ExpKernel> exp_kernels() const
    {
        std::vector<ExpKernel> out;
        for (const auto& k : kernels)
            if (auto* e = std::get_if<ExpKernel>(&k))
                out.push_back(*e);
        return out;
    }

    bool is_white() const { return exp_kernels().empty(); }
    bool is_colored() const { return white_weight() == 0.0; }

    /// Smooth (non-delta) part at lag tau.
    double smooth(double tau) const
    {
        double v = 0.0;
        for (const auto& e : exp_kernels())
            v += e.c * std::exp(-e.a * std::abs(tau));
        return v;
    }

    /// int_0^t k(t - s) ds
    double row_integral(double t) const
    {
        double v = 0.5 * white_weight();
        for (const auto& e : exp_kernels())
            v += e.c / e.a * (1.0 - std::exp(-e.a * t));
        return v;
    }

    /// int_0^t du int_0^u ds k(u - s)
    double triangle_integral(double t) const
    {
        double v = 0.5 * white_weight() * t;
        for (const auto& e : exp_kernels())
            v += e.c / e.a * (t + std::expm1(-e.a * t) / e.a);
        return v;
    }
};

inline Component white(double weight)
{
    return Component{{WhiteKernel{weight}}};
}

inline Component exp_decay(double c, double a)
{
    return Component{{ExpKernel{c, a}}};
}

inline Component no_noise()
{
    return Component{};
}

struct CorrelationPair {
    Component x;
    Component y;
};

enum class Correlation { Alpha, Eta };

struct KernelValue {
    double smooth = 0.0;
    double delta_weight = 0.0;
};

/// Smooth part and delta coefficient of alpha or eta at lag tau.
inline KernelValue kernel_eval(const CorrelationPair& pair, Correlation which, double tau)
{
    const double sign = which == Correlation::Alpha ? 1.0 : -1.0;
    return {pair.x.smooth(tau) + sign * pair.y.smooth(tau),
            pair.x.white_weight() + sign * pair.y.white_weight()};
}

/// int_0^t alpha(t, s) ds in closed form.
inline double alpha_row_integral(const CorrelationPair& pair, double t)
{
    return pair.x.row_integral(t) + pair.y.row_integral(t);
}

/// int_0^t eta(t, s) ds in closed form.
inline double eta_row_integral(const CorrelationPair& pair, double t)
{
    return pair.x.row_integral(t) - pair.y.row_integral(t);
}

/// int_0^t du int_0^u ds alpha(u, s) in closed form.
inline double alpha_triangle_integral(const CorrelationPair& pair, double t)
{
    return pair.x.triangle_integral(t) + pair.y.triangle_integral(t);
}

/// Memory integral A(t) = int_0^t du int_0^u ds (alpha + eta)(u, s). Equals
/// the variance of int_0^t x_s ds.
inline double memory_integral(const CorrelationPair& pair, double t)
{
    return 2.0 * pair.x.triangle_integral(t);
}

struct ConstraintResidual {
    double residual = 0.0;  ///< int |smooth part of (alpha + eta)| dtau
    double kappa = 0.0;     ///< delta coefficient of alpha + eta
};

/// Distance from the constraint alpha + eta = kappa delta. Since
/// alpha + eta = 2 <xx>, the residual vanishes iff x is purely white.
inline ConstraintResidual delta_constraint_residual(const CorrelationPair& pair)
{
    ConstraintResidual r;
    r.kappa = 2.0 * pair.x.white_weight();
    for (const auto& e : pair.x.exp_kernels())
        r.residual += 4.0 * std::abs(e.c) / e.a;
    return r;
}

struct TimeGrid {
    double t_max = 0.0;
    double dt = 0.0;
    std::size_t n_steps = 0;

    static TimeGrid make(double t_max, double dt)
    {
        if (!(t_max > 0.0) || !(dt > 0.0) || !std::isfinite(t_max) || !std::isfinite(dt))
            throw NoiseError("grid: t_max and dt must be positive and finite");
        const double ratio = t_max / dt;
        const double n = std::round(ratio);
        if (n < 1.0)
            throw NoiseError("grid: t_max must be at least dt");
        if (std::abs(n * dt - t_max) > 1e-12 * t_max)
            throw NoiseError("grid: t_max must be an integer multiple of dt");
        return TimeGrid{t_max, dt, static_cast<std::size_t>(n)};
    }

    double time(std::size_t k) const { return static_cast<double>(k) * dt; }

    /// Nearest grid index to t, throwing when t is not on the grid.
    std::size_t index_of(double t) const
    {
        const double n = std::round(t / dt);
        if (n < 0.0 || n > static_cast<double>(n_steps) || std::abs(n * dt - t) > 1e-9 * std::max(dt, std::abs(t)))
            throw NoiseError("grid: time " + std::to_string(t) + " is not a grid point");
        return static_cast<std::size_t>(n);
    }
};

// ---------------------------------------------------------------------------
// Sampling primitives

/// One exact AR(1) step of the O-U process with stationary covariance
/// c exp(-a |tau|).
inline double ou_step(const ExpKernel& k, double dt, double r, double xi)
{
    const double phi = std::exp(-k.a * dt);
    const double sigma = std::sqrt(std::max(k.c, 0.0) * -std::expm1(-2.0 * k.a * dt));
    return phi * r + sigma * xi;
}

/// Exact O-U path at the n_steps + 1 grid points. The first value is drawn
/// from the stationary law unless `stationary_start` is false (r_0 = 0).
inline std::vector<double> sample_ou_exact(const ExpKernel& k, const TimeGrid& grid, RngStream& rng,
                                           bool stationary_start = true)
{
    std::vector<double> r(grid.n_steps + 1, 0.0);
    if (k.c == 0.0)
        return r;
    const double phi = std::exp(-k.a * grid.dt);
    const double sigma = std::sqrt(k.c * -std::expm1(-2.0 * k.a * grid.dt));
    r[0] = stationary_start ? std::sqrt(k.c) * rng.normal() : 0.0;
    for (std::size_t i = 1; i < r.size(); ++i)
        r[i] = phi * r[i - 1] + sigma * rng.normal();
    return r;
}

/// Continue an O-U path from `start` for n_steps steps; returns n_steps + 1
/// values with out[0] == start.
inline std::vector<double> continue_ou(const ExpKernel& k, double dt, std::size_t n_steps, double start,
                                       RngStream& rng)
{
    std::vector<double> r(n_steps + 1, start);
    if (k.c == 0.0)
        return r;
    const double phi = std::exp(-k.a * dt);
    const double sigma = std::sqrt(k.c * -std::expm1(-2.0 * k.a * dt));
    for (std::size_t i = 1; i < r.size(); ++i)
        r[i] = phi * r[i - 1] + sigma * rng.normal();
    return r;
}

/// Brownian increments with variance dt (all zero when weight == 0). The
/// physical contribution of a white kernel of weight w to int x dt over
/// step k is sqrt(w) * dW_k.
inline std::vector<double> sample_white_increments(double weight, const TimeGrid& grid, RngStream& rng)
{
    if (weight < 0.0)
        throw NoiseError("white kernel weight must be nonnegative");
    std::vector<double> dw(grid.n_steps, 0.0);
    if (weight == 0.0)
        return dw;
    const double sd = std::sqrt(grid.dt);
    for (auto& v : dw)
        v = sd * rng.normal();
    return dw;
}

/// Dense covariance C_ij = smooth(|t_i - t_j|) at the given times.
inline RealSymmetricMatrix covariance_on_times(const Component& comp, std::span<const double> times)
{
    const auto n = static_cast<Eigen::Index>(times.size());
    RealMatrix c(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i; j < n; ++j)
            c(i, j) = comp.smooth(times[i] - times[j]);
    return RealSymmetricMatrix(c);
}

inline std::vector<double> grid_times(const TimeGrid& grid)
{
    std::vector<double> t(grid.n_steps + 1);
    for (std::size_t k = 0; k < t.size(); ++k)
        t[k] = grid.time(k);
    return t;
}

/// Sample the smooth part of a component at all grid points through a dense
/// Cholesky factor of its covariance. Limited to 4096 grid points.
inline std::vector<double> sample_general_cholesky(const Component& comp, const TimeGrid& grid, RngStream& rng)
{
    if (grid.n_steps + 1 > 4096)
        throw NoiseError("sample_general_cholesky: more than 4096 grid points");
    const auto times = grid_times(grid);
    const auto cov = covariance_on_times(comp, times);
    auto fact = cholesky_psd(cov);
    if (auto* fail = std::get_if<CholeskyFailure>(&fact))
        throw NoiseError("sample_general_cholesky: " + fail->message);
    const auto& l = std::get<CholeskyResult>(fact).lower;
    RealVector xi(l.cols());
    for (Eigen::Index i = 0; i < xi.size(); ++i)
        xi(i) = rng.normal();
    RealVector s = l * xi;
    return {s.data(), s.data() + s.size()};
}

/// Sample the continuation of a stationary Gaussian component on the grid
/// points after index `split` given its values at points 0..split, through
/// the Schur complement of the dense covariance. Returns values at
/// split..n_steps, the first one equal to the given last value.
inline std::vector<double> condition_continue_general(const Component& comp, const TimeGrid& grid,
                                                      std::span<const double> past, RngStream& rng)
{
    if (past.empty() || past.size() > grid.n_steps + 1)
        throw NoiseError("condition_continue_general: prefix length out of range");
    if (grid.n_steps + 1 > 4096)
        throw NoiseError("condition_continue_general: more than 4096 grid points");
    const auto times = grid_times(grid);
    const auto full = covariance_on_times(comp, times).matrix();
    const auto np = static_cast<Eigen::Index>(past.size());
    const auto nf = static_cast<Eigen::Index>(times.size()) - np;

    std::vector<double> out{past.back()};
    if (nf == 0)
        return out;

    const RealMatrix cpp = full.topLeftCorner(np, np);
    const RealMatrix cfp = full.bottomLeftCorner(nf, np);
    const RealMatrix cff = full.bottomRightCorner(nf, nf);
    Eigen::LDLT<RealMatrix> ldlt(cpp);
    const Eigen::Map<const RealVector> xp(past.data(), np);
    const RealVector mean = cfp * ldlt.solve(xp);
    const RealMatrix cond = cff - cfp * ldlt.solve(cfp.transpose());

    auto fact = cholesky_psd(RealSymmetricMatrix(cond));
    if (auto* fail = std::get_if<CholeskyFailure>(&fact))
        throw NoiseError("condition_continue_general: " + fail->message);
    const auto& l = std::get<CholeskyResult>(fact).lower;
    RealVector xi(nf);
    for (Eigen::Index i = 0; i < nf; ++i)
        xi(i) = rng.normal();
    const RealVector s = mean + l * xi;
    out.insert(out.end(), s.data(), s.data() + s.size());
    return out;
}

// ---------------------------------------------------------------------------
// Realizations

/// One real component on grid indices [offset, offset + n]. White parts are
/// held as Brownian increments only; exponential kernels as independent
/// O-U paths so that their values are a sufficient statistic of the past.
struct ComponentPath {
    double white_weight = 0.0;
    std::vector<double> white_increments;          ///< n entries, variance dt each
    std::vector<ExpKernel> ou_kernels;
    std::vector<std::vector<double>> ou_paths;     ///< n + 1 entries each

    double colored(std::size_t local) const
    {
        double v = 0.0;
        for (const auto& p : ou_paths)
            v += p[local];
        return v;
    }

    /// sqrt(w) dW over local step i.
    double white_integral(std::size_t local) const
    {
        if (white_weight == 0.0)
            return 0.0;
        return std::sqrt(white_weight) * white_increments[local];
    }
};

struct NoiseRealization {
    TimeGrid grid;
    std::size_t offset = 0;  ///< global index of the first stored point
    ComponentPath x;
    ComponentPath y;

    std::size_t steps() const { return grid.n_steps - offset; }

    double colored_x(std::size_t k) const { return x.colored(k - offset); }
    double colored_y(std::size_t k) const { return y.colored(k - offset); }

    /// Contribution of step k -> k+1 to int z* dt: white parts exactly,
    /// colored parts by the trapezoidal rule.
    Complex z_integral(std::size_t k) const
    {
        const std::size_t i = k - offset;
        const double h = 0.5 * grid.dt;
        const double xi = x.white_integral(i) + h * (x.colored(i) + x.colored(i + 1));
        const double yi = y.white_integral(i) + h * (y.colored(i) + y.colored(i + 1));
        return {xi, -yi};
    }

    /// Colored z* at grid point k (white parts have no point values).
    Complex z_colored(std::size_t k) const { return {colored_x(k), -colored_y(k)}; }
};

struct NoiseOptions {
    bool stationary_start = true;
};

namespace detail {

constexpr std::uint32_t kWhiteSubpurpose = 0xFFFFu;

inline StreamKey component_key(std::uint64_t seed, std::uint64_t trajectory, std::uint32_t continuation,
                               bool is_x, std::uint32_t sub)
{
    return StreamKey{seed, is_x ? StreamPurpose::NoiseX : StreamPurpose::NoiseY, sub, trajectory, continuation};
}

inline ComponentPath sample_component(const Component& comp, const TimeGrid& grid, std::uint64_t seed,
                                      std::uint64_t trajectory, bool is_x, const NoiseOptions& opts)
{
    ComponentPath p;
    p.white_weight = comp.white_weight();
    {
        RngStream rng(component_key(seed, trajectory, 0, is_x, kWhiteSubpurpose));
        p.white_increments = sample_white_increments(p.white_weight, grid, rng);
    }
    p.ou_kernels = comp.exp_kernels();
    for (std::size_t i = 0; i < p.ou_kernels.size(); ++i) {
        RngStream rng(component_key(seed, trajectory, 0, is_x, static_cast<std::uint32_t>(i)));
        p.ou_paths.push_back(sample_ou_exact(p.ou_kernels[i], grid, rng, opts.stationary_start));
    }
    return p;
}

inline ComponentPath continue_component(const ComponentPath& prefix, std::size_t local_split, double dt,
                                        std::size_t n_steps, std::uint64_t seed, std::uint64_t trajectory,
                                        std::uint32_t continuation, bool is_x)
{
    ComponentPath p;
    p.white_weight = prefix.white_weight;
    p.white_increments.assign(n_steps, 0.0);
    if (p.white_weight != 0.0) {
        RngStream rng(component_key(seed, trajectory, continuation, is_x, kWhiteSubpurpose));
        const double sd = std::sqrt(dt);
        for (auto& v : p.white_increments)
            v = sd * rng.normal();
    }
    p.ou_kernels = prefix.ou_kernels;
    for (std::size_t i = 0; i < p.ou_kernels.size(); ++i) {
        RngStream rng(component_key(seed, trajectory, continuation, is_x, static_cast<std::uint32_t>(i)));
        p.ou_paths.push_back(continue_ou(p.ou_kernels[i], dt, n_steps, prefix.ou_paths[i][local_split], rng));
    }
    return p;
}

}  // namespace detail

/// Sample the noise of one trajectory. Streams are keyed by
/// (seed, trajectory, component, kernel index).
inline NoiseRealization sample_realization(const CorrelationPair& pair, const TimeGrid& grid, std::uint64_t seed,
                                           std::uint64_t trajectory, const NoiseOptions& opts = {})
{
    NoiseRealization r;
    r.grid = grid;
    r.offset = 0;
    r.x = detail::sample_component(pair.x, grid, seed, trajectory, true, opts);
    r.y = detail::sample_component(pair.y, grid, seed, trajectory, false, opts);
    return r;
}

/// Sample the continuation (s, t_max] of `prefix` from its exact conditional
/// law given the past up to global index `split`. White parts get fresh
/// increments; O-U parts continue from their values at `split`.
/// `continuation` must be >= 1; it addresses an independent stream.
inline NoiseRealization condition_continue(const NoiseRealization& prefix, std::size_t split, std::uint64_t seed,
                                           std::uint64_t trajectory, std::uint32_t continuation)
{
    if (split < prefix.offset || split > prefix.grid.n_steps)
        throw NoiseError("condition_continue: split index out of range");
    if (continuation == 0)
        throw NoiseError("condition_continue: continuation index 0 is reserved for the prefix");
    const std::size_t local = split - prefix.offset;
    if (local >= prefix.x.white_increments.size() + 1)
        throw NoiseError("condition_continue: split index beyond the stored prefix");
    NoiseRealization r;
    r.grid = prefix.grid;
    r.offset = split;
    const std::size_t n = prefix.grid.n_steps - split;
    r.x = detail::continue_component(prefix.x, local, prefix.grid.dt, n, seed, trajectory, continuation, true);
    r.y = detail::continue_component(prefix.y, local, prefix.grid.dt, n, seed, trajectory, continuation, false);
    return r;
}

/// Re-express a realization on a grid coarser by an integer factor: white
/// increments are summed and colored paths subsampled, so both levels see
/// the same underlying noise path.
inline NoiseRealization coarsen(const NoiseRealization& fine, std::size_t factor)
{
    if (factor == 0 || fine.grid.n_steps % factor != 0 || fine.offset % factor != 0)
        throw NoiseError("coarsen: factor must divide the step count");
    NoiseRealization c;
    c.grid = TimeGrid{fine.grid.t_max, fine.grid.dt * static_cast<double>(factor), fine.grid.n_steps / factor};
    c.offset = fine.offset / factor;
    auto coarsen_comp = [factor](const ComponentPath& f) {
        ComponentPath p;
        p.white_weight = f.white_weight;
        p.ou_kernels = f.ou_kernels;
        const std::size_t n = f.white_increments.size() / factor;
        p.white_increments.assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < factor; ++j)
                p.white_increments[i] += f.white_increments[i * factor + j];
        for (const auto& path : f.ou_paths) {
            std::vector<double> sub(n + 1);
            for (std::size_t i = 0; i <= n; ++i)
                sub[i] = path[i * factor];
            p.ou_paths.push_back(std::move(sub));
        }
        return p;
    };
    c.x = coarsen_comp(fine.x);
    c.y = coarsen_comp(fine.y);
    return c;
}

// ---------------------------------------------------------------------------
// Validation

struct ValidationReport {
    bool accepted = false;
    std::string violation;
    double kappa = 0.0;
    double residual = 0.0;
    bool probe_psd = false;
    double probe_min_eigenvalue = 0.0;
};

/// Accepts a pair iff both components are valid autocovariances. The joint
/// covariance of (x, y) on a coarse probe grid is also factorized as a
/// redundant numerical check.
inline ValidationReport validate_pair(const CorrelationPair& pair, std::size_t probe_points = 64)
{
    ValidationReport rep;
    const auto res = delta_constraint_residual(pair);
    rep.kappa = res.kappa;
    rep.residual = res.residual;

    auto check = [&](const Component& comp, const char* name) -> bool {
        for (const auto& k : comp.kernels) {
            if (auto* w = std::get_if<WhiteKernel>(&k)) {
                if (!(w->weight >= 0.0) || !std::isfinite(w->weight)) {
                    rep.violation = std::string(name) + ": white kernel weight must be nonnegative";
                    return false;
                }
            } else {
                const auto& e = std::get<ExpKernel>(k);
                if (!(e.a > 0.0) || !std::isfinite(e.a)) {
                    rep.violation = std::string(name) + ": exponential kernel rate a must be positive";
                    return false;
                }
                if (!(e.c >= 0.0) || !std::isfinite(e.c)) {
                    rep.violation = std::string(name) + ": exponential kernel amplitude c must be nonnegative";
                    return false;
                }
            }
        }
        return true;
    };
    const bool structural = check(pair.x, "x") && check(pair.y, "y");

    // Probe grid spans a few correlation times of the slowest kernel.
    probe_points = std::clamp<std::size_t>(probe_points, 2, 128);
    double min_rate = 1.0;
    for (const auto* comp : {&pair.x, &pair.y})
        for (const auto& e : comp->exp_kernels())
            if (e.a > 0.0)
                min_rate = std::min(min_rate, e.a);
    const double span = 5.0 / min_rate;
    std::vector<double> times(probe_points);
    for (std::size_t i = 0; i < probe_points; ++i)
        times[i] = span * static_cast<double>(i) / static_cast<double>(probe_points - 1);
    const auto n = static_cast<Eigen::Index>(probe_points);
    RealMatrix joint = RealMatrix::Zero(2 * n, 2 * n);
    joint.topLeftCorner(n, n) = covariance_on_times(pair.x, times).matrix();
    joint.bottomRightCorner(n, n) = covariance_on_times(pair.y, times).matrix();
    auto fact = cholesky_psd(RealSymmetricMatrix(joint));
    if (auto* fail = std::get_if<CholeskyFailure>(&fact)) {
        rep.probe_psd = false;
        rep.probe_min_eigenvalue = fail->min_eigenvalue;
    } else {
        rep.probe_psd = true;
    }

    rep.accepted = structural && rep.probe_psd;
    if (structural && !rep.probe_psd)
        rep.violation = "joint (x, y) probe covariance is not positive semidefinite";
    return rep;
}

}  // namespace gnsse
