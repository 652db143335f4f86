#pragma once

// Single-trajectory propagation of the linear Gaussian SSE
//
//   d/dt psi = -i H psi + z*_t L psi - int_0^t ds [alpha(t,s) L^dag + eta(t,s) L] O(t,s,z*) psi
//
// Three routes are provided:
//
//  * em_ito: the time-convolutionless form that holds under the delta
//    constraint alpha + eta = kappa delta (x purely white). The white part of
//    z*_t L psi is read in the Stratonovich sense; converted to Ito form the
//    drift -(kappa/2) L^2 gains +(kappa/4) L^2, so one Euler-Maruyama step is
//
//      dpsi = [-i H - (kappa/4) L^2] psi dt - i y_t L psi dt + sqrt(kappa/2) L psi dW.
//
//    For Hermitian L the Ito drift of |psi|^2 is
//      psi^dag (A + A^dag) psi + (kappa/2) psi^dag L^2 psi = 0,
//    so the squared norm is a martingale; a naive Ito reading of the
//    noise term would leave a drift of +(kappa/4) <L^2>. A white part of y
//    with weight w_y adds -i sqrt(w_y) L psi dW_y and, after the same
//    conversion, a drift -(w_y/2) L^2.
//
//  * heun_strat: Heun predictor-corrector for fully colored noise, treating
//    z*_t as a smooth function and using O(t,s,z*) = L in the memory term.
//    That closure is exact for the dephasing model.
//
//  * dephasing_exact: closed-form solution for H and L both diagonal
//    (L = g sigma_z), valid for arbitrary correlations:
//      psi_j(t) = exp(-i E_j t + l_j Z*_t - l_j^2 A(t)) psi_j(0),
//    with Z*_t = int_0^t z*_s ds and A(t) = int_0^t du int_0^u (alpha + eta).

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gnsse/linalg.hpp"
#include "gnsse/model.hpp"
#include "gnsse/noise.hpp"

namespace gnsse {

enum class IntegratorKind { EmIto, HeunStrat, DephasingExact };

inline const char* to_string(IntegratorKind k)
{
    switch (k) {
    case IntegratorKind::EmIto: return "em_ito";
    case IntegratorKind::HeunStrat: return "heun_strat";
    case IntegratorKind::DephasingExact: return "dephasing_exact";
    }
    return "?";
}

class IntegratorError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A trajectory whose norm left the representable range.
class TrajectoryAborted : public std::runtime_error {
public:
    TrajectoryAborted(const std::string& what, std::size_t step) : std::runtime_error(what), step_(step) {}
    std::size_t step() const { return step_; }

private:
    std::size_t step_;
};

inline constexpr double kNormOverflow = 1e100;

// ---------------------------------------------------------------------------
// Single steps

/// One Ito Euler-Maruyama step of the time-convolutionless SSE with a white
/// x component of weight kappa/2 and a colored y value.
inline StateVector step_em_ito(const ModelSpec& model, const StateVector& psi, double dw, double y, double kappa,
                               double dt)
{
    const StateVector lpsi = model.L * psi;
    StateVector out = psi + dt * (-kI * (model.H * psi) - 0.25 * kappa * (model.L * lpsi));
    out += (Complex(std::sqrt(0.5 * kappa) * dw, -y * dt)) * lpsi;
    return out;
}

/// One Heun step for colored noise. `z_left` and `z_right` are z*_t at the
/// step endpoints, `t` the left endpoint time.
inline StateVector step_heun_strat(const ModelSpec& model, const CorrelationPair& pair, const StateVector& psi,
                                   Complex z_left, Complex z_right, double t, double dt)
{
    const ComplexMatrix ldl = model.L.adjoint() * model.L;
    const ComplexMatrix l2 = model.L * model.L;
    auto rhs = [&](double tt, Complex z, const StateVector& v) -> StateVector {
        const double a = alpha_row_integral(pair, tt);
        const double e = eta_row_integral(pair, tt);
        return -kI * (model.H * v) + z * (model.L * v) - a * (ldl * v) - e * (l2 * v);
    };
    const StateVector k1 = rhs(t, z_left, psi);
    const StateVector pred = psi + dt * k1;
    const StateVector k2 = rhs(t + dt, z_right, pred);
    return psi + 0.5 * dt * (k1 + k2);
}

// ---------------------------------------------------------------------------
// Stepper with precomputed operators

/// Advances a state (a vector, or a matrix of column states) along one noise
/// realization. Construction checks that the integrator suits the noise and
/// the model.
class SseIntegrator {
public:
    SseIntegrator(const ModelSpec& model, const CorrelationPair& pair, IntegratorKind kind)
        : model_(model), pair_(pair), kind_(kind)
    {
        model.validate();
        const auto d = model.dim();
        ldl_ = model.L.adjoint() * model.L;
        l2_ = model.L * model.L;
        wx_ = pair.x.white_weight();
        wy_ = pair.y.white_weight();
        switch (kind) {
        case IntegratorKind::EmIto:
            if (!pair.x.is_white())
                throw IntegratorError("em_ito requires the delta constraint: the x component must be purely white");
            drift_ = -kI * model.H - 0.5 * (wx_ + wy_) * l2_;
            break;
        case IntegratorKind::HeunStrat:
            if (wx_ != 0.0 || wy_ != 0.0)
                throw IntegratorError("heun_strat requires fully colored noise (no white kernels)");
            break;
        case IntegratorKind::DephasingExact: {
            if (model.kind != ModelKind::Dephasing)
                throw IntegratorError("dephasing_exact requires the dephasing model");
            const ComplexMatrix offh = model.H - ComplexMatrix(model.H.diagonal().asDiagonal());
            const ComplexMatrix offl = model.L - ComplexMatrix(model.L.diagonal().asDiagonal());
            if (offh.cwiseAbs().maxCoeff() > 0.0 || offl.cwiseAbs().maxCoeff() > 0.0 ||
                model.L.diagonal().imag().cwiseAbs().maxCoeff() > 0.0)
                throw IntegratorError("dephasing_exact requires diagonal H and real diagonal L");
            energies_ = model.H.diagonal().real();
            lambdas_ = model.L.diagonal().real();
            break;
        }
        }
        (void)d;
    }

    IntegratorKind kind() const { return kind_; }
    const ModelSpec& model() const { return model_; }
    const CorrelationPair& pair() const { return pair_; }

    /// Advance `psi` from global grid index k to k + 1.
    void step(ComplexMatrix& psi, const NoiseRealization& r, std::size_t k) const
    {
        const double dt = r.grid.dt;
        const std::size_t i = k - r.offset;
        switch (kind_) {
        case IntegratorKind::EmIto: {
            const ComplexMatrix lpsi = model_.L * psi;
            const Complex noise(r.x.white_integral(i), -r.y.colored(i) * dt - r.y.white_integral(i));
            psi += dt * (drift_ * psi) + noise * lpsi;
            break;
        }
        case IntegratorKind::HeunStrat: {
            const double t = r.grid.time(k);
            const ComplexMatrix k1 = heun_rhs(t, r.z_colored(k), psi);
            const ComplexMatrix pred = psi + dt * k1;
            const ComplexMatrix k2 = heun_rhs(t + dt, r.z_colored(k + 1), pred);
            psi += 0.5 * dt * (k1 + k2);
            break;
        }
        case IntegratorKind::DephasingExact: {
            const Complex dz = r.z_integral(k);
            const double t = r.grid.time(k);
            const double da = memory_integral(pair_, t + dt) - memory_integral(pair_, t);
            for (Eigen::Index j = 0; j < psi.rows(); ++j) {
                const double lam = lambdas_(j);
                const Complex expo = Complex(0.0, -energies_(j) * dt) + lam * dz - lam * lam * da;
                psi.row(j) *= std::exp(expo);
            }
            break;
        }
        }
    }

    /// Advance from index `from` to `to`, calling on_point(k, psi) after
    /// every step (k = from + 1, ..., to). Throws TrajectoryAborted when the
    /// norm exceeds 1e100 or becomes non-finite.
    template <class OnPoint>
    void run(ComplexMatrix& psi, const NoiseRealization& r, std::size_t from, std::size_t to, OnPoint&& on_point) const
    {
        if (from < r.offset || to > r.grid.n_steps || from > to)
            throw IntegratorError("integration range outside the noise realization");
        for (std::size_t k = from; k < to; ++k) {
            step(psi, r, k);
            const double n2 = psi.squaredNorm();
            if (!std::isfinite(n2) || n2 > kNormOverflow * kNormOverflow)
                throw TrajectoryAborted("trajectory norm overflow at step " + std::to_string(k + 1), k + 1);
            on_point(k + 1, psi);
        }
    }

private:
    ComplexMatrix heun_rhs(double t, Complex z, const ComplexMatrix& v) const
    {
        const double a = alpha_row_integral(pair_, t);
        const double e = eta_row_integral(pair_, t);
        const ComplexMatrix gen = -kI * model_.H - a * ldl_ - e * l2_;
        return gen * v + z * (model_.L * v);
    }

    ModelSpec model_;
    CorrelationPair pair_;
    IntegratorKind kind_;
    ComplexMatrix ldl_, l2_, drift_;
    double wx_ = 0.0, wy_ = 0.0;
    RealVector energies_, lambdas_;
};

// ---------------------------------------------------------------------------
// Whole trajectories

/// Grid indices at which states are stored: multiples of the stride plus
/// the last index.
inline std::vector<std::size_t> snapshot_indices(std::size_t n_steps, std::size_t n_snapshots)
{
    const std::size_t stride = std::max<std::size_t>(1, n_steps / std::max<std::size_t>(1, n_snapshots));
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k <= n_steps; k += stride)
        idx.push_back(k);
    if (idx.back() != n_steps)
        idx.push_back(n_steps);
    return idx;
}

struct TrajectoryResult {
    TimeGrid grid;
    std::size_t stride = 1;
    std::vector<std::size_t> snapshot_index;
    std::vector<StateVector> states;
    std::vector<double> norms_sq;        ///< at every grid point
    double max_top_level_fraction = 0.0; ///< truncation monitor
};

/// Propagate psi0 over the whole realization.
inline TrajectoryResult propagate(const SseIntegrator& integ, const NoiseRealization& r, std::size_t n_snapshots = 100)
{
    const auto& model = integ.model();
    TrajectoryResult out;
    out.grid = r.grid;
    out.snapshot_index = snapshot_indices(r.grid.n_steps, n_snapshots);
    out.stride = out.snapshot_index.size() > 1 ? out.snapshot_index[1] : 1;
    out.norms_sq.reserve(r.grid.n_steps + 1);
    ComplexMatrix psi = model.psi0;
    out.norms_sq.push_back(psi.squaredNorm());
    out.states.push_back(model.psi0);
    std::size_t next = 1;
    integ.run(psi, r, r.offset, r.grid.n_steps, [&](std::size_t k, const ComplexMatrix& v) {
        out.norms_sq.push_back(v.squaredNorm());
        if (next < out.snapshot_index.size() && out.snapshot_index[next] == k) {
            out.states.emplace_back(v.col(0));
            if (model.kind == ModelKind::Qbm)
                out.max_top_level_fraction = std::max(out.max_top_level_fraction, top_level_fraction(v.col(0)));
            ++next;
        }
    });
    return out;
}

/// Exact dephasing solution on a realization (see header comment).
inline TrajectoryResult propagate_dephasing_exact(const ModelSpec& model, const CorrelationPair& pair,
                                                  const NoiseRealization& r, std::size_t n_snapshots = 100)
{
    if (model.kind != ModelKind::Dephasing)
        throw IntegratorError("propagate_dephasing_exact: model must be the dephasing model");
    return propagate(SseIntegrator(model, pair, IntegratorKind::DephasingExact), r, n_snapshots);
}

/// Propagator G_t (G_0 = 1) at the requested grid indices, evolving each
/// column with the same stepping rule. Limited to dim <= 16.
inline std::vector<ComplexMatrix> propagate_propagator(const SseIntegrator& integ, const NoiseRealization& r,
                                                       const std::vector<std::size_t>& at)
{
    const auto d = integ.model().dim();
    if (d > 16)
        throw IntegratorError("propagate_propagator: dimension above 16");
    std::vector<ComplexMatrix> out;
    ComplexMatrix g = ComplexMatrix::Identity(d, d);
    std::size_t next = 0;
    while (next < at.size() && at[next] == r.offset) {
        out.push_back(g);
        ++next;
    }
    integ.run(g, r, r.offset, r.grid.n_steps, [&](std::size_t k, const ComplexMatrix& v) {
        while (next < at.size() && at[next] == k) {
            out.push_back(v);
            ++next;
        }
    });
    if (out.size() != at.size())
        throw IntegratorError("propagate_propagator: requested indices must be sorted grid indices");
    return out;
}

/// Two-time propagator A_s^t = G_t G_s^{-1}. Throws when G_s has condition
/// number above 1e12.
inline ComplexMatrix two_time_propagator(const ComplexMatrix& g_t, const ComplexMatrix& g_s)
{
    Eigen::JacobiSVD<ComplexMatrix> svd(g_s);
    const auto& sv = svd.singularValues();
    const double cond = sv(0) / sv(sv.size() - 1);
    if (!std::isfinite(cond) || cond > 1e12)
        throw IntegratorError("two_time_propagator: G_s is singular (condition number " + std::to_string(cond) + ")");
    return g_t * g_s.partialPivLu().inverse();
}

}  // namespace gnsse
