#pragma once

// Closed-form references for validating the Monte Carlo results. Nothing in
// here touches the trajectory discretization: kernel integrals are done
// analytically, and the GKSL reference uses a matrix exponential of the
// Liouvillian.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include <unsupported/Eigen/KroneckerProduct>

#include "gnsse/linalg.hpp"
#include "gnsse/model.hpp"
#include "gnsse/noise.hpp"

namespace gnsse {

class OracleError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// GKSL

struct GKSLSpec {
    ComplexMatrix H;
    ComplexMatrix L;
    double rate = 0.0;
};

/// Liouvillian of d rho/dt = -i[H, rho] + rate (L rho L^dag - {L^dag L, rho}/2)
/// acting on column-stacked vec(rho), using vec(A X B) = (B^T (x) A) vec(X).
inline ComplexMatrix liouvillian(const GKSLSpec& spec)
{
    const auto d = spec.H.rows();
    if (spec.H.cols() != d || spec.L.rows() != d || spec.L.cols() != d)
        throw DimensionError("liouvillian: H and L dimensions differ");
    if (spec.rate < 0.0)
        throw OracleError("liouvillian: rate must be nonnegative");
    const ComplexMatrix id = ComplexMatrix::Identity(d, d);
    const ComplexMatrix ldl = spec.L.adjoint() * spec.L;
    ComplexMatrix out = -kI * (Eigen::kroneckerProduct(id, spec.H).eval() -
                               Eigen::kroneckerProduct(spec.H.transpose(), id).eval());
    out += spec.rate * (Eigen::kroneckerProduct(spec.L.conjugate(), spec.L).eval() -
                        0.5 * Eigen::kroneckerProduct(id, ldl).eval() -
                        0.5 * Eigen::kroneckerProduct(ldl.transpose(), id).eval());
    return out;
}

/// Density matrices at the given times. Limited to dim <= 16.
inline std::vector<ComplexMatrix> gksl_solve(const GKSLSpec& spec, const ComplexMatrix& rho0,
                                             std::span<const double> times)
{
    const auto d = spec.H.rows();
    if (d > 16)
        throw DimensionError("gksl_solve: dimension above 16");
    if (rho0.rows() != d || rho0.cols() != d)
        throw DimensionError("gksl_solve: rho0 dimension mismatch");
    const ComplexMatrix lv = liouvillian(spec);
    const Eigen::Map<const Eigen::VectorXcd> v0(rho0.data(), d * d);
    std::vector<ComplexMatrix> out;
    out.reserve(times.size());
    for (double t : times) {
        const Eigen::VectorXcd v = matexp(lv, t) * v0;
        ComplexMatrix rho = Eigen::Map<const ComplexMatrix>(v.data(), d, d);
        out.push_back(0.5 * (rho + rho.adjoint()));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dephasing model

/// exp(-4 g^2 Re int_0^t du int_0^u ds alpha(u, s)): decay of the coherence
/// |rho_01(t)| / |rho_01(0)| for L = g sigma_z.
inline double dephasing_decoherence_factor(const CorrelationPair& pair, double g, double t)
{
    if (t <= 0.0)
        return 1.0;
    return std::exp(-4.0 * g * g * alpha_triangle_integral(pair, t));
}

/// Reduced state of a model with diagonal H and real diagonal L:
/// rho_ij(t) = rho_ij(0) exp(-i (E_i - E_j) t) exp(-(l_i - l_j)^2 Re int int alpha).
inline ComplexMatrix dephasing_reduced_state(const ModelSpec& model, const CorrelationPair& pair, double t)
{
    if (model.kind != ModelKind::Dephasing)
        throw OracleError("dephasing_reduced_state: model must be the dephasing model");
    const ComplexMatrix rho0 = outer(model.psi0);
    const double tri = alpha_triangle_integral(pair, t);
    ComplexMatrix rho = rho0;
    for (Eigen::Index i = 0; i < rho.rows(); ++i)
        for (Eigen::Index j = 0; j < rho.cols(); ++j) {
            const double de = model.H(i, i).real() - model.H(j, j).real();
            const double dl = model.L(i, i).real() - model.L(j, j).real();
            rho(i, j) *= std::exp(Complex(-dl * dl * tri, -de * t));
        }
    return rho;
}

namespace detail {

/// 2u - 3 + 4 e^{-u} - e^{-2u}, accurate for small u.
inline double integrated_ou_bridge(double u)
{
    if (u < 1e-3)
        return u * u * u * (2.0 / 3.0 - u * (0.5 - u * 7.0 / 30.0));
    return 2.0 * u + 4.0 * std::expm1(-u) - std::expm1(-2.0 * u);
}

}  // namespace detail

/// Conditional mean and variance of int_s^t x_u du given the noise history
/// up to s. Only the current values of the O-U parts of x matter.
struct ConditionalIntegral {
    double mean = 0.0;
    double variance = 0.0;
};

inline ConditionalIntegral conditional_x_integral(const Component& x, std::span<const double> ou_values_at_s,
                                                  double tau)
{
    const auto kernels = x.exp_kernels();
    if (kernels.size() != ou_values_at_s.size())
        throw OracleError("conditional oracle: one O-U value per exponential x kernel is required");
    ConditionalIntegral ci;
    ci.variance = x.white_weight() * tau;
    for (std::size_t k = 0; k < kernels.size(); ++k) {
        const auto& e = kernels[k];
        ci.mean += ou_values_at_s[k] * -std::expm1(-e.a * tau) / e.a;
        ci.variance += e.c / (e.a * e.a) * detail::integrated_ou_bridge(e.a * tau);
    }
    return ci;
}

/// E[|psi_t|^2 | noise history up to s] for the dephasing model. For each
/// eigenvalue l of L the factor is
///   exp(2 l m_c + 2 l^2 v - 2 l^2 (A(t) - A(s))),
/// with m_c, v the conditional mean and variance of int_s^t x du.
inline double dephasing_conditional_norm_oracle(const ModelSpec& model, const CorrelationPair& pair,
                                                std::span<const double> x_ou_values_at_s, const StateVector& psi_s,
                                                double s, double t)
{
    if (model.kind != ModelKind::Dephasing)
        throw OracleError("conditional oracle: model must be the dephasing model");
    if (t < s)
        throw OracleError("conditional oracle: t must not precede s");
    const auto ci = conditional_x_integral(pair.x, x_ou_values_at_s, t - s);
    const double da = memory_integral(pair, t) - memory_integral(pair, s);
    double out = 0.0;
    for (Eigen::Index j = 0; j < psi_s.size(); ++j) {
        const double lam = model.L(j, j).real();
        out += std::norm(psi_s(j)) * std::exp(2.0 * lam * ci.mean + 2.0 * lam * lam * (ci.variance - da));
    }
    return out;
}

/// Coefficient function of the dephasing master equation
///   d rho_ij/dt = gamma_ij(t) rho_ij,
///   gamma_ij(t) = -i (E_i - E_j) - (int_0^t alpha(t,s) ds) (l_i - l_j)^2,
/// which is what the general (not closed) master equation reduces to when
/// O = L is noise independent.
inline ComplexMatrix dephasing_generator(const ModelSpec& model, const CorrelationPair& pair, double t)
{
    const auto d = model.dim();
    const double a = alpha_row_integral(pair, t);
    ComplexMatrix gamma(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) {
            const double de = model.H(i, i).real() - model.H(j, j).real();
            const double dl = model.L(i, i).real() - model.L(j, j).real();
            gamma(i, j) = Complex(-a * dl * dl, -de);
        }
    return gamma;
}

}  // namespace gnsse
