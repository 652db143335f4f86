#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "gnsse/linalg.hpp"

namespace gnsse {

class ModelError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class ModelKind { SpinBoson, Dephasing, Qbm, Custom };

inline const char* to_string(ModelKind k)
{
    switch (k) {
    case ModelKind::SpinBoson: return "spin_boson";
    case ModelKind::Dephasing: return "dephasing";
    case ModelKind::Qbm: return "qbm";
    case ModelKind::Custom: return "custom";
    }
    return "?";
}

/// System Hamiltonian H (hbar = 1), coupling operator L and initial state.
struct ModelSpec {
    ModelKind kind = ModelKind::Custom;
    double omega = 0.0;
    double g = 0.0;
    ComplexMatrix H;
    ComplexMatrix L;
    StateVector psi0;

    Eigen::Index dim() const { return H.rows(); }
    bool coupling_hermitian() const { return is_hermitian(L, 1e-12); }

    /// Throws ModelError on inconsistent dimensions, non-Hermitian H or a
    /// non-normalized initial state.
    void validate() const
    {
        const auto d = H.rows();
        if (d < 1 || H.cols() != d)
            throw ModelError("model: H must be a nonempty square matrix");
        if (L.rows() != d || L.cols() != d)
            throw ModelError("model: L must have the dimension of H");
        if (psi0.size() != d)
            throw ModelError("model: psi0 must have the dimension of H");
        if (!is_hermitian(H, 1e-12))
            throw ModelError("model: H must be Hermitian to 1e-12");
        if (std::abs(psi0.norm() - 1.0) > 1e-12)
            throw ModelError("model: psi0 must have unit norm to 1e-12");
    }
};

namespace states {
inline StateVector up()
{
    StateVector v(2);
    v << 1, 0;
    return v;
}
inline StateVector down()
{
    StateVector v(2);
    v << 0, 1;
    return v;
}
inline StateVector plus()
{
    StateVector v(2);
    v << 1, 1;
    return v / std::sqrt(2.0);
}
inline StateVector basis(Eigen::Index dim, Eigen::Index k)
{
    StateVector v = StateVector::Zero(dim);
    v(k) = 1.0;
    return v;
}
}  // namespace states

/// H = (omega/2) sigma_z, L = g sigma_x.
inline ModelSpec spin_boson(double omega, double g, const StateVector& psi0 = states::plus())
{
    return ModelSpec{ModelKind::SpinBoson, omega, g, 0.5 * omega * pauli::z(), g * pauli::x(), psi0};
}

/// H = (omega/2) sigma_z, L = g sigma_z.
inline ModelSpec dephasing(double omega, double g, const StateVector& psi0 = states::plus())
{
    return ModelSpec{ModelKind::Dephasing, omega, g, 0.5 * omega * pauli::z(), g * pauli::z(), psi0};
}

/// Position operator q = (a + a^dagger) / sqrt(2 omega) on a truncated Fock
/// basis (unit mass).
inline ComplexMatrix oscillator_position(double omega, Eigen::Index dim)
{
    ComplexMatrix q = ComplexMatrix::Zero(dim, dim);
    for (Eigen::Index n = 0; n + 1 < dim; ++n) {
        const double el = std::sqrt(static_cast<double>(n + 1) / (2.0 * omega));
        q(n, n + 1) = el;
        q(n + 1, n) = el;
    }
    return q;
}

/// Momentum operator p = i sqrt(omega/2) (a^dagger - a).
inline ComplexMatrix oscillator_momentum(double omega, Eigen::Index dim)
{
    ComplexMatrix p = ComplexMatrix::Zero(dim, dim);
    for (Eigen::Index n = 0; n + 1 < dim; ++n) {
        const double el = std::sqrt(omega * static_cast<double>(n + 1) / 2.0);
        p(n + 1, n) = kI * el;
        p(n, n + 1) = -kI * el;
    }
    return p;
}

/// Quantum Brownian motion: H = p^2/2 + omega^2 q^2/2 and L = g q on `dim`
/// Fock levels. H is taken diagonal, omega (n + 1/2), which is what
/// p^2/2 + omega^2 q^2/2 equals below the truncation edge.
inline ModelSpec qbm(double omega, Eigen::Index dim, double g = 1.0, StateVector psi0 = {})
{
    if (dim < 2)
        throw ModelError("qbm: dim must be at least 2");
    if (!(omega > 0.0))
        throw ModelError("qbm: omega must be positive");
    ComplexMatrix h = ComplexMatrix::Zero(dim, dim);
    for (Eigen::Index n = 0; n < dim; ++n)
        h(n, n) = omega * (static_cast<double>(n) + 0.5);
    if (psi0.size() == 0)
        psi0 = states::basis(dim, 0);
    return ModelSpec{ModelKind::Qbm, omega, g, h, g * oscillator_position(omega, dim), psi0};
}

/// Population of the highest Fock level relative to the squared norm.
inline double top_level_fraction(const StateVector& psi)
{
    const double n2 = psi.squaredNorm();
    if (n2 == 0.0)
        return 0.0;
    return std::norm(psi(psi.size() - 1)) / n2;
}

}  // namespace gnsse
