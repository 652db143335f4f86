#pragma once

// Dense complex linear algebra for small Hilbert spaces, plus a PSD-tolerant
// Cholesky factorization used to sample Gaussian vectors.

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

namespace gnsse {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using StateVector = Eigen::VectorXcd;
using RealMatrix = Eigen::MatrixXd;
using RealVector = Eigen::VectorXd;

inline constexpr Complex kI{0.0, 1.0};

class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Symmetric real matrix. Only the upper triangle of the input is read; the
/// lower triangle is mirrored from it so symmetry is exact.
class RealSymmetricMatrix {
public:
    explicit RealSymmetricMatrix(const RealMatrix& m) : m_(m)
    {
        if (m.rows() != m.cols())
            throw DimensionError("RealSymmetricMatrix: matrix is not square");
        for (Eigen::Index j = 0; j < m_.cols(); ++j)
            for (Eigen::Index i = j + 1; i < m_.rows(); ++i)
                m_(i, j) = m_(j, i);
    }

    Eigen::Index size() const { return m_.rows(); }
    const RealMatrix& matrix() const { return m_; }
    double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

private:
    RealMatrix m_;
};

inline bool is_hermitian(const ComplexMatrix& m, double tol = 1e-12)
{
    if (m.rows() != m.cols())
        return false;
    return ((m - m.adjoint()).cwiseAbs().maxCoeff() <= tol) || m.size() == 0;
}

/// exp(t M) by scaling and squaring with Pade approximants. Accepts
/// non-normal inputs such as Liouvillians.
inline ComplexMatrix matexp(const ComplexMatrix& m, double t)
{
    if (m.rows() != m.cols())
        throw DimensionError("matexp: matrix is not square");
    // Liouvillians of 16-level systems are 256 x 256.
    if (m.rows() > 256)
        throw DimensionError("matexp: dimension exceeds 256");
    if (m.size() == 0)
        return m;
    ComplexMatrix scaled = t * m;
    return scaled.exp();
}

struct CholeskyFailure {
    double jitter_tried;          ///< largest jitter attempted
    double min_eigenvalue;        ///< most negative eigenvalue of the input
    std::string message;
};

struct CholeskyResult {
    RealMatrix lower;   ///< L with L L^T = C + jitter * I
    double jitter;      ///< jitter that was accepted
};

namespace detail {

// Outer-product Cholesky that tolerates (near-)zero pivots. A column whose
// pivot falls below `zero_tol` is zeroed; whether that was legitimate is
// decided by the reconstruction check in cholesky_psd.
inline std::optional<RealMatrix> cholesky_semidefinite(const RealMatrix& c, double zero_tol)
{
    const Eigen::Index n = c.rows();
    RealMatrix a = c;
    RealMatrix l = RealMatrix::Zero(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        double pivot = a(k, k);
        if (pivot < -zero_tol)
            return std::nullopt;
        if (pivot <= zero_tol)
            continue;
        double root = std::sqrt(pivot);
        l(k, k) = root;
        for (Eigen::Index i = k + 1; i < n; ++i)
            l(i, k) = a(i, k) / root;
        for (Eigen::Index j = k + 1; j < n; ++j)
            for (Eigen::Index i = j; i < n; ++i)
                a(i, j) -= l(i, k) * l(j, k);
    }
    return l;
}

}  // namespace detail

/// Factor C (+ jitter) as L L^T. The jitter escalates through
/// {0, 1e-12, 1e-10} times the largest diagonal entry; a candidate is
/// accepted when ||L L^T - C||_max <= 1e-8 ||C||_max. On failure a report is
/// returned rather than thrown.
inline std::variant<CholeskyResult, CholeskyFailure> cholesky_psd(const RealSymmetricMatrix& c)
{
    const RealMatrix& m = c.matrix();
    const Eigen::Index n = m.rows();
    if (n == 0)
        return CholeskyResult{RealMatrix(0, 0), 0.0};

    const double max_diag = std::max(m.diagonal().cwiseAbs().maxCoeff(), 0.0);
    const double max_abs = m.cwiseAbs().maxCoeff();
    if (max_abs == 0.0)
        return CholeskyResult{RealMatrix::Zero(n, n), 0.0};

    const double jitters[] = {0.0, 1e-12 * max_diag, 1e-10 * max_diag};
    double last_jitter = 0.0;
    for (double jitter : jitters) {
        last_jitter = jitter;
        RealMatrix shifted = m;
        shifted.diagonal().array() += jitter;
        auto l = detail::cholesky_semidefinite(shifted, 1e-14 * max_diag);
        if (!l)
            continue;
        double err = (*l * l->transpose() - m).cwiseAbs().maxCoeff();
        if (err <= 1e-8 * max_abs)
            return CholeskyResult{std::move(*l), jitter};
    }

    Eigen::SelfAdjointEigenSolver<RealMatrix> es(m, Eigen::EigenvaluesOnly);
    double min_eig = es.eigenvalues().minCoeff();
    return CholeskyFailure{last_jitter, min_eig,
                           "covariance is not positive semidefinite (min eigenvalue " +
                               std::to_string(min_eig) + ")"};
}

/// Half the trace norm of rho1 - rho2.
inline double trace_distance(const ComplexMatrix& rho1, const ComplexMatrix& rho2)
{
    if (rho1.rows() != rho2.rows() || rho1.cols() != rho2.cols() || rho1.rows() != rho1.cols())
        throw DimensionError("trace_distance: dimension mismatch");
    ComplexMatrix diff = rho1 - rho2;
    // Average with the adjoint so roundoff asymmetry does not leak in.
    ComplexMatrix herm = 0.5 * (diff + diff.adjoint());
    Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(herm, Eigen::EigenvaluesOnly);
    return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

/// Projector |psi><psi|.
inline ComplexMatrix outer(const StateVector& psi)
{
    return psi * psi.adjoint();
}

/// Pauli matrices in the sigma_z eigenbasis {|up>, |down>}.
namespace pauli {
inline ComplexMatrix x()
{
    ComplexMatrix m(2, 2);
    m << 0, 1, 1, 0;
    return m;
}
inline ComplexMatrix y()
{
    ComplexMatrix m(2, 2);
    m << 0, -kI, kI, 0;
    return m;
}
inline ComplexMatrix z()
{
    ComplexMatrix m(2, 2);
    m << 1, 0, 0, -1;
    return m;
}
/// sigma_minus = |down><up|
inline ComplexMatrix minus()
{
    ComplexMatrix m(2, 2);
    m << 0, 0, 1, 0;
    return m;
}
}  // namespace pauli

}  // namespace gnsse
