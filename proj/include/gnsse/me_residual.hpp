#pragma once

// Residual of the dephasing master equation evaluated on an ensemble:
//   r_ij(t) = d rho_ij/dt - gamma_ij(t) rho_ij,
// with the time derivative taken as a central difference of the raw
// ensemble average over neighbouring snapshots. The error bar combines the
// Monte Carlo noise of r (from per-trajectory second moments) with a
// Richardson estimate of the finite-difference truncation error.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "gnsse/ensemble.hpp"
#include "gnsse/oracles.hpp"

namespace gnsse {

struct MeResidualPoint {
    double t = 0.0;
    double max_abs_residual = 0.0;
    double max_ratio = 0.0;   ///< max over entries of |r| / sigma
};

struct MeResidualReport {
    std::vector<MeResidualPoint> points;
    double max_ratio = 0.0;
    bool pass = false;        ///< |r| <= 3 sigma for every entry and time
};

inline constexpr double kMinSnapshotsPerUnitTime = 20.0;

inline MeResidualReport me_residual_check(const EnsembleStats& st, const ModelSpec& model, const CorrelationPair& pair,
                                          std::size_t max_points = 10)
{
    if (model.kind != ModelKind::Dephasing)
        throw OracleError("me_residual: only the dephasing model has a closed master equation");
    const auto& acc = st.sums;
    if (acc.derivs.empty())
        throw OracleError("me_residual: ensemble was run without derivative tracking");
    const std::size_t ns = st.times.size();
    if (ns < 5)
        throw OracleError("me_residual: at least five snapshots are required");
    const double h = st.times[1] - st.times[0];
    for (std::size_t j = 1; j + 1 < ns; ++j)
        if (std::abs(st.times[j + 1] - st.times[j] - h) > 1e-9 * h)
            throw OracleError("me_residual: snapshots must be uniformly spaced");
    if (1.0 / h < kMinSnapshotsPerUnitTime)
        throw OracleError("me_residual: snapshot stride too coarse for finite differences");

    const double n = static_cast<double>(acc.n_ok);
    const double corr = n > 1 ? n / (n - 1.0) : 0.0;
    // Interior points with two neighbours on each side, spread evenly.
    std::vector<std::size_t> eval;
    const std::size_t first = 2, last = ns - 3;
    const std::size_t count = std::min(max_points, last - first + 1);
    for (std::size_t q = 0; q < count; ++q)
        eval.push_back(first + (count > 1 ? q * (last - first) / (count - 1) : 0));

    MeResidualReport rep;
    rep.pass = true;
    for (std::size_t j : eval) {
        const double t = st.times[j];
        const ComplexMatrix gamma = dephasing_generator(model, pair, t);
        const ComplexMatrix& rho = st.rho_raw[j];
        const ComplexMatrix d_h = (st.rho_raw[j + 1] - st.rho_raw[j - 1]) / (2.0 * h);
        const ComplexMatrix d_2h = (st.rho_raw[j + 2] - st.rho_raw[j - 2]) / (4.0 * h);
        const auto& s = acc.snaps[j];
        const auto& dv = acc.derivs[j];
        MeResidualPoint pt;
        pt.t = t;
        for (Eigen::Index a = 0; a < rho.rows(); ++a)
            for (Eigen::Index b = 0; b < rho.cols(); ++b) {
                const Complex r = d_h(a, b) - gamma(a, b) * rho(a, b);
                const double gr = gamma(a, b).real(), gi = gamma(a, b).imag();
                const double k = 1.0 / (2.0 * h);
                const double erd = dv.rd(a, b) / n, eid = dv.id(a, b) / n;
                const double erx = s.x(a, b).real() / n, eix = s.x(a, b).imag() / n;
                // Per-trajectory Re r = k ReD - gr ReX + gi ImX, Im r = k ImD - gr ImX - gi ReX.
                const double m_re = k * erd - gr * erx + gi * eix;
                const double m_im = k * eid - gr * eix - gi * erx;
                const double e_re2 = k * k * dv.rd2(a, b) / n + gr * gr * s.re2(a, b) / n +
                                     gi * gi * s.im2(a, b) / n - 2.0 * k * gr * dv.rdrx(a, b) / n +
                                     2.0 * k * gi * dv.rdix(a, b) / n - 2.0 * gr * gi * dv.rxix(a, b) / n;
                const double e_im2 = k * k * dv.id2(a, b) / n + gr * gr * s.im2(a, b) / n +
                                     gi * gi * s.re2(a, b) / n - 2.0 * k * gr * dv.idix(a, b) / n -
                                     2.0 * k * gi * dv.idrx(a, b) / n + 2.0 * gr * gi * dv.rxix(a, b) / n;
                const double se_re = std::sqrt(std::max(0.0, e_re2 - m_re * m_re) * corr / n);
                const double se_im = std::sqrt(std::max(0.0, e_im2 - m_im * m_im) * corr / n);
                const Complex fd = (d_2h(a, b) - d_h(a, b)) / 3.0;
                const double sig_re = std::hypot(se_re, fd.real());
                const double sig_im = std::hypot(se_im, fd.imag());
                pt.max_abs_residual = std::max(pt.max_abs_residual, std::abs(r));
                for (auto [res, sig] : {std::pair{r.real(), sig_re}, std::pair{r.imag(), sig_im}}) {
                    if (sig <= 0.0) {
                        if (std::abs(res) > 1e-12)
                            rep.pass = false;
                        continue;
                    }
                    pt.max_ratio = std::max(pt.max_ratio, std::abs(res) / sig);
                    if (std::abs(res) > 3.0 * sig + 1e-12)
                        rep.pass = false;
                }
            }
        rep.max_ratio = std::max(rep.max_ratio, pt.max_ratio);
        rep.points.push_back(pt);
    }
    return rep;
}

}  // namespace gnsse
