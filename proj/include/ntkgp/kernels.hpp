// Analytic infinite-width kernels for erf / ReLU MLPs: the output-law kernel,
// the tangent kernel, and their difference (the below-readout residual).
// A Monte Carlo estimator for the bivariate Gaussian expectations gates the
// closed forms in the test suite.
//
// The closed forms are the classical results: the arcsine kernel for erf and
// the arc-cosine kernel of order one for ReLU, with the matching derivative
// kernels. Cos-angle arguments are clamped to [-1 + 1e-12, 1 - 1e-12] so
// coincident inputs never leave the domain of asin/acos.

#pragma once

#include "ntkgp/highprec.hpp"
#include "ntkgp/net.hpp"
#include "ntkgp/numerics.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace ntkgp {

enum class KernelKind { nngp, ntk, residual, empirical };

struct KernelMatrix {
    Matrix values;
    KernelKind kind = KernelKind::nngp;
};

// ---------------------------------------------------------------------------
// Closed-form bivariate Gaussian expectations
//
// Each takes the 2x2 covariance (k11, k12, k22) of (u, v) and returns
// E[phi(u) phi(v)] or E[phi'(u) phi'(v)].
// ---------------------------------------------------------------------------

namespace detail {
inline double clamp_cos(double c) {
    const double lim = 1.0 - 1e-12;
    return c < -lim ? -lim : (c > lim ? lim : c);
}
} // namespace detail

inline double erf_pair_expectation(double k11, double k12, double k22) {
    const double denom = std::sqrt((1.0 + 2.0 * k11) * (1.0 + 2.0 * k22));
    return 2.0 / std::numbers::pi * std::asin(detail::clamp_cos(2.0 * k12 / denom));
}

inline double erf_deriv_pair_expectation(double k11, double k12, double k22) {
    const double det = (1.0 + 2.0 * k11) * (1.0 + 2.0 * k22) - 4.0 * k12 * k12;
    return 4.0 / std::numbers::pi / std::sqrt(std::max(det, 1e-300));
}

inline double relu_pair_expectation(double k11, double k12, double k22) {
    const double scale = std::sqrt(k11 * k22);
    if (!(scale > 0.0)) return 0.0;  // a degenerate marginal pins phi(u) = 0
    const double gamma = std::acos(detail::clamp_cos(k12 / scale));
    return scale / (2.0 * std::numbers::pi) *
           (std::sin(gamma) + (std::numbers::pi - gamma) * std::cos(gamma));
}

inline double relu_deriv_pair_expectation(double k11, double k12, double k22) {
    if (!(k11 > 0.0) || !(k22 > 0.0)) return 0.0;  // relu'(0) = 0 convention
    const double gamma = std::acos(detail::clamp_cos(k12 / std::sqrt(k11 * k22)));
    return (std::numbers::pi - gamma) / (2.0 * std::numbers::pi);
}

inline double pair_expectation(Activation act, bool derivative,
                               double k11, double k12, double k22) {
    if (act == Activation::erf)
        return derivative ? erf_deriv_pair_expectation(k11, k12, k22)
                          : erf_pair_expectation(k11, k12, k22);
    return derivative ? relu_deriv_pair_expectation(k11, k12, k22)
                      : relu_pair_expectation(k11, k12, k22);
}

// ---------------------------------------------------------------------------
// Monte Carlo oracle
// ---------------------------------------------------------------------------

struct McEstimate {
    double mean = 0.0;
    double std_error = 0.0;
};

inline McEstimate mc_dual_expectation(Activation act, bool derivative, const Matrix& cov,
                                      std::int64_t n_samples, RngStream& stream) {
    if (cov.rows() != 2 || cov.cols() != 2)
        throw std::invalid_argument("mc_dual_expectation: covariance must be 2x2");
    require_symmetric(cov, "mc_dual_expectation", 1e-8);
    const double k11 = cov(0, 0), k12 = 0.5 * (cov(0, 1) + cov(1, 0)), k22 = cov(1, 1);
    const double det = k11 * k22 - k12 * k12;
    if (k11 < -1e-12 || k22 < -1e-12 || det < -1e-10 * std::max(1.0, k11 * k22))
        throw std::invalid_argument("mc_dual_expectation: covariance is indefinite");
    if (n_samples < 2)
        throw std::invalid_argument("mc_dual_expectation: need at least 2 samples");

    // explicit 2x2 Cholesky with degenerate marginals allowed
    const double l11 = std::sqrt(std::max(k11, 0.0));
    const double l21 = l11 > 0.0 ? k12 / l11 : 0.0;
    const double l22 = std::sqrt(std::max(k22 - l21 * l21, 0.0));

    double sum = 0.0, sum_sq = 0.0;
    for (std::int64_t i = 0; i < n_samples; ++i) {
        const double z1 = stream.gaussian();
        const double z2 = stream.gaussian();
        const double u = l11 * z1;
        const double v = l21 * z1 + l22 * z2;
        const double fu = derivative ? activation_derivative(act, u) : apply_activation(act, u);
        const double fv = derivative ? activation_derivative(act, v) : apply_activation(act, v);
        const double prod = fu * fv;
        sum += prod;
        sum_sq += prod * prod;
    }
    const double n = static_cast<double>(n_samples);
    const double mean = sum / n;
    const double var = std::max(sum_sq / n - mean * mean, 0.0);
    return McEstimate{mean, std::sqrt(var / n)};
}

// ---------------------------------------------------------------------------
// Layerwise recursion
// ---------------------------------------------------------------------------

struct KernelPair {
    Matrix nngp;  // output-law kernel of f at the final layer
    Matrix ntk;   // tangent kernel at the final layer
};

// Scalar kernels over the points of x1 (rows) and x2: depth and activation
// come from the architecture, hidden widths are never read.
inline KernelPair nngp_ntk(const MlpArchitecture& arch, const Matrix& x1, const Matrix& x2) {
    arch.validate();
    if (x1.cols() != arch.input_dim || x2.cols() != arch.input_dim)
        throw std::invalid_argument("nngp_ntk: input dimension mismatch");
    if (arch.activation != Activation::erf && arch.activation != Activation::relu)
        throw std::invalid_argument("nngp_ntk: unsupported activation");

    const double sw2 = arch.sigma_w * arch.sigma_w;
    const double sb2 = arch.sigma_b * arch.sigma_b;
    const double inv_d = 1.0 / static_cast<double>(arch.input_dim);
    const Eigen::Index n1 = x1.rows(), n2 = x2.rows();

    // First preactivation covariance. Dot products run in fixed index order
    // so k(x, x') and k(x', x) are bitwise equal.
    Matrix cross(n1, n2);
    for (Eigen::Index i = 0; i < n1; ++i) {
        for (Eigen::Index j = 0; j < n2; ++j) {
            double dot = 0.0;
            for (Eigen::Index k = 0; k < x1.cols(); ++k) dot += x1(i, k) * x2(j, k);
            cross(i, j) = sw2 * inv_d * dot + sb2;
        }
    }
    Vector diag1(n1), diag2(n2);
    for (Eigen::Index i = 0; i < n1; ++i) {
        double dot = 0.0;
        for (Eigen::Index k = 0; k < x1.cols(); ++k) dot += x1(i, k) * x1(i, k);
        diag1[i] = sw2 * inv_d * dot + sb2;
    }
    for (Eigen::Index j = 0; j < n2; ++j) {
        double dot = 0.0;
        for (Eigen::Index k = 0; k < x2.cols(); ++k) dot += x2(j, k) * x2(j, k);
        diag2[j] = sw2 * inv_d * dot + sb2;
    }

    Matrix theta = cross;
    for (int l = 0; l < arch.depth(); ++l) {
        Matrix next_cross(n1, n2);
        Matrix deriv(n1, n2);
        parallel_for(static_cast<std::size_t>(n1), [&](std::size_t i) {
            for (Eigen::Index j = 0; j < n2; ++j) {
                const double k11 = diag1[static_cast<Eigen::Index>(i)];
                const double k12 = cross(static_cast<Eigen::Index>(i), j);
                const double k22 = diag2[j];
                next_cross(static_cast<Eigen::Index>(i), j) =
                    sw2 * pair_expectation(arch.activation, false, k11, k12, k22) + sb2;
                deriv(static_cast<Eigen::Index>(i), j) =
                    sw2 * pair_expectation(arch.activation, true, k11, k12, k22);
            }
        });
        Vector next_diag1(n1), next_diag2(n2);
        for (Eigen::Index i = 0; i < n1; ++i)
            next_diag1[i] = sw2 * pair_expectation(arch.activation, false,
                                                   diag1[i], diag1[i], diag1[i]) + sb2;
        for (Eigen::Index j = 0; j < n2; ++j)
            next_diag2[j] = sw2 * pair_expectation(arch.activation, false,
                                                   diag2[j], diag2[j], diag2[j]) + sb2;

        theta = next_cross + theta.cwiseProduct(deriv);
        cross = std::move(next_cross);
        diag1 = std::move(next_diag1);
        diag2 = std::move(next_diag2);
    }
    return KernelPair{std::move(cross), std::move(theta)};
}

// Below-readout residual: ntk - nngp, entrywise. On square blocks the result
// must be PSD to 1e-8; a violation signals a recursion bug and is fatal.
inline Matrix residual_kernel(const Matrix& ntk, const Matrix& nngp) {
    if (ntk.rows() != nngp.rows() || ntk.cols() != nngp.cols())
        throw std::invalid_argument("residual_kernel: shape mismatch");
    Matrix res = ntk - nngp;
    if (res.rows() == res.cols() && res.rows() > 0) {
        const double lo = min_eig(res);
        if (lo < -1e-8) {
            std::ostringstream os;
            os << "residual_kernel: ntk - nngp has min eigenvalue " << lo
               << ", below the -1e-8 PSD tolerance";
            throw std::runtime_error(os.str());
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Quad-precision recursion
//
// Double-precision kernel Gram matrices carry ~1e-16-relative noise, which a
// generalised inverse amplifies; the noiseless predictive laws downstream
// need kernels whose rounding floor sits below every genuine eigenvalue, so
// the same recursion is available with __float128 arithmetic. Matrix sizes in
// those code paths are small, making the software-quad cost negligible.
// ---------------------------------------------------------------------------

namespace hq {

using highprec::quad;

inline quad pi() {
    static const quad value = acosq(quad(-1));
    return value;
}

inline quad clamp_cos(quad c) {
    const quad lim = quad(1) - quad(1e-12);
    return c < -lim ? -lim : (c > lim ? lim : c);
}

inline quad pair_expectation(Activation act, bool derivative, quad k11, quad k12, quad k22) {
    if (act == Activation::erf) {
        if (!derivative) {
            const quad denom = sqrtq((quad(1) + 2 * k11) * (quad(1) + 2 * k22));
            return quad(2) / pi() * asinq(clamp_cos(2 * k12 / denom));
        }
        const quad det = (quad(1) + 2 * k11) * (quad(1) + 2 * k22) - 4 * k12 * k12;
        return quad(4) / pi() / sqrtq(det > quad(0) ? det : quad(1e-300));
    }
    const quad scale = sqrtq(k11 * k22);
    if (!(scale > quad(0))) return quad(0);
    const quad gamma = acosq(clamp_cos(k12 / scale));
    if (derivative) return (pi() - gamma) / (quad(2) * pi());
    return scale / (quad(2) * pi()) * (sinq(gamma) + (pi() - gamma) * cosq(gamma));
}

} // namespace hq

struct QuadKernelPair {
    highprec::QMat nngp;
    highprec::QMat ntk;
};

inline QuadKernelPair nngp_ntk_quad(const MlpArchitecture& arch, const Matrix& x1,
                                    const Matrix& x2) {
    arch.validate();
    if (x1.cols() != arch.input_dim || x2.cols() != arch.input_dim)
        throw std::invalid_argument("nngp_ntk_quad: input dimension mismatch");
    using highprec::QMat;
    using highprec::quad;

    const quad sw2 = quad(arch.sigma_w) * quad(arch.sigma_w);
    const quad sb2 = quad(arch.sigma_b) * quad(arch.sigma_b);
    const quad inv_d = quad(1) / quad(arch.input_dim);
    const int n1 = static_cast<int>(x1.rows()), n2 = static_cast<int>(x2.rows());

    QMat cross(n1, n2);
    std::vector<quad> diag1(static_cast<std::size_t>(n1)), diag2(static_cast<std::size_t>(n2));
    for (int i = 0; i < n1; ++i) {
        quad dot = 0;
        for (Eigen::Index k = 0; k < x1.cols(); ++k) dot += quad(x1(i, k)) * quad(x1(i, k));
        diag1[static_cast<std::size_t>(i)] = sw2 * inv_d * dot + sb2;
    }
    for (int j = 0; j < n2; ++j) {
        quad dot = 0;
        for (Eigen::Index k = 0; k < x2.cols(); ++k) dot += quad(x2(j, k)) * quad(x2(j, k));
        diag2[static_cast<std::size_t>(j)] = sw2 * inv_d * dot + sb2;
    }
    for (int i = 0; i < n1; ++i)
        for (int j = 0; j < n2; ++j) {
            quad dot = 0;
            for (Eigen::Index k = 0; k < x1.cols(); ++k) dot += quad(x1(i, k)) * quad(x2(j, k));
            cross.at(i, j) = sw2 * inv_d * dot + sb2;
        }

    QMat theta = cross;
    for (int l = 0; l < arch.depth(); ++l) {
        QMat next(n1, n2), deriv(n1, n2);
        for (int i = 0; i < n1; ++i)
            for (int j = 0; j < n2; ++j) {
                const quad k11 = diag1[static_cast<std::size_t>(i)];
                const quad k12 = cross.at(i, j);
                const quad k22 = diag2[static_cast<std::size_t>(j)];
                next.at(i, j) = sw2 * hq::pair_expectation(arch.activation, false,
                                                           k11, k12, k22) + sb2;
                deriv.at(i, j) = sw2 * hq::pair_expectation(arch.activation, true,
                                                            k11, k12, k22);
            }
        std::vector<quad> nd1(diag1.size()), nd2(diag2.size());
        for (std::size_t i = 0; i < diag1.size(); ++i)
            nd1[i] = sw2 * hq::pair_expectation(arch.activation, false, diag1[i], diag1[i],
                                                diag1[i]) + sb2;
        for (std::size_t j = 0; j < diag2.size(); ++j)
            nd2[j] = sw2 * hq::pair_expectation(arch.activation, false, diag2[j], diag2[j],
                                                diag2[j]) + sb2;
        for (int i = 0; i < n1; ++i)
            for (int j = 0; j < n2; ++j)
                theta.at(i, j) = next.at(i, j) + theta.at(i, j) * deriv.at(i, j);
        cross = next;
        diag1 = std::move(nd1);
        diag2 = std::move(nd2);
    }
    return QuadKernelPair{std::move(cross), std::move(theta)};
}

// Lifts a scalar kernel over points to C output channels, point-major
// indexing (row i*C + c). Channels are independent and identical, so the
// lift is block-diagonal in the channel pair.
inline Matrix block_lift(const Matrix& scalar_kernel, int channels) {
    if (channels < 1) throw std::invalid_argument("block_lift: channels must be >= 1");
    if (channels == 1) return scalar_kernel;
    Matrix lifted = Matrix::Zero(scalar_kernel.rows() * channels,
                                 scalar_kernel.cols() * channels);
    for (Eigen::Index i = 0; i < scalar_kernel.rows(); ++i)
        for (Eigen::Index j = 0; j < scalar_kernel.cols(); ++j)
            for (int c = 0; c < channels; ++c)
                lifted(i * channels + c, j * channels + c) = scalar_kernel(i, j);
    return lifted;
}

} // namespace ntkgp
