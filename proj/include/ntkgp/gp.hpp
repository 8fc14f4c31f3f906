// Analytic predictive distributions of wide trained ensembles.
//
// predictive_table evaluates the four method laws (final-layer-only
// training, standard deep ensembles, randomised priors, and the
// tangent-kernel posterior); trained_covariance evaluates the general
// trained-ensemble covariance for an arbitrary initial-law kernel k, of
// which the table's covariance rows are special cases.
//
// Noise handling: sigma^2 > 0 systems are well conditioned and solved with
// a cached double-precision LDL^T. sigma^2 = 0 replaces the inverse with a
// generalised inverse, evaluated in quad precision (highprec.hpp) because
// the collapse identities between the table rows would otherwise drown in
// the 1/lambda_min amplification of near-singular kernel Gram matrices.

#pragma once

#include "ntkgp/highprec.hpp"
#include "ntkgp/numerics.hpp"

#include <optional>
#include <stdexcept>

namespace ntkgp {

struct GaussianPredictive {
    Vector mean;  // |X'| * C
    Matrix cov;   // (|X'| * C)^2

    void validate(double tol = 1e-8) const {
        require_symmetric(cov, "GaussianPredictive", 1e-8);
        if (mean.size() != cov.rows())
            throw std::invalid_argument("GaussianPredictive: mean/cov size mismatch");
        const double lo = min_eig(cov);
        const double scale = std::max(1.0, cov.diagonal().cwiseAbs().maxCoeff());
        if (lo < -tol * scale)
            throw std::runtime_error("GaussianPredictive: covariance is indefinite");
    }
};

enum class PredictiveMethod { nngp, deep_ensemble, randomised_prior, ntkgp };

// Kernel evaluated on the three index-set pairs a posterior needs.
struct KernelBlocks {
    Matrix test_test;    // k(X', X')
    Matrix test_train;   // k(X', X)
    Matrix train_train;  // k(X, X)

    void validate() const {
        require_symmetric(train_train, "KernelBlocks.train_train");
        require_symmetric(test_test, "KernelBlocks.test_test");
        if (test_train.rows() != test_test.rows() ||
            test_train.cols() != train_train.rows())
            throw std::invalid_argument("KernelBlocks: inconsistent shapes");
    }
};

namespace detail {

using highprec::QMat;

// noisy-system solver: one cached LDL^T of (train_train + sigma^2 I)
class NoisySolver {
public:
    NoisySolver(const Matrix& train_train, double sigma2) {
        Matrix sys = symmetrize(train_train);
        sys.diagonal().array() += sigma2;
        ldlt_.compute(sys);
        if (ldlt_.info() != Eigen::Success || !(ldlt_.vectorD().minCoeff() > 0.0))
            throw std::runtime_error("predictive: train kernel matrix is indefinite");
    }
    Matrix solve(const Matrix& rhs) const { return ldlt_.solve(rhs); }

private:
    Eigen::LDLT<Matrix> ldlt_;
};

struct QuadBlocks {
    QMat test_test, test_train_t /* N x M */, train_train;
    static QuadBlocks from(const KernelBlocks& k) {
        return {QMat::from(k.test_test), QMat::from(Matrix(k.test_train.transpose())),
                QMat::from(k.train_train)};
    }
};

// Sigma = k_tt + m^T k_XX m - (m^T k_Xt + h.c.), assembled in quad
inline Matrix three_term_cov(const QuadBlocks& k, const QMat& m) {
    QMat mid = highprec::multiply(highprec::transpose(m),
                                  highprec::multiply(k.train_train, m));
    QMat cross = highprec::multiply(highprec::transpose(m), k.test_train_t);
    QMat sigma = highprec::add(k.test_test, mid);
    sigma = highprec::add(sigma, cross, highprec::quad(-1));
    sigma = highprec::add(sigma, highprec::transpose(cross), highprec::quad(-1));
    return symmetrize(sigma.to_double());
}

// Sigma = k_tt - k_tX m, assembled in quad
inline Matrix two_term_cov(const QuadBlocks& k, const QMat& m) {
    QMat sub = highprec::multiply(highprec::transpose(k.test_train_t), m);
    return symmetrize(highprec::add(k.test_test, sub, highprec::quad(-1)).to_double());
}

inline Vector quad_mean(const QMat& m, const Vector& y) {
    QMat ym = QMat::from(Matrix(y));
    return highprec::multiply(highprec::transpose(m), ym).to_double().col(0);
}

// sigma^2 = 0 table rows through the generalised inverse, entirely in quad
inline GaussianPredictive noiseless_predictive(PredictiveMethod method, const QuadBlocks& nq,
                                               const QuadBlocks& tq, const Vector& y) {
    GaussianPredictive out;
    switch (method) {
        case PredictiveMethod::nngp: {
            const highprec::PinvSolver ksolve(nq.train_train);
            const QMat b = ksolve.apply(nq.test_train_t);
            out.mean = quad_mean(b, y);
            out.cov = two_term_cov(nq, b);
            break;
        }
        case PredictiveMethod::ntkgp: {
            const highprec::PinvSolver tsolve(tq.train_train);
            const QMat a = tsolve.apply(tq.test_train_t);
            out.mean = quad_mean(a, y);
            out.cov = two_term_cov(tq, a);
            break;
        }
        case PredictiveMethod::deep_ensemble: {
            const highprec::PinvSolver tsolve(tq.train_train);
            const QMat a = tsolve.apply(tq.test_train_t);
            out.mean = quad_mean(a, y);
            out.cov = three_term_cov(nq, a);
            break;
        }
        default:
            throw std::invalid_argument("noiseless_predictive: unsupported method");
    }
    return out;
}

} // namespace detail

// General trained-ensemble covariance for initial-law kernel k and tangent
// kernel theta, at zero output noise:
//   Sigma = k_tt + M k_XX M^T - (M k_Xt + h.c.),   M = Theta_tX Theta_XX^+
inline Matrix trained_covariance(const KernelBlocks& k, const KernelBlocks& theta) {
    k.validate();
    theta.validate();
    if (k.test_test.rows() != theta.test_test.rows() ||
        k.train_train.rows() != theta.train_train.rows())
        throw std::invalid_argument("trained_covariance: k/theta index sets differ");

    const highprec::PinvSolver solver(theta.train_train);
    const detail::QuadBlocks tq = detail::QuadBlocks::from(theta);
    const detail::QuadBlocks kq = detail::QuadBlocks::from(k);
    const detail::QMat m = solver.apply(tq.test_train_t);  // N x M
    return detail::three_term_cov(kq, m);
}

// The predictive-law table. nngp/ntk are the two analytic kernels on the
// same (train, test) index sets; y is the point-major training target
// vector. Output-noise compatibility: deep_ensemble needs sigma2 == 0,
// randomised_prior needs sigma2 > 0.
inline GaussianPredictive predictive_table(PredictiveMethod method,
                                           const KernelBlocks& nngp,
                                           const KernelBlocks& ntk,
                                           const Vector& y, double sigma2) {
    nngp.validate();
    ntk.validate();
    if (y.size() != nngp.train_train.rows())
        throw std::invalid_argument("predictive_table: target length mismatch");
    if (sigma2 < 0.0)
        throw std::invalid_argument("predictive_table: sigma2 must be >= 0");
    if (method == PredictiveMethod::deep_ensemble && sigma2 != 0.0)
        throw std::invalid_argument(
            "predictive_table: deep_ensemble law requires sigma2 == 0");
    if (method == PredictiveMethod::randomised_prior && !(sigma2 > 0.0))
        throw std::invalid_argument(
            "predictive_table: randomised_prior law requires sigma2 > 0");

    GaussianPredictive out;

    if (sigma2 > 0.0) {
        if (method == PredictiveMethod::nngp) {
            const detail::NoisySolver ksolve(nngp.train_train, sigma2);
            const Matrix b = ksolve.solve(Matrix(nngp.test_train.transpose()));  // N x M
            out.mean = b.transpose() * y;
            out.cov = symmetrize(nngp.test_test - nngp.test_train * b);
            return out;
        }
        const detail::NoisySolver tsolve(ntk.train_train, sigma2);
        const Matrix a = tsolve.solve(Matrix(ntk.test_train.transpose()));  // N x M
        out.mean = a.transpose() * y;
        switch (method) {
            case PredictiveMethod::ntkgp:
                out.cov = ntk.test_test - ntk.test_train * a;
                break;
            case PredictiveMethod::randomised_prior: {
                Matrix mid = nngp.train_train;
                mid.diagonal().array() += sigma2;
                out.cov = nngp.test_test + a.transpose() * (mid * a);
                const Matrix cross = nngp.test_train * a;
                out.cov -= cross + cross.transpose();
                break;
            }
            default:
                throw std::invalid_argument("predictive_table: unknown method");
        }
        out.cov = symmetrize(out.cov);
        return out;
    }

    // sigma^2 = 0: generalised inverse in quad precision
    return detail::noiseless_predictive(method, detail::QuadBlocks::from(nngp),
                                        detail::QuadBlocks::from(ntk), y);
}

// Smallest eigenvalue of (sigma_a - sigma_b): the conservatism ordering of
// two predictive covariances is certified when this is >= -1e-8.
inline double psd_order(const Matrix& sigma_a, const Matrix& sigma_b) {
    if (sigma_a.rows() != sigma_b.rows() || sigma_a.cols() != sigma_b.cols())
        throw std::invalid_argument("psd_order: shape mismatch");
    require_symmetric(sigma_a, "psd_order", 1e-8);
    require_symmetric(sigma_b, "psd_order", 1e-8);
    return min_eig(symmetrize(sigma_a - sigma_b));
}

inline Vector gp_sample(const GaussianPredictive& pred, RngStream& stream) {
    if (pred.cov.cwiseAbs().maxCoeff() == 0.0) return pred.mean;
    const Matrix root = psd_sqrt(pred.cov, default_jitter(pred.cov));
    return pred.mean + root * gaussian_vector(stream, pred.mean.size());
}

} // namespace ntkgp
