// Quad-precision (__float128) kernels for the noiseless posterior algebra.
//
// Kernel Gram matrices on clustered inputs are numerically singular; the
// sigma^2 = 0 predictive identities (the Eq.-6 collapse onto the posterior
// rows, and the covariance ordering across rows) survive in floating point
// only if the generalised inverse and the covariance assembly carry more
// precision than the 1/lambda_min amplification eats. The train-side systems
// are small (tens to a few hundred rows), so software quad precision costs
// microseconds to milliseconds here. Requires GCC/clang __float128.

#pragma once

#include "ntkgp/numerics.hpp"

#include <quadmath.h>

#include <stdexcept>
#include <vector>

namespace ntkgp::highprec {

using quad = __float128;

// minimal row-major quad matrix
struct QMat {
    int rows = 0, cols = 0;
    std::vector<quad> d;

    QMat() = default;
    QMat(int r, int c) : rows(r), cols(c), d(static_cast<std::size_t>(r) * c, quad(0)) {}

    quad& at(int i, int j) { return d[static_cast<std::size_t>(i) * cols + j]; }
    quad at(int i, int j) const { return d[static_cast<std::size_t>(i) * cols + j]; }

    static QMat from(const Matrix& m) {
        QMat q(static_cast<int>(m.rows()), static_cast<int>(m.cols()));
        for (int i = 0; i < q.rows; ++i)
            for (int j = 0; j < q.cols; ++j) q.at(i, j) = quad(m(i, j));
        return q;
    }

    Matrix to_double() const {
        Matrix m(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) m(i, j) = static_cast<double>(at(i, j));
        return m;
    }
};

inline QMat multiply(const QMat& a, const QMat& b) {
    if (a.cols != b.rows) throw std::invalid_argument("highprec::multiply: shape mismatch");
    QMat c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i)
        for (int k = 0; k < a.cols; ++k) {
            const quad aik = a.at(i, k);
            if (aik == quad(0)) continue;
            for (int j = 0; j < b.cols; ++j) c.at(i, j) += aik * b.at(k, j);
        }
    return c;
}

inline QMat transpose(const QMat& a) {
    QMat t(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

inline QMat add(const QMat& a, const QMat& b, quad sb = quad(1)) {
    QMat c = a;
    for (std::size_t i = 0; i < c.d.size(); ++i) c.d[i] += sb * b.d[i];
    return c;
}

// Symmetric eigendecomposition by cyclic Jacobi rotations, in quad.
class SymmetricEigen {
public:
    explicit SymmetricEigen(const QMat& a_in) {
        n_ = a_in.rows;
        if (a_in.cols != n_) throw std::invalid_argument("highprec eigen: non-square");
        QMat a = a_in;
        for (int i = 0; i < n_; ++i)
            for (int j = i + 1; j < n_; ++j) {
                const quad s = (a.at(i, j) + a.at(j, i)) / quad(2);
                a.at(i, j) = a.at(j, i) = s;
            }
        vecs_ = QMat(n_, n_);
        for (int i = 0; i < n_; ++i) vecs_.at(i, i) = quad(1);

        quad scale = quad(0);
        for (int i = 0; i < n_; ++i)
            for (int j = 0; j < n_; ++j) scale = std::max<quad>(scale, fabsq(a.at(i, j)));
        if (scale == quad(0)) scale = quad(1);

        const quad tol = scale * quad(1e-32);
        for (int sweep = 0; sweep < 128; ++sweep) {
            quad off = quad(0);
            for (int p = 0; p < n_; ++p)
                for (int q = p + 1; q < n_; ++q) off += a.at(p, q) * a.at(p, q);
            if (sqrtq(off) < tol) break;
            for (int p = 0; p < n_; ++p) {
                for (int q = p + 1; q < n_; ++q) {
                    const quad apq = a.at(p, q);
                    if (fabsq(apq) < tol * quad(1e-4)) continue;
                    const quad theta = (a.at(q, q) - a.at(p, p)) / (quad(2) * apq);
                    const quad t = (theta >= quad(0) ? quad(1) : quad(-1)) /
                                   (fabsq(theta) + sqrtq(theta * theta + quad(1)));
                    const quad c = quad(1) / sqrtq(t * t + quad(1));
                    const quad s = t * c;
                    for (int k = 0; k < n_; ++k) {
                        const quad akp = a.at(k, p), akq = a.at(k, q);
                        a.at(k, p) = c * akp - s * akq;
                        a.at(k, q) = s * akp + c * akq;
                    }
                    for (int k = 0; k < n_; ++k) {
                        const quad apk = a.at(p, k), aqk = a.at(q, k);
                        a.at(p, k) = c * apk - s * aqk;
                        a.at(q, k) = s * apk + c * aqk;
                    }
                    for (int k = 0; k < n_; ++k) {
                        const quad vkp = vecs_.at(k, p), vkq = vecs_.at(k, q);
                        vecs_.at(k, p) = c * vkp - s * vkq;
                        vecs_.at(k, q) = s * vkp + c * vkq;
                    }
                }
            }
        }
        vals_.resize(static_cast<std::size_t>(n_));
        for (int i = 0; i < n_; ++i) vals_[static_cast<std::size_t>(i)] = a.at(i, i);
    }

    int size() const { return n_; }
    const std::vector<quad>& eigenvalues() const { return vals_; }
    const QMat& eigenvectors() const { return vecs_; }  // columns

private:
    int n_ = 0;
    QMat vecs_;
    std::vector<quad> vals_;
};

// Generalised inverse applied through the quad eigendecomposition:
// keeps every strictly positive mode of the input.
class PinvSolver {
public:
    explicit PinvSolver(const Matrix& a) : PinvSolver(QMat::from(symmetrize(a))) {}

    explicit PinvSolver(const QMat& a) : eig_(a) {
        quad lead = quad(0);
        for (quad v : eig_.eigenvalues()) lead = std::max<quad>(lead, fabsq(v));
        if (lead == quad(0))
            throw std::runtime_error("highprec pinv: zero matrix has no usable modes");
        const quad cutoff = lead * quad(eig_.size()) * quad(1e-33);
        inv_vals_.reserve(eig_.eigenvalues().size());
        for (quad v : eig_.eigenvalues())
            inv_vals_.push_back(v > cutoff ? quad(1) / v : quad(0));
    }

    QMat apply(const QMat& rhs) const {
        const QMat& u = eig_.eigenvectors();
        QMat proj = multiply(transpose(u), rhs);
        for (int i = 0; i < proj.rows; ++i)
            for (int j = 0; j < proj.cols; ++j)
                proj.at(i, j) *= inv_vals_[static_cast<std::size_t>(i)];
        return multiply(u, proj);
    }

private:
    SymmetricEigen eig_;
    std::vector<quad> inv_vals_;
};

} // namespace ntkgp::highprec
