// Dense linear-algebra substrate and deterministic RNG streams.
//
// Matrices are Eigen-backed; every routine here is pure and reentrant.
// All randomness in the project flows through RngStream, a counter-based
// SplitMix64 generator: a stream is fully determined by its (seed, counter)
// state and substreams are derived by counter splitting, so results never
// depend on thread scheduling.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ntkgp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// RngStream
// ---------------------------------------------------------------------------

class RngStream {
public:
    explicit RngStream(std::uint64_t seed, std::uint64_t counter = 0)
        : seed_(seed), counter_(counter) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64() {
        std::uint64_t z = seed_ + 0x9E3779B97F4A7C15ULL * ++counter_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // uniform on (0, 1]; never returns 0 so log() below is safe
    double uniform() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    // Box-Muller; draws two uniforms per call, no cached spare, so the
    // (seed, counter) state alone determines every future draw.
    double gaussian() {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    // Independent stream derived by key; shares no counter range with *this.
    RngStream substream(std::uint64_t key) const {
        std::uint64_t z = seed_ ^ (0xD1B54A32D192ED03ULL * (key + 1));
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return RngStream(z ^ (z >> 31));
    }

private:
    std::uint64_t seed_;
    std::uint64_t counter_;
};

inline Matrix gaussian_matrix(RngStream& stream, Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    // row-major fill order, pinned so (seed, counter) reproduces the array
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            m(i, j) = stream.gaussian();
    return m;
}

inline Vector gaussian_vector(RngStream& stream, Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = stream.gaussian();
    return v;
}

// ---------------------------------------------------------------------------
// Symmetric solves and eigenvalues
// ---------------------------------------------------------------------------

inline void require_square(const Matrix& a, const char* what) {
    if (a.rows() != a.cols()) {
        std::ostringstream os;
        os << what << ": matrix is " << a.rows() << "x" << a.cols() << ", expected square";
        throw std::invalid_argument(os.str());
    }
}

inline void require_symmetric(const Matrix& a, const char* what, double rel_tol = 1e-10) {
    require_square(a, what);
    const double scale = std::max(a.cwiseAbs().maxCoeff(), 1.0);
    const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
    if (asym > rel_tol * scale) {
        std::ostringstream os;
        os << what << ": matrix not symmetric (max asymmetry " << asym << ")";
        throw std::invalid_argument(os.str());
    }
}

inline Matrix symmetrize(const Matrix& a) {
    return 0.5 * (a + a.transpose());
}

// Jitter used whenever a noiseless kernel matrix must be inverted:
// 1e-8 relative to the mean diagonal.
inline double default_jitter(const Matrix& a) {
    require_square(a, "default_jitter");
    const double mean_diag = a.diagonal().cwiseAbs().mean();
    return 1e-8 * std::max(mean_diag, 1e-8);
}

// Solves (A + jitter*I) X = B for symmetric A via LDL^T.
inline Matrix sym_solve(const Matrix& a, const Matrix& b, double jitter = 0.0) {
    require_symmetric(a, "sym_solve");
    if (a.rows() != b.rows())
        throw std::invalid_argument("sym_solve: rhs row count does not match system size");
    if (jitter < 0.0)
        throw std::invalid_argument("sym_solve: jitter must be non-negative");

    Matrix sys = a;
    sys.diagonal().array() += jitter;
    Eigen::LDLT<Matrix> ldlt(sys);
    const double min_pivot = ldlt.vectorD().minCoeff();
    if (ldlt.info() != Eigen::Success || !(min_pivot > 0.0)) {
        std::ostringstream os;
        os << "sym_solve: indefinite system after jitter " << jitter
           << " (smallest pivot " << min_pivot << ")";
        throw std::runtime_error(os.str());
    }
    return ldlt.solve(b);
}

inline double min_eig(const Matrix& a) {
    require_square(a, "min_eig");
    if (a.rows() == 0) throw std::invalid_argument("min_eig: empty matrix");
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(a), Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("min_eig: eigensolver failed to converge");
    return es.eigenvalues().minCoeff();
}

// Lower Cholesky factor of a PSD matrix after adding `jitter` to the diagonal.
inline Matrix psd_sqrt(const Matrix& a, double jitter) {
    require_symmetric(a, "psd_sqrt", 1e-8);
    Matrix sys = symmetrize(a);
    sys.diagonal().array() += jitter;
    Eigen::LLT<Matrix> llt(sys);
    if (llt.info() != Eigen::Success) {
        std::ostringstream os;
        os << "psd_sqrt: matrix indefinite after jitter " << jitter;
        throw std::runtime_error(os.str());
    }
    return llt.matrixL();
}

// ---------------------------------------------------------------------------
// Bounded task parallelism
// ---------------------------------------------------------------------------

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is owned
// by exactly one worker; fn must only write state owned by its index.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                         unsigned threads = 0) {
    if (n == 0) return;
    unsigned hw = threads ? threads : std::max(1u, std::thread::hardware_concurrency());
    hw = static_cast<unsigned>(std::min<std::size_t>(hw, n));
    if (hw <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(hw);
    std::exception_ptr first_error;
    std::mutex error_mutex;
    for (unsigned t = 0; t < hw; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < n; i += hw) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace ntkgp
