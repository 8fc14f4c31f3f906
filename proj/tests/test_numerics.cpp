#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ntkgp/numerics.hpp"
#include "oracles.hpp"

#include <atomic>
#include <cmath>
#include <vector>

using namespace ntkgp;

TEST_CASE("sym_solve: identity and diagonal systems are exact") {
    Matrix a = Matrix::Identity(2, 2);
    Matrix x = sym_solve(a, Matrix::Identity(2, 2), 0.0);
    CHECK(x.isApprox(Matrix::Identity(2, 2), 0.0));

    Matrix d(2, 2);
    d << 2, 0, 0, 2;
    Matrix b(2, 1);
    b << 1, 1;
    Matrix sol = sym_solve(d, b, 0.0);
    CHECK(std::abs(sol(0, 0) - 0.5) < 1e-15);
    CHECK(std::abs(sol(1, 0) - 0.5) < 1e-15);
}

TEST_CASE("sym_solve: residual below 1e-10 on random SPD systems") {
    RngStream stream(11);
    for (int rep = 0; rep < 20; ++rep) {
        const Matrix g = gaussian_matrix(stream, 5, 5);
        Matrix a = g * g.transpose();
        a.diagonal().array() += 0.5;
        const Matrix b = gaussian_matrix(stream, 5, 3);
        const Matrix x = sym_solve(a, b, 0.0);
        const double rel = (a * x - b).norm() / b.norm();
        CHECK(rel < 1e-10);
    }
}

TEST_CASE("sym_solve: rejects bad inputs") {
    Matrix indef(2, 2);
    indef << 1, 0, 0, -1;
    CHECK_THROWS_WITH_AS(sym_solve(indef, Matrix::Identity(2, 2), 0.0),
                         doctest::Contains("indefinite"), std::runtime_error);

    Matrix asym(2, 2);
    asym << 1, 2, 0, 1;
    CHECK_THROWS_AS(sym_solve(asym, Matrix::Identity(2, 2), 0.0), std::invalid_argument);

    CHECK_THROWS_AS(sym_solve(Matrix::Identity(3, 3), Matrix::Identity(2, 2), 0.0),
                    std::invalid_argument);
}

TEST_CASE("sym_solve: jitter rescues a singular PSD system") {
    Matrix a = Matrix::Zero(2, 2);
    a(0, 0) = 1.0;  // rank deficient
    CHECK_THROWS_AS(sym_solve(a, Matrix::Identity(2, 2), 0.0), std::runtime_error);
    CHECK_NOTHROW(sym_solve(a, Matrix::Identity(2, 2), 1e-8));
}

TEST_CASE("min_eig: hand cases and Jacobi oracle") {
    CHECK(min_eig(Matrix::Identity(3, 3)) == doctest::Approx(1.0).epsilon(1e-12));
    Matrix d(2, 2);
    d << 3, 0, 0, -2;
    CHECK(min_eig(d) == doctest::Approx(-2.0).epsilon(1e-12));

    RngStream stream(7);
    for (int rep = 0; rep < 10; ++rep) {
        const Matrix g = gaussian_matrix(stream, 6, 6);
        const Matrix s = symmetrize(g);
        const Vector eigs = oracles::jacobi_eigenvalues(s);
        CHECK(std::abs(min_eig(s) - eigs.minCoeff()) < 1e-8);
    }

    CHECK_THROWS_AS(min_eig(Matrix::Zero(2, 3)), std::invalid_argument);
}

TEST_CASE("rng: identical state yields identical draws") {
    RngStream a(42, 5), b(42, 5);
    Matrix ma = gaussian_matrix(a, 7, 3);
    Matrix mb = gaussian_matrix(b, 7, 3);
    CHECK((ma.array() == mb.array()).all());
    CHECK(a.counter() == b.counter());

    RngStream c(43, 5);
    CHECK(gaussian_matrix(c, 7, 3)(0, 0) != ma(0, 0));
}

TEST_CASE("rng: gaussian moments over 1e5 draws") {
    RngStream stream(123);
    const int n = 100000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double g = stream.gaussian();
        sum += g;
        sum_sq += g * g;
    }
    const double mean = sum / n;
    const double var = sum_sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("rng: split substreams are uncorrelated") {
    RngStream base(99);
    RngStream s1 = base.substream(0);
    RngStream s2 = base.substream(1);
    const int n = 100000;
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (int i = 0; i < n; ++i) {
        const double x = s1.gaussian();
        const double y = s2.gaussian();
        sx += x; sy += y; sxx += x * x; syy += y * y; sxy += x * y;
    }
    const double mx = sx / n, my = sy / n;
    const double rho = (sxy / n - mx * my) /
                       std::sqrt((sxx / n - mx * mx) * (syy / n - my * my));
    CHECK(std::abs(rho) < 0.02);

    // distinct keys give distinct streams
    CHECK(base.substream(2).next_u64() != base.substream(3).next_u64());
}

TEST_CASE("parallel_for: covers every index exactly once, any thread count") {
    const std::size_t n = 1000;
    for (unsigned threads : {1u, 2u, 4u}) {
        std::vector<std::atomic<int>> hits(n);
        parallel_for(n, [&](std::size_t i) { hits[i]++; }, threads);
        for (std::size_t i = 0; i < n; ++i) CHECK(hits[i].load() == 1);
    }
}

TEST_CASE("psd_sqrt: reproduces the matrix") {
    RngStream stream(5);
    const Matrix g = gaussian_matrix(stream, 4, 4);
    const Matrix a = g * g.transpose();
    const Matrix l = psd_sqrt(a, 0.0);
    CHECK((l * l.transpose() - a).cwiseAbs().maxCoeff() < 1e-10);
}
