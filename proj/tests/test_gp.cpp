#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ntkgp/gp.hpp"
#include "ntkgp/kernels.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace ntkgp;

namespace {

MlpArchitecture toy_arch() {
    MlpArchitecture arch;
    arch.input_dim = 1;
    arch.hidden_widths = {64, 64};
    arch.output_dim = 1;
    arch.activation = Activation::erf;
    arch.sigma_w = 1.5;
    arch.sigma_b = 0.05;
    return arch;
}

struct ToySetup {
    Matrix x_train, x_test;
    Vector y;
    KernelBlocks nngp, ntk;
};

ToySetup toy_setup(int n_train = 20, int n_test = 30) {
    ToySetup s;
    s.x_train = Matrix(n_train, 1);
    for (int i = 0; i < n_train; ++i) {
        const double t = static_cast<double>(i) / (n_train - 1);
        s.x_train(i, 0) = i < n_train / 2 ? -6.0 + 8.0 * t : -2.0 + 8.0 * t;
    }
    s.x_test = Matrix(n_test, 1);
    for (int i = 0; i < n_test; ++i)
        s.x_test(i, 0) = -9.0 + 18.0 * i / (n_test - 1);
    s.y = Vector(n_train);
    for (int i = 0; i < n_train; ++i)
        s.y[i] = s.x_train(i, 0) * std::sin(s.x_train(i, 0));

    const MlpArchitecture arch = toy_arch();
    const KernelPair train = nngp_ntk(arch, s.x_train, s.x_train);
    const KernelPair cross = nngp_ntk(arch, s.x_test, s.x_train);
    const KernelPair test = nngp_ntk(arch, s.x_test, s.x_test);
    s.nngp = KernelBlocks{test.nngp, cross.nngp, train.nngp};
    s.ntk = KernelBlocks{test.ntk, cross.ntk, train.ntk};
    return s;
}

} // namespace

TEST_CASE("trained_covariance: k = theta collapses to the tangent posterior") {
    const ToySetup s = toy_setup();
    const Matrix collapsed = trained_covariance(s.ntk, s.ntk);
    const GaussianPredictive post =
        predictive_table(PredictiveMethod::ntkgp, s.nngp, s.ntk, s.y, 0.0);
    CHECK((collapsed - post.cov).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("trained_covariance: vanishes on the training set for any k") {
    const MlpArchitecture arch = toy_arch();
    ToySetup s = toy_setup();
    const KernelPair train = nngp_ntk(arch, s.x_train, s.x_train);
    const KernelBlocks nngp_on_train{train.nngp, train.nngp, train.nngp};
    const KernelBlocks ntk_on_train{train.ntk, train.ntk, train.ntk};
    const Matrix sigma = trained_covariance(nngp_on_train, ntk_on_train);
    CHECK(sigma.cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("trained_covariance: k = nngp equals the deep-ensembles law") {
    const ToySetup s = toy_setup();
    const Matrix via_eq = trained_covariance(s.nngp, s.ntk);
    const GaussianPredictive de =
        predictive_table(PredictiveMethod::deep_ensemble, s.nngp, s.ntk, s.y, 0.0);
    CHECK((via_eq - de.cov).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("predictive_table: noiseless tangent posterior interpolates") {
    const MlpArchitecture arch = toy_arch();
    ToySetup s = toy_setup();
    const KernelPair train = nngp_ntk(arch, s.x_train, s.x_train);
    const KernelBlocks nngp_on_train{train.nngp, train.nngp, train.nngp};
    const KernelBlocks ntk_on_train{train.ntk, train.ntk, train.ntk};
    const GaussianPredictive p =
        predictive_table(PredictiveMethod::ntkgp, nngp_on_train, ntk_on_train, s.y, 0.0);
    CHECK((p.mean - s.y).cwiseAbs().maxCoeff() < 1e-4);  // jitter-limited
    CHECK(p.cov.cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("predictive_table: scalar linear-kernel hand case") {
    // one training point x = 1 with k(x, x') = x x', y = 2, sigma2 = 1:
    // mu(3) = 3 * (1 / (1 + 1)) * 2 = 3
    KernelBlocks k;
    k.train_train = Matrix::Constant(1, 1, 1.0);
    k.test_train = Matrix::Constant(1, 1, 3.0);
    k.test_test = Matrix::Constant(1, 1, 9.0);
    Vector y = Vector::Constant(1, 2.0);
    const GaussianPredictive p = predictive_table(PredictiveMethod::ntkgp, k, k, y, 1.0);
    CHECK(p.mean[0] == doctest::Approx(3.0).epsilon(1e-12));
    // Sigma(3,3) = 9 - 3 * (1/2) * 3 = 4.5
    CHECK(p.cov(0, 0) == doctest::Approx(4.5).epsilon(1e-12));
}

TEST_CASE("predictive_table: large-noise limit reverts to the prior") {
    const ToySetup s = toy_setup();
    const double sigma2 = 1e6;
    const GaussianPredictive p =
        predictive_table(PredictiveMethod::ntkgp, s.nngp, s.ntk, s.y, sigma2);
    CHECK(p.mean.cwiseAbs().maxCoeff() < 1e-3);
    const double rel = (p.cov - s.ntk.test_test).norm() / s.ntk.test_test.norm();
    CHECK(rel < 1e-3);
}

TEST_CASE("predictive_table: equal kernels collapse deep ensembles onto the posterior") {
    const ToySetup s = toy_setup();
    const GaussianPredictive de =
        predictive_table(PredictiveMethod::deep_ensemble, s.ntk, s.ntk, s.y, 0.0);
    const GaussianPredictive post =
        predictive_table(PredictiveMethod::ntkgp, s.ntk, s.ntk, s.y, 0.0);
    CHECK((de.mean - post.mean).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((de.cov - post.cov).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("predictive_table: method / sigma2 compatibility") {
    const ToySetup s = toy_setup(6, 4);
    CHECK_THROWS_AS(
        predictive_table(PredictiveMethod::deep_ensemble, s.nngp, s.ntk, s.y, 0.1),
        std::invalid_argument);
    CHECK_THROWS_AS(
        predictive_table(PredictiveMethod::randomised_prior, s.nngp, s.ntk, s.y, 0.0),
        std::invalid_argument);
    CHECK_THROWS_AS(predictive_table(PredictiveMethod::ntkgp, s.nngp, s.ntk, s.y, -1.0),
                    std::invalid_argument);
}

TEST_CASE("mean agreement across the trained-all-layers rows") {
    const ToySetup s = toy_setup();
    const GaussianPredictive rp =
        predictive_table(PredictiveMethod::randomised_prior, s.nngp, s.ntk, s.y, 0.01);
    const GaussianPredictive gp_noisy =
        predictive_table(PredictiveMethod::ntkgp, s.nngp, s.ntk, s.y, 0.01);
    CHECK((rp.mean - gp_noisy.mean).cwiseAbs().maxCoeff() < 1e-10);

    const GaussianPredictive de =
        predictive_table(PredictiveMethod::deep_ensemble, s.nngp, s.ntk, s.y, 0.0);
    const GaussianPredictive gp_clean =
        predictive_table(PredictiveMethod::ntkgp, s.nngp, s.ntk, s.y, 0.0);
    CHECK((de.mean - gp_clean.mean).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("every predictive law yields a PSD covariance") {
    const ToySetup s = toy_setup();
    for (double sigma2 : {0.0, 0.01}) {
        for (PredictiveMethod m : {PredictiveMethod::nngp, PredictiveMethod::deep_ensemble,
                                   PredictiveMethod::randomised_prior, PredictiveMethod::ntkgp}) {
            if (m == PredictiveMethod::deep_ensemble && sigma2 != 0.0) continue;
            if (m == PredictiveMethod::randomised_prior && sigma2 == 0.0) continue;
            const GaussianPredictive p = predictive_table(m, s.nngp, s.ntk, s.y, sigma2);
            CHECK_NOTHROW(p.validate());
        }
    }
}

TEST_CASE("conservatism ordering of the covariance rows") {
    const ToySetup s = toy_setup(20, 50);

    const GaussianPredictive nngp0 =
        predictive_table(PredictiveMethod::nngp, s.nngp, s.ntk, s.y, 0.0);
    const GaussianPredictive de =
        predictive_table(PredictiveMethod::deep_ensemble, s.nngp, s.ntk, s.y, 0.0);
    const GaussianPredictive ntkgp0 =
        predictive_table(PredictiveMethod::ntkgp, s.nngp, s.ntk, s.y, 0.0);
    CHECK(psd_order(ntkgp0.cov, de.cov) >= -1e-8);
    CHECK(psd_order(de.cov, nngp0.cov) >= -1e-8);

    const double sigma2 = 0.01;
    const GaussianPredictive nngp1 =
        predictive_table(PredictiveMethod::nngp, s.nngp, s.ntk, s.y, sigma2);
    const GaussianPredictive rp =
        predictive_table(PredictiveMethod::randomised_prior, s.nngp, s.ntk, s.y, sigma2);
    const GaussianPredictive ntkgp1 =
        predictive_table(PredictiveMethod::ntkgp, s.nngp, s.ntk, s.y, sigma2);
    CHECK(psd_order(ntkgp1.cov, rp.cov) >= -1e-8);
    CHECK(psd_order(rp.cov, nngp1.cov) >= -1e-8);

    CHECK(psd_order(de.cov, de.cov) == doctest::Approx(0.0).epsilon(1e-14));
    CHECK_THROWS_AS(psd_order(de.cov, Matrix::Identity(2, 2)), std::invalid_argument);
}

TEST_CASE("duplicated test points collapse to zero posterior rows") {
    const MlpArchitecture arch = toy_arch();
    ToySetup s = toy_setup();
    // test set = first three training points
    const Matrix dup = s.x_train.topRows(3);
    const KernelPair cross = nngp_ntk(arch, dup, s.x_train);
    const KernelPair test = nngp_ntk(arch, dup, dup);
    const KernelBlocks nngp{test.nngp, cross.nngp, s.nngp.train_train};
    const KernelBlocks ntk{test.ntk, cross.ntk, s.ntk.train_train};
    const GaussianPredictive p = predictive_table(PredictiveMethod::ntkgp, nngp, ntk, s.y, 0.0);
    CHECK(p.cov.cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("gp_sample: exact mean at zero covariance, moments otherwise") {
    GaussianPredictive fixed;
    fixed.mean = Vector::LinSpaced(4, -1.0, 2.0);
    fixed.cov = Matrix::Zero(4, 4);
    RngStream stream(3);
    const Vector s0 = gp_sample(fixed, stream);
    CHECK((s0.array() == fixed.mean.array()).all());

    GaussianPredictive g;
    g.mean = Vector::Constant(3, 0.5);
    Matrix a(3, 3);
    a << 2.0, 0.4, 0.1, 0.4, 1.0, -0.2, 0.1, -0.2, 0.7;
    g.cov = a;
    const int n = 10000;
    Matrix draws(n, 3);
    for (int i = 0; i < n; ++i) draws.row(i) = gp_sample(g, stream).transpose();
    const Vector mean = draws.colwise().mean();
    for (int j = 0; j < 3; ++j) {
        const double se = std::sqrt(g.cov(j, j) / n);
        CHECK(std::abs(mean[j] - g.mean[j]) < 3.0 * se);
    }
    Matrix centered = draws.rowwise() - mean.transpose();
    const Matrix cov = centered.transpose() * centered / n;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const double se = std::sqrt((g.cov(i, i) * g.cov(j, j) +
                                         g.cov(i, j) * g.cov(i, j)) / n);
            CHECK(std::abs(cov(i, j) - g.cov(i, j)) < 3.0 * se);
        }
}

TEST_CASE("randomised-prior law matches brute force over the exact linear model") {
    // deterministic feature maps; initial function f_0 = psi^T xi, xi ~ N(0, I_3)
    RngStream setup(404);
    oracles::LinearModel lm;
    lm.phi_train = gaussian_matrix(setup, 3, 4);
    lm.phi_test = gaussian_matrix(setup, 2, 4);
    lm.psi_train = gaussian_matrix(setup, 3, 3);
    lm.psi_test = gaussian_matrix(setup, 2, 3);
    lm.y = Vector(3);
    lm.y << 1.0, -0.5, 2.0;

    const KernelBlocks nngp{lm.k_test_test(), lm.k_test_train(), lm.k_train_train()};
    const KernelBlocks ntk{lm.theta_test_test(), lm.theta_test_train(), lm.theta_train_train()};

    const double sigma2 = 0.25;
    const GaussianPredictive rp =
        predictive_table(PredictiveMethod::randomised_prior, nngp, ntk, lm.y, sigma2);

    const int n = 100000;
    RngStream stream(405);
    Vector sum = Vector::Zero(2);
    Matrix outer = Matrix::Zero(2, 2);
    for (int i = 0; i < n; ++i) {
        const Vector draw = lm.draw(sigma2, stream);
        sum += draw;
        outer += draw * draw.transpose();
    }
    const Vector mean = sum / n;
    const Matrix cov = outer / n - mean * mean.transpose();

    for (int j = 0; j < 2; ++j) {
        const double se = std::sqrt(rp.cov(j, j) / n);
        CHECK(std::abs(mean[j] - rp.mean[j]) < 3.0 * se);
    }
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            const double se = std::sqrt((rp.cov(i, i) * rp.cov(j, j) +
                                         rp.cov(i, j) * rp.cov(i, j)) / n);
            CHECK(std::abs(cov(i, j) - rp.cov(i, j)) < 3.0 * se);
        }
}

TEST_CASE("deep-ensembles law matches brute force at zero noise") {
    RngStream setup(505);
    oracles::LinearModel lm;
    lm.phi_train = gaussian_matrix(setup, 3, 5);
    lm.phi_test = gaussian_matrix(setup, 2, 5);
    lm.psi_train = gaussian_matrix(setup, 3, 3);
    lm.psi_test = gaussian_matrix(setup, 2, 3);
    lm.y = Vector(3);
    lm.y << 0.3, 1.2, -0.7;

    const KernelBlocks nngp{lm.k_test_test(), lm.k_test_train(), lm.k_train_train()};
    const KernelBlocks ntk{lm.theta_test_test(), lm.theta_test_train(), lm.theta_train_train()};
    const GaussianPredictive de =
        predictive_table(PredictiveMethod::deep_ensemble, nngp, ntk, lm.y, 0.0);

    const int n = 100000;
    RngStream stream(506);
    Vector sum = Vector::Zero(2);
    Matrix outer = Matrix::Zero(2, 2);
    for (int i = 0; i < n; ++i) {
        const Vector draw = lm.draw(0.0, stream);
        sum += draw;
        outer += draw * draw.transpose();
    }
    const Vector mean = sum / n;
    const Matrix cov = outer / n - mean * mean.transpose();
    for (int j = 0; j < 2; ++j) {
        const double se = std::sqrt(std::max(de.cov(j, j), 1e-12) / n);
        CHECK(std::abs(mean[j] - de.mean[j]) < 3.0 * se + 1e-8);
    }
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            const double se = std::sqrt((de.cov(i, i) * de.cov(j, j) +
                                         de.cov(i, j) * de.cov(i, j)) / n);
            CHECK(std::abs(cov(i, j) - de.cov(i, j)) < 3.0 * se + 1e-8);
        }
}
