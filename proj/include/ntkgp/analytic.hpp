// End-to-end analytic predictive laws: kernels and posterior algebra in one
// call. The sigma^2 = 0 laws run the kernel recursion and the generalised
// inverse in quad precision so the covariance orderings between methods are
// certified down to the stated tolerances; sigma^2 > 0 systems are well
// conditioned and use the double-precision path.

#pragma once

#include "ntkgp/gp.hpp"
#include "ntkgp/kernels.hpp"

namespace ntkgp {

inline GaussianPredictive analytic_predictive(const MlpArchitecture& arch,
                                              const Matrix& x_train, const Matrix& x_test,
                                              const Vector& y, PredictiveMethod method,
                                              double sigma2) {
    MlpArchitecture karch = arch;
    karch.output_dim = 1;
    if (y.size() != x_train.rows())
        throw std::invalid_argument(
            "analytic_predictive: scalar-output law; y must have one entry per train point");

    if (sigma2 > 0.0) {
        const KernelPair train = nngp_ntk(karch, x_train, x_train);
        const KernelPair cross = nngp_ntk(karch, x_test, x_train);
        const KernelPair test = nngp_ntk(karch, x_test, x_test);
        const KernelBlocks nngp{test.nngp, cross.nngp, train.nngp};
        const KernelBlocks ntk{test.ntk, cross.ntk, train.ntk};
        return predictive_table(method, nngp, ntk, y, sigma2);
    }

    const QuadKernelPair train = nngp_ntk_quad(karch, x_train, x_train);
    const QuadKernelPair cross = nngp_ntk_quad(karch, x_test, x_train);
    const QuadKernelPair test = nngp_ntk_quad(karch, x_test, x_test);
    const detail::QuadBlocks nq{test.nngp, highprec::transpose(cross.nngp), train.nngp};
    const detail::QuadBlocks tq{test.ntk, highprec::transpose(cross.ntk), train.ntk};
    return detail::noiseless_predictive(method, nq, tq, y);
}

} // namespace ntkgp
