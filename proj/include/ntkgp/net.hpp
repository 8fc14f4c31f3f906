// Finite-width MLPs under NTK and standard parameterisations: forward pass,
// reverse-mode gradients, forward-mode JVPs, the frozen additive delta
// construction, and the empirical tangent kernel.
//
// Parameter flattening order is pinned: layer-major, each layer's weight
// matrix in row-major order followed by its bias vector. Per-parameter prior
// variances (ensemble.hpp) index into this order.

#pragma once

#include "ntkgp/numerics.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace ntkgp {

enum class Activation { erf, relu };
enum class Parameterisation { ntk, standard };

inline double apply_activation(Activation act, double x) {
    switch (act) {
        case Activation::erf: return std::erf(x);
        case Activation::relu: return x > 0.0 ? x : 0.0;
    }
    throw std::invalid_argument("unknown activation");
}

// Derivative convention: relu'(0) = 0. Forward-mode duals use the same rule,
// so JVP and VJP agree exactly at kinks.
inline double activation_derivative(Activation act, double x) {
    switch (act) {
        case Activation::erf:
            return 2.0 / std::sqrt(std::numbers::pi) * std::exp(-x * x);
        case Activation::relu:
            return x > 0.0 ? 1.0 : 0.0;
    }
    throw std::invalid_argument("unknown activation");
}

// ---------------------------------------------------------------------------
// Architecture
// ---------------------------------------------------------------------------

struct MlpArchitecture {
    int input_dim = 1;
    std::vector<int> hidden_widths;   // n_1 .. n_L, L >= 1
    int output_dim = 1;
    Activation activation = Activation::erf;
    double sigma_w = 1.0;             // weight scale (sigma_w^2 is the variance knob)
    double sigma_b = 0.0;
    Parameterisation parameterisation = Parameterisation::ntk;

    int depth() const { return static_cast<int>(hidden_widths.size()); }

    // n_0 .. n_{L+1}
    std::vector<int> layer_sizes() const {
        std::vector<int> sizes;
        sizes.reserve(hidden_widths.size() + 2);
        sizes.push_back(input_dim);
        sizes.insert(sizes.end(), hidden_widths.begin(), hidden_widths.end());
        sizes.push_back(output_dim);
        return sizes;
    }

    int num_weight_layers() const { return depth() + 1; }  // W^(0) .. W^(L)

    std::int64_t param_count() const {
        const auto sizes = layer_sizes();
        std::int64_t p = 0;
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l)
            p += static_cast<std::int64_t>(sizes[l + 1]) * sizes[l] + sizes[l + 1];
        return p;
    }

    void validate() const {
        if (input_dim < 1 || output_dim < 1)
            throw std::invalid_argument("architecture: input/output dims must be >= 1");
        if (hidden_widths.empty())
            throw std::invalid_argument("architecture: at least one hidden layer required");
        for (int w : hidden_widths)
            if (w < 1) throw std::invalid_argument("architecture: widths must be >= 1");
        if (!(sigma_w > 0.0)) throw std::invalid_argument("architecture: sigma_w must be > 0");
        if (sigma_b < 0.0) throw std::invalid_argument("architecture: sigma_b must be >= 0");
    }
};

// ---------------------------------------------------------------------------
// ParamSet
// ---------------------------------------------------------------------------

struct ParamSet {
    std::vector<Matrix> weights;  // W^(l): n_{l+1} x n_l
    std::vector<Vector> biases;   // b^(l): n_{l+1}

    int num_layers() const { return static_cast<int>(weights.size()); }

    static ParamSet zeros_like(const MlpArchitecture& arch) {
        const auto sizes = arch.layer_sizes();
        ParamSet p;
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
            p.weights.push_back(Matrix::Zero(sizes[l + 1], sizes[l]));
            p.biases.push_back(Vector::Zero(sizes[l + 1]));
        }
        return p;
    }

    std::int64_t size() const {
        std::int64_t p = 0;
        for (std::size_t l = 0; l < weights.size(); ++l)
            p += weights[l].size() + biases[l].size();
        return p;
    }

    // Pinned flattening: for l = 0..L, W^(l) row-major then b^(l).
    Vector flatten() const {
        Vector flat(size());
        std::int64_t at = 0;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            const Matrix& w = weights[l];
            for (Eigen::Index i = 0; i < w.rows(); ++i)
                for (Eigen::Index j = 0; j < w.cols(); ++j) flat[at++] = w(i, j);
            for (Eigen::Index i = 0; i < biases[l].size(); ++i) flat[at++] = biases[l][i];
        }
        return flat;
    }

    static ParamSet from_flat(const MlpArchitecture& arch, const Vector& flat) {
        ParamSet p = zeros_like(arch);
        if (flat.size() != p.size())
            throw std::invalid_argument("from_flat: length does not match architecture");
        std::int64_t at = 0;
        for (std::size_t l = 0; l < p.weights.size(); ++l) {
            Matrix& w = p.weights[l];
            for (Eigen::Index i = 0; i < w.rows(); ++i)
                for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = flat[at++];
            for (Eigen::Index i = 0; i < p.biases[l].size(); ++i) p.biases[l][i] = flat[at++];
        }
        return p;
    }

    // theta = concat(theta^{<=L}, theta^{L+1}): the readout block is the last
    // weight matrix and bias.
    void zero_readout() {
        weights.back().setZero();
        biases.back().setZero();
    }

    void scale_below_readout(double factor) {
        for (std::size_t l = 0; l + 1 < weights.size(); ++l) {
            weights[l] *= factor;
            biases[l] *= factor;
        }
    }

    ParamSet& operator+=(const ParamSet& o) {
        for (std::size_t l = 0; l < weights.size(); ++l) {
            weights[l] += o.weights[l];
            biases[l] += o.biases[l];
        }
        return *this;
    }

    ParamSet& axpy(double alpha, const ParamSet& o) {
        for (std::size_t l = 0; l < weights.size(); ++l) {
            weights[l].noalias() += alpha * o.weights[l];
            biases[l] += alpha * o.biases[l];
        }
        return *this;
    }

    double dot(const ParamSet& o) const {
        double acc = 0.0;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            acc += weights[l].cwiseProduct(o.weights[l]).sum();
            acc += biases[l].dot(o.biases[l]);
        }
        return acc;
    }

    double squared_norm() const { return dot(*this); }
};

inline ParamSet init_params(const MlpArchitecture& arch, RngStream& stream) {
    arch.validate();
    const auto sizes = arch.layer_sizes();
    ParamSet p;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        Matrix w = gaussian_matrix(stream, sizes[l + 1], sizes[l]);
        Vector b = gaussian_vector(stream, sizes[l + 1]);
        if (arch.parameterisation == Parameterisation::standard) {
            w *= arch.sigma_w / std::sqrt(static_cast<double>(sizes[l]));
            b *= arch.sigma_b;
        }
        p.weights.push_back(std::move(w));
        p.biases.push_back(std::move(b));
    }
    return p;
}

// ---------------------------------------------------------------------------
// Forward / backward / JVP
//
// Activations are stored row-per-input (N x width), so each layer is one
// GEMM: preact = act * W^T (+ bias row).
// ---------------------------------------------------------------------------

namespace detail {

// layer transform scales: ntk puts sigma_w/sqrt(n_l), sigma_b in the forward
// pass; standard bakes them into the initialisation.
inline std::pair<double, double> layer_scales(const MlpArchitecture& arch, int fan_in) {
    if (arch.parameterisation == Parameterisation::ntk)
        return {arch.sigma_w / std::sqrt(static_cast<double>(fan_in)), arch.sigma_b};
    return {1.0, 1.0};
}

} // namespace detail

struct ForwardCache {
    // activations[l] = alpha^(l) (N x n_l), l = 0..L; preacts[l] = alpha~^(l+1)
    std::vector<Matrix> activations;
    std::vector<Matrix> preacts;
    Matrix output;  // N x C
};

inline void check_input(const MlpArchitecture& arch, const Matrix& x) {
    if (x.cols() != arch.input_dim)
        throw std::invalid_argument("forward: input column count does not match architecture");
}

inline ForwardCache forward_cached(const MlpArchitecture& arch, const ParamSet& theta,
                                   const Matrix& x) {
    check_input(arch, x);
    const int layers = arch.num_weight_layers();
    ForwardCache cache;
    cache.activations.reserve(layers);
    cache.preacts.reserve(layers);
    Matrix act = x;
    for (int l = 0; l < layers; ++l) {
        const auto [ws, bs] = detail::layer_scales(arch, static_cast<int>(act.cols()));
        cache.activations.push_back(act);
        Matrix pre = ws * (act * theta.weights[l].transpose());
        pre.rowwise() += bs * theta.biases[l].transpose();
        cache.preacts.push_back(pre);
        if (l + 1 < layers) {
            act = pre.unaryExpr([&](double v) { return apply_activation(arch.activation, v); });
        } else {
            cache.output = std::move(pre);
        }
    }
    return cache;
}

inline Matrix forward(const MlpArchitecture& arch, const ParamSet& theta, const Matrix& x) {
    return forward_cached(arch, theta, x).output;
}

// Backprop of <cotangent, output> through an existing forward cache.
inline ParamSet backprop(const MlpArchitecture& arch, const ParamSet& theta,
                         const ForwardCache& cache, const Matrix& cotangent) {
    if (cotangent.rows() != cache.output.rows() || cotangent.cols() != cache.output.cols())
        throw std::invalid_argument("backprop: cotangent shape does not match outputs");

    const int layers = arch.num_weight_layers();
    ParamSet grad = ParamSet::zeros_like(arch);
    Matrix g = cotangent;  // dL/d(preact of layer l), walking backwards
    for (int l = layers - 1; l >= 0; --l) {
        const auto [ws, bs] = detail::layer_scales(
            arch, static_cast<int>(cache.activations[l].cols()));
        grad.weights[l].noalias() = ws * (g.transpose() * cache.activations[l]);
        grad.biases[l] = bs * g.colwise().sum().transpose();
        if (l > 0) {
            Matrix dphi = cache.preacts[l - 1].unaryExpr(
                [&](double v) { return activation_derivative(arch.activation, v); });
            g = (ws * (g * theta.weights[l])).cwiseProduct(dphi);
        }
    }
    return grad;
}

// Gradient of <cotangent, f(X, theta)> with respect to theta.
inline ParamSet grad_params(const MlpArchitecture& arch, const ParamSet& theta,
                            const Matrix& x, const Matrix& cotangent) {
    return backprop(arch, theta, forward_cached(arch, theta, x), cotangent);
}

// Forward-mode JVP: grad f(X, theta) . flatten(tangent), propagated as dual
// values alongside the primal activations in one traversal.
inline Matrix jvp(const MlpArchitecture& arch, const ParamSet& theta,
                  const ParamSet& tangent, const Matrix& x) {
    check_input(arch, x);
    const int layers = arch.num_weight_layers();
    Matrix act = x;
    Matrix dact = Matrix::Zero(x.rows(), x.cols());
    Matrix out, dout;
    for (int l = 0; l < layers; ++l) {
        const auto [ws, bs] = detail::layer_scales(arch, static_cast<int>(act.cols()));
        Matrix pre = ws * (act * theta.weights[l].transpose());
        pre.rowwise() += bs * theta.biases[l].transpose();
        Matrix dpre = ws * (act * tangent.weights[l].transpose()) +
                      ws * (dact * theta.weights[l].transpose());
        dpre.rowwise() += bs * tangent.biases[l].transpose();
        if (l + 1 < layers) {
            dact = dpre.cwiseProduct(pre.unaryExpr(
                [&](double v) { return activation_derivative(arch.activation, v); }));
            act = pre.unaryExpr([&](double v) { return apply_activation(arch.activation, v); });
        } else {
            out = std::move(pre);
            dout = std::move(dpre);
        }
    }
    return dout;
}

// ---------------------------------------------------------------------------
// Delta construction (the frozen additive function)
// ---------------------------------------------------------------------------

enum class DeltaMethod { ntkgp_param, ntkgp_fn };

struct DeltaSpec {
    ParamSet anchor;    // theta_0, the JVP linearisation point
    ParamSet tangent;   // theta*, frozen after construction
    DeltaMethod method = DeltaMethod::ntkgp_param;
};

inline DeltaSpec make_delta(const MlpArchitecture& arch, const ParamSet& theta0,
                            RngStream& stream, DeltaMethod method) {
    ParamSet tilde = init_params(arch, stream);
    switch (method) {
        case DeltaMethod::ntkgp_param:
            tilde.zero_readout();
            break;
        case DeltaMethod::ntkgp_fn:
            tilde.scale_below_readout(std::sqrt(2.0));
            break;
    }
    return DeltaSpec{theta0, std::move(tilde), method};
}

inline Matrix delta_eval(const DeltaSpec& spec, const MlpArchitecture& arch, const Matrix& x) {
    return jvp(arch, spec.anchor, spec.tangent, x);
}

inline Matrix modified_forward(const MlpArchitecture& arch, const ParamSet& theta_t,
                               const DeltaSpec& spec, const Matrix& x) {
    return forward(arch, theta_t, x) + delta_eval(spec, arch, x);
}

// f~lin(x, theta_t) = grad f(x, theta~) . theta_t — linear in theta_t.
inline Matrix linearised_forward(const MlpArchitecture& arch, const ParamSet& theta_tilde,
                                 const ParamSet& theta_t, const Matrix& x) {
    return jvp(arch, theta_tilde, theta_t, x);
}

// ---------------------------------------------------------------------------
// Empirical NTK
// ---------------------------------------------------------------------------

// Blocks of the empirical tangent kernel at theta. Indexing of the
// |X|C x |X'|C matrices is point-major: row i*C + c is (point i, channel c).
// `below_readout` restricts the parameter sum to theta^{<=L}; `readout` is the
// final layer's contribution (the empirical NNGP kernel under NTK
// parameterisation). full = below_readout + readout, exactly.
struct EmpiricalNtk {
    Matrix full;
    Matrix below_readout;
    Matrix readout;
};

inline EmpiricalNtk empirical_ntk(const MlpArchitecture& arch, const ParamSet& theta,
                                  const Matrix& x1, const Matrix& x2) {
    const int c_out = arch.output_dim;
    const int layers = arch.num_weight_layers();
    const ForwardCache f1 = forward_cached(arch, theta, x1);
    const ForwardCache f2 = forward_cached(arch, theta, x2);
    const Eigen::Index n1 = x1.rows(), n2 = x2.rows();

    // Backprop signal per channel: g[c][l] is N x n_{l+1}, the gradient of
    // output channel c with respect to layer-l preactivations. The kernel is
    // then assembled from Gram matrices of activations and signals; weight
    // gradients are rank-one per (point, layer), so their inner products
    // factor as <g, g'> * <act, act'> without materialising Jacobians.
    auto backprop_signals = [&](const ForwardCache& cache, Eigen::Index n) {
        std::vector<std::vector<Matrix>> g(c_out, std::vector<Matrix>(layers));
        for (int c = 0; c < c_out; ++c) {
            Matrix cur = Matrix::Zero(n, arch.output_dim);
            cur.col(c).setOnes();
            for (int l = layers - 1; l >= 0; --l) {
                g[c][l] = cur;
                if (l > 0) {
                    const auto [ws, bs] = detail::layer_scales(
                        arch, static_cast<int>(cache.activations[l].cols()));
                    Matrix dphi = cache.preacts[l - 1].unaryExpr([&](double v) {
                        return activation_derivative(arch.activation, v);
                    });
                    cur = (ws * (cur * theta.weights[l])).cwiseProduct(dphi);
                }
            }
        }
        return g;
    };
    const auto g1 = backprop_signals(f1, n1);
    const auto g2 = backprop_signals(f2, n2);

    EmpiricalNtk result;
    result.full = Matrix::Zero(n1 * c_out, n2 * c_out);
    result.below_readout = Matrix::Zero(n1 * c_out, n2 * c_out);
    result.readout = Matrix::Zero(n1 * c_out, n2 * c_out);

    for (int ca = 0; ca < c_out; ++ca) {
        for (int cb = 0; cb < c_out; ++cb) {
            Matrix block = Matrix::Zero(n1, n2);
            Matrix readout_block = Matrix::Zero(n1, n2);
            for (int l = 0; l < layers; ++l) {
                const auto [ws, bs] = detail::layer_scales(
                    arch, static_cast<int>(f1.activations[l].cols()));
                Matrix contrib =
                    (ws * ws) * (g1[ca][l] * g2[cb][l].transpose())
                        .cwiseProduct(f1.activations[l] * f2.activations[l].transpose()) +
                    (bs * bs) * (g1[ca][l] * g2[cb][l].transpose());
                if (l + 1 == layers) readout_block = contrib;
                block += contrib;
            }
            for (Eigen::Index i = 0; i < n1; ++i) {
                for (Eigen::Index j = 0; j < n2; ++j) {
                    result.full(i * c_out + ca, j * c_out + cb) = block(i, j);
                    result.readout(i * c_out + ca, j * c_out + cb) = readout_block(i, j);
                    result.below_readout(i * c_out + ca, j * c_out + cb) =
                        block(i, j) - readout_block(i, j);
                }
            }
        }
    }
    return result;
}

} // namespace ntkgp
