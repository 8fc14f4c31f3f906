// Baselearner training for the six ensemble methods, target-noise injection,
// prior-weighted regularisation, the homoscedastic / heteroscedastic losses,
// and prediction aggregation.
//
// Method dispatch, following the training contracts:
//   deep_ensemble  plain forward, clean targets, plain weight decay
//   rp_param       plain forward, noisy targets, reg anchored at theta_0
//   rp_fn          plain forward, noisy targets, reg anchored at the origin
//   ntkgp_param    forward + frozen delta (readout-zeroed tangent), anchor theta_0
//   ntkgp_fn       forward + frozen delta (sqrt2-scaled tangent), anchor origin
//   ntkgp_lin      linearised forward grad f(.,theta~) theta_t, anchor theta_0
//
// The optimised objective is batch-mean normalised, (1/N)[sum_n l_n + R],
// which shares its minimiser with the sum form and makes learning-rate
// stability width- and N-robust. When sigma2 > 0 the data term is
// 1/(2 sigma2) per squared residual and R is the Lambda-weighted prior term;
// when sigma2 == 0 the data term is plain 1/2 squared error with no R, and
// gradient descent from theta_0 converges to the minimum-prior-norm
// interpolant. Member seed streams (theta_k, theta~_k, eps_k) are derived
// from base_seed by counter splitting, so results are independent of
// scheduling.

#pragma once

#include "ntkgp/net.hpp"
#include "ntkgp/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace ntkgp {

enum class EnsembleMethod { deep_ensemble, rp_param, rp_fn, ntkgp_param, ntkgp_fn, ntkgp_lin };

inline const char* method_name(EnsembleMethod m) {
    switch (m) {
        case EnsembleMethod::deep_ensemble: return "deep_ensemble";
        case EnsembleMethod::rp_param: return "rp_param";
        case EnsembleMethod::rp_fn: return "rp_fn";
        case EnsembleMethod::ntkgp_param: return "ntkgp_param";
        case EnsembleMethod::ntkgp_fn: return "ntkgp_fn";
        case EnsembleMethod::ntkgp_lin: return "ntkgp_lin";
    }
    return "?";
}

struct OptimiserConfig {
    enum class Kind { gd, adam };
    Kind kind = Kind::gd;
    double learning_rate = 1e-3;
    // gd / full-batch adam: number of update steps; minibatch adam: epochs
    int iterations = 1000;
    int batch_size = 0;  // 0 = full batch
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct EnsembleSpec {
    EnsembleMethod method = EnsembleMethod::ntkgp_param;
    int size = 1;          // K
    double sigma2 = 0.0;   // modelled observation-noise variance
    bool heteroscedastic = false;
    OptimiserConfig optimiser;
    std::uint64_t base_seed = 0;
    double weight_decay = 1e-4;  // deep_ensemble only

    void validate() const {
        if (size < 1) throw std::invalid_argument("EnsembleSpec: size must be >= 1");
        if (sigma2 < 0.0) throw std::invalid_argument("EnsembleSpec: sigma2 must be >= 0");
        if ((method == EnsembleMethod::rp_param || method == EnsembleMethod::rp_fn) &&
            !(sigma2 > 0.0))
            throw std::invalid_argument(
                "EnsembleSpec: randomised-prior methods require sigma2 > 0");
        if (heteroscedastic && sigma2 > 0.0)
            throw std::invalid_argument(
                "EnsembleSpec: heteroscedastic runs model per-point noise, set sigma2 = 0");
    }
};

// ---------------------------------------------------------------------------
// Lambda (per-parameter prior variances)
// ---------------------------------------------------------------------------

// Stored per layer block; every parameter inside a block shares its prior
// variance. flatten() expands to the per-parameter vector aligned with
// ParamSet::flatten for callers that index individual parameters.
struct LambdaWeights {
    std::vector<double> weight_var;  // per weight layer l = 0..L
    std::vector<double> bias_var;

    static LambdaWeights for_arch(const MlpArchitecture& arch) {
        arch.validate();
        LambdaWeights lw;
        const auto sizes = arch.layer_sizes();
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
            if (arch.parameterisation == Parameterisation::ntk) {
                lw.weight_var.push_back(1.0);
                lw.bias_var.push_back(1.0);
            } else {
                if (!(arch.sigma_b > 0.0))
                    throw std::invalid_argument(
                        "LambdaWeights: standard parameterisation with sigma_b == 0 has a "
                        "zero-variance bias prior, which is not representable");
                lw.weight_var.push_back(arch.sigma_w * arch.sigma_w / sizes[l]);
                lw.bias_var.push_back(arch.sigma_b * arch.sigma_b);
            }
        }
        return lw;
    }

    Vector flatten(const MlpArchitecture& arch) const {
        const auto sizes = arch.layer_sizes();
        Vector flat(arch.param_count());
        std::int64_t at = 0;
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
            const std::int64_t nw = static_cast<std::int64_t>(sizes[l + 1]) * sizes[l];
            flat.segment(at, nw).setConstant(weight_var[l]);
            at += nw;
            flat.segment(at, sizes[l + 1]).setConstant(bias_var[l]);
            at += sizes[l + 1];
        }
        return flat;
    }
};

// 1/2 (theta - a)^T Lambda^{-1} (theta - a); anchor == nullptr means the origin.
inline double regularisation_term(const ParamSet& theta, const ParamSet* anchor,
                                  const LambdaWeights& lambda) {
    double acc = 0.0;
    for (int l = 0; l < theta.num_layers(); ++l) {
        const Matrix dw = anchor ? Matrix(theta.weights[l] - anchor->weights[l])
                                 : theta.weights[l];
        const Vector db = anchor ? Vector(theta.biases[l] - anchor->biases[l])
                                 : theta.biases[l];
        acc += dw.squaredNorm() / lambda.weight_var[l];
        acc += db.squaredNorm() / lambda.bias_var[l];
    }
    return 0.5 * acc;
}

// grad += scale * Lambda^{-1} (theta - a)
inline void add_regularisation_gradient(const ParamSet& theta, const ParamSet* anchor,
                                        const LambdaWeights& lambda, double scale,
                                        ParamSet& grad) {
    for (int l = 0; l < theta.num_layers(); ++l) {
        const double ws = scale / lambda.weight_var[l];
        const double bs = scale / lambda.bias_var[l];
        if (anchor) {
            grad.weights[l].noalias() += ws * (theta.weights[l] - anchor->weights[l]);
            grad.biases[l] += bs * (theta.biases[l] - anchor->biases[l]);
        } else {
            grad.weights[l].noalias() += ws * theta.weights[l];
            grad.biases[l] += bs * theta.biases[l];
        }
    }
}

// ---------------------------------------------------------------------------
// Targets and losses
// ---------------------------------------------------------------------------

// y'_n = y_n + sigma * eps_n, drawn once per baselearner and held fixed.
inline Matrix data_noise(const Matrix& targets, double sigma, RngStream& stream) {
    if (sigma < 0.0) throw std::invalid_argument("data_noise: sigma must be >= 0");
    if (sigma == 0.0) return targets;
    return targets + sigma * gaussian_matrix(stream, targets.rows(), targets.cols());
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Per-point Gaussian NLL with fixed input variances (sum over batch, up to
// additive constant). With all variances 1 this is exactly the plain squared
// error. The trainable-variance-head loss below maps the head through a
// sigmoid and adds the same per-point terms.
inline double loss_heteroscedastic_fixed(const Matrix& mean_predictions,
                                         const Matrix& targets, const Vector& variances) {
    if (mean_predictions.cols() != 1 || targets.cols() != 1)
        throw std::invalid_argument("loss_heteroscedastic_fixed: univariate only");
    if (mean_predictions.rows() != targets.rows() || variances.size() != targets.rows())
        throw std::invalid_argument("loss_heteroscedastic_fixed: size mismatch");
    double acc = 0.0;
    for (Eigen::Index n = 0; n < targets.rows(); ++n) {
        const double r = targets(n, 0) - mean_predictions(n, 0);
        acc += r * r / (2.0 * variances[n]) + 0.5 * std::log(variances[n]);
    }
    return acc;
}

// Sum over the batch of per-point negative log likelihoods, up to additive
// constants. Heteroscedastic predictions carry one extra column: the raw
// variance head, mapped through a sigmoid. Homoscedastic sigma2 == 0 (and
// deep_ensemble always) mean plain squared error.
inline double loss(EnsembleMethod method, const Matrix& predictions, const Matrix& targets,
                   double sigma2, bool heteroscedastic) {
    if (heteroscedastic) {
        if (targets.cols() != 1 || predictions.cols() != 2)
            throw std::invalid_argument(
                "loss: heteroscedastic path is univariate (mean head + variance head)");
        double acc = 0.0;
        for (Eigen::Index n = 0; n < targets.rows(); ++n) {
            const double r = targets(n, 0) - predictions(n, 0);
            const double var = sigmoid(predictions(n, 1));
            acc += r * r / (2.0 * var) + 0.5 * std::log(var);
        }
        return acc;
    }
    if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols())
        throw std::invalid_argument("loss: prediction/target shape mismatch");
    const double w = (method != EnsembleMethod::deep_ensemble && sigma2 > 0.0)
                         ? 1.0 / sigma2 : 1.0;
    return 0.5 * w * (predictions - targets).squaredNorm();
}

namespace detail {

// d(loss)/d(predictions) for the batch-sum loss above.
inline Matrix loss_cotangent(EnsembleMethod method, const Matrix& predictions,
                             const Matrix& targets, double sigma2, bool heteroscedastic) {
    if (heteroscedastic) {
        Matrix cot(predictions.rows(), 2);
        for (Eigen::Index n = 0; n < predictions.rows(); ++n) {
            const double r = targets(n, 0) - predictions(n, 0);
            const double var = sigmoid(predictions(n, 1));
            cot(n, 0) = -r / var;
            // d/ds [r^2/(2 var) + log(var)/2] with var = sigmoid(s)
            cot(n, 1) = (0.5 - r * r / (2.0 * var)) * (1.0 - var);
        }
        return cot;
    }
    const double w = (method != EnsembleMethod::deep_ensemble && sigma2 > 0.0)
                         ? 1.0 / sigma2 : 1.0;
    return w * (predictions - targets);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Trained baselearner
// ---------------------------------------------------------------------------

struct TrainedBaselearner {
    EnsembleMethod method = EnsembleMethod::deep_ensemble;
    MlpArchitecture model;        // includes the variance head when heteroscedastic
    int target_dim = 1;           // C of the regression targets
    bool heteroscedastic = false;
    double sigma2 = 0.0;

    ParamSet theta_hat;
    ParamSet theta0;
    std::optional<DeltaSpec> delta;       // ntkgp_param / ntkgp_fn
    std::optional<ParamSet> theta_tilde;  // ntkgp_lin
    Matrix noisy_targets;                 // the fixed targets this member saw
    std::uint64_t member_seed_key = 0;

    // Raw model outputs under the method's forward rule (all heads).
    Matrix raw_outputs(const Matrix& x) const {
        switch (method) {
            case EnsembleMethod::ntkgp_lin:
                return linearised_forward(model, *theta_tilde, theta_hat, x);
            case EnsembleMethod::ntkgp_param:
            case EnsembleMethod::ntkgp_fn: {
                Matrix out = forward(model, theta_hat, x);
                Matrix d = delta_eval(*delta, model, x);
                if (heteroscedastic) d.col(d.cols() - 1).setZero();
                return out + d;
            }
            default:
                return forward(model, theta_hat, x);
        }
    }

    Matrix predict_mean(const Matrix& x) const {
        return raw_outputs(x).leftCols(target_dim);
    }

    // Per-point predictive variance: the trained variance head when
    // heteroscedastic, else the modelled constant sigma2.
    Vector predict_variance(const Matrix& x) const {
        if (!heteroscedastic) return Vector::Constant(x.rows(), sigma2);
        const Matrix out = raw_outputs(x);
        return out.col(out.cols() - 1).unaryExpr([](double s) { return sigmoid(s); });
    }
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace detail {

struct MethodTraits {
    bool uses_delta = false;
    DeltaMethod delta_method = DeltaMethod::ntkgp_param;
    bool linearised = false;
    bool anchored_at_init = false;  // vs the origin, when regularised
    bool models_noise = false;      // noisy targets + Lambda regularisation
};

inline MethodTraits traits_of(EnsembleMethod m) {
    switch (m) {
        case EnsembleMethod::deep_ensemble:
            return {false, DeltaMethod::ntkgp_param, false, false, false};
        case EnsembleMethod::rp_param:
            return {false, DeltaMethod::ntkgp_param, false, true, true};
        case EnsembleMethod::rp_fn:
            return {false, DeltaMethod::ntkgp_param, false, false, true};
        case EnsembleMethod::ntkgp_param:
            return {true, DeltaMethod::ntkgp_param, false, true, true};
        case EnsembleMethod::ntkgp_fn:
            return {true, DeltaMethod::ntkgp_fn, false, false, true};
        case EnsembleMethod::ntkgp_lin:
            return {false, DeltaMethod::ntkgp_param, true, true, true};
    }
    throw std::invalid_argument("unknown ensemble method");
}

struct AdamState {
    ParamSet m, v;
    double beta1_t = 1.0, beta2_t = 1.0;
};

inline void adam_step(ParamSet& theta, const ParamSet& grad, AdamState& st,
                      const OptimiserConfig& cfg) {
    st.beta1_t *= cfg.beta1;
    st.beta2_t *= cfg.beta2;
    const double corr1 = 1.0 - st.beta1_t;
    const double corr2 = 1.0 - st.beta2_t;
    for (int l = 0; l < theta.num_layers(); ++l) {
        st.m.weights[l] = cfg.beta1 * st.m.weights[l] + (1.0 - cfg.beta1) * grad.weights[l];
        st.v.weights[l] = cfg.beta2 * st.v.weights[l] +
                          (1.0 - cfg.beta2) * grad.weights[l].cwiseProduct(grad.weights[l]);
        theta.weights[l].array() -=
            cfg.learning_rate * (st.m.weights[l].array() / corr1) /
            ((st.v.weights[l].array() / corr2).sqrt() + cfg.eps);
        st.m.biases[l] = cfg.beta1 * st.m.biases[l] + (1.0 - cfg.beta1) * grad.biases[l];
        st.v.biases[l] = cfg.beta2 * st.v.biases[l] +
                         (1.0 - cfg.beta2) * grad.biases[l].cwiseProduct(grad.biases[l]);
        theta.biases[l].array() -=
            cfg.learning_rate * (st.m.biases[l].array() / corr1) /
            ((st.v.biases[l].array() / corr2).sqrt() + cfg.eps);
    }
}

} // namespace detail

// Trains member k of the ensemble on (x, y). x is N x d, y is N x C.
inline TrainedBaselearner train_baselearner(const EnsembleSpec& spec, int k,
                                            const MlpArchitecture& arch,
                                            const Matrix& x, const Matrix& y) {
    spec.validate();
    arch.validate();
    if (x.rows() != y.rows())
        throw std::invalid_argument("train_baselearner: input/target row mismatch");
    if (y.cols() != arch.output_dim)
        throw std::invalid_argument("train_baselearner: target columns must match output_dim");
    const auto tr = detail::traits_of(spec.method);

    MlpArchitecture model = arch;
    if (spec.heteroscedastic) {
        if (arch.output_dim != 1)
            throw std::invalid_argument("train_baselearner: heteroscedastic path is univariate");
        model.output_dim += 1;  // variance head
    }

    RngStream member = RngStream(spec.base_seed).substream(static_cast<std::uint64_t>(k));
    RngStream theta_stream = member.substream(0);
    RngStream tilde_stream = member.substream(1);
    RngStream noise_stream = member.substream(2);
    RngStream shuffle_stream = member.substream(3);

    TrainedBaselearner out;
    out.method = spec.method;
    out.model = model;
    out.target_dim = arch.output_dim;
    out.heteroscedastic = spec.heteroscedastic;
    out.sigma2 = spec.sigma2;
    out.member_seed_key = static_cast<std::uint64_t>(k);
    out.theta0 = init_params(model, theta_stream);

    if (tr.uses_delta)
        out.delta = make_delta(model, out.theta0, tilde_stream, tr.delta_method);
    if (tr.linearised)
        out.theta_tilde = init_params(model, tilde_stream);

    out.noisy_targets = tr.models_noise
                            ? data_noise(y, std::sqrt(spec.sigma2), noise_stream)
                            : y;

    // frozen delta on the training inputs, variance head excluded
    Matrix delta_train;
    if (tr.uses_delta) {
        delta_train = delta_eval(*out.delta, model, x);
        if (spec.heteroscedastic) delta_train.col(delta_train.cols() - 1).setZero();
    }
    // the linearised forward keeps its Jacobian pinned at theta~, so the
    // backprop cache there is loop-invariant
    std::optional<ForwardCache> tilde_cache;
    if (tr.linearised) tilde_cache = forward_cached(model, *out.theta_tilde, x);

    const bool regularised = tr.models_noise && spec.sigma2 > 0.0;
    const LambdaWeights lambda =
        regularised ? LambdaWeights::for_arch(model) : LambdaWeights{};
    const ParamSet* anchor = tr.anchored_at_init ? &out.theta0 : nullptr;

    const Eigen::Index n_total = x.rows();
    ParamSet theta = out.theta0;

    auto eval_loss_and_grad = [&](const Matrix& xb, const Matrix& yb,
                                  const Eigen::Index* rows, Eigen::Index nb,
                                  ParamSet& grad) -> double {
        Matrix preds;
        ForwardCache cache;
        if (tr.linearised) {
            preds = linearised_forward(model, *out.theta_tilde, theta, xb);
        } else {
            cache = forward_cached(model, theta, xb);
            preds = cache.output;
            if (tr.uses_delta) {
                if (rows) {
                    for (Eigen::Index i = 0; i < nb; ++i)
                        preds.row(i) += delta_train.row(rows[i]);
                } else {
                    preds += delta_train;
                }
            }
        }
        double value = loss(spec.method, preds, yb, spec.sigma2, spec.heteroscedastic);
        Matrix cot = detail::loss_cotangent(spec.method, preds, yb, spec.sigma2,
                                            spec.heteroscedastic) /
                     static_cast<double>(nb);
        if (tr.linearised) {
            // gradient w.r.t. theta_t of a function linear in theta_t: one VJP
            // at the fixed theta~ (full batch only; see minibatch guard below)
            grad = backprop(model, *out.theta_tilde, *tilde_cache, cot);
        } else {
            grad = backprop(model, theta, cache, cot);
        }
        if (regularised) {
            value += regularisation_term(theta, anchor, lambda);
            add_regularisation_gradient(theta, anchor, lambda,
                                        1.0 / static_cast<double>(nb), grad);
        }
        if (spec.method == EnsembleMethod::deep_ensemble && spec.weight_decay > 0.0) {
            value += 0.5 * spec.weight_decay * theta.squared_norm();
            grad.axpy(spec.weight_decay, theta);
        }
        return value;
    };

    auto check_finite = [&](double value, int iteration) {
        if (!std::isfinite(value)) {
            std::ostringstream os;
            os << "train_baselearner: non-finite loss at iteration " << iteration
               << " (method " << method_name(spec.method) << ", member " << k << ")";
            throw std::runtime_error(os.str());
        }
    };

    const OptimiserConfig& opt = spec.optimiser;
    if (opt.batch_size > 0 && tr.linearised)
        throw std::invalid_argument(
            "train_baselearner: ntkgp_lin supports full-batch optimisation only");

    detail::AdamState adam;
    if (opt.kind == OptimiserConfig::Kind::adam) {
        adam.m = ParamSet::zeros_like(model);
        adam.v = ParamSet::zeros_like(model);
    }

    ParamSet grad = ParamSet::zeros_like(model);
    if (opt.batch_size <= 0) {
        for (int it = 0; it < opt.iterations; ++it) {
            const double value = eval_loss_and_grad(x, out.noisy_targets, nullptr, n_total, grad);
            check_finite(value, it);
            if (opt.kind == OptimiserConfig::Kind::gd)
                theta.axpy(-opt.learning_rate, grad);
            else
                detail::adam_step(theta, grad, adam, opt);
        }
    } else {
        std::vector<Eigen::Index> order(static_cast<std::size_t>(n_total));
        for (Eigen::Index i = 0; i < n_total; ++i) order[static_cast<std::size_t>(i)] = i;
        for (int epoch = 0; epoch < opt.iterations; ++epoch) {
            // Fisher-Yates from the member's shuffle stream
            for (std::size_t i = order.size(); i > 1; --i) {
                const std::size_t j =
                    static_cast<std::size_t>(shuffle_stream.next_u64() % i);
                std::swap(order[i - 1], order[j]);
            }
            for (Eigen::Index start = 0; start < n_total; start += opt.batch_size) {
                const Eigen::Index nb = std::min<Eigen::Index>(opt.batch_size,
                                                               n_total - start);
                Matrix xb(nb, x.cols());
                Matrix yb(nb, out.noisy_targets.cols());
                for (Eigen::Index i = 0; i < nb; ++i) {
                    xb.row(i) = x.row(order[static_cast<std::size_t>(start + i)]);
                    yb.row(i) = out.noisy_targets.row(order[static_cast<std::size_t>(start + i)]);
                }
                const double value = eval_loss_and_grad(
                    xb, yb, order.data() + start, nb, grad);
                check_finite(value, epoch);
                if (opt.kind == OptimiserConfig::Kind::gd)
                    theta.axpy(-opt.learning_rate, grad);
                else
                    detail::adam_step(theta, grad, adam, opt);
            }
        }
    }

    out.theta_hat = std::move(theta);
    return out;
}

// Trains all K members on a bounded pool; results are gathered in member
// order so the output never depends on scheduling.
inline std::vector<TrainedBaselearner> train_ensemble(const EnsembleSpec& spec,
                                                      const MlpArchitecture& arch,
                                                      const Matrix& x, const Matrix& y,
                                                      unsigned threads = 0) {
    spec.validate();
    std::vector<TrainedBaselearner> members(static_cast<std::size_t>(spec.size));
    parallel_for(static_cast<std::size_t>(spec.size), [&](std::size_t k) {
        members[k] = train_baselearner(spec, static_cast<int>(k), arch, x, y);
    }, threads);
    return members;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

// Moment-matched single Gaussian for a uniform mixture of member Gaussians:
// mu* = mean_k mu_k, var* = mean_k(mu_k^2 - mu*^2) + mean_k var_k.
inline std::pair<Vector, Vector> aggregate_regression(const std::vector<Vector>& means,
                                                      const std::vector<Vector>& vars) {
    if (means.empty() || means.size() != vars.size())
        throw std::invalid_argument("aggregate_regression: need K >= 1 matched members");
    const double k = static_cast<double>(means.size());
    Vector mu = Vector::Zero(means[0].size());
    Vector second = Vector::Zero(means[0].size());
    Vector noise = Vector::Zero(means[0].size());
    for (std::size_t i = 0; i < means.size(); ++i) {
        if (means[i].size() != mu.size() || vars[i].size() != mu.size())
            throw std::invalid_argument("aggregate_regression: member size mismatch");
        mu += means[i];
        second += means[i].cwiseProduct(means[i]);
        noise += vars[i];
    }
    mu /= k;
    Vector var = second / k - mu.cwiseProduct(mu) + noise / k;
    return {std::move(mu), std::move(var)};
}

// Uniform mixture of categorical predictions: the arithmetic mean of the
// member probability vectors.
inline Vector aggregate_classification(const std::vector<Vector>& member_probs,
                                       double simplex_tol = 1e-8) {
    if (member_probs.empty())
        throw std::invalid_argument("aggregate_classification: need K >= 1 members");
    Vector mean = Vector::Zero(member_probs[0].size());
    for (const Vector& p : member_probs) {
        if (p.size() != mean.size())
            throw std::invalid_argument("aggregate_classification: member size mismatch");
        if (p.minCoeff() < -simplex_tol || std::abs(p.sum() - 1.0) > simplex_tol)
            throw std::invalid_argument(
                "aggregate_classification: member probabilities are not a simplex point");
        mean += p;
    }
    mean /= static_cast<double>(member_probs.size());
    return mean;
}

} // namespace ntkgp
