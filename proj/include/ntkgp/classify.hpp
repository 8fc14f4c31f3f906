// Classification-as-regression utilities: kappa-scaled one-hot targets,
// post-hoc temperature scaling, predictive entropy, and the
// error-vs-confidence / error-vs-precision diagnostics.

#pragma once

#include "ntkgp/ensemble.hpp"
#include "ntkgp/kernels.hpp"
#include "ntkgp/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace ntkgp {

// ---------------------------------------------------------------------------
// Targets and scale
// ---------------------------------------------------------------------------

inline Matrix one_hot_targets(const std::vector<int>& labels, int num_classes, double kappa) {
    if (num_classes < 1) throw std::invalid_argument("one_hot_targets: num_classes must be >= 1");
    if (!(kappa > 0.0)) throw std::invalid_argument("one_hot_targets: kappa must be > 0");
    Matrix y = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), num_classes);
    for (std::size_t n = 0; n < labels.size(); ++n) {
        if (labels[n] < 0 || labels[n] >= num_classes) {
            std::ostringstream os;
            os << "one_hot_targets: label " << labels[n] << " out of range [0, "
               << num_classes << ")";
            throw std::invalid_argument(os.str());
        }
        y(static_cast<Eigen::Index>(n), labels[n]) = kappa;
    }
    return y;
}

enum class KappaMode { per_method, shared_ntk };

// zeta_0: the mean squared scale of a method's baselearner outputs at
// initialisation on the training inputs. ntkgp_param (and shared mode) use
// the analytic tangent-kernel diagonal; other methods estimate it by Monte
// Carlo over freshly initialised members. Returns kappa = sqrt(C * zeta_0).
inline double kappa_base(EnsembleMethod method, const MlpArchitecture& arch,
                         const Matrix& x_train, RngStream stream,
                         KappaMode mode = KappaMode::per_method, int mc_members = 100) {
    arch.validate();
    const int c_out = arch.output_dim;
    const bool analytic = mode == KappaMode::shared_ntk ||
                          method == EnsembleMethod::ntkgp_param;
    double zeta0 = 0.0;
    if (analytic) {
        const KernelPair k = nngp_ntk(arch, x_train, x_train);
        zeta0 = k.ntk.diagonal().mean();
    } else {
        // mean square of the method's own initial outputs over fresh members
        EnsembleSpec probe;
        probe.method = method;
        probe.sigma2 = 0.0;
        probe.heteroscedastic = false;
        double acc = 0.0;
        for (int m = 0; m < mc_members; ++m) {
            RngStream member = stream.substream(static_cast<std::uint64_t>(m));
            RngStream theta_stream = member.substream(0);
            RngStream tilde_stream = member.substream(1);
            const ParamSet theta0 = init_params(arch, theta_stream);
            Matrix out;
            switch (method) {
                case EnsembleMethod::ntkgp_fn: {
                    const DeltaSpec d = make_delta(arch, theta0, tilde_stream,
                                                   DeltaMethod::ntkgp_fn);
                    out = forward(arch, theta0, x_train) + delta_eval(d, arch, x_train);
                    break;
                }
                case EnsembleMethod::ntkgp_lin: {
                    const ParamSet tilde = init_params(arch, tilde_stream);
                    out = linearised_forward(arch, tilde, theta0, x_train);
                    break;
                }
                default:
                    out = forward(arch, theta0, x_train);
                    break;
            }
            acc += out.squaredNorm() / static_cast<double>(out.size());
        }
        zeta0 = acc / mc_members;
    }
    return std::sqrt(static_cast<double>(c_out) * zeta0);
}

// The tuning grid around a base kappa: 5 values linearly spaced in
// [0.75, 1.25] * kappa, selected downstream by validation accuracy.
inline std::vector<double> kappa_grid(double kappa_base_value) {
    std::vector<double> grid;
    for (int i = 0; i < 5; ++i)
        grid.push_back(kappa_base_value * (0.75 + 0.125 * i));
    return grid;
}

// ---------------------------------------------------------------------------
// Softmax, temperature, entropy
// ---------------------------------------------------------------------------

inline Vector softmax(const Vector& logits) {
    const double m = logits.maxCoeff();
    Vector e = (logits.array() - m).exp();
    return e / e.sum();
}

inline Matrix softmax_rows(const Matrix& logits) {
    Matrix p(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i)
        p.row(i) = softmax(Vector(logits.row(i))).transpose();
    return p;
}

inline double cross_entropy(const Matrix& logits, const std::vector<int>& labels, double t) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const Vector p = softmax(Vector(logits.row(i) / t));
        acc -= std::log(std::max(p[labels[static_cast<std::size_t>(i)]], 1e-300));
    }
    return acc / static_cast<double>(logits.rows());
}

// T* = argmin over [0.01, 100] of validation cross-entropy of softmax(z/T),
// by golden-section search over log T to 1e-4. A flat objective (all-equal
// logits) returns the log-interval midpoint, T = 1.
inline double temperature_scale(const Matrix& val_logits, const std::vector<int>& val_labels) {
    if (val_logits.rows() == 0)
        throw std::invalid_argument("temperature_scale: empty validation set");
    if (static_cast<std::size_t>(val_logits.rows()) != val_labels.size())
        throw std::invalid_argument("temperature_scale: logits/labels size mismatch");

    const double lo = std::log(0.01), hi = std::log(100.0);
    auto objective = [&](double u) { return cross_entropy(val_logits, val_labels, std::exp(u)); };

    bool any_decisive = false;
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double x1 = b - inv_phi * (b - a);
    double x2 = a + inv_phi * (b - a);
    double f1 = objective(x1), f2 = objective(x2);
    while (b - a > 1e-4) {
        if (f1 != f2) any_decisive = true;
        // ties keep the left interval: a flat-to-the-left objective (e.g.
        // cross-entropy underflowing to 0 for small T) collapses onto the
        // boundary instead of drifting into the flat region
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = objective(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = objective(x2);
        }
    }
    if (!any_decisive) return std::exp(0.5 * (lo + hi));  // flat objective: midpoint
    return std::exp(0.5 * (a + b));
}

// -sum p log p in nats, with 0 log 0 = 0.
inline double predictive_entropy(const Vector& probs) {
    for (Eigen::Index i = 0; i < probs.size(); ++i)
        if (probs[i] < -1e-12)
            throw std::invalid_argument("predictive_entropy: negative probability");
    double h = 0.0;
    for (Eigen::Index i = 0; i < probs.size(); ++i)
        if (probs[i] > 0.0) h -= probs[i] * std::log(probs[i]);
    return h;
}

// ---------------------------------------------------------------------------
// Diagnostic curves
// ---------------------------------------------------------------------------

struct ConfidenceCurve {
    std::vector<double> thresholds;  // ascending
    std::vector<double> error;       // mean error over points with conf >= tau
    std::vector<std::size_t> count;  // evaluated points per threshold
};

// Confidence is the max class probability; out-of-distribution points are
// always counted as errors. Ties at tau are included (>=). Empty bins keep
// count 0 and error 0.
inline ConfidenceCurve error_vs_confidence(const Matrix& probs, const std::vector<int>& labels,
                                           const std::vector<bool>& ood_mask,
                                           const std::vector<double>& thresholds) {
    const std::size_t n = static_cast<std::size_t>(probs.rows());
    if (labels.size() != n || ood_mask.size() != n)
        throw std::invalid_argument("error_vs_confidence: size mismatch");
    std::vector<double> conf(n);
    std::vector<bool> wrong(n);
    for (std::size_t i = 0; i < n; ++i) {
        Eigen::Index argmax;
        conf[i] = probs.row(static_cast<Eigen::Index>(i)).maxCoeff(&argmax);
        wrong[i] = ood_mask[i] || static_cast<int>(argmax) != labels[i];
    }
    ConfidenceCurve curve;
    curve.thresholds = thresholds;
    std::sort(curve.thresholds.begin(), curve.thresholds.end());
    for (double tau : curve.thresholds) {
        std::size_t cnt = 0, errs = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (conf[i] >= tau) {
                ++cnt;
                if (wrong[i]) ++errs;
            }
        }
        curve.count.push_back(cnt);
        curve.error.push_back(cnt ? static_cast<double>(errs) / static_cast<double>(cnt) : 0.0);
    }
    return curve;
}

// RMSE over points whose predictive precision 1/var exceeds each threshold.
inline ConfidenceCurve error_vs_precision(const Vector& pred_mean, const Vector& pred_var,
                                          const Vector& targets,
                                          const std::vector<double>& thresholds) {
    const Eigen::Index n = pred_mean.size();
    if (pred_var.size() != n || targets.size() != n)
        throw std::invalid_argument("error_vs_precision: size mismatch");
    ConfidenceCurve curve;
    curve.thresholds = thresholds;
    std::sort(curve.thresholds.begin(), curve.thresholds.end());
    for (double tau : curve.thresholds) {
        std::size_t cnt = 0;
        double sq = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double precision = 1.0 / pred_var[i];
            if (precision >= tau) {
                ++cnt;
                const double r = pred_mean[i] - targets[i];
                sq += r * r;
            }
        }
        curve.count.push_back(cnt);
        curve.error.push_back(cnt ? std::sqrt(sq / static_cast<double>(cnt)) : 0.0);
    }
    return curve;
}

} // namespace ntkgp
