// Versioned little-endian binary formats for parameter sets and trained
// baselearner bundles, plus the FNV-1a digests used to pin frozen state.
//
// ParamSet layout (magic "NTKP", version 1):
//   u32 magic_chars, u32 version, u32 n_layers,
//   per layer: u32 rows, u32 cols,
//   per layer: f64 weight entries row-major, then f64 bias entries.
//
// Baselearner bundle (magic "NTKB", version 1):
//   header (method, flags, target_dim, sigma2, member key, architecture),
//   theta_hat, theta0, optional delta tangent, optional theta_tilde,
//   noisy-targets matrix. The delta anchor is theta0 by construction and is
//   not duplicated.

#pragma once

#include "ntkgp/ensemble.hpp"
#include "ntkgp/net.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

static_assert(std::endian::native == std::endian::little,
              "serialized formats assume a little-endian host");

namespace ntkgp {

// ---------------------------------------------------------------------------
// Digests
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(const void* data, std::size_t size,
                             std::uint64_t seed = 0xCBF29CE484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline std::uint64_t hash_params(const ParamSet& p, std::uint64_t seed = 0xCBF29CE484222325ULL) {
    std::uint64_t h = seed;
    for (int l = 0; l < p.num_layers(); ++l) {
        const std::uint64_t shape[2] = {static_cast<std::uint64_t>(p.weights[l].rows()),
                                        static_cast<std::uint64_t>(p.weights[l].cols())};
        h = fnv1a64(shape, sizeof shape, h);
        for (Eigen::Index i = 0; i < p.weights[l].rows(); ++i)
            for (Eigen::Index j = 0; j < p.weights[l].cols(); ++j) {
                const double v = p.weights[l](i, j);
                h = fnv1a64(&v, sizeof v, h);
            }
        for (Eigen::Index i = 0; i < p.biases[l].size(); ++i) {
            const double v = p.biases[l][i];
            h = fnv1a64(&v, sizeof v, h);
        }
    }
    return h;
}

inline std::uint64_t hash_delta(const DeltaSpec& d) {
    std::uint64_t h = hash_params(d.anchor);
    h = hash_params(d.tangent, h);
    const std::uint8_t m = static_cast<std::uint8_t>(d.method);
    return fnv1a64(&m, 1, h);
}

// ---------------------------------------------------------------------------
// Low-level writers/readers
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
        throw std::runtime_error(std::string("serialize: truncated input reading ") + what);
    return v;
}

inline void write_matrix(std::ostream& out, const Matrix& m) {
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) write_pod<double>(out, m(i, j));
}

inline Matrix read_matrix(std::istream& in) {
    const auto rows = read_pod<std::uint64_t>(in, "matrix rows");
    const auto cols = read_pod<std::uint64_t>(in, "matrix cols");
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            m(i, j) = read_pod<double>(in, "matrix entry");
    return m;
}

} // namespace detail

// ---------------------------------------------------------------------------
// ParamSet
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kParamsMagic = 0x504B544EU;  // "NTKP"
inline constexpr std::uint32_t kBundleMagic = 0x424B544EU;  // "NTKB"
inline constexpr std::uint32_t kFormatVersion = 1;

inline void write_params(std::ostream& out, const ParamSet& p) {
    detail::write_pod(out, kParamsMagic);
    detail::write_pod(out, kFormatVersion);
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.num_layers()));
    for (int l = 0; l < p.num_layers(); ++l) {
        detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.weights[l].rows()));
        detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.weights[l].cols()));
    }
    for (int l = 0; l < p.num_layers(); ++l) {
        for (Eigen::Index i = 0; i < p.weights[l].rows(); ++i)
            for (Eigen::Index j = 0; j < p.weights[l].cols(); ++j)
                detail::write_pod<double>(out, p.weights[l](i, j));
        for (Eigen::Index i = 0; i < p.biases[l].size(); ++i)
            detail::write_pod<double>(out, p.biases[l][i]);
    }
}

inline ParamSet read_params(std::istream& in) {
    if (detail::read_pod<std::uint32_t>(in, "magic") != kParamsMagic)
        throw std::runtime_error("read_params: bad magic");
    if (detail::read_pod<std::uint32_t>(in, "version") != kFormatVersion)
        throw std::runtime_error("read_params: unsupported version");
    const auto layers = detail::read_pod<std::uint32_t>(in, "layer count");
    std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes(layers);
    for (auto& s : shapes) {
        s.first = detail::read_pod<std::uint32_t>(in, "rows");
        s.second = detail::read_pod<std::uint32_t>(in, "cols");
    }
    ParamSet p;
    for (const auto& s : shapes) {
        Matrix w(static_cast<Eigen::Index>(s.first), static_cast<Eigen::Index>(s.second));
        for (Eigen::Index i = 0; i < w.rows(); ++i)
            for (Eigen::Index j = 0; j < w.cols(); ++j)
                w(i, j) = detail::read_pod<double>(in, "weight");
        Vector b(static_cast<Eigen::Index>(s.first));
        for (Eigen::Index i = 0; i < b.size(); ++i)
            b[i] = detail::read_pod<double>(in, "bias");
        p.weights.push_back(std::move(w));
        p.biases.push_back(std::move(b));
    }
    return p;
}

inline void save_params(const std::string& path, const ParamSet& p) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_params: cannot open " + path);
    write_params(out, p);
}

inline ParamSet load_params(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_params: cannot open " + path);
    return read_params(in);
}

// ---------------------------------------------------------------------------
// Baselearner bundles
// ---------------------------------------------------------------------------

namespace detail {

inline void write_arch(std::ostream& out, const MlpArchitecture& a) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(a.input_dim));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(a.hidden_widths.size()));
    for (int w : a.hidden_widths) write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(w));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(a.output_dim));
    write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(a.activation));
    write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(a.parameterisation));
    write_pod<double>(out, a.sigma_w);
    write_pod<double>(out, a.sigma_b);
}

inline MlpArchitecture read_arch(std::istream& in) {
    MlpArchitecture a;
    a.input_dim = static_cast<int>(read_pod<std::uint32_t>(in, "input_dim"));
    const auto depth = read_pod<std::uint32_t>(in, "depth");
    a.hidden_widths.resize(depth);
    for (auto& w : a.hidden_widths)
        w = static_cast<int>(read_pod<std::uint32_t>(in, "width"));
    a.output_dim = static_cast<int>(read_pod<std::uint32_t>(in, "output_dim"));
    a.activation = static_cast<Activation>(read_pod<std::uint8_t>(in, "activation"));
    a.parameterisation = static_cast<Parameterisation>(read_pod<std::uint8_t>(in, "param"));
    a.sigma_w = read_pod<double>(in, "sigma_w");
    a.sigma_b = read_pod<double>(in, "sigma_b");
    return a;
}

} // namespace detail

inline void save_baselearner(const std::string& path, const TrainedBaselearner& b) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_baselearner: cannot open " + path);
    detail::write_pod(out, kBundleMagic);
    detail::write_pod(out, kFormatVersion);
    detail::write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(b.method));
    std::uint8_t flags = 0;
    if (b.heteroscedastic) flags |= 1;
    if (b.delta) flags |= 2;
    if (b.theta_tilde) flags |= 4;
    detail::write_pod(out, flags);
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(b.target_dim));
    detail::write_pod<double>(out, b.sigma2);
    detail::write_pod<std::uint64_t>(out, b.member_seed_key);
    detail::write_arch(out, b.model);
    write_params(out, b.theta_hat);
    write_params(out, b.theta0);
    if (b.delta) {
        detail::write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(b.delta->method));
        write_params(out, b.delta->tangent);
    }
    if (b.theta_tilde) write_params(out, *b.theta_tilde);
    detail::write_matrix(out, b.noisy_targets);
}

inline TrainedBaselearner load_baselearner(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_baselearner: cannot open " + path);
    if (detail::read_pod<std::uint32_t>(in, "magic") != kBundleMagic)
        throw std::runtime_error("load_baselearner: bad magic");
    if (detail::read_pod<std::uint32_t>(in, "version") != kFormatVersion)
        throw std::runtime_error("load_baselearner: unsupported version");
    TrainedBaselearner b;
    b.method = static_cast<EnsembleMethod>(detail::read_pod<std::uint8_t>(in, "method"));
    const auto flags = detail::read_pod<std::uint8_t>(in, "flags");
    b.heteroscedastic = flags & 1;
    b.target_dim = static_cast<int>(detail::read_pod<std::uint32_t>(in, "target_dim"));
    b.sigma2 = detail::read_pod<double>(in, "sigma2");
    b.member_seed_key = detail::read_pod<std::uint64_t>(in, "member_seed_key");
    b.model = detail::read_arch(in);
    b.theta_hat = read_params(in);
    b.theta0 = read_params(in);
    if (flags & 2) {
        DeltaSpec d;
        d.method = static_cast<DeltaMethod>(detail::read_pod<std::uint8_t>(in, "delta method"));
        d.tangent = read_params(in);
        d.anchor = b.theta0;
        b.delta = std::move(d);
    }
    if (flags & 4) b.theta_tilde = read_params(in);
    b.noisy_targets = detail::read_matrix(in);
    return b;
}

// Raw row-major covariance export (magic "NTKC").
inline void save_covariance(const std::string& path, const Matrix& cov) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_covariance: cannot open " + path);
    detail::write_pod<std::uint32_t>(out, 0x434B544EU);
    detail::write_pod(out, kFormatVersion);
    detail::write_matrix(out, cov);
}

inline Matrix load_covariance(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_covariance: cannot open " + path);
    if (detail::read_pod<std::uint32_t>(in, "magic") != 0x434B544EU)
        throw std::runtime_error("load_covariance: bad magic");
    if (detail::read_pod<std::uint32_t>(in, "version") != kFormatVersion)
        throw std::runtime_error("load_covariance: unsupported version");
    return detail::read_matrix(in);
}

} // namespace ntkgp
