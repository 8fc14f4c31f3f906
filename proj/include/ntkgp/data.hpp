// Dataset container, synthetic data generators, and the IDX image/label
// file reader used for optional small image subsets.

#pragma once

#include "ntkgp/numerics.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ntkgp {

enum class Split : std::uint8_t { train, val, test, ood };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
        case Split::ood: return "ood";
    }
    return "?";
}

struct Standardisation {
    bool applied = false;
    Vector x_mean, x_scale;
    double y_mean = 0.0, y_scale = 1.0;
};

struct Dataset {
    Matrix x;                  // N x d
    Matrix y;                  // N x C regression targets (may be empty for label data)
    std::vector<int> labels;   // classification labels (empty for regression)
    std::vector<Split> split;  // per-row tag
    Vector point_noise;        // optional per-point sigma^2(x_n); empty if unused
    Standardisation standardisation;

    Eigen::Index rows() const { return x.rows(); }

    void check_finite() const {
        if (!x.allFinite() || (y.size() > 0 && !y.allFinite()))
            throw std::runtime_error("Dataset: NaN or Inf detected");
    }

    std::vector<Eigen::Index> rows_with(Split s) const {
        std::vector<Eigen::Index> idx;
        for (std::size_t i = 0; i < split.size(); ++i)
            if (split[i] == s) idx.push_back(static_cast<Eigen::Index>(i));
        return idx;
    }

    Matrix x_of(Split s) const { return take(x, rows_with(s)); }
    Matrix y_of(Split s) const { return take(y, rows_with(s)); }

    std::vector<int> labels_of(Split s) const {
        std::vector<int> out;
        for (std::size_t i = 0; i < split.size(); ++i)
            if (split[i] == s) out.push_back(labels[i]);
        return out;
    }

    static Matrix take(const Matrix& m, const std::vector<Eigen::Index>& idx) {
        Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
        for (std::size_t i = 0; i < idx.size(); ++i)
            out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
        return out;
    }
};

// Standardises inputs and targets to zero mean / unit variance using the
// train rows' statistics, recording the transform in the metadata.
inline void standardise_regression(Dataset& data) {
    const auto train_rows = data.rows_with(Split::train);
    if (train_rows.empty()) throw std::invalid_argument("standardise: no train rows");
    const Matrix xt = Dataset::take(data.x, train_rows);
    const Matrix yt = Dataset::take(data.y, train_rows);

    Standardisation st;
    st.applied = true;
    st.x_mean = xt.colwise().mean();
    st.x_scale = Vector(xt.cols());
    for (Eigen::Index j = 0; j < xt.cols(); ++j) {
        const double var = (xt.col(j).array() - st.x_mean[j]).square().mean();
        st.x_scale[j] = std::sqrt(std::max(var, 1e-12));
    }
    st.y_mean = yt.mean();
    st.y_scale = std::sqrt(std::max((yt.array() - st.y_mean).square().mean(), 1e-12));

    for (Eigen::Index j = 0; j < data.x.cols(); ++j)
        data.x.col(j) = (data.x.col(j).array() - st.x_mean[j]) / st.x_scale[j];
    data.y = (data.y.array() - st.y_mean) / st.y_scale;
    data.standardisation = st;
}

// ---------------------------------------------------------------------------
// Toy 1-D regression: y = x sin(x) + noise on two input clusters
// ---------------------------------------------------------------------------

struct Toy1dParams {
    // Cluster locations are not pinned anywhere authoritative; these defaults
    // are this project's choice and are echoed into run configs. They sit
    // inside the |x| < ~2 band where the default erf kernel still resolves
    // structure (it saturates further out).
    double cluster1_lo = -2.0, cluster1_hi = -0.6;
    double cluster2_lo = 0.6, cluster2_hi = 2.0;
    int points_per_cluster = 10;
    double noise_sigma = 0.1;
    int grid_points = 200;
    double grid_margin = 1.4;  // one cluster-width beyond the clusters each side
};

inline double toy1d_truth(double x) { return x * std::sin(x); }

// 20 training points in two clusters plus a dense evaluation grid tagged as
// test rows (grid targets are the noiseless truth).
inline Dataset gen_toy1d(RngStream& stream, const Toy1dParams& params = {}) {
    Dataset data;
    const int n_train = 2 * params.points_per_cluster;
    const int n = n_train + params.grid_points;
    data.x = Matrix(n, 1);
    data.y = Matrix(n, 1);
    data.split.assign(static_cast<std::size_t>(n), Split::train);

    for (int i = 0; i < params.points_per_cluster; ++i) {
        data.x(i, 0) = params.cluster1_lo +
                       (params.cluster1_hi - params.cluster1_lo) * stream.uniform();
        data.x(params.points_per_cluster + i, 0) =
            params.cluster2_lo + (params.cluster2_hi - params.cluster2_lo) * stream.uniform();
    }
    for (int i = 0; i < n_train; ++i)
        data.y(i, 0) = toy1d_truth(data.x(i, 0)) + params.noise_sigma * stream.gaussian();

    const double lo = params.cluster1_lo - params.grid_margin;
    const double hi = params.cluster2_hi + params.grid_margin;
    for (int i = 0; i < params.grid_points; ++i) {
        const double t = params.grid_points > 1
                             ? static_cast<double>(i) / (params.grid_points - 1) : 0.0;
        const double xv = lo + (hi - lo) * t;
        data.x(n_train + i, 0) = xv;
        data.y(n_train + i, 0) = toy1d_truth(xv);
        data.split[static_cast<std::size_t>(n_train + i)] = Split::test;
    }
    data.check_finite();
    return data;
}

// ---------------------------------------------------------------------------
// Synthetic two-class task with a displaced OOD cluster
// ---------------------------------------------------------------------------

struct SyntheticOodParams {
    int n_train = 200;
    int n_val = 50;
    int n_test = 200;
    int n_ood = 200;
    double class_separation = 4.0;  // class centers at (+-sep/2, 0)
    double cluster_std = 0.5;
    double ood_displacement = 6.0;  // shift along the second coordinate
};

// Two Gaussian class clusters in 2-D for train/val/test; OOD rows are drawn
// from the same mixture and then displaced, so zero displacement reproduces
// the in-distribution law exactly.
inline Dataset gen_synthetic_ood(RngStream& stream, const SyntheticOodParams& params = {}) {
    const int n = params.n_train + params.n_val + params.n_test + params.n_ood;
    Dataset data;
    data.x = Matrix(n, 2);
    data.y = Matrix(0, 0);
    data.labels.resize(static_cast<std::size_t>(n));
    data.split.resize(static_cast<std::size_t>(n));

    int at = 0;
    auto emit = [&](int count, Split tag, double displacement) {
        for (int i = 0; i < count; ++i, ++at) {
            const int cls = stream.uniform() < 0.5 ? 0 : 1;
            const double cx = (cls == 0 ? -0.5 : 0.5) * params.class_separation;
            data.x(at, 0) = cx + params.cluster_std * stream.gaussian();
            data.x(at, 1) = displacement + params.cluster_std * stream.gaussian();
            data.labels[static_cast<std::size_t>(at)] = cls;
            data.split[static_cast<std::size_t>(at)] = tag;
        }
    };
    emit(params.n_train, Split::train, 0.0);
    emit(params.n_val, Split::val, 0.0);
    emit(params.n_test, Split::test, 0.0);
    emit(params.n_ood, Split::ood, params.ood_displacement);
    data.check_finite();
    return data;
}

// ---------------------------------------------------------------------------
// IDX reader / writer
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t read_be_u32(std::istream& in, const std::string& path) {
    unsigned char buf[4];
    if (!in.read(reinterpret_cast<char*>(buf), 4))
        throw std::runtime_error("load_idx: truncated file: " + path);
    return (static_cast<std::uint32_t>(buf[0]) << 24) |
           (static_cast<std::uint32_t>(buf[1]) << 16) |
           (static_cast<std::uint32_t>(buf[2]) << 8) |
           static_cast<std::uint32_t>(buf[3]);
}

inline void write_be_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char buf[4] = {
        static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(buf), 4);
}

} // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

// Reads an IDX images file (magic 0x803) or labels file (magic 0x801).
// Images land in Dataset::x, one flattened row per image; labels in
// Dataset::labels. With standardise set (images only), pixels are scaled to
// zero mean / unit std over the whole file and the transform is recorded.
inline Dataset load_idx(const std::string& path, bool standardise = true) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_idx: cannot open " + path);
    const std::uint32_t magic = detail::read_be_u32(in, path);
    Dataset data;
    if (magic == kIdxImagesMagic) {
        const std::uint32_t count = detail::read_be_u32(in, path);
        const std::uint32_t rows = detail::read_be_u32(in, path);
        const std::uint32_t cols = detail::read_be_u32(in, path);
        const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
        data.x = Matrix(count, static_cast<Eigen::Index>(pixels));
        std::vector<unsigned char> buf(pixels);
        for (std::uint32_t i = 0; i < count; ++i) {
            if (!in.read(reinterpret_cast<char*>(buf.data()),
                         static_cast<std::streamsize>(pixels)))
                throw std::runtime_error("load_idx: truncated image data: " + path);
            for (std::size_t j = 0; j < pixels; ++j)
                data.x(i, static_cast<Eigen::Index>(j)) = static_cast<double>(buf[j]);
        }
        if (standardise && data.x.size() > 0) {
            const double mean = data.x.mean();
            const double sd = std::sqrt(std::max((data.x.array() - mean).square().mean(),
                                                 1e-12));
            data.x = (data.x.array() - mean) / sd;
            data.standardisation.applied = true;
            data.standardisation.x_mean = Vector::Constant(1, mean);
            data.standardisation.x_scale = Vector::Constant(1, sd);
        }
    } else if (magic == kIdxLabelsMagic) {
        const std::uint32_t count = detail::read_be_u32(in, path);
        data.labels.resize(count);
        std::vector<unsigned char> buf(count);
        if (count > 0 && !in.read(reinterpret_cast<char*>(buf.data()), count))
            throw std::runtime_error("load_idx: truncated label data: " + path);
        for (std::uint32_t i = 0; i < count; ++i) data.labels[i] = buf[i];
    } else {
        std::ostringstream os;
        os << "load_idx: bad magic 0x" << std::hex << magic << " in " << path;
        throw std::runtime_error(os.str());
    }
    data.split.assign(static_cast<std::size_t>(std::max<Eigen::Index>(
                          data.x.rows(), static_cast<Eigen::Index>(data.labels.size()))),
                      Split::train);
    return data;
}

inline void save_idx_images(const std::string& path, const std::vector<unsigned char>& pixels,
                            std::uint32_t count, std::uint32_t rows, std::uint32_t cols) {
    if (pixels.size() != static_cast<std::size_t>(count) * rows * cols)
        throw std::invalid_argument("save_idx_images: pixel count mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_idx_images: cannot open " + path);
    detail::write_be_u32(out, kIdxImagesMagic);
    detail::write_be_u32(out, count);
    detail::write_be_u32(out, rows);
    detail::write_be_u32(out, cols);
    out.write(reinterpret_cast<const char*>(pixels.data()),
              static_cast<std::streamsize>(pixels.size()));
}

inline void save_idx_labels(const std::string& path, const std::vector<unsigned char>& labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_idx_labels: cannot open " + path);
    detail::write_be_u32(out, kIdxLabelsMagic);
    detail::write_be_u32(out, static_cast<std::uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()),
              static_cast<std::streamsize>(labels.size()));
}

// Joins an images file and a labels file into one classification dataset.
inline Dataset load_idx_pair(const std::string& images_path, const std::string& labels_path,
                             bool standardise = true) {
    Dataset images = load_idx(images_path, standardise);
    Dataset labels = load_idx(labels_path, false);
    if (images.x.rows() != static_cast<Eigen::Index>(labels.labels.size())) {
        std::ostringstream os;
        os << "load_idx_pair: " << images.x.rows() << " images vs "
           << labels.labels.size() << " labels";
        throw std::runtime_error(os.str());
    }
    images.labels = std::move(labels.labels);
    return images;
}

} // namespace ntkgp
