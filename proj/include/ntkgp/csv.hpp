// CSV emission. Every file starts with a comment line carrying the config
// digest and seed, then a header row naming the columns.

#pragma once

#include "ntkgp/numerics.hpp"

#include <fstream>
#include <iomanip>
#include <stdexcept>
#include <string>
#include <vector>

namespace ntkgp {

class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::string& digest, std::uint64_t seed,
              const std::vector<std::string>& columns)
        : out_(path), columns_(columns.size()) {
        if (!out_) throw std::runtime_error("CsvWriter: cannot open " + path);
        out_ << "# config_digest=" << digest << " seed=" << seed << "\n";
        for (std::size_t i = 0; i < columns.size(); ++i)
            out_ << columns[i] << (i + 1 < columns.size() ? "," : "\n");
        out_ << std::setprecision(17);
    }

    void comment(const std::string& line) { out_ << "# " << line << "\n"; }

    template <typename... Ts>
    void row(Ts... values) {
        static_assert(sizeof...(values) > 0);
        if (sizeof...(values) != columns_)
            throw std::invalid_argument("CsvWriter: wrong column count");
        std::size_t i = 0;
        ((out_ << values << (++i < sizeof...(values) ? "," : "\n")), ...);
    }

private:
    std::ofstream out_;
    std::size_t columns_;
};

// Kernel matrix export: an index-set header line (the inputs, row-major,
// coordinates ';'-separated) followed by the dense values.
inline void write_kernel_csv(const std::string& path, const std::string& digest,
                             std::uint64_t seed, const Matrix& x1, const Matrix& x2,
                             const Matrix& kernel) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_kernel_csv: cannot open " + path);
    out << std::setprecision(17);
    out << "# config_digest=" << digest << " seed=" << seed << "\n";
    auto write_points = [&](const char* tag, const Matrix& pts) {
        out << "# " << tag << "=";
        for (Eigen::Index i = 0; i < pts.rows(); ++i) {
            for (Eigen::Index j = 0; j < pts.cols(); ++j)
                out << pts(i, j) << (j + 1 < pts.cols() ? ";" : "");
            out << (i + 1 < pts.rows() ? " " : "");
        }
        out << "\n";
    };
    write_points("rows", x1);
    write_points("cols", x2);
    for (Eigen::Index i = 0; i < kernel.rows(); ++i)
        for (Eigen::Index j = 0; j < kernel.cols(); ++j)
            out << kernel(i, j) << (j + 1 < kernel.cols() ? "," : "\n");
}

} // namespace ntkgp
