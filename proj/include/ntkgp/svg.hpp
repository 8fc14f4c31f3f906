// Minimal static SVG rendering for line plots with uncertainty bands.

#pragma once

#include "ntkgp/numerics.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace ntkgp {

class SvgPlot {
public:
    SvgPlot(double width = 760, double height = 420) : w_(width), h_(height) {}

    void set_range(double x_lo, double x_hi, double y_lo, double y_hi) {
        x_lo_ = x_lo;
        x_hi_ = x_hi;
        y_lo_ = y_lo;
        y_hi_ = y_hi;
    }

    void auto_range_y(const Vector& values, double pad = 0.1) {
        const double lo = values.minCoeff(), hi = values.maxCoeff();
        const double span = std::max(hi - lo, 1e-9);
        y_lo_ = std::min(y_lo_, lo - pad * span);
        y_hi_ = std::max(y_hi_, hi + pad * span);
    }

    void band(const Vector& x, const Vector& lower, const Vector& upper,
              const std::string& fill) {
        std::ostringstream pts;
        for (Eigen::Index i = 0; i < x.size(); ++i)
            pts << px(x[i]) << "," << py(upper[i]) << " ";
        for (Eigen::Index i = x.size(); i-- > 0;)
            pts << px(x[i]) << "," << py(lower[i]) << " ";
        body_ << "<polygon points=\"" << pts.str() << "\" fill=\"" << fill
              << "\" fill-opacity=\"0.25\" stroke=\"none\"/>\n";
    }

    void line(const Vector& x, const Vector& y, const std::string& stroke,
              const std::string& dash = "") {
        body_ << "<polyline points=\"";
        for (Eigen::Index i = 0; i < x.size(); ++i)
            body_ << px(x[i]) << "," << py(y[i]) << " ";
        body_ << "\" fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"1.8\"";
        if (!dash.empty()) body_ << " stroke-dasharray=\"" << dash << "\"";
        body_ << "/>\n";
    }

    void dots(const Vector& x, const Vector& y, const std::string& fill) {
        for (Eigen::Index i = 0; i < x.size(); ++i)
            body_ << "<circle cx=\"" << px(x[i]) << "\" cy=\"" << py(y[i])
                  << "\" r=\"3\" fill=\"" << fill << "\"/>\n";
    }

    void label(double fx, double fy, const std::string& text, const std::string& fill) {
        body_ << "<text x=\"" << margin_ + fx * (w_ - 2 * margin_) << "\" y=\""
              << margin_ + fy * (h_ - 2 * margin_) << "\" font-size=\"12\" fill=\"" << fill
              << "\" font-family=\"sans-serif\">" << text << "</text>\n";
    }

    void save(const std::string& path, const std::string& title) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("SvgPlot: cannot open " + path);
        out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w_ << "\" height=\""
            << h_ << "\" viewBox=\"0 0 " << w_ << " " << h_ << "\">\n"
            << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
            << "<text x=\"" << w_ / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\" "
               "font-family=\"sans-serif\">" << title << "</text>\n"
            << "<rect x=\"" << margin_ << "\" y=\"" << margin_ << "\" width=\""
            << w_ - 2 * margin_ << "\" height=\"" << h_ - 2 * margin_
            << "\" fill=\"none\" stroke=\"#888\"/>\n"
            << body_.str() << "</svg>\n";
    }

private:
    double px(double x) const {
        return margin_ + (x - x_lo_) / (x_hi_ - x_lo_) * (w_ - 2 * margin_);
    }
    double py(double y) const {
        return h_ - margin_ - (y - y_lo_) / (y_hi_ - y_lo_) * (h_ - 2 * margin_);
    }

    double w_, h_;
    double margin_ = 42;
    double x_lo_ = 0, x_hi_ = 1, y_lo_ = 0, y_hi_ = 1;
    std::ostringstream body_;
};

} // namespace ntkgp
