#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "lh/grid.hpp"

namespace lh {

struct TransformConfig {
    double epsilon = 1e-5;            // log-precip offset, in field units (mm)
    int accumulation_window = 2;      // samples summed per accumulation
    std::vector<double> layer_thicknesses;

    void validate() const {
        if (epsilon <= 0.0) throw std::invalid_argument("TransformConfig: epsilon must be > 0");
        if (accumulation_window < 1)
            throw std::invalid_argument("TransformConfig: accumulation window must be >= 1");
        for (double t : layer_thicknesses)
            if (t <= 0.0) throw std::invalid_argument("TransformConfig: thicknesses must be > 0");
    }
};

/// y = ln(1 + x/eps).  Strictly monotone; log1p keeps the inverse accurate
/// down to x << eps.
inline double log_precip_value(double x, double eps = 1e-5) {
    if (x < 0.0) throw std::invalid_argument("log_precip: negative input");
    return std::log1p(x / eps);
}

inline double inv_log_precip_value(double y, double eps = 1e-5) {
    return eps * std::expm1(y);
}

inline Field log_precip(const Field& x, double eps = 1e-5) {
    Field y(x.rows, x.cols);
    for (std::size_t i = 0; i < x.v.size(); ++i) y.v[i] = log_precip_value(x.v[i], eps);
    return y;
}

inline Field inv_log_precip(const Field& y, double eps = 1e-5) {
    Field x(y.rows, y.cols);
    for (std::size_t i = 0; i < y.v.size(); ++i) x.v[i] = inv_log_precip_value(y.v[i], eps);
    return x;
}

/// Element-wise sum of k consecutive samples (temporal accumulation).
inline Field accumulate(const std::vector<Field>& samples) {
    if (samples.empty()) throw std::invalid_argument("accumulate: no samples");
    Field out(samples[0].rows, samples[0].cols, 0.0);
    for (const auto& s : samples) {
        require_same_shape(out, s, "accumulate");
        for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += s.v[i];
    }
    return out;
}

inline Field composite_sum(const std::vector<Field>& fields) { return accumulate(fields); }

inline Field composite_weighted(const std::vector<Field>& fields,
                                const std::vector<double>& thicknesses) {
    if (fields.empty()) throw std::invalid_argument("composite_weighted: no fields");
    if (fields.size() != thicknesses.size())
        throw std::invalid_argument("composite_weighted: weight count mismatch");
    Field out(fields[0].rows, fields[0].cols, 0.0);
    for (std::size_t k = 0; k < fields.size(); ++k) {
        require_same_shape(out, fields[k], "composite_weighted");
        if (thicknesses[k] <= 0.0)
            throw std::invalid_argument("composite_weighted: non-positive thickness");
        for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += thicknesses[k] * fields[k].v[i];
    }
    return out;
}

namespace detail {

// Bracketing index and interpolation fraction along a monotone axis,
// clamped to the ends.  Works for ascending or descending axes.
inline void axis_locate(const std::vector<double>& axis, double x, std::size_t& i0, double& frac) {
    const std::size_t n = axis.size();
    const bool asc = n < 2 || axis[1] > axis[0];
    if (n == 1) { i0 = 0; frac = 0.0; return; }
    const double lo = asc ? axis.front() : axis.back();
    const double hi = asc ? axis.back() : axis.front();
    const double xc = std::clamp(x, lo, hi);
    std::size_t a = 0, b = n - 1;
    while (b - a > 1) {
        const std::size_t mid = (a + b) / 2;
        const bool left = asc ? (xc < axis[mid]) : (xc > axis[mid]);
        (left ? b : a) = mid;
    }
    i0 = a;
    const double denom = axis[a + 1] - axis[a];
    frac = denom == 0.0 ? 0.0 : (xc - axis[a]) / denom;
}

}  // namespace detail

/// Bilinear interpolation onto new target axes.  Longitude is treated as
/// periodic with period 360; latitude targets outside the source rows are an
/// error.  Exact (up to roundoff) on fields affine in (lat, lon).
inline Field bilinear_regrid(const Field& f, const std::vector<double>& src_lats,
                             const std::vector<double>& src_lons,
                             const std::vector<double>& new_lats,
                             const std::vector<double>& new_lons) {
    if (src_lats.size() != f.rows || src_lons.size() != f.cols)
        throw std::invalid_argument("bilinear_regrid: source axes do not match field");
    const double lat_min = std::min(src_lats.front(), src_lats.back());
    const double lat_max = std::max(src_lats.front(), src_lats.back());
    for (double la : new_lats)
        if (la < lat_min - 1e-9 || la > lat_max + 1e-9)
            throw std::invalid_argument("bilinear_regrid: target latitude out of range");

    const std::size_t W = f.cols;
    const double lon_step = W >= 2 ? src_lons[1] - src_lons[0] : 360.0;
    const double lon0 = src_lons[0];

    Field out(new_lats.size(), new_lons.size());
    for (std::size_t i = 0; i < new_lats.size(); ++i) {
        std::size_t i0;
        double fy;
        detail::axis_locate(src_lats, new_lats[i], i0, fy);
        for (std::size_t j = 0; j < new_lons.size(); ++j) {
            // Periodic longitude: reduce to [lon0, lon0 + 360) and index by
            // uniform spacing, wrapping the right neighbor.
            double x = std::fmod(new_lons[j] - lon0, 360.0);
            if (x < 0.0) x += 360.0;
            const double u = x / lon_step;
            std::size_t j0 = static_cast<std::size_t>(u);
            double fx = u - static_cast<double>(j0);
            if (j0 >= W) { j0 = W - 1; fx = 1.0; }
            const std::size_t j1 = (j0 + 1) % W;

            const double a = f.at(i0, j0), b = f.at(i0, j1);
            const double c = f.at(i0 + 1 < f.rows ? i0 + 1 : i0, j0);
            const double d = f.at(i0 + 1 < f.rows ? i0 + 1 : i0, j1);
            const double top = a + fx * (b - a);
            const double bot = c + fx * (d - c);
            out.at(i, j) = top + fy * (bot - top);
        }
    }
    return out;
}

}  // namespace lh
