#pragma once

// River-basin time series: area-weighted sums of a field over a basin's
// pixels, daily block averaging, and the relative RMSE used for basin-scale
// verification.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "lh/grid.hpp"

namespace lh {

struct BasinMask {
    std::string basin_id;
    Mask mask;
    std::vector<double> pixel_areas;  // per pixel, proportional to cos(lat)

    static BasinMask create(std::string id, Mask m, const std::vector<double>& lats_deg) {
        if (m.count() == 0) throw std::invalid_argument("BasinMask: empty basin " + id);
        if (lats_deg.size() != m.rows) throw std::invalid_argument("BasinMask: lat count");
        BasinMask b;
        b.basin_id = std::move(id);
        auto w = lat_weights(lats_deg);
        b.pixel_areas.resize(m.rows * m.cols);
        for (std::size_t i = 0; i < m.rows; ++i)
            for (std::size_t j = 0; j < m.cols; ++j) b.pixel_areas[i * m.cols + j] = w.w[i];
        b.mask = std::move(m);
        return b;
    }
};

/// One value per time step: sum over basin pixels of area_weight * value.
inline std::vector<double> basin_series(const std::vector<const Field*>& fields,
                                        const BasinMask& basin) {
    std::vector<double> out;
    out.reserve(fields.size());
    for (const Field* f : fields) {
        if (f->rows != basin.mask.rows || f->cols != basin.mask.cols)
            throw std::invalid_argument("basin_series: field/mask shape mismatch");
        double acc = 0.0;
        for (std::size_t i = 0; i < f->v.size(); ++i)
            if (basin.mask.v[i]) acc += basin.pixel_areas[i] * f->v[i];
        out.push_back(acc);
    }
    return out;
}

/// Non-overlapping block means over steps_per_day entries.  A trailing
/// remainder is dropped and flagged.
inline std::vector<double> daily_average(const std::vector<double>& series,
                                         std::size_t steps_per_day = 4,
                                         bool* remainder_dropped = nullptr) {
    if (steps_per_day == 0) throw std::invalid_argument("daily_average: steps_per_day == 0");
    const std::size_t days = series.size() / steps_per_day;
    if (remainder_dropped) *remainder_dropped = series.size() % steps_per_day != 0;
    std::vector<double> out(days, 0.0);
    for (std::size_t d = 0; d < days; ++d) {
        double acc = 0.0;
        for (std::size_t k = 0; k < steps_per_day; ++k) acc += series[d * steps_per_day + k];
        out[d] = acc / static_cast<double>(steps_per_day);
    }
    return out;
}

/// rmse(daily pred, daily ref) / mean |daily ref|.
inline double basin_relative_rmse(const std::vector<double>& pred_series,
                                  const std::vector<double>& ref_series,
                                  std::size_t steps_per_day = 4) {
    if (pred_series.size() != ref_series.size())
        throw std::invalid_argument("basin_relative_rmse: length mismatch");
    const auto dp = daily_average(pred_series, steps_per_day);
    const auto dr = daily_average(ref_series, steps_per_day);
    if (dp.empty()) throw std::invalid_argument("basin_relative_rmse: series shorter than a day");
    double sq = 0.0, absr = 0.0;
    for (std::size_t i = 0; i < dp.size(); ++i) {
        sq += (dp[i] - dr[i]) * (dp[i] - dr[i]);
        absr += std::abs(dr[i]);
    }
    const double norm = absr / static_cast<double>(dr.size());
    if (norm == 0.0) throw std::invalid_argument("basin_relative_rmse: zero reference");
    return std::sqrt(sq / static_cast<double>(dp.size())) / norm;
}

}  // namespace lh
