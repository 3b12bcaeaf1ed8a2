#pragma once

#include <cmath>
#include <stdexcept>

#include "lh/grid.hpp"

namespace lh {

struct WmaeResult {
    double loss = 0.0;
    Field grad;  // d(loss)/d(pred)
};

/// Latitude-weighted, optionally masked mean absolute error:
///   sum_ij w_i m_ij |pred - ref| / sum_ij w_i m_ij
/// Subgradient at exact ties is 0.  The weighted-count normalization keeps
/// masked and unmasked variables on a comparable loss scale.
inline WmaeResult wmae_loss(const Field& pred, const Field& ref, const LatWeights& weights,
                            const Mask* mask = nullptr, bool want_grad = true) {
    require_same_shape(pred, ref, "wmae_loss");
    if (weights.w.size() != pred.rows)
        throw std::invalid_argument("wmae_loss: weight count != rows");
    if (mask && (mask->rows != pred.rows || mask->cols != pred.cols))
        throw std::invalid_argument("wmae_loss: mask shape mismatch");

    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < pred.rows; ++i) {
        const double wi = weights.w[i];
        for (std::size_t j = 0; j < pred.cols; ++j) {
            const double m = mask ? static_cast<double>(mask->v[i * pred.cols + j]) : 1.0;
            if (m == 0.0) continue;
            num += wi * m * std::abs(pred.at(i, j) - ref.at(i, j));
            den += wi * m;
        }
    }
    if (den == 0.0) throw std::invalid_argument("wmae_loss: empty mask (no contributing pixels)");

    WmaeResult r;
    r.loss = num / den;
    if (want_grad) {
        r.grad = Field(pred.rows, pred.cols, 0.0);
        for (std::size_t i = 0; i < pred.rows; ++i) {
            const double wi = weights.w[i];
            for (std::size_t j = 0; j < pred.cols; ++j) {
                const double m = mask ? static_cast<double>(mask->v[i * pred.cols + j]) : 1.0;
                if (m == 0.0) continue;
                const double d = pred.at(i, j) - ref.at(i, j);
                const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                r.grad.at(i, j) = wi * m * s / den;
            }
        }
    }
    return r;
}

}  // namespace lh
