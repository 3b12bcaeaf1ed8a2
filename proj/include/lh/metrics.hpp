#pragma once

// Forecast verification metrics: point metrics (MAE, RMSE, bias, PCC),
// distributional (Wasserstein-1, in physical and log space), neighborhood
// (FSS), categorical (SEEPS), relative normalizations, longitude energy
// spectra, and the patch-artifact diagnostic.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "lh/grid.hpp"
#include "lh/transforms.hpp"

namespace lh {

struct MetricConfig {
    int fss_window = 11;
    std::vector<double> fss_thresholds{1.0, 5.0};  // mm / 6h
    double seeps_dry_threshold = 0.25;             // mm / 6h
    std::string relative_normalizer = "mean_abs_ref";  // or "ref_std"
    bool lat_weighted = true;

    void validate() const {
        if (fss_window < 1 || fss_window % 2 == 0)
            throw std::invalid_argument("MetricConfig: fss window must be odd and >= 1");
        for (double a : fss_thresholds)
            if (a <= 0.0) throw std::invalid_argument("MetricConfig: thresholds must be > 0");
        if (seeps_dry_threshold <= 0.0)
            throw std::invalid_argument("MetricConfig: dry threshold must be > 0");
        if (relative_normalizer != "mean_abs_ref" && relative_normalizer != "ref_std")
            throw std::invalid_argument("MetricConfig: unknown relative normalizer");
    }
};

namespace detail {

struct WeightedAccum {
    double num = 0.0;
    double den = 0.0;
};

template <typename F>
inline void for_each_included(const Field& pred, const Field& ref, const LatWeights* weights,
                              const Mask* mask, F&& fn) {
    require_same_shape(pred, ref, "metric");
    if (weights && weights->w.size() != pred.rows)
        throw std::invalid_argument("metric: weight count != rows");
    if (mask && (mask->rows != pred.rows || mask->cols != pred.cols))
        throw std::invalid_argument("metric: mask shape mismatch");
    for (std::size_t i = 0; i < pred.rows; ++i) {
        const double wi = weights ? weights->w[i] : 1.0;
        for (std::size_t j = 0; j < pred.cols; ++j) {
            if (mask && mask->v[i * pred.cols + j] == 0) continue;
            fn(pred.at(i, j), ref.at(i, j), wi);
        }
    }
}

}  // namespace detail

inline double mae(const Field& pred, const Field& ref, const LatWeights* weights = nullptr,
                  const Mask* mask = nullptr) {
    detail::WeightedAccum a;
    detail::for_each_included(pred, ref, weights, mask, [&](double p, double r, double w) {
        a.num += w * std::abs(p - r);
        a.den += w;
    });
    if (a.den == 0.0) throw std::invalid_argument("mae: all pixels masked");
    return a.num / a.den;
}

inline double rmse(const Field& pred, const Field& ref, const LatWeights* weights = nullptr,
                   const Mask* mask = nullptr) {
    detail::WeightedAccum a;
    detail::for_each_included(pred, ref, weights, mask, [&](double p, double r, double w) {
        a.num += w * (p - r) * (p - r);
        a.den += w;
    });
    if (a.den == 0.0) throw std::invalid_argument("rmse: all pixels masked");
    return std::sqrt(a.num / a.den);
}

inline double bias(const Field& pred, const Field& ref, const LatWeights* weights = nullptr,
                   const Mask* mask = nullptr) {
    detail::WeightedAccum a;
    detail::for_each_included(pred, ref, weights, mask, [&](double p, double r, double w) {
        a.num += w * (p - r);
        a.den += w;
    });
    if (a.den == 0.0) throw std::invalid_argument("bias: all pixels masked");
    return a.num / a.den;
}

/// Sample Pearson correlation over included pixels (unweighted, following
/// the metric's textbook definition).
inline double pcc(const Field& pred, const Field& ref, const Mask* mask = nullptr) {
    double sp = 0.0, sr = 0.0;
    std::size_t n = 0;
    detail::for_each_included(pred, ref, nullptr, mask, [&](double p, double r, double) {
        sp += p;
        sr += r;
        ++n;
    });
    if (n == 0) throw std::invalid_argument("pcc: all pixels masked");
    const double mp = sp / static_cast<double>(n), mr = sr / static_cast<double>(n);
    double cov = 0.0, vp = 0.0, vr = 0.0;
    detail::for_each_included(pred, ref, nullptr, mask, [&](double p, double r, double) {
        cov += (p - mp) * (r - mr);
        vp += (p - mp) * (p - mp);
        vr += (r - mr) * (r - mr);
    });
    if (vp == 0.0 || vr == 0.0)
        throw std::invalid_argument("pcc: zero variance (correlation undefined)");
    return cov / (std::sqrt(vp) * std::sqrt(vr));
}

/// Wasserstein-1 between empirical distributions.  Equal-sized samples use
/// the sorted-difference identity; the general case integrates the gap
/// between the two step CDFs.
inline double w1(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("w1: empty sample set");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a.size() == b.size()) {
        double acc = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
        return acc / static_cast<double>(a.size());
    }
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    std::size_t ia = 0, ib = 0;
    double total = 0.0;
    double x = std::min(a[0], b[0]);
    while (ia < a.size() || ib < b.size()) {
        const double fa = static_cast<double>(ia) / na;
        const double fb = static_cast<double>(ib) / nb;
        double next;
        if (ib >= b.size() || (ia < a.size() && a[ia] <= b[ib]))
            next = a[ia];
        else
            next = b[ib];
        total += std::abs(fa - fb) * (next - x);
        x = next;
        while (ia < a.size() && a[ia] == x) ++ia;
        while (ib < b.size() && b[ib] == x) ++ib;
    }
    return total;
}

inline std::vector<double> field_samples(const Field& f, const Mask* mask = nullptr) {
    std::vector<double> out;
    out.reserve(f.v.size());
    for (std::size_t i = 0; i < f.v.size(); ++i)
        if (!mask || mask->v[i] != 0) out.push_back(f.v[i]);
    return out;
}

inline double w1_fields(const Field& pred, const Field& ref, const Mask* mask = nullptr) {
    require_same_shape(pred, ref, "w1");
    return w1(field_samples(pred, mask), field_samples(ref, mask));
}

inline double w1_log_fields(const Field& pred, const Field& ref, double eps = 1e-5,
                            const Mask* mask = nullptr) {
    return w1_fields(log_precip(pred, eps), log_precip(ref, eps), mask);
}

struct FssResult {
    double value = 1.0;
    bool degenerate = false;  // both fields entirely below threshold
};

/// Fraction Skill Score with sliding windows: longitude-periodic columns,
/// latitude-truncated rows.  Windows wider than the grid use each source
/// column once.  Integer counts via prefix sums keep the window fractions
/// exact, so an enumeration oracle matches bit-for-bit.
inline FssResult fss_detail(const Field& pred, const Field& ref, double alpha, int window) {
    require_same_shape(pred, ref, "fss");
    if (window < 1 || window % 2 == 0)
        throw std::invalid_argument("fss: window must be odd and >= 1");
    const std::size_t H = pred.rows, W = pred.cols;
    const int r = window / 2;
    const std::size_t ncols = std::min<std::size_t>(static_cast<std::size_t>(window), W);

    // Extended-column binarized images: column e represents source column
    // (e - r mod W), so a window's columns are contiguous.
    const std::size_t We = W + 2 * static_cast<std::size_t>(r);
    std::vector<long> bp((H + 1) * (We + 1), 0), br((H + 1) * (We + 1), 0);
    auto idx = [&](std::size_t i, std::size_t e) { return i * (We + 1) + e; };
    for (std::size_t i = 0; i < H; ++i)
        for (std::size_t e = 0; e < We; ++e) {
            long c = (static_cast<long>(e) - r) % static_cast<long>(W);
            if (c < 0) c += static_cast<long>(W);
            const std::size_t j = static_cast<std::size_t>(c);
            const long vp = pred.at(i, j) >= alpha ? 1 : 0;
            const long vr = ref.at(i, j) >= alpha ? 1 : 0;
            bp[idx(i + 1, e + 1)] = vp + bp[idx(i, e + 1)] + bp[idx(i + 1, e)] - bp[idx(i, e)];
            br[idx(i + 1, e + 1)] = vr + br[idx(i, e + 1)] + br[idx(i + 1, e)] - br[idx(i, e)];
        }

    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < H; ++i) {
        const std::size_t i0 = i >= static_cast<std::size_t>(r) ? i - r : 0;
        const std::size_t i1 = std::min(i + static_cast<std::size_t>(r), H - 1);
        const double count = static_cast<double>((i1 - i0 + 1) * ncols);
        for (std::size_t j = 0; j < W; ++j) {
            const std::size_t e0 = j;  // extended col of source (j - r)
            const std::size_t e1 = e0 + ncols;
            const long cp =
                bp[idx(i1 + 1, e1)] - bp[idx(i0, e1)] - bp[idx(i1 + 1, e0)] + bp[idx(i0, e0)];
            const long cr =
                br[idx(i1 + 1, e1)] - br[idx(i0, e1)] - br[idx(i1 + 1, e0)] + br[idx(i0, e0)];
            const double fp = static_cast<double>(cp) / count;
            const double fr = static_cast<double>(cr) / count;
            num += (fp - fr) * (fp - fr);
            den += fp * fp + fr * fr;
        }
    }
    if (den == 0.0) return FssResult{1.0, true};
    return FssResult{1.0 - num / den, false};
}

inline double fss(const Field& pred, const Field& ref, double alpha, int window) {
    return fss_detail(pred, ref, alpha, window).value;
}

/// Per-pixel SEEPS climatology: dry probability p1 and the wet threshold
/// splitting wet events light:heavy = 2:1.  Pixels with p1 outside
/// (0.03, 0.97) or without a usable wet quantile are excluded.
struct SeepsClimatology {
    double dry_threshold = 0.25;
    Field p1;
    Field wet_threshold;
    Mask valid;

    /// 3x3 penalty matrix at pixel i, rows = forecast category, columns =
    /// observed category (dry, light, heavy).  From Rodwell et al. (2010);
    /// every constant forecast has expected score 1 under climatology.
    std::array<double, 9> matrix_at(std::size_t i) const {
        const double p = p1.v[i];
        std::array<double, 9> s{};
        s[0 * 3 + 0] = 0.0;
        s[0 * 3 + 1] = 0.5 / (1.0 - p);
        s[0 * 3 + 2] = 2.0 / (1.0 - p);
        s[1 * 3 + 0] = 0.5 / p;
        s[1 * 3 + 1] = 0.0;
        s[1 * 3 + 2] = 1.5 / (1.0 - p);
        s[2 * 3 + 0] = 0.5 / p + 1.5 / (2.0 + p);
        s[2 * 3 + 1] = 1.5 / (2.0 + p);
        s[2 * 3 + 2] = 0.0;
        return s;
    }

    int category(std::size_t i, double x) const {
        if (x < dry_threshold) return 0;
        return x < wet_threshold.v[i] ? 1 : 2;
    }

    static SeepsClimatology from_training(const std::vector<const Field*>& refs,
                                          double dry_threshold = 0.25, double p1_lo = 0.03,
                                          double p1_hi = 0.97) {
        if (refs.empty()) throw std::invalid_argument("SeepsClimatology: no training fields");
        const std::size_t H = refs[0]->rows, W = refs[0]->cols, n = refs.size();
        SeepsClimatology c;
        c.dry_threshold = dry_threshold;
        c.p1 = Field(H, W, 0.0);
        c.wet_threshold = Field(H, W, 0.0);
        c.valid = Mask(H, W, 0);
        std::vector<double> wet;
        for (std::size_t px = 0; px < H * W; ++px) {
            wet.clear();
            std::size_t dry = 0;
            for (const Field* f : refs) {
                const double x = f->v[px];
                if (x < dry_threshold)
                    ++dry;
                else
                    wet.push_back(x);
            }
            const double p = static_cast<double>(dry) / static_cast<double>(n);
            c.p1.v[px] = p;
            if (p <= p1_lo || p >= p1_hi || wet.size() < 2) continue;
            std::sort(wet.begin(), wet.end());
            // Linear-interpolation quantile at 2/3 of the wet distribution.
            const double pos = (static_cast<double>(wet.size()) - 1.0) * (2.0 / 3.0);
            const std::size_t lo = static_cast<std::size_t>(pos);
            const double frac = pos - static_cast<double>(lo);
            const double thr = lo + 1 < wet.size() ? wet[lo] + frac * (wet[lo + 1] - wet[lo])
                                                   : wet[lo];
            if (thr <= dry_threshold) continue;
            c.wet_threshold.v[px] = thr;
            c.valid.v[px] = 1;
        }
        return c;
    }
};

/// Latitude-weighted mean penalty over valid pixels.  0 is a perfect score.
inline double seeps(const Field& pred, const Field& ref, const SeepsClimatology& clim,
                    const LatWeights* weights = nullptr) {
    require_same_shape(pred, ref, "seeps");
    if (clim.p1.rows != pred.rows || clim.p1.cols != pred.cols)
        throw std::invalid_argument("seeps: climatology does not cover the grid");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < pred.rows; ++i) {
        const double wi = weights ? weights->w[i] : 1.0;
        for (std::size_t j = 0; j < pred.cols; ++j) {
            const std::size_t px = i * pred.cols + j;
            if (!clim.valid.v[px]) continue;
            const auto m = clim.matrix_at(px);
            const int f = clim.category(px, pred.v[px]);
            const int v = clim.category(px, ref.v[px]);
            num += wi * m[static_cast<std::size_t>(f * 3 + v)];
            den += wi;
        }
    }
    if (den == 0.0) throw std::invalid_argument("seeps: no valid climatology pixels");
    return num / den;
}

/// metric / normalizer(ref); default normalizer is the lat-weighted mean
/// absolute reference.
inline double relative(double metric_value, const Field& ref, const LatWeights* weights = nullptr,
                       const Mask* mask = nullptr,
                       const std::string& normalizer = "mean_abs_ref") {
    double norm;
    if (normalizer == "mean_abs_ref") {
        detail::WeightedAccum a;
        detail::for_each_included(ref, ref, weights, mask, [&](double, double r, double w) {
            a.num += w * std::abs(r);
            a.den += w;
        });
        if (a.den == 0.0) throw std::invalid_argument("relative: all pixels masked");
        norm = a.num / a.den;
    } else if (normalizer == "ref_std") {
        detail::WeightedAccum a;
        detail::for_each_included(ref, ref, weights, mask, [&](double, double r, double w) {
            a.num += w * r;
            a.den += w;
        });
        if (a.den == 0.0) throw std::invalid_argument("relative: all pixels masked");
        const double mean = a.num / a.den;
        detail::WeightedAccum b;
        detail::for_each_included(ref, ref, weights, mask, [&](double, double r, double w) {
            b.num += w * (r - mean) * (r - mean);
            b.den += w;
        });
        norm = std::sqrt(b.num / b.den);
    } else {
        throw std::invalid_argument("relative: unknown normalizer " + normalizer);
    }
    if (norm == 0.0) throw std::invalid_argument("relative: zero normalizer");
    return metric_value / norm;
}

/// Power spectrum along longitude: rows are weighted, transformed, squared,
/// then averaged over rows and time.  Output length W/2 + 1.
inline std::vector<double> energy_spectrum(const std::vector<const Field*>& fields,
                                           const LatWeights& weights) {
    if (fields.empty()) throw std::invalid_argument("energy_spectrum: no fields");
    const std::size_t H = fields[0]->rows, W = fields[0]->cols;
    if (W < 2) throw std::invalid_argument("energy_spectrum: need W >= 2");
    if (weights.w.size() != H) throw std::invalid_argument("energy_spectrum: weight count");
    const std::size_t K = W / 2 + 1;
    constexpr double two_pi = 2.0 * 3.14159265358979323846;

    // Small grids: direct DFT with precomputed twiddles.
    std::vector<double> ck(K * W), sk(K * W);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t j = 0; j < W; ++j) {
            const double ang = two_pi * static_cast<double>(k) * static_cast<double>(j) /
                               static_cast<double>(W);
            ck[k * W + j] = std::cos(ang);
            sk[k * W + j] = std::sin(ang);
        }

    std::vector<double> power(K, 0.0);
    std::vector<double> row(W);
    for (const Field* f : fields) {
        if (f->rows != H || f->cols != W)
            throw std::invalid_argument("energy_spectrum: field shape mismatch");
        for (std::size_t i = 0; i < H; ++i) {
            for (std::size_t j = 0; j < W; ++j) row[j] = weights.w[i] * f->at(i, j);
            for (std::size_t k = 0; k < K; ++k) {
                double re = 0.0, im = 0.0;
                const double* cc = ck.data() + k * W;
                const double* ss = sk.data() + k * W;
                for (std::size_t j = 0; j < W; ++j) {
                    re += row[j] * cc[j];
                    im -= row[j] * ss[j];
                }
                power[k] += (re * re + im * im) / static_cast<double>(W);
            }
        }
    }
    const double denom = static_cast<double>(H * fields.size());
    for (auto& p : power) p /= denom;
    return power;
}

namespace detail {

// Mean absolute jump across patch boundaries over mean jump across interior
// pixel boundaries.  Longitude wraps (always a patch boundary since P | W);
// latitude does not.
inline double jump_ratio(const Field& f, std::size_t P) {
    double bsum = 0.0, isum = 0.0;
    std::size_t bn = 0, in_ = 0;
    for (std::size_t i = 0; i < f.rows; ++i)
        for (std::size_t j = 0; j < f.cols; ++j) {
            const std::size_t je = (j + 1) % f.cols;
            const double dh = std::abs(f.at(i, je) - f.at(i, j));
            if ((j + 1) % P == 0) {
                bsum += dh;
                ++bn;
            } else {
                isum += dh;
                ++in_;
            }
            if (i + 1 < f.rows) {
                const double dv = std::abs(f.at(i + 1, j) - f.at(i, j));
                if ((i + 1) % P == 0) {
                    bsum += dv;
                    ++bn;
                } else {
                    isum += dv;
                    ++in_;
                }
            }
        }
    const double bmean = bn ? bsum / static_cast<double>(bn) : 0.0;
    const double imean = in_ ? isum / static_cast<double>(in_) : 0.0;
    if (bmean == 0.0 && imean == 0.0) return 1.0;  // featureless field
    return bmean / imean;  // +inf when the field is piecewise patch-constant
}

}  // namespace detail

/// Patch-artifact diagnostic: 1 = no artifact, > 1 = jumps concentrate on
/// patch boundaries relative to the reference.
inline double patchiness(const Field& pred, const Field& ref, std::size_t P) {
    require_same_shape(pred, ref, "patchiness");
    if (P == 0 || pred.rows % P != 0 || pred.cols % P != 0)
        throw std::invalid_argument("patchiness: P must divide grid dimensions");
    const double rp = detail::jump_ratio(pred, P);
    const double rr = detail::jump_ratio(ref, P);
    if (std::isinf(rp) && std::isinf(rr)) return 1.0;
    return rp / rr;
}

/// Named metric values plus the configuration that produced them.
struct MetricReport {
    std::map<std::string, double> values;
    std::map<std::string, bool> flags;
    std::map<std::string, std::string> config;
    std::size_t sample_count = 0;
};

}  // namespace lh
