#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lh {

/// Plain H x W raster of doubles, row-major, row 0 = northernmost latitude.
/// Workhorse container for hot paths; no invariants beyond matching size.
struct Field {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> v;

    Field() = default;
    Field(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}

    double& at(std::size_t i, std::size_t j) { return v[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
    std::size_t size() const { return v.size(); }

    bool same_shape(const Field& o) const { return rows == o.rows && cols == o.cols; }
};

inline void require_same_shape(const Field& a, const Field& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch (" +
                                    std::to_string(a.rows) + "x" + std::to_string(a.cols) + " vs " +
                                    std::to_string(b.rows) + "x" + std::to_string(b.cols) + ")");
}

/// Binary land/valid mask; values are exactly 0 or 1.
struct Mask {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> v;

    Mask() = default;
    Mask(std::size_t r, std::size_t c, std::uint8_t fill = 1) : rows(r), cols(c), v(r * c, fill) {
        if (fill > 1) throw std::invalid_argument("Mask: values must be 0 or 1");
    }

    static Mask from_field(const Field& f) {
        Mask m(f.rows, f.cols, 0);
        for (std::size_t i = 0; i < f.v.size(); ++i) {
            if (f.v[i] != 0.0 && f.v[i] != 1.0)
                throw std::invalid_argument("Mask: values must be 0 or 1");
            m.v[i] = static_cast<std::uint8_t>(f.v[i]);
        }
        return m;
    }

    std::size_t count() const {
        std::size_t n = 0;
        for (auto b : v) n += b;
        return n;
    }
};

/// Per-row latitude weights, normalized to mean 1.
struct LatWeights {
    std::vector<double> w;
};

/// w_i = cos(lat_i) / mean_j cos(lat_j).  Weights compensate for the
/// poleward shrinking of lat-lon grid cells; mean is exactly 1 by construction.
inline LatWeights lat_weights(const std::vector<double>& lats_deg) {
    if (lats_deg.empty()) throw std::invalid_argument("lat_weights: empty latitude array");
    constexpr double deg2rad = 3.14159265358979323846 / 180.0;
    std::vector<double> c(lats_deg.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < lats_deg.size(); ++i) {
        if (std::abs(lats_deg[i]) > 90.0)
            throw std::invalid_argument("lat_weights: |latitude| > 90");
        c[i] = std::cos(lats_deg[i] * deg2rad);
        sum += c[i];
    }
    const double mean = sum / static_cast<double>(c.size());
    if (mean <= 0.0) throw std::invalid_argument("lat_weights: degenerate latitudes");
    for (auto& x : c) x /= mean;
    return LatWeights{std::move(c)};
}

/// One physical variable on a regular lat-lon grid at one time step.
/// Validates on construction: finite data, strictly monotone lats,
/// uniformly spaced lons.
struct GridField {
    std::string var_id;
    long time_index = 0;  // each step = 6 simulated hours
    std::vector<double> lats;
    std::vector<double> lons;
    Field data;
    std::string units;

    GridField() = default;
    GridField(std::string id, long t, std::vector<double> la, std::vector<double> lo, Field d,
              std::string u)
        : var_id(std::move(id)), time_index(t), lats(std::move(la)), lons(std::move(lo)),
          data(std::move(d)), units(std::move(u)) {
        validate();
    }

    void validate() const {
        if (data.rows < 1 || data.cols < 1)
            throw std::invalid_argument("GridField: empty grid");
        if (lats.size() != data.rows || lons.size() != data.cols)
            throw std::invalid_argument("GridField: coordinate/data size mismatch");
        const bool inc = lats.size() < 2 || lats[1] > lats[0];
        for (std::size_t i = 1; i < lats.size(); ++i) {
            const bool step_inc = lats[i] > lats[i - 1];
            if (step_inc != inc || lats[i] == lats[i - 1])
                throw std::invalid_argument("GridField: latitudes not strictly monotone");
        }
        if (lons.size() >= 2) {
            const double d0 = lons[1] - lons[0];
            for (std::size_t j = 1; j < lons.size(); ++j) {
                const double d = lons[j] - lons[j - 1];
                if (std::abs(d - d0) > 1e-9 * std::max(1.0, std::abs(d0)))
                    throw std::invalid_argument("GridField: longitudes not uniformly spaced");
            }
        }
        for (double x : data.v)
            if (!std::isfinite(x)) throw std::invalid_argument("GridField: non-finite value");
    }
};

/// Splits an H x W field into (H/P)*(W/P) patches of P*P values.
/// Patches are row-major over the patch grid; values inside a patch are
/// row-major as well.  Lossless: unpatchify inverts exactly.
inline std::vector<std::vector<double>> patchify(const Field& f, std::size_t P) {
    if (P == 0 || f.rows % P != 0 || f.cols % P != 0)
        throw std::invalid_argument("patchify: P must divide both grid dimensions");
    const std::size_t ph = f.rows / P, pw = f.cols / P;
    std::vector<std::vector<double>> out(ph * pw, std::vector<double>(P * P));
    for (std::size_t bi = 0; bi < ph; ++bi)
        for (std::size_t bj = 0; bj < pw; ++bj) {
            auto& patch = out[bi * pw + bj];
            for (std::size_t di = 0; di < P; ++di)
                for (std::size_t dj = 0; dj < P; ++dj)
                    patch[di * P + dj] = f.at(bi * P + di, bj * P + dj);
        }
    return out;
}

inline Field unpatchify(const std::vector<std::vector<double>>& patches, std::size_t P,
                        std::size_t H, std::size_t W) {
    if (P == 0 || H % P != 0 || W % P != 0)
        throw std::invalid_argument("unpatchify: P must divide both grid dimensions");
    const std::size_t ph = H / P, pw = W / P;
    if (patches.size() != ph * pw)
        throw std::invalid_argument("unpatchify: patch count mismatch");
    Field f(H, W);
    for (std::size_t bi = 0; bi < ph; ++bi)
        for (std::size_t bj = 0; bj < pw; ++bj) {
            const auto& patch = patches[bi * pw + bj];
            if (patch.size() != P * P)
                throw std::invalid_argument("unpatchify: patch size mismatch");
            for (std::size_t di = 0; di < P; ++di)
                for (std::size_t dj = 0; dj < P; ++dj)
                    f.at(bi * P + di, bj * P + dj) = patch[di * P + dj];
        }
    return f;
}

/// Flat variants used by the model code: dst has n_patches * P * P entries,
/// patch p occupying dst[p*P*P .. (p+1)*P*P).
inline void patchify_flat(const double* field, std::size_t H, std::size_t W, std::size_t P,
                          double* dst) {
    const std::size_t pw = W / P;
    for (std::size_t bi = 0; bi < H / P; ++bi)
        for (std::size_t bj = 0; bj < pw; ++bj) {
            double* patch = dst + (bi * pw + bj) * P * P;
            for (std::size_t di = 0; di < P; ++di)
                for (std::size_t dj = 0; dj < P; ++dj)
                    patch[di * P + dj] = field[(bi * P + di) * W + bj * P + dj];
        }
}

inline void unpatchify_flat(const double* patches, std::size_t H, std::size_t W, std::size_t P,
                            double* field) {
    const std::size_t pw = W / P;
    for (std::size_t bi = 0; bi < H / P; ++bi)
        for (std::size_t bj = 0; bj < pw; ++bj) {
            const double* patch = patches + (bi * pw + bj) * P * P;
            for (std::size_t di = 0; di < P; ++di)
                for (std::size_t dj = 0; dj < P; ++dj)
                    field[(bi * P + di) * W + bj * P + dj] = patch[di * P + dj];
        }
}

/// Canonical grid axes: latitudes north-to-south at row centers, periodic
/// longitudes starting at 0.
inline std::vector<double> default_lats(std::size_t H) {
    std::vector<double> lats(H);
    const double d = 180.0 / static_cast<double>(H);
    for (std::size_t i = 0; i < H; ++i) lats[i] = 90.0 - d * (static_cast<double>(i) + 0.5);
    return lats;
}

inline std::vector<double> default_lons(std::size_t W) {
    std::vector<double> lons(W);
    const double d = 360.0 / static_cast<double>(W);
    for (std::size_t j = 0; j < W; ++j) lons[j] = d * static_cast<double>(j);
    return lons;
}

}  // namespace lh
