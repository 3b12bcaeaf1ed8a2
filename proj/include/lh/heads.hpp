#pragma once

// Per-variable MLP decoder heads reading the surface level of the frozen
// latent.  One head per new physical variable; rectifier between layers,
// identity at the output; analytic gradients.

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "lh/dense.hpp"
#include "lh/grid.hpp"

namespace lh {

/// Hidden sizes [E, E/2, E/2] (literal three-layer reading, ~726k parameters
/// at paper scale) or the compact [E/2, E/2] variant (~332k, closer to the
/// quoted count).  Both are selectable; the default is the literal reading.
enum class HeadDims { literal, compact };

inline std::vector<std::size_t> head_layer_dims(std::size_t E, std::size_t P,
                                                HeadDims variant = HeadDims::literal) {
    if (variant == HeadDims::literal) return {2 * E, E, E / 2, E / 2, P * P};
    return {2 * E, E / 2, E / 2, P * P};
}

inline std::size_t param_count(const std::vector<std::size_t>& dims) {
    if (dims.size() < 2) throw std::invalid_argument("param_count: need at least 2 dims");
    std::size_t n = 0;
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) n += dims[k] * dims[k + 1] + dims[k + 1];
    return n;
}

struct MlpHead {
    std::string var_id;
    std::vector<std::size_t> dims;
    ParamSet params;
    bool log_space = false;  // precip-like: trained on log-transformed targets

    static MlpHead create(const std::string& var_id, std::vector<std::size_t> dims,
                          std::uint64_t seed, bool log_space = false) {
        if (dims.size() < 2) throw std::invalid_argument("MlpHead: need at least 2 dims");
        MlpHead h;
        h.var_id = var_id;
        h.dims = std::move(dims);
        h.log_space = log_space;
        std::mt19937_64 rng(seed);
        for (std::size_t k = 0; k + 1 < h.dims.size(); ++k) {
            auto& w = h.params.add("layer" + std::to_string(k) + ".w", {h.dims[k + 1], h.dims[k]});
            init_uniform(w, h.dims[k], rng);
            auto& b = h.params.add("layer" + std::to_string(k) + ".b", {h.dims[k + 1]});
            init_uniform(b, h.dims[k], rng);
        }
        return h;
    }

    std::size_t n_layers() const { return dims.size() - 1; }
};

namespace detail {

// Per-patch forward pass, keeping pre-activations when acts != nullptr.
// acts[k] holds the pre-activation output of layer k (length dims[k+1]).
inline void head_patch_forward(const MlpHead& h, const double* x,
                               std::vector<std::vector<double>>* acts, double* out) {
    const std::size_t L = h.n_layers();
    std::vector<double> cur(x, x + h.dims[0]);
    for (std::size_t k = 0; k < L; ++k) {
        const auto& w = h.params.get("layer" + std::to_string(k) + ".w");
        const auto& b = h.params.get("layer" + std::to_string(k) + ".b");
        std::vector<double> next(h.dims[k + 1]);
        linear_forward(w.v.data(), b.v.data(), cur.data(), next.data(), h.dims[k], h.dims[k + 1]);
        if (acts) (*acts)[k] = next;
        if (k + 1 < L)
            for (auto& z : next) z = relu(z);
        cur = std::move(next);
    }
    for (std::size_t i = 0; i < h.dims.back(); ++i) out[i] = cur[i];
}

}  // namespace detail

/// latent_surface: n_patches x 2E, patch-major.  Output is the H x W field
/// assembled from per-patch predictions.
inline Field head_forward(const std::vector<double>& latent_surface, std::size_t n_patches,
                          const MlpHead& head, std::size_t H, std::size_t W, std::size_t P) {
    const std::size_t width = head.dims[0];
    if (latent_surface.size() != n_patches * width)
        throw std::invalid_argument("head_forward: latent width mismatch");
    if (head.dims.back() != P * P)
        throw std::invalid_argument("head_forward: output layer != P*P");
    if (n_patches != (H / P) * (W / P))
        throw std::invalid_argument("head_forward: patch count mismatch");

    std::vector<double> patches(n_patches * P * P);
    for (std::size_t p = 0; p < n_patches; ++p)
        detail::head_patch_forward(head, latent_surface.data() + p * width, nullptr,
                                   patches.data() + p * P * P);
    Field f(H, W);
    unpatchify_flat(patches.data(), H, W, P, f.v.data());
    return f;
}

struct HeadBackwardResult {
    ParamSet param_grads;
    std::vector<double> latent_grad;  // n_patches x 2E
};

/// Exact gradients of head_forward.  upstream is d(loss)/d(field).
inline HeadBackwardResult head_backward(const std::vector<double>& latent_surface,
                                        std::size_t n_patches, const MlpHead& head,
                                        const Field& upstream, std::size_t P) {
    const std::size_t width = head.dims[0];
    const std::size_t H = upstream.rows, W = upstream.cols;
    if (latent_surface.size() != n_patches * width)
        throw std::invalid_argument("head_backward: latent width mismatch");
    if (n_patches != (H / P) * (W / P))
        throw std::invalid_argument("head_backward: patch count mismatch");

    HeadBackwardResult r;
    r.param_grads = head.params.zeros_like();
    r.latent_grad.assign(n_patches * width, 0.0);

    std::vector<double> dpatches(n_patches * P * P);
    patchify_flat(upstream.v.data(), H, W, P, dpatches.data());

    const std::size_t L = head.n_layers();
    std::vector<std::vector<double>> acts(L);
    std::vector<double> out(P * P);
    for (std::size_t p = 0; p < n_patches; ++p) {
        const double* x0 = latent_surface.data() + p * width;
        detail::head_patch_forward(head, x0, &acts, out.data());

        std::vector<double> delta(dpatches.begin() + static_cast<long>(p * P * P),
                                  dpatches.begin() + static_cast<long>((p + 1) * P * P));
        for (std::size_t k = L; k-- > 0;) {
            const auto& w = head.params.get("layer" + std::to_string(k) + ".w");
            auto& dW = r.param_grads.get("layer" + std::to_string(k) + ".w");
            auto& db = r.param_grads.get("layer" + std::to_string(k) + ".b");
            // Input to layer k: latent for k = 0, else relu(acts[k-1]).
            std::vector<double> input;
            const double* in_ptr;
            if (k == 0) {
                in_ptr = x0;
            } else {
                input = acts[k - 1];
                for (auto& z : input) z = relu(z);
                in_ptr = input.data();
            }
            std::vector<double> dx(head.dims[k]);
            linear_backward(w.v.data(), in_ptr, delta.data(), dW.v.data(), db.v.data(), dx.data(),
                            head.dims[k], head.dims[k + 1]);
            if (k == 0) {
                for (std::size_t i = 0; i < width; ++i) r.latent_grad[p * width + i] = dx[i];
            } else {
                for (std::size_t i = 0; i < head.dims[k]; ++i)
                    dx[i] *= relu_grad(acts[k - 1][i]);
                delta = std::move(dx);
            }
        }
    }
    return r;
}

}  // namespace lh
