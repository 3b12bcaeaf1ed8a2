#pragma once

// Minimal dense-parameter machinery: named tensors, a parameter set with a
// frozen flag, and the linear-layer forward/backward kernels every model
// component is built from.  All math in double.

#include <cstddef>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace lh {

struct NamedTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> v;

    std::size_t size() const { return v.size(); }
};

/// Ordered collection of named parameter tensors.  The frozen flag is a
/// contract: applying gradients to a frozen set throws.
struct ParamSet {
    std::vector<NamedTensor> items;
    std::map<std::string, std::size_t> index;
    bool frozen = false;

    NamedTensor& add(const std::string& name, std::vector<std::size_t> shape) {
        if (index.count(name)) throw std::logic_error("ParamSet: duplicate tensor " + name);
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        index[name] = items.size();
        items.push_back(NamedTensor{name, std::move(shape), std::vector<double>(n, 0.0)});
        return items.back();
    }

    NamedTensor& get(const std::string& name) {
        auto it = index.find(name);
        if (it == index.end()) throw std::logic_error("ParamSet: missing tensor " + name);
        return items[it->second];
    }
    const NamedTensor& get(const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end()) throw std::logic_error("ParamSet: missing tensor " + name);
        return items[it->second];
    }
    bool has(const std::string& name) const { return index.count(name) != 0; }

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& t : items) n += t.size();
        return n;
    }

    /// Same names/shapes, values zeroed.  Used for gradients and moments.
    ParamSet zeros_like() const {
        ParamSet g;
        for (const auto& t : items) g.add(t.name, t.shape);
        return g;
    }

    void zero() {
        for (auto& t : items) std::fill(t.v.begin(), t.v.end(), 0.0);
    }

    void accumulate(const ParamSet& other) {
        if (other.items.size() != items.size())
            throw std::logic_error("ParamSet::accumulate: layout mismatch");
        for (std::size_t k = 0; k < items.size(); ++k)
            for (std::size_t i = 0; i < items[k].v.size(); ++i)
                items[k].v[i] += other.items[k].v[i];
    }

    void scale(double c) {
        for (auto& t : items)
            for (auto& x : t.v) x *= c;
    }
};

/// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), seeded.
inline void init_uniform(NamedTensor& t, std::size_t fan_in, std::mt19937_64& rng) {
    const double b = 1.0 / std::sqrt(static_cast<double>(fan_in ? fan_in : 1));
    std::uniform_real_distribution<double> dist(-b, b);
    for (auto& x : t.v) x = dist(rng);
}

// y[o] = sum_i Wt[o*in+i] * x[i] + b[o]
inline void linear_forward(const double* W, const double* b, const double* x, double* y,
                           std::size_t in, std::size_t out) {
    for (std::size_t o = 0; o < out; ++o) {
        double acc = b ? b[o] : 0.0;
        const double* w = W + o * in;
        for (std::size_t i = 0; i < in; ++i) acc += w[i] * x[i];
        y[o] = acc;
    }
}

// Accumulates dW += dy xT, db += dy; writes dx = WT dy when dx != nullptr.
inline void linear_backward(const double* W, const double* x, const double* dy, double* dW,
                            double* db, double* dx, std::size_t in, std::size_t out) {
    if (dx)
        for (std::size_t i = 0; i < in; ++i) dx[i] = 0.0;
    for (std::size_t o = 0; o < out; ++o) {
        const double g = dy[o];
        if (db) db[o] += g;
        const double* w = W + o * in;
        double* dw = dW ? dW + o * in : nullptr;
        for (std::size_t i = 0; i < in; ++i) {
            if (dw) dw[i] += g * x[i];
            if (dx) dx[i] += w[i] * g;
        }
    }
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double relu_grad(double x) { return x > 0.0 ? 1.0 : 0.0; }

}  // namespace lh
