#pragma once

// Desk-scale stand-in for the pretrained forecasting backbone.  Linear patch
// embedding -> E->2E lift -> residual token/channel-mixing blocks -> linear
// per-variable decoders.  The latent tensor keeps the contractual shape
// (HW/P^2, L_lat + 1, 2E): level 0 carries the surface state, levels 1..L_lat
// are reduced atmospheric levels.  All gradients are hand-written; the
// mixing blocks replace the original Swin U-Net, which the methodology never
// depends on beyond the existence of this frozen latent.

#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "lh/dense.hpp"
#include "lh/grid.hpp"

namespace lh {

struct BackboneConfig {
    std::size_t T = 2;        // input time steps
    std::size_t H = 32;
    std::size_t W = 64;
    std::size_t P = 4;        // patch size
    std::size_t E = 32;       // embedding dim (paper value 512)
    std::size_t L_atm = 3;    // atmospheric input levels
    std::size_t L_lat = 3;    // latent pressure levels (latent has L_lat + 1)
    std::size_t n_blocks = 2;

    std::vector<std::string> surface_vars;  // dynamic, decoded
    std::vector<std::string> static_vars;   // inputs only
    std::vector<std::string> atm_vars;      // per-level, decoded
    std::vector<std::string> new_vars;      // finetune-added surface variables

    std::size_t v_s() const { return surface_vars.size() + static_vars.size(); }
    std::size_t v_a() const { return atm_vars.size(); }
    std::size_t n_patches() const { return (H / P) * (W / P); }
    std::size_t levels() const { return L_lat + 1; }
    std::size_t channels() const { return 2 * E; }

    void validate() const {
        if (P == 0 || H % P != 0 || W % P != 0)
            throw std::invalid_argument("BackboneConfig: P must divide H and W");
        if (E % 2 != 0) throw std::invalid_argument("BackboneConfig: E must be even");
        if (L_lat > L_atm) throw std::invalid_argument("BackboneConfig: L_lat must be <= L_atm");
        if (T == 0 || surface_vars.empty())
            throw std::invalid_argument("BackboneConfig: need T >= 1 and surface variables");
        if (!atm_vars.empty() && L_atm == 0)
            throw std::invalid_argument("BackboneConfig: atmospheric variables need L_atm >= 1");
    }
};

/// One training/inference sample: fields at t - dt and t per variable.
struct SampleInputs {
    std::vector<std::vector<Field>> surface;  // [V_dyn][T]
    std::vector<Field> statics;               // [V_sta]
    std::vector<std::vector<std::vector<Field>>> atm;  // [V_a][L_atm][T]
    std::vector<std::vector<Field>> new_vars;          // [V_new][T] (finetune only)
};

/// Frozen backbone output: n_patches x (L_lat + 1) x 2E, patch-major.
struct Latent {
    std::size_t n_patches = 0;
    std::size_t levels = 0;
    std::size_t channels = 0;
    std::vector<double> v;

    double* at(std::size_t p, std::size_t l) { return v.data() + (p * levels + l) * channels; }
    const double* at(std::size_t p, std::size_t l) const {
        return v.data() + (p * levels + l) * channels;
    }
};

struct ForwardCache {
    std::vector<double> sfc_in;    // [n_p][Ds]
    std::vector<double> new_in;    // [n_p][V_new * Dn]
    std::vector<double> atm_in;    // [n_p][L_atm][Da]
    std::vector<double> atm_emb;   // [n_p][L_atm][E]
    std::vector<double> tokens;    // [n_p][L][E]
    std::vector<double> lifted;    // [n_p][L][C]
    std::vector<std::vector<double>> block_in;   // per block input
    std::vector<std::vector<double>> block_mid;  // per block post-token-mix
    Latent latent;
};

class Backbone {
  public:
    BackboneConfig cfg;
    ParamSet params;

    static Backbone create(const BackboneConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        Backbone b;
        b.cfg = cfg;
        std::mt19937_64 rng(seed);
        const std::size_t E = cfg.E, C = cfg.channels(), np = cfg.n_patches();
        const std::size_t Ds = cfg.T * cfg.P * cfg.P * cfg.v_s();
        const std::size_t Da = cfg.T * cfg.P * cfg.P * cfg.v_a();
        const std::size_t Dn = cfg.T * cfg.P * cfg.P;

        init(b.params.add("enc.sfc.w", {E, Ds}), Ds, rng);
        init(b.params.add("enc.sfc.b", {E}), Ds, rng);
        if (cfg.L_lat > 0) {
            if (Da > 0) init(b.params.add("enc.atm.w", {E, Da}), Da, rng);
            init(b.params.add("enc.atm.b", {E}), Da ? Da : E, rng);
            init(b.params.add("enc.reduce.w", {cfg.L_lat, cfg.L_atm}), cfg.L_atm, rng);
        }
        for (const auto& v : cfg.new_vars)
            init(b.params.add("enc.new." + v + ".w", {E, Dn}), Dn, rng);

        init(b.params.add("lift.w", {C, E}), E, rng);
        init(b.params.add("lift.b", {C}), E, rng);

        for (std::size_t k = 0; k < cfg.n_blocks; ++k)
            for (std::size_t l = 0; l < cfg.levels(); ++l) {
                const std::string pre = "blk" + std::to_string(k);
                const std::string lv = ".l" + std::to_string(l);
                init(b.params.add(pre + ".tok" + lv + ".w", {np, np}), np, rng);
                init(b.params.add(pre + ".chan" + lv + ".w", {C, C}), C, rng);
                init(b.params.add(pre + ".chan" + lv + ".b", {C}), C, rng);
            }

        for (const auto& v : cfg.surface_vars) {
            init(b.params.add("dec.sfc." + v + ".w", {cfg.P * cfg.P, C}), C, rng);
            init(b.params.add("dec.sfc." + v + ".b", {cfg.P * cfg.P}), C, rng);
        }
        if (!cfg.atm_vars.empty()) {
            init(b.params.add("dec.expand.w", {cfg.L_atm, cfg.L_lat}), cfg.L_lat, rng);
            for (const auto& v : cfg.atm_vars) {
                init(b.params.add("dec.atm." + v + ".w", {cfg.P * cfg.P, C}), C, rng);
                init(b.params.add("dec.atm." + v + ".b", {cfg.P * cfg.P}), C, rng);
            }
        }
        for (const auto& v : cfg.new_vars) {
            init(b.params.add("dec.new." + v + ".w", {cfg.P * cfg.P, C}), C, rng);
            init(b.params.add("dec.new." + v + ".b", {cfg.P * cfg.P}), C, rng);
        }
        return b;
    }

    /// encode + process: patch embedding, level reduction, lift, mixing
    /// blocks.  Returns the full activation cache needed for backward.
    ForwardCache forward(const SampleInputs& in) const {
        check_inputs(in);
        ForwardCache fc;
        encode(in, fc);
        process(fc);
        return fc;
    }

    /// Surface-path decode of one variable: linear 2E -> P^2 on latent level
    /// 0, then unpatchify.
    Field decode_surface(const Latent& latent, const std::string& var) const {
        const std::string base = decoder_base(var);
        return decode_level0(latent, params.get(base + ".w"), params.get(base + ".b"));
    }

    /// Atmospheric decode: expand L_lat -> L_atm, then per-variable linear
    /// decode of every expanded level.
    std::vector<Field> decode_atm(const Latent& latent, const std::string& var) const {
        const auto& X = params.get("dec.expand.w");
        const auto& w = params.get("dec.atm." + var + ".w");
        const auto& b = params.get("dec.atm." + var + ".b");
        const std::size_t np = cfg.n_patches(), C = cfg.channels(), PP = cfg.P * cfg.P;
        std::vector<Field> out;
        std::vector<double> expanded(C), patches(np * PP);
        for (std::size_t la = 0; la < cfg.L_atm; ++la) {
            for (std::size_t p = 0; p < np; ++p) {
                for (std::size_t c = 0; c < C; ++c) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < cfg.L_lat; ++j)
                        acc += X.v[la * cfg.L_lat + j] * latent.at(p, 1 + j)[c];
                    expanded[c] = acc;
                }
                linear_forward(w.v.data(), b.v.data(), expanded.data(), patches.data() + p * PP, C,
                               PP);
            }
            Field f(cfg.H, cfg.W);
            unpatchify_flat(patches.data(), cfg.H, cfg.W, cfg.P, f.v.data());
            out.push_back(std::move(f));
        }
        return out;
    }

    /// All native decoders (surface + finetune-added + atmospheric levels).
    std::map<std::string, Field> decode_native(const Latent& latent) const {
        std::map<std::string, Field> out;
        for (const auto& v : cfg.surface_vars) out[v] = decode_surface(latent, v);
        for (const auto& v : cfg.new_vars) out[v] = decode_surface(latent, v);
        for (const auto& v : cfg.atm_vars) {
            auto levels = decode_atm(latent, v);
            for (std::size_t l = 0; l < levels.size(); ++l)
                out[v + "@l" + std::to_string(l)] = std::move(levels[l]);
        }
        return out;
    }

    /// encode -> process -> decode_native.  The rollout loop applies this
    /// recursively, feeding predictions back as inputs.
    std::map<std::string, Field> forecast_step(const SampleInputs& in) const {
        ForwardCache fc = forward(in);
        return decode_native(fc.latent);
    }

    /// Backprop of the surface decode for one variable; accumulates decoder
    /// parameter grads and the latent gradient.
    void decode_surface_backward(const Latent& latent, const std::string& var,
                                 const Field& upstream, ParamSet& grads,
                                 std::vector<double>& dlatent) const {
        const std::string base = decoder_base(var);
        const auto& w = params.get(base + ".w");
        auto& dW = grads.get(base + ".w");
        auto& db = grads.get(base + ".b");
        const std::size_t np = cfg.n_patches(), C = cfg.channels(), PP = cfg.P * cfg.P;
        const std::size_t L = cfg.levels();
        std::vector<double> dpatches(np * PP);
        patchify_flat(upstream.v.data(), cfg.H, cfg.W, cfg.P, dpatches.data());
        std::vector<double> dx(C);
        for (std::size_t p = 0; p < np; ++p) {
            linear_backward(w.v.data(), latent.at(p, 0), dpatches.data() + p * PP, dW.v.data(),
                            db.v.data(), dx.data(), C, PP);
            double* dl = dlatent.data() + (p * L + 0) * C;
            for (std::size_t c = 0; c < C; ++c) dl[c] += dx[c];
        }
    }

    void decode_atm_backward(const Latent& latent, const std::string& var,
                             const std::vector<Field>& upstream, ParamSet& grads,
                             std::vector<double>& dlatent) const {
        const auto& X = params.get("dec.expand.w");
        const auto& w = params.get("dec.atm." + var + ".w");
        auto& dX = grads.get("dec.expand.w");
        auto& dW = grads.get("dec.atm." + var + ".w");
        auto& db = grads.get("dec.atm." + var + ".b");
        const std::size_t np = cfg.n_patches(), C = cfg.channels(), PP = cfg.P * cfg.P;
        const std::size_t L = cfg.levels();
        std::vector<double> dpatches(np * PP), expanded(C), dexp(C);
        for (std::size_t la = 0; la < cfg.L_atm; ++la) {
            patchify_flat(upstream[la].v.data(), cfg.H, cfg.W, cfg.P, dpatches.data());
            for (std::size_t p = 0; p < np; ++p) {
                for (std::size_t c = 0; c < C; ++c) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < cfg.L_lat; ++j)
                        acc += X.v[la * cfg.L_lat + j] * latent.at(p, 1 + j)[c];
                    expanded[c] = acc;
                }
                linear_backward(w.v.data(), expanded.data(), dpatches.data() + p * PP, dW.v.data(),
                                db.v.data(), dexp.data(), C, PP);
                for (std::size_t j = 0; j < cfg.L_lat; ++j) {
                    const double coef = X.v[la * cfg.L_lat + j];
                    double* dl = dlatent.data() + (p * L + 1 + j) * C;
                    double xdot = 0.0;
                    for (std::size_t c = 0; c < C; ++c) {
                        dl[c] += coef * dexp[c];
                        xdot += dexp[c] * latent.at(p, 1 + j)[c];
                    }
                    dX.v[la * cfg.L_lat + j] += xdot;
                }
            }
        }
    }

    /// Backprop from d(latent) through the mixing blocks, lift, level
    /// reduction and patch embeddings.  Parameter grads accumulate into
    /// `grads`; input gradients are not needed (inputs are data).
    void backward(const SampleInputs& in, const ForwardCache& fc, std::vector<double> dlatent,
                  ParamSet& grads) const {
        const std::size_t np = cfg.n_patches(), C = cfg.channels(), E = cfg.E;
        const std::size_t L = cfg.levels();

        // Mixing blocks, in reverse.
        for (std::size_t k = cfg.n_blocks; k-- > 0;) {
            const auto& a = fc.block_in[k];
            const auto& mid = fc.block_mid[k];
            std::vector<double> da(np * L * C, 0.0);
            const std::string pre = "blk" + std::to_string(k);
            for (std::size_t l = 0; l < L; ++l) {
                const std::string lv = ".l" + std::to_string(l);
                const auto& Wc = params.get(pre + ".chan" + lv + ".w");
                auto& dWc = grads.get(pre + ".chan" + lv + ".w");
                auto& dbc = grads.get(pre + ".chan" + lv + ".b");
                const auto& M = params.get(pre + ".tok" + lv + ".w");
                auto& dM = grads.get(pre + ".tok" + lv + ".w");

                // out = mid + chan(relu(mid)); dout is the slice of dlatent.
                std::vector<double> dmid(np * C, 0.0);
                std::vector<double> r2(C), dr2(C);
                for (std::size_t p = 0; p < np; ++p) {
                    const double* m_row = mid.data() + (p * L + l) * C;
                    const double* dout = dlatent.data() + (p * L + l) * C;
                    for (std::size_t c = 0; c < C; ++c) r2[c] = relu(m_row[c]);
                    linear_backward(Wc.v.data(), r2.data(), dout, dWc.v.data(), dbc.v.data(),
                                    dr2.data(), C, C);
                    double* dm = dmid.data() + p * C;
                    for (std::size_t c = 0; c < C; ++c)
                        dm[c] = dout[c] + dr2[c] * relu_grad(m_row[c]);
                }

                // mid = a + tok(relu(a)); dmid flows to da and dM.
                for (std::size_t p = 0; p < np; ++p) {
                    const double* dm = dmid.data() + p * C;
                    double* da_row = da.data() + (p * L + l) * C;
                    for (std::size_t c = 0; c < C; ++c) da_row[c] += dm[c];
                }
                for (std::size_t p = 0; p < np; ++p) {
                    const double* dm = dmid.data() + p * C;
                    for (std::size_t q = 0; q < np; ++q) {
                        const double* aq = a.data() + (q * L + l) * C;
                        double* daq = da.data() + (q * L + l) * C;
                        const double coef = M.v[p * np + q];
                        double dot = 0.0;
                        for (std::size_t c = 0; c < C; ++c) {
                            const double r1 = relu(aq[c]);
                            dot += dm[c] * r1;
                            daq[c] += coef * dm[c] * relu_grad(aq[c]);
                        }
                        dM.v[p * np + q] += dot;
                    }
                }
            }
            dlatent = std::move(da);
        }

        // Lift backward: lifted = W z + b per token.
        const auto& lift = params.get("lift.w");
        auto& dlift = grads.get("lift.w");
        auto& dliftb = grads.get("lift.b");
        std::vector<double> dtokens(np * L * E, 0.0);
        for (std::size_t p = 0; p < np; ++p)
            for (std::size_t l = 0; l < L; ++l) {
                const double* z = fc.tokens.data() + (p * L + l) * E;
                const double* dy = dlatent.data() + (p * L + l) * C;
                linear_backward(lift.v.data(), z, dy, dlift.v.data(), dliftb.v.data(),
                                dtokens.data() + (p * L + l) * E, E, C);
            }

        // Surface embedding (+ finetune new-variable encoders).
        const std::size_t Ds = cfg.T * cfg.P * cfg.P * cfg.v_s();
        const std::size_t Dn = cfg.T * cfg.P * cfg.P;
        auto& dsw = grads.get("enc.sfc.w");
        auto& dsb = grads.get("enc.sfc.b");
        for (std::size_t p = 0; p < np; ++p) {
            const double* dtok = dtokens.data() + (p * L + 0) * E;
            linear_backward(nullptr, fc.sfc_in.data() + p * Ds, dtok, dsw.v.data(), dsb.v.data(),
                            nullptr, Ds, E);
            for (std::size_t nv = 0; nv < cfg.new_vars.size(); ++nv) {
                auto& dnw = grads.get("enc.new." + cfg.new_vars[nv] + ".w");
                linear_backward(nullptr, fc.new_in.data() + (p * cfg.new_vars.size() + nv) * Dn,
                                dtok, dnw.v.data(), nullptr, nullptr, Dn, E);
            }
        }

        // Level reduction and atmospheric embedding.
        if (cfg.L_lat > 0) {
            const auto& R = params.get("enc.reduce.w");
            auto& dR = grads.get("enc.reduce.w");
            auto& dab = grads.get("enc.atm.b");
            const std::size_t Da = cfg.T * cfg.P * cfg.P * cfg.v_a();
            std::vector<double> demb(np * cfg.L_atm * E, 0.0);
            for (std::size_t p = 0; p < np; ++p)
                for (std::size_t j = 0; j < cfg.L_lat; ++j) {
                    const double* dtok = dtokens.data() + (p * L + 1 + j) * E;
                    for (std::size_t la = 0; la < cfg.L_atm; ++la) {
                        const double coef = R.v[j * cfg.L_atm + la];
                        const double* emb = fc.atm_emb.data() + (p * cfg.L_atm + la) * E;
                        double* de = demb.data() + (p * cfg.L_atm + la) * E;
                        double dot = 0.0;
                        for (std::size_t e = 0; e < E; ++e) {
                            de[e] += coef * dtok[e];
                            dot += dtok[e] * emb[e];
                        }
                        dR.v[j * cfg.L_atm + la] += dot;
                    }
                }
            for (std::size_t p = 0; p < np; ++p)
                for (std::size_t la = 0; la < cfg.L_atm; ++la) {
                    const double* de = demb.data() + (p * cfg.L_atm + la) * E;
                    if (Da > 0) {
                        auto& daw = grads.get("enc.atm.w");
                        linear_backward(nullptr, fc.atm_in.data() + (p * cfg.L_atm + la) * Da, de,
                                        daw.v.data(), dab.v.data(), nullptr, Da, E);
                    } else {
                        for (std::size_t e = 0; e < E; ++e) dab.v[e] += de[e];
                    }
                }
        }
        (void)in;
    }

  private:
    static void init(NamedTensor& t, std::size_t fan_in, std::mt19937_64& rng) {
        init_uniform(t, fan_in, rng);
    }

    std::string decoder_base(const std::string& var) const {
        for (const auto& v : cfg.surface_vars)
            if (v == var) return "dec.sfc." + var;
        for (const auto& v : cfg.new_vars)
            if (v == var) return "dec.new." + var;
        throw std::invalid_argument("Backbone: unknown surface variable " + var);
    }

    void check_inputs(const SampleInputs& in) const {
        if (in.surface.size() != cfg.surface_vars.size())
            throw std::invalid_argument("Backbone: surface variable count mismatch");
        if (in.statics.size() != cfg.static_vars.size())
            throw std::invalid_argument("Backbone: static variable count mismatch");
        if (in.atm.size() != cfg.atm_vars.size())
            throw std::invalid_argument("Backbone: atmospheric variable count mismatch");
        if (in.new_vars.size() != cfg.new_vars.size())
            throw std::invalid_argument("Backbone: new variable count mismatch");
        auto check = [&](const Field& f) {
            if (f.rows != cfg.H || f.cols != cfg.W)
                throw std::invalid_argument("Backbone: field shape mismatch");
        };
        for (const auto& frames : in.surface) {
            if (frames.size() != cfg.T) throw std::invalid_argument("Backbone: need T frames");
            for (const auto& f : frames) check(f);
        }
        for (const auto& f : in.statics) check(f);
        for (const auto& levels : in.atm) {
            if (levels.size() != cfg.L_atm)
                throw std::invalid_argument("Backbone: need L_atm levels");
            for (const auto& frames : levels) {
                if (frames.size() != cfg.T) throw std::invalid_argument("Backbone: need T frames");
                for (const auto& f : frames) check(f);
            }
        }
        for (const auto& frames : in.new_vars) {
            if (frames.size() != cfg.T) throw std::invalid_argument("Backbone: need T frames");
            for (const auto& f : frames) check(f);
        }
    }

    void encode(const SampleInputs& in, ForwardCache& fc) const {
        const std::size_t np = cfg.n_patches(), E = cfg.E, P = cfg.P, PP = P * P;
        const std::size_t L = cfg.levels();
        const std::size_t Ds = cfg.T * PP * cfg.v_s();
        const std::size_t Da = cfg.T * PP * cfg.v_a();
        const std::size_t Dn = cfg.T * PP;

        // Patch inputs, variable-major then time-major then pixel.
        fc.sfc_in.assign(np * Ds, 0.0);
        std::vector<double> scratch(np * PP);
        std::size_t ch = 0;
        auto scatter = [&](const Field& f, std::size_t channel) {
            patchify_flat(f.v.data(), cfg.H, cfg.W, P, scratch.data());
            for (std::size_t p = 0; p < np; ++p)
                for (std::size_t x = 0; x < PP; ++x)
                    fc.sfc_in[p * Ds + channel * PP + x] = scratch[p * PP + x];
        };
        for (const auto& frames : in.surface)
            for (const auto& f : frames) scatter(f, ch++);
        for (const auto& f : in.statics)
            for (std::size_t t = 0; t < cfg.T; ++t) scatter(f, ch++);  // statics repeat per frame

        fc.new_in.assign(np * cfg.new_vars.size() * Dn, 0.0);
        for (std::size_t nv = 0; nv < in.new_vars.size(); ++nv)
            for (std::size_t t = 0; t < cfg.T; ++t) {
                patchify_flat(in.new_vars[nv][t].v.data(), cfg.H, cfg.W, P, scratch.data());
                for (std::size_t p = 0; p < np; ++p)
                    for (std::size_t x = 0; x < PP; ++x)
                        fc.new_in[(p * cfg.new_vars.size() + nv) * Dn + t * PP + x] =
                            scratch[p * PP + x];
            }

        fc.tokens.assign(np * L * E, 0.0);
        const auto& sw = params.get("enc.sfc.w");
        const auto& sb = params.get("enc.sfc.b");
        for (std::size_t p = 0; p < np; ++p) {
            double* tok = fc.tokens.data() + (p * L + 0) * E;
            linear_forward(sw.v.data(), sb.v.data(), fc.sfc_in.data() + p * Ds, tok, Ds, E);
            for (std::size_t nv = 0; nv < cfg.new_vars.size(); ++nv) {
                const auto& nw = params.get("enc.new." + cfg.new_vars[nv] + ".w");
                const double* x = fc.new_in.data() + (p * cfg.new_vars.size() + nv) * Dn;
                for (std::size_t e = 0; e < E; ++e) {
                    double acc = 0.0;
                    const double* w = nw.v.data() + e * Dn;
                    for (std::size_t i = 0; i < Dn; ++i) acc += w[i] * x[i];
                    tok[e] += acc;
                }
            }
        }

        if (cfg.L_lat > 0) {
            fc.atm_in.assign(np * cfg.L_atm * Da, 0.0);
            for (std::size_t va = 0; va < in.atm.size(); ++va)
                for (std::size_t la = 0; la < cfg.L_atm; ++la)
                    for (std::size_t t = 0; t < cfg.T; ++t) {
                        patchify_flat(in.atm[va][la][t].v.data(), cfg.H, cfg.W, P, scratch.data());
                        const std::size_t channel = va * cfg.T + t;
                        for (std::size_t p = 0; p < np; ++p)
                            for (std::size_t x = 0; x < PP; ++x)
                                fc.atm_in[(p * cfg.L_atm + la) * Da + channel * PP + x] =
                                    scratch[p * PP + x];
                    }
            fc.atm_emb.assign(np * cfg.L_atm * E, 0.0);
            const auto& ab = params.get("enc.atm.b");
            for (std::size_t p = 0; p < np; ++p)
                for (std::size_t la = 0; la < cfg.L_atm; ++la) {
                    double* emb = fc.atm_emb.data() + (p * cfg.L_atm + la) * E;
                    if (Da > 0) {
                        const auto& aw = params.get("enc.atm.w");
                        linear_forward(aw.v.data(), ab.v.data(),
                                       fc.atm_in.data() + (p * cfg.L_atm + la) * Da, emb, Da, E);
                    } else {
                        for (std::size_t e = 0; e < E; ++e) emb[e] = ab.v[e];
                    }
                }
            const auto& R = params.get("enc.reduce.w");
            for (std::size_t p = 0; p < np; ++p)
                for (std::size_t j = 0; j < cfg.L_lat; ++j) {
                    double* tok = fc.tokens.data() + (p * L + 1 + j) * E;
                    for (std::size_t la = 0; la < cfg.L_atm; ++la) {
                        const double coef = R.v[j * cfg.L_atm + la];
                        const double* emb = fc.atm_emb.data() + (p * cfg.L_atm + la) * E;
                        for (std::size_t e = 0; e < E; ++e) tok[e] += coef * emb[e];
                    }
                }
        }
    }

    void process(ForwardCache& fc) const {
        const std::size_t np = cfg.n_patches(), E = cfg.E, C = cfg.channels();
        const std::size_t L = cfg.levels();

        fc.lifted.assign(np * L * C, 0.0);
        const auto& lw = params.get("lift.w");
        const auto& lb = params.get("lift.b");
        for (std::size_t p = 0; p < np; ++p)
            for (std::size_t l = 0; l < L; ++l)
                linear_forward(lw.v.data(), lb.v.data(), fc.tokens.data() + (p * L + l) * E,
                               fc.lifted.data() + (p * L + l) * C, E, C);

        fc.block_in.resize(cfg.n_blocks);
        fc.block_mid.resize(cfg.n_blocks);
        std::vector<double> cur = fc.lifted;
        std::vector<double> r1(np * C);
        for (std::size_t k = 0; k < cfg.n_blocks; ++k) {
            fc.block_in[k] = cur;
            const std::string pre = "blk" + std::to_string(k);
            std::vector<double> mid = cur;
            for (std::size_t l = 0; l < L; ++l) {
                const auto& M = params.get(pre + ".tok.l" + std::to_string(l) + ".w");
                for (std::size_t p = 0; p < np; ++p) {
                    const double* row = cur.data() + (p * L + l) * C;
                    double* dst = r1.data() + p * C;
                    for (std::size_t c = 0; c < C; ++c) dst[c] = relu(row[c]);
                }
                // mid[p] += sum_q M[p,q] relu(cur[q]) per channel.
                for (std::size_t p = 0; p < np; ++p) {
                    double* out = mid.data() + (p * L + l) * C;
                    const double* mrow = M.v.data() + p * np;
                    for (std::size_t q = 0; q < np; ++q) {
                        const double coef = mrow[q];
                        const double* src = r1.data() + q * C;
                        for (std::size_t c = 0; c < C; ++c) out[c] += coef * src[c];
                    }
                }
            }
            fc.block_mid[k] = mid;
            std::vector<double> next = mid;
            std::vector<double> r2(C), cm(C);
            for (std::size_t l = 0; l < L; ++l) {
                const auto& Wc = params.get(pre + ".chan.l" + std::to_string(l) + ".w");
                const auto& bc = params.get(pre + ".chan.l" + std::to_string(l) + ".b");
                for (std::size_t p = 0; p < np; ++p) {
                    const double* m_row = mid.data() + (p * L + l) * C;
                    for (std::size_t c = 0; c < C; ++c) r2[c] = relu(m_row[c]);
                    linear_forward(Wc.v.data(), bc.v.data(), r2.data(), cm.data(), C, C);
                    double* out = next.data() + (p * L + l) * C;
                    for (std::size_t c = 0; c < C; ++c) out[c] += cm[c];
                }
            }
            cur = std::move(next);
        }
        fc.latent.n_patches = np;
        fc.latent.levels = L;
        fc.latent.channels = C;
        fc.latent.v = std::move(cur);
    }

    Field decode_level0(const Latent& latent, const NamedTensor& w, const NamedTensor& b) const {
        const std::size_t np = cfg.n_patches(), C = cfg.channels(), PP = cfg.P * cfg.P;
        std::vector<double> patches(np * PP);
        for (std::size_t p = 0; p < np; ++p)
            linear_forward(w.v.data(), b.v.data(), latent.at(p, 0), patches.data() + p * PP, C, PP);
        Field f(cfg.H, cfg.W);
        unpatchify_flat(patches.data(), cfg.H, cfg.W, cfg.P, f.v.data());
        return f;
    }
};

}  // namespace lh
