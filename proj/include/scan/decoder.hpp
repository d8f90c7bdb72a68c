#pragma once

#include <optional>
#include <vector>

#include "scan/netblocks.hpp"
#include "scan/presets.hpp"

namespace scan {

// One coverage-attention head: e_j = nu . tanh(W_att h + U_att s_j + U_f f_j
// [+ U_p c_peer]), with F the convolution of the cumulative past attention.
template <typename Real>
struct AttentionParams {
    Param<Real>* nu = nullptr;     // [n']
    Param<Real>* w_att = nullptr;  // [n' x n]
    Param<Real>* u_att = nullptr;  // [n' x D]
    Param<Real>* u_f = nullptr;    // [n' x q]
    Param<Real>* q_w = nullptr;    // [q x 1 x k] or [q x 1 x k x k]
    Param<Real>* q_b = nullptr;    // [q]
    Param<Real>* u_p = nullptr;    // [n' x D_peer], fine attention only
    bool grid = false;
    int kernel = 7;
    int channels = 0;

    static AttentionParams create(ParamStore<Real>& ps, const std::string& name,
                                  const ModelPreset& cfg, int d_feat, bool grid,
                                  std::mt19937& rng, Param<Real>* shared_nu = nullptr,
                                  Param<Real>* shared_w_att = nullptr,
                                  int d_peer = 0) {
        AttentionParams a;
        int np = cfg.attention_dim, n = cfg.decoder_hidden, q = cfg.coverage_channels;
        a.grid = grid;
        a.kernel = grid ? cfg.coverage_kernel_grid : cfg.coverage_kernel_seq;
        a.channels = q;
        a.nu = shared_nu ? shared_nu
                         : &ps.create(name + ".nu", glorot_uniform<Real>({np}, np, 1, rng));
        a.w_att = shared_w_att
                      ? shared_w_att
                      : &ps.create(name + ".w_att", glorot_uniform<Real>({np, n}, n, np, rng));
        a.u_att = &ps.create(name + ".u_att", glorot_uniform<Real>({np, d_feat}, d_feat, np, rng));
        a.u_f = &ps.create(name + ".u_f", glorot_uniform<Real>({np, q}, q, np, rng));
        if (grid) {
            a.q_w = &ps.create(name + ".q.w",
                               glorot_uniform<Real>({q, 1, a.kernel, a.kernel},
                                                    a.kernel * a.kernel, q * a.kernel * a.kernel,
                                                    rng));
        } else {
            a.q_w = &ps.create(name + ".q.w", glorot_uniform<Real>({q, 1, a.kernel},
                                                                   a.kernel, q * a.kernel, rng));
        }
        a.q_b = &ps.create(name + ".q.b", Tensor<Real>({q}));
        if (d_peer > 0)
            a.u_p = &ps.create(name + ".u_p", glorot_uniform<Real>({np, d_peer}, d_peer, np, rng));
        return a;
    }
};

template <typename Real>
struct AttendOut {
    Var<Real> alpha;    // [T], sums to 1
    Var<Real> context;  // [D]
};

// grid_h/grid_w describe the coverage geometry for grid attention (T = H*W).
template <typename Real>
AttendOut<Real> attend(Tape<Real>& t, Var<Real> h_hat, Var<Real> features,
                       Var<Real> cum_alpha, const AttentionParams<Real>& ap,
                       int grid_h = 0, int grid_w = 0,
                       std::optional<Var<Real>> peer_context = std::nullopt,
                       int64_t* energy_evals = nullptr) {
    int T = features.value().dim(0);
    if (cum_alpha.value().numel() != T)
        throw ShapeError("attend: coverage state length " +
                         std::to_string(cum_alpha.value().numel()) +
                         " vs feature rows " + std::to_string(T));
    Var<Real> cov;  // [T x q]
    if (ap.grid) {
        if (grid_h * grid_w != T)
            throw ShapeError("attend: grid geometry does not match feature rows");
        Var<Real> f = t.conv2d(t.reshape(cum_alpha, {1, grid_h, grid_w}),
                               t.leaf(*ap.q_w), t.leaf(*ap.q_b));
        cov = t.transpose(t.reshape(f, {ap.channels, T}));
    } else {
        Var<Real> f = t.conv1d(t.reshape(cum_alpha, {1, T}), t.leaf(*ap.q_w),
                               t.leaf(*ap.q_b));
        cov = t.transpose(f);
    }
    Var<Real> pre = t.matmul(features, t.transpose(t.leaf(*ap.u_att)));
    pre = t.add(pre, t.matmul(cov, t.transpose(t.leaf(*ap.u_f))));
    Var<Real> drive = t.matvec(t.leaf(*ap.w_att), h_hat);
    if (peer_context) {
        if (!ap.u_p) throw ShapeError("attend: peer context without U_p");
        drive = t.add(drive, t.matvec(t.leaf(*ap.u_p), *peer_context));
    }
    pre = t.add_rowvec(pre, drive);
    Var<Real> energies =
        t.reshape(t.matmul(t.tanh(pre), t.reshape(t.leaf(*ap.nu),
                                                  {ap.nu->value.dim(0), 1})),
                  {T});
    if (energy_evals) *energy_evals += T;
    AttendOut<Real> out;
    out.alpha = t.softmax(energies);
    out.context =
        t.reshape(t.matmul(t.reshape(out.alpha, {1, T}), features),
                  {features.value().dim(1)});
    return out;
}

// Two GRU layers with coverage attention between them, the maxout output
// head, and (in decoder-fusion mode) the two-stage re-attention.
template <typename Real>
class Decoder {
  public:
    struct Features {
        Var<Real> s;      // primary feature rows (stroke, fused, point or pixel)
        Var<Real> s_off;  // secondary modality, decoder fusion only
        int grid_h = 0;   // pixel-baseline coverage geometry
        int grid_w = 0;
    };

    struct State {
        Var<Real> h;        // second-GRU hidden
        Var<Real> cum;      // cumulative attention, primary modality
        Var<Real> cum_off;  // cumulative attention, offline modality (fusion)
    };

    struct StepOut {
        Var<Real> logits;  // [K]
        Var<Real> probs;   // [K]
        Var<Real> alpha;   // attention applied to the primary features
        Var<Real> alpha_off;  // fusion only
        State state;
    };

    static Decoder create(ParamStore<Real>& ps, const ModelPreset& cfg, Mode mode,
                          int vocab_size, int d_primary, std::mt19937& rng) {
        Decoder d;
        d.cfg_ = cfg;
        d.fusion_ = mode == Mode::MMDecoder;
        d.vocab_size_ = vocab_size;
        int m = cfg.embed_dim, n = cfg.decoder_hidden;
        if (m % 2 != 0) throw ShapeError("embedding dim must be even for maxout");
        int d_ctx = d_primary;
        int d_init = d_primary;
        if (d.fusion_) {
            d_ctx = cfg.feature_dim;  // c_mm = tanh(W_FC [c_on; c_off])
            d_init = 2 * cfg.feature_dim;
        }
        d.d_ctx_ = d_ctx;
        d.embedding_ = &ps.create("decoder.embedding",
                                  glorot_uniform<Real>({m, vocab_size}, vocab_size, m, rng));
        d.gru1_ = GruCell<Real>::create(ps, "decoder.gru1", m, n, rng);
        d.gru2_ = GruCell<Real>::create(ps, "decoder.gru2", d_ctx, n, rng);
        d.w_h_ = &ps.create("decoder.w_h", glorot_uniform<Real>({m, n}, n, m, rng));
        d.w_c_ = &ps.create("decoder.w_c", glorot_uniform<Real>({m, d_ctx}, d_ctx, m, rng));
        d.w_o_ = &ps.create("decoder.w_o",
                            glorot_uniform<Real>({vocab_size, m / 2}, m / 2, vocab_size, rng));
        d.init_ = Linear<Real>::create(ps, "decoder.init", d_init, n, rng);
        if (d.fusion_) {
            int D = cfg.feature_dim;
            d.pre_on_ = AttentionParams<Real>::create(ps, "decoder.pre_on", cfg, D,
                                                      false, rng);
            d.pre_off_ = AttentionParams<Real>::create(ps, "decoder.pre_off", cfg, D,
                                                       false, rng);
            Param<Real>* nu = &ps.create("decoder.fine.nu",
                                         glorot_uniform<Real>({cfg.attention_dim},
                                                              cfg.attention_dim, 1, rng));
            Param<Real>* watt =
                &ps.create("decoder.fine.w_att",
                           glorot_uniform<Real>({cfg.attention_dim, n}, n,
                                                cfg.attention_dim, rng));
            d.fine_on_ = AttentionParams<Real>::create(ps, "decoder.fine_on", cfg, D,
                                                       false, rng, nu, watt, D);
            d.fine_off_ = AttentionParams<Real>::create(ps, "decoder.fine_off", cfg, D,
                                                        false, rng, nu, watt, D);
            d.w_fc_ = &ps.create("decoder.w_fc",
                                 glorot_uniform<Real>({D, 2 * D}, 2 * D, D, rng));
        } else {
            bool grid = mode == Mode::PixelBaseline;
            d.att_ = AttentionParams<Real>::create(ps, "decoder.att", cfg, d_primary,
                                                   grid, rng);
        }
        return d;
    }

    // h_0 = tanh(W_init . mean feature row); coverage states start at zero.
    State initial_state(Tape<Real>& t, const Features& f) const {
        Var<Real> mean = mean_row(t, f.s);
        if (fusion_) mean = t.concat0({mean, mean_row(t, f.s_off)});
        State st;
        st.h = t.tanh(init_.vec(t, mean));
        st.cum = t.constant(Tensor<Real>({f.s.value().dim(0)}));
        if (fusion_)
            st.cum_off = t.constant(Tensor<Real>({f.s_off.value().dim(0)}));
        return st;
    }

    StepOut step(Tape<Real>& t, int y_prev, const State& state,
                 const Features& f) const {
        if (y_prev < 0 || y_prev >= vocab_size_)
            throw DataError("decoder: token id " + std::to_string(y_prev) +
                            " out of vocabulary");
        Var<Real> emb = t.embedding(t.leaf(*embedding_), y_prev);
        Var<Real> h_hat = gru1_.step(t, emb, state.h);

        StepOut out;
        Var<Real> context;
        if (!fusion_) {
            auto att = attend(t, h_hat, f.s, state.cum, att_, f.grid_h, f.grid_w,
                              std::nullopt, &energy_evals);
            context = att.context;
            out.alpha = att.alpha;
            out.state.cum = t.add(state.cum, att.alpha);
        } else {
            auto pre_on = attend(t, h_hat, f.s, state.cum, pre_on_, 0, 0,
                                 std::nullopt, &energy_evals);
            auto pre_off = attend(t, h_hat, f.s_off, state.cum_off, pre_off_, 0, 0,
                                  std::nullopt, &energy_evals);
            auto fine_on = attend(t, h_hat, f.s, state.cum, fine_on_, 0, 0,
                                  pre_off.context, &energy_evals);
            auto fine_off = attend(t, h_hat, f.s_off, state.cum_off, fine_off_, 0, 0,
                                   pre_on.context, &energy_evals);
            Var<Real> both = t.concat0({fine_on.context, fine_off.context});
            context = t.tanh(t.matvec(t.leaf(*w_fc_), both));
            out.alpha = fine_on.alpha;
            out.alpha_off = fine_off.alpha;
            out.state.cum = t.add(state.cum, fine_on.alpha);
            out.state.cum_off = t.add(state.cum_off, fine_off.alpha);
        }
        out.state.h = gru2_.step(t, context, h_hat);

        Var<Real> pre_logit = t.add(
            t.add(emb, t.matvec(t.leaf(*w_h_), out.state.h)),
            t.matvec(t.leaf(*w_c_), context));
        out.logits = t.matvec(t.leaf(*w_o_), t.maxout_pairs(pre_logit));
        out.probs = t.softmax(out.logits);
        return out;
    }

    // G_t = -sum_j gamma_j log alpha_j (both modalities in fusion mode).
    Var<Real> guider_term(Tape<Real>& t, const StepOut& step,
                          const std::vector<double>& gamma) const {
        Tensor<Real> g({static_cast<int>(gamma.size())});
        for (size_t i = 0; i < gamma.size(); ++i)
            g[static_cast<int64_t>(i)] = static_cast<Real>(gamma[i]);
        Var<Real> gv = t.constant(std::move(g));
        Var<Real> loss =
            t.affine(t.reduce_sum(t.mul(gv, t.log(step.alpha))), Real(-1), Real(0));
        if (fusion_) {
            Var<Real> off =
                t.affine(t.reduce_sum(t.mul(gv, t.log(step.alpha_off))), Real(-1), Real(0));
            loss = t.add(loss, off);
        }
        return loss;
    }

    bool fusion() const { return fusion_; }
    int vocab_size() const { return vocab_size_; }
    int context_dim() const { return d_ctx_; }

    // attention-energy evaluations since construction (decode cost metric)
    mutable int64_t energy_evals = 0;

  private:
    static Var<Real> mean_row(Tape<Real>& t, Var<Real> s) {
        int rows = s.value().dim(0);
        Tensor<Real> ones({1, rows});
        ones.fill(Real(1) / static_cast<Real>(rows));
        return t.reshape(t.matmul(t.constant(std::move(ones)), s),
                         {s.value().dim(1)});
    }

    ModelPreset cfg_;
    bool fusion_ = false;
    int vocab_size_ = 0;
    int d_ctx_ = 0;
    Param<Real>* embedding_ = nullptr;
    GruCell<Real> gru1_;
    GruCell<Real> gru2_;
    Param<Real>* w_h_ = nullptr;
    Param<Real>* w_c_ = nullptr;
    Param<Real>* w_o_ = nullptr;
    Linear<Real> init_;
    AttentionParams<Real> att_;      // single-path attention
    AttentionParams<Real> pre_on_;   // decoder fusion
    AttentionParams<Real> pre_off_;
    AttentionParams<Real> fine_on_;
    AttentionParams<Real> fine_off_;
    Param<Real>* w_fc_ = nullptr;
};

}  // namespace scan
